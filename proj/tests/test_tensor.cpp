// SPDX-License-Identifier: Apache-2.0
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <vector>

using namespace tlora;
using tlora::testing::random_matrix;
using tlora::testing::random_tensor;
using tlora::testing::to_eigen;

TEST(ModeFactorization, ProductAndLabel) {
    const ModeFactorization f{8, 10, 16};
    EXPECT_EQ(f.order(), 3u);
    EXPECT_EQ(f.product(), 1280u);
    EXPECT_EQ(f.to_string(), "8x10x16");
    EXPECT_THROW(ModeFactorization(std::vector<std::size_t>{}), DomainError);
    EXPECT_THROW((ModeFactorization{2, 0}), DomainError);
}

TEST(MultiToLin, Examples) {
    const ModeFactorization d{2, 3, 4};
    EXPECT_EQ(multi_to_lin({1, 1, 1}, d), 1u);
    EXPECT_EQ(multi_to_lin({2, 3, 4}, d), 24u);
    EXPECT_EQ(multi_to_lin({2, 1}, ModeFactorization{2, 3}), 2u);
}

TEST(MultiToLin, OutOfRangeNamesMode) {
    const ModeFactorization d{2, 3, 4};
    try {
        multi_to_lin({1, 4, 1}, d);
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("mode 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(multi_to_lin({0, 1, 1}, d), DomainError);
    EXPECT_THROW(multi_to_lin({1, 1}, d), DomainError);
}

TEST(LinToMulti, Examples) {
    const ModeFactorization d{2, 3, 4};
    EXPECT_EQ(lin_to_multi(1, d), (std::vector<std::size_t>{1, 1, 1}));
    EXPECT_EQ(lin_to_multi(24, d), (std::vector<std::size_t>{2, 3, 4}));
    EXPECT_EQ(lin_to_multi(2, ModeFactorization{2, 3}), (std::vector<std::size_t>{2, 1}));
    EXPECT_THROW(lin_to_multi(0, d), DomainError);
    EXPECT_THROW(lin_to_multi(25, d), DomainError);
}

TEST(LinToMulti, ExhaustiveRoundTrip) {
    const std::vector<ModeFactorization> cases{{10000}, {10, 10, 100}, {7, 11, 13}, {2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2},
                                               {3, 1, 5, 4}};
    for (const auto& d : cases) {
        for (std::size_t lin = 1; lin <= d.product(); ++lin) {
            const auto idx = lin_to_multi(lin, d);
            ASSERT_EQ(multi_to_lin(idx, d), lin) << d.to_string();
        }
    }
}

TEST(DenseTensor, FirstIndexFastestLayout) {
    const Matrix m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
    EXPECT_EQ(m.values(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
    DenseTensor t({2, 3, 4});
    t.at({1, 2, 3}) = 7.0;
    EXPECT_EQ(t[1 + 2 * 2 + 3 * 6], 7.0);
    EXPECT_THROW(DenseTensor({2, 2}, {1.0, 2.0}), DomainError);
}

TEST(DenseTensor, ReshapeIsTensorization) {
    // A 6 x 4 matrix viewed as 2 x 3 x 4: entry (i1, i2, j) is M(i1 + 2 i2, j).
    const Matrix m = random_matrix(6, 4, 3);
    const DenseTensor t = m.reshaped({2, 3, 4});
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i2 = 0; i2 < 3; ++i2)
            for (std::size_t i1 = 0; i1 < 2; ++i1) EXPECT_EQ(t.at({i1, i2, j}), m(i1 + 2 * i2, j));
}

TEST(TraceProd, Examples) {
    EXPECT_DOUBLE_EQ(trace_prod({Matrix::identity(2)}), 2.0);
    EXPECT_DOUBLE_EQ(trace_prod({Matrix::from_rows({{5, 1}, {2, 7}})}), 12.0);
    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    const Matrix b = Matrix::from_rows({{0, 1}, {1, 0}});
    EXPECT_DOUBLE_EQ(trace_prod({a, b}), 5.0);
    double brute = 0.0;
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t rp = 0; rp < 2; ++rp) brute += a(r, rp) * b(rp, r);
    EXPECT_DOUBLE_EQ(brute, 5.0);
}

TEST(TraceProd, CyclicInvariance) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::vector<Matrix> m;
        for (int k = 0; k < 4; ++k) m.push_back(random_matrix(3, 3, seed * 10 + k));
        std::vector<Matrix> rot(m.begin() + 1, m.end());
        rot.push_back(m.front());
        const double v = trace_prod(m);
        EXPECT_LE(std::abs(v - trace_prod(rot)), 1e-12 * (1.0 + std::abs(v)));
    }
}

TEST(TraceProd, Errors) {
    EXPECT_THROW(trace_prod(std::span<const Matrix>{}), DomainError);
    EXPECT_THROW(trace_prod({Matrix::identity(2), Matrix::identity(3)}), DomainError);
    EXPECT_THROW(trace_prod({Matrix::zeros(2, 3)}), DomainError);
}

namespace {

DenseTensor brute_contract(const DenseTensor& core, const DenseTensor& acc) {
    const std::size_t id = core.extent(0), r = core.extent(1);
    const std::size_t prefix = acc.size() / (id * r);
    std::vector<std::size_t> shape(acc.shape().begin(), acc.shape().end() - 2);
    shape.push_back(r);
    DenseTensor out(shape);
    for (std::size_t p = 0; p < prefix; ++p)
        for (std::size_t rp = 0; rp < r; ++rp) {
            double s = 0.0;
            for (std::size_t l = 0; l < id; ++l)
                for (std::size_t rr = 0; rr < r; ++rr)
                    s += core[l + id * (rp + r * rr)] * acc[p + prefix * (l + id * rr)];
            out[p + prefix * rp] = s;
        }
    return out;
}

}  // namespace

TEST(ContractMode2, ZeroCore) {
    const DenseTensor acc = random_tensor({3, 2, 2}, 1);
    const DenseTensor out = contract_mode2(DenseTensor({2, 2, 2}), acc);
    EXPECT_EQ(out.shape(), (std::vector<std::size_t>{3, 2}));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(ContractMode2, ScalarCase) {
    const DenseTensor core({1, 1, 1}, {2.5});
    const DenseTensor acc({4, 1, 1}, {1, -2, 3, 0.5});
    const DenseTensor out = contract_mode2(core, acc);
    EXPECT_EQ(out.shape(), (std::vector<std::size_t>{4, 1}));
    EXPECT_EQ(out.values(), (std::vector<double>{2.5, -5, 7.5, 1.25}));
}

TEST(ContractMode2, MatchesBruteForce) {
    const DenseTensor core = random_tensor({2, 2, 2}, 11);
    const DenseTensor acc = random_tensor({3, 2, 2}, 12);
    const DenseTensor out = contract_mode2(core, acc);
    const DenseTensor ref = brute_contract(core, acc);
    ASSERT_EQ(out.shape(), ref.shape());
    EXPECT_LE(fro_dist(out, ref), 1e-12);

    std::uint64_t seed = 100;
    for (std::size_t id = 1; id <= 4; ++id)
        for (std::size_t r = 1; r <= 4; ++r)
            for (std::size_t pre = 1; pre <= 4; ++pre) {
                const DenseTensor c = random_tensor({id, r, r}, ++seed);
                const DenseTensor a = random_tensor({pre, 2, id, r}, ++seed);
                const DenseTensor o = contract_mode2(c, a);
                const DenseTensor b = brute_contract(c, a);
                ASSERT_EQ(o.shape(), (std::vector<std::size_t>{pre, 2, r}));
                for (std::size_t k = 0; k < o.size(); ++k) ASSERT_NEAR(o[k], b[k], 1e-12);
            }
}

TEST(ContractMode2, DimensionMismatch) {
    EXPECT_THROW(contract_mode2(DenseTensor({2, 2, 2}), DenseTensor({3, 3, 2})), DomainError);
    EXPECT_THROW(contract_mode2(DenseTensor({2, 2, 2}), DenseTensor({3, 2, 3})), DomainError);
    EXPECT_THROW(contract_mode2(DenseTensor({2, 2, 3}), DenseTensor({3, 2, 2})), DomainError);
}

TEST(Kron, Examples) {
    EXPECT_EQ(kron(Matrix::identity(2), Matrix::identity(2)), Matrix::identity(4));
    const Matrix b = random_matrix(2, 3, 5);
    EXPECT_EQ(kron(Matrix::from_rows({{2}}), b), 2.0 * b);
    const Matrix expected = Matrix::from_rows({{0, 1, 0, 0}, {1, 0, 0, 0}, {0, 0, 0, 1}, {0, 0, 1, 0}});
    EXPECT_EQ(kron(Matrix::identity(2), Matrix::from_rows({{0, 1}, {1, 0}})), expected);
}

TEST(Kron, MatchesEigenKroneckerConvention) {
    const Matrix a = random_matrix(2, 3, 1), b = random_matrix(3, 2, 2);
    const Matrix k = kron(a, b);
    const auto ea = to_eigen(a), eb = to_eigen(b);
    for (Eigen::Index i = 0; i < ea.rows(); ++i)
        for (Eigen::Index j = 0; j < ea.cols(); ++j)
            for (Eigen::Index p = 0; p < eb.rows(); ++p)
                for (Eigen::Index q = 0; q < eb.cols(); ++q)
                    EXPECT_DOUBLE_EQ(k(i * 3 + p, j * 2 + q), ea(i, j) * eb(p, q));
}

TEST(Kron, MixedProduct) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const Matrix a = random_matrix(2, 2, s), c = random_matrix(2, 2, s + 50);
        const Matrix b = random_matrix(3, 3, s + 100), d = random_matrix(3, 3, s + 150);
        EXPECT_LE(fro_dist(matmul(kron(a, b), kron(c, d)), kron(matmul(a, c), matmul(b, d))), 1e-12);
    }
}

TEST(FroDist, Examples) {
    const Matrix a = random_matrix(3, 4, 1);
    EXPECT_EQ(fro_dist(a, a), 0.0);
    EXPECT_DOUBLE_EQ(fro_dist(Matrix::identity(2), Matrix::zeros(2, 2)), std::sqrt(2.0));
    const Matrix b = random_matrix(3, 4, 2);
    double ss = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) ss += (a[k] - b[k]) * (a[k] - b[k]);
    EXPECT_NEAR(fro_dist(a, b), std::sqrt(ss), 1e-14);
    EXPECT_THROW(fro_dist(a, Matrix::zeros(4, 3)), DomainError);
}

TEST(DenseAlgebra, MatmulAndTransposeMatchEigen) {
    const Matrix a = random_matrix(5, 7, 1), b = random_matrix(7, 3, 2);
    const Eigen::MatrixXd ref = to_eigen(a) * to_eigen(b);
    EXPECT_LE((to_eigen(matmul(a, b)) - ref).norm(), 1e-12);
    EXPECT_EQ(to_eigen(transpose(a)), to_eigen(a).transpose());
    EXPECT_THROW(matmul(a, a), DomainError);
    const std::vector<double> x{1, 2, 3, 4, 5, 6, 7};
    const auto y = matvec(a, x);
    const Eigen::VectorXd ey = to_eigen(a) * Eigen::Map<const Eigen::VectorXd>(x.data(), 7);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], ey[i], 1e-12);
}

TEST(Solve, MatchesEigenLu) {
    const Matrix a = random_matrix(6, 6, 3) + 3.0 * Matrix::identity(6);
    const Matrix b = random_matrix(6, 2, 4);
    const Eigen::MatrixXd ref = to_eigen(a).partialPivLu().solve(to_eigen(b));
    EXPECT_LE((to_eigen(solve(a, b)) - ref).norm(), 1e-12);
}

TEST(Solve, SingularThrows) {
    const Matrix a = Matrix::from_rows({{1, 2}, {2, 4}});
    EXPECT_THROW(solve(a, Matrix::identity(2)), NumericalError);
}
