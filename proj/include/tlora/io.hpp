// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/errors.hpp"
#include "tlora/tensor.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace tlora {

static_assert(std::endian::native == std::endian::little, "NPY payloads are handled as native little-endian");

namespace detail {

inline constexpr std::array<unsigned char, 6> kNpyMagic{0x93, 'N', 'U', 'M', 'P', 'Y'};

/// Value of `key` in the NPY header dict literal, up to the next top-level comma.
inline std::string npy_header_field(const std::string& header, const std::string& key) {
    const std::string quoted = "'" + key + "'";
    const auto pos = header.find(quoted);
    if (pos == std::string::npos) throw FormatError("NPY header is missing the '" + key + "' field");
    auto colon = header.find(':', pos + quoted.size());
    if (colon == std::string::npos) throw FormatError("NPY header field '" + key + "' has no value");
    std::size_t i = colon + 1;
    while (i < header.size() && header[i] == ' ') ++i;
    std::size_t j = i;
    int depth = 0;
    for (; j < header.size(); ++j) {
        const char ch = header[j];
        if (ch == '(') ++depth;
        else if (ch == ')') --depth;
        else if ((ch == ',' || ch == '}') && depth == 0) break;
    }
    std::string v = header.substr(i, j - i);
    while (!v.empty() && v.back() == ' ') v.pop_back();
    return v;
}

inline std::vector<std::size_t> parse_npy_shape(const std::string& text) {
    if (text.size() < 2 || text.front() != '(' || text.back() != ')')
        throw FormatError("NPY header field 'shape' is not a tuple: " + text);
    std::vector<std::size_t> shape;
    std::stringstream ss(text.substr(1, text.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(' ');
        if (b == std::string::npos) continue;
        const auto e = item.find_last_not_of(' ');
        const std::string digits = item.substr(b, e - b + 1);
        if (digits.find_first_not_of("0123456789") != std::string::npos)
            throw FormatError("NPY header field 'shape' has a non-integer entry: " + digits);
        shape.push_back(std::stoull(digits));
    }
    return shape;
}

}  // namespace detail

/// Reads a 1-D or 2-D NPY v1.0 array of '<f8' or '<f4' in C order; f4 is widened.
inline DenseTensor read_npy(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::array<unsigned char, 8> pre{};
    in.read(reinterpret_cast<char*>(pre.data()), 8);
    if (in.gcount() != 8) throw FormatError(path + ": truncated magic");
    if (!std::equal(detail::kNpyMagic.begin(), detail::kNpyMagic.end(), pre.begin()))
        throw FormatError(path + ": bad magic string");
    if (pre[6] != 1 || pre[7] != 0)
        throw FormatError(path + ": unsupported version " + std::to_string(pre[6]) + "." + std::to_string(pre[7]));
    unsigned char len_bytes[2];
    in.read(reinterpret_cast<char*>(len_bytes), 2);
    if (in.gcount() != 2) throw FormatError(path + ": truncated header length");
    const std::size_t header_len = len_bytes[0] | (std::size_t{len_bytes[1]} << 8);
    std::string header(header_len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(header_len));
    if (static_cast<std::size_t>(in.gcount()) != header_len) throw FormatError(path + ": truncated header");

    const std::string descr = detail::npy_header_field(header, "descr");
    std::size_t item = 0;
    if (descr == "'<f8'") item = 8;
    else if (descr == "'<f4'") item = 4;
    else throw FormatError(path + ": unsupported dtype descr " + descr);
    const std::string order = detail::npy_header_field(header, "fortran_order");
    if (order == "True") throw FormatError(path + ": fortran_order True is not supported");
    if (order != "False") throw FormatError(path + ": bad fortran_order value " + order);
    const auto shape = detail::parse_npy_shape(detail::npy_header_field(header, "shape"));
    if (shape.empty() || shape.size() > 2)
        throw FormatError(path + ": shape must be 1-D or 2-D, got " + std::to_string(shape.size()) + " dims");

    const std::size_t count = DenseTensor::count(shape);
    std::vector<char> raw(count * item);
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw FormatError(path + ": truncated payload (expected " + std::to_string(raw.size()) + " bytes)");

    std::vector<double> flat(count);
    for (std::size_t k = 0; k < count; ++k) {
        if (item == 8) {
            std::memcpy(&flat[k], raw.data() + 8 * k, 8);
        } else {
            float f;
            std::memcpy(&f, raw.data() + 4 * k, 4);
            flat[k] = f;
        }
    }
    if (shape.size() == 1) return DenseTensor(shape, std::move(flat));
    // C order (last index fastest) -> first index fastest.
    const std::size_t rows = shape[0], cols = shape[1];
    DenseTensor t({rows, cols});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) t(i, j) = flat[i * cols + j];
    return t;
}

/// Header dict literal and padding for a '<f8' C-order array.
inline std::string npy_header(const std::vector<std::size_t>& shape) {
    std::string dims;
    if (shape.size() == 1) dims = "(" + std::to_string(shape[0]) + ",)";
    else dims = "(" + std::to_string(shape[0]) + ", " + std::to_string(shape[1]) + ")";
    std::string dict = "{'descr': '<f8', 'fortran_order': False, 'shape': " + dims + ", }";
    // magic (6) + version (2) + length (2) + dict + padding + '\n' is a multiple of 64
    const std::size_t unpadded = 10 + dict.size() + 1;
    const std::size_t pad = (64 - unpadded % 64) % 64;
    dict.append(pad, ' ');
    dict.push_back('\n');
    return dict;
}

inline void write_npy(const std::string& path, const DenseTensor& t) {
    if (t.order() != 1 && t.order() != 2) throw DomainError("write_npy: only 1-D and 2-D tensors are supported");
    const std::string header = npy_header(t.shape());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(detail::kNpyMagic.data()), 6);
    const char version[2] = {1, 0};
    out.write(version, 2);
    const char len[2] = {static_cast<char>(header.size() & 0xff), static_cast<char>((header.size() >> 8) & 0xff)};
    out.write(len, 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::vector<double> flat(t.size());
    if (t.order() == 1) {
        flat = t.values();
    } else {
        const std::size_t rows = t.rows(), cols = t.cols();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) flat[i * cols + j] = t(i, j);
    }
    out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * 8));
    if (!out) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Sweep CSV.

struct SweepRow {
    std::string method;
    std::size_t transform_rank = 0;
    std::size_t residual_rank = 0;
    std::string dims;
    std::size_t n_params = 0;
    double final_rel_error = 0.0;
    std::size_t steps = 0;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;

    friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

inline constexpr const char* kCsvHeader =
    "method,transform_rank,residual_rank,dims,n_params,final_rel_error,steps,seed,wall_seconds";

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_line(const SweepRow& r) {
    return r.method + "," + std::to_string(r.transform_rank) + "," + std::to_string(r.residual_rank) + "," + r.dims +
           "," + std::to_string(r.n_params) + "," + format_double(r.final_rel_error) + "," + std::to_string(r.steps) +
           "," + std::to_string(r.seed) + "," + format_double(r.wall_seconds);
}

inline std::string csv_text(const std::vector<SweepRow>& rows) {
    std::string s = std::string(kCsvHeader) + "\n";
    for (const auto& r : rows) s += csv_line(r) + "\n";
    return s;
}

inline void write_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << csv_text(rows);
    if (!out) throw IoError("write failed for " + path);
}

inline std::vector<SweepRow> parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw FormatError("CSV header does not match");
    std::vector<SweepRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 9) throw FormatError("CSV line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
        try {
            rows.push_back({f[0], std::stoull(f[1]), std::stoull(f[2]), f[3], std::stoull(f[4]), std::stod(f[5]),
                            std::stoull(f[6]), std::stoull(f[7]), std::stod(f[8])});
        } catch (const std::exception&) {
            throw FormatError("CSV line " + std::to_string(lineno) + " has a malformed number");
        }
    }
    return rows;
}

inline std::vector<SweepRow> read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str());
}

}  // namespace tlora
