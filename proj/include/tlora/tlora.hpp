// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tlora/errors.hpp"
#include "tlora/tensor.hpp"
#include "tlora/random.hpp"
#include "tlora/adapters.hpp"
#include "tlora/regularizers.hpp"
#include "tlora/gradients.hpp"
#include "tlora/optimize.hpp"
#include "tlora/targets.hpp"
#include "tlora/io.hpp"
#include "tlora/methods.hpp"
#include "tlora/bench.hpp"
