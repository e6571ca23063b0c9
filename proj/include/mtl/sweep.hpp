// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mtl/architecture.hpp"
#include "mtl/weighting.hpp"

namespace mtl {

struct SweepCombo {
  WeightingKind weighting;
  ArchKind arch;
  GradMode mode;  // GradDrop runs rep-grad, everything else param-grad
};

/// All weighting x architecture combinations in canonical order
/// (weighting-major). 12 x 7 = 84 entries.
std::vector<SweepCombo> enumerate_sweep_combos();

std::string sweep_combos_json();

}  // namespace mtl
