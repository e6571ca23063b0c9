// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mtl::verify {

struct PropertyResult {
  std::string name;
  long long samples = 0;
  double max_error = 0.0;
  bool pass = false;
};

/// Finite-difference gradient checks, 50 random graphs per op kind at 1e-5
/// relative tolerance. One result per op kind.
std::vector<PropertyResult> check_autodiff(uint64_t seed, int graphs_per_op = 50);

/// Frank-Wolfe squared norm vs a gamma grid (step 1e-4) on random two-task
/// bundles.
PropertyResult check_mgda_grid(uint64_t seed, int bundles = 100,
                               double grid_step = 1e-4);

/// Adjusted gradients keep a nonnegative dot with the last original row they
/// were projected against.
PropertyResult check_pcgrad_postcondition(uint64_t seed, int bundles = 1000);

/// Equal-projection spread of the IMTL-G direction on nondegenerate bundles.
PropertyResult check_imtl_spread(uint64_t seed, int bundles = 500);

/// Whenever a GradVac adjustment fires, the post-adjustment cosine equals
/// the EMA target.
PropertyResult check_gradvac_postcosine(uint64_t seed, int bundles = 500);

/// Inner objective is non-increasing across accepted iterates.
PropertyResult check_cagrad_monotone(uint64_t seed, int bundles = 200);
/// c = 0 reduces exactly to equal weighting.
PropertyResult check_cagrad_c0(uint64_t seed, int bundles = 100);

/// Sort-and-threshold projection vs a brute-force simplex grid (step 1e-3).
PropertyResult check_simplex_projection(uint64_t seed, int points = 50,
                                        double grid_step = 1e-3);

std::vector<PropertyResult> run_all(uint64_t seed = 0xC0FFEE);
bool all_pass(const std::vector<PropertyResult>& results);
std::string format_lines(const std::vector<PropertyResult>& results);

}  // namespace mtl::verify
