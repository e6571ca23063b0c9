// SPDX-License-Identifier: Apache-2.0

#include "mtl/sweep.hpp"

#include "mtl/jsonio.hpp"

namespace mtl {

std::vector<SweepCombo> enumerate_sweep_combos() {
  static const WeightingKind weightings[] = {
      WeightingKind::EW,      WeightingKind::GradNorm, WeightingKind::UW,
      WeightingKind::MGDA,    WeightingKind::DWA,      WeightingKind::GLS,
      WeightingKind::PCGrad,  WeightingKind::GradDrop, WeightingKind::IMTL,
      WeightingKind::GradVac, WeightingKind::CAGrad,   WeightingKind::RLW,
  };
  static const ArchKind archs[] = {
      ArchKind::HPS, ArchKind::CrossStitch, ArchKind::MMoE,    ArchKind::MTAN,
      ArchKind::CGC, ArchKind::PLE,         ArchKind::DSelectK,
  };
  std::vector<SweepCombo> out;
  for (WeightingKind w : weightings) {
    for (ArchKind a : archs) {
      SweepCombo c;
      c.weighting = w;
      c.arch = a;
      c.mode = w == WeightingKind::GradDrop ? GradMode::RepGrad
                                            : GradMode::ParamGrad;
      out.push_back(c);
    }
  }
  return out;
}

std::string sweep_combos_json() {
  JsonWriter w;
  w.begin_array();
  for (const SweepCombo& c : enumerate_sweep_combos()) {
    w.begin_object();
    w.key("weighting");
    w.value(std::string_view(weighting_name(c.weighting)));
    w.key("arch");
    w.value(std::string_view(arch_name(c.arch)));
    w.key("mode");
    w.value(std::string_view(grad_mode_name(c.mode)));
    w.end_object();
  }
  w.end_array();
  return w.str();
}

}  // namespace mtl
