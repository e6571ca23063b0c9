// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mtl/rng.hpp"
#include "mtl/verify.hpp"
#include "mtl/weighting.hpp"

using namespace mtl;

namespace {

GradientBundle bundle_of(std::vector<std::vector<double>> rows,
                         GradMode mode = GradMode::ParamGrad,
                         std::vector<double> losses = {}) {
  GradientBundle b;
  b.tasks = static_cast<int>(rows.size());
  b.dim = static_cast<int>(rows[0].size());
  b.mode = mode;
  for (const auto& r : rows) {
    b.grads.insert(b.grads.end(), r.begin(), r.end());
  }
  b.task_losses = losses.empty() ? std::vector<double>(b.tasks, 1.0)
                                 : std::move(losses);
  return b;
}

WeightingState state_of(WeightingKind k, int tasks, uint64_t seed = 11,
                        WeightingHyperparams hp = {}) {
  return WeightingState::make(k, tasks, seed, hp);
}

double dotv(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double normv(std::span<const double> a) { return std::sqrt(dotv(a, a)); }

}  // namespace

// --- EW ---------------------------------------------------------------

TEST_CASE("EW averages the rows") {
  auto r = ew(bundle_of({{2, 0}, {0, 4}}));
  CHECK(r.direction[0] == doctest::Approx(1.0));
  CHECK(r.direction[1] == doctest::Approx(2.0));
  CHECK(r.applied_weights[0] == doctest::Approx(0.5));
  CHECK(r.applied_weights[1] == doctest::Approx(0.5));
}

TEST_CASE("EW on identical rows returns that row; opposite rows cancel") {
  auto same = ew(bundle_of({{1, -2}, {1, -2}}));
  CHECK(same.direction[0] == doctest::Approx(1.0));
  CHECK(same.direction[1] == doctest::Approx(-2.0));
  auto opp = ew(bundle_of({{1, -2}, {-1, 2}}));
  CHECK(opp.direction[0] == doctest::Approx(0.0));
  CHECK(opp.direction[1] == doctest::Approx(0.0));
}

TEST_CASE("EW scale equivariance") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::vector<double>> rows(3, std::vector<double>(4));
    for (auto& row : rows) {
      for (double& v : row) v = rng.normal();
    }
    double k = 0.1 + 5.0 * rng.uniform01();
    auto base = ew(bundle_of(rows));
    for (auto& row : rows) {
      for (double& v : row) v *= k;
    }
    auto scaled = ew(bundle_of(rows));
    for (int i = 0; i < 4; ++i) {
      CHECK(scaled.direction[i] ==
            doctest::Approx(k * base.direction[i]).epsilon(1e-12));
    }
  }
}

// --- UW ------------------------------------------------------------------

TEST_CASE("UW combined loss at s=0 is half the loss sum plus zero log terms") {
  WeightingState st = state_of(WeightingKind::UW, 2);
  Tape t;
  std::vector<NodeId> losses = {t.leaf(Tensor::scalar(2.0)),
                                t.leaf(Tensor::scalar(4.0))};
  std::vector<NodeId> uw_leaves;
  NodeId total = uw_combined_loss(t, losses, st, uw_leaves);
  CHECK(t.value(total)[0] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("UW gradient in s matches -L/2 + 1/2") {
  // at s1 = 0 with L1 = 2 the derivative is -0.5; checked against central
  // differences through the tape
  auto eval = [](double s1) {
    WeightingState st = state_of(WeightingKind::UW, 2);
    st.uw_log_vars[0].value[0] = s1;
    Tape t;
    std::vector<NodeId> losses = {t.leaf(Tensor::scalar(2.0)),
                                  t.leaf(Tensor::scalar(4.0))};
    std::vector<NodeId> uw_leaves;
    NodeId total = uw_combined_loss(t, losses, st, uw_leaves);
    return t.value(total)[0];
  };
  double h = 1e-6;
  double numeric = (eval(h) - eval(-h)) / (2 * h);
  CHECK(numeric == doctest::Approx(-0.5).epsilon(1e-6));

  WeightingState st = state_of(WeightingKind::UW, 2);
  Tape t;
  std::vector<NodeId> losses = {t.leaf(Tensor::scalar(2.0)),
                                t.leaf(Tensor::scalar(4.0))};
  std::vector<NodeId> uw_leaves;
  NodeId total = uw_combined_loss(t, losses, st, uw_leaves);
  t.backward(total);
  CHECK(t.grad(uw_leaves[0])[0] == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("UW weight vanishes as s grows") {
  WeightingState st = state_of(WeightingKind::UW, 2);
  st.uw_log_vars[0].value[0] = 40.0;
  auto r = aggregate(bundle_of({{1.0, 1.0}, {0.0, 1.0}}), st);
  CHECK(std::fabs(r.applied_weights[0]) < 1e-15);
  CHECK(r.applied_weights[1] == doctest::Approx(1.0));
}

// --- DWA ------------------------------------------------------------------

TEST_CASE("DWA with no history returns all ones") {
  WeightingState st = state_of(WeightingKind::DWA, 3);
  auto w = dwa_weights(st);
  for (double v : w) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("DWA with equal ratios returns all ones") {
  WeightingState st = state_of(WeightingKind::DWA, 2);
  st.push_epoch_losses({2.0, 4.0});
  st.push_epoch_losses({1.0, 2.0});  // both ratios 0.5
  auto w = dwa_weights(st);
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("DWA frozen example: tau=2, ratios (1,2)") {
  WeightingState st = state_of(WeightingKind::DWA, 2);
  st.push_epoch_losses({1.0, 1.0});
  st.push_epoch_losses({1.0, 2.0});
  auto w = dwa_weights(st);
  double e1 = std::exp(0.5), e2 = std::exp(1.0);
  CHECK(w[0] == doctest::Approx(2 * e1 / (e1 + e2)).epsilon(1e-12));
  CHECK(w[0] == doctest::Approx(0.7551).epsilon(1e-4));
  CHECK(w[1] == doctest::Approx(1.2449).epsilon(1e-4));
  CHECK(w[0] + w[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("DWA zero-denominator ratio substitutes 1") {
  WeightingState st = state_of(WeightingKind::DWA, 2);
  st.push_epoch_losses({0.0, 1.0});
  st.push_epoch_losses({0.5, 1.0});
  auto w = dwa_weights(st);  // both ratios treated as 1
  CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-12));
}

// --- GLS --------------------------------------------------------------------

TEST_CASE("GLS is the geometric mean with analytic implied weights") {
  Tape t;
  std::vector<NodeId> losses = {t.leaf(Tensor::scalar(1.0)),
                                t.leaf(Tensor::scalar(4.0))};
  NodeId total = gls_combined_loss(t, losses);
  CHECK(t.value(total)[0] == doctest::Approx(2.0).epsilon(1e-12));

  WeightingState st = state_of(WeightingKind::GLS, 2);
  auto r = aggregate(bundle_of({{1, 0}, {0, 1}}, GradMode::ParamGrad,
                               {1.0, 4.0}),
                     st);
  CHECK(r.applied_weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.applied_weights[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("GLS of equal losses is that loss; one task is the identity") {
  Tape t;
  std::vector<NodeId> two = {t.leaf(Tensor::scalar(3.0)),
                             t.leaf(Tensor::scalar(3.0))};
  CHECK(t.value(gls_combined_loss(t, two))[0] ==
        doctest::Approx(3.0).epsilon(1e-12));
  std::vector<NodeId> one = {t.leaf(Tensor::scalar(1.7))};
  CHECK(t.value(gls_combined_loss(t, one))[0] ==
        doctest::Approx(1.7).epsilon(1e-12));
}

TEST_CASE("GLS gradient through the tape matches total/(T L_t)") {
  Tape t;
  NodeId leaf = t.leaf(Tensor::matrix(1, 2, {1.0, 4.0}), true);
  std::vector<NodeId> losses = {t.sum(t.slice_cols(leaf, 0, 1)),
                                t.sum(t.slice_cols(leaf, 1, 2))};
  NodeId total = gls_combined_loss(t, losses);
  t.backward(total);
  CHECK(t.grad(leaf)[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(t.grad(leaf)[1] == doctest::Approx(0.25).epsilon(1e-10));
}

// --- GradNorm ---------------------------------------------------------------

TEST_CASE("GradNorm leaves weights alone when targets are met") {
  WeightingState st = state_of(WeightingKind::GradNorm, 2);
  auto r = aggregate(bundle_of({{1, 0}, {0, 1}}, GradMode::ParamGrad,
                               {1.0, 1.0}),
                     st);
  CHECK(st.gradnorm_weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(st.gradnorm_weights[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.direction[0] == doctest::Approx(1.0));
}

TEST_CASE("GradNorm frozen example: alpha=0, norms (1,3)") {
  WeightingHyperparams hp;
  hp.gradnorm_alpha = 0.0;
  hp.gradnorm_weight_lr = 0.025;
  WeightingState st = state_of(WeightingKind::GradNorm, 2, 11, hp);
  auto r = aggregate(bundle_of({{1, 0}, {0, 3}}, GradMode::ParamGrad,
                               {1.0, 1.0}),
                     st);
  CHECK(st.gradnorm_weights[0] == doctest::Approx(2.05 / 1.95).epsilon(1e-12));
  CHECK(st.gradnorm_weights[1] == doctest::Approx(1.85 / 1.95).epsilon(1e-12));
  CHECK(st.gradnorm_weights[0] == doctest::Approx(1.0513).epsilon(1e-4));
  CHECK(st.gradnorm_weights[1] == doctest::Approx(0.9487).epsilon(1e-4));
  CHECK(r.applied_weights[0] == doctest::Approx(st.gradnorm_weights[0]));
}

TEST_CASE("GradNorm weights always renormalize to sum T") {
  Rng rng(5);
  WeightingState st = state_of(WeightingKind::GradNorm, 3);
  for (int step = 0; step < 50; ++step) {
    std::vector<std::vector<double>> rows(3, std::vector<double>(5));
    for (auto& row : rows) {
      for (double& v : row) v = rng.normal();
    }
    std::vector<double> losses = {0.5 + rng.uniform01(), 0.5 + rng.uniform01(),
                                  0.5 + rng.uniform01()};
    aggregate(bundle_of(rows, GradMode::ParamGrad, losses), st);
    double sum = std::accumulate(st.gradnorm_weights.begin(),
                                 st.gradnorm_weights.end(), 0.0);
    CHECK(sum == doctest::Approx(3.0).epsilon(1e-12));
  }
}

// --- MGDA ---------------------------------------------------------------

TEST_CASE("MGDA orthogonal pair splits evenly") {
  WeightingState st = state_of(WeightingKind::MGDA, 2);
  auto r = aggregate(bundle_of({{1, 0}, {0, 1}}), st);
  CHECK(r.applied_weights[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(r.direction[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(r.direction[1] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("MGDA identical rows return uniform coefficients") {
  WeightingState st = state_of(WeightingKind::MGDA, 3);
  auto r = aggregate(bundle_of({{2, 1}, {2, 1}, {2, 1}}), st);
  for (double g : r.applied_weights) {
    CHECK(g == doctest::Approx(1.0 / 3).epsilon(1e-9));
  }
  CHECK(r.direction[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("MGDA opposite rows are degenerate with zero direction") {
  WeightingState st = state_of(WeightingKind::MGDA, 2);
  auto r = aggregate(bundle_of({{1, 1}, {-1, -1}}), st);
  CHECK(std::fabs(r.direction[0]) < 1e-9);
  CHECK(r.diagnostics.count("degenerate") == 1);
  CHECK(st.degenerate_events.count("mgda_zero_direction") == 1);
}

TEST_CASE("MGDA against the T=2 closed form") {
  Rng rng(17);
  for (int rep = 0; rep < 100; ++rep) {
    int dim = 1 + rng.uniform_int(8);
    std::vector<std::vector<double>> rows(2, std::vector<double>(dim));
    for (auto& row : rows) {
      for (double& v : row) v = rng.normal();
    }
    GradientBundle b = bundle_of(rows);
    MinNormResult mn = min_norm_point(b);

    // gamma* = clip(((g2-g1).g2)/||g1-g2||^2, 0, 1) weighting g1
    std::vector<double> diff(dim);
    for (int i = 0; i < dim; ++i) diff[i] = rows[1][i] - rows[0][i];
    double denom = dotv(diff, diff);
    if (denom < 1e-12) continue;
    double gamma = std::clamp(dotv(diff, rows[1]) / denom, 0.0, 1.0);
    std::vector<double> opt(dim);
    for (int i = 0; i < dim; ++i) {
      opt[i] = gamma * rows[0][i] + (1 - gamma) * rows[1][i];
    }
    CHECK(dotv(mn.point, mn.point) <= dotv(opt, opt) + 1e-9);
  }
}

TEST_CASE("MGDA l2 normalization uses unit rows") {
  WeightingHyperparams hp;
  hp.mgda_norm = MgdaNorm::L2;
  WeightingState st = state_of(WeightingKind::MGDA, 2, 11, hp);
  auto r = aggregate(bundle_of({{2, 0}, {0, 1}}), st);
  // normalized rows are (1,0) and (0,1): even split
  CHECK(r.direction[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(r.direction[1] == doctest::Approx(0.5).epsilon(1e-9));
}

// --- PCGrad -------------------------------------------------------------

TEST_CASE("PCGrad frozen hand example") {
  WeightingState st = state_of(WeightingKind::PCGrad, 2);
  auto r = aggregate(bundle_of({{1, 0}, {-1, 1}}), st);
  CHECK(r.elementwise);
  auto g1 = r.task_direction(0, 2);
  auto g2 = r.task_direction(1, 2);
  CHECK(g1[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g1[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g2[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g2[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.direction[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.direction[1] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("PCGrad leaves orthogonal rows alone") {
  WeightingState st = state_of(WeightingKind::PCGrad, 2);
  auto r = aggregate(bundle_of({{1, 0}, {0, 1}}), st);
  CHECK(r.direction[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.direction[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.diagnostics.at("projections") == 0.0);
}

TEST_CASE("PCGrad skips zero-norm projection targets") {
  WeightingState st = state_of(WeightingKind::PCGrad, 2);
  auto r = aggregate(bundle_of({{1, 0}, {0, 0}}), st);
  CHECK(r.direction[0] == doctest::Approx(1.0));
}

TEST_CASE("PCGrad post-condition against original targets") {
  Rng rng(23);
  for (int rep = 0; rep < 200; ++rep) {
    int tasks = 2 + rng.uniform_int(3);
    int dim = 2 + rng.uniform_int(6);
    std::vector<std::vector<double>> rows(tasks, std::vector<double>(dim));
    for (auto& row : rows) {
      for (double& v : row) v = rng.normal();
    }
    GradientBundle b = bundle_of(rows);
    PcgradOutcome out = pcgrad_adjust(b, rng);
    std::vector<int> last(tasks, -1);
    for (auto [i, j] : out.projections) last[i] = j;
    for (int i = 0; i < tasks; ++i) {
      if (last[i] < 0) continue;
      std::span<const double> gi{out.adjusted.data() +
                                     static_cast<std::size_t>(i) * dim,
                                 static_cast<std::size_t>(dim)};
      CHECK(dotv(gi, b.row(last[i])) >= -1e-8);
    }
  }
}

TEST_CASE("a sign-flipped projection is caught by the post-condition") {
  // deliberately wrong adjustment: g1 + proj instead of g1 - proj
  std::vector<double> g1 = {1, 0}, g2 = {-1, 1};
  double d = dotv(g1, g2);
  double scale = d / dotv(g2, g2);
  std::vector<double> wrong = {g1[0] + scale * g2[0], g1[1] + scale * g2[1]};
  CHECK(dotv(wrong, g2) < -1e-8);  // the oracle flags it
}

// --- GradDrop -----------------------------------------------------------

TEST_CASE("GradDrop frozen example: grads (3,-1), U=0.5") {
  GradientBundle b = bundle_of({{3}, {-1}}, GradMode::RepGrad);
  std::vector<double> uniforms = {0.5};
  auto r = graddrop_with_uniforms(b, uniforms);
  CHECK(r.direction[0] == doctest::Approx(3.0));
}

TEST_CASE("GradDrop keeps unanimous positive entries for any draw") {
  GradientBundle b = bundle_of({{2}, {1}}, GradMode::RepGrad);
  for (double u : {0.001, 0.5, 0.999}) {
    std::vector<double> uniforms = {u};
    auto r = graddrop_with_uniforms(b, uniforms);
    CHECK(r.direction[0] == doctest::Approx(3.0));
  }
}

TEST_CASE("GradDrop with one task passes the gradient through") {
  WeightingState st = state_of(WeightingKind::GradDrop, 1);
  for (int rep = 0; rep < 20; ++rep) {
    GradientBundle b = bundle_of({{1.5, -2.0, 0.0}}, GradMode::RepGrad);
    auto r = aggregate(b, st);
    CHECK(r.direction[0] == doctest::Approx(1.5));
    CHECK(r.direction[1] == doctest::Approx(-2.0));
    CHECK(r.direction[2] == doctest::Approx(0.0));
  }
}

TEST_CASE("GradDrop rejects param-grad bundles") {
  WeightingState st = state_of(WeightingKind::GradDrop, 2);
  CHECK_THROWS_WITH_AS(aggregate(bundle_of({{1}, {2}}), st),
                       doctest::Contains("rep-grad"), std::invalid_argument);
}

// --- IMTL-G ----------------------------------------------------------------

TEST_CASE("IMTL symmetric pair splits evenly") {
  WeightingState st = state_of(WeightingKind::IMTL, 2);
  auto r = aggregate(bundle_of({{1, 0}, {0, 1}}), st);
  CHECK(r.applied_weights[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.direction[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("IMTL frozen example: rows (2,0) and (0,1)") {
  WeightingState st = state_of(WeightingKind::IMTL, 2);
  auto r = aggregate(bundle_of({{2, 0}, {0, 1}}), st);
  CHECK(r.applied_weights[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(r.applied_weights[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(r.direction[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(r.direction[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));
}

TEST_CASE("IMTL identical rows fall back to EW with the flag set") {
  WeightingState st = state_of(WeightingKind::IMTL, 2);
  auto r = aggregate(bundle_of({{1, 2}, {1, 2}}), st);
  CHECK(r.diagnostics.count("imtl_fallback") == 1);
  CHECK(r.direction[0] == doctest::Approx(1.0));
  CHECK(r.direction[1] == doctest::Approx(2.0));
  CHECK(st.degenerate_events.count("imtl_singular_fallback") == 1);
}

TEST_CASE("IMTL equal-projection property on random bundles") {
  auto res = verify::check_imtl_spread(77, 100);
  CHECK(res.pass);
}

// --- GradVac ------------------------------------------------------------

TEST_CASE("GradVac with zero targets leaves orthogonal rows alone") {
  WeightingState st = state_of(WeightingKind::GradVac, 2);
  auto r = aggregate(bundle_of({{1, 0}, {0, 1}}), st);
  CHECK(r.direction[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.direction[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.diagnostics.at("adjustments") == 0.0);
}

TEST_CASE("GradVac frozen example: target 0.5 on orthogonal rows") {
  WeightingState st = state_of(WeightingKind::GradVac, 2);
  st.ema_at(0, 1) = 0.5;
  GradientBundle b = bundle_of({{1, 0}, {0, 1}});
  GradvacOutcome out = gradvac_adjust(b, st);
  REQUIRE(out.fires.size() >= 1);
  CHECK(out.fires[0].i == 0);
  CHECK(out.fires[0].j == 1);
  double a = 0.5 / std::sqrt(0.75);
  CHECK(out.fires[0].row_after[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.fires[0].row_after[1] == doctest::Approx(a).epsilon(1e-9));
  CHECK(a == doctest::Approx(0.57735).epsilon(1e-5));
  // post-adjustment cosine equals the target exactly
  double post = out.fires[0].row_after[1] / normv(out.fires[0].row_after);
  CHECK(post == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("GradVac EMA updates with the pre-adjustment cosine") {
  WeightingState st = state_of(WeightingKind::GradVac, 2);
  // cosine 0.8 > target 0 so no adjustment fires, yet the EMA moves
  GradientBundle b = bundle_of({{1, 0}, {0.8, 0.6}});
  aggregate(b, st);
  CHECK(st.ema_at(0, 1) == doctest::Approx(0.008).epsilon(1e-12));
}

TEST_CASE("GradVac post-cosine property on random bundles") {
  auto res = verify::check_gradvac_postcosine(123, 100);
  CHECK(res.pass);
}

// --- CAGrad ----------------------------------------------------------------

TEST_CASE("CAGrad with c=0 is exactly EW") {
  WeightingHyperparams hp;
  hp.cagrad_c = 0.0;
  WeightingState st = state_of(WeightingKind::CAGrad, 2, 11, hp);
  auto r = aggregate(bundle_of({{3, 1}, {-1, 2}}), st);
  CHECK(r.direction[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.direction[1] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("CAGrad identical rows, c=1, no rescale doubles the row") {
  WeightingHyperparams hp;
  hp.cagrad_c = 1.0;
  hp.cagrad_rescale = CagradRescale::None;
  WeightingState st = state_of(WeightingKind::CAGrad, 2, 11, hp);
  auto r = aggregate(bundle_of({{2, -1}, {2, -1}}), st);
  CHECK(r.direction[0] == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(r.direction[1] == doctest::Approx(-2.0).epsilon(1e-9));
}

TEST_CASE("CAGrad cancellation flags the zero mean") {
  WeightingState st = state_of(WeightingKind::CAGrad, 2);
  auto r = aggregate(bundle_of({{1, 1}, {-1, -1}}), st);
  CHECK(std::fabs(r.direction[0]) < 1e-12);
  CHECK(r.diagnostics.count("degenerate") == 1);
  CHECK(st.degenerate_events.count("cagrad_zero_mean") == 1);
}

TEST_CASE("CAGrad inner objective is non-increasing") {
  auto res = verify::check_cagrad_monotone(31, 50);
  CHECK(res.pass);
}

TEST_CASE("CAGrad default rescale divides by 1+c^2") {
  WeightingHyperparams none;
  none.cagrad_c = 0.4;
  none.cagrad_rescale = CagradRescale::None;
  WeightingHyperparams sq = none;
  sq.cagrad_rescale = CagradRescale::OnePlusC2;
  GradientBundle b = bundle_of({{1, 2}, {2, 0}});
  WeightingState s1 = state_of(WeightingKind::CAGrad, 2, 11, none);
  WeightingState s2 = state_of(WeightingKind::CAGrad, 2, 11, sq);
  auto r1 = aggregate(b, s1);
  auto r2 = aggregate(b, s2);
  double f = 1.0 / (1.0 + 0.16);
  CHECK(r2.direction[0] == doctest::Approx(f * r1.direction[0]).epsilon(1e-12));
  CHECK(r2.direction[1] == doctest::Approx(f * r1.direction[1]).epsilon(1e-12));
}

// --- RLW ----------------------------------------------------------------

TEST_CASE("RLW weights from equal draws are uniform") {
  std::vector<double> draws = {0.3, 0.3, 0.3};
  auto w = rlw_weights_from_draws(draws);
  for (double v : w) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("RLW is reproducible under a fixed seed") {
  WeightingState a = state_of(WeightingKind::RLW, 4, 99);
  WeightingState b = state_of(WeightingKind::RLW, 4, 99);
  for (int i = 0; i < 10; ++i) {
    auto wa = rlw_weights(a, 4);
    auto wb = rlw_weights(b, 4);
    for (int t = 0; t < 4; ++t) CHECK(wa[t] == wb[t]);
  }
}

TEST_CASE("RLW weights are positive and sum to one across 1000 draws") {
  WeightingState st = state_of(WeightingKind::RLW, 5, 7);
  for (int i = 0; i < 1000; ++i) {
    auto w = rlw_weights(st, 5);
    double sum = std::accumulate(w.begin(), w.end(), 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (double v : w) CHECK(v > 0.0);
  }
}

// --- simplex projection -------------------------------------------------

TEST_CASE("project_to_simplex handles the documented cases") {
  auto a = project_to_simplex({0.5, 0.5});
  CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-15));
  auto b = project_to_simplex({2.0, 0.0});
  CHECK(b[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(b[1] == doctest::Approx(0.0).epsilon(1e-15));
  auto c = project_to_simplex({-1.0, -1.0});
  CHECK(c[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(c[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("simplex projection matches the brute-force grid") {
  auto res = verify::check_simplex_projection(41, 20);
  CHECK(res.pass);
}

// --- dispatcher-level properties ---------------------------------------

TEST_CASE("every strategy degenerates to plain descent at T=1") {
  std::vector<double> g = {0.7, -1.3, 2.2};
  for (int k = 0; k < kWeightingCount; ++k) {
    WeightingKind kind = static_cast<WeightingKind>(k);
    GradMode mode = kind == WeightingKind::GradDrop ? GradMode::RepGrad
                                                    : GradMode::ParamGrad;
    WeightingState st = state_of(kind, 1);
    auto r = aggregate(bundle_of({g}, mode, {2.0}), st);
    INFO("strategy ", std::string(weighting_name(kind)));
    for (int i = 0; i < 3; ++i) {
      CHECK(r.direction[i] == doctest::Approx(g[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("aggregate advances the state step") {
  WeightingState st = state_of(WeightingKind::EW, 2);
  CHECK(st.step == 0);
  aggregate(bundle_of({{1, 0}, {0, 1}}), st);
  CHECK(st.step == 1);
  aggregate(bundle_of({{1, 0}, {0, 1}}), st);
  CHECK(st.step == 2);
}

TEST_CASE("per-task directions always sum to the direction") {
  Rng rng(13);
  for (int k = 0; k < kWeightingCount; ++k) {
    WeightingKind kind = static_cast<WeightingKind>(k);
    GradMode mode = kind == WeightingKind::GradDrop ? GradMode::RepGrad
                                                    : GradMode::ParamGrad;
    WeightingState st = state_of(kind, 3);
    std::vector<std::vector<double>> rows(3, std::vector<double>(4));
    for (auto& row : rows) {
      for (double& v : row) v = rng.normal();
    }
    auto r = aggregate(bundle_of(rows, mode, {1.0, 2.0, 0.5}), st);
    for (int i = 0; i < 4; ++i) {
      double s = 0.0;
      for (int t = 0; t < 3; ++t) s += r.task_direction(t, 4)[i];
      INFO("strategy ", std::string(weighting_name(kind)));
      CHECK(s == doctest::Approx(r.direction[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("pure loss-weighting direction equals the weighted row sum") {
  Rng rng(29);
  for (WeightingKind kind :
       {WeightingKind::EW, WeightingKind::UW, WeightingKind::DWA,
        WeightingKind::GLS, WeightingKind::RLW}) {
    WeightingState st = state_of(kind, 2);
    std::vector<std::vector<double>> rows(2, std::vector<double>(3));
    for (auto& row : rows) {
      for (double& v : row) v = rng.normal();
    }
    auto b = bundle_of(rows, GradMode::ParamGrad, {1.5, 0.7});
    auto r = aggregate(b, st);
    for (int i = 0; i < 3; ++i) {
      double manual =
          r.applied_weights[0] * rows[0][i] + r.applied_weights[1] * rows[1][i];
      CHECK(r.direction[i] == doctest::Approx(manual).epsilon(1e-10));
    }
  }
}

TEST_CASE("non-finite bundles are rejected") {
  GradientBundle b = bundle_of({{1.0, std::nan("")}, {0.0, 1.0}});
  WeightingState st = state_of(WeightingKind::EW, 2);
  CHECK_THROWS_AS(aggregate(b, st), std::runtime_error);
}

TEST_CASE("mgda grid oracle over random bundles") {
  auto res = verify::check_mgda_grid(55, 30);
  CHECK(res.pass);
}
