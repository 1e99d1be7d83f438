#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "corella/rng.hpp"
#include "corella/router.hpp"

using namespace corella;

namespace {
std::vector<Prediction> make_preds(const std::vector<double>& probs) {
  std::vector<Prediction> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    out[i].sample_id = static_cast<int>(i);
    out[i].y_crm = probs[i];
    out[i].entropy = entropy(probs[i]);
    out[i].y_final = probs[i];
  }
  return out;
}
}  // namespace

TEST_CASE("entropy worked values") {
  CHECK(std::abs(entropy(0.5) - std::log(2.0)) < 1e-9);
  CHECK(entropy(0.0) <= 3e-11);
  CHECK(entropy(1.0) <= 3e-11);
  // -0.9 ln 0.9 - 0.1 ln 0.1, evaluated to full double precision
  CHECK(entropy(0.9) == doctest::Approx(0.32508297339144845).epsilon(1e-12));
  CHECK(std::abs(entropy(0.9) - 0.325083) < 1e-6);
}

TEST_CASE("entropy is symmetric and decreasing away from one half") {
  for (int i = 0; i <= 500; ++i) {
    const double p = static_cast<double>(i) / 1000.0;
    CHECK(std::abs(entropy(p) - entropy(1.0 - p)) < 1e-12);
  }
  double prev = entropy(0.5);
  for (int i = 1; i <= 500; ++i) {
    const double cur = entropy(0.5 + static_cast<double>(i) / 1000.0);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("entropy rejects NaN and out-of-range input") {
  CHECK_THROWS(entropy(std::nan("")));
  CHECK_THROWS(entropy(-0.1));
  CHECK_THROWS(entropy(1.1));
}

TEST_CASE("quantile routing at the extremes") {
  auto preds = make_preds({0.1, 0.5, 0.8, 0.45});
  RouterConfig cfg;
  cfg.rho = 0.0;
  route(preds, cfg);
  for (const auto& p : preds) {
    CHECK_FALSE(p.routed);
    CHECK(p.y_final == p.y_crm);
  }
  cfg.rho = 1.0;
  route(preds, cfg);
  for (const auto& p : preds) CHECK(p.routed);
}

TEST_CASE("quantile routing picks the ceil(rho n) highest entropies") {
  std::vector<double> probs = {0.01, 0.1, 0.2, 0.3, 0.4, 0.45, 0.55, 0.6, 0.8, 0.95};
  auto preds = make_preds(probs);
  RouterConfig cfg;
  cfg.rho = 0.33;
  route(preds, cfg);
  std::size_t routed = 0;
  for (const auto& p : preds) routed += p.routed;
  CHECK(routed == 4);  // ceil(3.3)

  // brute-force oracle: sort entropies, the routed set must be the top 4
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return preds[a].entropy > preds[b].entropy; });
  for (std::size_t i = 0; i < preds.size(); ++i) {
    CHECK(preds[order[i]].routed == (i < 4));
  }
}

TEST_CASE("quantile routing satisfies the separation property on random sets") {
  Rng rng(512);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 2 + rng.next_below(40);
    std::vector<double> probs(n);
    for (double& p : probs) p = rng.uniform(0.001, 0.999);
    auto preds = make_preds(probs);
    RouterConfig cfg;
    cfg.rho = rng.uniform();
    route(preds, cfg);
    double min_routed = 1e9, max_unrouted = -1e9;
    std::size_t routed = 0;
    for (const auto& p : preds) {
      if (p.routed) {
        ++routed;
        min_routed = std::min(min_routed, p.entropy);
      } else {
        max_unrouted = std::max(max_unrouted, p.entropy);
      }
    }
    CHECK(routed == static_cast<std::size_t>(std::ceil(cfg.rho * static_cast<double>(n))));
    if (routed > 0 && routed < n) CHECK(min_routed >= max_unrouted);
  }
}

TEST_CASE("equal entropies break ties by sample id") {
  auto preds = make_preds({0.3, 0.7, 0.3, 0.7});  // all the same entropy
  RouterConfig cfg;
  cfg.rho = 0.5;
  route(preds, cfg);
  CHECK(preds[0].routed);
  CHECK(preds[1].routed);
  CHECK_FALSE(preds[2].routed);
  CHECK_FALSE(preds[3].routed);
}

TEST_CASE("absolute mode thresholds on entropy") {
  auto preds = make_preds({0.5, 0.9, 0.99});
  RouterConfig cfg;
  cfg.mode = RouterConfig::Mode::Absolute;
  cfg.tau = 0.4;
  route(preds, cfg);
  CHECK(preds[0].routed);        // ln 2 > 0.4
  CHECK_FALSE(preds[1].routed);  // 0.325 < 0.4
  CHECK_FALSE(preds[2].routed);
  cfg.tau = 0.8;
  CHECK_THROWS(route(preds, cfg));  // above ln 2
  cfg.tau = -0.1;
  CHECK_THROWS(route(preds, cfg));
}

TEST_CASE("rho and tau range validation") {
  auto preds = make_preds({0.5, 0.9});
  RouterConfig cfg;
  cfg.rho = 1.5;
  CHECK_THROWS(route(preds, cfg));
  cfg.rho = -0.5;
  CHECK_THROWS(route(preds, cfg));
}

TEST_CASE("calibrated tau reproduces quantile routing approximately") {
  Rng rng(77);
  std::vector<double> ent(1000);
  for (double& e : ent) e = entropy(rng.uniform(0.001, 0.999));
  const double tau = calibrate_tau(ent, 1.0 / 3.0);
  std::size_t above = 0;
  for (double e : ent) above += e > tau;
  CHECK(static_cast<double>(above) / 1000.0 == doctest::Approx(1.0 / 3.0).epsilon(0.01));
}

TEST_CASE("confidence groups are balanced with non-decreasing mean entropy") {
  std::vector<double> probs = {0.02, 0.11, 0.23, 0.35, 0.41, 0.47, 0.52, 0.67, 0.88};
  auto preds = make_preds(probs);
  std::vector<int> labels = {0, 0, 0, 1, 1, 0, 1, 1, 1};
  const auto groups = confidence_groups(preds, labels, 3, "crm",
                                        [](const Prediction& p) { return p.y_crm; });
  REQUIRE(groups.size() == 3);
  CHECK(groups[0].n == 3);
  CHECK(groups[1].n == 3);
  CHECK(groups[2].n == 3);
  CHECK(groups[0].group == 1);
  CHECK(groups[0].mean_entropy <= groups[1].mean_entropy);
  CHECK(groups[1].mean_entropy <= groups[2].mean_entropy);
}

TEST_CASE("group sizes differ by at most one when k does not divide n") {
  std::vector<double> probs(10);
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = 0.05 + 0.09 * static_cast<double>(i);
  auto preds = make_preds(probs);
  std::vector<int> labels(10, 0);
  labels[0] = labels[5] = 1;
  const auto groups = confidence_groups(preds, labels, 3, "crm",
                                        [](const Prediction& p) { return p.y_crm; });
  std::size_t total = 0;
  std::size_t mx = 0, mn = SIZE_MAX;
  for (const auto& g : groups) {
    total += g.n;
    mx = std::max(mx, g.n);
    mn = std::min(mn, g.n);
  }
  CHECK(total == 10);
  CHECK(mx - mn <= 1);
}

TEST_CASE("single-class group reports undefined auc") {
  std::vector<double> probs = {0.5, 0.51, 0.49, 0.52};
  auto preds = make_preds(probs);
  std::vector<int> labels = {1, 1, 1, 1};
  const auto groups = confidence_groups(preds, labels, 2, "crm",
                                        [](const Prediction& p) { return p.y_crm; });
  for (const auto& g : groups) CHECK_FALSE(g.auc.has_value());
}
