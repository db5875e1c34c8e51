#include <algorithm>
#include <set>
#include <vector>

#include "doctest.h"
#include "hola/masking.hpp"

using namespace hola;

namespace {

int count_true(const std::vector<bool>& m) {
  return static_cast<int>(std::count(m.begin(), m.end(), true));
}

}  // namespace

TEST_CASE("tube mask: exact rounded spatial count replicated over time") {
  Rng rng(1);
  Grid3 grid{8, 4, 4};
  auto mask = tube_mask(grid, 0.9, rng);
  // round(0.9 * 16) = 14 spatial cells, times 8 slices.
  CHECK(count_true(mask) == 112);
  // Every time slice equals slice 0.
  for (int t = 1; t < grid.t; ++t)
    for (int s = 0; s < grid.spatial(); ++s)
      CHECK(mask[static_cast<size_t>(t) * grid.spatial() + s] ==
            mask[static_cast<size_t>(s)]);
}

TEST_CASE("tube mask: zero-count ratio gives an all-false mask") {
  Rng rng(2);
  auto mask = tube_mask(Grid3{2, 4, 4}, 0.02, rng);  // round(0.32) = 0
  CHECK(count_true(mask) == 0);
}

TEST_CASE("tube mask: all-masked ratio is rejected") {
  Rng rng(3);
  CHECK_THROWS_AS(tube_mask(Grid3{2, 2, 2}, 0.95, rng), ConfigError);
}

TEST_CASE("random mask: exact rounded counts") {
  Rng rng(4);
  CHECK(count_true(random_mask(10, 0.8, rng)) == 8);
  CHECK(count_true(random_mask(16, 0.8, rng)) == 13);  // round(12.8)
}

TEST_CASE("random mask: per-position frequency is uniform") {
  Rng rng(5);
  const int L = 10;
  const int draws = 10000;
  std::vector<int> hits(L, 0);
  for (int d = 0; d < draws; ++d) {
    auto m = random_mask(L, 0.8, rng);
    for (int i = 0; i < L; ++i) hits[static_cast<size_t>(i)] += m[static_cast<size_t>(i)];
  }
  for (int i = 0; i < L; ++i) {
    const double freq = static_cast<double>(hits[static_cast<size_t>(i)]) / draws;
    CHECK(freq > 0.78);
    CHECK(freq < 0.82);
  }
}

TEST_CASE("random mask: deterministic under a fixed seed") {
  Rng a(99), b(99);
  CHECK(random_mask(64, 0.8, a) == random_mask(64, 0.8, b));
}

TEST_CASE("running cell mask: per-slice ratio is exact") {
  Grid3 grid{8, 4, 4};
  auto mask = running_cell_mask(grid, 0.5);
  for (int t = 0; t < grid.t; ++t) {
    int per_slice = 0;
    for (int s = 0; s < grid.spatial(); ++s)
      per_slice += mask[static_cast<size_t>(t) * grid.spatial() + s];
    CHECK(per_slice == 8);  // half of 16
  }
  CHECK(count_true(mask) == 64);  // half of 128
}

TEST_CASE("running cell mask: period s and full coverage") {
  Grid3 grid{8, 4, 4};
  auto mask = running_cell_mask(grid, 0.5);
  const int spatial = grid.spatial();
  const int s = 2;
  // mask at t and t+s identical
  for (int t = 0; t + s < grid.t; ++t)
    for (int p = 0; p < spatial; ++p)
      CHECK(mask[static_cast<size_t>(t) * spatial + p] ==
            mask[static_cast<size_t>(t + s) * spatial + p]);
  // every position is visible at some time step
  for (int p = 0; p < spatial; ++p) {
    bool visible = false;
    for (int t = 0; t < grid.t; ++t)
      visible = visible || !mask[static_cast<size_t>(t) * spatial + p];
    CHECK(visible);
  }
}

TEST_CASE("running cell mask: invalid cell geometry is rejected") {
  CHECK_THROWS_AS(running_cell_mask(Grid3{4, 3, 1}, 0.5), ConfigError);  // 3 % 2
  CHECK_THROWS_AS(running_cell_mask(Grid3{4, 4, 4}, 0.3), ConfigError);  // 1/0.3
}

TEST_CASE("dual plan: loss positions equal the set intersection") {
  Rng rng(12);
  const int L = 10;
  auto enc = random_mask(L, 0.8, rng);
  auto dec = random_mask(L, 0.5, rng);
  auto plan = build_dual_plan(Modality::audio, enc, dec);
  std::set<int> expect;
  for (int i = 0; i < L; ++i)
    if (enc[static_cast<size_t>(i)] && dec[static_cast<size_t>(i)]) expect.insert(i);
  CHECK(std::set<int>(plan.loss_positions.begin(), plan.loss_positions.end()) ==
        expect);
  CHECK(std::is_sorted(plan.loss_positions.begin(), plan.loss_positions.end()));
  // Realized fractions reproduce the exact counts.
  CHECK(masked_count(plan.lambda_enc, L) == 8);
  CHECK(masked_count(plan.lambda_dec, L) == 5);
}

TEST_CASE("dual plan: identical masks give loss everywhere masked") {
  std::vector<bool> m{true, true, false, false, true, false, false, false, true, false};
  auto plan = build_dual_plan(Modality::video, m, m);
  CHECK(plan.loss_positions == std::vector<int>{0, 1, 4, 8});
}

TEST_CASE("dual plan: disjoint masks are a degenerate plan") {
  std::vector<bool> enc{true, true, false, false};
  std::vector<bool> dec{false, false, true, true};
  CHECK_THROWS_AS(build_dual_plan(Modality::video, enc, dec), ConfigError);
}

TEST_CASE("dual plan: decoder token budget never exceeds the dual bound") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Grid3 grid{8, 4, 4};
    auto enc = tube_mask(grid, 0.9, rng);
    auto dec = running_cell_mask(grid, 0.5);
    auto plan = build_dual_plan(Modality::video, enc, dec);
    const int n_vis = static_cast<int>(plan.encoder_visible().size());
    const int n_dec = static_cast<int>(plan.decoder_mask_positions().size());
    CHECK(n_vis + n_dec <=
          grid.total() * (1.0 - plan.lambda_enc) + grid.total() * plan.lambda_dec + 1e-9);
    CHECK(n_vis + n_dec < grid.total());  // strictly fewer than a full decoder
  }
}
