#include "hola/masking.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hola {

int masked_count(double ratio, int n) {
  return static_cast<int>(std::llround(ratio * n));
}

namespace {

void check_ratio(double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ConfigError("mask ratio must lie in (0, 1), got " +
                      std::to_string(ratio));
}

}  // namespace

std::vector<bool> tube_mask(const Grid3& grid, double ratio, Rng& rng) {
  check_ratio(ratio);
  const int spatial = grid.spatial();
  if (spatial < 1 || grid.t < 1) throw ConfigError("tube_mask: empty grid");
  const int m = masked_count(ratio, spatial);
  if (m == spatial)
    throw ConfigError("tube_mask: ratio leaves no visible tokens");
  std::vector<bool> spatial_mask(static_cast<size_t>(spatial), false);
  for (int idx : rng.sample_without_replacement(spatial, m))
    spatial_mask[static_cast<size_t>(idx)] = true;
  std::vector<bool> mask(static_cast<size_t>(grid.total()), false);
  for (int t = 0; t < grid.t; ++t)
    for (int s = 0; s < spatial; ++s)
      mask[static_cast<size_t>(t) * spatial + s] =
          spatial_mask[static_cast<size_t>(s)];
  return mask;
}

std::vector<bool> random_mask(int length, double ratio, Rng& rng) {
  check_ratio(ratio);
  if (length < 1) throw ConfigError("random_mask: length must be >= 1");
  const int m = masked_count(ratio, length);
  if (m == length)
    throw ConfigError("random_mask: ratio leaves no visible tokens");
  std::vector<bool> mask(static_cast<size_t>(length), false);
  for (int idx : rng.sample_without_replacement(length, m))
    mask[static_cast<size_t>(idx)] = true;
  return mask;
}

std::vector<bool> running_cell_mask(const Grid3& grid, double ratio) {
  check_ratio(ratio);
  const int spatial = grid.spatial();
  const double inv = 1.0 / ratio;
  const int cell = static_cast<int>(std::llround(inv));
  if (std::abs(inv - cell) > 1e-9 || cell < 2)
    throw ConfigError("running_cell_mask: 1/ratio must be an integer >= 2, got "
                      "ratio " + std::to_string(ratio));
  if (spatial % cell != 0)
    throw ConfigError("running_cell_mask: cell size " + std::to_string(cell) +
                      " does not divide spatial extent " +
                      std::to_string(spatial));
  const int n_cells = spatial / cell;
  std::vector<bool> mask(static_cast<size_t>(grid.total()), false);
  for (int t = 0; t < grid.t; ++t)
    for (int c = 0; c < n_cells; ++c) {
      const int slot = (c + t) % cell;
      mask[static_cast<size_t>(t) * spatial + c * cell + slot] = true;
    }
  return mask;
}

std::vector<int> MaskPlan::encoder_visible() const {
  std::vector<int> out;
  for (int i = 0; i < length; ++i)
    if (!encoder_masked[static_cast<size_t>(i)]) out.push_back(i);
  return out;
}

std::vector<int> MaskPlan::decoder_mask_positions() const {
  std::vector<int> out;
  for (int i = 0; i < length; ++i)
    if (decoder_masked[static_cast<size_t>(i)]) out.push_back(i);
  return out;
}

MaskPlan build_dual_plan(Modality modality,
                         const std::vector<bool>& encoder_mask,
                         const std::vector<bool>& decoder_mask) {
  if (encoder_mask.size() != decoder_mask.size())
    throw ShapeError("build_dual_plan: mask lengths differ");
  if (encoder_mask.empty()) throw ConfigError("build_dual_plan: empty masks");
  const int length = static_cast<int>(encoder_mask.size());

  MaskPlan plan;
  plan.modality = modality;
  plan.length = length;
  plan.encoder_masked = encoder_mask;
  plan.decoder_masked = decoder_mask;
  int enc_count = 0, dec_count = 0;
  for (int i = 0; i < length; ++i) {
    const bool e = encoder_mask[static_cast<size_t>(i)];
    const bool d = decoder_mask[static_cast<size_t>(i)];
    enc_count += e;
    dec_count += d;
    if (e && d) plan.loss_positions.push_back(i);
  }
  if (enc_count == length)
    throw ConfigError("build_dual_plan: encoder mask hides every token");
  plan.lambda_enc = static_cast<double>(enc_count) / length;
  plan.lambda_dec = static_cast<double>(dec_count) / length;
  if (plan.loss_positions.empty())
    throw ConfigError(
        "build_dual_plan: degenerate plan, encoder and decoder masks share no "
        "positions");
  return plan;
}

}  // namespace hola
