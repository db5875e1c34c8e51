#pragma once

#include <array>
#include <vector>

#include "hola/errors.hpp"
#include "hola/rng.hpp"

namespace hola {

enum class Modality { video, audio };

// Token-grid geometry: (time, height, width) for video, (time, 1, 1) for
// audio rows. Mask index layout is row-major over (t, h, w), matching the
// token order produced by the frontend embeddings.
struct Grid3 {
  int t = 1;
  int h = 1;
  int w = 1;
  int spatial() const { return h * w; }
  int total() const { return t * h * w; }
};

// Round-half-away-from-zero count of masked positions for a ratio over n.
int masked_count(double ratio, int n);

// Spatial mask sampled once and replicated across every time index.
std::vector<bool> tube_mask(const Grid3& grid, double ratio, Rng& rng);

// Exactly masked_count(ratio, L) positions chosen uniformly without
// replacement.
std::vector<bool> random_mask(int length, double ratio, Rng& rng);

// Deterministic decoder-side scheme: spatial positions are partitioned into
// contiguous cells of s = 1/ratio slots (row-major); within each cell the
// masked slot index cycles as (cell_index + t) mod s across time. Every time
// slice masks exactly ratio of its tokens, masks repeat with period s, and
// each position is visible at some time step once the clip spans s frames.
std::vector<bool> running_cell_mask(const Grid3& grid, double ratio);

// Dual-masking plan for one modality. `lambda_enc` / `lambda_dec` are the
// realized masked fractions count/L, so count == round(lambda * L) holds
// exactly even for schemes (tube) whose counts are rounded per time slice.
struct MaskPlan {
  Modality modality = Modality::video;
  int length = 0;                      // token count N
  std::vector<bool> encoder_masked;    // true = hidden from the encoder
  std::vector<bool> decoder_masked;    // true = learnable mask token slot
  std::vector<int> loss_positions;     // sorted; encoder_masked AND decoder_masked
  double lambda_enc = 0.0;
  double lambda_dec = 0.0;

  std::vector<int> encoder_visible() const;
  std::vector<int> decoder_mask_positions() const;
};

// Combines independently drawn encoder and decoder masks. Reconstruction is
// scored on the intersection of the two masked sets; the decoder consumes
// encoder-visible features plus mask tokens at decoder-masked slots.
MaskPlan build_dual_plan(Modality modality,
                         const std::vector<bool>& encoder_mask,
                         const std::vector<bool>& decoder_mask);

}  // namespace hola
