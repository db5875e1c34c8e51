#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "hola/masking.hpp"
#include "hola/model.hpp"
#include "hola/optim.hpp"
#include "hola/tensor.hpp"

namespace hola {

// Targets and predictions at the plan's loss positions, rows aligned with
// plan.loss_positions; targets are per-patch mean/std normalized raw values.
struct ReconBatch {
  Tensor targets;
  Tensor predictions;
  MaskPlan plan;
};

// Masked reconstruction error. Default normalizer follows the written form
// (1 - lambda_enc) * N, i.e. the visible-token count (lambda values in the
// plan are realized fractions); with mean_over_loss the sum is divided by the
// number of loss entries instead.
Tensor recon_loss(const ReconBatch& batch, bool mean_over_loss = false);

// Sum of the two modality reconstruction losses.
Tensor total_loss(const Tensor& audio_loss, const Tensor& video_loss);

// Per-patch normalization of target rows: (x - mean) / (std + 1e-6).
Tensor normalize_patch_rows(const Tensor& rows, const std::vector<int>& positions);

struct PretrainStepOut {
  Tensor total;
  Tensor video_loss;  // batch-mean modality losses, part of the same graph
  Tensor audio_loss;
  double video_part = 0.0;
  double audio_part = 0.0;
};

// Masked-autoencoding loss for one batch: fresh masks per sample from
// mask_rng, dual plans per modality, visible encoding, fusion, dual-masked
// decoding, Eq-style reconstruction losses averaged over the batch.
PretrainStepOut pretrain_batch_loss(PretrainModel& model,
                                    std::span<const SampleFeatures> batch,
                                    Rng& mask_rng);

struct PretrainStepRecord {
  int step = 0;
  double l_a = 0.0;
  double l_v = 0.0;
  double total = 0.0;
  double rate = 0.0;
};

struct PretrainResult {
  std::vector<PretrainStepRecord> history;
  std::vector<double> epoch_mean;
};

// Stage-1 loop: AdamW with cosine-annealed rate and linear warmup, fresh
// masks per sample per epoch, per-step records (and optional line-delimited
// log). Deterministic under a fixed cfg.seed.
PretrainResult pretrain_run(PretrainModel& model,
                            std::span<const SampleFeatures> dataset,
                            const OptimConfig& cfg, std::ostream* log = nullptr);

}  // namespace hola
