#pragma once

#include <span>
#include <string>
#include <vector>

#include "hola/backbone.hpp"
#include "hola/frontend.hpp"
#include "hola/head.hpp"
#include "hola/io.hpp"
#include "hola/masking.hpp"
#include "hola/optim.hpp"

namespace hola {

struct ModelConfig {
  FrontendConfig frontend;
  int heads = 4;
  int video_depth = 4;
  int audio_depth = 3;
  int fusion_depth = 2;
  int decoder_depth = 2;
  double mask_video_enc = 0.9;
  double mask_audio_enc = 0.8;
  double mask_video_dec = 0.5;
  double mask_audio_dec = 0.5;
  int align_len = 16;
  int lg_depth = 2;
  int interaction_rounds = 3;
  double ln_eps = 1e-5;
  // Eq-style reconstruction normalizer (visible-count) by default; switch to
  // a plain mean over the loss set for experimentation.
  bool recon_mean_over_loss = false;

  void validate() const;
};

ModelConfig model_config_from(const Config& cfg);
FrontendConfig frontend_config_from(const Config& cfg);

// Per-sample constant inputs, precomputed once per clip.
struct SampleFeatures {
  Tensor video_patches;  // [L_v x cube_dim], pixel cubes scaled to [0,1]
  Tensor audio_rows;     // [L_a x F] MFCC segments
  Grid3 video_grid;
};

SampleFeatures make_features(const RawClip& clip, const FrontendConfig& cfg);

struct DatasetSample {
  SampleRecord rec;
  SampleFeatures feats;
  int label = -1;  // 0 real, 1 fake, -1 unlabeled
};

std::vector<DatasetSample> load_split(const std::string& data_dir,
                                      const std::string& split,
                                      const FrontendConfig& cfg);

// ---- stage 1 ------------------------------------------------------------------

struct PretrainModel {
  ModelConfig cfg;
  ParamStore params;
  Tensor video_embed_w, video_embed_b;
  Tensor audio_embed_w, audio_embed_b;
  EncoderStack video_encoder;
  EncoderStack audio_encoder;
  std::vector<FusionBlock> fusion;
  DecoderParams video_decoder;
  DecoderParams audio_decoder;
};

PretrainModel init_pretrain_model(const ModelConfig& cfg, Rng& rng);

// ---- stage 2 ------------------------------------------------------------------

struct FinetuneModel {
  ModelConfig cfg;
  ParamStore params;
  Tensor video_embed_w, video_embed_b;
  Tensor audio_embed_w, audio_embed_b;
  EncoderStack video_encoder;
  EncoderStack audio_encoder;
  AlignmentParams align_video;
  AlignmentParams align_audio;
  std::vector<InteractionLayer> inter_video;  // one per round
  std::vector<InteractionLayer> inter_audio;
  LocalGlobalFusion lgf;
  PyramidRefiner refiner;
};

FinetuneModel init_finetune_model(const ModelConfig& cfg, Rng& rng);

// Loads the two modality encoders (and their embedding projections) from a
// stage-1 checkpoint; fusion and decoders stay behind.
void load_pretrained_encoders(FinetuneModel& model, const CheckpointData& ckpt);

// Batched logits [B x 2]; training mode drives batch-norm statistics.
Tensor finetune_logits(FinetuneModel& model,
                       std::span<const SampleFeatures> batch, bool training);

// Eval-mode probability that one sample is fake (class 1).
double fake_probability(FinetuneModel& model, const SampleFeatures& feats);

}  // namespace hola
