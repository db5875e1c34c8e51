#include "hola/model.hpp"

#include <cmath>

namespace hola {

void ModelConfig::validate() const {
  frontend.validate();
  if (heads < 1 || frontend.embed_dim % heads != 0)
    throw ConfigError("model: heads must divide embed_dim");
  if (video_depth < 1 || audio_depth < 1 || fusion_depth < 1 || decoder_depth < 1)
    throw ConfigError("model: encoder depths must be >= 1");
  if (align_len < 4)
    throw ConfigError("model: align_len must be >= 4 for the refiner pyramid");
  if (lg_depth < 1 || interaction_rounds < 1)
    throw ConfigError("model: head depths must be >= 1");
  for (double r : {mask_video_enc, mask_audio_enc, mask_video_dec, mask_audio_dec})
    if (!(r > 0.0 && r < 1.0))
      throw ConfigError("model: mask ratios must lie in (0,1)");
}

FrontendConfig frontend_config_from(const Config& cfg) {
  FrontendConfig f;
  f.frames_sampled = cfg.get_int("frames_sampled", f.frames_sampled);
  f.frame_h = cfg.get_int("frame_h", f.frame_h);
  f.frame_w = cfg.get_int("frame_w", f.frame_w);
  f.channels = cfg.get_int("channels", f.channels);
  f.cube_t = cfg.get_int("cube_t", f.cube_t);
  f.cube_p = cfg.get_int("cube_p", f.cube_p);
  f.mfcc_coeffs = cfg.get_int("mfcc_coeffs", f.mfcc_coeffs);
  f.mel_filters = cfg.get_int("mel_filters", f.mel_filters);
  f.fft_size = cfg.get_int("fft_size", f.fft_size);
  f.hop = cfg.get_int("hop", f.hop);
  f.segments = cfg.get_int("segments", f.segments);
  f.embed_dim = cfg.get_int("embed_dim", f.embed_dim);
  f.sample_rate = cfg.get_int("sample_rate", f.sample_rate);
  return f;
}

ModelConfig model_config_from(const Config& cfg) {
  ModelConfig m;
  m.frontend = frontend_config_from(cfg);
  m.heads = cfg.get_int("heads", m.heads);
  m.video_depth = cfg.get_int("video_depth", m.video_depth);
  m.audio_depth = cfg.get_int("audio_depth", m.audio_depth);
  m.fusion_depth = cfg.get_int("fusion_depth", m.fusion_depth);
  m.decoder_depth = cfg.get_int("decoder_depth", m.decoder_depth);
  m.mask_video_enc = cfg.get_double("mask_video_enc", m.mask_video_enc);
  m.mask_audio_enc = cfg.get_double("mask_audio_enc", m.mask_audio_enc);
  m.mask_video_dec = cfg.get_double("mask_video_dec", m.mask_video_dec);
  m.mask_audio_dec = cfg.get_double("mask_audio_dec", m.mask_audio_dec);
  m.align_len = cfg.get_int("align_len", m.align_len);
  m.lg_depth = cfg.get_int("lg_depth", m.lg_depth);
  m.interaction_rounds = cfg.get_int("interaction_rounds", m.interaction_rounds);
  m.ln_eps = cfg.get_double("ln_eps", m.ln_eps);
  m.recon_mean_over_loss = cfg.get_bool("recon_mean_over_loss", m.recon_mean_over_loss);
  m.validate();
  return m;
}

SampleFeatures make_features(const RawClip& clip, const FrontendConfig& cfg) {
  cfg.validate();
  SampleFeatures f;
  VideoVolume vol = sample_frames(clip, cfg.frames_sampled);
  f.video_patches = cube_patches(vol, cfg.cube_t, cfg.cube_p);
  f.audio_rows = mfcc_rows(compute_mfcc(clip.waveform, cfg));
  f.video_grid = cfg.video_grid();
  return f;
}

std::vector<DatasetSample> load_split(const std::string& data_dir,
                                      const std::string& split,
                                      const FrontendConfig& cfg) {
  std::vector<DatasetSample> out;
  for (const auto& rec : load_manifest(data_dir + "/manifest.jsonl")) {
    if (rec.split != split) continue;
    DatasetSample s;
    s.rec = rec;
    s.feats = make_features(load_clip(data_dir + "/" + rec.clip_path), cfg);
    s.label = rec.label.empty() ? -1 : (rec.label == "fake" ? 1 : 0);
    out.push_back(std::move(s));
  }
  return out;
}

// ---- stage 1 -----------------------------------------------------------------------

PretrainModel init_pretrain_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  PretrainModel m;
  m.cfg = cfg;
  const int C = cfg.frontend.embed_dim;
  const int cube_dim = cfg.frontend.cube_dim();
  const int mfcc_dim = cfg.frontend.mfcc_coeffs;
  m.video_embed_w = m.params.add_trunc_normal("video_embed.w", {cube_dim, C}, 0.02, rng);
  m.video_embed_b = m.params.add_zeros("video_embed.b", {C});
  m.audio_embed_w = m.params.add_trunc_normal("audio_embed.w", {mfcc_dim, C}, 0.02, rng);
  m.audio_embed_b = m.params.add_zeros("audio_embed.b", {C});
  m.video_encoder = init_encoder_stack(m.params, "video_encoder", cfg.video_depth, C, cfg.heads, rng);
  m.audio_encoder = init_encoder_stack(m.params, "audio_encoder", cfg.audio_depth, C, cfg.heads, rng);
  for (int d = 0; d < cfg.fusion_depth; ++d)
    m.fusion.push_back(init_fusion_block(m.params, "fusion.block" + std::to_string(d), C, cfg.heads, rng));
  m.video_decoder = init_decoder(m.params, "video_decoder", cfg.decoder_depth, C, cfg.heads, cube_dim, rng);
  m.audio_decoder = init_decoder(m.params, "audio_decoder", cfg.decoder_depth, C, cfg.heads, mfcc_dim, rng);
  return m;
}

// ---- stage 2 -----------------------------------------------------------------------

FinetuneModel init_finetune_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  FinetuneModel m;
  m.cfg = cfg;
  const int C = cfg.frontend.embed_dim;
  const int cube_dim = cfg.frontend.cube_dim();
  const int mfcc_dim = cfg.frontend.mfcc_coeffs;
  m.video_embed_w = m.params.add_trunc_normal("video_embed.w", {cube_dim, C}, 0.02, rng);
  m.video_embed_b = m.params.add_zeros("video_embed.b", {C});
  m.audio_embed_w = m.params.add_trunc_normal("audio_embed.w", {mfcc_dim, C}, 0.02, rng);
  m.audio_embed_b = m.params.add_zeros("audio_embed.b", {C});
  m.video_encoder = init_encoder_stack(m.params, "video_encoder", cfg.video_depth, C, cfg.heads, rng);
  m.audio_encoder = init_encoder_stack(m.params, "audio_encoder", cfg.audio_depth, C, cfg.heads, rng);
  m.align_video = init_alignment(m.params, "align_video", cfg.frontend.video_tokens(), cfg.align_len, C, rng);
  m.align_audio = init_alignment(m.params, "align_audio", cfg.frontend.audio_tokens(), cfg.align_len, C, rng);
  for (int r = 0; r < cfg.interaction_rounds; ++r) {
    m.inter_video.push_back(init_interaction_layer(
        m.params, "interaction.round" + std::to_string(r) + ".video", C, cfg.heads, rng));
    m.inter_audio.push_back(init_interaction_layer(
        m.params, "interaction.round" + std::to_string(r) + ".audio", C, cfg.heads, rng));
  }
  m.lgf = init_local_global(m.params, "local_global", cfg.lg_depth, C, cfg.heads, rng);
  m.refiner = init_pyramid(m.params, "refiner", C, rng);
  return m;
}

void load_pretrained_encoders(FinetuneModel& model, const CheckpointData& ckpt) {
  if (ckpt.stage != "pretrain")
    throw ConfigError("load_pretrained_encoders: checkpoint stage is '" +
                      ckpt.stage + "', expected 'pretrain'");
  apply_checkpoint(model.params, ckpt,
                   {"video_embed", "audio_embed", "video_encoder", "audio_encoder"});
}

namespace {

// Full-sequence tokens with positional encodings for one modality.
Tensor embed_tokens(const Tensor& patches, const Tensor& w, const Tensor& b,
                    int length, int width) {
  Tensor tokens = linear(patches, w, b);
  return add(tokens, positional_table(length, width));
}

}  // namespace

Tensor finetune_logits(FinetuneModel& model, std::span<const SampleFeatures> batch,
                       bool training) {
  if (batch.empty()) throw ShapeError("finetune_logits: empty batch");
  const auto& fc = model.cfg.frontend;
  const int C = fc.embed_dim;
  std::vector<Tensor> fused;
  fused.reserve(batch.size());
  for (const auto& feats : batch) {
    Tensor vt = embed_tokens(feats.video_patches, model.video_embed_w,
                             model.video_embed_b, fc.video_tokens(), C);
    Tensor at = embed_tokens(feats.audio_rows, model.audio_embed_w,
                             model.audio_embed_b, fc.audio_tokens(), C);
    Tensor v = encoder_forward(vt, model.video_encoder, model.cfg.ln_eps);
    Tensor a = encoder_forward(at, model.audio_encoder, model.cfg.ln_eps);
    v = align_forward(v, model.align_video);
    a = align_forward(a, model.align_audio);
    auto [iv, ia] = iterative_interact(v, a, model.inter_video, model.inter_audio,
                                       model.cfg.ln_eps);
    fused.push_back(local_global_fuse(iv, ia, model.lgf, model.cfg.ln_eps));
  }
  return pyramid_refine_batch(fused, model.refiner, training, model.cfg.ln_eps);
}

double fake_probability(FinetuneModel& model, const SampleFeatures& feats) {
  std::vector<SampleFeatures> one{feats};
  Tensor logits = finetune_logits(model, one, /*training=*/false);
  const double a = logits.data()[0], b = logits.data()[1];
  const double mx = std::max(a, b);
  const double ea = std::exp(a - mx), eb = std::exp(b - mx);
  return eb / (ea + eb);
}

}  // namespace hola
