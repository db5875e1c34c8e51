#include "hola/pretrain.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace hola {

Tensor recon_loss(const ReconBatch& batch, bool mean_over_loss) {
  if (batch.plan.loss_positions.empty())
    throw ConfigError("recon_loss: plan has no loss positions");
  if (batch.targets.shape() != batch.predictions.shape())
    throw ShapeError("recon_loss: target/prediction shapes differ, " +
                     shape_str(batch.targets.shape()) + " vs " +
                     shape_str(batch.predictions.shape()));
  if (batch.targets.dim(0) != static_cast<int>(batch.plan.loss_positions.size()))
    throw ShapeError("recon_loss: row count does not match loss positions");
  Tensor diff = sub(batch.predictions, batch.targets);
  Tensor sum_sq = sum_all(mul(diff, diff));
  const double denom =
      mean_over_loss
          ? static_cast<double>(batch.targets.numel())
          : (1.0 - batch.plan.lambda_enc) * static_cast<double>(batch.plan.length);
  if (denom <= 0.0) throw ConfigError("recon_loss: degenerate normalizer");
  return scale(sum_sq, 1.0 / denom);
}

Tensor total_loss(const Tensor& audio_loss, const Tensor& video_loss) {
  if (!std::isfinite(audio_loss.item()) || !std::isfinite(video_loss.item()))
    throw NumericError("total_loss: non-finite modality loss");
  return add(audio_loss, video_loss);
}

Tensor normalize_patch_rows(const Tensor& rows, const std::vector<int>& positions) {
  const int dim = rows.dim(1);
  std::vector<double> out(positions.size() * static_cast<size_t>(dim));
  auto src = rows.data();
  for (size_t r = 0; r < positions.size(); ++r) {
    const double* row = src.data() + static_cast<size_t>(positions[r]) * dim;
    double mean = 0.0;
    for (int c = 0; c < dim; ++c) mean += row[c];
    mean /= dim;
    double var = 0.0;
    for (int c = 0; c < dim; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= dim;
    const double inv = 1.0 / (std::sqrt(var) + 1e-6);
    for (int c = 0; c < dim; ++c) out[r * static_cast<size_t>(dim) + c] = (row[c] - mean) * inv;
  }
  return constant({static_cast<int>(positions.size()), dim}, std::move(out));
}

namespace {

struct ModalityForward {
  VisibleLatents visible;
  MaskPlan plan;
};

}  // namespace

PretrainStepOut pretrain_batch_loss(PretrainModel& model,
                                    std::span<const SampleFeatures> batch,
                                    Rng& mask_rng) {
  if (batch.empty()) throw ShapeError("pretrain_batch_loss: empty batch");
  const auto& cfg = model.cfg;
  const auto& fc = cfg.frontend;
  const int C = fc.embed_dim;

  std::vector<Tensor> video_losses, audio_losses;
  for (const auto& feats : batch) {
    // Tokens with positional encodings.
    Tensor vt = add(linear(feats.video_patches, model.video_embed_w, model.video_embed_b),
                    positional_table(fc.video_tokens(), C));
    Tensor at = add(linear(feats.audio_rows, model.audio_embed_w, model.audio_embed_b),
                    positional_table(fc.audio_tokens(), C));

    // Fresh dual-mask plans per sample.
    const Grid3 vgrid = feats.video_grid;
    const Grid3 agrid{fc.audio_tokens(), 1, 1};
    MaskPlan vplan = build_dual_plan(Modality::video,
                                     tube_mask(vgrid, cfg.mask_video_enc, mask_rng),
                                     running_cell_mask(vgrid, cfg.mask_video_dec));
    MaskPlan aplan = build_dual_plan(Modality::audio,
                                     random_mask(agrid.total(), cfg.mask_audio_enc, mask_rng),
                                     random_mask(agrid.total(), cfg.mask_audio_dec, mask_rng));

    TokenSequence vseq{vt, {}, Modality::video, vgrid};
    TokenSequence aseq{at, {}, Modality::audio, agrid};
    VisibleLatents vvis = encode_visible(vseq, vplan, model.video_encoder, cfg.ln_eps);
    VisibleLatents avis = encode_visible(aseq, aplan, model.audio_encoder, cfg.ln_eps);

    Tensor fv = vvis.latents;
    Tensor fa = avis.latents;
    for (const auto& blk : model.fusion) {
      auto [nv, na] = fuse(fv, fa, blk, cfg.ln_eps);
      fv = nv;
      fa = na;
    }

    Tensor vpred = decode({fv, vvis.positions}, vplan, model.video_decoder, cfg.ln_eps);
    Tensor apred = decode({fa, avis.positions}, aplan, model.audio_decoder, cfg.ln_eps);

    Tensor vtarget = normalize_patch_rows(feats.video_patches, vplan.loss_positions);
    Tensor atarget = normalize_patch_rows(feats.audio_rows, aplan.loss_positions);

    video_losses.push_back(
        recon_loss({vtarget, vpred, vplan}, cfg.recon_mean_over_loss));
    audio_losses.push_back(
        recon_loss({atarget, apred, aplan}, cfg.recon_mean_over_loss));
  }

  Tensor lv = video_losses[0];
  Tensor la = audio_losses[0];
  for (size_t i = 1; i < video_losses.size(); ++i) lv = add(lv, video_losses[i]);
  for (size_t i = 1; i < audio_losses.size(); ++i) la = add(la, audio_losses[i]);
  lv = scale(lv, 1.0 / static_cast<double>(batch.size()));
  la = scale(la, 1.0 / static_cast<double>(batch.size()));

  PretrainStepOut out;
  out.video_loss = lv;
  out.audio_loss = la;
  out.video_part = lv.item();
  out.audio_part = la.item();
  out.total = total_loss(la, lv);
  return out;
}

PretrainResult pretrain_run(PretrainModel& model,
                            std::span<const SampleFeatures> dataset,
                            const OptimConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (dataset.empty()) throw DataError("pretrain_run: empty dataset");

  AdamW opt(model.params.trainable(), cfg);
  const int n = static_cast<int>(dataset.size());
  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int total_steps = cfg.epochs * batches_per_epoch;
  const int warmup = static_cast<int>(std::llround(cfg.warmup_frac * total_steps));

  Rng order_rng(cfg.seed);
  Rng mask_master(cfg.seed ^ 0x9E3779B97F4A7C15ull);

  PretrainResult result;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    order_rng.shuffle(order);

    double epoch_sum = 0.0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      std::vector<SampleFeatures> batch;
      for (int i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i)
        batch.push_back(dataset[static_cast<size_t>(order[static_cast<size_t>(i)])]);

      Rng mask_rng = mask_master.split(static_cast<std::uint64_t>(step));
      PretrainStepOut out;
      try {
        out = pretrain_batch_loss(model, batch, mask_rng);
      } catch (const NumericError& e) {
        throw NumericError("pretrain aborted at step " + std::to_string(step) +
                           ": " + e.what());
      }
      const double total_value = out.total.item();
      if (!std::isfinite(total_value))
        throw NumericError("pretrain aborted at step " + std::to_string(step) +
                           ": non-finite loss (l_a=" + std::to_string(out.audio_part) +
                           ", l_v=" + std::to_string(out.video_part) + ")");

      out.total.backward();
      const double rate = cosine_lr(step, total_steps, warmup, cfg.learning_rate);
      opt.step(rate);

      PretrainStepRecord rec{step, out.audio_part, out.video_part, total_value, rate};
      result.history.push_back(rec);
      if (log) {
        std::ostringstream line;
        line.precision(10);
        line << "{\"step\":" << rec.step << ",\"l_a\":" << rec.l_a
             << ",\"l_v\":" << rec.l_v << ",\"total\":" << rec.total
             << ",\"rate\":" << rec.rate << "}";
        *log << line.str() << "\n";
      }
      epoch_sum += total_value;
      ++step;
    }
    result.epoch_mean.push_back(epoch_sum / batches_per_epoch);
  }
  return result;
}

}  // namespace hola
