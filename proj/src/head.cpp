#include "hola/head.hpp"

#include <cmath>

namespace hola {

namespace {
constexpr double kInitStd = 0.02;
}

Tensor align_forward(const Tensor& x, const AlignmentParams& p) {
  Tensor h = x;
  for (const auto& conv : p.convs)
    h = conv1d(h, conv.w, conv.b, conv.stride, conv.padding);
  if (h.dim(0) != p.len_proj.dim(0))
    throw ShapeError("align_forward: conv chain produced length " +
                     std::to_string(h.dim(0)) + " but projection expects " +
                     std::to_string(p.len_proj.dim(0)));
  // Project along the length axis: out[l, c] = sum_l' proj[l', l] * h[l', c].
  return matmul(transpose(p.len_proj), h);
}

Tensor interaction_layer_forward(const Tensor& current, const Tensor& other,
                                 const InteractionLayer& layer, double ln_eps) {
  if (current.shape() != other.shape())
    throw ShapeError("interaction_layer: modality shapes differ, " +
                     shape_str(current.shape()) + " vs " +
                     shape_str(other.shape()));
  Tensor attended = mhca(current, other, layer.cross);
  std::vector<Tensor> gate_in{current, attended};
  Tensor hidden = relu(linear(concat(gate_in, 1), layer.gate_w1, layer.gate_b1));
  Tensor gate = sigmoid(linear(hidden, layer.gate_w2, layer.gate_b2));
  // Per-element convex blend of the current features and the attended ones.
  Tensor fused = add(sub(current, mul(gate, current)), mul(gate, attended));
  return layer_norm(add(current, fused), layer.ln_g, layer.ln_b, ln_eps);
}

std::pair<Tensor, Tensor> iterative_interact(
    const Tensor& video, const Tensor& audio,
    std::span<const InteractionLayer> video_layers,
    std::span<const InteractionLayer> audio_layers, double ln_eps) {
  if (video_layers.size() != audio_layers.size() || video_layers.empty())
    throw ConfigError("iterative_interact: need one layer per direction per round");
  Tensor v = video;
  Tensor a = audio;
  for (size_t round = 0; round < video_layers.size(); ++round) {
    // Simultaneous update: both directions read the previous round's state.
    Tensor v_next = interaction_layer_forward(v, a, video_layers[round], ln_eps);
    Tensor a_next = interaction_layer_forward(a, v, audio_layers[round], ln_eps);
    v = v_next;
    a = a_next;
  }
  return {v, a};
}

Tensor local_global_fuse(const Tensor& video, const Tensor& audio,
                         const LocalGlobalFusion& lg, double ln_eps) {
  if (video.shape() != audio.shape())
    throw ShapeError("local_global_fuse: modality shapes differ");
  const int rows = video.dim(0) + audio.dim(0);
  std::vector<Tensor> cat{video, audio};
  Tensor context = concat(cat, 0);
  std::vector<Tensor> with_cls{lg.cls_token, context};
  Tensor z = encoder_forward(concat(with_cls, 0), lg.stack, ln_eps);
  Tensor global = slice_rows(z, 0, 1);
  Tensor local = slice_rows(z, 1, rows);
  std::vector<Tensor> gate_in{local, tile_rows(global, rows)};
  Tensor gate = sigmoid(linear(concat(gate_in, 1), lg.gate_w, lg.gate_b));
  return mul(local, gate);
}

namespace {

Tensor refiner_stage_batch(std::vector<Tensor>& xs, PyramidStage& stage,
                           bool training) {
  // Per-sample convolution, shared batch-norm statistics, rectifier.
  std::vector<Tensor> convs;
  convs.reserve(xs.size());
  std::vector<int> lengths;
  for (const auto& x : xs) {
    Tensor c = conv1d(x, stage.conv.w, stage.conv.b, stage.conv.stride,
                      stage.conv.padding);
    lengths.push_back(c.dim(0));
    convs.push_back(c);
  }
  Tensor stacked = concat(convs, 0);
  Tensor normed;
  if (training) {
    std::vector<double> bm, bv;
    normed = batch_norm_train(stacked, stage.bn.gamma, stage.bn.beta,
                              stage.bn.eps, &bm, &bv);
    auto rm = stage.bn.running_mean.mutable_data();
    auto rv = stage.bn.running_var.mutable_data();
    for (size_t c = 0; c < bm.size(); ++c) {
      rm[c] = (1.0 - stage.bn.momentum) * rm[c] + stage.bn.momentum * bm[c];
      rv[c] = (1.0 - stage.bn.momentum) * rv[c] + stage.bn.momentum * bv[c];
    }
  } else {
    const auto rm = stage.bn.running_mean.data();
    const auto rv = stage.bn.running_var.data();
    normed = batch_norm_eval(stacked, stage.bn.gamma, stage.bn.beta,
                             std::vector<double>(rm.begin(), rm.end()),
                             std::vector<double>(rv.begin(), rv.end()),
                             stage.bn.eps);
  }
  Tensor activated = relu(normed);
  std::vector<Tensor> out;
  int row = 0;
  for (int len : lengths) {
    out.push_back(slice_rows(activated, row, len));
    row += len;
  }
  xs = std::move(out);
  return activated;
}

}  // namespace

Tensor pyramid_refine_batch(std::span<const Tensor> features, PyramidRefiner& pr,
                            bool training, double ln_eps) {
  if (features.empty()) throw ShapeError("pyramid_refine: empty batch");
  for (const auto& f : features)
    if (f.rank() != 2 || f.dim(0) < 8)
      throw ConfigError(
          "pyramid_refine: sequence length must be >= 8 for three stride-2 "
          "stages, got " + shape_str(f.shape()));

  const size_t batch = features.size();
  std::vector<Tensor> xs(features.begin(), features.end());
  // pooled[s] collects the per-stage GAP taps of sample s.
  std::vector<std::vector<Tensor>> pooled(batch);
  for (auto& stage : pr.stages) {
    refiner_stage_batch(xs, stage, training);
    for (size_t s = 0; s < batch; ++s) pooled[s].push_back(gap_rows(xs[s]));
  }
  std::vector<Tensor> logits;
  logits.reserve(batch);
  for (size_t s = 0; s < batch; ++s) {
    Tensor multiscale = concat(pooled[s], 1);  // [1 x 3C]
    Tensor fused = layer_norm(linear(multiscale, pr.agg_w, pr.agg_b),
                              pr.agg_ln_g, pr.agg_ln_b, ln_eps);
    logits.push_back(linear(fused, pr.cls_w, pr.cls_b));
  }
  return concat(logits, 0);
}

Tensor pyramid_refine(const Tensor& features, PyramidRefiner& pr, bool training,
                      double ln_eps) {
  std::vector<Tensor> one{features};
  return pyramid_refine_batch(one, pr, training, ln_eps);
}

// ---- initialization ----------------------------------------------------------------

Conv1dParams init_conv1d(ParamStore& ps, const std::string& prefix, int kernel,
                         int c_in, int c_out, int stride, int padding, Rng& rng) {
  Conv1dParams conv;
  conv.w = ps.add_trunc_normal(prefix + ".w", {kernel, c_in, c_out}, kInitStd, rng);
  conv.b = ps.add_zeros(prefix + ".b", {c_out});
  conv.stride = stride;
  conv.padding = padding;
  return conv;
}

AlignmentParams init_alignment(ParamStore& ps, const std::string& prefix,
                               int source_len, int target_len, int width,
                               Rng& rng) {
  if (source_len < 1 || target_len < 1)
    throw ConfigError("init_alignment: lengths must be positive");
  AlignmentParams p;
  int len = source_len;
  int stage = 0;
  while (len > target_len) {
    p.convs.push_back(init_conv1d(ps, prefix + ".conv" + std::to_string(stage),
                                  3, width, width, 2, 1, rng));
    len = (len + 2 - 3) / 2 + 1;
    ++stage;
  }
  if (len == target_len) {
    // Identity start: the aligner begins as a pass-through of the conv chain.
    std::vector<double> eye(static_cast<size_t>(len) * target_len, 0.0);
    for (int i = 0; i < len; ++i) eye[static_cast<size_t>(i) * target_len + i] = 1.0;
    p.len_proj = ps.add(prefix + ".len_proj", {len, target_len}, std::move(eye));
  } else {
    p.len_proj =
        ps.add_trunc_normal(prefix + ".len_proj", {len, target_len}, kInitStd, rng);
  }
  return p;
}

InteractionLayer init_interaction_layer(ParamStore& ps, const std::string& prefix,
                                        int width, int heads, Rng& rng) {
  InteractionLayer layer;
  layer.cross = init_attention(ps, prefix + ".cross", width, heads, rng);
  layer.gate_w1 = ps.add_trunc_normal(prefix + ".gate.w1", {2 * width, width}, kInitStd, rng);
  layer.gate_b1 = ps.add_zeros(prefix + ".gate.b1", {width});
  layer.gate_w2 = ps.add_trunc_normal(prefix + ".gate.w2", {width, width}, kInitStd, rng);
  layer.gate_b2 = ps.add_zeros(prefix + ".gate.b2", {width});
  layer.ln_g = ps.add_ones(prefix + ".ln.g", {width});
  layer.ln_b = ps.add_zeros(prefix + ".ln.b", {width});
  return layer;
}

LocalGlobalFusion init_local_global(ParamStore& ps, const std::string& prefix,
                                    int depth, int width, int heads, Rng& rng) {
  LocalGlobalFusion lg;
  lg.cls_token = ps.add_trunc_normal(prefix + ".cls", {1, width}, kInitStd, rng);
  lg.stack = init_encoder_stack(ps, prefix + ".stack", depth, width, heads, rng);
  lg.gate_w = ps.add_trunc_normal(prefix + ".gate.w", {2 * width, width}, kInitStd, rng);
  lg.gate_b = ps.add_zeros(prefix + ".gate.b", {width});
  return lg;
}

PyramidRefiner init_pyramid(ParamStore& ps, const std::string& prefix, int width,
                            Rng& rng) {
  PyramidRefiner pr;
  for (int s = 0; s < 3; ++s) {
    auto& stage = pr.stages[static_cast<size_t>(s)];
    const std::string sp = prefix + ".stage" + std::to_string(s);
    stage.conv = init_conv1d(ps, sp + ".conv", 3, width, width, 2, 1, rng);
    stage.bn.gamma = ps.add_ones(sp + ".bn.g", {width});
    stage.bn.beta = ps.add_zeros(sp + ".bn.b", {width});
    stage.bn.running_mean = ps.add_buffer(
        sp + ".bn.running_mean", {width},
        std::vector<double>(static_cast<size_t>(width), 0.0));
    stage.bn.running_var = ps.add_buffer(
        sp + ".bn.running_var", {width},
        std::vector<double>(static_cast<size_t>(width), 1.0));
  }
  pr.agg_w = ps.add_trunc_normal(prefix + ".agg.w", {3 * width, width}, kInitStd, rng);
  pr.agg_b = ps.add_zeros(prefix + ".agg.b", {width});
  pr.agg_ln_g = ps.add_ones(prefix + ".agg_ln.g", {width});
  pr.agg_ln_b = ps.add_zeros(prefix + ".agg_ln.b", {width});
  pr.cls_w = ps.add_trunc_normal(prefix + ".cls.w", {width, 2}, kInitStd, rng);
  pr.cls_b = ps.add_zeros(prefix + ".cls.b", {2});
  return pr;
}

}  // namespace hola
