#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hola/backbone.hpp"
#include "hola/optim.hpp"
#include "hola/tensor.hpp"

namespace hola {

struct Conv1dParams {
  Tensor w;  // [K x C_in x C_out]
  Tensor b;
  int stride = 1;
  int padding = 0;
};

// Maps an arbitrary-length feature sequence to exactly `target_len` rows:
// a chain of stride-2 convolutions followed by a learned projection over the
// length axis (identity-initialized when square).
struct AlignmentParams {
  std::vector<Conv1dParams> convs;
  Tensor len_proj;  // [len_after_convs x target_len]
};

Tensor align_forward(const Tensor& x, const AlignmentParams& p);

// One selective cross-modal update: attend to the other modality, gate the
// attended features per token and channel, blend, and layer-normalize the
// residual sum. The gate is two linear layers with a rectifier between and a
// sigmoid on the final weight matrix.
struct InteractionLayer {
  AttentionParams cross;
  Tensor gate_w1;  // [2C x C]
  Tensor gate_b1;
  Tensor gate_w2;  // [C x C], the final sigmoid weight matrix
  Tensor gate_b2;
  Tensor ln_g, ln_b;
};

Tensor interaction_layer_forward(const Tensor& current, const Tensor& other,
                                 const InteractionLayer& layer,
                                 double ln_eps = 1e-5);

// Three rounds of simultaneous bidirectional updates with per-round,
// per-direction parameters.
std::pair<Tensor, Tensor> iterative_interact(
    const Tensor& video, const Tensor& audio,
    std::span<const InteractionLayer> video_layers,
    std::span<const InteractionLayer> audio_layers, double ln_eps = 1e-5);

// Concatenates both modalities, prepends a learnable summary token, runs a
// self-attention stack, then gates the 2L local rows against the broadcast
// global row.
struct LocalGlobalFusion {
  Tensor cls_token;  // [1 x C]
  EncoderStack stack;
  Tensor gate_w;  // [2C x C]
  Tensor gate_b;
};

Tensor local_global_fuse(const Tensor& video, const Tensor& audio,
                         const LocalGlobalFusion& lg, double ln_eps = 1e-5);

struct BatchNormParams {
  Tensor gamma, beta;
  Tensor running_mean;  // buffers, persisted but not trained
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

struct PyramidStage {
  Conv1dParams conv;  // stride-2
  BatchNormParams bn;
};

// Three stride-2 scales with per-scale pooled taps, concatenated into a 3C
// multi-scale vector, aggregated to C, and classified into two logits.
struct PyramidRefiner {
  std::array<PyramidStage, 3> stages;
  Tensor agg_w;  // [3C x C]
  Tensor agg_b;
  Tensor agg_ln_g, agg_ln_b;
  Tensor cls_w;  // [C x 2]
  Tensor cls_b;
};

// Batched refinement: per-sample convolution chains with batch-norm
// statistics shared across the whole batch in training mode (frozen running
// averages in eval mode). Returns [B x 2] logits. Training mode updates the
// running statistics in place.
Tensor pyramid_refine_batch(std::span<const Tensor> features,
                            PyramidRefiner& pr, bool training,
                            double ln_eps = 1e-5);

// Single-sample convenience wrapper; returns a [1 x 2] logit row.
Tensor pyramid_refine(const Tensor& features, PyramidRefiner& pr, bool training,
                      double ln_eps = 1e-5);

// ---- initialization ------------------------------------------------------------

Conv1dParams init_conv1d(ParamStore& ps, const std::string& prefix, int kernel,
                         int c_in, int c_out, int stride, int padding, Rng& rng);
AlignmentParams init_alignment(ParamStore& ps, const std::string& prefix,
                               int source_len, int target_len, int width,
                               Rng& rng);
InteractionLayer init_interaction_layer(ParamStore& ps, const std::string& prefix,
                                        int width, int heads, Rng& rng);
LocalGlobalFusion init_local_global(ParamStore& ps, const std::string& prefix,
                                    int depth, int width, int heads, Rng& rng);
PyramidRefiner init_pyramid(ParamStore& ps, const std::string& prefix, int width,
                            Rng& rng);

}  // namespace hola
