#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hola/frontend.hpp"
#include "hola/masking.hpp"
#include "hola/optim.hpp"
#include "hola/tensor.hpp"

namespace hola {

// Multi-head attention projections. Convention: heads * d_k == width, and
// projections carry no bias.
struct AttentionParams {
  int heads = 1;
  int d_k = 1;
  Tensor wq;  // [C x heads*d_k]
  Tensor wk;
  Tensor wv;
  Tensor wo;  // [heads*d_k x C]
};

// Pre-norm transformer block: x + MHSA(LN(x)), then x + FFN(LN(x)) with a
// C -> 4C -> C feed-forward.
struct EncoderBlock {
  AttentionParams attn;
  Tensor ln1_g, ln1_b;
  Tensor ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1;
  Tensor ffn_w2, ffn_b2;
};

struct EncoderStack {
  std::vector<EncoderBlock> blocks;
  int depth() const { return static_cast<int>(blocks.size()); }
};

// Bidirectional fusion block: per modality a self-attention sub-layer, a
// cross-attention sub-layer against the other modality, and a feed-forward,
// each pre-norm residual.
struct FusionBlock {
  struct Side {
    AttentionParams self_attn;
    Tensor self_ln_g, self_ln_b;
    AttentionParams cross_attn;
    Tensor cross_lnq_g, cross_lnq_b;
    Tensor cross_lnkv_g, cross_lnkv_b;
    Tensor ffn_ln_g, ffn_ln_b;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  };
  Side video;
  Side audio;
};

// Reconstruction decoder: learnable mask token, a small transformer stack,
// and a linear head back to the original patch dimensionality.
struct DecoderParams {
  Tensor mask_token;  // [1 x C]
  EncoderStack stack;
  Tensor head_w;  // [C x patch_dim]
  Tensor head_b;
};

// ---- forward ops -------------------------------------------------------------

// Softmax(Q K^T / sqrt(d_k)) V per head, concatenated and projected by wo.
Tensor mhsa(const Tensor& x, const AttentionParams& p);

// Queries from `queries`, keys and values from `context`; output length
// matches `queries`.
Tensor mhca(const Tensor& queries, const Tensor& context,
            const AttentionParams& p);

Tensor encoder_block_forward(const Tensor& x, const EncoderBlock& blk,
                             double ln_eps = 1e-5);
Tensor encoder_forward(const Tensor& x, const EncoderStack& stack,
                       double ln_eps = 1e-5);

// Encoder-side latents restricted to visible positions, original position
// indices preserved (strictly increasing).
struct VisibleLatents {
  Tensor latents;              // [n_visible x C]
  std::vector<int> positions;  // ascending
};

VisibleLatents encode_visible(const TokenSequence& tokens, const MaskPlan& plan,
                              const EncoderStack& enc, double ln_eps = 1e-5);

// One fusion block applied to both modalities. Both cross directions read the
// other side's post-self-attention state, so the dataflow is symmetric.
std::pair<Tensor, Tensor> fuse(const Tensor& video, const Tensor& audio,
                               const FusionBlock& blk, double ln_eps = 1e-5);

// Assembles the decoder sequence per the dual-masking plan: fused features at
// encoder-visible slots plus positional-encoded mask tokens at every
// decoder-masked slot, runs the stack, and returns head predictions at
// loss_positions (row i corresponds to plan.loss_positions[i]).
Tensor decode(const VisibleLatents& fused, const MaskPlan& plan,
              const DecoderParams& dec, double ln_eps = 1e-5);

// ---- initialization ------------------------------------------------------------

AttentionParams init_attention(ParamStore& ps, const std::string& prefix,
                               int width, int heads, Rng& rng);
EncoderBlock init_encoder_block(ParamStore& ps, const std::string& prefix,
                                int width, int heads, Rng& rng);
EncoderStack init_encoder_stack(ParamStore& ps, const std::string& prefix,
                                int depth, int width, int heads, Rng& rng);
FusionBlock init_fusion_block(ParamStore& ps, const std::string& prefix,
                              int width, int heads, Rng& rng);
DecoderParams init_decoder(ParamStore& ps, const std::string& prefix, int depth,
                           int width, int heads, int patch_dim, Rng& rng);

}  // namespace hola
