#include "hola/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace hola {

namespace {

void check_width(const Tensor& x, const AttentionParams& p, const char* op) {
  if (x.rank() != 2 || x.dim(1) != p.wq.dim(0))
    throw ShapeError(std::string(op) + ": input " + shape_str(x.shape()) +
                     " does not match projection width " +
                     std::to_string(p.wq.dim(0)));
}

// Shared core: queries from q_in, keys/values from kv_in.
Tensor attention_core(const Tensor& q_in, const Tensor& kv_in,
                      const AttentionParams& p) {
  const int dk = p.d_k;
  Tensor q = matmul(q_in, p.wq);
  Tensor k = matmul(kv_in, p.wk);
  Tensor v = matmul(kv_in, p.wv);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(p.heads));
  for (int h = 0; h < p.heads; ++h) {
    Tensor qh = slice_cols(q, h * dk, dk);
    Tensor kh = slice_cols(k, h * dk, dk);
    Tensor vh = slice_cols(v, h * dk, dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(double(dk)));
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  return matmul(concat(heads, 1), p.wo);
}

Tensor ffn_forward(const Tensor& x, const Tensor& w1, const Tensor& b1,
                   const Tensor& w2, const Tensor& b2) {
  return linear(relu(linear(x, w1, b1)), w2, b2);
}

}  // namespace

Tensor mhsa(const Tensor& x, const AttentionParams& p) {
  check_width(x, p, "mhsa");
  return attention_core(x, x, p);
}

Tensor mhca(const Tensor& queries, const Tensor& context,
            const AttentionParams& p) {
  check_width(queries, p, "mhca");
  check_width(context, p, "mhca");
  return attention_core(queries, context, p);
}

Tensor encoder_block_forward(const Tensor& x, const EncoderBlock& blk,
                             double ln_eps) {
  Tensor h = add(x, mhsa(layer_norm(x, blk.ln1_g, blk.ln1_b, ln_eps), blk.attn));
  return add(h, ffn_forward(layer_norm(h, blk.ln2_g, blk.ln2_b, ln_eps),
                            blk.ffn_w1, blk.ffn_b1, blk.ffn_w2, blk.ffn_b2));
}

Tensor encoder_forward(const Tensor& x, const EncoderStack& stack,
                       double ln_eps) {
  Tensor h = x;
  for (const auto& blk : stack.blocks) h = encoder_block_forward(h, blk, ln_eps);
  return h;
}

VisibleLatents encode_visible(const TokenSequence& tokens, const MaskPlan& plan,
                              const EncoderStack& enc, double ln_eps) {
  if (plan.length != tokens.tokens.dim(0))
    throw ShapeError("encode_visible: plan length " +
                     std::to_string(plan.length) + " != token count " +
                     std::to_string(tokens.tokens.dim(0)));
  std::vector<int> visible = plan.encoder_visible();
  if (visible.empty())
    throw ConfigError("encode_visible: no visible tokens");
  VisibleLatents out;
  out.positions = visible;
  out.latents = encoder_forward(gather_rows(tokens.tokens, visible), enc, ln_eps);
  return out;
}

namespace {

Tensor fusion_side_forward(const Tensor& self_in, const Tensor& other_self,
                           const FusionBlock::Side& side, double ln_eps) {
  Tensor c = add(self_in,
                 mhca(layer_norm(self_in, side.cross_lnq_g, side.cross_lnq_b, ln_eps),
                      layer_norm(other_self, side.cross_lnkv_g, side.cross_lnkv_b, ln_eps),
                      side.cross_attn));
  return add(c, ffn_forward(layer_norm(c, side.ffn_ln_g, side.ffn_ln_b, ln_eps),
                            side.ffn_w1, side.ffn_b1, side.ffn_w2, side.ffn_b2));
}

Tensor fusion_self_stage(const Tensor& x, const FusionBlock::Side& side,
                         double ln_eps) {
  return add(x, mhsa(layer_norm(x, side.self_ln_g, side.self_ln_b, ln_eps),
                     side.self_attn));
}

}  // namespace

std::pair<Tensor, Tensor> fuse(const Tensor& video, const Tensor& audio,
                               const FusionBlock& blk, double ln_eps) {
  if (video.dim(1) != audio.dim(1))
    throw ShapeError("fuse: modality widths differ");
  // Both cross directions read the other's post-MHSA state.
  Tensor sv = fusion_self_stage(video, blk.video, ln_eps);
  Tensor sa = fusion_self_stage(audio, blk.audio, ln_eps);
  Tensor fv = fusion_side_forward(sv, sa, blk.video, ln_eps);
  Tensor fa = fusion_side_forward(sa, sv, blk.audio, ln_eps);
  return {fv, fa};
}

Tensor decode(const VisibleLatents& fused, const MaskPlan& plan,
              const DecoderParams& dec, double ln_eps) {
  if (plan.loss_positions.empty())
    throw ConfigError("decode: degenerate plan with no loss positions");
  const int width = fused.latents.dim(1);
  const std::vector<int> dec_positions = plan.decoder_mask_positions();
  const int n_vis = static_cast<int>(fused.positions.size());
  const int n_dec = static_cast<int>(dec_positions.size());
  if (n_vis < 1) throw ConfigError("decode: no visible features");

  // Mask tokens get positional encodings re-added so the decoder knows which
  // patch each slot reconstructs.
  Tensor table = positional_table(plan.length, width);
  Tensor mask_rows = add(tile_rows(dec.mask_token, n_dec),
                         gather_rows(table, dec_positions));
  std::vector<Tensor> parts{fused.latents, mask_rows};
  Tensor seq = concat(parts, 0);
  Tensor z = encoder_forward(seq, dec.stack, ln_eps);
  Tensor preds = linear(z, dec.head_w, dec.head_b);

  // Loss rows live in the mask-token segment: row n_vis + rank(p) for each
  // loss position p (loss positions are decoder-masked by construction).
  std::vector<int> rows;
  rows.reserve(plan.loss_positions.size());
  for (int p : plan.loss_positions) {
    const auto it =
        std::lower_bound(dec_positions.begin(), dec_positions.end(), p);
    rows.push_back(n_vis + static_cast<int>(it - dec_positions.begin()));
  }
  return gather_rows(preds, rows);
}

// ---- initialization ----------------------------------------------------------------

namespace {
constexpr double kInitStd = 0.02;
}

AttentionParams init_attention(ParamStore& ps, const std::string& prefix,
                               int width, int heads, Rng& rng) {
  if (heads < 1 || width % heads != 0)
    throw ConfigError("init_attention: heads must divide width");
  AttentionParams p;
  p.heads = heads;
  p.d_k = width / heads;
  p.wq = ps.add_trunc_normal(prefix + ".wq", {width, width}, kInitStd, rng);
  p.wk = ps.add_trunc_normal(prefix + ".wk", {width, width}, kInitStd, rng);
  p.wv = ps.add_trunc_normal(prefix + ".wv", {width, width}, kInitStd, rng);
  p.wo = ps.add_trunc_normal(prefix + ".wo", {width, width}, kInitStd, rng);
  return p;
}

EncoderBlock init_encoder_block(ParamStore& ps, const std::string& prefix,
                                int width, int heads, Rng& rng) {
  EncoderBlock blk;
  blk.attn = init_attention(ps, prefix + ".attn", width, heads, rng);
  blk.ln1_g = ps.add_ones(prefix + ".ln1.g", {width});
  blk.ln1_b = ps.add_zeros(prefix + ".ln1.b", {width});
  blk.ln2_g = ps.add_ones(prefix + ".ln2.g", {width});
  blk.ln2_b = ps.add_zeros(prefix + ".ln2.b", {width});
  blk.ffn_w1 = ps.add_trunc_normal(prefix + ".ffn.w1", {width, 4 * width}, kInitStd, rng);
  blk.ffn_b1 = ps.add_zeros(prefix + ".ffn.b1", {4 * width});
  blk.ffn_w2 = ps.add_trunc_normal(prefix + ".ffn.w2", {4 * width, width}, kInitStd, rng);
  blk.ffn_b2 = ps.add_zeros(prefix + ".ffn.b2", {width});
  return blk;
}

EncoderStack init_encoder_stack(ParamStore& ps, const std::string& prefix,
                                int depth, int width, int heads, Rng& rng) {
  if (depth < 1) throw ConfigError("init_encoder_stack: depth must be >= 1");
  EncoderStack stack;
  for (int d = 0; d < depth; ++d)
    stack.blocks.push_back(
        init_encoder_block(ps, prefix + ".block" + std::to_string(d), width, heads, rng));
  return stack;
}

namespace {

FusionBlock::Side init_fusion_side(ParamStore& ps, const std::string& prefix,
                                   int width, int heads, Rng& rng) {
  FusionBlock::Side s;
  s.self_attn = init_attention(ps, prefix + ".self", width, heads, rng);
  s.self_ln_g = ps.add_ones(prefix + ".self_ln.g", {width});
  s.self_ln_b = ps.add_zeros(prefix + ".self_ln.b", {width});
  s.cross_attn = init_attention(ps, prefix + ".cross", width, heads, rng);
  s.cross_lnq_g = ps.add_ones(prefix + ".cross_lnq.g", {width});
  s.cross_lnq_b = ps.add_zeros(prefix + ".cross_lnq.b", {width});
  s.cross_lnkv_g = ps.add_ones(prefix + ".cross_lnkv.g", {width});
  s.cross_lnkv_b = ps.add_zeros(prefix + ".cross_lnkv.b", {width});
  s.ffn_ln_g = ps.add_ones(prefix + ".ffn_ln.g", {width});
  s.ffn_ln_b = ps.add_zeros(prefix + ".ffn_ln.b", {width});
  s.ffn_w1 = ps.add_trunc_normal(prefix + ".ffn.w1", {width, 4 * width}, kInitStd, rng);
  s.ffn_b1 = ps.add_zeros(prefix + ".ffn.b1", {4 * width});
  s.ffn_w2 = ps.add_trunc_normal(prefix + ".ffn.w2", {4 * width, width}, kInitStd, rng);
  s.ffn_b2 = ps.add_zeros(prefix + ".ffn.b2", {width});
  return s;
}

}  // namespace

FusionBlock init_fusion_block(ParamStore& ps, const std::string& prefix,
                              int width, int heads, Rng& rng) {
  FusionBlock blk;
  blk.video = init_fusion_side(ps, prefix + ".video", width, heads, rng);
  blk.audio = init_fusion_side(ps, prefix + ".audio", width, heads, rng);
  return blk;
}

DecoderParams init_decoder(ParamStore& ps, const std::string& prefix, int depth,
                           int width, int heads, int patch_dim, Rng& rng) {
  DecoderParams dec;
  dec.mask_token = ps.add_trunc_normal(prefix + ".mask_token", {1, width}, kInitStd, rng);
  dec.stack = init_encoder_stack(ps, prefix + ".stack", depth, width, heads, rng);
  dec.head_w = ps.add_trunc_normal(prefix + ".head.w", {width, patch_dim}, kInitStd, rng);
  dec.head_b = ps.add_zeros(prefix + ".head.b", {patch_dim});
  return dec;
}

}  // namespace hola
