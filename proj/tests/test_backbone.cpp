#include <cmath>
#include <vector>

#include "doctest.h"
#include "hola/backbone.hpp"
#include "hola/masking.hpp"
#include "hola/rng.hpp"
#include "oracles.hpp"

using namespace hola;

namespace {

AttentionParams make_attention(Rng& rng, int width, int heads) {
  AttentionParams p;
  p.heads = heads;
  p.d_k = width / heads;
  p.wq = constant({width, width}, oracle::random_vec(rng, static_cast<size_t>(width) * width));
  p.wk = constant({width, width}, oracle::random_vec(rng, static_cast<size_t>(width) * width));
  p.wv = constant({width, width}, oracle::random_vec(rng, static_cast<size_t>(width) * width));
  p.wo = constant({width, width}, oracle::random_vec(rng, static_cast<size_t>(width) * width));
  return p;
}

std::vector<double> slice_head(const std::vector<double>& m, int rows, int cols,
                               int c0, int width) {
  std::vector<double> out(static_cast<size_t>(rows) * width);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < width; ++c)
      out[static_cast<size_t>(r) * width + c] =
          m[static_cast<size_t>(r) * cols + c0 + c];
  return out;
}

// Head-by-head loop transcription of multi-head attention.
std::vector<double> attention_oracle(const std::vector<double>& q_in,
                                     const std::vector<double>& kv_in, int Lq,
                                     int Lk, const AttentionParams& p) {
  const int C = p.wq.dim(0);
  auto take = [](const Tensor& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
  };
  auto q = oracle::matmul(q_in, take(p.wq), Lq, C, C);
  auto k = oracle::matmul(kv_in, take(p.wk), Lk, C, C);
  auto v = oracle::matmul(kv_in, take(p.wv), Lk, C, C);
  std::vector<double> heads(static_cast<size_t>(Lq) * C);
  for (int h = 0; h < p.heads; ++h) {
    auto qh = slice_head(q, Lq, C, h * p.d_k, p.d_k);
    auto kh = slice_head(k, Lk, C, h * p.d_k, p.d_k);
    auto vh = slice_head(v, Lk, C, h * p.d_k, p.d_k);
    auto oh = oracle::attention(qh, kh, vh, Lq, Lk, p.d_k);
    for (int r = 0; r < Lq; ++r)
      for (int c = 0; c < p.d_k; ++c)
        heads[static_cast<size_t>(r) * C + h * p.d_k + c] =
            oh[static_cast<size_t>(r) * p.d_k + c];
  }
  return oracle::matmul(heads, take(p.wo), Lq, C, C);
}

}  // namespace

TEST_CASE("mhsa on a single token reduces to the value path") {
  Rng rng(201);
  const int C = 6;
  AttentionParams p = make_attention(rng, C, 2);
  auto x = oracle::random_vec(rng, C);
  Tensor out = mhsa(constant({1, C}, x), p);
  // Softmax over one key is 1, so output = (x Wv) Wo.
  auto expect = oracle::matmul(
      oracle::matmul(x, std::vector<double>(p.wv.data().begin(), p.wv.data().end()), 1, C, C),
      std::vector<double>(p.wo.data().begin(), p.wo.data().end()), 1, C, C);
  for (int c = 0; c < C; ++c)
    CHECK(out.data()[static_cast<size_t>(c)] == doctest::Approx(expect[static_cast<size_t>(c)]).epsilon(1e-12));
}

TEST_CASE("mhsa maps identical tokens to identical rows") {
  Rng rng(202);
  const int C = 8;
  AttentionParams p = make_attention(rng, C, 2);
  auto row = oracle::random_vec(rng, C);
  std::vector<double> x(row);
  x.insert(x.end(), row.begin(), row.end());
  Tensor out = mhsa(constant({2, C}, x), p);
  for (int c = 0; c < C; ++c)
    CHECK(out.data()[static_cast<size_t>(c)] ==
          doctest::Approx(out.data()[static_cast<size_t>(C + c)]).epsilon(1e-12));
}

TEST_CASE("mhsa matches the head-by-head loop oracle") {
  Rng rng(203);
  for (int trial = 0; trial < 100; ++trial) {
    const int heads = 1 + static_cast<int>(rng.uniform_below(2));
    const int dk = 2 + static_cast<int>(rng.uniform_below(3));
    const int C = heads * dk;
    const int L = 2 + static_cast<int>(rng.uniform_below(5));
    AttentionParams p = make_attention(rng, C, heads);
    auto x = oracle::random_vec(rng, static_cast<size_t>(L) * C);
    Tensor out = mhsa(constant({L, C}, x), p);
    auto expect = attention_oracle(x, x, L, L, p);
    for (size_t i = 0; i < expect.size(); ++i)
      CHECK(std::abs(out.data()[i] - expect[i]) < 1e-10);
  }
}

TEST_CASE("mhca single-context-token and degenerate self cases") {
  Rng rng(204);
  const int C = 8;
  AttentionParams p = make_attention(rng, C, 2);

  // One context token: every output row equals its value projection.
  auto q_in = oracle::random_vec(rng, 3 * C);
  auto ctx = oracle::random_vec(rng, C);
  Tensor out = mhca(constant({3, C}, q_in), constant({1, C}, ctx), p);
  auto expect = oracle::matmul(
      oracle::matmul(ctx, std::vector<double>(p.wv.data().begin(), p.wv.data().end()), 1, C, C),
      std::vector<double>(p.wo.data().begin(), p.wo.data().end()), 1, C, C);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < C; ++c)
      CHECK(out.data()[static_cast<size_t>(r) * C + c] ==
            doctest::Approx(expect[static_cast<size_t>(c)]).epsilon(1e-10));

  // Same tensor on both sides equals self-attention.
  auto x = oracle::random_vec(rng, 4 * C);
  Tensor xt = constant({4, C}, x);
  Tensor self_out = mhsa(xt, p);
  Tensor cross_out = mhca(xt, xt, p);
  for (size_t i = 0; i < static_cast<size_t>(self_out.numel()); ++i)
    CHECK(self_out.data()[i] == doctest::Approx(cross_out.data()[i]).epsilon(1e-12));
}

TEST_CASE("mhca matches the loop oracle") {
  Rng rng(205);
  for (int trial = 0; trial < 100; ++trial) {
    const int heads = 2;
    const int C = 8;
    const int Lq = 1 + static_cast<int>(rng.uniform_below(5));
    const int Lk = 1 + static_cast<int>(rng.uniform_below(5));
    AttentionParams p = make_attention(rng, C, heads);
    auto q = oracle::random_vec(rng, static_cast<size_t>(Lq) * C);
    auto kv = oracle::random_vec(rng, static_cast<size_t>(Lk) * C);
    Tensor out = mhca(constant({Lq, C}, q), constant({Lk, C}, kv), p);
    auto expect = attention_oracle(q, kv, Lq, Lk, p);
    for (size_t i = 0; i < expect.size(); ++i)
      CHECK(std::abs(out.data()[i] - expect[i]) < 1e-10);
  }
}

TEST_CASE("mhca rejects width mismatches") {
  Rng rng(206);
  AttentionParams p = make_attention(rng, 8, 2);
  CHECK_THROWS_AS(mhca(zeros({3, 8}), zeros({2, 6}), p), ShapeError);
}

TEST_CASE("encode_visible drops masked tokens and keeps positions ordered") {
  Rng rng(207);
  ParamStore ps;
  const int C = 8;
  EncoderStack enc = init_encoder_stack(ps, "enc", 2, C, 2, rng);

  TokenSequence seq;
  seq.grid = Grid3{8, 4, 4};
  seq.tokens = constant({128, C}, oracle::random_vec(rng, static_cast<size_t>(128) * C));
  seq.positions.resize(128);
  for (int i = 0; i < 128; ++i) seq.positions[static_cast<size_t>(i)] = i;
  seq.modality = Modality::video;

  // All-false encoder mask encodes the full sequence.
  std::vector<bool> none(128, false);
  MaskPlan open;
  open.modality = Modality::video;
  open.length = 128;
  open.encoder_masked = none;
  open.decoder_masked = none;
  VisibleLatents vis = encode_visible(seq, open, enc);
  CHECK(vis.latents.dim(0) == 128);
  Tensor direct = encoder_forward(seq.tokens, enc);
  for (size_t i = 0; i < static_cast<size_t>(direct.numel()); ++i)
    CHECK(vis.latents.data()[i] == doctest::Approx(direct.data()[i]));

  // 90% tube mask leaves 16 visible latents (8 time x 2 spatial).
  auto tube = tube_mask(seq.grid, 0.9, rng);
  MaskPlan plan = build_dual_plan(Modality::video, tube, running_cell_mask(seq.grid, 0.5));
  VisibleLatents vis2 = encode_visible(seq, plan, enc);
  CHECK(vis2.latents.dim(0) == 16);
  for (size_t i = 1; i < vis2.positions.size(); ++i)
    CHECK(vis2.positions[i] > vis2.positions[i - 1]);
  for (auto v : vis2.latents.data()) CHECK(std::isfinite(v));
}

TEST_CASE("fuse: zero cross projections reduce to the self-attention path") {
  Rng rng(208);
  ParamStore ps;
  const int C = 8;
  FusionBlock blk = init_fusion_block(ps, "fusion", C, 2, rng);
  // Kill both cross branches.
  for (auto* side : {&blk.video, &blk.audio}) {
    for (auto& v : side->cross_attn.wo.mutable_data()) v = 0.0;
  }
  Tensor v = constant({6, C}, oracle::random_vec(rng, static_cast<size_t>(6) * C));
  Tensor a = constant({4, C}, oracle::random_vec(rng, static_cast<size_t>(4) * C));
  auto [fv, fa] = fuse(v, a, blk);
  CHECK(fv.dim(0) == 6);
  CHECK(fa.dim(0) == 4);

  // Reference: self stage + FFN, cross branch contributing exactly zero.
  auto side_ref = [&](const Tensor& x, const FusionBlock::Side& s) {
    Tensor sv = add(x, mhsa(layer_norm(x, s.self_ln_g, s.self_ln_b, 1e-5), s.self_attn));
    Tensor f = linear(relu(linear(layer_norm(sv, s.ffn_ln_g, s.ffn_ln_b, 1e-5),
                                  s.ffn_w1, s.ffn_b1)),
                      s.ffn_w2, s.ffn_b2);
    return add(sv, f);
  };
  Tensor ev = side_ref(v, blk.video);
  Tensor ea = side_ref(a, blk.audio);
  for (size_t i = 0; i < static_cast<size_t>(ev.numel()); ++i)
    CHECK(fv.data()[i] == doctest::Approx(ev.data()[i]).epsilon(1e-12));
  for (size_t i = 0; i < static_cast<size_t>(ea.numel()); ++i)
    CHECK(fa.data()[i] == doctest::Approx(ea.data()[i]).epsilon(1e-12));
}

TEST_CASE("fuse: shared parameters make the block symmetric under swap") {
  Rng rng(209);
  ParamStore ps;
  const int C = 8;
  FusionBlock blk = init_fusion_block(ps, "fusion", C, 2, rng);
  blk.audio = blk.video;  // share every sub-block
  Tensor v = constant({5, C}, oracle::random_vec(rng, static_cast<size_t>(5) * C));
  Tensor a = constant({3, C}, oracle::random_vec(rng, static_cast<size_t>(3) * C));
  auto [fv, fa] = fuse(v, a, blk);
  auto [gv, ga] = fuse(a, v, blk);
  for (size_t i = 0; i < static_cast<size_t>(fv.numel()); ++i)
    CHECK(fv.data()[i] == doctest::Approx(ga.data()[i]).epsilon(1e-12));
  for (size_t i = 0; i < static_cast<size_t>(fa.numel()); ++i)
    CHECK(fa.data()[i] == doctest::Approx(gv.data()[i]).epsilon(1e-12));
}

TEST_CASE("decode sequence budget and zero-head behaviour") {
  Rng rng(210);
  ParamStore ps;
  const int C = 8;
  const int patch_dim = 5;
  DecoderParams dec = init_decoder(ps, "dec", 1, C, 2, patch_dim, rng);

  // decoder_masked == encoder_masked on L=10 with 8 masked.
  std::vector<bool> m(10, false);
  for (int i : {0, 1, 2, 3, 4, 5, 6, 7}) m[static_cast<size_t>(i)] = true;
  MaskPlan plan = build_dual_plan(Modality::audio, m, m);
  CHECK(plan.loss_positions.size() == 8);

  VisibleLatents vis;
  vis.positions = {8, 9};
  vis.latents = constant({2, C}, oracle::random_vec(rng, static_cast<size_t>(2) * C));
  Tensor recon = decode(vis, plan, dec);
  CHECK(recon.dim(0) == 8);
  CHECK(recon.dim(1) == patch_dim);

  // Zero head weights: every reconstruction equals the head bias.
  for (auto& v : dec.head_w.mutable_data()) v = 0.0;
  std::vector<double> bias = oracle::random_vec(rng, patch_dim);
  auto bd = dec.head_b.mutable_data();
  for (int i = 0; i < patch_dim; ++i) bd[static_cast<size_t>(i)] = bias[static_cast<size_t>(i)];
  Tensor recon2 = decode(vis, plan, dec);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < patch_dim; ++c)
      CHECK(recon2.data()[static_cast<size_t>(r) * patch_dim + c] ==
            doctest::Approx(bias[static_cast<size_t>(c)]));
}

TEST_CASE("decode budget on the default dual-masked video geometry") {
  Rng rng(211);
  Grid3 grid{8, 4, 4};
  auto enc_mask = tube_mask(grid, 0.9, rng);
  auto dec_mask = running_cell_mask(grid, 0.5);
  MaskPlan plan = build_dual_plan(Modality::video, enc_mask, dec_mask);
  // Exact counts from the rounding rules: 16 visible, 64 decoder slots.
  CHECK(plan.encoder_visible().size() == 16);
  CHECK(plan.decoder_mask_positions().size() == 64);

  ParamStore ps;
  const int C = 8;
  DecoderParams dec = init_decoder(ps, "dec", 1, C, 2, 12, rng);
  VisibleLatents vis;
  vis.positions = plan.encoder_visible();
  vis.latents = constant({16, C}, oracle::random_vec(rng, static_cast<size_t>(16) * C));
  Tensor recon = decode(vis, plan, dec);
  CHECK(recon.dim(0) == static_cast<int>(plan.loss_positions.size()));
  for (auto v : recon.data()) CHECK(std::isfinite(v));
}

TEST_CASE("decode output at loss positions is invariant to visible-row order") {
  Rng rng(212);
  ParamStore ps;
  const int C = 8;
  DecoderParams dec = init_decoder(ps, "dec", 2, C, 2, 6, rng);

  std::vector<bool> enc_mask(12, false), dec_mask(12, false);
  for (int i : {0, 2, 3, 5, 7, 8, 9, 11}) enc_mask[static_cast<size_t>(i)] = true;
  for (int i : {0, 1, 3, 5, 8, 9}) dec_mask[static_cast<size_t>(i)] = true;
  MaskPlan plan = build_dual_plan(Modality::video, enc_mask, dec_mask);

  auto latents = oracle::random_vec(rng, static_cast<size_t>(4) * C);
  VisibleLatents vis;
  vis.positions = {1, 4, 6, 10};
  vis.latents = constant({4, C}, latents);
  Tensor base = decode(vis, plan, dec);

  // Permute the visible rows (attention is set-structured).
  std::vector<int> perm{2, 0, 3, 1};
  std::vector<double> shuffled(latents.size());
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < C; ++c)
      shuffled[static_cast<size_t>(r) * C + c] =
          latents[static_cast<size_t>(perm[static_cast<size_t>(r)]) * C + c];
  VisibleLatents vis2;
  vis2.positions = {6, 1, 10, 4};
  vis2.latents = constant({4, C}, shuffled);
  Tensor permuted = decode(vis2, plan, dec);
  for (size_t i = 0; i < static_cast<size_t>(base.numel()); ++i)
    CHECK(base.data()[i] == doctest::Approx(permuted.data()[i]).epsilon(1e-9));
}

TEST_CASE("encoder stack forward is finite at random init on desk shapes") {
  Rng rng(213);
  ParamStore ps;
  const int C = 32;
  EncoderStack enc = init_encoder_stack(ps, "enc", 4, C, 4, rng);
  Tensor x = constant({128, C}, oracle::random_vec(rng, static_cast<size_t>(128) * C));
  Tensor y = encoder_forward(x, enc);
  for (auto v : y.data()) CHECK(std::isfinite(v));
}
