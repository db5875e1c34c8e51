#include <cmath>
#include <vector>

#include "doctest.h"
#include "hola/frontend.hpp"
#include "hola/rng.hpp"
#include "oracles.hpp"

using namespace hola;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent MFCC reference: same contract (periodic Hann, HTK mel,
// log(.+1e-10), orthonormal DCT-II, equal-slice frame averaging) but built
// from a naive O(N^2) DFT and plain loops.
std::vector<double> mfcc_reference(const std::vector<float>& wave,
                                   const FrontendConfig& cfg) {
  const int N = cfg.fft_size;
  const int n_frames = 1 + (static_cast<int>(wave.size()) - N) / cfg.hop;
  const int bins = N / 2 + 1;
  auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };

  std::vector<double> points(static_cast<size_t>(cfg.mel_filters) + 2);
  for (int m = 0; m < cfg.mel_filters + 2; ++m)
    points[static_cast<size_t>(m)] =
        hz(mel(cfg.sample_rate / 2.0) * m / (cfg.mel_filters + 1));

  std::vector<double> per_frame(static_cast<size_t>(n_frames) * cfg.mfcc_coeffs);
  for (int t = 0; t < n_frames; ++t) {
    std::vector<double> x(static_cast<size_t>(N));
    for (int k = 0; k < N; ++k)
      x[static_cast<size_t>(k)] =
          wave[static_cast<size_t>(t) * cfg.hop + k] *
          (0.5 - 0.5 * std::cos(2.0 * kPi * k / N));
    std::vector<double> power(static_cast<size_t>(bins));
    for (int k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (int n = 0; n < N; ++n) {
        re += x[static_cast<size_t>(n)] * std::cos(2.0 * kPi * k * n / N);
        im -= x[static_cast<size_t>(n)] * std::sin(2.0 * kPi * k * n / N);
      }
      power[static_cast<size_t>(k)] = re * re + im * im;
    }
    std::vector<double> logmel(static_cast<size_t>(cfg.mel_filters));
    for (int m = 0; m < cfg.mel_filters; ++m) {
      double acc = 0.0;
      for (int k = 0; k < bins; ++k) {
        const double f = static_cast<double>(k) * cfg.sample_rate / N;
        double w = 0.0;
        if (f >= points[static_cast<size_t>(m)] && f <= points[static_cast<size_t>(m) + 1])
          w = (f - points[static_cast<size_t>(m)]) /
              (points[static_cast<size_t>(m) + 1] - points[static_cast<size_t>(m)]);
        else if (f > points[static_cast<size_t>(m) + 1] && f <= points[static_cast<size_t>(m) + 2])
          w = (points[static_cast<size_t>(m) + 2] - f) /
              (points[static_cast<size_t>(m) + 2] - points[static_cast<size_t>(m) + 1]);
        acc += w * power[static_cast<size_t>(k)];
      }
      logmel[static_cast<size_t>(m)] = std::log(acc + 1e-10);
    }
    for (int j = 0; j < cfg.mfcc_coeffs; ++j) {
      const double s = j == 0 ? std::sqrt(1.0 / cfg.mel_filters)
                              : std::sqrt(2.0 / cfg.mel_filters);
      double acc = 0.0;
      for (int m = 0; m < cfg.mel_filters; ++m)
        acc += logmel[static_cast<size_t>(m)] *
               std::cos(kPi * j * (2 * m + 1) / (2.0 * cfg.mel_filters));
      per_frame[static_cast<size_t>(t) * cfg.mfcc_coeffs + j] = s * acc;
    }
  }

  std::vector<double> seg(static_cast<size_t>(cfg.segments) * cfg.mfcc_coeffs, 0.0);
  for (int s = 0; s < cfg.segments; ++s) {
    const int b = s * n_frames / cfg.segments;
    const int e = (s + 1) * n_frames / cfg.segments;
    for (int t = b; t < e; ++t)
      for (int j = 0; j < cfg.mfcc_coeffs; ++j)
        seg[static_cast<size_t>(s) * cfg.mfcc_coeffs + j] +=
            per_frame[static_cast<size_t>(t) * cfg.mfcc_coeffs + j];
    for (int j = 0; j < cfg.mfcc_coeffs; ++j)
      seg[static_cast<size_t>(s) * cfg.mfcc_coeffs + j] /= (e - b);
  }
  return seg;
}

std::vector<float> tone(double freq, double seconds, int sr, double amp = 0.5) {
  std::vector<float> w(static_cast<size_t>(seconds * sr));
  for (size_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<float>(amp * std::sin(2.0 * kPi * freq * static_cast<double>(i) / sr));
  return w;
}

RawClip tiny_clip(int t_raw, int h, int w) {
  RawClip clip;
  clip.t_raw = t_raw;
  clip.height = h;
  clip.width = w;
  clip.channels = 1;
  clip.frames.resize(static_cast<size_t>(t_raw) * h * w);
  for (size_t i = 0; i < clip.frames.size(); ++i)
    clip.frames[i] = static_cast<std::uint8_t>((i * 37) % 251);
  clip.waveform = tone(440.0, 2.0, 16000);
  return clip;
}

}  // namespace

TEST_CASE("sample_frames index selection") {
  // T_raw == n: identity.
  RawClip c16 = tiny_clip(16, 4, 4);
  VideoVolume v = sample_frames(c16, 16);
  CHECK(v.t == 16);
  CHECK(v.data == c16.frames);

  // T_raw = 32, n = 16: indices follow round(i * 31 / 15) evaluated directly.
  RawClip c32 = tiny_clip(32, 4, 4);
  VideoVolume v2 = sample_frames(c32, 16);
  const size_t fb = 16;
  for (int i = 0; i < 16; ++i) {
    const int expect = static_cast<int>(std::llround(i * 31.0 / 15.0));
    for (size_t k = 0; k < fb; ++k)
      CHECK(v2.data[static_cast<size_t>(i) * fb + k] ==
            c32.frames[static_cast<size_t>(expect) * fb + k]);
  }

  // Single-frame clip repeats.
  RawClip c1 = tiny_clip(1, 4, 4);
  VideoVolume v3 = sample_frames(c1, 16);
  for (int i = 0; i < 16; ++i)
    for (size_t k = 0; k < fb; ++k)
      CHECK(v3.data[static_cast<size_t>(i) * fb + k] == c1.frames[k]);

  RawClip empty;
  CHECK_THROWS_AS(sample_frames(empty, 16), DataError);
}

TEST_CASE("mfcc of digital silence has identical segment rows") {
  FrontendConfig cfg;
  std::vector<float> silence(32000, 0.0f);
  MfccFeature m = compute_mfcc(silence, cfg);
  CHECK(m.t_seg == 16);
  CHECK(m.n_coeffs == 32);
  for (int s = 1; s < 16; ++s)
    for (int j = 0; j < 32; ++j)
      CHECK(m.values[static_cast<size_t>(s) * 32 + j] ==
            doctest::Approx(m.values[static_cast<size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("mfcc of a 440 Hz tone matches the independent reference") {
  FrontendConfig cfg;
  auto wave = tone(440.0, 2.0, cfg.sample_rate);
  MfccFeature m = compute_mfcc(wave, cfg);
  auto expect = mfcc_reference(wave, cfg);
  REQUIRE(m.values.size() == expect.size());
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(std::abs(m.values[i] - expect[i]) < 1e-6);
}

TEST_CASE("mfcc of a hop-periodic tone is unchanged by self-concatenation") {
  FrontendConfig cfg;
  // 250 Hz at 16 kHz: 64-sample period divides the 256-sample hop, so every
  // analysis frame sees the same waveform, including across the seam.
  auto wave = tone(250.0, 2.0, cfg.sample_rate);
  std::vector<float> doubled(wave);
  doubled.insert(doubled.end(), wave.begin(), wave.end());
  MfccFeature a = compute_mfcc(wave, cfg);
  MfccFeature b = compute_mfcc(doubled, cfg);
  for (size_t i = 0; i < a.values.size(); ++i)
    CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-9));
}

TEST_CASE("mfcc is bit-deterministic") {
  FrontendConfig cfg;
  auto wave = tone(333.0, 2.0, cfg.sample_rate);
  MfccFeature a = compute_mfcc(wave, cfg);
  MfccFeature b = compute_mfcc(wave, cfg);
  CHECK(a.values == b.values);
}

TEST_CASE("mfcc rejects too-short waveforms") {
  FrontendConfig cfg;
  CHECK_THROWS_AS(compute_mfcc(std::vector<float>(100, 0.1f), cfg), DataError);
}

TEST_CASE("cube embedding token counts and loop oracle") {
  FrontendConfig cfg;
  CHECK(cfg.video_tokens() == 128);
  CHECK(cfg.audio_tokens() == 16);

  RawClip clip = tiny_clip(16, 32, 32);
  VideoVolume vol = sample_frames(clip, 16);
  const int dim = cfg.cube_dim();
  const int C = 8;
  Rng rng(55);
  Tensor w = constant({dim, C}, oracle::random_vec(rng, static_cast<size_t>(dim) * C));
  Tensor b = constant({C}, oracle::random_vec(rng, C));
  TokenSequence seq = cube_embed(vol, w, b, cfg.cube_t, cfg.cube_p);
  CHECK(seq.tokens.dim(0) == 128);
  CHECK(seq.tokens.dim(1) == C);
  CHECK(seq.grid.t == 8);
  CHECK(seq.grid.h == 4);
  CHECK(seq.grid.w == 4);

  // Token k must equal projection * flattened cube k (plain loop re-gather).
  for (int token : {0, 17, 127}) {
    const int tg = token / 16, hg = (token / 4) % 4, wg = token % 4;
    std::vector<double> cube;
    for (int dt = 0; dt < 2; ++dt)
      for (int dh = 0; dh < 8; ++dh)
        for (int dw = 0; dw < 8; ++dw) {
          const size_t src = static_cast<size_t>(tg * 2 + dt) * 32 * 32 +
                             static_cast<size_t>(hg * 8 + dh) * 32 +
                             static_cast<size_t>(wg * 8 + dw);
          cube.push_back(static_cast<double>(vol.data[src]) / 255.0);
        }
    for (int c = 0; c < C; ++c) {
      double acc = b.data()[static_cast<size_t>(c)];
      for (int d = 0; d < dim; ++d)
        acc += cube[static_cast<size_t>(d)] * w.data()[static_cast<size_t>(d) * C + c];
      CHECK(std::abs(seq.tokens.data()[static_cast<size_t>(token) * C + c] - acc) < 1e-12);
    }
  }

  // Zero video with zero bias gives all-zero tokens.
  VideoVolume zero_vol = vol;
  std::fill(zero_vol.data.begin(), zero_vol.data.end(), std::uint8_t{0});
  TokenSequence zseq = cube_embed(zero_vol, w, zeros({C}), cfg.cube_t, cfg.cube_p);
  for (auto v : zseq.tokens.data()) CHECK(v == 0.0);

  VideoVolume bad = vol;
  bad.t = 15;
  bad.data.resize(static_cast<size_t>(15) * 32 * 32);
  CHECK_THROWS_AS(cube_embed(bad, w, b, cfg.cube_t, cfg.cube_p), ConfigError);
}

TEST_CASE("spectrogram embedding: identity projection and linearity") {
  FrontendConfig cfg;
  MfccFeature m;
  m.t_seg = 16;
  m.n_coeffs = 32;
  Rng rng(77);
  m.values = oracle::random_vec(rng, 16 * 32);

  // Identity projection (C == F) reproduces the MFCC rows.
  std::vector<double> eye(32 * 32, 0.0);
  for (int i = 0; i < 32; ++i) eye[static_cast<size_t>(i) * 32 + i] = 1.0;
  TokenSequence seq = spectrogram_embed(m, constant({32, 32}, eye), zeros({32}));
  CHECK(seq.tokens.dim(0) == 16);
  for (size_t i = 0; i < m.values.size(); ++i)
    CHECK(seq.tokens.data()[i] == doctest::Approx(m.values[i]));

  // Linearity: embed(2m) - 2*embed(m) == -bias, elementwise exactly.
  const int C = 8;
  Tensor w = constant({32, C}, oracle::random_vec(rng, 32 * C));
  Tensor b = constant({C}, oracle::random_vec(rng, C));
  MfccFeature m2 = m;
  for (auto& v : m2.values) v *= 2.0;
  TokenSequence e1 = spectrogram_embed(m, w, b);
  TokenSequence e2 = spectrogram_embed(m2, w, b);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < C; ++c) {
      const double lhs = e2.tokens.data()[static_cast<size_t>(r) * C + c] -
                         2.0 * e1.tokens.data()[static_cast<size_t>(r) * C + c];
      CHECK(lhs == doctest::Approx(-b.data()[static_cast<size_t>(c)]).epsilon(1e-12));
    }
}

TEST_CASE("positional encoding table and addition") {
  // Closed form at pos=3, dim index pair (4,5) of an 8-wide table.
  Tensor table = positional_table(8, 8);
  const double rate = std::pow(10000.0, 2.0 * 2 / 8.0);
  CHECK(table.data()[3 * 8 + 4] == doctest::Approx(std::sin(3.0 / rate)));
  CHECK(table.data()[3 * 8 + 5] == doctest::Approx(std::cos(3.0 / rate)));

  // Zero tokens: output equals the table itself.
  TokenSequence seq;
  seq.tokens = zeros({8, 8});
  seq.positions = {0, 1, 2, 3, 4, 5, 6, 7};
  seq.modality = Modality::audio;
  seq.grid = Grid3{8, 1, 1};
  TokenSequence out = add_positional(seq);
  for (int i = 0; i < 64; ++i)
    CHECK(out.tokens.data()[static_cast<size_t>(i)] ==
          doctest::Approx(table.data()[static_cast<size_t>(i)]));

  // Applying twice adds the table twice (documented non-idempotence).
  TokenSequence twice = add_positional(out);
  for (int i = 0; i < 64; ++i)
    CHECK(twice.tokens.data()[static_cast<size_t>(i)] ==
          doctest::Approx(2.0 * table.data()[static_cast<size_t>(i)]));
}
