#include "hola/frontend.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numeric>
#include <string>

namespace hola {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLogFloor = 1e-10;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace

void FrontendConfig::validate() const {
  if (frames_sampled < 1 || frame_h < 1 || frame_w < 1 || channels < 1)
    throw ConfigError("frontend: frame geometry must be positive");
  if (cube_t < 1 || frames_sampled % cube_t != 0)
    throw ConfigError("frontend: frames_sampled must be divisible by cube_t");
  if (cube_p < 1 || frame_h % cube_p != 0 || frame_w % cube_p != 0)
    throw ConfigError("frontend: frame size must be divisible by cube_p");
  if (mfcc_coeffs < 1 || mfcc_coeffs > mel_filters)
    throw ConfigError("frontend: mfcc_coeffs must lie in [1, mel_filters]");
  if (fft_size < 2 || (fft_size & (fft_size - 1)) != 0)
    throw ConfigError("frontend: fft_size must be a power of two");
  if (hop < 1) throw ConfigError("frontend: hop must be positive");
  if (segments < 1) throw ConfigError("frontend: segments must be positive");
  if (embed_dim < 2 || embed_dim % 2 != 0)
    throw ConfigError("frontend: embed_dim must be even and >= 2");
  if (sample_rate < 1) throw ConfigError("frontend: sample_rate must be positive");
}

VideoVolume sample_frames(const RawClip& clip, int n) {
  if (clip.t_raw < 1 || clip.frames.empty())
    throw DataError("sample_frames: clip has no frames");
  if (n < 1) throw ConfigError("sample_frames: n must be >= 1");
  const std::size_t frame_bytes = static_cast<std::size_t>(clip.height) *
                                  clip.width * clip.channels;
  VideoVolume out;
  out.t = n;
  out.height = clip.height;
  out.width = clip.width;
  out.channels = clip.channels;
  out.data.resize(static_cast<std::size_t>(n) * frame_bytes);
  for (int i = 0; i < n; ++i) {
    std::int64_t idx = 0;
    if (clip.t_raw > 1 && n > 1)
      idx = std::llround(static_cast<double>(i) * (clip.t_raw - 1) / (n - 1));
    std::copy_n(clip.frames.data() + static_cast<std::size_t>(idx) * frame_bytes,
                frame_bytes, out.data.data() + static_cast<std::size_t>(i) * frame_bytes);
  }
  return out;
}

MfccFeature compute_mfcc(const std::vector<float>& waveform,
                         const FrontendConfig& cfg) {
  cfg.validate();
  const int N = cfg.fft_size;
  if (static_cast<int>(waveform.size()) < N)
    throw DataError("compute_mfcc: waveform shorter than one analysis frame (" +
                    std::to_string(waveform.size()) + " < " + std::to_string(N) +
                    " samples)");
  const int n_frames = 1 + (static_cast<int>(waveform.size()) - N) / cfg.hop;
  if (n_frames < cfg.segments)
    throw DataError("compute_mfcc: waveform too short to fill " +
                    std::to_string(cfg.segments) + " segments");

  // Periodic Hann window.
  std::vector<double> window(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k)
    window[static_cast<std::size_t>(k)] = 0.5 - 0.5 * std::cos(2.0 * kPi * k / N);

  // Triangular HTK-mel filterbank over the one-sided spectrum.
  const int n_bins = N / 2 + 1;
  const double mel_hi = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> mel_points(static_cast<std::size_t>(cfg.mel_filters) + 2);
  for (int m = 0; m < cfg.mel_filters + 2; ++m)
    mel_points[static_cast<std::size_t>(m)] =
        mel_to_hz(mel_hi * m / (cfg.mel_filters + 1));
  std::vector<double> filterbank(
      static_cast<std::size_t>(cfg.mel_filters) * n_bins, 0.0);
  for (int m = 0; m < cfg.mel_filters; ++m) {
    const double lo = mel_points[static_cast<std::size_t>(m)];
    const double mid = mel_points[static_cast<std::size_t>(m) + 1];
    const double hi = mel_points[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / N;
      double wgt = 0.0;
      if (f >= lo && f <= mid && mid > lo) wgt = (f - lo) / (mid - lo);
      else if (f > mid && f <= hi && hi > mid) wgt = (hi - f) / (hi - mid);
      filterbank[static_cast<std::size_t>(m) * n_bins + k] = wgt;
    }
  }

  // Orthonormal DCT-II basis, first mfcc_coeffs rows.
  const int M = cfg.mel_filters;
  std::vector<double> dct(static_cast<std::size_t>(cfg.mfcc_coeffs) * M);
  for (int j = 0; j < cfg.mfcc_coeffs; ++j) {
    const double s = j == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
    for (int m = 0; m < M; ++m)
      dct[static_cast<std::size_t>(j) * M + m] =
          s * std::cos(kPi * j * (2 * m + 1) / (2.0 * M));
  }

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(N));
  std::vector<std::complex<double>> spectrum;
  std::vector<double> coeffs(
      static_cast<std::size_t>(n_frames) * cfg.mfcc_coeffs);
  std::vector<double> mel_energy(static_cast<std::size_t>(M));
  for (int t = 0; t < n_frames; ++t) {
    for (int k = 0; k < N; ++k)
      frame[static_cast<std::size_t>(k)] =
          static_cast<double>(waveform[static_cast<std::size_t>(t) * cfg.hop + k]) *
          window[static_cast<std::size_t>(k)];
    fft.fwd(spectrum, frame);
    for (int m = 0; m < M; ++m) {
      double acc = 0.0;
      const double* fb = filterbank.data() + static_cast<std::size_t>(m) * n_bins;
      for (int k = 0; k < n_bins; ++k) acc += fb[k] * std::norm(spectrum[static_cast<std::size_t>(k)]);
      mel_energy[static_cast<std::size_t>(m)] = std::log(acc + kLogFloor);
    }
    for (int j = 0; j < cfg.mfcc_coeffs; ++j) {
      double acc = 0.0;
      const double* row = dct.data() + static_cast<std::size_t>(j) * M;
      for (int m = 0; m < M; ++m) acc += row[m] * mel_energy[static_cast<std::size_t>(m)];
      coeffs[static_cast<std::size_t>(t) * cfg.mfcc_coeffs + j] = acc;
    }
  }

  // Mean over equal time slices of frames.
  MfccFeature out;
  out.t_seg = cfg.segments;
  out.n_coeffs = cfg.mfcc_coeffs;
  out.values.assign(static_cast<std::size_t>(cfg.segments) * cfg.mfcc_coeffs, 0.0);
  for (int s = 0; s < cfg.segments; ++s) {
    const int begin = static_cast<int>(static_cast<std::int64_t>(s) * n_frames / cfg.segments);
    const int end = static_cast<int>(static_cast<std::int64_t>(s + 1) * n_frames / cfg.segments);
    for (int t = begin; t < end; ++t)
      for (int j = 0; j < cfg.mfcc_coeffs; ++j)
        out.values[static_cast<std::size_t>(s) * cfg.mfcc_coeffs + j] +=
            coeffs[static_cast<std::size_t>(t) * cfg.mfcc_coeffs + j];
    for (int j = 0; j < cfg.mfcc_coeffs; ++j)
      out.values[static_cast<std::size_t>(s) * cfg.mfcc_coeffs + j] /= (end - begin);
  }
  for (double v : out.values)
    if (!std::isfinite(v)) throw NumericError("compute_mfcc: non-finite output");
  return out;
}

Tensor cube_patches(const VideoVolume& video, int cube_t, int patch) {
  if (cube_t < 1 || patch < 1 || video.t % cube_t != 0 ||
      video.height % patch != 0 || video.width % patch != 0)
    throw ConfigError("cube_patches: volume " + std::to_string(video.t) + "x" +
                      std::to_string(video.height) + "x" +
                      std::to_string(video.width) +
                      " not divisible by cube " + std::to_string(cube_t) + "x" +
                      std::to_string(patch) + "x" + std::to_string(patch));
  const int Tg = video.t / cube_t, Hg = video.height / patch,
            Wg = video.width / patch;
  const int dim = cube_t * patch * patch * video.channels;
  const int L = Tg * Hg * Wg;
  std::vector<double> data(static_cast<std::size_t>(L) * dim);
  const std::size_t row_stride = static_cast<std::size_t>(video.width) * video.channels;
  const std::size_t frame_stride = static_cast<std::size_t>(video.height) * row_stride;
  std::size_t out = 0;
  for (int tg = 0; tg < Tg; ++tg)
    for (int hg = 0; hg < Hg; ++hg)
      for (int wg = 0; wg < Wg; ++wg)
        for (int dt = 0; dt < cube_t; ++dt)
          for (int dh = 0; dh < patch; ++dh)
            for (int dw = 0; dw < patch; ++dw)
              for (int ch = 0; ch < video.channels; ++ch) {
                const std::size_t src =
                    static_cast<std::size_t>(tg * cube_t + dt) * frame_stride +
                    static_cast<std::size_t>(hg * patch + dh) * row_stride +
                    static_cast<std::size_t>(wg * patch + dw) * video.channels + ch;
                data[out++] = static_cast<double>(video.data[src]) / 255.0;
              }
  return constant({L, dim}, std::move(data));
}

TokenSequence cube_embed(const VideoVolume& video, const Tensor& w,
                         const Tensor& b, int cube_t, int patch) {
  Tensor patches = cube_patches(video, cube_t, patch);
  TokenSequence seq;
  seq.tokens = linear(patches, w, b);
  seq.modality = Modality::video;
  seq.grid = Grid3{video.t / cube_t, video.height / patch, video.width / patch};
  seq.positions.resize(static_cast<std::size_t>(seq.grid.total()));
  std::iota(seq.positions.begin(), seq.positions.end(), 0);
  return seq;
}

Tensor mfcc_rows(const MfccFeature& mfcc) {
  return constant({mfcc.t_seg, mfcc.n_coeffs}, mfcc.values);
}

TokenSequence spectrogram_embed(const MfccFeature& mfcc, const Tensor& w,
                                const Tensor& b) {
  TokenSequence seq;
  seq.tokens = linear(mfcc_rows(mfcc), w, b);
  seq.modality = Modality::audio;
  seq.grid = Grid3{mfcc.t_seg, 1, 1};
  seq.positions.resize(static_cast<std::size_t>(mfcc.t_seg));
  std::iota(seq.positions.begin(), seq.positions.end(), 0);
  return seq;
}

Tensor positional_table(int length, int dim) {
  if (length < 1 || dim < 2 || dim % 2 != 0)
    throw ConfigError("positional_table: need length >= 1 and even dim >= 2");
  std::vector<double> data(static_cast<std::size_t>(length) * dim);
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < dim / 2; ++i) {
      const double rate = std::pow(10000.0, 2.0 * i / dim);
      data[static_cast<std::size_t>(pos) * dim + 2 * i] = std::sin(pos / rate);
      data[static_cast<std::size_t>(pos) * dim + 2 * i + 1] = std::cos(pos / rate);
    }
  return constant({length, dim}, std::move(data));
}

TokenSequence add_positional(const TokenSequence& seq) {
  const int C = seq.tokens.dim(1);
  if (seq.positions.size() != static_cast<std::size_t>(seq.tokens.dim(0)))
    throw ShapeError("add_positional: position count does not match tokens");
  int max_pos = 0;
  for (int p : seq.positions) max_pos = std::max(max_pos, p);
  Tensor table = positional_table(max_pos + 1, C);
  TokenSequence out = seq;
  out.tokens = add(seq.tokens, gather_rows(table, seq.positions));
  return out;
}

}  // namespace hola
