#pragma once

#include <cstdint>
#include <vector>

#include "hola/errors.hpp"
#include "hola/masking.hpp"
#include "hola/tensor.hpp"

namespace hola {

// One uncompressed audio-visual clip, as stored in the clip container.
struct RawClip {
  int t_raw = 0;
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<std::uint8_t> frames;  // t * h * w * c, row-major
  std::vector<float> waveform;       // mono, values in [-1, 1]
  int sample_rate = 16000;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(waveform.size()) / sample_rate
                           : 0.0;
  }
};

struct VideoVolume {
  int t = 0;
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;
};

struct MfccFeature {
  int t_seg = 0;
  int n_coeffs = 0;
  std::vector<double> values;  // t_seg x n_coeffs, row-major
};

// Embedded token sequence with explicit positions and originating grid.
// Position i of a video token maps to grid cell (t, h, w) in row-major order;
// audio tokens use grid (t_seg, 1, 1). Mask layouts share this ordering.
struct TokenSequence {
  Tensor tokens;  // [L x C]
  std::vector<int> positions;
  Modality modality = Modality::video;
  Grid3 grid;
};

struct FrontendConfig {
  int frames_sampled = 16;
  int frame_h = 32;   // desk-scale; paper-scale geometry is configurable
  int frame_w = 32;
  int channels = 1;
  int cube_t = 2;
  int cube_p = 8;
  int mfcc_coeffs = 32;
  int mel_filters = 64;
  int fft_size = 512;
  int hop = 256;
  int segments = 16;
  int embed_dim = 32;
  int sample_rate = 16000;

  int video_tokens() const {
    return (frames_sampled / cube_t) * (frame_h / cube_p) * (frame_w / cube_p);
  }
  int audio_tokens() const { return segments; }
  int cube_dim() const { return cube_t * cube_p * cube_p * channels; }
  Grid3 video_grid() const {
    return Grid3{frames_sampled / cube_t, frame_h / cube_p, frame_w / cube_p};
  }

  void validate() const;
};

// Uniform frame selection: index i -> round(i * (T_raw - 1) / (n - 1)).
// Single-frame clips repeat their frame.
VideoVolume sample_frames(const RawClip& clip, int n);

// Hann window -> power spectrum -> HTK-mel triangular filterbank ->
// log(. + 1e-10) -> orthonormal DCT-II keeping `mfcc_coeffs` coefficients ->
// mean over `segments` equal time slices of frames.
MfccFeature compute_mfcc(const std::vector<float>& waveform,
                         const FrontendConfig& cfg);

// Flattened cube contents as a constant [L x cube_dim] matrix; pixel values
// are scaled to [0, 1]. Row k holds cube k in (t, h, w) row-major grid order,
// cube interior flattened as (dt, dh, dw, channel).
Tensor cube_patches(const VideoVolume& video, int cube_t, int patch);

// Linear projection of each cube to the embedding width.
TokenSequence cube_embed(const VideoVolume& video, const Tensor& w,
                         const Tensor& b, int cube_t, int patch);

Tensor mfcc_rows(const MfccFeature& mfcc);  // constant [t_seg x n_coeffs]

// Each MFCC segment row is one audio token (full-row patching).
TokenSequence spectrogram_embed(const MfccFeature& mfcc, const Tensor& w,
                                const Tensor& b);

// Fixed sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/C)),
// PE[pos, 2i+1] = cos(pos / 10000^(2i/C)).
Tensor positional_table(int length, int dim);

// Adds the table entries selected by each token's position index. Applying
// twice adds the table twice.
TokenSequence add_positional(const TokenSequence& seq);

}  // namespace hola
