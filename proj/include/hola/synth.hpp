#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hola/frontend.hpp"
#include "hola/io.hpp"

namespace hola {

// Synthetic audio-visual generator. Real samples couple the modalities
// through one latent amplitude envelope: it drives both the loudness of a
// tone and the area of a moving bright blob, frame-aligned. Fake samples
// keep the video and corrupt the audio so the coupling breaks.
struct SynthConfig {
  int n_real = 32;
  int n_fake = 32;
  int t_raw = 32;
  int height = 32;
  int width = 32;
  int channels = 1;
  double seconds = 2.0;
  int sample_rate = 16000;
  double train_frac = 1.0 / 3.0;
  double val_frac = 1.0 / 3.0;  // remainder goes to the pool split
  // Mix over fake modes: desync, replacement, insertion, deletion.
  double mix_desync = 0.4;
  double mix_replacement = 0.3;
  double mix_insertion = 0.15;
  double mix_deletion = 0.15;
  std::uint64_t seed = 1234;

  void validate() const;
};

// Generates clips under <out_dir>/clips/, a public manifest.jsonl (labels on
// train/val records only), and hidden_labels.jsonl carrying the generator
// truth for every record. Byte-identical for a fixed config.
std::vector<SampleRecord> gen_synthetic(const SynthConfig& cfg,
                                        const std::string& out_dir);

// Series used by the coupling oracles: per-frame blob mass (sum of
// pixel/255) and per-window waveform RMS, both of length t_raw.
std::vector<double> blob_area_series(const RawClip& clip);
std::vector<double> audio_rms_series(const RawClip& clip, int windows);

}  // namespace hola
