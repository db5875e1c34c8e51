#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hola/errors.hpp"
#include "hola/frontend.hpp"
#include "hola/optim.hpp"

namespace hola {

inline constexpr std::uint32_t kClipFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

// ---- clip container -----------------------------------------------------------
//
// Binary layout, little-endian:
//   "HAVC" | u32 version | u32 t_raw | u32 height | u32 width | u32 channels |
//   u8 frame payload (t*h*w*c) | u64 waveform sample count | f32 payload |
//   u32 sample_rate
// Loaders reject bad magic, unknown versions, truncation, and trailing bytes
// with a FormatError carrying the offending byte offset.

void save_clip(const RawClip& clip, const std::string& path);
RawClip load_clip(const std::string& path);

// ---- key-value configuration -----------------------------------------------------

// Flat `key = value` text configuration ('#' starts a comment). Unknown keys
// are preserved; typed getters parse on demand.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Sorted `key = value` lines; the basis for hashing and snapshots.
  std::string canonical() const;
  std::uint64_t hash() const;  // FNV-1a 64 over canonical()

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// ---- manifest --------------------------------------------------------------------

// One dataset record. `hidden_label` is generator-side truth for oracle tests;
// it is written to a separate hidden-labels file, never to the manifest.
struct SampleRecord {
  std::string id;
  std::string clip_path;  // relative to the dataset directory
  std::string split;      // train | val | pool
  std::string label;      // "real" | "fake"; empty for unlabeled records
  std::string manipulation;  // optional fake mode
  std::string hidden_label;  // generator-only
};

std::string manifest_line(const SampleRecord& rec);
SampleRecord parse_manifest_line(const std::string& line);
void write_manifest(const std::string& path,
                    const std::vector<SampleRecord>& records);
std::vector<SampleRecord> load_manifest(const std::string& path);

// Hidden oracle file: one {id, hidden_label, manipulation} record per line.
void write_hidden_labels(const std::string& path,
                         const std::vector<SampleRecord>& records);
std::map<std::string, std::pair<std::string, std::string>> load_hidden_labels(
    const std::string& path);

// ---- checkpoint container -----------------------------------------------------------
//
//   "HCKP" | u32 version | u32 stage length + bytes | u64 config length +
//   bytes | u64 tensor count | per tensor: u32 name length + bytes, u32 rank,
//   u64 dims..., f64 payload | u32 CRC-32 of everything before it.

struct NamedTensorData {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

struct CheckpointData {
  std::string stage;  // "pretrain" | "finetune"
  std::string config_text;
  std::vector<NamedTensorData> tensors;

  const NamedTensorData* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const std::string& stage,
                     const std::string& config_text, const ParamStore& store);
CheckpointData load_checkpoint(const std::string& path);

// Copies every store entry's payload from the checkpoint (by name, shapes
// must match). With a prefix list, only entries under those prefixes load.
void apply_checkpoint(ParamStore& store, const CheckpointData& ckpt,
                      const std::vector<std::string>& prefixes = {});

// ---- run reproducibility header --------------------------------------------------------

// Every CLI run drops `run_header.json` into its output directory: seed,
// canonical config hash, and container format versions.
void write_run_header(const std::string& out_dir, const Config& cfg,
                      std::uint64_t seed, const std::string& command);

std::uint64_t fnv1a64(const std::string& text);

}  // namespace hola
