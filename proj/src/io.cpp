#include "hola/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace hola {

namespace {

using nlohmann::json;

// ---- little-endian byte packing ----

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

// Cursor-style reader that reports the byte offset of any failure.
class Reader {
 public:
  Reader(std::string bytes, std::string what)
      : bytes_(std::move(bytes)), what_(std::move(what)) {}

  std::uint64_t offset() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }

  void need(std::uint64_t n, const char* field) {
    if (remaining() < n)
      throw FormatError(what_ + ": truncated while reading " + field + ", " +
                            std::to_string(n - remaining()) + " bytes missing",
                        pos_);
  }

  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  double f64(const char* field) { return std::bit_cast<double>(u64(field)); }

  std::string raw(std::uint64_t n, const char* field) {
    need(n, field);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_end() {
    if (remaining() != 0)
      throw FormatError(what_ + ": " + std::to_string(remaining()) +
                            " unexpected trailing bytes",
                        pos_);
  }

  const std::string& bytes() const { return bytes_; }
  std::uint64_t pos() const { return pos_; }

 private:
  std::string bytes_;
  std::string what_;
  std::uint64_t pos_ = 0;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path + "'");
}

// CRC-32 (IEEE), table-driven.
std::uint32_t crc32(const char* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i)
    crc = table[(crc ^ static_cast<unsigned char>(data[i])) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

constexpr char kClipMagic[4] = {'H', 'A', 'V', 'C'};
constexpr char kCkptMagic[4] = {'H', 'C', 'K', 'P'};

}  // namespace

// ---- clip container ------------------------------------------------------------------

void save_clip(const RawClip& clip, const std::string& path) {
  if (clip.t_raw < 1 || clip.height < 1 || clip.width < 1 || clip.channels < 1)
    throw ConfigError("save_clip: empty geometry");
  const std::size_t expect_frames = static_cast<std::size_t>(clip.t_raw) *
                                    clip.height * clip.width * clip.channels;
  if (clip.frames.size() != expect_frames)
    throw ShapeError("save_clip: frame payload size mismatch");
  std::string out;
  out.reserve(24 + clip.frames.size() + 12 + 4 * clip.waveform.size());
  out.append(kClipMagic, 4);
  put_u32(out, kClipFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(clip.t_raw));
  put_u32(out, static_cast<std::uint32_t>(clip.height));
  put_u32(out, static_cast<std::uint32_t>(clip.width));
  put_u32(out, static_cast<std::uint32_t>(clip.channels));
  out.append(reinterpret_cast<const char*>(clip.frames.data()), clip.frames.size());
  put_u64(out, clip.waveform.size());
  for (float v : clip.waveform) put_f32(out, v);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  write_file(path, out);
}

RawClip load_clip(const std::string& path) {
  Reader r(read_file(path), "clip '" + path + "'");
  const std::string magic = r.raw(4, "magic");
  if (std::memcmp(magic.data(), kClipMagic, 4) != 0)
    throw FormatError("clip '" + path + "': bad magic bytes", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kClipFormatVersion)
    throw FormatError("clip '" + path + "': unsupported format version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kClipFormatVersion) + ")",
                      4);
  RawClip clip;
  clip.t_raw = static_cast<int>(r.u32("t_raw"));
  clip.height = static_cast<int>(r.u32("height"));
  clip.width = static_cast<int>(r.u32("width"));
  clip.channels = static_cast<int>(r.u32("channels"));
  if (clip.t_raw < 1 || clip.height < 1 || clip.width < 1 || clip.channels < 1)
    throw FormatError("clip '" + path + "': non-positive dimensions", 8);
  const std::uint64_t frame_bytes = static_cast<std::uint64_t>(clip.t_raw) *
                                    clip.height * clip.width * clip.channels;
  const std::string frames = r.raw(frame_bytes, "frame payload");
  clip.frames.assign(frames.begin(), frames.end());
  const std::uint64_t n_samples = r.u64("waveform length");
  clip.waveform.resize(n_samples);
  for (std::uint64_t i = 0; i < n_samples; ++i)
    clip.waveform[i] = r.f32("waveform payload");
  clip.sample_rate = static_cast<int>(r.u32("sample_rate"));
  r.expect_end();
  return clip;
}

// ---- configuration -------------------------------------------------------------------

Config Config::from_file(const std::string& path) {
  return from_string(read_file(path));
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r\n");
      const auto e = s.find_last_not_of(" \t\r\n");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

std::string Config::get_str(const std::string& key,
                            const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + it->second +
                      "' is not an integer");
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + it->second +
                      "' is not a number");
  }
}

std::uint64_t Config::get_u64(const std::string& key,
                              std::uint64_t fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + it->second +
                      "' is not an unsigned integer");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config key '" + key + "': '" + it->second +
                    "' is not a boolean");
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t Config::hash() const { return fnv1a64(canonical()); }

// ---- manifest -------------------------------------------------------------------------

std::string manifest_line(const SampleRecord& rec) {
  json j;
  j["id"] = rec.id;
  j["clip"] = rec.clip_path;
  j["split"] = rec.split;
  if (!rec.label.empty()) {
    j["label"] = rec.label;
    // Manipulation tags ride along only on labeled records; on unlabeled
    // pool rows they would leak the class.
    if (!rec.manipulation.empty()) j["manipulation"] = rec.manipulation;
  }
  return j.dump();
}

SampleRecord parse_manifest_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError("manifest: invalid record '" + line + "': " + e.what(),
                      e.byte);
  }
  SampleRecord rec;
  rec.id = j.at("id").get<std::string>();
  rec.clip_path = j.at("clip").get<std::string>();
  rec.split = j.at("split").get<std::string>();
  if (j.contains("label")) rec.label = j["label"].get<std::string>();
  if (j.contains("manipulation"))
    rec.manipulation = j["manipulation"].get<std::string>();
  return rec;
}

void write_manifest(const std::string& path,
                    const std::vector<SampleRecord>& records) {
  std::string out;
  for (const auto& rec : records) out += manifest_line(rec) + "\n";
  write_file(path, out);
}

std::vector<SampleRecord> load_manifest(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<SampleRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(parse_manifest_line(line));
  }
  return records;
}

void write_hidden_labels(const std::string& path,
                         const std::vector<SampleRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    json j;
    j["id"] = rec.id;
    j["hidden_label"] = rec.hidden_label;
    if (!rec.manipulation.empty()) j["manipulation"] = rec.manipulation;
    out += j.dump() + "\n";
  }
  write_file(path, out);
}

std::map<std::string, std::pair<std::string, std::string>> load_hidden_labels(
    const std::string& path) {
  std::istringstream in(read_file(path));
  std::map<std::string, std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    out[j.at("id").get<std::string>()] = {
        j.at("hidden_label").get<std::string>(),
        j.value("manipulation", std::string())};
  }
  return out;
}

// ---- checkpoint -----------------------------------------------------------------------

const NamedTensorData* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_checkpoint(const std::string& path, const std::string& stage,
                     const std::string& config_text, const ParamStore& store) {
  if (stage != "pretrain" && stage != "finetune")
    throw ConfigError("save_checkpoint: stage must be 'pretrain' or 'finetune'");
  std::string out;
  out.append(kCkptMagic, 4);
  put_u32(out, kCheckpointFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(stage.size()));
  out += stage;
  put_u64(out, config_text.size());
  out += config_text;
  put_u64(out, store.entries().size());
  for (const auto& entry : store.entries()) {
    put_u32(out, static_cast<std::uint32_t>(entry.name.size()));
    out += entry.name;
    const auto& shape = entry.tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : entry.tensor.data()) put_f64(out, v);
  }
  put_u32(out, crc32(out.data(), out.size()));
  write_file(path, out);
}

CheckpointData load_checkpoint(const std::string& path) {
  Reader r(read_file(path), "checkpoint '" + path + "'");
  if (r.bytes().size() < 4)
    throw FormatError("checkpoint '" + path + "': file too short for magic", 0);
  const std::string magic = r.raw(4, "magic");
  if (std::memcmp(magic.data(), kCkptMagic, 4) != 0)
    throw FormatError("checkpoint '" + path + "': bad magic bytes", 0);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointFormatVersion)
    throw FormatError("checkpoint '" + path + "': unsupported format version " +
                          std::to_string(version),
                      4);

  // Verify integrity before trusting any length fields further in.
  if (r.bytes().size() < 4)
    throw FormatError("checkpoint '" + path + "': missing checksum", r.pos());
  const std::size_t body = r.bytes().size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(
                  static_cast<unsigned char>(r.bytes()[body + i]))
              << (8 * i);
  if (crc32(r.bytes().data(), body) != stored)
    throw FormatError("checkpoint '" + path + "': checksum mismatch", body);

  CheckpointData ckpt;
  ckpt.stage = r.raw(r.u32("stage length"), "stage tag");
  ckpt.config_text = r.raw(r.u64("config length"), "config snapshot");
  const std::uint64_t count = r.u64("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensorData t;
    t.name = r.raw(r.u32("tensor name length"), "tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = r.u64("tensor dim");
      if (dim == 0 || dim > (1u << 30))
        throw FormatError("checkpoint '" + path + "': implausible dimension " +
                              std::to_string(dim),
                          r.pos() - 8);
      t.shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    t.data.resize(numel);
    for (std::uint64_t k = 0; k < numel; ++k) t.data[k] = r.f64("tensor payload");
    ckpt.tensors.push_back(std::move(t));
  }
  r.raw(4, "checksum");
  r.expect_end();
  return ckpt;
}

void apply_checkpoint(ParamStore& store, const CheckpointData& ckpt,
                      const std::vector<std::string>& prefixes) {
  auto wanted = [&](const std::string& name) {
    if (prefixes.empty()) return true;
    for (const auto& p : prefixes)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  };
  int applied = 0;
  for (const auto& entry : store.entries()) {
    if (!wanted(entry.name)) continue;
    const NamedTensorData* src = ckpt.find(entry.name);
    if (!src)
      throw ConfigError("checkpoint is missing tensor '" + entry.name + "'");
    if (src->shape != entry.tensor.shape())
      throw ConfigError("checkpoint tensor '" + entry.name + "' has shape " +
                        shape_str(src->shape) + ", model expects " +
                        shape_str(entry.tensor.shape()));
    Tensor t = entry.tensor;
    auto dst = t.mutable_data();
    std::copy(src->data.begin(), src->data.end(), dst.begin());
    ++applied;
  }
  if (applied == 0)
    throw ConfigError("apply_checkpoint: no tensors matched the given prefixes");
}

// ---- run header ---------------------------------------------------------------------------

void write_run_header(const std::string& out_dir, const Config& cfg,
                      std::uint64_t seed, const std::string& command) {
  std::filesystem::create_directories(out_dir);
  json j;
  j["command"] = command;
  j["seed"] = seed;
  std::ostringstream hash;
  hash << std::hex << cfg.hash();
  j["config_hash"] = hash.str();
  j["clip_format_version"] = kClipFormatVersion;
  j["checkpoint_format_version"] = kCheckpointFormatVersion;
  write_file(out_dir + "/run_header.json", j.dump(2) + "\n");
}

}  // namespace hola
