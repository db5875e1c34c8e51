#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "hola/io.hpp"
#include "hola/rng.hpp"
#include "hola/synth.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace hola;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

RawClip sample_clip(Rng& rng) {
  RawClip clip;
  clip.t_raw = 4;
  clip.height = 6;
  clip.width = 5;
  clip.channels = 1;
  clip.frames.resize(4 * 6 * 5);
  for (auto& b : clip.frames)
    b = static_cast<std::uint8_t>(rng.uniform_below(256));
  clip.waveform.resize(700);
  for (auto& v : clip.waveform) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  clip.sample_rate = 16000;
  return clip;
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = "test_tmp/" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("clip container round-trips bitwise") {
  Rng rng(401);
  const std::string dir = fresh_dir("clip");
  RawClip clip = sample_clip(rng);
  save_clip(clip, dir + "/a.clip");
  RawClip back = load_clip(dir + "/a.clip");
  CHECK(back.t_raw == clip.t_raw);
  CHECK(back.height == clip.height);
  CHECK(back.width == clip.width);
  CHECK(back.channels == clip.channels);
  CHECK(back.frames == clip.frames);
  CHECK(back.waveform == clip.waveform);  // float32 carried exactly
  CHECK(back.sample_rate == clip.sample_rate);

  save_clip(back, dir + "/b.clip");
  CHECK(slurp(dir + "/a.clip") == slurp(dir + "/b.clip"));
}

TEST_CASE("clip container rejects corruption with typed errors") {
  Rng rng(402);
  const std::string dir = fresh_dir("clip_bad");
  RawClip clip = sample_clip(rng);
  save_clip(clip, dir + "/ok.clip");
  const std::string bytes = slurp(dir + "/ok.clip");

  // Bad magic at offset 0.
  std::string bad = bytes;
  bad[0] = 'X';
  spit(dir + "/bad_magic.clip", bad);
  try {
    load_clip(dir + "/bad_magic.clip");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == 0);
  }

  // Version bump at offset 4.
  bad = bytes;
  bad[4] = 2;
  spit(dir + "/bad_version.clip", bad);
  try {
    load_clip(dir + "/bad_version.clip");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset == 4);
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  // Truncation: error names the number of missing bytes.
  bad = bytes.substr(0, bytes.size() - 10);
  spit(dir + "/short.clip", bad);
  try {
    load_clip(dir + "/short.clip");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("missing") != std::string::npos);
  }

  // Trailing garbage is rejected too.
  bad = bytes + "zz";
  spit(dir + "/long.clip", bad);
  CHECK_THROWS_AS(load_clip(dir + "/long.clip"), FormatError);
}

TEST_CASE("checkpoint round-trips bit-identically and rejects corruption") {
  Rng rng(403);
  const std::string dir = fresh_dir("ckpt");
  ParamStore store;
  store.add_trunc_normal("enc.w", {4, 6}, 0.02, rng);
  store.add_zeros("enc.b", {6});
  store.add_buffer("bn.running_mean", {3}, {0.25, -1.5, 3.75});

  save_checkpoint(dir + "/m.ckpt", "pretrain", "embed_dim = 8\n", store);
  CheckpointData ckpt = load_checkpoint(dir + "/m.ckpt");
  CHECK(ckpt.stage == "pretrain");
  CHECK(ckpt.config_text == "embed_dim = 8\n");
  REQUIRE(ckpt.tensors.size() == 3);
  for (const auto& entry : store.entries()) {
    const NamedTensorData* t = ckpt.find(entry.name);
    REQUIRE(t != nullptr);
    CHECK(t->shape == entry.tensor.shape());
    const auto d = entry.tensor.data();
    CHECK(std::vector<double>(d.begin(), d.end()) == t->data);  // bit-exact
  }

  // Re-saving the loaded state reproduces identical bytes.
  ParamStore store2;
  store2.add("enc.w", {4, 6}, ckpt.tensors[0].data);
  store2.add("enc.b", {6}, ckpt.tensors[1].data);
  store2.add_buffer("bn.running_mean", {3}, ckpt.tensors[2].data);
  save_checkpoint(dir + "/m2.ckpt", "pretrain", "embed_dim = 8\n", store2);
  CHECK(slurp(dir + "/m.ckpt") == slurp(dir + "/m2.ckpt"));

  // Flip one payload byte: checksum mismatch.
  std::string bytes = slurp(dir + "/m.ckpt");
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
  spit(dir + "/corrupt.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir + "/corrupt.ckpt"), FormatError);

  // Truncated file.
  spit(dir + "/short.ckpt", slurp(dir + "/m.ckpt").substr(0, 40));
  CHECK_THROWS_AS(load_checkpoint(dir + "/short.ckpt"), FormatError);

  // apply_checkpoint restores values and validates shapes.
  ParamStore store3;
  store3.add_zeros("enc.w", {4, 6});
  store3.add_zeros("enc.b", {6});
  store3.add_buffer("bn.running_mean", {3}, {0, 0, 0});
  apply_checkpoint(store3, ckpt);
  const auto w = store3.find("enc.w").data();
  const auto w0 = store.find("enc.w").data();
  for (size_t i = 0; i < w.size(); ++i) CHECK(w[i] == w0[i]);

  ParamStore mismatched;
  mismatched.add_zeros("enc.w", {4, 7});
  CHECK_THROWS_AS(apply_checkpoint(mismatched, ckpt), ConfigError);
}

TEST_CASE("manifest lines round-trip and hide generator fields") {
  SampleRecord rec;
  rec.id = "s0001";
  rec.clip_path = "clips/s0001.clip";
  rec.split = "train";
  rec.label = "fake";
  rec.manipulation = "desync";
  rec.hidden_label = "fake";

  SampleRecord back = parse_manifest_line(manifest_line(rec));
  CHECK(back.id == rec.id);
  CHECK(back.clip_path == rec.clip_path);
  CHECK(back.split == rec.split);
  CHECK(back.label == rec.label);
  CHECK(back.manipulation == rec.manipulation);
  CHECK(back.hidden_label.empty());  // never serialized

  // Unlabeled pool rows: no label, no manipulation.
  SampleRecord pool = rec;
  pool.split = "pool";
  pool.label.clear();
  auto j = nlohmann::json::parse(manifest_line(pool));
  CHECK(!j.contains("label"));
  CHECK(!j.contains("manipulation"));

  CHECK_THROWS_AS(parse_manifest_line("{broken"), FormatError);
}

TEST_CASE("config parsing, overrides, canonical hash") {
  Config cfg = Config::from_string(
      "# comment line\n"
      "embed_dim = 32\n"
      "learning_rate = 1.5e-4   # trailing comment\n"
      "flag = true\n"
      "name = tiny\n");
  CHECK(cfg.get_int("embed_dim", 0) == 32);
  CHECK(cfg.get_double("learning_rate", 0.0) == doctest::Approx(1.5e-4));
  CHECK(cfg.get_bool("flag", false));
  CHECK(cfg.get_str("name", "") == "tiny");
  CHECK(cfg.get_int("missing", 7) == 7);
  CHECK_THROWS_AS(cfg.get_int("name", 0), ConfigError);
  CHECK_THROWS_AS(Config::from_string("no equals sign\n"), ConfigError);

  const std::uint64_t h1 = cfg.hash();
  Config cfg2 = Config::from_string("name=tiny\nflag=true\nlearning_rate=1.5e-4\nembed_dim=32");
  CHECK(cfg2.hash() == h1);  // order and spacing do not matter
  cfg2.set("embed_dim", "64");
  CHECK(cfg2.hash() != h1);
}

TEST_CASE("synthetic generator: determinism, counts, and split hygiene") {
  SynthConfig cfg;
  cfg.n_real = 16;
  cfg.n_fake = 16;
  cfg.t_raw = 16;
  cfg.height = 16;
  cfg.width = 16;
  cfg.seconds = 1.0;
  cfg.seed = 77;

  const std::string d1 = fresh_dir("gen1");
  const std::string d2 = fresh_dir("gen2");
  auto recs1 = gen_synthetic(cfg, d1);
  auto recs2 = gen_synthetic(cfg, d2);
  CHECK(recs1.size() == 32);
  CHECK(load_manifest(d1 + "/manifest.jsonl").size() == 32);

  // Byte-identical rerun: manifest, hidden labels, and every clip.
  CHECK(slurp(d1 + "/manifest.jsonl") == slurp(d2 + "/manifest.jsonl"));
  CHECK(slurp(d1 + "/hidden_labels.jsonl") == slurp(d2 + "/hidden_labels.jsonl"));
  for (const auto& rec : recs1)
    CHECK(slurp(d1 + "/" + rec.clip_path) == slurp(d2 + "/" + rec.clip_path));

  // Field-name audit: public manifest never carries generator-only fields.
  std::istringstream lines(slurp(d1 + "/manifest.jsonl"));
  std::string line;
  const std::set<std::string> allowed{"id", "clip", "split", "label", "manipulation"};
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    for (const auto& [key, value] : j.items()) {
      CHECK(allowed.count(key) == 1);
      CHECK(key.find("hidden") == std::string::npos);
    }
    if (j["split"] == "pool") CHECK(!j.contains("label"));
  }

  // Hidden labels cover every record.
  auto hidden = load_hidden_labels(d1 + "/hidden_labels.jsonl");
  CHECK(hidden.size() == 32);
  int reals = 0;
  for (const auto& [id, truth] : hidden) reals += truth.first == "real";
  CHECK(reals == 16);
}

TEST_CASE("synthetic coupling: real clips correlate, desync clips do not") {
  SynthConfig cfg;
  cfg.n_real = 24;
  cfg.n_fake = 24;
  cfg.mix_desync = 1.0;  // all fakes desynchronized for this oracle
  cfg.mix_replacement = cfg.mix_insertion = cfg.mix_deletion = 0.0;
  cfg.seed = 99;
  const std::string dir = fresh_dir("gen_corr");
  auto records = gen_synthetic(cfg, dir);
  auto hidden = load_hidden_labels(dir + "/hidden_labels.jsonl");

  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& rec : records) {
    RawClip clip = load_clip(dir + "/" + rec.clip_path);
    const auto area = blob_area_series(clip);
    const auto rms = audio_rms_series(clip, clip.t_raw);
    const double corr = oracle::pearson(area, rms);
    const bool fake = hidden.at(rec.id).first == "fake";
    if (!fake) {
      CHECK(corr >= 0.9);
    } else {
      CHECK(corr <= 0.3);
    }
    scores.push_back(-corr);  // lower correlation = more fake
    labels.push_back(fake ? 1 : 0);
  }
  // Correlation alone linearly separates real from desync.
  CHECK(oracle::pairwise_auc(scores, labels) >= 0.95);
}
