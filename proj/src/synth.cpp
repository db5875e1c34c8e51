#include "hola/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "hola/rng.hpp"

namespace hola {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Latent amplitude envelope: three incommensurate low-frequency sinusoids
// mapped into [0.25, 1.0]. Multi-component so that time shifts decorrelate.
struct Envelope {
  std::array<double, 3> freq{}, phase{}, amp{};

  static Envelope draw(Rng& rng) {
    Envelope e;
    for (int k = 0; k < 3; ++k) {
      e.freq[static_cast<size_t>(k)] = rng.uniform(0.5, 2.4);
      e.phase[static_cast<size_t>(k)] = rng.uniform(0.0, 2.0 * kPi);
      e.amp[static_cast<size_t>(k)] = rng.uniform(0.5, 1.0);
    }
    return e;
  }

  double at(double t) const {
    double total = 0.0, norm = 0.0;
    for (int k = 0; k < 3; ++k) {
      total += amp[static_cast<size_t>(k)] *
               std::sin(2.0 * kPi * freq[static_cast<size_t>(k)] * t +
                        phase[static_cast<size_t>(k)]);
      norm += amp[static_cast<size_t>(k)];
    }
    return 0.625 + 0.375 * total / norm;  // in [0.25, 1.0]
  }
};

std::vector<float> render_tone(const Envelope& env, double f0, int n, int sr,
                               Rng& rng) {
  std::vector<float> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double v = 0.6 * env.at(t) * std::sin(2.0 * kPi * f0 * t) +
                     0.003 * (rng.uniform01() * 2.0 - 1.0);
    w[static_cast<size_t>(i)] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return w;
}

// Moving bright blob whose AREA is affine in the envelope: radius grows as
// sqrt(0.3 + 0.7 e), so sum(exp(-d^2/2r^2)) ~ 2 pi r^2 tracks e linearly.
void render_blob_video(RawClip& clip, const Envelope& env, Rng& rng,
                       const SynthConfig& cfg) {
  const double fx = rng.uniform(0.15, 0.45), fy = rng.uniform(0.15, 0.45);
  const double px = rng.uniform(0.0, 2.0 * kPi), py = rng.uniform(0.0, 2.0 * kPi);
  const double r_base = cfg.width / 8.0;
  clip.frames.assign(static_cast<size_t>(cfg.t_raw) * cfg.height * cfg.width *
                         cfg.channels,
                     0);
  for (int f = 0; f < cfg.t_raw; ++f) {
    const double t = (f + 0.5) * cfg.seconds / cfg.t_raw;
    const double cx = cfg.width / 2.0 + (cfg.width / 8.0) * std::sin(2.0 * kPi * fx * t + px);
    const double cy = cfg.height / 2.0 + (cfg.height / 8.0) * std::sin(2.0 * kPi * fy * t + py);
    const double r = r_base * std::sqrt(0.3 + 0.7 * env.at(t));
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const double v = 255.0 * std::exp(-d2 / (2.0 * r * r));
        for (int c = 0; c < cfg.channels; ++c)
          clip.frames[((static_cast<size_t>(f) * cfg.height + y) * cfg.width + x) *
                          cfg.channels +
                      c] = static_cast<std::uint8_t>(std::lround(v));
      }
  }
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

std::vector<float> circular_shift(const std::vector<float>& w, int shift) {
  const int n = static_cast<int>(w.size());
  std::vector<float> out(w.size());
  for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = w[static_cast<size_t>((i + shift) % n)];
  return out;
}

enum class FakeMode { desync, replacement, insertion, deletion };

const char* mode_name(FakeMode m) {
  switch (m) {
    case FakeMode::desync: return "desync";
    case FakeMode::replacement: return "replacement";
    case FakeMode::insertion: return "insertion";
    case FakeMode::deletion: return "deletion";
  }
  return "?";
}

FakeMode draw_mode(Rng& rng, const SynthConfig& cfg) {
  const double u = rng.uniform01() *
                   (cfg.mix_desync + cfg.mix_replacement + cfg.mix_insertion +
                    cfg.mix_deletion);
  if (u < cfg.mix_desync) return FakeMode::desync;
  if (u < cfg.mix_desync + cfg.mix_replacement) return FakeMode::replacement;
  if (u < cfg.mix_desync + cfg.mix_replacement + cfg.mix_insertion)
    return FakeMode::insertion;
  return FakeMode::deletion;
}

}  // namespace

std::vector<double> blob_area_series(const RawClip& clip) {
  std::vector<double> area(static_cast<size_t>(clip.t_raw), 0.0);
  const std::size_t frame =
      static_cast<std::size_t>(clip.height) * clip.width * clip.channels;
  for (int f = 0; f < clip.t_raw; ++f) {
    double sum = 0.0;
    for (std::size_t i = 0; i < frame; ++i)
      sum += clip.frames[static_cast<std::size_t>(f) * frame + i] / 255.0;
    area[static_cast<size_t>(f)] = sum;
  }
  return area;
}

std::vector<double> audio_rms_series(const RawClip& clip, int windows) {
  std::vector<double> rms(static_cast<size_t>(windows), 0.0);
  const std::size_t n = clip.waveform.size();
  for (int w = 0; w < windows; ++w) {
    const std::size_t b = n * static_cast<std::size_t>(w) / windows;
    const std::size_t e = n * static_cast<std::size_t>(w + 1) / windows;
    double acc = 0.0;
    for (std::size_t i = b; i < e; ++i)
      acc += static_cast<double>(clip.waveform[i]) * clip.waveform[i];
    rms[static_cast<size_t>(w)] = std::sqrt(acc / static_cast<double>(e - b));
  }
  return rms;
}

void SynthConfig::validate() const {
  if (n_real < 1 || n_fake < 1)
    throw ConfigError("synth: n_real and n_fake must be >= 1");
  if (t_raw < 2 || height < 8 || width < 8 || channels < 1)
    throw ConfigError("synth: clip geometry too small");
  if (seconds <= 0.25 || sample_rate < 1000)
    throw ConfigError("synth: need at least a quarter second of audio");
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
    throw ConfigError("synth: split fractions must be non-negative and sum <= 1");
  if (mix_desync < 0 || mix_replacement < 0 || mix_insertion < 0 ||
      mix_deletion < 0 ||
      mix_desync + mix_replacement + mix_insertion + mix_deletion <= 0)
    throw ConfigError("synth: fake mix must be non-negative and non-empty");
}

std::vector<SampleRecord> gen_synthetic(const SynthConfig& cfg,
                                        const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir + "/clips", ec);
  if (ec)
    throw DataError("gen_synthetic: cannot create '" + out_dir + "/clips': " +
                    ec.message());

  const int n_samples = static_cast<int>(cfg.seconds * cfg.sample_rate);
  Rng master(cfg.seed);

  struct Draft {
    RawClip clip;
    std::string truth;
    std::string manipulation;
  };
  std::vector<Draft> drafts;
  drafts.reserve(static_cast<size_t>(cfg.n_real + cfg.n_fake));

  for (int i = 0; i < cfg.n_real + cfg.n_fake; ++i) {
    Rng rng = master.split(static_cast<std::uint64_t>(i));
    const bool fake = i >= cfg.n_real;

    Draft d;
    d.clip.t_raw = cfg.t_raw;
    d.clip.height = cfg.height;
    d.clip.width = cfg.width;
    d.clip.channels = cfg.channels;
    d.clip.sample_rate = cfg.sample_rate;

    Envelope env = Envelope::draw(rng);
    const double f0 = rng.uniform(250.0, 650.0);
    d.clip.waveform = render_tone(env, f0, n_samples, cfg.sample_rate, rng);
    render_blob_video(d.clip, env, rng, cfg);

    if (!fake) {
      d.truth = "real";
    } else {
      d.truth = "fake";
      const FakeMode mode = draw_mode(rng, cfg);
      d.manipulation = mode_name(mode);
      const auto area = blob_area_series(d.clip);
      switch (mode) {
        case FakeMode::desync: {
          // Try a grid of shifts >= 0.5 s and keep the one that kills the
          // audio-visual correlation hardest.
          int best_shift = n_samples / 2;
          double best = 1e9;
          for (int k = 0; k < 16; ++k) {
            const double delta = 0.5 + 1.0 * k / 15.0;  // 0.5 .. 1.5 s
            const int shift = static_cast<int>(delta * cfg.sample_rate) % n_samples;
            RawClip probe = d.clip;
            probe.waveform = circular_shift(d.clip.waveform, shift);
            const double c = std::abs(
                pearson(audio_rms_series(probe, cfg.t_raw), area));
            if (c < best) {
              best = c;
              best_shift = shift;
            }
          }
          d.clip.waveform = circular_shift(d.clip.waveform, best_shift);
          break;
        }
        case FakeMode::replacement: {
          // Splice in a window of a donor tone with its own envelope.
          Envelope donor = Envelope::draw(rng);
          const double donor_f0 = rng.uniform(250.0, 650.0);
          Rng donor_rng = rng.split(0xD0);
          auto donor_wave =
              render_tone(donor, donor_f0, n_samples, cfg.sample_rate, donor_rng);
          const int dur = static_cast<int>(rng.uniform(0.8, 1.4) * cfg.sample_rate);
          const int t0 = static_cast<int>(rng.uniform_below(
              static_cast<std::uint64_t>(std::max(1, n_samples - dur))));
          for (int k = 0; k < dur && t0 + k < n_samples; ++k)
            d.clip.waveform[static_cast<size_t>(t0 + k)] =
                donor_wave[static_cast<size_t>(t0 + k)];
          break;
        }
        case FakeMode::insertion: {
          Envelope donor = Envelope::draw(rng);
          const double donor_f0 = rng.uniform(250.0, 650.0);
          Rng donor_rng = rng.split(0xD1);
          auto donor_wave =
              render_tone(donor, donor_f0, n_samples, cfg.sample_rate, donor_rng);
          const int dur = static_cast<int>(rng.uniform(0.5, 1.0) * cfg.sample_rate);
          const int t0 = static_cast<int>(rng.uniform_below(
              static_cast<std::uint64_t>(std::max(1, n_samples - dur))));
          std::vector<float> out;
          out.reserve(static_cast<size_t>(n_samples));
          out.insert(out.end(), d.clip.waveform.begin(), d.clip.waveform.begin() + t0);
          out.insert(out.end(), donor_wave.begin(), donor_wave.begin() + dur);
          out.insert(out.end(), d.clip.waveform.begin() + t0, d.clip.waveform.end());
          out.resize(static_cast<size_t>(n_samples));  // keep duration fixed
          d.clip.waveform = std::move(out);
          break;
        }
        case FakeMode::deletion: {
          const int dur = static_cast<int>(rng.uniform(0.5, 1.0) * cfg.sample_rate);
          const int t0 = static_cast<int>(rng.uniform_below(
              static_cast<std::uint64_t>(std::max(1, n_samples - dur))));
          std::vector<float> out;
          out.reserve(static_cast<size_t>(n_samples));
          out.insert(out.end(), d.clip.waveform.begin(), d.clip.waveform.begin() + t0);
          out.insert(out.end(), d.clip.waveform.begin() + t0 + dur, d.clip.waveform.end());
          out.resize(static_cast<size_t>(n_samples), 0.0f);  // pad with silence
          d.clip.waveform = std::move(out);
          break;
        }
      }
    }
    drafts.push_back(std::move(d));
  }

  // Per-class split assignment, then neutral shuffled ids so that neither the
  // id nor the manifest order leaks the class of pool records.
  auto split_of = [&](int index_in_class, int class_total) {
    const int n_train = static_cast<int>(std::llround(cfg.train_frac * class_total));
    const int n_val = static_cast<int>(std::llround(cfg.val_frac * class_total));
    if (index_in_class < n_train) return std::string("train");
    if (index_in_class < n_train + n_val) return std::string("val");
    return std::string("pool");
  };

  std::vector<int> order(drafts.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng shuffle_rng = master.split(0xFACE);
  shuffle_rng.shuffle(order);

  std::vector<SampleRecord> records;
  records.reserve(drafts.size());
  int width = 1;
  for (size_t n = drafts.size(); n >= 10; n /= 10) ++width;
  for (size_t pos = 0; pos < order.size(); ++pos) {
    const int src = order[pos];
    Draft& d = drafts[static_cast<size_t>(src)];
    std::string num = std::to_string(pos);
    num.insert(num.begin(), static_cast<size_t>(width) - std::min<size_t>(static_cast<size_t>(width), num.size()), '0');

    SampleRecord rec;
    rec.id = "s" + num;
    rec.clip_path = "clips/" + rec.id + ".clip";
    const int in_class = src < cfg.n_real ? src : src - cfg.n_real;
    rec.split = split_of(in_class, src < cfg.n_real ? cfg.n_real : cfg.n_fake);
    rec.hidden_label = d.truth;
    rec.manipulation = d.manipulation;  // public manifest omits it when unlabeled
    if (rec.split != "pool") rec.label = d.truth;
    save_clip(d.clip, out_dir + "/" + rec.clip_path);
    records.push_back(std::move(rec));
  }
  std::sort(records.begin(), records.end(),
            [](const SampleRecord& a, const SampleRecord& b) { return a.id < b.id; });
  write_manifest(out_dir + "/manifest.jsonl", records);
  write_hidden_labels(out_dir + "/hidden_labels.jsonl", records);
  return records;
}

}  // namespace hola
