// Copyright 2026 dcfnet authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Deterministic synthetic speech stand-ins: parametric harmonic "speakers",
// SNR-controlled two-source mixing, band-limited noise and synthetic
// reverberation. Speaker identity lives entirely in the profile parameters
// (pitch, spectral tilt, formants), which is exactly the cue a contextual
// enrollment model can exploit.

#pragma once

#include <filesystem>
#include <set>

#include <json.hpp>

#include "dcfnet/rng.hpp"
#include "dcfnet/wav.hpp"

namespace dcfnet {

struct SpeakerProfile {
  uint32_t speaker_id = 0;
  double f0_base = 120.0;       // Hz, in [80, 300]
  double f0_range = 20.0;       // Hz of slow pitch drift
  double harmonic_tilt = -12.0;  // dB/octave
  double formants[3] = {500.0, 1500.0, 2500.0};  // Hz, below Nyquist
  double vibrato_rate = 5.5;    // Hz

  void validate() const {
    check(f0_base >= 80.0 && f0_base <= 300.0, "speaker: f0_base must lie in [80, 300] Hz");
    for (double f : formants)
      check(f > 0.0 && f < 4000.0, "speaker: formants must lie below the 4 kHz Nyquist");
  }
};

inline SpeakerProfile make_speaker(uint32_t id, uint64_t seed) {
  Rng rng(seed);
  SpeakerProfile p;
  p.speaker_id = id;
  p.f0_base = rng.uniform(85.0, 280.0);
  p.f0_range = rng.uniform(8.0, 30.0);
  p.harmonic_tilt = rng.uniform(-16.0, -9.0);
  double lo = 350.0;
  for (int i = 0; i < 3; ++i) {
    p.formants[i] = rng.uniform(lo * 1.2, lo * 2.2);
    lo = p.formants[i];
  }
  if (p.formants[2] >= 3900.0) p.formants[2] = 3900.0 - (seed % 97);
  p.vibrato_rate = rng.uniform(4.0, 7.0);
  p.validate();
  return p;
}

// Harmonic source with a drifting pitch contour, spectral tilt, Gaussian
// formant envelope and a syllable-rate amplitude modulation. Deterministic
// in (profile, duration, seed); peak-normalized to 0.5.
inline Waveform synth_utterance(const SpeakerProfile& profile, double duration_s, uint64_t seed,
                                int sample_rate = 8000) {
  check(duration_s >= 0.5 && duration_s <= 10.0, "synth_utterance: duration must be in [0.5, 10] s");
  profile.validate();
  Rng rng(seed);
  const size_t n = static_cast<size_t>(duration_s * sample_rate + 0.5);

  // Slow pitch drift: a clamped random walk over 50 ms control points.
  const size_t ctrl_step = sample_rate / 20;
  const size_t n_ctrl = n / ctrl_step + 2;
  std::vector<double> walk(n_ctrl, 0.0);
  for (size_t k = 1; k < n_ctrl; ++k)
    walk[k] = std::clamp(walk[k - 1] + 0.3 * rng.normal(), -0.5, 0.5);

  // Syllable-rate envelope.
  const double syll_rate = rng.uniform(2.0, 5.0);
  const double syll_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double vib_depth = 0.005 * profile.f0_base;

  const size_t n_harm =
      std::max<size_t>(1, static_cast<size_t>(3800.0 / (profile.f0_base + profile.f0_range)));
  std::vector<double> tilt_amp(n_harm + 1, 0.0);
  for (size_t k = 1; k <= n_harm; ++k)
    tilt_amp[k] = std::pow(10.0, profile.harmonic_tilt * std::log2(static_cast<double>(k)) / 20.0);

  auto formant_gain = [&](double f) {
    double g = 0.1;
    for (double fc : profile.formants) {
      const double d = (f - fc) / 120.0;
      g += std::exp(-0.5 * d * d);
    }
    return g;
  };

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(n, 0.0);
  double phase = rng.uniform(0.0, 2.0 * M_PI);
  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const size_t k0 = i / ctrl_step;
    const double frac = static_cast<double>(i % ctrl_step) / ctrl_step;
    const double drift = walk[k0] * (1.0 - frac) + walk[k0 + 1] * frac;
    const double f0 = profile.f0_base + profile.f0_range * drift +
                      vib_depth * std::sin(2.0 * M_PI * profile.vibrato_rate * t);
    phase += 2.0 * M_PI * f0 / sample_rate;
    double sample = 0.0;
    for (size_t k = 1; k <= n_harm; ++k) {
      const double fk = f0 * static_cast<double>(k);
      if (fk >= 3900.0) break;
      sample += tilt_amp[k] * formant_gain(fk) * std::sin(phase * static_cast<double>(k));
    }
    const double syll =
        0.25 + 0.75 * std::pow(0.5 * (1.0 - std::cos(2.0 * M_PI * syll_rate * t + syll_phase)), 0.7);
    w.samples[i] = sample * syll;
  }
  const double peak = w.peak();
  check(peak > 0.0, "synth_utterance: produced silence");
  for (double& s : w.samples) s *= 0.5 / peak;
  return w;
}

struct MixtureExample {
  Waveform mixture;                    // y = target + sum(interference), exact
  Waveform target;                     // s (anechoic direct path by default)
  std::vector<Waveform> interference;  // b_i
  Waveform enrollment;                 // same speaker as target, different utterance
  double snr_db = 0.0;
  std::string condition = "clean";
  uint32_t spk_target = 0, spk_interf = 0;
};

// Rebuilds y = s + sum b_i in a fixed order so the identity is bit-exact.
inline void rebuild_mixture(MixtureExample& ex) {
  ex.mixture.sample_rate = ex.target.sample_rate;
  ex.mixture.samples = ex.target.samples;
  for (const auto& b : ex.interference) {
    check(b.size() == ex.target.size(), "mixture: component length mismatch");
    for (size_t i = 0; i < ex.mixture.samples.size(); ++i)
      ex.mixture.samples[i] += b.samples[i];
  }
}

inline bool mixture_identity_holds(const MixtureExample& ex) {
  std::vector<double> sum = ex.target.samples;
  for (const auto& b : ex.interference)
    for (size_t i = 0; i < sum.size(); ++i) sum[i] += b.samples[i];
  return sum == ex.mixture.samples;
}

// Scales the interferer so the target-to-interference energy ratio is
// exactly snr_db, then forms y = s + b.
inline MixtureExample make_mixture(const Waveform& s, const Waveform& b, double snr_db) {
  check(s.size() == b.size(), "make_mixture: length mismatch");
  const double es = s.energy(), eb = b.energy();
  check(es > 0.0 && eb > 0.0, "make_mixture: zero-energy input");
  const double scale = std::sqrt(es / (eb * std::pow(10.0, snr_db / 10.0)));
  MixtureExample ex;
  ex.target = s;
  Waveform bs = b;
  for (double& v : bs.samples) v *= scale;
  ex.interference.push_back(std::move(bs));
  ex.snr_db = snr_db;
  ex.condition = "clean";
  rebuild_mixture(ex);
  return ex;
}

// Band-limited Gaussian noise appended as an extra interference component at
// the given SNR relative to the target.
inline MixtureExample add_noise(const MixtureExample& ex, double noise_snr_db, uint64_t seed) {
  check(ex.condition == "clean", "add_noise: example is already " + ex.condition);
  Rng rng(seed);
  const size_t n = ex.target.size();
  std::vector<double> white(n);
  for (auto& v : white) v = rng.normal();
  // One-pole low-pass then DC-blocking high-pass keeps the noise in band.
  std::vector<double> shaped(n, 0.0);
  double lp = 0.0;
  const double a = std::exp(-2.0 * M_PI * 2800.0 / ex.target.sample_rate);
  for (size_t i = 0; i < n; ++i) {
    lp = a * lp + (1.0 - a) * white[i];
    shaped[i] = lp;
  }
  double hp_prev_in = 0.0, hp_prev = 0.0;
  const double r = std::exp(-2.0 * M_PI * 120.0 / ex.target.sample_rate);
  for (size_t i = 0; i < n; ++i) {
    const double x = shaped[i];
    hp_prev = r * hp_prev + x - hp_prev_in;
    hp_prev_in = x;
    shaped[i] = hp_prev;
  }
  double en = 0.0;
  for (double v : shaped) en += v * v;
  check(en > 0.0, "add_noise: degenerate noise");
  const double scale = std::sqrt(ex.target.energy() / (en * std::pow(10.0, noise_snr_db / 10.0)));
  Waveform noise;
  noise.sample_rate = ex.target.sample_rate;
  noise.samples.resize(n);
  for (size_t i = 0; i < n; ++i) noise.samples[i] = shaped[i] * scale;

  MixtureExample out = ex;
  out.interference.push_back(std::move(noise));
  out.condition = "noisy";
  rebuild_mixture(out);
  return out;
}

// Synthetic room impulse response: unit direct-path tap followed by
// exponentially decaying Gaussian noise whose envelope falls 60 dB over
// rt60 seconds.
inline std::vector<double> synth_rir(double rt60_s, uint64_t seed, int sample_rate = 8000) {
  Rng rng(seed);
  const size_t len = static_cast<size_t>(rt60_s * sample_rate);
  std::vector<double> h(len + 1, 0.0);
  h[0] = 1.0;
  const double decay_db_per_sample = 60.0 / static_cast<double>(len);
  for (size_t m = 1; m < h.size(); ++m)
    h[m] = 0.25 * rng.normal() *
           std::pow(10.0, -decay_db_per_sample * static_cast<double>(m) / 20.0);
  return h;
}

inline std::vector<double> convolve_trunc(const std::vector<double>& x,
                                          const std::vector<double>& h, size_t out_len) {
  std::vector<double> y(out_len, 0.0);
  for (size_t m = 0; m < h.size(); ++m) {
    const double hv = h[m];
    if (hv == 0.0) continue;
    const size_t last = out_len > m ? out_len - m : 0;
    for (size_t i = 0; i < last; ++i) y[i + m] += hv * x[i];
  }
  return y;
}

// Convolves each source with its own synthetic RIR. The training target
// stays the anechoic direct path by default, so the target's reverb tail is
// carried as an extra interference component and the mixture identity still
// holds sample-exactly. reverberant_target keeps the full reverberant source
// as the target instead.
inline MixtureExample add_reverb(const MixtureExample& ex, double rt60_s, uint64_t seed,
                                 bool reverberant_target = false) {
  check(rt60_s >= 0.1 && rt60_s <= 1.0, "add_reverb: rt60 must lie in [0.1, 1.0] s");
  check(ex.condition == "clean", "add_reverb: example is already " + ex.condition);
  const size_t n = ex.target.size();

  MixtureExample out;
  out.enrollment = ex.enrollment;
  out.snr_db = ex.snr_db;
  out.condition = "reverberant";
  out.spk_target = ex.spk_target;
  out.spk_interf = ex.spk_interf;

  const auto h_target = synth_rir(rt60_s, derive_seed(seed, 1));
  auto target_rev = convolve_trunc(ex.target.samples, h_target, n);
  if (reverberant_target) {
    out.target.sample_rate = ex.target.sample_rate;
    out.target.samples = std::move(target_rev);
  } else {
    out.target = ex.target;  // direct path: h[0] == 1 makes tail = rev - dry exact
    Waveform tail;
    tail.sample_rate = ex.target.sample_rate;
    tail.samples.resize(n);
    for (size_t i = 0; i < n; ++i) tail.samples[i] = target_rev[i] - ex.target.samples[i];
    out.interference.push_back(std::move(tail));
  }
  for (size_t b = 0; b < ex.interference.size(); ++b) {
    const auto h = synth_rir(rt60_s, derive_seed(seed, 2 + b));
    Waveform rev;
    rev.sample_rate = ex.target.sample_rate;
    rev.samples = convolve_trunc(ex.interference[b].samples, h, n);
    out.interference.push_back(std::move(rev));
  }
  rebuild_mixture(out);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset builder

struct ManifestRecord {
  std::string id;
  std::string mix, enroll, target;  // file paths
  uint32_t spk_target = 0, spk_interf = 0;
  double snr_db = 0.0;
  std::string condition = "clean";
  uint64_t seed = 0;
};

struct Manifest {
  std::vector<ManifestRecord> records;

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (const auto& r : records) {
      nlohmann::json j{{"id", r.id},
                       {"mix", r.mix},
                       {"enroll", r.enroll},
                       {"target", r.target},
                       {"spk_target", r.spk_target},
                       {"spk_interf", r.spk_interf},
                       {"snr_db", r.snr_db},
                       {"condition", r.condition},
                       {"seed", r.seed}};
      f << j.dump() << '\n';
    }
    if (!f) throw IoError("short write: " + path);
  }

  static Manifest load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    Manifest m;
    std::string line;
    size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ":" + std::to_string(lineno) + ": bad manifest record: " + e.what());
      }
      ManifestRecord r;
      r.id = j.at("id").get<std::string>();
      r.mix = j.at("mix").get<std::string>();
      r.enroll = j.at("enroll").get<std::string>();
      r.target = j.at("target").get<std::string>();
      r.spk_target = j.at("spk_target").get<uint32_t>();
      r.spk_interf = j.at("spk_interf").get<uint32_t>();
      r.snr_db = j.at("snr_db").get<double>();
      r.condition = j.at("condition").get<std::string>();
      r.seed = j.at("seed").get<uint64_t>();
      m.records.push_back(std::move(r));
    }
    return m;
  }
};

struct DatasetOptions {
  size_t n_train = 200;
  size_t n_test = 50;
  size_t n_speakers = 8;
  std::string condition = "clean";  // clean | noisy | reverberant
  double duration_s = 1.0;
  double enroll_duration_s = 1.5;
  double snr_lo = 0.0, snr_hi = 5.0;
  double noise_snr_db = 10.0;
  double rt60_s = 0.3;
  bool reverberant_target = false;
  bool disjoint_speakers = false;  // separate train/test speaker pools
};

inline MixtureExample synth_example(const std::vector<SpeakerProfile>& pool, uint64_t item_seed,
                                    const DatasetOptions& opt) {
  Rng rng(item_seed);
  const size_t target_idx = rng.randint(pool.size());
  size_t interf_idx = rng.randint(pool.size() - 1);
  if (interf_idx >= target_idx) ++interf_idx;

  const uint64_t target_utt_seed = derive_seed(item_seed, 11);
  const uint64_t interf_utt_seed = derive_seed(item_seed, 12);
  const uint64_t enroll_utt_seed = derive_seed(item_seed, 13);
  check(enroll_utt_seed != target_utt_seed, "synth_example: enrollment seed collision");

  auto s = synth_utterance(pool[target_idx], opt.duration_s, target_utt_seed);
  auto b = synth_utterance(pool[interf_idx], opt.duration_s, interf_utt_seed);
  const double snr = rng.uniform(opt.snr_lo, opt.snr_hi);
  auto ex = make_mixture(s, b, snr);
  ex.spk_target = pool[target_idx].speaker_id;
  ex.spk_interf = pool[interf_idx].speaker_id;
  ex.enrollment = synth_utterance(pool[target_idx], opt.enroll_duration_s, enroll_utt_seed);
  if (opt.condition == "noisy") {
    ex = add_noise(ex, opt.noise_snr_db, derive_seed(item_seed, 14));
  } else if (opt.condition == "reverberant") {
    const auto spk_t = ex.spk_target, spk_i = ex.spk_interf;
    ex = add_reverb(ex, opt.rt60_s, derive_seed(item_seed, 15), opt.reverberant_target);
    ex.spk_target = spk_t;
    ex.spk_interf = spk_i;
  } else {
    check(opt.condition == "clean", "unknown condition: " + opt.condition);
  }
  ex.mixture.validate();
  return ex;
}

// Generates speaker profiles and n_train + n_test mixtures, writes the WAV
// triplets plus a line-delimited JSON manifest (train_*/test_* ids), and
// per-split manifests for convenience. Bit-identical given (seed, options).
inline Manifest build_dataset(const DatasetOptions& opt, uint64_t seed,
                              const std::string& out_dir) {
  check(opt.n_speakers >= 4, "build_dataset: need at least 4 speakers");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "audio");

  std::vector<SpeakerProfile> speakers;
  for (size_t i = 0; i < opt.n_speakers; ++i)
    speakers.push_back(make_speaker(static_cast<uint32_t>(i), derive_seed(seed, 0xA, i)));

  std::vector<SpeakerProfile> train_pool = speakers, test_pool = speakers;
  if (opt.disjoint_speakers) {
    const size_t half = opt.n_speakers / 2;
    check(half >= 2 && opt.n_speakers - half >= 2,
          "build_dataset: disjoint split needs >= 4 speakers");
    train_pool.assign(speakers.begin(), speakers.begin() + half);
    test_pool.assign(speakers.begin() + half, speakers.end());
  }

  Manifest manifest;
  std::set<uint64_t> used_seeds;
  auto emit = [&](const std::string& split, const std::vector<SpeakerProfile>& pool, size_t count,
                  uint64_t salt) {
    for (size_t i = 0; i < count; ++i) {
      const uint64_t item_seed = derive_seed(seed, salt, i);
      check(used_seeds.insert(item_seed).second, "build_dataset: item seed collision");
      auto ex = synth_example(pool, item_seed, opt);
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%05zu", split.c_str(), i);
      ManifestRecord r;
      r.id = idbuf;
      r.mix = (fs::path(out_dir) / "audio" / (r.id + "_mix.wav")).string();
      r.enroll = (fs::path(out_dir) / "audio" / (r.id + "_enroll.wav")).string();
      r.target = (fs::path(out_dir) / "audio" / (r.id + "_target.wav")).string();
      r.spk_target = ex.spk_target;
      r.spk_interf = ex.spk_interf;
      r.snr_db = ex.snr_db;
      r.condition = ex.condition;
      r.seed = item_seed;
      write_wav(r.mix, ex.mixture);
      write_wav(r.enroll, ex.enrollment);
      write_wav(r.target, ex.target);
      manifest.records.push_back(std::move(r));
    }
  };
  emit("train", train_pool, opt.n_train, 0xB);
  emit("test", test_pool, opt.n_test, 0xC);

  manifest.save((fs::path(out_dir) / "manifest.jsonl").string());
  Manifest train_m, test_m;
  for (const auto& r : manifest.records)
    (r.id.rfind("train", 0) == 0 ? train_m : test_m).records.push_back(r);
  train_m.save((fs::path(out_dir) / "train.jsonl").string());
  test_m.save((fs::path(out_dir) / "test.jsonl").string());
  return manifest;
}

}  // namespace dcfnet
