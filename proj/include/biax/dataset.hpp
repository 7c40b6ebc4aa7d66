#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "biax/error.hpp"
#include "biax/rng.hpp"
#include "biax/signal.hpp"

namespace biax {

// ---------------------------------------------------------------------------
// RecordingFile
//
//   magic        8 bytes  "BIAXREC1"
//   version      u32      (1)
//   fs           u32      Hz
//   C            u32
//   L            u64
//   label        u8       0 good, 1 poor
//   hour_index   u16
//   patient_id   u32 byte length + UTF-8 bytes
//   group_id     u32 byte length + UTF-8 bytes
//   payload      C*L float32, channel-major
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr char kRecordingMagic[8] = {'B', 'I', 'A', 'X', 'R', 'E', 'C', '1'};
inline constexpr std::uint32_t kRecordingVersion = 1;

struct MagicError : FormatError {
  using FormatError::FormatError;
};
struct TruncatedError : FormatError {
  using FormatError::FormatError;
};
struct VersionError : FormatError {
  using FormatError::FormatError;
};

namespace io {

template <class UInt>
void put_le(std::string& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

inline void put_str(std::string& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

/// Bounds-checked little-endian reader over an in-memory buffer.
class Reader {
 public:
  Reader(const std::string& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size())
      throw TruncatedError(what_ + ": truncated at byte " + std::to_string(buf_.size()) + " (needed " +
                           std::to_string(pos_ + n) + ")");
  }

  template <class UInt>
  UInt get() {
    need(sizeof(UInt));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(UInt);
    return static_cast<UInt>(v);
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string str() { return bytes(get<std::uint32_t>()); }

  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::string& buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void dump(const std::filesystem::path& p, const std::string& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace io

/// Electrode names used when a file carries none: the 19 standard 10-20
/// names for C == 19, otherwise "E1".."EC".
inline std::vector<std::string> default_electrode_names(std::size_t C) {
  if (C == standard_electrodes().size()) return standard_electrodes();
  std::vector<std::string> n;
  for (std::size_t i = 0; i < C; ++i) n.push_back("E" + std::to_string(i + 1));
  return n;
}

inline std::string encode_recording(const RawRecording& r) {
  if (r.fs <= 0.0 || r.fs != std::floor(r.fs)) throw ConfigError("recording fs must be a positive whole number");
  std::string out(kRecordingMagic, 8);
  io::put_le<std::uint32_t>(out, kRecordingVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.fs));
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.data.channels));
  io::put_le<std::uint64_t>(out, static_cast<std::uint64_t>(r.data.length));
  io::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.label));
  io::put_le<std::uint16_t>(out, r.hour_index);
  io::put_str(out, r.patient_id);
  io::put_str(out, r.group_id);
  out.reserve(out.size() + 4 * r.data.samples.size());
  for (double v : r.data.samples) io::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline RawRecording decode_recording(const std::string& buf, const std::vector<std::string>& electrode_names = {},
                                     const std::string& what = "recording") {
  io::Reader rd(buf, what);
  if (rd.remaining() < 8 || rd.bytes(8) != std::string(kRecordingMagic, 8)) throw MagicError(what + ": bad magic");
  const auto version = rd.get<std::uint32_t>();
  if (version != kRecordingVersion)
    throw VersionError(what + ": unsupported version " + std::to_string(version));
  RawRecording r;
  r.fs = rd.get<std::uint32_t>();
  const auto C = rd.get<std::uint32_t>();
  const auto L = rd.get<std::uint64_t>();
  const auto label = rd.get<std::uint8_t>();
  if (label > 1) throw FormatError(what + ": label must be 0 or 1");
  r.label = static_cast<Outcome>(label);
  r.hour_index = rd.get<std::uint16_t>();
  r.patient_id = rd.str();
  r.group_id = rd.str();
  const std::uint64_t n = static_cast<std::uint64_t>(C) * L;
  if (rd.remaining() < 4 * n)
    throw TruncatedError(what + ": payload has " + std::to_string(rd.remaining()) + " bytes, expected " +
                         std::to_string(4 * n));
  if (rd.remaining() > 4 * n) throw FormatError(what + ": trailing bytes after payload");
  r.data = SignalMatrix(C, static_cast<std::size_t>(L));
  for (auto& v : r.data.samples) v = static_cast<double>(std::bit_cast<float>(rd.get<std::uint32_t>()));
  if (!electrode_names.empty() && electrode_names.size() != C)
    throw ConfigError(what + ": " + std::to_string(C) + " channels but " + std::to_string(electrode_names.size()) +
                      " electrode names configured");
  r.electrode_names = electrode_names.empty() ? default_electrode_names(C) : electrode_names;
  return r;
}

inline void write_recording(const RawRecording& r, const std::filesystem::path& path) {
  io::dump(path, encode_recording(r));
}

inline RawRecording read_recording(const std::filesystem::path& path, const std::vector<std::string>& electrode_names = {}) {
  return decode_recording(io::slurp(path), electrode_names, path.string());
}

// ---------------------------------------------------------------------------
// Synthetic signals
// ---------------------------------------------------------------------------

struct SynthParams {
  Outcome cls = Outcome::good;
  double duration = 60.0;  // seconds
  double fs = 200.0;
  std::size_t channels = 19;
  std::uint64_t seed = 0;
  double burst_period = 3.0;  // seconds
  double suppression_ratio = 0.5;
  double alpha_lo = 8.0;
  double alpha_hi = 12.0;
  double coherence = 0.7;
  double noise_scale = 0.3;

  void validate() const {
    if (!(duration > 0 && fs > 0 && channels > 0 && burst_period > 0))
      throw ConfigError("synth: duration, fs, channels and burst_period must be positive");
    if (!(suppression_ratio >= 0.0 && suppression_ratio <= 1.0)) throw ConfigError("synth: suppression_ratio must lie in [0,1]");
    if (!(coherence >= 0.0 && coherence <= 1.0)) throw ConfigError("synth: coherence must lie in [0,1]");
    if (!(alpha_lo > 0 && alpha_lo < alpha_hi && alpha_hi < fs / 2)) throw ConfigError("synth: invalid alpha band");
    if (noise_scale < 0) throw ConfigError("synth: noise_scale must be >= 0");
  }
};

namespace synth {

/// Unit-variance pink (1/f) noise via Kellet's refined filter.
inline std::vector<double> pink_noise(std::size_t n, Rng& rng) {
  std::vector<double> out(n);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.normal();
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    out[i] = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  double m = 0, v = 0;
  for (double x : out) m += x;
  m /= static_cast<double>(n);
  for (double x : out) v += (x - m) * (x - m);
  const double sd = std::sqrt(v / static_cast<double>(n));
  for (double& x : out) x = sd > 0 ? (x - m) / sd : 0.0;
  return out;
}

/// Unit-variance band-limited rhythm: sum of sinusoids in [lo, hi] Hz.
inline std::vector<double> rhythm(std::size_t n, double fs, double lo, double hi, Rng& rng, int components = 6) {
  std::vector<double> out(n, 0.0);
  const double amp = std::sqrt(2.0 / components);
  for (int k = 0; k < components; ++k) {
    const double f = rng.uniform(lo, hi);
    const double ph = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < n; ++i) out[i] += amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs + ph);
  }
  return out;
}

/// Shared burst/suppression envelope in [0,1]: each cycle of ~burst_period
/// seconds (jittered +-30%) opens with a suppressed stretch of
/// suppression_ratio of the cycle, then a burst with short raised-cosine edges.
inline std::vector<double> burst_envelope(std::size_t n, double fs, double period, double ratio, Rng& rng) {
  std::vector<double> env(n, 0.0);
  std::size_t t = static_cast<std::size_t>(rng.uniform(0.0, period * fs));  // random phase
  // Partial first burst.
  for (std::size_t i = 0; i < std::min(t, n); ++i) env[i] = 1.0;
  const double edge = 0.05 * fs;
  while (t < n) {
    const double cycle = period * rng.uniform(0.7, 1.3) * fs;
    const auto sup = static_cast<std::size_t>(ratio * cycle);
    const auto burst = static_cast<std::size_t>(cycle) - sup;
    t += sup;
    for (std::size_t i = 0; i < burst && t + i < n; ++i) {
      const double d = std::min(static_cast<double>(i), static_cast<double>(burst - 1 - i));
      env[t + i] = d >= edge ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * d / edge);
    }
    t += burst;
  }
  return env;
}

}  // namespace synth

// Burst amplitude and suppressed-floor scale of the poor class, relative to
// the unit-variance good-class rhythm.
inline constexpr double kBurstAmplitude = 3.0;
inline constexpr double kSuppressedFloor = 0.1;

/// Seeded synthetic recording.
///
/// good: per-channel gain * (sqrt(coherence) * shared alpha rhythm
///       + sqrt(1 - coherence) * private alpha rhythm) + noise_scale * pink noise.
/// poor: shared burst/suppression envelope * independent per-channel bursts
///       of pink noise, plus a low pink floor; little inter-channel coherence.
inline RawRecording synth_generate(const SynthParams& p) {
  p.validate();
  Rng rng(p.seed);
  const auto n = static_cast<std::size_t>(std::llround(p.duration * p.fs));
  RawRecording r;
  r.fs = p.fs;
  r.label = p.cls;
  r.data = SignalMatrix(p.channels, n);
  r.electrode_names = default_electrode_names(p.channels);
  if (p.cls == Outcome::good) {
    const auto common = synth::rhythm(n, p.fs, p.alpha_lo, p.alpha_hi, rng);
    const double a = std::sqrt(p.coherence), b = std::sqrt(1.0 - p.coherence);
    for (std::size_t c = 0; c < p.channels; ++c) {
      const double gain = rng.uniform(0.6, 1.4);
      const auto own = synth::rhythm(n, p.fs, p.alpha_lo, p.alpha_hi, rng);
      const auto pink = synth::pink_noise(n, rng);
      auto row = r.data.row(c);
      for (std::size_t i = 0; i < n; ++i) row[i] = gain * (a * common[i] + b * own[i]) + p.noise_scale * pink[i];
    }
  } else {
    const auto env = synth::burst_envelope(n, p.fs, p.burst_period, p.suppression_ratio, rng);
    for (std::size_t c = 0; c < p.channels; ++c) {
      const auto burst = synth::pink_noise(n, rng);
      const auto floor = synth::pink_noise(n, rng);
      auto row = r.data.row(c);
      for (std::size_t i = 0; i < n; ++i)
        row[i] = kBurstAmplitude * env[i] * burst[i] + kSuppressedFloor * p.noise_scale * floor[i];
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Cohort manifest
//
// CSV with header "patient_id,group_id,label,paths"; label is 0 (good) or
// 1 (poor); paths is a ';'-separated list of RecordingFiles relative to the
// manifest's directory, one per recording hour.
// ---------------------------------------------------------------------------

struct ManifestRow {
  std::string patient_id;
  std::string group_id;
  Outcome label = Outcome::good;
  std::vector<std::string> paths;
};

namespace detail {
inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}
}  // namespace detail

inline void write_manifest(const std::vector<ManifestRow>& rows, const std::filesystem::path& path) {
  std::string out = "patient_id,group_id,label,paths\n";
  for (const auto& r : rows) {
    for (const auto* f : {&r.patient_id, &r.group_id})
      if (f->find_first_of(",;\n") != std::string::npos) throw ConfigError("manifest: ids may not contain , ; or newline");
    out += r.patient_id + "," + r.group_id + "," + std::to_string(static_cast<int>(r.label)) + ",";
    for (std::size_t i = 0; i < r.paths.size(); ++i) out += (i ? ";" : "") + r.paths[i];
    out += "\n";
  }
  io::dump(path, out);
}

inline std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("manifest not found: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "patient_id,group_id,label,paths")
    throw FormatError(path.string() + ": missing manifest header");
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 4 || (f[2] != "0" && f[2] != "1"))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed manifest row");
    ManifestRow r{f[0], f[1], f[2] == "1" ? Outcome::poor : Outcome::good, detail::split(f[3], ';')};
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Preprocessed cohort and training sampler
// ---------------------------------------------------------------------------

struct PatientRecord {
  std::string patient_id;
  std::string group_id;
  Outcome label = Outcome::good;
  std::vector<std::vector<Segment>> hours;  // hours[h][s]

  std::size_t segment_count() const {
    std::size_t n = 0;
    for (const auto& h : hours) n += h.size();
    return n;
  }
};

/// Reads every recording in the manifest, runs the preprocessing chain and
/// cuts windows of `window_len` samples.
inline std::vector<PatientRecord> load_cohort(const std::filesystem::path& manifest, const PipelineConfig& pipe,
                                              std::size_t window_len,
                                              const std::vector<std::string>& electrode_names = {}) {
  const auto rows = read_manifest(manifest);
  const auto base = manifest.parent_path();
  std::vector<PatientRecord> out;
  for (const auto& row : rows) {
    PatientRecord p{row.patient_id, row.group_id, row.label, {}};
    for (const auto& rel : row.paths) {
      auto rec = read_recording(base / rel, electrode_names);
      if (rec.patient_id != row.patient_id || rec.label != row.label)
        throw FormatError(rel + ": header disagrees with manifest row for " + row.patient_id);
      rec.group_id = row.group_id;
      p.hours.push_back(segment_samples(preprocess(rec, pipe), window_len));
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// Patient-first uniform sampler: uniform patient, then uniform hour among
/// that patient's usable hours, then uniform segment within the hour.
class TrainingSampler {
 public:
  explicit TrainingSampler(const std::vector<PatientRecord>& patients, std::ostream* warn = &std::clog) {
    for (const auto& p : patients) {
      Entry e{&p, {}};
      for (std::size_t h = 0; h < p.hours.size(); ++h)
        if (!p.hours[h].empty()) e.hours.push_back(h);
      if (e.hours.empty()) {
        if (warn) *warn << "warning: patient " << p.patient_id << " has no usable segment; skipped\n";
        continue;
      }
      entries_.push_back(std::move(e));
    }
    if (entries_.empty()) throw ConfigError("sampler: no patient has a usable segment");
  }

  const Segment& draw(Rng& rng) const {
    const auto& e = entries_[rng.below(entries_.size())];
    const auto& hour = e.patient->hours[e.hours[rng.below(e.hours.size())]];
    return hour[rng.below(hour.size())];
  }

  std::size_t usable_patients() const { return entries_.size(); }

 private:
  struct Entry {
    const PatientRecord* patient;
    std::vector<std::size_t> hours;
  };
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Synthetic cohort
// ---------------------------------------------------------------------------

struct CohortSpec {
  std::size_t patients = 40;
  std::size_t hours_per_patient = 2;
  std::vector<std::string> groups{"A", "B"};
  double hour_seconds = 60.0;  // length of one recording block
  SynthParams base;            // cls/seed/duration are overridden per recording
  std::uint64_t seed = 1;
};

/// Balanced labels (alternating good/poor), patients assigned round-robin to
/// groups. Per-patient morphology parameters are jittered from `base`.
inline std::vector<std::pair<ManifestRow, std::vector<RawRecording>>> synth_cohort(const CohortSpec& spec) {
  if (spec.groups.empty()) throw ConfigError("cohort: at least one group required");
  if (spec.patients == 0 || spec.hours_per_patient == 0) throw ConfigError("cohort: patients and hours must be positive");
  Rng rng(spec.seed);
  std::vector<std::pair<ManifestRow, std::vector<RawRecording>>> out;
  for (std::size_t i = 0; i < spec.patients; ++i) {
    ManifestRow row;
    char id[16];
    std::snprintf(id, sizeof id, "P%03zu", i + 1);
    row.patient_id = id;
    row.group_id = spec.groups[i % spec.groups.size()];
    row.label = (i / spec.groups.size()) % 2 == 0 ? Outcome::good : Outcome::poor;
    SynthParams p = spec.base;
    p.cls = row.label;
    p.duration = spec.hour_seconds;
    p.burst_period = spec.base.burst_period * rng.uniform(0.7, 1.3);
    p.suppression_ratio = std::clamp(spec.base.suppression_ratio + rng.uniform(-0.15, 0.15), 0.0, 1.0);
    p.coherence = std::clamp(spec.base.coherence + rng.uniform(-0.2, 0.2), 0.0, 1.0);
    std::vector<RawRecording> hours;
    for (std::size_t h = 0; h < spec.hours_per_patient; ++h) {
      p.seed = rng.next_u64();
      auto rec = synth_generate(p);
      rec.patient_id = row.patient_id;
      rec.group_id = row.group_id;
      rec.hour_index = static_cast<std::uint16_t>(h);
      char name[48];
      std::snprintf(name, sizeof name, "%s_h%02zu.biaxrec", row.patient_id.c_str(), h);
      row.paths.push_back(name);
      hours.push_back(std::move(rec));
    }
    out.emplace_back(std::move(row), std::move(hours));
  }
  return out;
}

/// Writes every recording plus the manifest into `dir`.
inline std::filesystem::path write_cohort(const std::vector<std::pair<ManifestRow, std::vector<RawRecording>>>& cohort,
                                          const std::filesystem::path& dir,
                                          const std::string& manifest_name = "manifest.csv") {
  std::filesystem::create_directories(dir);
  std::vector<ManifestRow> rows;
  for (const auto& [row, recs] : cohort) {
    for (std::size_t h = 0; h < recs.size(); ++h) write_recording(recs[h], dir / row.paths[h]);
    rows.push_back(row);
  }
  const auto manifest = dir / manifest_name;
  write_manifest(rows, manifest);
  return manifest;
}

}  // namespace biax
