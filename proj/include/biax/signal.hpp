#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biax/error.hpp"

namespace biax {

enum class Outcome : std::uint8_t { good = 0, poor = 1 };

/// Channel-major C x L sample matrix.
struct SignalMatrix {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> samples;

  SignalMatrix() = default;
  SignalMatrix(std::size_t c, std::size_t l) : channels(c), length(l), samples(c * l, 0.0) {}

  std::span<double> row(std::size_t c) { return {samples.data() + c * length, length}; }
  std::span<const double> row(std::size_t c) const { return {samples.data() + c * length, length}; }
};

/// One recording block (nominally one hour) of one patient.
struct RawRecording {
  SignalMatrix data;
  double fs = 0.0;
  std::vector<std::string> electrode_names;
  Outcome label = Outcome::good;
  std::string group_id;
  std::string patient_id;
  std::uint16_t hour_index = 0;

  std::size_t channel_index(const std::string& name) const {
    auto it = std::find(electrode_names.begin(), electrode_names.end(), name);
    if (it == electrode_names.end()) return electrode_names.size();
    return static_cast<std::size_t>(it - electrode_names.begin());
  }
};

struct Segment {
  SignalMatrix data;
  Outcome label = Outcome::good;
  std::string patient_id;
  std::string group_id;
  int hour_index = 0;
  int segment_index = 0;
};

using Montage = std::vector<std::pair<std::string, std::string>>;

/// Longitudinal bipolar ("double banana") derivation of the 10-20 system.
inline const Montage& double_banana() {
  static const Montage m{
      {"Fp1", "F7"}, {"F7", "T3"}, {"T3", "T5"}, {"T5", "O1"}, {"Fp2", "F8"}, {"F8", "T4"},
      {"T4", "T6"},  {"T6", "O2"}, {"Fp1", "F3"}, {"F3", "C3"}, {"C3", "P3"}, {"P3", "O1"},
      {"Fp2", "F4"}, {"F4", "C4"}, {"C4", "P4"}, {"P4", "O2"}, {"Fz", "Cz"}, {"Cz", "Pz"},
  };
  return m;
}

/// The 19 electrodes the double-banana montage reads.
inline const std::vector<std::string>& standard_electrodes() {
  static const std::vector<std::string> e{"Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz",
                                          "C4",  "T4",  "T5", "P3", "Pz", "P4", "T6", "O1", "O2"};
  return e;
}

// ---------------------------------------------------------------------------
// Butterworth band-pass
// ---------------------------------------------------------------------------

/// Second-order section in direct form II transposed, a0 normalised to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

/// Digital Butterworth band-pass of prototype order `order` (2*order poles)
/// designed by bilinear transform with pre-warped edges. Returns `order`
/// sections; each has numerator zeros at z = +1 and z = -1.
inline std::vector<Biquad> butterworth_bandpass(int order, double lo, double hi, double fs) {
  if (order < 1) throw ConfigError("butterworth: order must be >= 1");
  if (!(lo > 0.0 && lo < hi && hi < fs / 2.0))
    throw ConfigError("butterworth: need 0 < lo < hi < fs/2 (lo=" + std::to_string(lo) + ", hi=" + std::to_string(hi) +
                      ", fs=" + std::to_string(fs) + ")");
  using cd = std::complex<double>;
  const double fs2 = 2.0 * fs;
  const double w1 = fs2 * std::tan(std::numbers::pi * lo / fs);
  const double w2 = fs2 * std::tan(std::numbers::pi * hi / fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // Analog band-pass poles from the low-pass prototype poles.
  std::vector<cd> analog;
  for (int k = 0; k < order; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order);
    const cd p = std::polar(1.0, theta);
    const cd half = p * bw / 2.0;
    const cd root = std::sqrt(half * half - w0sq);
    analog.push_back(half + root);
    analog.push_back(half - root);
  }
  // Gain: k_a = bw^order; bilinear maps order zeros at s=0 to z=1 and the
  // remaining order zeros at infinity to z=-1.
  cd gain = std::pow(bw, order) * std::pow(fs2, order);
  std::vector<cd> digital;
  for (const cd& s : analog) {
    gain /= (fs2 - s);
    digital.push_back((fs2 + s) / (fs2 - s));
  }
  std::vector<cd> upper;
  for (const cd& z : digital)
    if (z.imag() > 0.0) upper.push_back(z);
  if (static_cast<int>(upper.size()) != order) throw NumericError("butterworth: unexpected real poles in band-pass design");
  std::sort(upper.begin(), upper.end(), [](const cd& a, const cd& b) { return std::abs(a) < std::abs(b); });

  std::vector<Biquad> sos;
  for (std::size_t i = 0; i < upper.size(); ++i) {
    Biquad q;
    q.b0 = 1.0;
    q.b1 = 0.0;
    q.b2 = -1.0;
    q.a1 = -2.0 * upper[i].real();
    q.a2 = std::norm(upper[i]);
    sos.push_back(q);
  }
  const double g = gain.real();
  sos[0].b0 *= g;
  sos[0].b1 *= g;
  sos[0].b2 *= g;
  return sos;
}

/// Steady-state initial conditions of each section for a unit-step input,
/// scaled by the DC gain of the preceding sections.
inline std::vector<std::array<double, 2>> sos_step_state(const std::vector<Biquad>& sos) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double scale = 1.0;
  for (std::size_t i = 0; i < sos.size(); ++i) {
    const auto& q = sos[i];
    const double den = 1.0 + q.a1 + q.a2;
    const double z1 = (q.b1 + q.b2 - q.b0 * (q.a1 + q.a2)) / den;
    const double z2 = q.b2 - q.a2 * (q.b0 + z1);
    zi[i] = {scale * z1, scale * z2};
    scale *= (q.b0 + q.b1 + q.b2) / den;
  }
  return zi;
}

/// Runs the cascade in place with the given section states (updated).
inline void sos_filter(const std::vector<Biquad>& sos, std::span<double> x, std::vector<std::array<double, 2>>& z) {
  for (double& v : x) {
    double s = v;
    for (std::size_t i = 0; i < sos.size(); ++i) {
      const auto& q = sos[i];
      const double y = q.b0 * s + z[i][0];
      z[i][0] = q.b1 * s - q.a1 * y + z[i][1];
      z[i][1] = q.b2 * s - q.a2 * y;
      s = y;
    }
    v = s;
  }
}

/// Zero-phase forward-backward filtering with odd-reflection padding of
/// 3*(2*sections+1) samples and step-response initial states.
inline std::vector<double> sos_filtfilt(const std::vector<Biquad>& sos, std::span<const double> x) {
  const std::size_t n = x.size();
  const std::size_t padlen = 3 * (2 * sos.size() + 1);
  if (n <= padlen) throw ConfigError("filtfilt: signal length " + std::to_string(n) + " must exceed " + std::to_string(padlen));
  std::vector<double> ext(n + 2 * padlen);
  for (std::size_t i = 0; i < padlen; ++i) ext[i] = 2.0 * x[0] - x[padlen - i];
  std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(padlen));
  for (std::size_t i = 0; i < padlen; ++i) ext[padlen + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

  const auto zi = sos_step_state(sos);
  auto z = zi;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = {zi[i][0] * ext.front(), zi[i][1] * ext.front()};
  sos_filter(sos, ext, z);
  std::reverse(ext.begin(), ext.end());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = {zi[i][0] * ext.front(), zi[i][1] * ext.front()};
  sos_filter(sos, ext, z);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(padlen), ext.begin() + static_cast<std::ptrdiff_t>(padlen + n)};
}

inline constexpr int kDefaultFilterOrder = 4;

/// Zero-phase Butterworth band-pass of every channel.
inline RawRecording bandpass(const RawRecording& x, double lo, double hi, int order = kDefaultFilterOrder) {
  const auto sos = butterworth_bandpass(order, lo, hi, x.fs);
  RawRecording y = x;
  for (std::size_t c = 0; c < x.data.channels; ++c) {
    auto f = sos_filtfilt(sos, x.data.row(c));
    std::copy(f.begin(), f.end(), y.data.row(c).begin());
  }
  return y;
}

// ---------------------------------------------------------------------------
// Rational resampling
// ---------------------------------------------------------------------------

// Kernel spans this many taps at the lower of the two sample rates.
inline constexpr int kResampleTaps = 64;

/// Band-limited rational resampling with a Blackman-windowed sinc polyphase
/// kernel. Output length is floor(L * fs_out / fs_in). Both rates must be
/// integral; fs_in == fs_out returns the input unchanged.
inline RawRecording resample(const RawRecording& x, double fs_out) {
  if (!(x.fs > 0.0 && fs_out > 0.0)) throw ConfigError("resample: rates must be positive");
  if (x.fs == fs_out) return x;
  if (x.fs != std::floor(x.fs) || fs_out != std::floor(fs_out))
    throw ConfigError("resample: rates must be whole numbers of Hz");
  const auto fin = static_cast<std::uint64_t>(x.fs);
  const auto fout = static_cast<std::uint64_t>(fs_out);
  const std::uint64_t g = std::gcd(fin, fout);
  const std::uint64_t up = fout / g, down = fin / g;
  const double fc = std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const double half_width = (kResampleTaps / 2) / fc;  // input samples
  const long K = static_cast<long>(std::ceil(half_width));

  // taps[phase][k + K] weights x[base + k] where base = floor(n*down/up).
  std::vector<std::vector<double>> taps(up, std::vector<double>(static_cast<std::size_t>(2 * K + 1), 0.0));
  for (std::uint64_t ph = 0; ph < up; ++ph) {
    double total = 0.0;
    for (long k = -K; k <= K; ++k) {
      const double tau = static_cast<double>(k) - static_cast<double>(ph) / static_cast<double>(up);
      if (std::abs(tau) >= half_width) continue;
      const double arg = fc * tau;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double u = tau / half_width;
      const double win = 0.42 + 0.5 * std::cos(std::numbers::pi * u) + 0.08 * std::cos(2.0 * std::numbers::pi * u);
      const double v = fc * sinc * win;
      taps[ph][static_cast<std::size_t>(k + K)] = v;
      total += v;
    }
    for (double& v : taps[ph]) v /= total;
  }

  const std::size_t n_in = x.data.length;
  const std::size_t n_out = static_cast<std::size_t>((static_cast<std::uint64_t>(n_in) * up) / down);
  RawRecording y = x;
  y.fs = fs_out;
  y.data = SignalMatrix(x.data.channels, n_out);
  const long N = static_cast<long>(n_in);
  auto reflect = [N](long i) {
    if (N == 1) return 0L;
    while (i < 0 || i >= N) i = i < 0 ? -i : 2 * (N - 1) - i;
    return i;
  };
  for (std::size_t c = 0; c < x.data.channels; ++c) {
    const auto src = x.data.row(c);
    auto dst = y.data.row(c);
    for (std::size_t n = 0; n < n_out; ++n) {
      const std::uint64_t pos = static_cast<std::uint64_t>(n) * down;
      const long base = static_cast<long>(pos / up);
      const auto& t = taps[pos % up];
      double s = 0.0;
      if (base - K >= 0 && base + K < N) {
        const double* xs = src.data() + (base - K);
        for (std::size_t k = 0; k < t.size(); ++k) s += t[k] * xs[k];
      } else {
        for (long k = -K; k <= K; ++k) s += t[static_cast<std::size_t>(k + K)] * src[static_cast<std::size_t>(reflect(base + k))];
      }
      dst[n] = s;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Rescaling, montage, segmentation
// ---------------------------------------------------------------------------

/// Per-channel min-max to [0, 1]; constant channels become zeros.
inline RawRecording minmax_rescale(const RawRecording& x) {
  RawRecording y = x;
  for (std::size_t c = 0; c < y.data.channels; ++c) {
    auto r = y.data.row(c);
    if (r.empty()) continue;
    const auto [mn, mx] = std::minmax_element(r.begin(), r.end());
    const double lo = *mn, range = *mx - *mn;
    if (range == 0.0) {
      std::fill(r.begin(), r.end(), 0.0);
      continue;
    }
    for (double& v : r) v = (v - lo) / range;
  }
  return y;
}

/// Channel i of the output is channel(A_i) - channel(B_i). Output channel
/// names are "A-B".
inline RawRecording bipolar_convert(const RawRecording& x, const Montage& montage) {
  RawRecording y = x;
  y.data = SignalMatrix(montage.size(), x.data.length);
  y.electrode_names.clear();
  for (std::size_t i = 0; i < montage.size(); ++i) {
    const auto& [a, b] = montage[i];
    const std::size_t ia = x.channel_index(a), ib = x.channel_index(b);
    if (ia >= x.electrode_names.size() || ib >= x.electrode_names.size())
      throw ConfigError("montage: unknown electrode '" + (ia >= x.electrode_names.size() ? a : b) + "'");
    const auto ra = x.data.row(ia);
    const auto rb = x.data.row(ib);
    auto out = y.data.row(i);
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = ra[t] - rb[t];
    y.electrode_names.push_back(a + "-" + b);
  }
  return y;
}

/// Consecutive non-overlapping windows of `len` samples; the trailing
/// remainder is dropped.
inline std::vector<Segment> segment_samples(const RawRecording& x, std::size_t len) {
  if (len == 0) throw ConfigError("segment: window length must be positive");
  std::vector<Segment> out;
  const std::size_t n = x.data.length / len;
  for (std::size_t s = 0; s < n; ++s) {
    Segment seg;
    seg.data = SignalMatrix(x.data.channels, len);
    for (std::size_t c = 0; c < x.data.channels; ++c) {
      const auto src = x.data.row(c).subspan(s * len, len);
      std::copy(src.begin(), src.end(), seg.data.row(c).begin());
    }
    seg.label = x.label;
    seg.patient_id = x.patient_id;
    seg.group_id = x.group_id;
    seg.hour_index = x.hour_index;
    seg.segment_index = static_cast<int>(s);
    out.push_back(std::move(seg));
  }
  return out;
}

/// n-minute windows: L = n * fs * 60 samples.
inline std::vector<Segment> segment(const RawRecording& x, int n_minutes) {
  if (n_minutes <= 0) throw ConfigError("segment: n_minutes must be positive");
  return segment_samples(x, static_cast<std::size_t>(std::llround(n_minutes * x.fs * 60.0)));
}

struct PipelineConfig {
  double lo_hz = 0.5;
  double hi_hz = 35.0;
  int order = kDefaultFilterOrder;
  double fs_out = 100.0;
  Montage montage = double_banana();
};

/// bandpass -> resample -> min-max rescale -> bipolar, in that fixed order.
/// Bipolar differences of [0,1] channels lie in [-1, 1].
inline RawRecording preprocess(const RawRecording& raw, const PipelineConfig& cfg = {}) {
  return bipolar_convert(minmax_rescale(resample(bandpass(raw, cfg.lo_hz, cfg.hi_hz, cfg.order), cfg.fs_out)),
                         cfg.montage);
}

}  // namespace biax
