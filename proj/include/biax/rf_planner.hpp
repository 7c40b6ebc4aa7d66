#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "biax/error.hpp"

namespace biax::rf {

struct ConvLayer {
  std::size_t kernel = 1;   // h, samples
  std::size_t stride = 1;   // s, samples
  std::size_t padding = 0;  // p, samples
  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct ConvStackSpec {
  std::vector<ConvLayer> layers;
  std::size_t input_len = 0;  // L, samples
  double fs = 100.0;          // Hz

  static ConvStackSpec from_lists(const std::vector<std::size_t>& kernels, const std::vector<std::size_t>& strides,
                                  std::size_t input_len, double fs = 100.0) {
    if (kernels.size() != strides.size()) throw ConfigError("conv stack: kernel and stride lists differ in length");
    ConvStackSpec s;
    s.input_len = input_len;
    s.fs = fs;
    for (std::size_t i = 0; i < kernels.size(); ++i) s.layers.push_back({kernels[i], strides[i], 0});
    return s;
  }
};

struct StackReport {
  std::vector<std::size_t> tokens;  // o_i
  std::vector<std::uint64_t> jump;  // j_i
  std::vector<std::uint64_t> field; // r_i
  double field_seconds = 0.0;
};

namespace detail {
inline void check_layers(const ConvStackSpec& spec) {
  if (spec.layers.empty()) throw ConfigError("conv stack has no layers");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kernel < 1 || l.stride < 1)
      throw ConfigError("conv stack layer " + std::to_string(i + 1) + ": kernel and stride must be >= 1");
  }
}
}  // namespace detail

/// o_i = floor((o_{i-1} + 2p - h) / s) + 1, o_0 = L.
inline std::vector<std::size_t> layer_outputs(const ConvStackSpec& spec) {
  detail::check_layers(spec);
  std::vector<std::size_t> out;
  std::size_t o = spec.input_len;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (o + 2 * l.padding < l.kernel)
      throw ConfigError("infeasible conv stack: layer " + std::to_string(i + 1) + " (kernel " +
                        std::to_string(l.kernel) + ") receives only " + std::to_string(o) + " samples");
    o = (o + 2 * l.padding - l.kernel) / l.stride + 1;
    out.push_back(o);
  }
  return out;
}

/// j_i = j_{i-1} * s_i, j_0 = 1.
inline std::vector<std::uint64_t> cumulative_jump(const ConvStackSpec& spec) {
  detail::check_layers(spec);
  std::vector<std::uint64_t> out;
  std::uint64_t j = 1;
  for (const auto& l : spec.layers) out.push_back(j *= l.stride);
  return out;
}

/// r_i = r_{i-1} + (h_i - 1) * j_{i-1}, r_0 = 1.
inline std::vector<std::uint64_t> receptive_field(const ConvStackSpec& spec) {
  detail::check_layers(spec);
  std::vector<std::uint64_t> out;
  std::uint64_t r = 1, j = 1;
  for (const auto& l : spec.layers) {
    r += (l.kernel - 1) * j;
    j *= l.stride;
    out.push_back(r);
  }
  return out;
}

/// Product form: r_l = 1 + sum_i (h_i - 1) * prod_{k<i} s_k. Same value as the
/// recursion, computed independently.
inline std::uint64_t receptive_field_product_form(const ConvStackSpec& spec) {
  detail::check_layers(spec);
  std::uint64_t r = 1;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    std::uint64_t prod = 1;
    for (std::size_t k = 0; k < i; ++k) prod *= spec.layers[k].stride;
    r += (spec.layers[i].kernel - 1) * prod;
  }
  return r;
}

/// T = floor((L - D) / s) + 1 for sliding patches of width D.
inline std::size_t patch_count(std::size_t L, std::size_t D, std::size_t s) {
  if (s < 1) throw ConfigError("patch_count: stride must be >= 1");
  if (L < D) throw ConfigError("patch_count: length " + std::to_string(L) + " shorter than patch " + std::to_string(D));
  return (L - D) / s + 1;
}

inline StackReport report(const ConvStackSpec& spec) {
  StackReport r;
  r.tokens = layer_outputs(spec);
  r.jump = cumulative_jump(spec);
  r.field = receptive_field(spec);
  r.field_seconds = static_cast<double>(r.field.back()) / spec.fs;
  return r;
}

// Receptive-field sweep stacks and the (r, j, o) values printed for them in
// the reference sweep table. For the 20/15/10/5 s columns the printed r and j
// disagree with the recursion; rf-calc reports the computed values and notes
// the mismatch.
struct ReferenceStack {
  std::string label;
  std::vector<std::size_t> kernels;
  std::vector<std::size_t> strides;
  std::uint64_t r;
  std::uint64_t j;
  std::size_t o;
};

inline const std::vector<ReferenceStack>& reference_sweep() {
  static const std::vector<ReferenceStack> table{
      {"30 secs", {10, 5, 5, 5, 5, 3, 3}, {5, 3, 3, 3, 2, 3, 3}, 2970, 2430, 12},
      {"20 secs", {10, 5, 5, 5, 5, 3, 3}, {5, 4, 3, 2, 2, 3, 3}, 2160, 2750, 13},
      {"15 secs", {10, 5, 5, 5, 5, 3, 3}, {5, 3, 3, 2, 2, 3, 3}, 1620, 2070, 18},
      {"10 secs", {10, 5, 5, 5, 3, 3, 3}, {5, 2, 2, 2, 3, 3, 3}, 1080, 1190, 27},
      {"5 secs", {10, 5, 5, 5, 3, 3, 3}, {5, 3, 2, 2, 2, 2, 2}, 480, 1050, 61},
  };
  return table;
}

inline std::optional<ReferenceStack> find_reference(const ConvStackSpec& spec) {
  for (const auto& p : reference_sweep()) {
    if (p.kernels.size() != spec.layers.size()) continue;
    bool match = true;
    for (std::size_t i = 0; i < p.kernels.size() && match; ++i)
      match = spec.layers[i] == ConvLayer{p.kernels[i], p.strides[i], 0};
    if (match) return p;
  }
  return std::nullopt;
}

}  // namespace biax::rf
