#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "biax/config.hpp"
#include "biax/dataset.hpp"
#include "biax/error.hpp"
#include "biax/training.hpp"

namespace biax {

// Checkpoint layout (little-endian):
//   magic "BIAXCKP1", u32 version
//   str config echo (JSON)
//   u64 step, u64 adam_t, str rng state
//   u64 n_log, then per record: u64 step, f64 lr, f64 loss, u8 clipped
//   u32 n_blobs, then per blob: str name, u32 rank, u64 dims[rank], f64 values
// Blob names are "param/<p>", "adam_m/<p>" and "adam_v/<p>".
// str = u32 byte length + bytes.

inline constexpr char kCheckpointMagic[8] = {'B', 'I', 'A', 'X', 'C', 'K', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_f64(std::string& out, double v) { io::put_le(out, std::bit_cast<std::uint64_t>(v)); }

inline double get_f64(io::Reader& r) { return std::bit_cast<double>(r.get<std::uint64_t>()); }

inline void put_blob(std::string& out, const std::string& name, const Shape& shape, std::span<const double> v) {
  io::put_str(out, name);
  io::put_le(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) io::put_le(out, static_cast<std::uint64_t>(d));
  for (double x : v) put_f64(out, x);
}

}  // namespace detail

inline std::string encode_checkpoint(const TrainState& st, const json& config_echo) {
  std::string out(kCheckpointMagic, 8);
  io::put_le(out, kCheckpointVersion);
  io::put_str(out, config_echo.dump());
  io::put_le(out, static_cast<std::uint64_t>(st.step));
  io::put_le(out, static_cast<std::uint64_t>(st.adam.t));
  io::put_str(out, st.rng.state());
  io::put_le(out, static_cast<std::uint64_t>(st.log.size()));
  for (const auto& l : st.log) {
    io::put_le(out, static_cast<std::uint64_t>(l.step));
    detail::put_f64(out, l.lr);
    detail::put_f64(out, l.loss);
    io::put_le(out, static_cast<std::uint8_t>(l.clipped));
  }
  const auto& items = st.model.params().items();
  io::put_le(out, static_cast<std::uint32_t>(3 * items.size()));
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& [name, p] = items[k];
    detail::put_blob(out, "param/" + name, p.shape(), p.data());
    detail::put_blob(out, "adam_m/" + name, p.shape(), st.adam.m[k]);
    detail::put_blob(out, "adam_v/" + name, p.shape(), st.adam.v[k]);
  }
  return out;
}

/// Restores a TrainState for model config `mc`. Every parameter of the model
/// must be present with a matching shape.
inline TrainState decode_checkpoint(const std::string& buf, const ModelConfig& mc, const std::string& what = "checkpoint",
                                    json* config_echo = nullptr) {
  io::Reader r(buf, what);
  if (buf.size() < 8 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) throw MagicError(what + ": not a checkpoint file");
  r.bytes(8);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw VersionError(what + ": unsupported checkpoint version " + std::to_string(version));
  const std::string echo = r.str();
  if (config_echo) *config_echo = json::parse(echo, nullptr, false);
  TrainState st(mc, 0);
  st.step = r.get<std::uint64_t>();
  st.adam.t = r.get<std::uint64_t>();
  st.rng.restore(r.str());
  const auto n_log = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_log; ++i) {
    StepLog l;
    l.step = r.get<std::uint64_t>();
    l.lr = detail::get_f64(r);
    l.loss = detail::get_f64(r);
    l.clipped = r.get<std::uint8_t>() != 0;
    st.log.push_back(l);
  }
  auto& items = st.model.params().items();
  std::vector<bool> seen(3 * items.size(), false);
  const auto n_blobs = r.get<std::uint32_t>();
  for (std::uint32_t b = 0; b < n_blobs; ++b) {
    const std::string name = r.str();
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    const auto slash = name.find('/');
    const std::string kind = name.substr(0, slash), pname = slash == std::string::npos ? "" : name.substr(slash + 1);
    std::size_t k = 0;
    while (k < items.size() && items[k].first != pname) ++k;
    const int which = kind == "param" ? 0 : kind == "adam_m" ? 1 : kind == "adam_v" ? 2 : -1;
    if (k == items.size() || which < 0) throw FormatError(what + ": unexpected blob " + name);
    if (shape != items[k].second.shape())
      throw FormatError(what + ": blob " + name + " has shape " + shape_str(shape) + ", model expects " +
                        shape_str(items[k].second.shape()));
    std::span<double> dst = which == 0 ? items[k].second.mutable_data()
                                       : std::span<double>(which == 1 ? st.adam.m[k] : st.adam.v[k]);
    for (double& v : dst) v = detail::get_f64(r);
    seen[3 * k + static_cast<std::size_t>(which)] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw FormatError(what + ": missing blob for parameter " + items[i / 3].first);
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes");
  return st;
}

inline void save_checkpoint(const TrainState& st, const json& config_echo, const std::filesystem::path& path) {
  io::dump(path, encode_checkpoint(st, config_echo));
}

inline TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& mc, json* config_echo = nullptr) {
  return decode_checkpoint(io::slurp(path), mc, path.string(), config_echo);
}

}  // namespace biax
