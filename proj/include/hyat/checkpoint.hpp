#pragma once

#include "hyat/model.hpp"

#include <sstream>

namespace hyat {

// Checkpoint layout: "HYAT" magic, u32 format version, length-prefixed JSON
// config, tensor section (count, then per tensor: name length, name, rank,
// dims, float32 LE payload), then the SHA-256 digest of the tensor section.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename S>
void write_tensor_section(std::ostream& os, const Model<S>& m) {
  write_u32(os, std::uint32_t(m.t.size()));
  for (const auto& [name, mat] : m.t) {  // std::map: sorted, deterministic
    write_u32(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_u32(os, 2);
    write_u32(os, std::uint32_t(mat.rows()));
    write_u32(os, std::uint32_t(mat.cols()));
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      for (Eigen::Index j = 0; j < mat.cols(); ++j)
        write_f32(os, float(mat(i, j)));
  }
}

}  // namespace detail

template <typename S>
std::array<std::uint8_t, 32> tensor_digest(const Model<S>& m) {
  std::ostringstream os(std::ios::binary);
  detail::write_tensor_section(os, m);
  std::string bytes = os.str();
  Sha256 sha;
  sha.update(bytes.data(), bytes.size());
  return sha.digest();
}

// Digest restricted to a named subset (frozen-immutability checks).
template <typename S>
std::array<std::uint8_t, 32> tensor_digest(const Model<S>& m,
                                           const std::vector<std::string>& names) {
  Model<S> sub;
  sub.cfg = m.cfg;
  for (const auto& n : names) sub.t[n] = m.at(n);
  return tensor_digest(sub);
}

template <typename S>
void save_checkpoint(const Model<S>& m, const std::string& path) {
  std::ostringstream ts(std::ios::binary);
  detail::write_tensor_section(ts, m);
  std::string tensor_bytes = ts.str();
  Sha256 sha;
  sha.update(tensor_bytes.data(), tensor_bytes.size());
  auto digest = sha.digest();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw input_error("save_checkpoint: cannot open " + path);
  os.write("HYAT", 4);
  write_u32(os, kCheckpointVersion);
  std::string cfg = m.cfg.to_json().dump();
  write_u32(os, std::uint32_t(cfg.size()));
  os.write(cfg.data(), std::streamsize(cfg.size()));
  os.write(tensor_bytes.data(), std::streamsize(tensor_bytes.size()));
  os.write(reinterpret_cast<const char*>(digest.data()), 32);
  if (!os) throw input_error("save_checkpoint: write failed for " + path);
}

template <typename S>
Model<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw input_error("load_checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "HYAT")
    throw format_error("load_checkpoint: bad magic in " + path);
  std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion)
    throw format_error("load_checkpoint: unsupported version");
  std::uint32_t cfg_len = read_u32(is);
  std::string cfg_str(cfg_len, '\0');
  is.read(cfg_str.data(), cfg_len);
  if (!is) throw format_error("load_checkpoint: truncated config block");

  Model<S> m;
  m.cfg = ModelConfig::from_json(nlohmann::json::parse(cfg_str));

  Sha256 sha;
  auto hash_u32 = [&](std::uint32_t v) {
    std::uint8_t b[4] = {std::uint8_t(v), std::uint8_t(v >> 8),
                         std::uint8_t(v >> 16), std::uint8_t(v >> 24)};
    sha.update(b, 4);
    return v;
  };

  std::uint32_t count = hash_u32(read_u32(is));
  for (std::uint32_t k = 0; k < count; ++k) {
    std::uint32_t name_len = hash_u32(read_u32(is));
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw format_error("load_checkpoint: truncated tensor name");
    sha.update(name.data(), name.size());
    std::uint32_t rank = hash_u32(read_u32(is));
    if (rank != 2) throw format_error("load_checkpoint: unsupported rank");
    std::uint32_t rows = hash_u32(read_u32(is));
    std::uint32_t cols = hash_u32(read_u32(is));
    Mat<S> mat(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) {
        std::uint32_t u = hash_u32(read_u32(is));
        float f;
        std::memcpy(&f, &u, 4);
        mat(i, j) = S(f);
      }
    m.t[name] = std::move(mat);
  }

  std::array<std::uint8_t, 32> stored{};
  is.read(reinterpret_cast<char*>(stored.data()), 32);
  if (!is) throw format_error("load_checkpoint: missing digest");
  if (sha.digest() != stored)
    throw format_error("load_checkpoint: tensor digest mismatch in " + path);
  return m;
}

}  // namespace hyat
