#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>

#include "ucgs/nn/optim.hpp"
#include "ucgs/util/digest.hpp"

namespace ucgs::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'U', 'C', 'G', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned binary container: a kind tag, string metadata and named float32
/// matrices, followed by a SHA-256 of everything before it.
struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::map<std::string, Mat<float>> tensors;

  const std::string& get(const std::string& key) const {
    const auto it = meta.find(key);
    if (it == meta.end()) throw LoadError(LoadErrorKind::kMalformed, kind, "missing metadata '" + key + "'");
    return it->second;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::string& out, std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); }
inline void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

struct Reader {
  std::string_view bytes;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n) {
    if (bytes.size() - pos < n) throw LoadError(LoadErrorKind::kMalformed, path, "truncated checkpoint");
  }
  template <class U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes.data() + pos, sizeof(U));
    pos += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(bytes.substr(pos, n));
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_str(out, c.kind);
  detail::put_u64(out, c.meta.size());
  for (const auto& [k, v] : c.meta) {
    detail::put_str(out, k);
    detail::put_str(out, v);
  }
  detail::put_u64(out, c.tensors.size());
  for (const auto& [name, m] : c.tensors) {
    detail::put_str(out, name);
    detail::put_u64(out, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  out += sha256_hex(out);
  return out;
}

inline Checkpoint deserialize(std::string_view bytes, const std::string& path) {
  if (bytes.size() < sizeof kCheckpointMagic + 64 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw LoadError(LoadErrorKind::kMalformed, path, "not a checkpoint file");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 64);
  if (sha256_hex(body) != bytes.substr(bytes.size() - 64)) {
    throw LoadError(LoadErrorKind::kChecksumFailure, path, "checkpoint digest mismatch");
  }
  detail::Reader r{body, sizeof kCheckpointMagic, path};
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw LoadError(LoadErrorKind::kVersionMismatch, path,
                    "found " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  c.kind = r.str();
  const auto nmeta = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    c.meta[k] = r.str();
  }
  const auto ntensors = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < ntensors; ++i) {
    std::string name = r.str();
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    r.need(rows * cols * sizeof(float));
    Mat<float> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::memcpy(m.data(), body.data() + r.pos, rows * cols * sizeof(float));
    r.pos += rows * cols * sizeof(float);
    c.tensors.emplace(std::move(name), std::move(m));
  }
  if (r.pos != body.size()) throw LoadError(LoadErrorKind::kMalformed, path, "trailing bytes");
  return c;
}

/// Writes through a temporary file and a rename so readers never see a
/// half-written checkpoint.
inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  write_file_bytes(tmp, serialize(c));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path), path.string());
}

template <class T>
void store_params(Checkpoint& c, const ParamList<T>& params) {
  for (const Param<T>* p : params) c.tensors[p->name] = p->value.template cast<float>();
}

/// Copies every parameter from the checkpoint; names and shapes must match.
template <class T>
void load_params(const Checkpoint& c, const ParamList<T>& params, const std::string& path = "checkpoint") {
  for (Param<T>* p : params) {
    const auto it = c.tensors.find(p->name);
    if (it == c.tensors.end()) throw LoadError(LoadErrorKind::kMalformed, path, "missing tensor " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw LoadError(LoadErrorKind::kMalformed, path, "shape mismatch for " + p->name);
    }
    p->value = it->second.template cast<T>();
    p->zero_grad();
  }
}

template <class T>
void store_adam(Checkpoint& c, const Adam<T>& opt) {
  c.meta["adam.t"] = std::to_string(opt.step_count());
  for (const auto& [name, s] : opt.state()) {
    c.tensors["adam.m/" + name] = s.m.template cast<float>();
    c.tensors["adam.v/" + name] = s.v.template cast<float>();
  }
}

template <class T>
void load_adam(const Checkpoint& c, Adam<T>& opt) {
  opt.set_step_count(std::stol(c.get("adam.t")));
  opt.state().clear();
  for (const auto& [name, m] : c.tensors) {
    if (name.rfind("adam.m/", 0) != 0) continue;
    const std::string key = name.substr(7);
    const auto v = c.tensors.find("adam.v/" + key);
    if (v == c.tensors.end()) throw LoadError(LoadErrorKind::kMalformed, c.kind, "adam state incomplete for " + key);
    opt.state()[key] = {m.template cast<T>(), v->second.template cast<T>()};
  }
}

/// Digest of a matrix's float32 bytes; used to pair checkpoints.
inline std::string tensor_hash(const Mat<float>& m) {
  return sha256_hex(std::string_view(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * 4));
}

}  // namespace ucgs::nn
