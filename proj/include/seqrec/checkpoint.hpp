#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "seqrec/common.hpp"
#include "seqrec/models.hpp"

namespace seqrec {

// Checkpoint container, version 1. Little-endian binary:
//   magic "SEQRCKPT", u32 version, u32 sizeof(real),
//   u8 model kind, config block (fixed-width fields),
//   u32 parameter count, then per parameter:
//     u32 name length, name bytes, u32 ndims, u64 extents, raw values.
// Raw value bytes make the load/save round trip bit-exact.

namespace ckptdetail {

constexpr char kMagic[8] = {'S', 'E', 'Q', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw io_error("checkpoint: truncated file");
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  std::uint32_t n = 0;
  read_pod(is, n);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw io_error("checkpoint: truncated string");
  return s;
}

}  // namespace ckptdetail

inline void save_checkpoint(const std::string& path, const EncoderState& state,
                            const ModelConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("save_checkpoint: cannot open " + path);
  using namespace ckptdetail;
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint32_t>(sizeof(real)));
  write_pod(os, static_cast<std::uint8_t>(state.kind == ModelKind::bsarec));
  write_pod(os, static_cast<std::int32_t>(cfg.num_items));
  write_pod(os, static_cast<std::int32_t>(cfg.d));
  write_pod(os, static_cast<std::int32_t>(cfg.max_len));
  write_pod(os, static_cast<std::int32_t>(cfg.blocks));
  write_pod(os, static_cast<std::int32_t>(cfg.heads));
  write_pod(os, cfg.dropout_p);
  write_pod(os, cfg.alpha);
  write_pod(os, cfg.eps);
  write_pod(os, static_cast<std::uint8_t>(cfg.norm_first));
  write_pod(os, static_cast<std::uint8_t>(cfg.spectral.has_value()));
  write_pod(os, static_cast<std::int32_t>(cfg.spectral ? cfg.spectral->cutoff
                                                       : 0));
  write_pod(os, cfg.spectral ? cfg.spectral->beta_init : real(0));
  write_pod(os, static_cast<std::uint8_t>(cfg.spectral &&
                                          cfg.spectral->beta_per_dim));
  auto named = const_cast<EncoderState&>(state).named_parameters();
  write_pod(os, static_cast<std::uint32_t>(named.size()));
  for (auto& [name, t] : named) {
    write_string(os, name);
    write_pod(os, static_cast<std::uint32_t>(t->ndim()));
    for (std::size_t e : t->shape())
      write_pod(os, static_cast<std::uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t->values().data()),
             static_cast<std::streamsize>(t->numel() * sizeof(real)));
  }
  if (!os) throw io_error("save_checkpoint: write failed for " + path);
}

struct Checkpoint {
  ModelKind kind = ModelKind::sasrec;
  ModelConfig config;
  EncoderState state;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("load_checkpoint: cannot open " + path);
  using namespace ckptdetail;
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw io_error("load_checkpoint: " + path + " is not a checkpoint file");
  std::uint32_t version = 0, real_width = 0;
  read_pod(is, version);
  read_pod(is, real_width);
  if (version != kVersion)
    throw io_error("load_checkpoint: unsupported version " +
                   std::to_string(version));
  if (real_width != sizeof(real))
    throw io_error("load_checkpoint: checkpoint stores " +
                   std::to_string(real_width * 8) + "-bit reals, build uses " +
                   std::to_string(sizeof(real) * 8) + "-bit");

  Checkpoint ck;
  std::uint8_t kind = 0, norm_first = 0, has_spectral = 0, beta_per_dim = 0;
  std::int32_t num_items = 0, d = 0, max_len = 0, blocks = 0, heads = 0,
               cutoff = 0;
  real dropout_p = 0, alpha = 0, eps = 0, beta_init = 0;
  read_pod(is, kind);
  read_pod(is, num_items);
  read_pod(is, d);
  read_pod(is, max_len);
  read_pod(is, blocks);
  read_pod(is, heads);
  read_pod(is, dropout_p);
  read_pod(is, alpha);
  read_pod(is, eps);
  read_pod(is, norm_first);
  read_pod(is, has_spectral);
  read_pod(is, cutoff);
  read_pod(is, beta_init);
  read_pod(is, beta_per_dim);
  ck.kind = kind ? ModelKind::bsarec : ModelKind::sasrec;
  ck.config.num_items = num_items;
  ck.config.d = d;
  ck.config.max_len = max_len;
  ck.config.blocks = blocks;
  ck.config.heads = heads;
  ck.config.dropout_p = dropout_p;
  ck.config.alpha = alpha;
  ck.config.eps = eps;
  ck.config.norm_first = norm_first != 0;
  if (has_spectral) {
    SpectralConfig sc;
    sc.cutoff = cutoff;
    sc.beta_init = beta_init;
    sc.beta_per_dim = beta_per_dim != 0;
    ck.config.spectral = sc;
  }
  ck.state = init_state(ck.kind, ck.config, 0);

  std::uint32_t count = 0;
  read_pod(is, count);
  auto named = ck.state.named_parameters();
  if (count != named.size())
    throw io_error("load_checkpoint: expected " +
                   std::to_string(named.size()) + " parameters, file has " +
                   std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(is);
    if (name != named[i].first)
      throw io_error("load_checkpoint: parameter " + std::to_string(i) +
                     " is '" + name + "', expected '" + named[i].first + "'");
    std::uint32_t ndims = 0;
    read_pod(is, ndims);
    std::vector<std::size_t> shape(ndims);
    for (auto& e : shape) {
      std::uint64_t v = 0;
      read_pod(is, v);
      e = static_cast<std::size_t>(v);
    }
    Tensor* t = named[i].second;
    if (shape != t->shape())
      throw io_error("load_checkpoint: shape mismatch for '" + name + "'");
    is.read(reinterpret_cast<char*>(t->values().data()),
            static_cast<std::streamsize>(t->numel() * sizeof(real)));
    if (!is) throw io_error("load_checkpoint: truncated values for '" + name +
                            "'");
  }
  return ck;
}

}  // namespace seqrec
