#pragma once

// DCK1 checkpoint layout (little-endian):
//   "DCK1", u16 version,
//   ModelConfig: u32 d_in_img, u32 d_in_txt, u32 d_map, u32 n_blocks,
//                u32 n_heads, u32 bottleneck_ratio, f64 lambda_init,
//                f64 sigma_scale, u32 n_classes,
//                u8 use_acar, u8 use_dfa, u8 use_sai, u8 use_lp,
//   u32 tensor count, then named tensor records (see serialize.hpp) in
//   DarcModel::parameters() order.
//
// DPR1 prototype file: "DPR1", u16 version, u32 tensor count (1), one
// record named "prototypes" of shape [n_classes x d_map].

#include <cmath>
#include <string>
#include <vector>

#include "darc/model.hpp"
#include "darc/serialize.hpp"

namespace darc {

inline constexpr std::string_view kCheckpointMagic = "DCK1";
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::string_view kPrototypeMagic = "DPR1";
inline constexpr std::uint16_t kPrototypeVersion = 1;

namespace detail {

inline void write_config(io::ByteWriter& w, const ModelConfig& c) {
  w.u32(c.d_in_img);
  w.u32(c.d_in_txt);
  w.u32(c.d_map);
  w.u32(c.n_blocks);
  w.u32(c.n_heads);
  w.u32(c.bottleneck_ratio);
  w.f64(c.lambda_init);
  w.f64(c.sigma_scale);
  w.u32(c.n_classes);
  w.u8(c.use_acar);
  w.u8(c.use_dfa);
  w.u8(c.use_sai);
  w.u8(c.use_lp);
}

inline bool read_flag(io::ByteReader& r, const char* name) {
  const auto v = r.u8();
  if (v > 1) throw FormatError(FormatErrorKind::kSchemaMismatch, std::string("checkpoint flag ") + name + " is not 0/1");
  return v == 1;
}

inline ModelConfig read_config(io::ByteReader& r) {
  ModelConfig c;
  c.d_in_img = r.u32();
  c.d_in_txt = r.u32();
  c.d_map = r.u32();
  c.n_blocks = r.u32();
  c.n_heads = r.u32();
  c.bottleneck_ratio = r.u32();
  c.lambda_init = r.f64();
  c.sigma_scale = r.f64();
  c.n_classes = r.u32();
  c.use_acar = read_flag(r, "use_acar");
  c.use_dfa = read_flag(r, "use_dfa");
  c.use_sai = read_flag(r, "use_sai");
  c.use_lp = read_flag(r, "use_lp");
  return c;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const DarcModel& model) {
  io::ByteWriter w;
  w.bytes(kCheckpointMagic);
  w.u16(kCheckpointVersion);
  detail::write_config(w, model.config);
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) io::write_tensor_record(w, p.name, p.tensor);
  return w.take();
}

inline DarcModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "checkpoint");
  io::expect_magic(r, kCheckpointMagic, "checkpoint");
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion, "checkpoint version " + std::to_string(version));
  }
  const ModelConfig cfg = detail::read_config(r);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::kSchemaMismatch, std::string("checkpoint carries an invalid config: ") + e.what());
  }
  DarcModel model = DarcModel::create_empty(cfg);
  auto params = model.parameters();
  const auto count = r.u32();
  if (count != params.size()) {
    throw FormatError(FormatErrorKind::kSchemaMismatch, "checkpoint has " + std::to_string(count) +
                                                            " tensors, config implies " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    io::TensorRecord rec = io::read_tensor_record(r);
    if (rec.name != p.name || rec.tensor.shape() != p.tensor.shape()) {
      throw FormatError(FormatErrorKind::kSchemaMismatch, "checkpoint tensor " + rec.name + " " +
                                                              shape_str(rec.tensor.shape()) + " where " + p.name + " " +
                                                              shape_str(p.tensor.shape()) + " was expected");
    }
    auto src = rec.tensor.values();
    std::copy(src.begin(), src.end(), p.tensor.values().begin());
  }
  r.expect_end();
  return model;
}

inline void save_checkpoint(const DarcModel& model, const std::string& path) {
  io::write_file(path, encode_checkpoint(model));
}

inline DarcModel load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

inline std::vector<std::uint8_t> encode_prototypes(const Tensor& prototypes) {
  if (prototypes.rank() != 2) {
    throw DimensionError("prototypes must be [n_classes x d_map], got " + shape_str(prototypes.shape()));
  }
  io::ByteWriter w;
  w.bytes(kPrototypeMagic);
  w.u16(kPrototypeVersion);
  w.u32(1);
  io::write_tensor_record(w, "prototypes", prototypes);
  return w.take();
}

inline Tensor decode_prototypes(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "prototype file");
  io::expect_magic(r, kPrototypeMagic, "prototype file");
  const auto version = r.u16();
  if (version != kPrototypeVersion) {
    throw FormatError(FormatErrorKind::kUnsupportedVersion, "prototype file version " + std::to_string(version));
  }
  if (r.u32() != 1) throw FormatError(FormatErrorKind::kSchemaMismatch, "prototype file must hold exactly one tensor");
  io::TensorRecord rec = io::read_tensor_record(r);
  r.expect_end();
  if (rec.name != "prototypes" || rec.tensor.rank() != 2) {
    throw FormatError(FormatErrorKind::kSchemaMismatch,
                      "prototype file must hold a rank-2 tensor named \"prototypes\", got " + rec.name + " " +
                          shape_str(rec.tensor.shape()));
  }
  for (double v : rec.tensor.values()) {
    if (!std::isfinite(v)) throw FormatError(FormatErrorKind::kNonFinite, "prototype file contains NaN/Inf");
  }
  return rec.tensor;
}

inline void save_prototypes(const Tensor& prototypes, const std::string& path) {
  io::write_file(path, encode_prototypes(prototypes));
}

inline Tensor load_prototypes(const std::string& path) { return decode_prototypes(io::read_file(path)); }

}  // namespace darc
