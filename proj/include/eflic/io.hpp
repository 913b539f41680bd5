#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "eflic/bitstream.hpp"
#include "eflic/codebook.hpp"
#include "eflic/common.hpp"
#include "eflic/latent.hpp"
#include "eflic/predictor.hpp"

namespace eflic {

inline constexpr std::uint8_t kFileVersion = 1;

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed on " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed on " + path.string());
}

namespace detail {

inline float to_f32(double v, const char* what) {
  if (!std::isfinite(v) || std::abs(v) > std::numeric_limits<float>::max()) {
    throw InvalidArgument(std::string(what) + " value " + std::to_string(v) + " does not fit in float32");
  }
  return static_cast<float>(v);
}

inline void check_version(ByteReader& r, const std::string& context) {
  const std::uint8_t v = r.u8();
  if (v != kFileVersion) {
    throw FormatError(context + ": unsupported version " + std::to_string(v) + ", expected " +
                      std::to_string(kFileVersion));
  }
}

inline std::uint32_t to_u32(std::size_t v, const char* what) {
  require(v <= std::numeric_limits<std::uint32_t>::max(), std::string(what) + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// EFLT: raw latent, float32 little-endian, row-major per channel.

inline std::vector<std::uint8_t> serialize_latent(const LatentGrid& g) {
  std::vector<std::uint8_t> out;
  detail::put_magic(out, "EFLT");
  detail::put_u8(out, kFileVersion);
  detail::put_u32(out, detail::to_u32(g.channels(), "channel count"));
  detail::put_u32(out, detail::to_u32(g.height(), "height"));
  detail::put_u32(out, detail::to_u32(g.width(), "width"));
  out.reserve(out.size() + 4 * g.size());
  for (double v : g.data()) detail::put_f32(out, detail::to_f32(v, "latent"));
  return out;
}

inline LatentGrid parse_latent(std::span<const std::uint8_t> bytes, const std::string& context = "EFLT") {
  detail::ByteReader r(bytes, context);
  r.magic("EFLT");
  detail::check_version(r, context);
  const std::uint64_t c = r.u32(), h = r.u32(), w = r.u32();
  if (c == 0 || h == 0 || w == 0) throw FormatError(context + ": zero dimension in latent header");
  const std::uint64_t n = c * h * w;
  if (n > r.remaining() / 4) {
    throw FormatError(context + ": truncated, header declares " + std::to_string(n) + " floats but only " +
                      std::to_string(r.remaining() / 4) + " present");
  }
  std::vector<double> data(n);
  for (auto& v : data) {
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError(context + ": non-finite latent value");
  }
  r.expect_end();
  return LatentGrid(c, h, w, std::move(data));
}

inline LatentGrid load_latent(const std::filesystem::path& path) { return parse_latent(read_file(path), path.string()); }

inline void save_latent(const std::filesystem::path& path, const LatentGrid& g) { write_file(path, serialize_latent(g)); }

// ---------------------------------------------------------------------------
// EFCB: one residual VQ; codewords as float32.

inline std::vector<std::uint8_t> serialize_rvq(const ResidualVQ& q) {
  q.validate();
  std::vector<std::uint8_t> out;
  detail::put_magic(out, "EFCB");
  detail::put_u8(out, kFileVersion);
  detail::put_u32(out, detail::to_u32(q.max_stages(), "stage count"));
  for (const Codebook& cb : q.stages) {
    detail::put_u32(out, detail::to_u32(cb.size(), "codebook size"));
    detail::put_u32(out, detail::to_u32(cb.dim, "codeword dimension"));
    for (double v : cb.codewords.values) detail::put_f32(out, detail::to_f32(v, "codeword"));
  }
  return out;
}

inline ResidualVQ parse_rvq(std::span<const std::uint8_t> bytes, const std::string& context = "EFCB") {
  detail::ByteReader r(bytes, context);
  r.magic("EFCB");
  detail::check_version(r, context);
  const std::uint32_t stages = r.u32();
  if (stages == 0) throw FormatError(context + ": zero stages");
  ResidualVQ q;
  for (std::uint32_t t = 0; t < stages; ++t) {
    const std::uint64_t K = r.u32(), C = r.u32();
    const std::string where = context + ": stage " + std::to_string(t + 1);
    if (K == 0 || C == 0) throw FormatError(where + " has an empty codebook");
    if (!detail::is_power_of_two(K)) throw FormatError(where + " size K=" + std::to_string(K) + " is not a power of two");
    if (K * C > r.remaining() / 4) throw FormatError(where + " truncated");
    std::vector<double> words(K * C);
    for (auto& v : words) {
      v = r.f32();
      if (!std::isfinite(v)) throw FormatError(where + " has a non-finite codeword");
    }
    q.stages.emplace_back(VectorSet(C, std::move(words)));
    if (q.stages.back().dim != q.stages.front().dim) throw FormatError(where + " dimension differs from stage 1");
  }
  r.expect_end();
  return q;
}

// Codewords as they will read back from disk.
inline ResidualVQ round_to_f32(const ResidualVQ& q) { return parse_rvq(serialize_rvq(q)); }

inline QuantizerSet round_to_f32(const QuantizerSet& q) {
  QuantizerSet out;
  for (std::size_t g = 0; g < kGroupCount; ++g) out.groups[g] = round_to_f32(q.groups[g]);
  if (q.hyper) out.hyper = round_to_f32(*q.hyper);
  return out;
}

// ---------------------------------------------------------------------------
// EFPR: context predictor, float64 entries.
//   magic, version, group count (u8), hyper flag (u8), then per group:
//   rows, cols (u32) and rows*cols weights (bias last in each row),
//   rows sigma bases, rows sigma slopes, activity lo and hi; finally sigma_min.

inline std::vector<std::uint8_t> serialize_predictor(const ContextPredictor& p) {
  p.validate();
  std::vector<std::uint8_t> out;
  detail::put_magic(out, "EFPR");
  detail::put_u8(out, kFileVersion);
  detail::put_u8(out, static_cast<std::uint8_t>(kGroupCount));
  detail::put_u8(out, p.hyper ? 1 : 0);
  for (const GroupPredictor& g : p.groups) {
    detail::put_u32(out, detail::to_u32(g.channels, "predictor rows"));
    detail::put_u32(out, detail::to_u32(g.inputs + 1, "predictor columns"));
    for (double v : g.weights) detail::put_f64(out, v);
    for (double v : g.log_sigma_base) detail::put_f64(out, v);
    for (double v : g.log_sigma_slope) detail::put_f64(out, v);
    detail::put_f64(out, g.activity_lo);
    detail::put_f64(out, g.activity_hi);
  }
  detail::put_f64(out, p.sigma_min);
  return out;
}

inline ContextPredictor parse_predictor(std::span<const std::uint8_t> bytes, const std::string& context = "EFPR") {
  detail::ByteReader r(bytes, context);
  r.magic("EFPR");
  detail::check_version(r, context);
  const std::uint8_t groups = r.u8();
  if (groups != kGroupCount) {
    throw FormatError(context + ": group count " + std::to_string(groups) + ", expected " + std::to_string(kGroupCount));
  }
  const std::uint8_t flag = r.u8();
  if (flag > 1) throw FormatError(context + ": bad hyperprior flag");
  ContextPredictor p;
  p.hyper = flag == 1;
  auto read_f64s = [&](std::size_t n, std::vector<double>& dst) {
    if (n > r.remaining() / 8) throw FormatError(context + ": truncated predictor matrix");
    dst.resize(n);
    for (auto& v : dst) v = r.f64();
  };
  for (GroupPredictor& g : p.groups) {
    const std::size_t rows = r.u32(), cols = r.u32();
    if (rows == 0 || cols == 0) throw FormatError(context + ": empty predictor matrix");
    g.channels = rows;
    g.inputs = cols - 1;
    read_f64s(rows * cols, g.weights);
    read_f64s(rows, g.log_sigma_base);
    read_f64s(rows, g.log_sigma_slope);
    g.activity_lo = r.f64();
    g.activity_hi = r.f64();
  }
  p.sigma_min = r.f64();
  r.expect_end();
  try {
    p.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(context + ": " + e.what());
  }
  return p;
}

// ---------------------------------------------------------------------------
// EFBS: magic, version, then the 32-bit stream header and payload.

inline std::vector<std::uint8_t> serialize_bitstream(const PackedBitstream& b) {
  std::vector<std::uint8_t> out;
  detail::put_magic(out, "EFBS");
  detail::put_u8(out, kFileVersion);
  const auto wire = b.bytes();
  out.insert(out.end(), wire.begin(), wire.end());
  return out;
}

// Returns the wire bytes (header + payload) inside an EFBS file.
inline std::span<const std::uint8_t> bitstream_wire(std::span<const std::uint8_t> file,
                                                    const std::string& context = "EFBS") {
  detail::ByteReader r(file, context);
  r.magic("EFBS");
  detail::check_version(r, context);
  return file.subspan(5);
}

}  // namespace eflic
