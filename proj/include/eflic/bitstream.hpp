#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eflic/codebook.hpp"
#include "eflic/common.hpp"
#include "eflic/latent.hpp"

namespace eflic {

inline constexpr std::size_t kLatentStride = 16;  // f_y
inline constexpr std::size_t kHyperStride = 64;   // f_z
inline constexpr std::uint32_t kMaxExtent = (1u << 14) - 1;
inline constexpr std::uint32_t kMaxQ = 15;

/// 32-bit stream header: H (14 bits) | W (14 bits) | q (4 bits), MSB first.
struct StreamHeader {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t q = 0;

  void validate() const {
    if (height < 1 || height > kMaxExtent || width < 1 || width > kMaxExtent) {
      throw InvalidArgument("header extent " + std::to_string(height) + "x" + std::to_string(width) +
                            " outside [1, 16383]");
    }
    if (q > kMaxQ) throw InvalidArgument("header q=" + std::to_string(q) + " exceeds 15");
  }

  friend bool operator==(const StreamHeader&, const StreamHeader&) = default;
};

// q carries m - 1, so the 4-bit field addresses m = 1..16.
inline std::uint32_t q_from_stages(std::size_t m) {
  if (m < 1 || m > kMaxQ + 1) throw InvalidArgument("stage count m=" + std::to_string(m) + " outside [1, 16]");
  return static_cast<std::uint32_t>(m - 1);
}

inline std::size_t stages_from_q(std::uint32_t q) { return static_cast<std::size_t>(q) + 1; }

inline std::array<std::uint8_t, 4> encode_header(const StreamHeader& h) {
  h.validate();
  const std::uint32_t v = (h.height << 18) | (h.width << 4) | h.q;
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
          static_cast<std::uint8_t>(v)};
}

inline StreamHeader decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) {
    throw FormatError("stream header truncated: need 32 bits, have " + std::to_string(8 * bytes.size()));
  }
  const std::uint32_t v = (std::uint32_t{bytes[0]} << 24) | (std::uint32_t{bytes[1]} << 16) |
                          (std::uint32_t{bytes[2]} << 8) | std::uint32_t{bytes[3]};
  StreamHeader h{v >> 18, (v >> 4) & kMaxExtent, v & 0xF};
  if (h.height == 0 || h.width == 0) throw FormatError("stream header has a zero extent");
  return h;
}

/// Index-array sizes implied by the header.
struct StreamGeometry {
  std::size_t latent_height = 0;  // ceil(H / f_y)
  std::size_t latent_width = 0;
  std::size_t group_height = 0;   // ceil(H / (2 f_y))
  std::size_t group_width = 0;
  std::size_t hyper_height = 0;   // ceil(H / f_z)
  std::size_t hyper_width = 0;

  std::size_t group_positions() const { return group_height * group_width; }
  std::size_t hyper_positions() const { return hyper_height * hyper_width; }
};

inline StreamGeometry stream_geometry(std::size_t H, std::size_t W) {
  auto up = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
  return {up(H, kLatentStride),     up(W, kLatentStride),     up(H, 2 * kLatentStride),
          up(W, 2 * kLatentStride), up(H, kHyperStride),      up(W, kHyperStride)};
}

/// Bits per index for every stage of every quantizer, in packing order.
struct PackLayout {
  std::array<std::vector<unsigned>, kGroupCount> groups;
  std::optional<std::vector<unsigned>> hyper;

  std::size_t max_stages() const { return groups[0].size(); }
};

inline std::vector<unsigned> stage_bits(const ResidualVQ& rvq) {
  std::vector<unsigned> out;
  for (const auto& cb : rvq.stages) out.push_back(cb.index_bits());
  return out;
}

inline PackLayout layout_of(const QuantizerSet& q) {
  PackLayout l;
  for (std::size_t g = 0; g < kGroupCount; ++g) l.groups[g] = stage_bits(q.groups[g]);
  if (q.hyper) l.hyper = stage_bits(*q.hyper);
  return l;
}

// Payload size before the final byte padding.
inline std::size_t payload_bits(const PackLayout& layout, const StreamGeometry& geo, std::size_t m) {
  std::size_t bits = 0;
  auto add = [&](const std::vector<unsigned>& stages, std::size_t positions) {
    if (m > stages.size()) {
      throw InvalidArgument("m=" + std::to_string(m) + " exceeds the " + std::to_string(stages.size()) +
                            " stages of the model");
    }
    for (std::size_t t = 0; t < m; ++t) bits += positions * stages[t];
  };
  if (layout.hyper) add(*layout.hyper, geo.hyper_positions());
  for (const auto& g : layout.groups) add(g, geo.group_positions());
  return bits;
}

class BitWriter {
 public:
  void put(std::uint32_t value, unsigned bits) {
    for (unsigned b = bits; b-- > 0;) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((value >> b) & 1u));
      if (++fill_ == 8) {
        bytes_.push_back(acc_);
        acc_ = 0;
        fill_ = 0;
      }
    }
    bit_count_ += bits;
  }

  std::size_t bit_count() const { return bit_count_; }

  // Zero-pads the last partial byte.
  std::vector<std::uint8_t> finish() {
    if (fill_ > 0) {
      bytes_.push_back(static_cast<std::uint8_t>(acc_ << (8 - fill_)));
      acc_ = 0;
      fill_ = 0;
    }
    return std::move(bytes_);
  }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint8_t acc_ = 0;
  unsigned fill_ = 0;
  std::size_t bit_count_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t get(unsigned bits) {
    if (pos_ + bits > 8 * bytes_.size()) {
      throw FormatError("bit read past end: need " + std::to_string(pos_ + bits) + " bits, have " +
                        std::to_string(8 * bytes_.size()));
    }
    std::uint32_t v = 0;
    for (unsigned b = 0; b < bits; ++b, ++pos_) v = (v << 1) | ((bytes_[pos_ >> 3] >> (7 - (pos_ & 7))) & 1u);
    return v;
  }

  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// Stages in codebook order, indices row-major, log2 K bits each.
inline void pack_stack(BitWriter& w, const IndexStack& stack, const std::vector<unsigned>& bits,
                       const std::string& name) {
  for (std::size_t t = 0; t < stack.m(); ++t) {
    const std::uint64_t K = std::uint64_t{1} << bits[t];
    for (std::uint32_t idx : stack.stages[t]) {
      if (idx >= K) {
        throw InvalidArgument(name + " stage " + std::to_string(t + 1) + " index " + std::to_string(idx) +
                              " >= K=" + std::to_string(K));
      }
      w.put(idx, bits[t]);
    }
  }
}

inline IndexStack unpack_stack(BitReader& r, const std::vector<unsigned>& bits, std::size_t m, std::size_t positions) {
  IndexStack s;
  s.stages.assign(m, IndexArray(positions));
  for (std::size_t t = 0; t < m; ++t)
    for (auto& idx : s.stages[t]) idx = r.get(bits[t]);
  return s;
}

struct PackedBitstream {
  StreamHeader header;
  std::vector<std::uint8_t> payload;
  std::size_t payload_bits = 0;

  // Header bytes followed by the payload.
  std::vector<std::uint8_t> bytes() const {
    const auto h = encode_header(header);
    std::vector<std::uint8_t> out(h.size() + payload.size());
    std::copy(h.begin(), h.end(), out.begin());
    std::copy(payload.begin(), payload.end(), out.begin() + h.size());
    return out;
  }
};

struct UnpackedStreams {
  StreamHeader header;
  std::optional<IndexStack> hyper;
  std::array<IndexStack, kGroupCount> groups;
};

inline PackedBitstream pack(const StreamHeader& header, const std::optional<IndexStack>& hyper,
                            std::span<const IndexStack, kGroupCount> groups, const PackLayout& layout) {
  header.validate();
  const std::size_t m = stages_from_q(header.q);
  const StreamGeometry geo = stream_geometry(header.height, header.width);
  if (layout.hyper.has_value() != hyper.has_value()) {
    throw InvalidArgument(layout.hyper ? "model has a hyperprior but no hyper indices were given"
                                       : "hyper indices given for a model without a hyperprior");
  }
  auto check = [&](const IndexStack& s, std::size_t positions, const std::string& name) {
    if (s.m() != m) {
      throw InvalidArgument(name + " has " + std::to_string(s.m()) + " stages, header q=" + std::to_string(header.q) +
                            " means m=" + std::to_string(m));
    }
    for (const auto& stage : s.stages) {
      if (stage.size() != positions) {
        throw InvalidArgument(name + " has " + std::to_string(stage.size()) + " positions, geometry needs " +
                              std::to_string(positions));
      }
    }
  };
  const std::size_t expected = payload_bits(layout, geo, m);
  BitWriter w;
  if (hyper) {
    check(*hyper, geo.hyper_positions(), "Q_z");
    pack_stack(w, *hyper, *layout.hyper, "Q_z");
  }
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const std::string name = "Q_" + std::to_string(g + 1);
    check(groups[g], geo.group_positions(), name);
    pack_stack(w, groups[g], layout.groups[g], name);
  }
  if (w.bit_count() != expected) throw Error("packed payload size disagrees with the layout");
  PackedBitstream out;
  out.header = header;
  out.payload_bits = w.bit_count();
  out.payload = w.finish();
  return out;
}

// bytes = 4 header bytes + payload.
inline UnpackedStreams unpack(std::span<const std::uint8_t> bytes, const PackLayout& layout) {
  UnpackedStreams out;
  out.header = decode_header(bytes);
  const std::size_t m = stages_from_q(out.header.q);
  const StreamGeometry geo = stream_geometry(out.header.height, out.header.width);
  const std::size_t need = payload_bits(layout, geo, m);
  const std::size_t need_bytes = (need + 7) / 8;
  const auto payload = bytes.subspan(4);
  if (payload.size() < need_bytes) {
    throw FormatError("payload truncated: expected " + std::to_string(need) + " bits (" + std::to_string(need_bytes) +
                      " bytes), got " + std::to_string(8 * payload.size()) + " bits (" +
                      std::to_string(payload.size()) + " bytes), short by " +
                      std::to_string(need_bytes - payload.size()) + " bytes");
  }
  if (payload.size() > need_bytes) {
    throw FormatError("payload has " + std::to_string(payload.size() - need_bytes) + " trailing bytes after " +
                      std::to_string(need) + " bits");
  }
  BitReader r(payload);
  if (layout.hyper) out.hyper = unpack_stack(r, *layout.hyper, m, geo.hyper_positions());
  for (std::size_t g = 0; g < kGroupCount; ++g) out.groups[g] = unpack_stack(r, layout.groups[g], m, geo.group_positions());
  return out;
}

/// Inputs of the bits-per-pixel formula.
struct BppConfig {
  std::size_t f_y = kLatentStride;
  std::size_t f_z = kHyperStride;
  std::vector<std::size_t> group_sizes;  // K_1..K_N
  std::optional<std::size_t> hyper_size;  // K_z; absent drops the hyper term
};

// (m / f_y^2) * ((f_y^2 / f_z^2) log2 K_z + (1/N) sum_i log2 K_i)
inline double compute_bpp(const BppConfig& cfg, std::size_t m) {
  detail::require(!cfg.group_sizes.empty(), "need at least one group codebook size");
  detail::require(cfg.f_y > 0 && cfg.f_z > 0, "downsampling factors must be positive");
  double groups = 0.0;
  for (std::size_t K : cfg.group_sizes) groups += detail::log2_exact(K);
  groups /= static_cast<double>(cfg.group_sizes.size());
  const double fy2 = static_cast<double>(cfg.f_y * cfg.f_y), fz2 = static_cast<double>(cfg.f_z * cfg.f_z);
  const double hyper = cfg.hyper_size ? fy2 / fz2 * detail::log2_exact(*cfg.hyper_size) : 0.0;
  return static_cast<double>(m) / fy2 * (hyper + groups);
}

inline BppConfig bpp_config_of(const QuantizerSet& q) {
  BppConfig cfg;
  for (const auto& g : q.groups) cfg.group_sizes.push_back(g.stages.front().size());
  if (q.hyper) cfg.hyper_size = q.hyper->stages.front().size();
  return cfg;
}

}  // namespace eflic
