#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "eflic/common.hpp"

namespace eflic {

/// Quantized symbol frequencies summing to exactly 2^precision.
struct FrequencyTable {
  unsigned precision = 0;
  std::vector<std::uint32_t> freq;
  std::vector<std::uint32_t> cum;  // cum[s] = sum of freq[0..s), size freq.size() + 1

  std::size_t symbols() const { return freq.size(); }
  std::uint32_t total() const { return std::uint32_t{1} << precision; }

  // Symbol whose interval [cum[s], cum[s+1]) holds slot.
  std::uint32_t lookup(std::uint32_t slot) const {
    auto it = std::upper_bound(cum.begin(), cum.end(), slot);
    return static_cast<std::uint32_t>(std::distance(cum.begin(), it) - 1);
  }

  double bits(std::uint32_t s) const {
    return static_cast<double>(precision) - std::log2(static_cast<double>(freq[s]));
  }
};

inline constexpr unsigned kMinPrecision = 8;
inline constexpr unsigned kMaxPrecision = 16;

// Proportional scaling to 2^precision with largest-remainder rounding (ties to
// the lower symbol). Symbols that round to zero are raised to 1, taking the
// mass from the largest bin.
inline FrequencyTable normalize_frequencies(std::span<const double> raw, unsigned precision) {
  detail::require(precision >= kMinPrecision && precision <= kMaxPrecision,
                  "precision must lie in [8, 16], got " + std::to_string(precision));
  const std::uint64_t total_slots = std::uint64_t{1} << precision;
  detail::require(!raw.empty() && raw.size() <= total_slots, "symbol count must lie in [1, 2^precision]");
  double sum = 0.0;
  for (double r : raw) {
    detail::require(std::isfinite(r) && r >= 0.0, "raw frequencies must be finite and non-negative");
    sum += r;
  }
  if (!(sum > 0.0)) throw InvalidArgument("cannot normalize an all-zero frequency vector");

  const std::size_t n = raw.size();
  FrequencyTable t;
  t.precision = precision;
  t.freq.resize(n);
  std::vector<double> rem(n);
  std::uint64_t assigned = 0;
  for (std::size_t s = 0; s < n; ++s) {
    const double scaled = raw[s] / sum * static_cast<double>(total_slots);
    const double fl = std::floor(scaled);
    t.freq[s] = static_cast<std::uint32_t>(fl);
    rem[s] = scaled - fl;
    assigned += t.freq[s];
  }
  if (assigned < total_slots) {
    const std::size_t deficit = static_cast<std::size_t>(total_slots - assigned);
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(deficit, n)), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) { return rem[a] != rem[b] ? rem[a] > rem[b] : a < b; });
    // deficit <= n always holds up to rounding in the floor sum.
    for (std::size_t k = 0; k < deficit; ++k) ++t.freq[order[k % n]];
  } else {
    // Floating-point overshoot: shave from the largest bins.
    std::uint64_t excess = assigned - total_slots;
    while (excess > 0) {
      auto it = std::max_element(t.freq.begin(), t.freq.end());
      --*it;
      --excess;
    }
  }

  std::size_t zeros = 0;
  for (auto& f : t.freq) {
    if (f == 0) {
      f = 1;
      ++zeros;
    }
  }
  while (zeros > 0) {
    auto it = std::max_element(t.freq.begin(), t.freq.end());
    detail::require(*it > 1, "too many symbols to give each a nonzero frequency");
    const std::size_t take = std::min<std::size_t>(zeros, *it - 1);
    *it -= static_cast<std::uint32_t>(take);
    zeros -= take;
  }

  t.cum.resize(n + 1);
  t.cum[0] = 0;
  for (std::size_t s = 0; s < n; ++s) t.cum[s + 1] = t.cum[s] + t.freq[s];
  if (t.cum[n] != total_slots) throw Error("internal: frequency table does not sum to 2^precision");
  return t;
}

/// Entropy-coded symbols: final encoder state plus renormalization bytes in decode order.
struct RansStream {
  std::uint32_t symbol_count = 0;
  std::uint32_t final_state = 0;
  std::vector<std::uint8_t> payload;

  // Coded size: the 4-byte state plus the renormalization bytes.
  std::size_t coded_bytes() const { return 4 + payload.size(); }
  double coded_bits() const { return 8.0 * static_cast<double>(coded_bytes()); }

  friend bool operator==(const RansStream&, const RansStream&) = default;
};

// Lower bound of the normalized state interval [L, 256 L).
inline constexpr std::uint32_t kRansLower = 1u << 16;

// Symbols are encoded last-to-first so the decoder emits them in order.
inline RansStream rans_encode(std::span<const std::uint32_t> symbols, std::span<const FrequencyTable* const> tables) {
  detail::require(symbols.size() == tables.size(), "one frequency table per symbol is required");
  detail::require(symbols.size() <= 0xFFFFFFFFu, "too many symbols for one stream");
  unsigned precision = tables.empty() ? 0 : tables.front()->precision;
  std::vector<std::uint8_t> reversed;
  std::uint64_t x = kRansLower;
  for (std::size_t i = symbols.size(); i-- > 0;) {
    const FrequencyTable& t = *tables[i];
    if (t.precision != precision) throw InvalidArgument("frequency tables in one stream must share the precision");
    const std::uint32_t s = symbols[i];
    if (s >= t.symbols() || t.freq[s] == 0) {
      throw InvalidArgument("symbol " + std::to_string(s) + " at position " + std::to_string(i) +
                            " has zero frequency in its table");
    }
    const std::uint64_t f = t.freq[s];
    const std::uint64_t x_max = ((std::uint64_t{kRansLower} >> precision) << 8) * f;
    while (x >= x_max) {
      reversed.push_back(static_cast<std::uint8_t>(x & 0xFF));
      x >>= 8;
    }
    x = ((x / f) << precision) + (x % f) + t.cum[s];
  }
  RansStream out;
  out.symbol_count = static_cast<std::uint32_t>(symbols.size());
  out.final_state = static_cast<std::uint32_t>(x);
  out.payload.assign(reversed.rbegin(), reversed.rend());
  return out;
}

inline RansStream rans_encode(std::span<const std::uint32_t> symbols, std::span<const FrequencyTable> tables) {
  std::vector<const FrequencyTable*> ptrs(tables.size());
  for (std::size_t i = 0; i < tables.size(); ++i) ptrs[i] = &tables[i];
  return rans_encode(symbols, std::span<const FrequencyTable* const>(ptrs));
}

inline std::vector<std::uint32_t> rans_decode(const RansStream& stream,
                                              std::span<const FrequencyTable* const> tables) {
  if (tables.size() != stream.symbol_count) {
    throw InvalidArgument("stream holds " + std::to_string(stream.symbol_count) + " symbols but " +
                          std::to_string(tables.size()) + " tables were supplied");
  }
  std::vector<std::uint32_t> out(stream.symbol_count);
  std::uint64_t x = stream.final_state;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const FrequencyTable& t = *tables[i];
    const std::uint32_t mask = t.total() - 1;
    const std::uint32_t slot = static_cast<std::uint32_t>(x & mask);
    const std::uint32_t s = t.lookup(slot);
    x = std::uint64_t{t.freq[s]} * (x >> t.precision) + slot - t.cum[s];
    while (x < kRansLower) {
      if (pos >= stream.payload.size()) throw FormatError("rANS payload exhausted at symbol " + std::to_string(i));
      x = (x << 8) | stream.payload[pos++];
    }
    out[i] = s;
  }
  if (x != kRansLower || pos != stream.payload.size()) {
    throw FormatError("rANS stream did not return to its initial state; tables do not match the encoder");
  }
  return out;
}

inline std::vector<std::uint32_t> rans_decode(const RansStream& stream, std::span<const FrequencyTable> tables) {
  std::vector<const FrequencyTable*> ptrs(tables.size());
  for (std::size_t i = 0; i < tables.size(); ++i) ptrs[i] = &tables[i];
  return rans_decode(stream, std::span<const FrequencyTable* const>(ptrs));
}

// Serialized as: symbol count (u32 LE), final state (u32 LE), payload bytes.
inline void append_stream(std::vector<std::uint8_t>& out, const RansStream& s) {
  detail::put_u32(out, s.symbol_count);
  detail::put_u32(out, s.final_state);
  out.insert(out.end(), s.payload.begin(), s.payload.end());
}

inline RansStream read_stream(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "rANS stream");
  RansStream s;
  s.symbol_count = r.u32();
  s.final_state = r.u32();
  auto rest = r.take(r.remaining());
  s.payload.assign(rest.begin(), rest.end());
  return s;
}

// Complementary error function, W. J. Cody's rational Chebyshev
// approximations (relative error below 1e-15 over the whole line). A fixed
// algorithm rather than the platform libm keeps probability tables identical
// wherever the coder runs.
inline double erfc_cody(double x) {
  static constexpr double a[5] = {3.16112374387056560e00, 1.13864154151050156e02, 3.77485237685302021e02,
                                  3.20937758913846947e03, 1.85777706184603153e-1};
  static constexpr double b[4] = {2.36012909523441209e01, 2.44024637934444173e02, 1.28261652607737228e03,
                                  2.84423683343917062e03};
  static constexpr double c[9] = {5.64188496988670089e-1, 8.88314979438837594e00, 6.61191906371416295e01,
                                  2.98635138197400131e02, 8.81952221241769090e02, 1.71204761263407058e03,
                                  2.05107837782607147e03, 1.23033935479799725e03, 2.15311535474403846e-8};
  static constexpr double d[8] = {1.57449261107098347e01, 1.17693950891312499e02, 5.37181101862009858e02,
                                  1.62138957456669019e03, 3.29079923573345963e03, 4.36261909014324716e03,
                                  3.43936767414372164e03, 1.23033935480374942e03};
  static constexpr double p[6] = {3.05326634961232344e-1, 3.60344899949804439e-1, 1.25781726111229246e-1,
                                  1.60837851487422766e-2, 6.58749161529837803e-4, 1.63153871373020978e-2};
  static constexpr double q[5] = {2.56852019228982242e00, 1.87295284992346725e00, 5.27905102951428412e-1,
                                  6.05183413124413191e-2, 2.33520497626869185e-3};
  static constexpr double kInvSqrtPi = 5.6418958354775628695e-1;
  static constexpr double kXBig = 26.543;

  const double y = std::abs(x);
  double result;
  if (y <= 0.5) {
    const double ysq = y > 1.11e-16 ? y * y : 0.0;
    double xnum = a[4] * ysq, xden = ysq;
    for (int i = 0; i < 3; ++i) {
      xnum = (xnum + a[i]) * ysq;
      xden = (xden + b[i]) * ysq;
    }
    return 1.0 - x * (xnum + a[3]) / (xden + b[3]);
  }
  if (y <= 4.0) {
    double xnum = c[8] * y, xden = y;
    for (int i = 0; i < 7; ++i) {
      xnum = (xnum + c[i]) * y;
      xden = (xden + d[i]) * y;
    }
    result = (xnum + c[7]) / (xden + d[7]);
  } else if (y < kXBig) {
    const double ysq = 1.0 / (y * y);
    double xnum = p[5] * ysq, xden = ysq;
    for (int i = 0; i < 4; ++i) {
      xnum = (xnum + p[i]) * ysq;
      xden = (xden + q[i]) * ysq;
    }
    result = ysq * (xnum + p[4]) / (xden + q[4]);
    result = (kInvSqrtPi - result) / y;
  } else {
    result = 0.0;
  }
  if (result != 0.0) {
    const double ysq = std::trunc(y * 16.0) / 16.0;
    const double del = (y - ysq) * (y + ysq);
    result = std::exp(-ysq * ysq) * std::exp(-del) * result;
  }
  return x < 0.0 ? 2.0 - result : result;
}

// Upper tail Q(z) = 1 - Phi(z) of the standard normal.
inline double normal_upper_tail(double z) { return 0.5 * erfc_cody(z * 0.70710678118654752440); }

inline double normal_cdf(double z) { return normal_upper_tail(-z); }

inline constexpr double kSigmaFloor = 1e-3;

// Bin k in [-S, S] holds P(k) = Phi((k + 0.5 - offset) delta / sigma) - Phi((k - 0.5 - offset) delta / sigma);
// mass beyond the outer edges is folded into bins -S and S.
inline FrequencyTable discretized_gaussian_table(double mu_offset, double sigma, double delta, std::size_t radius,
                                                 unsigned precision, double sigma_floor = kSigmaFloor) {
  detail::require(std::abs(mu_offset) <= 0.5, "mean offset must lie in [-0.5, 0.5]");
  if (!(sigma >= sigma_floor)) {
    throw InvalidArgument("sigma " + std::to_string(sigma) + " below floor " + std::to_string(sigma_floor));
  }
  detail::require(delta > 0.0, "quantization step must be positive");
  const std::size_t n = 2 * radius + 1;
  const double scale = delta / sigma;
  // Edge e separates bins e-1 and e. Each edge keeps both the lower CDF and the
  // upper tail, the small one computed directly so that tail bins keep precision.
  std::vector<double> lower(n + 1), upper(n + 1);
  lower[0] = 0.0;
  upper[0] = 1.0;
  lower[n] = 1.0;
  upper[n] = 0.0;
  for (std::size_t e = 1; e < n; ++e) {
    const double z = (static_cast<double>(e) - static_cast<double>(radius) - 0.5 - mu_offset) * scale;
    if (z < 0.0) {
      lower[e] = z < -40.0 ? 0.0 : normal_upper_tail(-z);
      upper[e] = 1.0 - lower[e];
    } else {
      upper[e] = z > 40.0 ? 0.0 : normal_upper_tail(z);
      lower[e] = 1.0 - upper[e];
    }
  }
  std::vector<double> mass(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double center = static_cast<double>(s) - static_cast<double>(radius) - mu_offset;
    mass[s] = std::max(0.0, center < 0.0 ? lower[s + 1] - lower[s] : upper[s] - upper[s + 1]);
  }
  return normalize_frequencies(mass, precision);
}

}  // namespace eflic
