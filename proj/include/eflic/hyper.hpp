#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "eflic/codebook.hpp"
#include "eflic/common.hpp"
#include "eflic/latent.hpp"

namespace eflic {

inline constexpr std::size_t kHyperBlock = 4;

/// Side information phi at a quarter of the latent resolution.
struct HyperContext {
  LatentGrid phi;
  bool quantized = false;
  std::optional<IndexStack> indices;
};

// Non-overlapping 4x4 block means, one per channel.
inline LatentGrid block_means(const LatentGrid& latent) {
  if (latent.height() % kHyperBlock != 0 || latent.width() % kHyperBlock != 0) {
    throw InvalidArgument("hyper context needs dimensions divisible by 4, got " + std::to_string(latent.height()) +
                          "x" + std::to_string(latent.width()));
  }
  const std::size_t bh = latent.height() / kHyperBlock, bw = latent.width() / kHyperBlock;
  LatentGrid out(latent.channels(), bh, bw);
  for (std::size_t c = 0; c < latent.channels(); ++c)
    for (std::size_t i = 0; i < bh; ++i)
      for (std::size_t j = 0; j < bw; ++j) {
        double acc = 0.0;
        for (std::size_t di = 0; di < kHyperBlock; ++di)
          for (std::size_t dj = 0; dj < kHyperBlock; ++dj) acc += latent.at(c, kHyperBlock * i + di, kHyperBlock * j + dj);
        out.at(c, i, j) = acc / static_cast<double>(kHyperBlock * kHyperBlock);
      }
  return out;
}

inline HyperContext extract_hyper_context(const LatentGrid& latent, const ResidualVQ* quantizer = nullptr,
                                          std::size_t m = 1) {
  HyperContext out;
  LatentGrid z = block_means(latent);
  if (!quantizer) {
    out.phi = std::move(z);
    return out;
  }
  check_stage_count(*quantizer, m);
  RvqResult q = rvq_quantize(*quantizer, to_vectors(z), m);
  out.phi = from_vectors(q.reconstruction, z.height(), z.width());
  out.quantized = true;
  out.indices = std::move(q.indices);
  return out;
}

// Decoder side: phi from the transmitted Q_z indices.
inline HyperContext decode_hyper_context(const ResidualVQ& quantizer, const IndexStack& indices, std::size_t height,
                                         std::size_t width) {
  detail::require(indices.positions() == height * width, "hyper index count does not match the hyper grid");
  HyperContext out;
  out.phi = from_vectors(rvq_dequantize(quantizer, indices), height, width);
  out.quantized = true;
  out.indices = indices;
  return out;
}

// phi is at half the group resolution; group position (i, j) reads phi(i/2, j/2).
inline double upsampled_phi(const LatentGrid& phi, std::size_t c, std::size_t i, std::size_t j) {
  return phi.at(c, i / 2, j / 2);
}

}  // namespace eflic
