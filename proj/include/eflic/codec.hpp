#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eflic/bitstream.hpp"
#include "eflic/io.hpp"
#include "eflic/schemes.hpp"

namespace eflic {

/// A fixed-length model as stored on disk: RD when a predictor is present, IQ otherwise.
struct CodecModel {
  QuantizerSet quantizers;
  std::optional<ContextPredictor> predictor;

  Scheme scheme() const { return predictor ? Scheme::rd : Scheme::iq; }

  void validate() const {
    quantizers.validate();
    if (predictor) {
      predictor->validate();
      detail::require(predictor->channels() == quantizers.dim(), "predictor and codebooks disagree on channel count");
      detail::require(predictor->hyper == quantizers.hyper.has_value(),
                      "predictor and codebooks disagree on the hyperprior");
    } else {
      detail::require(!quantizers.hyper, "an IQ model cannot carry a hyperprior quantizer");
    }
  }
};

inline std::string group_codebook_name(std::size_t g) { return "q" + std::to_string(g + 1) + ".efcb"; }
inline constexpr const char* kHyperCodebookName = "qz.efcb";
inline constexpr const char* kPredictorName = "predictor.efpr";

inline std::vector<std::filesystem::path> save_model(const std::filesystem::path& dir, const CodecModel& model) {
  model.validate();
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    write_file(p, bytes);
    written.push_back(p);
  };
  for (std::size_t g = 0; g < kGroupCount; ++g) put(dir / group_codebook_name(g), serialize_rvq(model.quantizers.groups[g]));
  if (model.quantizers.hyper) put(dir / kHyperCodebookName, serialize_rvq(*model.quantizers.hyper));
  if (model.predictor) put(dir / kPredictorName, serialize_predictor(*model.predictor));
  return written;
}

inline CodecModel load_model(const std::filesystem::path& dir) {
  CodecModel model;
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    const auto p = dir / group_codebook_name(g);
    model.quantizers.groups[g] = parse_rvq(read_file(p), p.string());
  }
  if (const auto p = dir / kHyperCodebookName; std::filesystem::exists(p)) {
    model.quantizers.hyper = parse_rvq(read_file(p), p.string());
  }
  if (const auto p = dir / kPredictorName; std::filesystem::exists(p)) {
    model.predictor = parse_predictor(read_file(p), p.string());
  }
  try {
    model.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError("model in " + dir.string() + ": " + e.what());
  }
  return model;
}

struct EncodedImage {
  PackedBitstream stream;
  LatentGrid reconstruction;  // cropped to the input size
  double bpp = 0.0;           // payload bits over H * W
  double formula_bpp = 0.0;   // compute_bpp for the model at this m
  PhaseTimings timings;
};

// The stream header carries pixel extents H = 16 h; odd latent extents are
// replicate-padded to even before coding and cropped after decoding.
inline EncodedImage encode_image(const LatentGrid& y, const CodecModel& model, std::size_t m) {
  model.validate();
  const std::size_t H = y.height() * kLatentStride, W = y.width() * kLatentStride;
  if (H > kMaxExtent || W > kMaxExtent) {
    throw InvalidArgument("latent " + std::to_string(y.height()) + "x" + std::to_string(y.width()) +
                          " exceeds the 16383-pixel header limit");
  }
  const StreamHeader header{static_cast<std::uint32_t>(H), static_cast<std::uint32_t>(W), q_from_stages(m)};
  const LatentGrid padded = pad_replicate(y, 2);

  EncodedImage out;
  const CodedLatent coded = model.predictor ? rd_encode(padded, *model.predictor, model.quantizers, m, &out.timings)
                                            : iq_encode(padded, model.quantizers, m, &out.timings);
  {
    ScopedTimer t(&out.timings.pack_ms);
    out.stream = pack(header, coded.hyper, coded.groups, layout_of(model.quantizers));
  }
  out.timings.total_ms += out.timings.pack_ms;
  out.reconstruction = crop(coded.reconstruction, y.height(), y.width());
  out.bpp = static_cast<double>(out.stream.payload_bits) / static_cast<double>(H * W);
  out.formula_bpp = compute_bpp(bpp_config_of(model.quantizers), m);
  return out;
}

// wire = stream header + payload (an EFBS file minus its magic and version).
inline LatentGrid decode_image(std::span<const std::uint8_t> wire, const CodecModel& model,
                               PhaseTimings* timings = nullptr) {
  model.validate();
  const StreamHeader header = decode_header(wire);
  for (auto [extent, name] : {std::pair{header.height, "height"}, std::pair{header.width, "width"}}) {
    if (extent % kLatentStride != 0) {
      throw FormatError(std::string("header ") + name + " " + std::to_string(extent) + " is not a multiple of " +
                        std::to_string(kLatentStride));
    }
  }
  const std::size_t m = stages_from_q(header.q);
  if (m > model.quantizers.max_stages()) {
    throw FormatError("header q=" + std::to_string(header.q) + " needs " + std::to_string(m) +
                      " stages but the model has " + std::to_string(model.quantizers.max_stages()));
  }
  UnpackedStreams streams;
  {
    ScopedTimer t(timings ? &timings->pack_ms : nullptr);
    streams = unpack(wire, layout_of(model.quantizers));
  }
  const std::size_t h = header.height / kLatentStride, w = header.width / kLatentStride;
  CodedLatent coded;
  coded.scheme = model.scheme();
  coded.shape = {model.quantizers.dim(), h + h % 2, w + w % 2};
  coded.m = m;
  coded.groups = std::move(streams.groups);
  coded.hyper = std::move(streams.hyper);
  PhaseTimings local;
  const LatentGrid full = model.predictor ? rd_decode(coded, *model.predictor, model.quantizers, &local)
                                          : iq_decode(coded, model.quantizers, &local);
  if (timings) {
    const double pack_ms = timings->pack_ms;
    *timings += local;
    timings->total_ms += pack_ms;
  }
  return crop(full, h, w);
}

}  // namespace eflic
