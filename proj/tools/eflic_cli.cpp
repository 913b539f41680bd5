#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "eflic/eflic.hpp"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace eflic;

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kUsage = 2, kIo = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const std::string& flag) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    std::istringstream in(item);
    T v{};
    in >> v;
    if (in.fail() || !in.eof()) throw UsageError(flag + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(flag + " needs at least one value");
  return out;
}

Shape parse_shape(const std::string& s) {
  const auto v = parse_list<std::size_t>(s, "--shape");
  if (v.size() != 3 || v[0] == 0 || v[1] == 0 || v[2] == 0) {
    throw UsageError("--shape expects three positive integers C,H,W, got '" + s + "'");
  }
  return {v[0], v[1], v[2]};
}

bool parse_on_off(const std::string& s, const std::string& flag) {
  if (s == "on") return true;
  if (s == "off") return false;
  throw UsageError(flag + " expects on or off, got '" + s + "'");
}

json timings_json(const PhaseTimings& t) {
  return {{"quantize", t.quantize_ms},
          {"autoregressive", t.autoregressive_ms},
          {"pack", t.pack_ms},
          {"entropy_code", t.entropy_code_ms},
          {"total", t.total_ms}};
}

// One command invocation: resolved configuration, artifacts and the manifest.
struct Run {
  std::string command;
  std::vector<std::string> argv;
  fs::path out_dir;
  json config = json::object();
  std::vector<std::string> replay_args;
  json artifacts = json::array();
  json results = json::object();
  PhaseTimings timings;

  fs::path output(const std::string& name) const {
    const fs::path p(name);
    return p.is_absolute() ? p : out_dir / p;
  }

  void record(const fs::path& path, const std::string& role) {
    const auto bytes = read_file(path);
    json a = {{"role", role}, {"path", path.string()}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}};
    const fs::path rel = path.lexically_relative(out_dir);
    if (!rel.empty() && *rel.begin() != "..") a["relative"] = rel.string();
    artifacts.push_back(std::move(a));
  }

  void write_file_artifact(const fs::path& path, std::span<const std::uint8_t> bytes, const std::string& role) {
    eflic::write_file(path, bytes);
    record(path, role);
  }

  void write_text_artifact(const fs::path& path, const std::string& text, const std::string& role) {
    write_file_artifact(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), role);
  }

  void write_manifest() const {
    json m;
    m["command"] = command;
    m["argv"] = argv;
    m["config"] = config;
    m["replay_args"] = replay_args;
    m["artifacts"] = artifacts;
    m["version"] = kVersion;
    m["timings_ms"] = timings_json(timings);
    m["results"] = results;
    const std::string text = m.dump(2) + "\n";
    eflic::write_file(out_dir / "manifest.json",
                      std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
};

void prepare_out_dir(Run& run) {
  std::error_code ec;
  fs::create_directories(run.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + run.out_dir.string() + ": " + ec.message());
}

// Every option of the subcommand, given or defaulted, as manifest config and
// as the argument list that replays the run.
void capture_config(const CLI::App& sub, Run& run) {
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help" || name == "config" || name == "out-dir") continue;
    std::vector<std::string> values = opt->results();
    if (values.empty()) {
      const std::string def = opt->get_default_str();
      if (def.empty()) continue;
      values = {def};
    }
    if (name == "inputs" || name == "model" || name == "input" || name == "ref" || name == "anchor" ||
        name == "test" || name == "manifest") {
      for (auto& v : values) v = fs::absolute(v).lexically_normal().string();
    }
    run.config[name] = values.size() == 1 ? json(values.front()) : json(values);
    run.replay_args.push_back("--" + name);
    for (const auto& v : values) run.replay_args.push_back(v);
  }
}

std::vector<LatentGrid> load_latents(const std::vector<std::string>& paths) {
  std::vector<LatentGrid> out;
  for (const auto& p : paths) out.push_back(load_latent(p));
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string shape = "1,64,64";
  double rho = 0.9;
  double var = 1.0;
  std::uint64_t seed = 0;
  std::size_t count = 1;
  std::string out;
};

int cmd_synth(const SynthArgs& a, Run& run) {
  if (!(std::abs(a.rho) < 1.0)) throw UsageError("--rho must satisfy |rho| < 1, got " + std::to_string(a.rho));
  if (!(a.var > 0.0)) throw UsageError("--var must be positive, got " + std::to_string(a.var));
  if (a.count == 0) throw UsageError("--count must be at least 1");
  const Shape shape = parse_shape(a.shape);
  prepare_out_dir(run);
  const fs::path out = run.output(a.out);
  ScopedTimer t(&run.timings.total_ms);
  for (std::size_t k = 0; k < a.count; ++k) {
    fs::path path = out;
    if (a.count > 1) {
      std::ostringstream name;
      name << out.stem().string() << '_' << std::setw(3) << std::setfill('0') << k << out.extension().string();
      path = out.parent_path() / name.str();
    }
    const LatentGrid g = gauss_markov_sample({shape, a.rho, a.var, a.seed + k});
    run.write_file_artifact(path, serialize_latent(g), "latent");
  }
  std::cout << "wrote " << a.count << " latent file(s) of shape " << a.shape << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> inputs;
  std::string scheme = "rd";
  std::size_t stages = 3;
  std::string Ks = "1024,512,256,128";
  std::size_t Kz = 1024;
  std::string hyper = "on";
  std::size_t iters = 50;
  std::uint64_t seed = 0;
  double delta = 1.0;
};

json ladder_json(const QuantizerSet& q) {
  json j = json::object();
  for (std::size_t g = 0; g < kGroupCount; ++g) {
    std::vector<std::size_t> sizes;
    for (const auto& cb : q.groups[g].stages) sizes.push_back(cb.size());
    j["Q_" + std::to_string(g + 1)] = sizes;
  }
  if (q.hyper) {
    std::vector<std::size_t> sizes;
    for (const auto& cb : q.hyper->stages) sizes.push_back(cb.size());
    j["Q_z"] = sizes;
  }
  return j;
}

int cmd_train(const TrainArgs& a, Run& run) {
  const Scheme scheme = [&] {
    try {
      return parse_scheme(a.scheme);
    } catch (const InvalidArgument& e) {
      throw UsageError(std::string("--scheme: ") + e.what());
    }
  }();
  const auto Ks = parse_list<std::size_t>(a.Ks, "--Ks");
  if (Ks.size() != kGroupCount) throw UsageError("--Ks needs four sizes, one per group");
  for (std::size_t K : Ks) {
    if (!detail::is_power_of_two(K)) throw UsageError("--Ks entries must be powers of two, got " + std::to_string(K));
  }
  if (!detail::is_power_of_two(a.Kz)) throw UsageError("--Kz must be a power of two");
  if (a.stages < 1 || a.stages > kMaxQ + 1) throw UsageError("--stages must lie in [1, 16]");
  if (a.iters < 1) throw UsageError("--iters must be at least 1");
  const bool hyper = parse_on_off(a.hyper, "--hyper") && scheme != Scheme::iq;
  prepare_out_dir(run);

  std::vector<LatentGrid> images;
  for (const auto& y : load_latents(a.inputs)) images.push_back(pad_replicate(y, 2));

  ScopedTimer t(&run.timings.total_ms);
  std::vector<fs::path> written;
  if (scheme == Scheme::cm) {
    CmTraining opts;
    opts.delta = a.delta;
    opts.hyper_size = hyper ? a.Kz : 0;
    opts.hyper_stages = a.stages;
    opts.codebook.iterations = a.iters;
    opts.codebook.seed = a.seed;
    const CmModel model = train_cm(images, opts);
    written.push_back(run.output(kPredictorName));
    write_file(written.back(), serialize_predictor(model.predictor));
    if (model.hyper) {
      written.push_back(run.output(kHyperCodebookName));
      write_file(written.back(), serialize_rvq(*model.hyper));
    }
    run.results["delta"] = a.delta;
    run.results["precision"] = model.config.precision;
  } else {
    RdTraining opts;
    std::copy(Ks.begin(), Ks.end(), opts.group_sizes.begin());
    opts.stages = a.stages;
    opts.hyper_size = hyper ? a.Kz : 0;
    opts.codebook.iterations = a.iters;
    opts.codebook.seed = a.seed;
    CodecModel model;
    if (scheme == Scheme::rd) {
      RdModel rd = train_rd(images, opts);
      model.quantizers = std::move(rd.quantizers);
      model.predictor = std::move(rd.predictor);
    } else {
      model.quantizers = train_iq(images, opts);
    }
    written = save_model(run.out_dir, model);
    run.results["ladder"] = ladder_json(model.quantizers);
    std::vector<double> bpp;
    for (std::size_t m = 1; m <= a.stages; ++m) bpp.push_back(compute_bpp(bpp_config_of(model.quantizers), m));
    run.results["formula_bpp"] = bpp;
  }
  for (const auto& p : written) run.record(p, p.extension() == ".efpr" ? "predictor" : "codebook");
  run.results["scheme"] = to_string(scheme);
  run.results["hyper"] = hyper;
  run.results["training_latents"] = images.size();
  std::cout << "trained " << to_string(scheme) << " model on " << images.size() << " latent(s), wrote "
            << written.size() << " file(s) to " << run.out_dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct EncodeArgs {
  std::string model;
  std::string input;
  std::size_t m = 1;
  std::string out;
  std::string recon;
};

int cmd_encode(const EncodeArgs& a, Run& run) {
  const CodecModel model = load_model(a.model);
  const LatentGrid y = load_latent(a.input);
  prepare_out_dir(run);
  if (a.m < 1 || a.m > model.quantizers.max_stages()) {
    throw UsageError("--m " + std::to_string(a.m) + " outside [1, " + std::to_string(model.quantizers.max_stages()) +
                     "] for this model");
  }
  const EncodedImage e = encode_image(y, model, a.m);
  run.timings = e.timings;
  run.write_file_artifact(run.output(a.out), serialize_bitstream(e.stream), "bitstream");
  if (!a.recon.empty()) run.write_file_artifact(run.output(a.recon), serialize_latent(e.reconstruction), "reconstruction");
  run.results["scheme"] = to_string(model.scheme());
  run.results["header"] = {{"H", e.stream.header.height}, {"W", e.stream.header.width}, {"q", e.stream.header.q}};
  run.results["payload_bits"] = e.stream.payload_bits;
  run.results["bpp"] = e.bpp;
  run.results["formula_bpp"] = e.formula_bpp;
  run.results["mse"] = mean_squared_error(e.reconstruction, y);
  std::cout << std::fixed << std::setprecision(6) << "bpp " << e.bpp << " (formula " << e.formula_bpp << "), "
            << e.stream.payload_bits << " payload bits, m=" << a.m << "\n";
  if (e.bpp != e.formula_bpp) {
    std::cout << "note: latent extent is not a multiple of 4, so the formula omits index padding\n";
  }
  return kOk;
}

struct DecodeArgs {
  std::string model;
  std::string input;
  std::string out;
  std::string ref;
};

int cmd_decode(const DecodeArgs& a, Run& run) {
  const CodecModel model = load_model(a.model);
  const auto file = read_file(a.input);
  prepare_out_dir(run);
  const LatentGrid x = decode_image(bitstream_wire(file, a.input), model, &run.timings);
  run.write_file_artifact(run.output(a.out), serialize_latent(x), "reconstruction");
  run.results["shape"] = {x.channels(), x.height(), x.width()};
  std::cout << "decoded " << x.channels() << "x" << x.height() << "x" << x.width() << " latent";
  if (!a.ref.empty()) {
    const LatentGrid ref = load_latent(a.ref);
    if (!ref.same_shape(x)) throw UsageError("--ref shape does not match the decoded latent");
    const double mse = mean_squared_error(x, ref);
    run.results["mse"] = mse;
    std::cout << ", mse " << std::setprecision(8) << mse;
  }
  std::cout << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct VerifyArgs {
  std::string only = "gap,density,decorrelation,dhbar,rate-match,latency";
  std::uint64_t seed = 1;
};

int cmd_verify(const VerifyArgs& a, Run& run) {
  namespace ex = eflic::experiments;
  const std::vector<std::string> known = {"gap", "density", "decorrelation", "dhbar", "rate-match", "latency"};
  auto only = split_list(a.only);
  for (auto& s : only) {
    if (s == "prop1") s = "gap";  // older claim name
    if (std::find(known.begin(), known.end(), s) == known.end()) {
      throw UsageError("--only: unknown claim '" + s + "'; known: gap, density, decorrelation, dhbar, rate-match, latency");
    }
  }
  auto wanted = [&](const std::string& s) { return std::find(only.begin(), only.end(), s) != only.end(); };
  prepare_out_dir(run);
  ScopedTimer total(&run.timings.total_ms);

  json claims = json::array();
  bool all = true;
  auto report = [&](const std::string& id, bool pass, const std::string& metric, json detail) {
    all = all && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << id << ": " << metric << std::endl;
    claims.push_back({{"id", id}, {"pass", pass}, {"metric", metric}, {"detail", std::move(detail)}});
  };
  auto fmt = [](double v, int digits = 4) {
    std::ostringstream os;
    os << std::setprecision(digits) << v;
    return os.str();
  };

  if (wanted("gap") || wanted("density")) {
    ex::CodebookGapConfig cfg;
    cfg.seed = a.seed;
    const ex::CodebookGapResult r = ex::run_codebook_gap(cfg);
    if (wanted("gap")) {
      report("gap", r.pass,
             "delta_h init " + fmt(r.delta_h_init) + " -> final " + fmt(r.delta_h_final) + " (bound 0.05)",
             {{"delta_h_init", r.delta_h_init}, {"delta_h_final", r.delta_h_final}, {"mse_init", r.mse_init},
              {"mse_final", r.mse_final}, {"passes", r.passes}, {"seconds", r.seconds}});
    }
    if (wanted("density")) {
      ex::DensityLawConfig ecfg;
      ecfg.seed = a.seed;
      const ex::DensityLawResult e = ex::run_density_law(r.codebook, ecfg);
      report("density", e.pass, "total variation " + fmt(e.total_variation) + " (bound 0.1)",
             {{"total_variation", e.total_variation}, {"predicted_delta_h", e.predicted_delta_h},
              {"empirical_delta_h", e.empirical_delta_h}, {"seconds", e.seconds}});
    }
  }
  if (wanted("decorrelation") || wanted("dhbar") || wanted("rate-match") || wanted("latency")) {
    ex::PipelineConfig pc;
    pc.seed = a.seed;
    const ex::TrainedPipeline p = ex::train_pipeline(pc);
    std::cout << "trained RD/IQ pipeline in " << fmt(p.seconds, 3) << " s" << std::endl;
    if (wanted("decorrelation")) {
      const ex::DecorrelationResult r = ex::run_decorrelation(p);
      std::string metric = "MSE(RD)/MSE(IQ) at m=1..3:";
      for (double v : r.ratio) metric += " " + fmt(v);
      report("decorrelation", r.pass, metric + " (need all <= 1.02, one <= 0.95)",
             {{"mse_rd", r.mse_rd}, {"mse_iq", r.mse_iq}, {"ratio", r.ratio}, {"seconds", r.seconds}});
    }
    if (wanted("dhbar")) {
      const ex::DeltaHBarResult r = ex::run_delta_h_bar(p);
      std::string metric = "delta_h_bar at m=1..3:";
      json per_m = json::array();
      for (const auto& rep : r.reports) {
        metric += " " + fmt(rep.delta_h_bar);
        per_m.push_back({{"delta_h_bar", rep.delta_h_bar},
                         {"unconditional_gap", rep.unconditional_gap},
                         {"conditional_gap", rep.conditional_gap},
                         {"unreliable", rep.unreliable}});
      }
      report("dhbar", r.pass, metric + " (bound 0.05 at every m)",
             {{"per_m", per_m}, {"positions_per_stream", r.positions_per_stream}, {"seconds", r.seconds}});
    }
    if (wanted("rate-match")) {
      const ex::RateMatchResult r = ex::run_rate_match(p);
      json rows = json::array();
      std::cout << "  delta    R_CM     D_CM       budget   best RD point            R_RD     D_RD/D_CM  pass\n";
      for (const auto& row : r.rows) {
        std::cout << "  " << std::left << std::setw(8) << fmt(row.delta) << std::setw(9) << fmt(row.cm.rate)
                  << std::setw(11) << fmt(row.cm.mse) << std::setw(9) << fmt(row.rate_budget) << std::setw(25)
                  << (row.best_rd ? row.best_rd->label : "-") << std::setw(9)
                  << (row.best_rd ? fmt(row.best_rd->rate) : "-") << std::setw(11)
                  << (row.best_rd ? fmt(row.best_rd->mse / row.cm.mse) : "-") << (row.pass ? "yes" : "no")
                  << std::right << "\n";
        json j = {{"delta", row.delta}, {"cm_rate", row.cm.rate}, {"cm_mse", row.cm.mse},
                  {"rate_budget", row.rate_budget}, {"pass", row.pass}};
        if (row.best_rd) {
          j["rd_label"] = row.best_rd->label;
          j["rd_rate"] = row.best_rd->rate;
          j["rd_mse"] = row.best_rd->mse;
        }
        rows.push_back(std::move(j));
      }
      json family = json::array();
      for (const auto& pt : r.rd_family) family.push_back({{"label", pt.label}, {"rate", pt.rate}, {"mse", pt.mse}});
      std::size_t passed = 0;
      for (const auto& row : r.rows) passed += row.pass;
      report("rate-match", r.pass,
             std::to_string(passed) + "/" + std::to_string(r.rows.size()) +
                 " CM points matched by RD within rate/0.9 and 1.05 x MSE",
             {{"rows", rows}, {"rd_family", family}, {"seconds", r.seconds}});
    }
    if (wanted("latency")) {
      const ex::LatencyResult r = ex::run_latency(p);
      report("latency", r.pass,
             "decode ms RD " + fmt(r.rd.total_ms) + " (EC " + fmt(r.rd.entropy_code_ms) + ") vs CM " +
                 fmt(r.cm.total_ms) + " (EC " + fmt(r.cm.entropy_code_ms) + ")",
             {{"rd", timings_json(r.rd)}, {"cm", timings_json(r.cm)}, {"points", r.points}});
    }
  }
  json report_json = {{"seed", a.seed}, {"pass", all}, {"claims", claims}};
  run.write_text_artifact(run.out_dir / "verify_report.json", report_json.dump(2) + "\n", "report");
  run.results = report_json;
  return all ? kOk : kVerificationFailed;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string shape = "1,128,128";
  double rho = 0.9;
  double var = 1.0;
  std::size_t train_images = 24;
  std::size_t holdout_images = 16;
  std::string Ks = "256,128,64,32";
  std::size_t stages = 3;
  std::size_t iters = 50;
  std::string seeds = "1";
  std::string schemes = "rd,iq,cm";
  std::string deltas = "2,1,0.5,0.25,0.125";
};

std::string bd_line(const RDCurve& anchor, const RDCurve& test) {
  std::ostringstream os;
  os << test.scheme << " vs " << anchor.scheme << ": ";
  try {
    os << std::fixed << std::setprecision(2) << bd_rate(anchor, test) << "%";
  } catch (const InvalidArgument& e) {
    os << "n/a (" << e.what() << ")";
  }
  return os.str();
}

int cmd_sweep(const SweepArgs& a, Run& run) {
  namespace ex = eflic::experiments;
  ex::SweepConfig cfg;
  cfg.pipeline.source = {parse_shape(a.shape), a.rho, a.var};
  if (!(std::abs(a.rho) < 1.0)) throw UsageError("--rho must satisfy |rho| < 1");
  cfg.pipeline.train_images = a.train_images;
  cfg.pipeline.holdout_images = a.holdout_images;
  const auto Ks = parse_list<std::size_t>(a.Ks, "--Ks");
  if (Ks.size() != kGroupCount) throw UsageError("--Ks needs four sizes, one per group");
  std::copy(Ks.begin(), Ks.end(), cfg.pipeline.group_sizes.begin());
  cfg.pipeline.stages = a.stages;
  cfg.pipeline.iterations = a.iters;
  cfg.seeds = parse_list<std::uint64_t>(a.seeds, "--seeds");
  cfg.schemes.clear();
  for (const auto& s : split_list(a.schemes)) {
    try {
      cfg.schemes.push_back(parse_scheme(s));
    } catch (const InvalidArgument& e) {
      throw UsageError(std::string("--schemes: ") + e.what());
    }
  }
  cfg.deltas = parse_list<double>(a.deltas, "--deltas");
  prepare_out_dir(run);

  ex::SweepResult r;
  {
    ScopedTimer t(&run.timings.total_ms);
    r = ex::rd_sweep(cfg);
  }
  for (const auto& p : r.points) {
    run.timings.quantize_ms += p.encode.quantize_ms + p.decode.quantize_ms;
    run.timings.autoregressive_ms += p.encode.autoregressive_ms + p.decode.autoregressive_ms;
    run.timings.entropy_code_ms += p.encode.entropy_code_ms + p.decode.entropy_code_ms;
    run.timings.pack_ms += p.encode.pack_ms + p.decode.pack_ms;
  }
  std::ostringstream curves, entropy, bd;
  ex::write_rd_curves_csv(curves, r.points);
  ex::write_entropy_csv(entropy, r.entropy);
  const RDCurve* cm = nullptr;
  for (const auto& c : r.curves) {
    if (c.scheme == "cm") cm = &c;
  }
  for (const auto& c : r.curves) {
    for (const auto& other : r.curves) {
      if (&c == &other || (other.scheme != "cm" && other.scheme != "iq")) continue;
      if (c.scheme == "cm" && other.scheme == "iq") continue;
      bd << bd_line(other, c) << "\n";
    }
  }
  if (!cm && r.curves.size() < 2) bd << "n/a (need two schemes)\n";
  run.write_text_artifact(run.out_dir / "rd_curves.csv", curves.str(), "rd_curves");
  run.write_text_artifact(run.out_dir / "entropy_report.csv", entropy.str(), "entropy_report");
  run.write_text_artifact(run.out_dir / "bdrate.txt", bd.str(), "bdrate");

  json points = json::array();
  for (const auto& p : r.points) {
    points.push_back({{"scheme", to_string(p.scheme)},
                      {"operating_point", p.m_or_delta},
                      {"seed", p.seed},
                      {"rate_bits", p.rate_bits},
                      {"bpp", p.bpp},
                      {"mse", p.mse},
                      {"encode_ms", timings_json(p.encode)},
                      {"decode_ms", timings_json(p.decode)}});
  }
  run.results["points"] = points;
  std::cout << "swept " << r.points.size() << " (scheme, operating point, seed) triples\n" << bd.str();
  return kOk;
}

// ---------------------------------------------------------------------------

struct BdArgs {
  std::string anchor;
  std::string test;
  std::string anchor_scheme;
  std::string test_scheme;
  std::string rate = "bpp";
};

RDCurve read_curve_csv(const std::string& path, const std::string& scheme_filter, const std::string& rate_column) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty CSV");
  const auto header = split_list(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError(path + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cs = column("scheme"), co = column("m_or_delta"), cr = column(rate_column), cd = column("mse");
  std::map<std::string, std::map<std::string, std::pair<double, double>>> sums;
  std::map<std::string, std::map<std::string, int>> counts;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_list(line);
    if (f.size() != header.size()) throw FormatError(path + ": row " + std::to_string(row) + " has the wrong field count");
    try {
      sums[f[cs]][f[co]].first += std::stod(f[cr]);
      sums[f[cs]][f[co]].second += std::stod(f[cd]);
    } catch (const std::exception&) {
      throw FormatError(path + ": row " + std::to_string(row) + " has a non-numeric value");
    }
    ++counts[f[cs]][f[co]];
  }
  std::string scheme = scheme_filter;
  if (scheme.empty()) {
    if (sums.size() != 1) throw UsageError(path + " holds several schemes; choose one with --anchor-scheme/--test-scheme");
    scheme = sums.begin()->first;
  }
  if (!sums.count(scheme)) throw UsageError(path + " has no rows for scheme '" + scheme + "'");
  RDCurve c{scheme, {}};
  for (const auto& [op, s] : sums[scheme]) {
    const double n = counts[scheme][op];
    c.points.push_back({s.first / n, s.second / n, op});
  }
  return c;
}

int cmd_bdrate(const BdArgs& a, Run& run) {
  if (a.rate != "bpp" && a.rate != "rate_bits") throw UsageError("--rate expects bpp or rate_bits");
  const RDCurve anchor = read_curve_csv(a.anchor, a.anchor_scheme, a.rate);
  const RDCurve test = read_curve_csv(a.test, a.test_scheme, a.rate);
  double bd = 0.0;
  try {
    bd = bd_rate(anchor, test);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << (bd == 0.0 ? 0.0 : bd) << "%";
  std::cout << os.str() << "\n";
  run.results["bd_rate_percent"] = bd;
  run.results["printed"] = os.str();
  prepare_out_dir(run);
  return kOk;
}

// ---------------------------------------------------------------------------

int run_cli(std::vector<std::string> args);

int cmd_replay(const std::string& manifest_path, Run& run) {
  const auto bytes = read_file(manifest_path);
  json m;
  try {
    m = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(manifest_path + ": " + e.what());
  }
  if (!m.contains("command") || !m.contains("replay_args") || !m.contains("artifacts")) {
    throw FormatError(manifest_path + ": not a run manifest");
  }
  const std::string command = m["command"];
  if (command == "replay") throw UsageError("cannot replay a replay manifest");
  for (const auto& a : m["artifacts"]) {
    if (!a.contains("relative")) {
      throw UsageError("artifact " + a["path"].get<std::string>() + " lies outside the recorded --out-dir");
    }
  }
  std::vector<std::string> args = {"eflic", command};
  for (const auto& v : m["replay_args"]) args.push_back(v.get<std::string>());
  args.push_back("--out-dir");
  args.push_back(run.out_dir.string());
  const int code = run_cli(args);
  if (code != kOk && code != kVerificationFailed) return code;

  std::size_t same = 0;
  json diffs = json::array();
  for (const auto& a : m["artifacts"]) {
    const fs::path p = run.out_dir / a["relative"].get<std::string>();
    std::string digest = "missing";
    if (fs::exists(p)) digest = sha256_hex(read_file(p));
    if (digest == a["sha256"]) {
      ++same;
    } else {
      diffs.push_back(a["relative"]);
    }
  }
  run.results = {{"replayed", command}, {"identical", same}, {"different", diffs}};
  std::cout << "replay of " << command << ": " << same << "/" << m["artifacts"].size()
            << " artifacts byte-identical\n";
  // The replayed command wrote its own manifest; keep it and add this one beside it.
  return diffs.empty() ? kOk : kVerificationFailed;
}

// ---------------------------------------------------------------------------

// key=value lines; keys name long options of the subcommand. Flags given on
// the command line win over the file.
std::vector<std::string> inject_config(const std::vector<std::string>& args) {
  if (args.size() < 2) return args;
  std::string config_path;
  for (std::size_t k = 2; k < args.size(); ++k) {
    if (args[k] == "--config" && k + 1 < args.size()) config_path = args[k + 1];
    if (args[k].rfind("--config=", 0) == 0) config_path = args[k].substr(9);
  }
  if (config_path.empty()) return args;
  std::ifstream in(config_path);
  if (!in) throw IoError("cannot open config file " + config_path);
  auto given = [&](const std::string& key) {
    for (std::size_t k = 2; k < args.size(); ++k) {
      if (args[k] == "--" + key || args[k].rfind("--" + key + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> injected;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw UsageError(config_path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    key.erase(key.find_last_not_of(" \t") + 1);
    value.erase(0, value.find_first_not_of(" \t"));
    if (given(key)) continue;
    injected.push_back("--" + key);
    injected.push_back(value);
  }
  std::vector<std::string> out(args.begin(), args.begin() + 2);
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

int run_cli(std::vector<std::string> args) {
  CLI::App app{"Entropy-coding-free latent compression toolkit", "eflic"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  app.option_defaults()->always_capture_default();

  Run run;
  run.argv = args;
  std::string out_dir = ".";
  std::string config;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--out-dir", out_dir, "Directory for outputs and manifest.json");
    sub->add_option("--config", config, "key=value file overriding defaults");
  };

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write Gauss-Markov latent samples as EFLT files");
  s->add_option("--shape", synth.shape, "C,H,W");
  s->add_option("--rho", synth.rho, "Correlation, |rho| < 1");
  s->add_option("--var", synth.var, "Marginal variance");
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--count", synth.count, "Number of samples (seeds seed..seed+count-1)");
  s->add_option("--out", synth.out, "Output EFLT path (relative to --out-dir)")->required();
  common(s);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train quantizers and predictors");
  t->add_option("--inputs", train.inputs, "Training EFLT files")->required()->expected(1, -1);
  t->add_option("--scheme", train.scheme, "rd, iq or cm");
  t->add_option("--stages", train.stages, "RVQ stages per quantizer");
  t->add_option("--Ks", train.Ks, "Codebook sizes K_1..K_4");
  t->add_option("--Kz", train.Kz, "Hyperprior codebook size");
  t->add_option("--hyper", train.hyper, "on or off");
  t->add_option("--iters", train.iters, "Lloyd iterations");
  t->add_option("--seed", train.seed, "Training seed");
  t->add_option("--delta", train.delta, "CM step size");
  common(t);

  EncodeArgs enc;
  auto* e = app.add_subcommand("encode", "Encode an EFLT latent to an EFBS bitstream");
  e->add_option("--model", enc.model, "Model directory")->required();
  e->add_option("--input", enc.input, "EFLT latent")->required();
  e->add_option("--m", enc.m, "Operating point (RVQ stages)");
  e->add_option("--out", enc.out, "Output EFBS path")->required();
  e->add_option("--recon", enc.recon, "Optional EFLT path for the encoder-side reconstruction");
  common(e);

  DecodeArgs dec;
  auto* d = app.add_subcommand("decode", "Decode an EFBS bitstream");
  d->add_option("--model", dec.model, "Model directory")->required();
  d->add_option("--input", dec.input, "EFBS bitstream")->required();
  d->add_option("--out", dec.out, "Output EFLT path")->required();
  d->add_option("--ref", dec.ref, "Reference EFLT for MSE");
  common(d);

  VerifyArgs ver;
  auto* v = app.add_subcommand("verify-props", "Run the property experiments and report pass/fail");
  v->add_option("--only", ver.only, "Comma-separated subset of gap,density,decorrelation,dhbar,rate-match,latency");
  v->add_option("--seed", ver.seed, "Experiment seed");
  common(v);

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Rate-distortion sweep over schemes and operating points");
  w->add_option("--shape", sw.shape, "C,H,W of each latent");
  w->add_option("--rho", sw.rho, "Source correlation");
  w->add_option("--var", sw.var, "Source variance");
  w->add_option("--train-images", sw.train_images, "Training latents per seed");
  w->add_option("--holdout-images", sw.holdout_images, "Held-out latents per seed");
  w->add_option("--Ks", sw.Ks, "Codebook sizes K_1..K_4");
  w->add_option("--stages", sw.stages, "RVQ stages (m = 1..stages)");
  w->add_option("--iters", sw.iters, "Lloyd iterations");
  w->add_option("--seeds", sw.seeds, "Comma-separated seeds");
  w->add_option("--schemes", sw.schemes, "Comma-separated subset of rd,iq,cm");
  w->add_option("--deltas", sw.deltas, "CM step sizes");
  common(w);

  BdArgs bd;
  auto* b = app.add_subcommand("bdrate", "BD-rate of a test curve against an anchor curve");
  b->add_option("anchor", bd.anchor, "Anchor rd_curves CSV")->required();
  b->add_option("test", bd.test, "Test rd_curves CSV")->required();
  b->add_option("--anchor-scheme", bd.anchor_scheme, "Scheme rows to use from the anchor file");
  b->add_option("--test-scheme", bd.test_scheme, "Scheme rows to use from the test file");
  b->add_option("--rate", bd.rate, "Rate column: bpp or rate_bits");
  common(b);

  std::string manifest;
  auto* r = app.add_subcommand("replay", "Re-run a manifest and compare its artifacts byte for byte");
  r->add_option("manifest", manifest, "manifest.json of an earlier run")->required();
  r->add_option("--out-dir", out_dir, "Fresh directory for the replayed outputs")->required();

  CLI::App* active = nullptr;
  try {
    std::vector<std::string> rev = inject_config(args);
    rev.erase(rev.begin());
    std::reverse(rev.begin(), rev.end());  // CLI11 consumes the vector from the back
    app.parse(rev);
    for (CLI::App* sub : app.get_subcommands()) active = sub;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    CLI::App* failing = &app;
    for (CLI::App* sub : app.get_subcommands()) failing = sub;
    std::cerr << failing->help();
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }

  run.command = active->get_name();
  run.out_dir = fs::path(out_dir);
  try {
    capture_config(*active, run);
    int code = kOk;
    if (active == s) code = cmd_synth(synth, run);
    else if (active == t) code = cmd_train(train, run);
    else if (active == e) code = cmd_encode(enc, run);
    else if (active == d) code = cmd_decode(dec, run);
    else if (active == v) code = cmd_verify(ver, run);
    else if (active == w) code = cmd_sweep(sw, run);
    else if (active == b) code = cmd_bdrate(bd, run);
    else if (active == r) {
      prepare_out_dir(run);
      code = cmd_replay(manifest, run);
      run.write_manifest();  // overwrites the replayed run's manifest with the comparison
      return code;
    }
    run.write_manifest();
    return code;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerificationFailed;
  }
}

}  // namespace

int main(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }
