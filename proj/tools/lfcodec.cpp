// lfcodec: command-line front end for the light-field codec.
//
// Exit codes: 0 ok, 1 selftest failure or internal error, 2 bad arguments,
// 3 I/O, 4 shape/format, 5 decode/integrity.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lfc/codec.hpp"
#include "lfc/errors.hpp"
#include "lfc/image_io.hpp"
#include "lfc/metrics.hpp"
#include "lfc/selftest.hpp"
#include "lfc/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kBadArgs = 2, kIo = 3, kShape = 4, kDecode = 5 };

struct BadArgs : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

lfc::Layout parse_layout(const std::string& s) {
  if (s == "sai") return lfc::Layout::sai;
  if (s == "macpi") return lfc::Layout::macpi;
  throw BadArgs("--layout must be 'sai' or 'macpi'");
}

const char* layout_name(lfc::Layout l) { return l == lfc::Layout::sai ? "sai" : "macpi"; }

lfc::LightField4D read_lf(const fs::path& path, lfc::Layout layout) {
  if (layout == lfc::Layout::sai) return lfc::io::read_sai_dir(path);
  return lfc::macpi_to_sai(lfc::io::read_macpi(path));
}

void write_lf(const fs::path& path, const lfc::LightField4D& lf, lfc::Layout layout) {
  if (layout == lfc::Layout::sai) {
    lfc::io::write_sai_dir(path, lf);
  } else {
    lfc::io::write_macpi(path, lfc::sai_to_macpi(lf));
  }
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw lfc::IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw lfc::IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw lfc::IoError("short write to " + path.string());
}

void emit_json(const json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw lfc::IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

std::unique_ptr<lfc::CodecModel> load_model(const std::string& path) {
  if (!fs::exists(path)) throw lfc::IoError("checkpoint not found: " + path);
  return lfc::CodecModel::load(path);
}

int lambda_index_of(double lambda) {
  for (std::size_t i = 0; i < lfc::kLambdaLadder.size(); ++i)
    if (lfc::kLambdaLadder[i] == lambda) return static_cast<int>(i);
  return 255;
}

json psnr_json(const lfc::PsnrResult& p) {
  json j;
  if (p.lossless) {
    j["psnr_db"] = "lossless";
  } else {
    j["psnr_db"] = p.db;
  }
  j["mse"] = p.mse;
  return j;
}

// ---------------------------------------------------------------------------

struct Common {
  std::uint64_t seed = 1;
};

struct InitArgs {
  std::string output;
  int A = 2;
  int channels = 1;
  std::string width = "toy";
  std::string ablate;
  int lambda_index = 0;
};

int run_init(const InitArgs& a, const Common& c) {
  lfc::CodecConfig cfg;
  if (a.width == "toy") {
    cfg = lfc::CodecConfig::toy(a.A, a.channels);
  } else if (a.width == "standard") {
    cfg = lfc::CodecConfig::standard(a.A, a.channels);
  } else {
    throw BadArgs("--width must be 'toy' or 'standard'");
  }
  cfg.ablation = lfc::Ablation::parse(a.ablate);
  cfg.validate();
  lfc::CodecModel model(cfg, c.seed);
  model.set_lambda(lfc::kLambdaLadder.at(static_cast<std::size_t>(a.lambda_index)));
  model.save(a.output);
  json j;
  j["checkpoint"] = a.output;
  j["parameters"] = model.parameters().scalar_count();
  j["ablation"] = cfg.ablation.to_string();
  j["model_hash"] = model.hash();
  std::cout << j.dump(2) << '\n';
  return kOk;
}

struct EncodeArgs {
  std::string input, layout = "sai", checkpoint, output, report;
  std::optional<int> lambda_index;
  std::string ablate;
};

int run_encode(const EncodeArgs& a) {
  const lfc::Layout layout = parse_layout(a.layout);
  const auto model = load_model(a.checkpoint);
  if (!a.ablate.empty() && !(lfc::Ablation::parse(a.ablate) == model->config().ablation)) {
    throw BadArgs("--ablate " + a.ablate + " does not match the checkpoint (" +
                  model->config().ablation.to_string() + ")");
  }
  const lfc::LightField4D lf = read_lf(a.input, layout);
  lfc::EncodeOptions opt;
  opt.layout = layout;
  opt.lambda_index = a.lambda_index ? *a.lambda_index : lambda_index_of(model->lambda());
  const auto t0 = std::chrono::steady_clock::now();
  const lfc::EncodeResult r = lfc::encode_lf(lf, *model, opt);
  const double secs = seconds_since(t0);
  write_bytes(a.output, r.bytes);

  const double samples = static_cast<double>(lf.U()) * lf.V() * lf.H() * lf.W();
  json j;
  j["output"] = a.output;
  j["bytes"] = r.bytes.size();
  j["bpp"] = lfc::bpp(r.bytes, lf);
  j["estimated_payload_bpp"] = r.estimated_payload_bits / samples;
  j["header_bytes"] = lfc::bitstream_overhead_bytes(lfc::parse_bitstream(r.bytes));
  json streams = json::array();
  for (std::size_t i = 0; i < r.streams.size(); ++i) {
    streams.push_back({{"name", i == 0 ? std::string("z") : "y_group" + std::to_string(i - 1)},
                       {"bits", r.streams[i].bytes * 8},
                       {"estimated_bits", r.streams[i].estimated_bits}});
  }
  j["streams"] = streams;
  j["ablation"] = model->config().ablation.to_string();
  j["lambda_index"] = r.header.lambda_index;
  j["layout"] = layout_name(layout);
  j["A"] = lf.U();
  j["H"] = lf.H();
  j["W"] = lf.W();
  j["model_hash"] = r.header.model_hash;
  j["timings"] = {{"encode_s", secs}};
  emit_json(j, a.report);
  return kOk;
}

struct DecodeArgs {
  std::string input, checkpoint, output, layout, reference, report;
  bool luma = false;
};

int run_decode(const DecodeArgs& a) {
  const auto model = load_model(a.checkpoint);
  const auto bytes = read_bytes(a.input);
  const auto t0 = std::chrono::steady_clock::now();
  const lfc::DecodeResult d = lfc::decode_lf(bytes, *model);
  const double secs = seconds_since(t0);
  const lfc::Layout layout = a.layout.empty() ? d.header.layout : parse_layout(a.layout);
  if (!a.output.empty()) write_lf(a.output, d.lf, layout);
  json j;
  j["output"] = a.output;
  j["layout"] = layout_name(layout);
  j["A"] = d.lf.U();
  j["H"] = d.lf.H();
  j["W"] = d.lf.W();
  j["ablation"] = lfc::Ablation::from_bits(d.header.flags).to_string();
  j["bpp"] = lfc::bits_per_sample(bytes.size(), d.lf.U(), d.lf.H(), d.lf.W());
  if (!a.reference.empty()) {
    const lfc::LightField4D ref = read_lf(a.reference, layout);
    const double peak = ref.range().hi - ref.range().lo;
    j["reference"] = psnr_json(lfc::psnr(ref, d.lf, peak, a.luma));
  }
  j["timings"] = {{"decode_s", secs}};
  emit_json(j, a.report);
  return kOk;
}

struct EvaluateArgs {
  std::string input, layout = "sai", checkpoint, report;
  bool luma = false;
};

int run_evaluate(const EvaluateArgs& a) {
  const lfc::Layout layout = parse_layout(a.layout);
  const auto model = load_model(a.checkpoint);
  const lfc::LightField4D lf = read_lf(a.input, layout);
  const auto t0 = std::chrono::steady_clock::now();
  const lfc::EncodeResult e = lfc::encode_lf(lf, *model);
  const double enc = seconds_since(t0);
  const auto t1 = std::chrono::steady_clock::now();
  const lfc::DecodeResult d = lfc::decode_lf(e.bytes, *model);
  const double dec = seconds_since(t1);
  json j;
  j["bytes"] = e.bytes.size();
  j["bpp"] = e.bpp;
  j.update(psnr_json(lfc::psnr(lf, d.lf, lf.range().hi - lf.range().lo, a.luma)));
  j["latents_match"] = d.latents == e.latents;
  j["timings"] = {{"encode_s", enc}, {"decode_s", dec}};
  emit_json(j, a.report);
  return kOk;
}

struct TrainArgs {
  std::string checkpoint, init, output, trace, ablate;
  std::optional<double> lambda;
  int lambda_index = 0;
  long steps = 600;
  int batch = 4;
  double lr = 1e-3;
  int synthetic = 16;
  int A = 2;
  int size = 32;
  int channels = 1;
};

int run_train(const TrainArgs& a, const Common& c) {
  std::unique_ptr<lfc::CodecModel> model;
  if (!a.init.empty()) {
    model = load_model(a.init);
  } else {
    lfc::CodecConfig cfg = lfc::CodecConfig::toy(a.A, a.channels);
    cfg.ablation = lfc::Ablation::parse(a.ablate);
    model = std::make_unique<lfc::CodecModel>(cfg, c.seed);
  }
  const double lambda = a.lambda ? *a.lambda : lfc::kLambdaLadder.at(static_cast<std::size_t>(a.lambda_index));
  if (!(lambda >= 0.0)) throw BadArgs("--lambda must be non-negative");
  const int A = model->config().A;
  const auto data = lfc::synth_dataset(a.synthetic, A, a.size, a.size, c.seed, model->config().channels);
  lfc::TrainOptions opt;
  opt.steps = a.steps;
  opt.batch = a.batch;
  opt.lr = a.lr;
  opt.lambda = lambda;
  opt.seed = c.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const lfc::TrainResult r = lfc::train_toy(*model, data, opt);
  const double secs = seconds_since(t0);
  model->set_lambda(lambda);
  model->save(a.output);
  if (!a.trace.empty()) {
    std::ofstream out(a.trace);
    if (!out) throw lfc::IoError("cannot write " + a.trace);
    lfc::write_trace_csv(out, r.trace);
  }
  json j;
  j["checkpoint"] = a.output;
  j["lambda"] = lambda;
  j["steps"] = r.trace.size();
  j["initial_J"] = r.initial_J;
  j["final_J"] = r.final_J;
  j["diverged"] = r.diverged;
  j["timings"] = {{"train_s", secs}};
  std::cout << j.dump(2) << '\n';
  return r.diverged ? kFailure : kOk;
}

struct RdsweepArgs {
  std::vector<std::string> checkpoints, inputs;
  std::string layout = "sai", csv, baseline, table, bd_csv, label = "Pro.";
  int synthetic = 0;
  int A = 2;
  int size = 32;
  bool luma = false;
};

int run_rdsweep(const RdsweepArgs& a, const Common& c) {
  if (a.checkpoints.empty()) throw BadArgs("rdsweep needs at least one --checkpoint");
  if (a.inputs.empty() == (a.synthetic == 0)) throw BadArgs("give either --input or --synthetic");
  for (const auto& p : a.checkpoints)
    if (!fs::exists(p)) throw lfc::IoError("checkpoint not found: " + p);

  std::vector<std::string> names;
  std::vector<lfc::LightField4D> fields;
  if (a.synthetic > 0) {
    fields = lfc::synth_dataset(a.synthetic, a.A, a.size, a.size, c.seed);
    for (int i = 0; i < a.synthetic; ++i) names.push_back("synth" + std::to_string(i));
  } else {
    const lfc::Layout layout = parse_layout(a.layout);
    for (const auto& in : a.inputs) {
      fields.push_back(read_lf(in, layout));
      names.push_back(fs::path(in).filename().replace_extension().string());
    }
  }

  std::vector<lfc::RDRow> rows;
  for (const auto& ck : a.checkpoints) {
    const auto model = lfc::CodecModel::load(ck);
    std::vector<lfc::RDRow> part(fields.size());
    std::mutex err_mu;
    std::exception_ptr err;
    lfc::parallel_for(static_cast<int>(fields.size()), lfc::worker_threads(), [&](int i) {
      try {
        const auto& lf = fields[static_cast<std::size_t>(i)];
        const auto e = lfc::encode_lf(lf, *model);
        const auto d = lfc::decode_lf(e.bytes, *model);
        const auto p = lfc::psnr(lf, d.lf, lf.range().hi - lf.range().lo, a.luma);
        part[static_cast<std::size_t>(i)] = {names[static_cast<std::size_t>(i)], {e.bpp, p.db, p.lossless}};
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
      }
    });
    if (err) std::rethrow_exception(err);
    rows.insert(rows.end(), part.begin(), part.end());
  }

  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw lfc::IoError("cannot write " + a.csv);
    lfc::write_rd_csv(out, rows);
  } else if (a.baseline.empty()) {
    lfc::write_rd_csv(std::cout, rows);
  }

  if (!a.baseline.empty()) {
    std::ifstream in(a.baseline);
    if (!in) throw lfc::IoError("cannot open baseline " + a.baseline);
    const auto anchors = lfc::group_by_label(lfc::read_rd_csv(in));
    const auto ours = lfc::group_by_label(rows);
    std::vector<lfc::BdEntry> entries;
    // Baseline labels are "<anchor codec>/<image>" or plain "<image>".
    for (const auto& [label, pts] : anchors) {
      const auto slash = label.find('/');
      const std::string anchor = slash == std::string::npos ? "baseline" : label.substr(0, slash);
      const std::string image = slash == std::string::npos ? label : label.substr(slash + 1);
      for (const auto& [name, mine] : ours) {
        if (name != image) continue;
        std::vector<std::string> warnings;
        entries.push_back(lfc::bd_entry(name, anchor, mine, pts, &warnings));
        for (const auto& w : warnings) std::cerr << "warning: " << name << " vs " << anchor << ": " << w << '\n';
      }
    }
    if (entries.empty()) throw lfc::FormatError("baseline CSV shares no image labels with the sweep");
    if (a.table.empty()) {
      lfc::write_bd_table(std::cout, entries);
    } else {
      std::ofstream out(a.table);
      if (!out) throw lfc::IoError("cannot write " + a.table);
      lfc::write_bd_table(out, entries);
    }
    if (!a.bd_csv.empty()) {
      std::ofstream out(a.bd_csv);
      if (!out) throw lfc::IoError("cannot write " + a.bd_csv);
      lfc::write_bd_csv(out, entries);
    }
  }
  return kOk;
}

struct BdArgs {
  std::string test, anchor, anchor_name = "anchor", bd_csv;
};

int run_bd(const BdArgs& a) {
  std::ifstream ti(a.test), ai(a.anchor);
  if (!ti) throw lfc::IoError("cannot open " + a.test);
  if (!ai) throw lfc::IoError("cannot open " + a.anchor);
  const auto test = lfc::group_by_label(lfc::read_rd_csv(ti));
  const auto anchor = lfc::group_by_label(lfc::read_rd_csv(ai));
  std::vector<lfc::BdEntry> entries;
  for (const auto& [label, pts] : test) {
    for (const auto& [alabel, apts] : anchor) {
      if (alabel != label) continue;
      std::vector<std::string> warnings;
      entries.push_back(lfc::bd_entry(label, a.anchor_name, pts, apts, &warnings));
      for (const auto& w : warnings) std::cerr << "warning: " << label << ": " << w << '\n';
    }
  }
  if (entries.empty()) throw lfc::FormatError("no common labels between the two CSV files");
  lfc::write_bd_table(std::cout, entries);
  if (!a.bd_csv.empty()) {
    std::ofstream out(a.bd_csv);
    if (!out) throw lfc::IoError("cannot write " + a.bd_csv);
    lfc::write_bd_csv(out, entries);
  }
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const BadArgs*>(&e) || dynamic_cast<const lfc::ConfigError*>(&e) ||
      dynamic_cast<const lfc::ParameterError*>(&e) || dynamic_cast<const std::out_of_range*>(&e)) {
    return kBadArgs;
  }
  if (dynamic_cast<const lfc::IoError*>(&e)) return kIo;
  if (dynamic_cast<const lfc::DecodeError*>(&e)) return kDecode;
  if (dynamic_cast<const lfc::ShapeError*>(&e) || dynamic_cast<const lfc::FormatError*>(&e)) return kShape;
  return kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned light-field image codec"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file; command-line flags take precedence");
  Common common;
  app.add_option("--seed", common.seed, "Seed for all randomness")->capture_default_str();

  InitArgs ia;
  auto* init = app.add_subcommand("init", "Write a freshly initialized checkpoint");
  init->add_option("--output", ia.output)->required();
  init->add_option("--angular", ia.A, "Angular resolution A")->check(CLI::Range(1, 16))->capture_default_str();
  init->add_option("--channels", ia.channels)->check(CLI::IsMember({1, 3}))->capture_default_str();
  init->add_option("--width", ia.width, "toy or standard")->capture_default_str();
  init->add_option("--ablate", ia.ablate, "Comma-separated ablation flags");
  init->add_option("--lambda-index", ia.lambda_index)->check(CLI::Range(0, 4))->capture_default_str();

  EncodeArgs ea;
  auto* encode = app.add_subcommand("encode", "Encode a light field");
  encode->add_option("--input", ea.input, "SAI directory or MacPI image")->required();
  encode->add_option("--layout", ea.layout, "sai or macpi")->capture_default_str();
  encode->add_option("--checkpoint", ea.checkpoint)->required();
  encode->add_option("--output", ea.output)->required();
  encode->add_option("--report", ea.report, "JSON report path (default stdout)");
  encode->add_option("--lambda-index", ea.lambda_index)->check(CLI::Range(0, 255));
  encode->add_option("--ablate", ea.ablate, "Expected ablation flags of the checkpoint");

  DecodeArgs da;
  auto* decode = app.add_subcommand("decode", "Decode a bitstream");
  decode->add_option("--input", da.input)->required();
  decode->add_option("--checkpoint", da.checkpoint)->required();
  decode->add_option("--output", da.output, "SAI directory or MacPI image");
  decode->add_option("--layout", da.layout, "Output layout (default: as encoded)");
  decode->add_option("--reference", da.reference, "Original light field for PSNR");
  decode->add_option("--report", da.report);
  decode->add_flag("--luma", da.luma, "PSNR on luma only");

  EvaluateArgs va;
  auto* evaluate = app.add_subcommand("evaluate", "Encode and decode in memory, report bpp and PSNR");
  evaluate->add_option("--input", va.input)->required();
  evaluate->add_option("--layout", va.layout)->capture_default_str();
  evaluate->add_option("--checkpoint", va.checkpoint)->required();
  evaluate->add_option("--report", va.report);
  evaluate->add_flag("--luma", va.luma);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a toy model on synthetic light fields");
  train->add_option("--output", ta.output)->required();
  train->add_option("--init", ta.init, "Start from this checkpoint");
  auto* lam = train->add_option("--lambda", ta.lambda, "Overrides --lambda-index");
  train->add_option("--lambda-index", ta.lambda_index)->check(CLI::Range(0, 4))->excludes(lam)->capture_default_str();
  train->add_option("--steps", ta.steps)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--batch", ta.batch)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--lr", ta.lr)->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--synthetic", ta.synthetic, "Number of synthetic fields")->check(CLI::PositiveNumber)
      ->capture_default_str();
  train->add_option("--angular", ta.A)->check(CLI::Range(1, 16))->capture_default_str();
  train->add_option("--size", ta.size, "Spatial extent H = W")->check(CLI::PositiveNumber)->capture_default_str();
  train->add_option("--channels", ta.channels)->check(CLI::IsMember({1, 3}))->capture_default_str();
  train->add_option("--ablate", ta.ablate);
  train->add_option("--trace", ta.trace, "Per-step CSV trace");

  RdsweepArgs ra;
  auto* rdsweep = app.add_subcommand("rdsweep", "RD points over a set of checkpoints, BD table vs a baseline");
  rdsweep->add_option("--checkpoint", ra.checkpoints, "One per lambda, repeatable")->required();
  rdsweep->add_option("--input", ra.inputs, "Repeatable");
  rdsweep->add_option("--layout", ra.layout)->capture_default_str();
  rdsweep->add_option("--synthetic", ra.synthetic, "Use N synthetic fields instead of --input");
  rdsweep->add_option("--angular", ra.A)->capture_default_str();
  rdsweep->add_option("--size", ra.size)->capture_default_str();
  rdsweep->add_option("--csv", ra.csv, "RD CSV output");
  rdsweep->add_option("--baseline", ra.baseline, "Baseline RD CSV");
  rdsweep->add_option("--table", ra.table, "BD table output (default stdout)");
  rdsweep->add_option("--bd-csv", ra.bd_csv);
  rdsweep->add_flag("--luma", ra.luma);

  BdArgs ba;
  auto* bd = app.add_subcommand("bd", "BD-rate and BD-PSNR between two RD CSV files");
  bd->add_option("--test", ba.test)->required();
  bd->add_option("--anchor", ba.anchor)->required();
  bd->add_option("--anchor-name", ba.anchor_name)->capture_default_str();
  bd->add_option("--bd-csv", ba.bd_csv);

  bool inject = false;
  auto* selftest = app.add_subcommand("selftest", "Run the built-in oracle suites");
  selftest->add_flag("--inject-grad-bug", inject, "Corrupt one backward rule (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kBadArgs;
  }

  try {
    if (*init) return run_init(ia, common);
    if (*encode) return run_encode(ea);
    if (*decode) return run_decode(da);
    if (*evaluate) return run_evaluate(va);
    if (*train) return run_train(ta, common);
    if (*rdsweep) return run_rdsweep(ra, common);
    if (*bd) return run_bd(ba);
    if (*selftest) {
      lfc::SelftestOptions opt;
      opt.seed = common.seed;
      opt.inject_gradient_bug = inject;
      return lfc::run_selftest(std::cout, opt) == 0 ? kOk : kFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "lfcodec: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kOk;
}
