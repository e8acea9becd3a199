#include "omenn/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <ostream>

#include "CLI11.hpp"
#include "omenn/engine.hpp"
#include "omenn/faithfulness.hpp"
#include "omenn/generate.hpp"
#include "omenn/grid_io.hpp"
#include "omenn/layers.hpp"
#include "omenn/model_format.hpp"
#include "omenn/oracle.hpp"
#include "omenn/postprocess.hpp"

namespace omenn::cli {
namespace {

namespace fs = std::filesystem;

std::string num(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct Usage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t check_class(const ModelGraph& model, long k) {
  if (k < 0 || static_cast<std::size_t>(k) >= model.logits) {
    throw Usage("--class must lie in [0, " + std::to_string(model.logits) + ")");
  }
  return static_cast<std::size_t>(k);
}

// --- explain ---------------------------------------------------------------

struct ExplainArgs {
  std::string model, input, out = "attribution";
  long cls = 0;
  bool raw = false, no_clip = false;
  std::vector<double> post;
};

int do_explain(const ExplainArgs& a, std::ostream& out) {
  const ModelGraph model = format::load_model(a.model);
  const Tensor x = load_input(a.input, model.input);
  const std::size_t k = check_class(model, a.cls);
  const ExplanationResult r = explain(model, x, k);

  const std::size_t h = model.input.height, w = model.input.width;
  write_grid(a.out + ".contrib.grid", r.c, h, w);
  write_grid(a.out + ".cw.grid", r.c_w, h, w);
  write_grid(a.out + ".cb.grid", r.c_b, h, w);
  out << "logit      " << num("%.10g", r.logit) << "\n";
  out << "sum C      " << num("%.10g", sum(r.c)) << "\n";
  out << "residual   " << num("%.3e", r.completeness_residual) << "\n";
  out << "wrote      " << a.out << ".contrib.grid, .cw.grid, .cb.grid\n";
  if (r.flagged) out << "warning: completeness residual above tolerance\n";

  if (!a.raw) {
    if (!model.input.spatial()) {
      out << "note: input has no spatial layout; heatmap skipped\n";
    } else {
      PostConfig cfg;
      cfg.clip_negatives = !a.no_clip;
      if (!a.post.empty()) {
        if (a.post.size() != 2 || a.post[1] < 1 || a.post[1] != std::floor(a.post[1])) {
          throw Usage("--post expects q,k_size");
        }
        cfg.quantile = a.post[0];
        cfg.kernel = static_cast<std::size_t>(a.post[1]);
      }
      try {
        cfg.validate();
      } catch (const Error& e) {
        throw Usage(e.what());
      }
      const Tensor map = postprocess(r.c, h, w, cfg);
      write_grid(a.out + ".post.grid", map.reshaped({h * w, 1}), h, w);
      Tensor shown = map;
      if (!cfg.clip_negatives) {
        // Min-max scaling so negative contributions map to dark pixels.
        const double lo = *std::min_element(map.data().begin(), map.data().end());
        for (double& v : shown.storage()) v -= std::min(lo, 0.0);
      }
      write_pgm(a.out + ".heatmap.pgm", h, w, heatmap_pixels(shown));
      out << "wrote      " << a.out << ".post.grid, .heatmap.pgm (q=" << cfg.quantile
          << ", k=" << cfg.kernel << ", clip=" << (cfg.clip_negatives ? "on" : "off") << ")\n";
    }
  }
  return r.flagged ? kIntegrity : kOk;
}

// --- verify ----------------------------------------------------------------

struct VerifyArgs {
  std::string model, input;
  double tolerance = 1e-6;
};

int do_verify(const VerifyArgs& a, std::ostream& out) {
  const ModelGraph model = format::load_model(a.model);
  const Tensor x = load_input(a.input, model.input);
  const FrozenTrace trace = freeze_network(model, x);
  ExplainOptions opts;
  opts.tolerance = a.tolerance;
  opts.hard_cap = std::max(opts.hard_cap, a.tolerance);
  bool breach = false;
  out << "logit  value              sum C              residual   status\n";
  for (std::size_t k = 0; k < model.logits; ++k) {
    std::string status = "ok";
    double sc = 0.0, res = 0.0;
    try {
      const ExplanationResult r = explain(trace, k, opts);
      sc = sum(r.c);
      res = r.completeness_residual;
      if (r.flagged) status = "BREACH";
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Integrity) throw;
      status = "BREACH";
      sc = NAN;
      res = NAN;
    }
    breach = breach || status != "ok";
    out << num("%-6.0f", static_cast<double>(k)) << " " << num("%-18.10g", trace.logits[k]) << " "
        << num("%-18.10g", sc) << " " << num("%-10.3e", res) << " " << status << "\n";
  }
  for (const auto& m : trace.diagnostics.messages) out << "note: " << m << "\n";
  out << (breach ? "completeness: FAILED\n" : "completeness: ok\n");
  return breach ? kIntegrity : kOk;
}

// --- oracle-check ----------------------------------------------------------

struct OracleArgs {
  std::string model, input;
  long cls = 0;
  std::size_t cap = kDefaultDenseCap;
  double threshold = 1e-8;
};

int do_oracle_check(const OracleArgs& a, std::ostream& out) {
  const ModelGraph model = format::load_model(a.model);
  const Tensor x = load_input(a.input, model.input);
  const std::size_t k = check_class(model, a.cls);
  const FrozenTrace trace = freeze_network(model, x);
  const ExplanationResult engine = explain(trace, k);
  const ExplanationResult dense = oracle::oracle_explain(trace, k, {a.cap});
  const double diff_wb = max_abs_diff(engine.c_wb, dense.c_wb);
  const double diff_c = max_abs_diff(engine.c, dense.c);
  const double diff = std::max(diff_wb, diff_c);
  out << "max |C~wb engine - oracle|  " << num("%.3e", diff_wb) << "\n";
  out << "max |C engine - oracle|     " << num("%.3e", diff_c) << "\n";
  const bool ok = diff <= a.threshold;
  out << "oracle agreement: " << (ok ? "ok" : "FAILED") << " (threshold " << num("%.1e", a.threshold)
      << ")\n";
  return ok ? kOk : kIntegrity;
}

// --- bench-faithfulness ----------------------------------------------------

struct BenchArgs {
  std::string model, inputs;
  std::vector<std::string> methods;
  long cls = -1;
  double subset = 0.2;
  std::size_t trials = 30, seeds = 10;
  std::uint64_t seed = 0;
};

std::vector<fs::path> list_inputs(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::Io, "'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".grid" || ext == ".pgm" || ext == ".ppm")) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail(ErrorCode::Io, "no .grid/.pgm/.ppm inputs in '" + dir.string() + "'");
  return files;
}

int do_bench(const BenchArgs& a, std::ostream& out) {
  const ModelGraph model = format::load_model(a.model);
  std::vector<AttributionMethod> methods;
  for (const auto& m : a.methods) {
    try {
      methods.push_back(parse_method(m));
    } catch (const Error& e) {
      throw Usage(e.what());
    }
  }
  if (methods.empty()) {
    methods = {AttributionMethod::Omenn, AttributionMethod::Gradient,
               AttributionMethod::GradientTimesInput, AttributionMethod::Random};
  }
  FaithfulnessConfig cfg;
  cfg.subset = a.subset;
  cfg.trials = a.trials;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Usage(e.what());
  }
  if (a.seeds == 0) throw Usage("--seeds must be positive");

  std::vector<Tensor> inputs;
  for (const auto& p : list_inputs(a.inputs)) inputs.push_back(load_input(p, model.input));

  out << "metric: faithfulness correlation (baseline 0, subset " << num("%g", cfg.subset)
      << ", trials " << cfg.trials << ")\n";
  out << "inputs: " << inputs.size() << "  seeds: " << a.seed << ".." << a.seed + a.seeds - 1
      << "\n";
  out << "method       mean       std        n     undefined\n";
  for (AttributionMethod m : methods) {
    std::vector<double> scores;
    std::size_t undefined = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Tensor& x = inputs[i];
      std::size_t k = 0;
      if (a.cls >= 0) {
        k = check_class(model, a.cls);
      } else {
        const Tensor logits = model_logits(model, x);
        k = static_cast<std::size_t>(std::max_element(logits.data().begin(), logits.data().end()) -
                                     logits.data().begin());
      }
      Tensor attr;
      if (m != AttributionMethod::Random) attr = attribute(model, x, k, m);
      for (std::size_t s = 0; s < a.seeds; ++s) {
        const std::uint64_t seed = a.seed + s;
        if (m == AttributionMethod::Random) attr = attribute(model, x, k, m, seed * 7919 + i);
        cfg.seed = seed;
        try {
          scores.push_back(faithfulness_correlation(model, x, attr, k, cfg));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::UndefinedCorrelation) throw;
          ++undefined;
        }
      }
    }
    double mean = 0.0, sd = 0.0;
    for (double s : scores) mean += s;
    if (!scores.empty()) mean /= static_cast<double>(scores.size());
    for (double s : scores) sd += (s - mean) * (s - mean);
    if (scores.size() > 1) sd = std::sqrt(sd / static_cast<double>(scores.size() - 1));
    char line[128];
    std::snprintf(line, sizeof line, "%-12s %-10.4f %-10.4f %-5zu %zu\n", to_string(m), mean, sd,
                  scores.size(), undefined);
    out << line;
  }
  return kOk;
}

// --- gen-model -------------------------------------------------------------

struct GenArgs {
  std::string arch, out, input_out;
  std::uint64_t seed = 0;
};

int do_gen(const GenArgs& a, std::ostream& out) {
  ModelGraph model;
  try {
    model = generate_random_model(parse_arch_spec(a.arch), a.seed);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Parameter) throw;
    throw Usage(e.what());
  }
  format::save_model(model, a.out);
  out << "wrote " << (fs::path(a.out) / format::kManifestName).string() << " (" << model.layers.size()
      << " layers, " << model.logits << " logits)\n";
  if (!a.input_out.empty()) {
    write_grid(a.input_out, random_input(model.input, a.seed), model.input.height,
               model.input.width);
    out << "wrote " << a.input_out << "\n";
  }
  return kOk;
}

// --- demo-gelu -------------------------------------------------------------

int do_demo_gelu(std::ostream& out) {
  // One-unit GELU network; both columns come from the engine itself.
  ModelGraph model;
  model.input = flat_shape(1, 1);
  model.logits = 1;
  model.layers.push_back(activation_layer(ActivationKind::GELU));
  out << "GELU contributions (OMENN vs gradient)\n";
  out << "x          grad(x)    Omega_w(x) grad*x     Omega_w*x  GELU(x)\n";
  for (double x0 : {-4.0, -0.75}) {
    const Tensor x({1, 1}, {x0});
    const ExplanationResult r = explain(model, x, 0);
    const double grad = explain_gradient(model, x, 0)[0];
    const double omega = r.c_wb(0, 0);
    char line[160];
    std::snprintf(line, sizeof line, "%-10.4f %-10.6f %-10.6f %-10.6f %-10.6f %.6f\n", x0, grad,
                  omega, grad * x0, r.c[0], r.logit);
    out << line;
  }
  return kOk;
}

}  // namespace

int exit_code(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Capability:
    case ErrorCode::Resource:
      return kCapability;
    case ErrorCode::Integrity:
    case ErrorCode::UndefinedCorrelation:
      return kIntegrity;
    case ErrorCode::OutOfRange:
      return kUsage;
    default:
      return kIo;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Input-dependent linear explanations for neural networks", "omenn"};
  app.require_subcommand(1);

  ExplainArgs ea;
  auto* explain_cmd = app.add_subcommand("explain", "Contribution map for one logit");
  explain_cmd->add_option("--model", ea.model, "Manifest or model directory")->required();
  explain_cmd->add_option("--input", ea.input, "Input grid or PGM/PPM image")->required();
  explain_cmd->add_option("--class", ea.cls, "Logit index")->required();
  explain_cmd->add_option("--out", ea.out, "Output path prefix");
  auto* raw = explain_cmd->add_flag("--raw", ea.raw, "Skip post-processing");
  explain_cmd->add_option("--post", ea.post, "Quantile and filter size, e.g. 0.99,3")
      ->delimiter(',')
      ->excludes(raw);
  explain_cmd->add_flag("--no-clip", ea.no_clip, "Keep negative contributions in the heatmap");

  VerifyArgs va;
  auto* verify_cmd = app.add_subcommand("verify", "Completeness report over all logits");
  verify_cmd->add_option("--model", va.model)->required();
  verify_cmd->add_option("--input", va.input)->required();
  verify_cmd->add_option("--tolerance", va.tolerance, "Relative residual bound")
      ->check(CLI::PositiveNumber);

  OracleArgs oa;
  auto* oracle_cmd = app.add_subcommand("oracle-check", "Compare the engine with the dense oracle");
  oracle_cmd->add_option("--model", oa.model)->required();
  oracle_cmd->add_option("--input", oa.input)->required();
  oracle_cmd->add_option("--class", oa.cls)->required();
  oracle_cmd->add_option("--cap", oa.cap, "Largest dense dimension")->check(CLI::PositiveNumber);
  oracle_cmd->add_option("--threshold", oa.threshold, "Allowed max-abs difference")
      ->check(CLI::NonNegativeNumber);

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench-faithfulness", "Faithfulness correlation table");
  bench_cmd->add_option("--model", ba.model)->required();
  bench_cmd->add_option("--inputs", ba.inputs, "Directory of input files")->required();
  bench_cmd->add_option("--method", ba.methods, "omenn, gradient, gradxinput or random")
      ->delimiter(',');
  bench_cmd->add_option("--class", ba.cls, "Logit index (default: predicted class)");
  bench_cmd->add_option("--subset", ba.subset, "Fraction of tokens perturbed per trial");
  bench_cmd->add_option("--trials", ba.trials, "Trials per score");
  bench_cmd->add_option("--seeds", ba.seeds, "Seeds per input");
  bench_cmd->add_option("--seed", ba.seed, "First seed");

  GenArgs ga;
  auto* gen_cmd = app.add_subcommand("gen-model", "Write a random model from a template");
  gen_cmd->add_option("--arch", ga.arch, "e.g. mlp:in=2,hidden=4,out=1,act=gelu")->required();
  gen_cmd->add_option("--seed", ga.seed);
  gen_cmd->add_option("--out", ga.out, "Output directory")->required();
  gen_cmd->add_option("--input-out", ga.input_out, "Also write a random input grid");

  auto* demo_cmd = app.add_subcommand("demo-gelu", "GELU worked example at x = -4 and -0.75");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (explain_cmd->parsed()) return do_explain(ea, out);
    if (verify_cmd->parsed()) return do_verify(va, out);
    if (oracle_cmd->parsed()) return do_oracle_check(oa, out);
    if (bench_cmd->parsed()) return do_bench(ba, out);
    if (gen_cmd->parsed()) return do_gen(ga, out);
    if (demo_cmd->parsed()) return do_demo_gelu(out);
  } catch (const Usage& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}

}  // namespace omenn::cli
