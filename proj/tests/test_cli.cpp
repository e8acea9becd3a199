#include <sstream>

#include "doctest.h"
#include "omenn/cli.hpp"
#include "omenn/grid_io.hpp"
#include "omenn/layers.hpp"
#include "omenn/model_format.hpp"
#include "omenn/postprocess.hpp"
#include "oracles.hpp"

using namespace omenn;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  const auto b = format::read_file(p);
  return {b.begin(), b.end()};
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"frobnicate"}).code == cli::kUsage);
  CHECK(run({"demo-gelu", "--bogus"}).code == cli::kUsage);
  CHECK(run({"verify", "--model", "m"}).code == cli::kUsage);
  CHECK(run({"--help"}).code == cli::kOk);
  CHECK(run({"gen-model", "--arch", "nope", "--out", "x"}).code == cli::kUsage);
}

TEST_CASE("exit code table") {
  CHECK(cli::exit_code(ErrorCode::Capability) == 3);
  CHECK(cli::exit_code(ErrorCode::Resource) == 3);
  CHECK(cli::exit_code(ErrorCode::Integrity) == 4);
  CHECK(cli::exit_code(ErrorCode::Io) == 2);
  CHECK(cli::exit_code(ErrorCode::Parse) == 2);
  CHECK(cli::exit_code(ErrorCode::MissingBlob) == 2);
  CHECK(cli::exit_code(ErrorCode::Checksum) == 2);
}

TEST_CASE("demo-gelu prints the worked example") {
  const Result r = run({"demo-gelu"});
  CHECK(r.code == 0);
  CHECK(r.out.find("0.226627") != std::string::npos);
  CHECK(r.out.find("-0.169971") != std::string::npos);
  CHECK(r.out.find("-4.0000") != std::string::npos);
}

TEST_CASE("verify a pure-bias model") {
  const fs::path dir = testing::scratch_dir("cli_bias");
  ModelGraph m;
  m.input = flat_shape(1, 3);
  m.logits = 1;
  m.layers.push_back(fc_layer(Tensor({3, 1}), Tensor({1}, std::vector<double>{5})));
  format::save_model(m, dir / "model");
  write_grid(dir / "x.grid", Tensor::from_rows({{1, -2, 3}}));
  const Result r = run({"verify", "--model", (dir / "model").string(), "--input",
                        (dir / "x.grid").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("0.000e+00") != std::string::npos);
  CHECK(r.out.find("completeness: ok") != std::string::npos);
}

TEST_CASE("oracle-check on a random mini-ViT") {
  const fs::path dir = testing::scratch_dir("cli_vit");
  const std::string model = (dir / "m").string(), input = (dir / "x.grid").string();
  REQUIRE(run({"gen-model", "--arch", "vit-block:h=4,w=4,c=2,heads=2", "--seed", "5", "--out",
               model, "--input-out", input})
              .code == 0);
  const Result r = run({"oracle-check", "--model", model, "--input", input, "--class", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("oracle agreement: ok") != std::string::npos);
  CHECK(run({"oracle-check", "--model", model, "--input", input, "--class", "1", "--cap", "10"})
            .code == cli::kCapability);
  CHECK(run({"oracle-check", "--model", model, "--input", input, "--class", "9"}).code ==
        cli::kUsage);
}

TEST_CASE("failure paths map to exit codes") {
  const fs::path dir = testing::scratch_dir("cli_fail");
  CHECK(run({"verify", "--model", (dir / "missing").string(), "--input", "x"}).code == cli::kIo);

  ModelGraph m;
  m.input = flat_shape(1, 2);
  m.logits = 2;
  m.layers.push_back(fc_layer(Tensor::identity(2), Tensor({2})));
  m.layers.push_back(opaque_layer(LayerKind::Sigmoid));
  format::save_model(m, dir / "m");
  write_grid(dir / "x.grid", Tensor::from_rows({{1, 2}}));
  const Result r = run({"explain", "--model", (dir / "m").string(), "--input",
                        (dir / "x.grid").string(), "--class", "0", "--out",
                        (dir / "a").string()});
  CHECK(r.code == cli::kCapability);
  CHECK(r.err.find("layer 1") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "a.contrib.grid"));

  write_grid(dir / "wrong.grid", Tensor::from_rows({{1, 2, 3}}));
  CHECK(run({"verify", "--model", (dir / "m").string(), "--input", (dir / "wrong.grid").string()})
            .code == cli::kIo);
}

TEST_CASE("explain writes reproducible artifacts") {
  const fs::path dir = testing::scratch_dir("cli_explain");
  const std::string model = (dir / "m").string(), input = (dir / "x.grid").string();
  REQUIRE(run({"gen-model", "--arch", "cnn:h=6,w=6,c=1", "--seed", "2", "--out", model,
               "--input-out", input})
              .code == 0);
  auto explain = [&](const std::string& prefix, std::vector<std::string> extra) {
    std::vector<std::string> args{"explain", "--model", model, "--input", input, "--class", "1",
                                  "--out",   (dir / prefix).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  const Result a = explain("a", {});
  CHECK(a.code == 0);
  CHECK(a.out.find("residual") != std::string::npos);
  const Result b = explain("b", {});
  for (const char* ext : {".contrib.grid", ".cw.grid", ".cb.grid", ".post.grid", ".heatmap.pgm"}) {
    CAPTURE(ext);
    REQUIRE(fs::exists(dir / (std::string("a") + ext)));
    CHECK(slurp(dir / (std::string("a") + ext)) == slurp(dir / (std::string("b") + ext)));
  }
  const Tensor c = read_grid(dir / "a.contrib.grid").values;
  const Image img = read_pnm(dir / "a.heatmap.pgm");
  CHECK(img.pixels == heatmap_pixels(postprocess(c, 6, 6, PostConfig{})));
  CHECK(explain("raw", {"--raw"}).code == 0);
  CHECK_FALSE(fs::exists(dir / "raw.heatmap.pgm"));
  CHECK(explain("p", {"--post", "0.9,5", "--no-clip"}).code == 0);
  CHECK(explain("bad", {"--post", "0.9,4"}).code == cli::kUsage);
  CHECK(explain("bad", {"--raw", "--post", "0.9,3"}).code == cli::kUsage);

  // Regenerating with the same seed is bitwise identical.
  const std::string model2 = (dir / "m2").string(), input2 = (dir / "x2.grid").string();
  run({"gen-model", "--arch", "cnn:h=6,w=6,c=1", "--seed", "2", "--out", model2, "--input-out",
       input2});
  CHECK(slurp(fs::path(model) / "model.json") == slurp(fs::path(model2) / "model.json"));
  CHECK(slurp(input) == slurp(input2));
}

TEST_CASE("bench-faithfulness on the toy CNN") {
  const fs::path dir = testing::fixture_dir("toy_cnn");
  const Result r = run({"bench-faithfulness", "--model", dir.string(), "--inputs",
                        (dir / "probes").string(), "--method", "omenn,random", "--seeds", "2"});
  CHECK(r.code == 0);
  CHECK(r.out.find("omenn") != std::string::npos);
  CHECK(r.out.find("random") != std::string::npos);
  CHECK(run({"bench-faithfulness", "--model", dir.string(), "--inputs", (dir / "probes").string(),
             "--method", "lime"})
            .code == cli::kUsage);
  CHECK(run({"bench-faithfulness", "--model", dir.string(), "--inputs", (dir / "nowhere").string()})
            .code == cli::kIo);
}
