// p2ssm: preprocess | corrupt | train | infer | evaluate | analyze | benchmark
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 numerical
// abort (non-finite loss or outputs).

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "p2ssm/errors.hpp"
#include "p2ssm/kernels.hpp"
#include "p2ssm/pipeline.hpp"

namespace {

p2ssm::ExperimentConfig read_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw p2ssm::ConfigError("cannot open config " + path);
  p2ssm::Json doc = p2ssm::Json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw p2ssm::ConfigError(path + ": not valid JSON");
  for (const auto& o : overrides) p2ssm::apply_override(doc, o);
  return p2ssm::config_from_json(doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point cloud to statistical shape model correspondences"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
  int log_every = 10;
  std::string simd;
  const auto common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", overrides, "override a config key: dot.path=value (repeatable)");
    cmd->add_flag("-q,--quiet", quiet, "no progress output");
    cmd->add_option("--log-every", log_every, "epochs between progress lines");
    cmd->add_option("--simd", simd, "distance kernel variant: scalar | avx2");
  };

  auto* preprocess = app.add_subcommand("preprocess", "align, split and normalize the cohort");
  auto* corrupt = app.add_subcommand("corrupt", "write the corrupted network inputs");
  auto* train = app.add_subcommand("train", "train and write the best checkpoint");
  auto* infer = app.add_subcommand("infer", "predict correspondences for point clouds or meshes");
  auto* evaluate = app.add_subcommand("evaluate", "surface metrics on the test split");
  auto* analyze = app.add_subcommand("analyze", "PCA shape statistics of predicted correspondences");
  auto* benchmark = app.add_subcommand("benchmark", "run the variant x corruption x size grid");
  for (auto* cmd : {preprocess, corrupt, train, infer, evaluate, analyze, benchmark}) common(cmd);

  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string infer_out;
  infer->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_option("inputs", inputs, ".xyz/.particles/.ply/.obj files in mm")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file (default: <output_dir>/train/checkpoint.bin)");
  std::string correspondences;
  analyze->add_option("--correspondences", correspondences,
                      "directory with train/ and test/ .particles (default: <output_dir>/evaluate/correspondences)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!simd.empty()) {
      if (simd == "scalar") {
        p2ssm::kernels::set_active_isa(p2ssm::kernels::Isa::scalar);
      } else if (simd == "avx2") {
        p2ssm::kernels::set_active_isa(p2ssm::kernels::Isa::avx2);
      } else {
        throw p2ssm::ConfigError("--simd: expected scalar or avx2");
      }
    }
    const p2ssm::ExperimentConfig cfg = read_config(config_path, overrides);
    p2ssm::RunOptions opts;
    opts.log = quiet ? nullptr : &std::cerr;
    opts.log_every = log_every;

    if (preprocess->parsed()) {
      p2ssm::cmd_preprocess(cfg, opts);
    } else if (corrupt->parsed()) {
      p2ssm::cmd_corrupt(cfg, opts);
    } else if (train->parsed()) {
      p2ssm::cmd_train(cfg, opts);
    } else if (infer->parsed()) {
      std::vector<std::filesystem::path> paths(inputs.begin(), inputs.end());
      p2ssm::cmd_infer(cfg, checkpoint, paths, infer_out, opts);
    } else if (evaluate->parsed()) {
      std::optional<std::filesystem::path> ckpt;
      if (!checkpoint.empty()) ckpt = checkpoint;
      p2ssm::cmd_evaluate(cfg, ckpt, opts);
    } else if (analyze->parsed()) {
      std::optional<std::filesystem::path> dir;
      if (!correspondences.empty()) dir = correspondences;
      p2ssm::cmd_analyze(cfg, dir, opts);
    } else if (benchmark->parsed()) {
      const auto rows = p2ssm::cmd_benchmark(cfg, opts);
      for (const auto& r : rows) {
        if (r.status != "ok") {
          std::cerr << "error: " << r.cell << ": " << r.message << '\n';
          return 3;
        }
      }
    }
  } catch (const p2ssm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const p2ssm::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
