#include "p2ssm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "p2ssm/errors.hpp"
#include "p2ssm/mesh_io.hpp"
#include "p2ssm/metrics.hpp"

namespace p2ssm {

namespace fs = std::filesystem;

namespace {

std::mutex g_log_mutex;

void log_line(const RunOptions& opts, const std::string& line) {
  if (opts.log == nullptr) return;
  const std::lock_guard<std::mutex> lock(g_log_mutex);
  *opts.log << line << '\n' << std::flush;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const Json& j) { open_out(path) << j.dump(2) << '\n'; }

// The blocks that determine the preprocessed cohort.
Json preprocess_key(const ExperimentConfig& cfg) {
  const Json full = to_json(cfg);
  return {{"dataset", full.at("dataset")}, {"preprocessing", full.at("preprocessing")}};
}

bool is_mesh_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".ply" || ext == ".obj";
}

PointCloud as_network_cloud(Points p) {
  const bool in_range = p.size() == 0 || p.cwiseAbs().maxCoeff() <= 1.0;
  return PointCloud(std::move(p), in_range);
}

std::string format_number(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

Cohort ensure_preprocessed(const ExperimentConfig& cfg, const RunOptions& opts) {
  const fs::path dir = resolve_output_dir(cfg) / "preprocessed";
  if (fs::exists(dir / "config.json") && fs::exists(dir / "splits.csv")) {
    std::ifstream in(dir / "config.json");
    Json echo = Json::parse(in, nullptr, false);
    if (!echo.is_discarded()) {
      try {
        if (preprocess_key(config_from_json(echo)) == preprocess_key(cfg)) return load_preprocessed(dir);
      } catch (const Error&) {
        // stale or foreign echo: rebuild below
      }
    }
  }
  return cmd_preprocess(cfg, opts);
}

Network<float> load_network(const fs::path& path, Checkpoint* out = nullptr) {
  Checkpoint ckpt = load_checkpoint(path);
  Network<float> net(ckpt.params);
  if (out) *out = std::move(ckpt);
  return net;
}

double mean_pairwise_mapping_error(const std::vector<PointsT<float>>& outputs, int k) {
  if (outputs.size() < 2) return 0.0;
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    for (std::size_t j = 0; j < outputs.size(); ++j) {
      if (i == j) continue;
      sum += static_cast<double>(mapping_error<float>(outputs[i], outputs[j], k));
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

void write_metrics_csv(const fs::path& path, const EvaluationResult& r) {
  auto out = open_out(path);
  out << "shape_id,cd_mm2,emd_mm,p2f_mean_mm,p2f_max_mm\n" << std::setprecision(9);
  const auto cell = [&out](const std::optional<double>& v) {
    out << ',';
    if (v) out << *v;
  };
  for (const auto& s : r.shapes) {
    if (s.split != Split::test) continue;
    out << s.id;
    cell(s.cd_mm2);
    cell(s.emd_mm);
    cell(s.p2f_mean_mm);
    cell(s.p2f_max_mm);
    out << '\n';
  }
  const bool any = !r.shapes.empty();
  const auto mean_cell = [&](bool present, double v) {
    out << ',';
    if (present) out << v;
  };
  const ShapeEvaluation* first = nullptr;
  for (const auto& s : r.shapes) {
    if (s.split == Split::test) {
      first = &s;
      break;
    }
  }
  out << "mean";
  mean_cell(any && first && first->cd_mm2, r.mean_cd_mm2);
  mean_cell(any && first && first->emd_mm, r.mean_emd_mm);
  mean_cell(any && first && first->p2f_mean_mm, r.mean_p2f_mm);
  out << ",\n";
}

Json analysis_json(const AnalysisResult& a, const EvaluationConfig& ecfg) {
  return {{"n_train", a.pca.n_train},
          {"variance_threshold", ecfg.variance_threshold},
          {"compactness", a.compactness.modes},
          {"generalization_mm2", a.generalization.mean_squared},
          {"generalization_point_mm", a.generalization.mean_point},
          {"specificity_mm2", a.specificity.mean},
          {"specificity_standard_error", a.specificity.standard_error},
          {"specificity_samples", ecfg.specificity_samples}};
}

std::vector<Points> load_particle_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("missing correspondence directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".particles") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Points> sets;
  for (const auto& f : files) sets.push_back(io::load_points(f));
  return sets;
}

}  // namespace

Cohort build_cohort(const ExperimentConfig& cfg) {
  if (cfg.dataset.mesh_dir) {
    const fs::path dir(*cfg.dataset.mesh_dir);
    if (!fs::is_directory(dir)) throw ConfigError("dataset.mesh_dir: not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && is_mesh_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("dataset.mesh_dir: no .ply or .obj meshes in " + dir.string());
    Cohort c;
    for (const auto& f : files) {
      Shape s;
      s.id = f.stem().string();
      s.mesh = io::load_mesh(f);
      s.cloud = mesh_vertices_as_cloud(*s.mesh);
      c.shapes.push_back(std::move(s));
    }
    return c;
  }
  return generate_cohort(*cfg.dataset.synthetic).cohort;
}

Cohort preprocess_cohort(const ExperimentConfig& cfg, AlignmentReport* report) {
  Cohort c = build_cohort(cfg);
  if (cfg.preprocessing.align) {
    const auto r = align_cohort(c, cfg.preprocessing.icp_max_iters, cfg.preprocessing.icp_tol);
    if (report) *report = r;
  }
  c = split_cohort(c, cfg.dataset.split, cfg.dataset.split_seed);
  c.normalization = fit_normalization(c);
  return c;
}

void save_preprocessed(const fs::path& dir, const Cohort& cohort) {
  fs::create_directories(dir / "meshes");
  auto splits = open_out(dir / "splits.csv");
  splits << "shape_id,split\n";
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& s = cohort.shapes[i];
    if (!s.mesh) throw ValidationError("shape " + s.id + " has no mesh");
    io::save_ply(dir / "meshes" / (s.id + ".ply"), *s.mesh);
    splits << s.id << ',' << split_name(cohort.splits.at(i)) << '\n';
  }
  if (cohort.normalization) io::save_normalization(dir / "normalization.json", *cohort.normalization);
}

Cohort load_preprocessed(const fs::path& dir) {
  std::ifstream in(dir / "splits.csv");
  if (!in) throw ValidationError("no preprocessed cohort at " + dir.string() + " (run preprocess first)");
  std::string line;
  std::getline(in, line);
  Cohort c;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw FormatError((dir / "splits.csv").string() + ":" + std::to_string(lineno) + ": expected id,split");
    }
    Shape s;
    s.id = line.substr(0, comma);
    s.mesh = io::load_mesh(dir / "meshes" / (s.id + ".ply"));
    s.cloud = mesh_vertices_as_cloud(*s.mesh);
    c.shapes.push_back(std::move(s));
    c.splits.push_back(parse_split(line.substr(comma + 1)));
  }
  c.normalization = io::load_normalization(dir / "normalization.json");
  return c;
}

ShapeSet PreparedData::shape_set(Split s) const {
  ShapeSet out;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    if (cohort.splits[i] != s) continue;
    out.ids.push_back(cohort.shapes[i].id);
    out.inputs.push_back(inputs[i]);
    out.targets.push_back(targets[i]);
  }
  return out;
}

PreparedData prepare_data(const Cohort& preprocessed, const ExperimentConfig& cfg) {
  if (!preprocessed.normalization) throw ValidationError("cohort has no normalization parameters");
  CorruptionSpec spec = cfg.corruption;
  spec.input_size_n = cfg.model.n_input;
  const auto corrupted = corrupt_inputs(preprocessed, spec);

  std::vector<char> keep(preprocessed.size(), 1);
  if (spec.train_subset_size) {
    const Cohort subset = subset_training(preprocessed, static_cast<std::size_t>(*spec.train_subset_size), spec.seed);
    std::map<std::string, int> kept;
    for (const auto& s : subset.shapes) kept[s.id] = 1;
    for (std::size_t i = 0; i < preprocessed.size(); ++i) keep[i] = kept.count(preprocessed.shapes[i].id) ? 1 : 0;
  }

  PreparedData d;
  d.norm = *preprocessed.normalization;
  d.cohort.normalization = d.norm;
  for (std::size_t i = 0; i < preprocessed.size(); ++i) {
    if (!keep[i]) continue;
    const auto& shape = preprocessed.shapes[i];
    if (corrupted[i].count() < cfg.model.n_input) {
      throw ValidationError("shape " + shape.id + " keeps " + std::to_string(corrupted[i].count()) +
                            " points after corruption, fewer than model.N=" + std::to_string(cfg.model.n_input));
    }
    d.cohort.shapes.push_back(shape);
    d.cohort.splits.push_back(preprocessed.splits[i]);
    d.inputs.push_back(as_network_cloud(normalize_points(corrupted[i].points, d.norm)));
    d.targets.push_back(as_network_cloud(normalize_points(shape.cloud.points, d.norm)));
  }
  return d;
}

EvaluationResult evaluate_model(const Network<float>& net, const PreparedData& data, const EvaluationConfig& ecfg) {
  const auto wants = [&ecfg](const char* m) {
    return std::find(ecfg.metrics.begin(), ecfg.metrics.end(), m) != ecfg.metrics.end();
  };
  EvaluationResult r;
  for (std::size_t i = 0; i < data.cohort.size(); ++i) {
    const auto& shape = data.cohort.shapes[i];
    const auto out = net.forward(evaluation_input(data.inputs[i], net.config().n_input));
    ShapeEvaluation e;
    e.id = shape.id;
    e.split = data.cohort.splits[i];
    e.correspondences = denormalize(out.points.cast<double>(), data.norm);
    e.map = out.map.cast<double>();
    if (e.split == Split::test) {
      const Points& ref = shape.cloud.points;
      if (wants("cd")) {
        e.cd_mm2 = chamfer_distance<double>(e.correspondences, ref);
        r.mean_cd_mm2 += *e.cd_mm2;
      }
      if (wants("emd")) {
        const Eigen::Index m = std::min(e.correspondences.rows(), ref.rows());
        const Points a = farthest_point_sample(PointCloud(e.correspondences), m, 0).cloud.points;
        const Points b = farthest_point_sample(PointCloud(ref), m, 0).cloud.points;
        e.emd_mm = earth_movers_distance(a, b);
        r.mean_emd_mm += *e.emd_mm;
      }
      if (wants("p2f") && shape.mesh) {
        const auto d = point_to_face_distance(e.correspondences, *shape.mesh);
        double sum = 0.0, mx = 0.0;
        for (double v : d) {
          sum += v;
          mx = std::max(mx, v);
        }
        e.p2f_mean_mm = sum / static_cast<double>(d.size());
        e.p2f_max_mm = mx;
        r.mean_p2f_mm += *e.p2f_mean_mm;
      }
      ++r.n_test;
    }
    r.shapes.push_back(std::move(e));
  }
  if (r.n_test > 0) {
    r.mean_cd_mm2 /= r.n_test;
    r.mean_emd_mm /= r.n_test;
    r.mean_p2f_mm /= r.n_test;
  }
  return r;
}

AnalysisResult analyze_sets(const std::vector<Points>& train_sets, const std::vector<Points>& test_sets,
                            const EvaluationConfig& ecfg) {
  AnalysisResult a;
  a.pca = fit_pca(train_sets);
  a.compactness = compactness(a.pca, ecfg.variance_threshold);
  if (!test_sets.empty()) a.generalization = generalization(a.pca, test_sets, ecfg.variance_threshold);
  Rng rng(ecfg.seed);
  a.specificity = specificity(a.pca, train_sets, ecfg.specificity_samples, ecfg.variance_threshold, rng);
  return a;
}

Cohort cmd_preprocess(const ExperimentConfig& cfg, const RunOptions& opts) {
  const fs::path dir = resolve_output_dir(cfg) / "preprocessed";
  AlignmentReport report;
  Cohort c = preprocess_cohort(cfg, &report);
  save_preprocessed(dir, c);
  if (cfg.dataset.synthetic && !cfg.dataset.mesh_dir) {
    const auto gen = generate_cohort(*cfg.dataset.synthetic);
    auto lat = open_out(dir / "latents.csv");
    lat << "shape_id";
    for (std::size_t k = 0; k < gen.latents.front().size(); ++k) lat << ",z" << k;
    lat << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < gen.latents.size(); ++i) {
      lat << gen.cohort.shapes[i].id;
      for (double z : gen.latents[i]) lat << ',' << z;
      lat << '\n';
    }
  }
  if (!report.transforms.empty()) {
    auto out = open_out(dir / "alignment.csv");
    out << "shape_id,is_reference,rotation_deg,tx_mm,ty_mm,tz_mm\n" << std::setprecision(12);
    for (std::size_t i = 0; i < report.transforms.size(); ++i) {
      const auto& t = report.transforms[i];
      out << c.shapes[i].id << ',' << (i == report.reference_index ? 1 : 0) << ','
          << t.rotation_angle() * 180.0 / std::numbers::pi << ',' << t.translation.x() << ',' << t.translation.y()
          << ',' << t.translation.z() << '\n';
    }
  }
  save_config(dir / "config.json", cfg);
  log_line(opts, "preprocess: " + std::to_string(c.size()) + " shapes -> " + dir.string());
  return c;
}

void cmd_corrupt(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Cohort base = ensure_preprocessed(cfg, opts);
  const PreparedData d = prepare_data(base, cfg);
  const fs::path dir = resolve_output_dir(cfg) / "corrupted";
  fs::create_directories(dir / "inputs");
  auto subset = open_out(dir / "subset.csv");
  subset << "shape_id,split,points\n";
  for (std::size_t i = 0; i < d.cohort.size(); ++i) {
    const auto& id = d.cohort.shapes[i].id;
    io::save_points(dir / "inputs" / (id + ".xyz"), denormalize(d.inputs[i].points, d.norm));
    subset << id << ',' << split_name(d.cohort.splits[i]) << ',' << d.inputs[i].count() << '\n';
  }
  save_config(dir / "config.json", cfg);
  log_line(opts, "corrupt: " + std::to_string(d.cohort.size()) + " inputs -> " + dir.string());
}

TrainResult cmd_train(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Cohort base = ensure_preprocessed(cfg, opts);
  const PreparedData d = prepare_data(base, cfg);
  const fs::path dir = resolve_output_dir(cfg) / "train";
  fs::create_directories(dir);
  save_config(dir / "config.json", cfg);

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(cfg.model, cfg.train, d.shape_set(Split::train), d.shape_set(Split::val),
                              [&opts](const HistoryRow& row) {
                                if (opts.log_every > 0 && row.epoch % opts.log_every == 0) {
                                  std::ostringstream s;
                                  s << "epoch " << row.epoch << " train_loss " << row.train_loss << " val_cd "
                                    << row.val_cd;
                                  log_line(opts, s.str());
                                }
                              });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Checkpoint ckpt;
  ckpt.params = r.best;
  ckpt.normalization = d.norm;
  ckpt.loss = cfg.train.loss;
  ckpt.best_epoch = r.best_epoch;
  ckpt.best_val_cd = r.best_val_cd;
  save_checkpoint(dir / "checkpoint.bin", ckpt);
  write_history_csv(dir / "history.csv", r.history);
  write_json(dir / "summary.json", {{"best_epoch", r.best_epoch},
                                    {"best_val_cd", r.best_val_cd},
                                    {"epochs_run", r.epochs_run},
                                    {"parameters", r.best.tensors.scalar_count()},
                                    {"n_train", d.shape_set(Split::train).size()},
                                    {"n_val", d.shape_set(Split::val).size()},
                                    {"seconds", seconds}});
  log_line(opts, "train: best val CD " + format_number(r.best_val_cd) + " at epoch " +
                     std::to_string(r.best_epoch) + " -> " + dir.string());
  return r;
}

void cmd_infer(const ExperimentConfig& cfg, const fs::path& checkpoint, const std::vector<fs::path>& inputs,
               const fs::path& out_dir, const RunOptions& opts) {
  if (inputs.empty()) throw ConfigError("infer: no input files given");
  Checkpoint ckpt;
  const Network<float> net = load_network(checkpoint, &ckpt);
  NormalizationParams norm;
  if (ckpt.normalization) {
    norm = *ckpt.normalization;
  } else {
    norm = io::load_normalization(resolve_output_dir(cfg) / "preprocessed" / "normalization.json");
  }
  fs::create_directories(out_dir);
  save_config(out_dir / "config.json", cfg);
  auto timing = open_out(out_dir / "timing.csv");
  timing << "input,points,seconds\n" << std::setprecision(9);
  for (const auto& path : inputs) {
    const Points pts = is_mesh_file(path) ? io::load_mesh(path).vertices : io::load_points(path);
    const PointCloud cloud(pts);
    if (net.config().encoder == EncoderKind::dgcnn && cloud.count() <= net.config().graph_k) {
      throw ValidationError(path.string() + ": " + std::to_string(cloud.count()) +
                            " points, the encoder needs more than graph_k=" + std::to_string(net.config().graph_k));
    }
    const auto r = infer(net, cloud, norm);
    const std::string stem = path.stem().string();
    io::save_points(out_dir / (stem + ".particles"), r.points);
    if (cfg.evaluation.export_maps && r.map.size() > 0) {
      export_correspondence_map(out_dir / (stem + "_map.csv"), r.map);
    }
    timing << path.string() << ',' << cloud.count() << ',' << r.seconds << '\n';
    log_line(opts, "infer: " + path.string() + " (" + format_number(r.seconds) + " s)");
  }
}

EvaluationResult cmd_evaluate(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint,
                              const RunOptions& opts) {
  const fs::path root = resolve_output_dir(cfg);
  const Network<float> net = load_network(checkpoint.value_or(root / "train" / "checkpoint.bin"));
  const Cohort base = ensure_preprocessed(cfg, opts);
  const PreparedData d = prepare_data(base, cfg);
  const EvaluationResult r = evaluate_model(net, d, cfg.evaluation);

  const fs::path dir = root / "evaluate";
  fs::create_directories(dir);
  save_config(dir / "config.json", cfg);
  write_metrics_csv(dir / "metrics.csv", r);
  for (const auto& s : r.shapes) {
    io::save_points(dir / "correspondences" / split_name(s.split) / (s.id + ".particles"), s.correspondences);
    if (cfg.evaluation.export_maps && s.map.size() > 0 && s.split == Split::test) {
      export_correspondence_map(dir / "maps" / (s.id + ".csv"), s.map);
    }
  }
  write_json(dir / "summary.json", {{"n_test", r.n_test},
                                    {"mean_cd_mm2", r.mean_cd_mm2},
                                    {"mean_emd_mm", r.mean_emd_mm},
                                    {"mean_p2f_mm", r.mean_p2f_mm}});
  log_line(opts, "evaluate: test CD " + format_number(r.mean_cd_mm2) + " mm^2, P2F " +
                     format_number(r.mean_p2f_mm) + " mm -> " + dir.string());
  return r;
}

AnalysisResult cmd_analyze(const ExperimentConfig& cfg, const std::optional<fs::path>& correspondences,
                           const RunOptions& opts) {
  const fs::path root = resolve_output_dir(cfg);
  const fs::path src = correspondences.value_or(root / "evaluate" / "correspondences");
  const auto train_sets = load_particle_dir(src / "train");
  std::vector<Points> test_sets;
  if (fs::is_directory(src / "test")) test_sets = load_particle_dir(src / "test");
  if (train_sets.size() < 2) throw ValidationError("analyze needs at least 2 training correspondence sets in " + src.string());

  const AnalysisResult a = analyze_sets(train_sets, test_sets, cfg.evaluation);
  const fs::path dir = root / "analyze";
  fs::create_directories(dir);
  save_config(dir / "config.json", cfg);
  write_compactness_csv(dir / "compactness.csv", a.compactness);
  save_pca(dir / "pca.bin", a.pca);
  save_pca_summary(dir / "pca.json", a.pca, cfg.evaluation.variance_threshold);
  write_json(dir / "stats.json", analysis_json(a, cfg.evaluation));
  io::save_points(dir / "mean.particles", mean_shape(a.pca));
  const int walks = std::min<int>(cfg.evaluation.mode_walk_modes, static_cast<int>(a.pca.modes()));
  for (int m = 0; m < walks; ++m) {
    const ModeWalk w = mode_walk(a.pca, m, cfg.evaluation.mode_walk_steps);
    for (std::size_t s = 0; s < w.positions.size(); ++s) {
      std::ostringstream name;
      name << "step_" << std::setw(2) << std::setfill('0') << s << ".particles";
      io::save_points(dir / "modes" / ("mode_" + std::to_string(m)) / name.str(), w.positions[s]);
    }
  }
  log_line(opts, "analyze: compactness " + std::to_string(a.compactness.modes) + ", generalization " +
                     format_number(a.generalization.mean_squared) + " mm^2, specificity " +
                     format_number(a.specificity.mean) + " mm^2 -> " + dir.string());
  return a;
}

std::vector<BenchmarkRow> cmd_benchmark(const ExperimentConfig& cfg, const RunOptions& opts) {
  const Cohort base = ensure_preprocessed(cfg, opts);
  const fs::path dir = resolve_output_dir(cfg) / "benchmark";
  fs::create_directories(dir);
  save_config(dir / "config.json", cfg);

  const auto& b = cfg.benchmark;
  std::vector<ModelVariant> variants = b.variants;
  if (variants.empty()) {
    ModelVariant v;
    v.encoder = cfg.model.encoder;
    v.head = cfg.model.head;
    v.bottleneck = cfg.model.bottleneck;
    v.alpha = cfg.train.loss.alpha;
    v.name = "base";
    variants.push_back(v);
  }
  const auto or_base = [](auto axis, auto base_value) {
    if (axis.empty()) axis.push_back(base_value);
    return axis;
  };
  const auto ns = or_base(b.input_size_n, cfg.model.n_input);
  const auto sigmas = or_base(b.noise_sigma_mm, cfg.corruption.noise_sigma_mm);
  const auto fractions = or_base(b.partial_fraction, cfg.corruption.partial_fraction);
  const auto subsets = or_base(b.train_subset_size, cfg.corruption.train_subset_size);
  const auto seeds = or_base(b.seeds, cfg.train.seed);

  struct Cell {
    BenchmarkRow row;
    ExperimentConfig cfg;
  };
  std::vector<Cell> cells;
  for (const auto& v : variants) {
    for (int n : ns) {
      for (double sigma : sigmas) {
        for (double frac : fractions) {
          for (const auto& subset : subsets) {
            for (std::uint64_t seed : seeds) {
              Cell c;
              c.cfg = cfg;
              c.cfg.model.encoder = v.encoder;
              c.cfg.model.head = v.head;
              c.cfg.model.bottleneck = v.bottleneck;
              c.cfg.model.n_input = n;
              c.cfg.model.seed = seed;
              c.cfg.train.seed = seed;
              c.cfg.train.loss.alpha = v.alpha;
              c.cfg.corruption.noise_sigma_mm = sigma;
              c.cfg.corruption.partial_fraction = frac;
              c.cfg.corruption.train_subset_size = subset;
              c.cfg.corruption.seed = cfg.corruption.seed + seed;
              c.cfg.benchmark = BenchmarkConfig{};
              std::ostringstream name;
              name << v.name << "_n" << n << "_noise" << sigma << "_partial" << frac << "_subset"
                   << (subset ? std::to_string(*subset) : std::string("all")) << "_seed" << seed;
              c.row.cell = name.str();
              c.row.variant = v;
              c.row.input_size_n = n;
              c.row.noise_sigma_mm = sigma;
              c.row.partial_fraction = frac;
              c.row.train_subset_size = subset;
              c.row.seed = seed;
              c.cfg.output_dir = (dir / "runs" / c.row.cell).string();
              c.cfg.validate();
              cells.push_back(std::move(c));
            }
          }
        }
      }
    }
  }

  const auto run_cell = [&](Cell& c) {
    const fs::path cell_dir(c.cfg.output_dir);
    fs::create_directories(cell_dir);
    save_config(cell_dir / "config.json", c.cfg);
    BenchmarkRow& row = c.row;
    try {
      const PreparedData d = prepare_data(base, c.cfg);
      const TrainResult tr = train(c.cfg.model, c.cfg.train, d.shape_set(Split::train), d.shape_set(Split::val));
      write_history_csv(cell_dir / "history.csv", tr.history);
      row.epochs_run = tr.epochs_run;
      row.best_epoch = tr.best_epoch;
      row.best_val_cd = tr.best_val_cd;
      const Network<float> net(tr.best);
      const EvaluationResult ev = evaluate_model(net, d, c.cfg.evaluation);
      write_metrics_csv(cell_dir / "metrics.csv", ev);
      row.test_cd_mm2 = ev.mean_cd_mm2;
      row.test_emd_mm = ev.mean_emd_mm;
      row.test_p2f_mm = ev.mean_p2f_mm;

      std::vector<Points> train_sets, test_sets;
      std::vector<PointsT<float>> test_normalized;
      for (const auto& s : ev.shapes) {
        if (s.split == Split::train) train_sets.push_back(s.correspondences);
        if (s.split == Split::test) {
          test_sets.push_back(s.correspondences);
          test_normalized.push_back(normalize_points(s.correspondences, d.norm).cast<float>());
        }
      }
      if (train_sets.size() >= 2) {
        const AnalysisResult a = analyze_sets(train_sets, test_sets, c.cfg.evaluation);
        row.compactness = a.compactness.modes;
        row.generalization_mm2 = a.generalization.mean_squared;
        row.specificity_mm2 = a.specificity.mean;
        write_json(cell_dir / "stats.json", analysis_json(a, c.cfg.evaluation));
      }
      if (c.cfg.train.loss.k_neighbors < c.cfg.model.m_output) {
        row.mapping_error = mean_pairwise_mapping_error(test_normalized, c.cfg.train.loss.k_neighbors);
      }
    } catch (const NumericalError& e) {
      row.status = "numerical_abort";
      row.message = e.what();
    }
    log_line(opts, "benchmark: " + row.cell + " " + row.status + " test CD " + format_number(row.test_cd_mm2) +
                       " mm^2");
  };

  const int workers = std::max(1, std::min<int>(b.workers, static_cast<int>(cells.size())));
  if (workers == 1) {
    for (auto& c : cells) run_cell(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next++; i < cells.size(); i = next++) run_cell(cells[i]);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<BenchmarkRow> rows;
  for (const auto& c : cells) rows.push_back(c.row);
  write_benchmark_report(dir / "report.csv", rows);
  return rows;
}

void write_benchmark_report(const fs::path& path, const std::vector<BenchmarkRow>& rows) {
  auto out = open_out(path);
  out << "cell,variant,encoder,head,bottleneck,alpha,input_size_n,noise_sigma_mm,partial_fraction,"
         "train_subset_size,seed,status,epochs_run,best_epoch,best_val_cd,test_cd_mm2,test_emd_mm,test_p2f_mm,"
         "compactness,generalization_mm2,specificity_mm2,mapping_error\n"
      << std::setprecision(9);
  for (const auto& r : rows) {
    out << r.cell << ',' << r.variant.name << ',' << to_string(r.variant.encoder) << ','
        << to_string(r.variant.head) << ',' << to_string(r.variant.bottleneck) << ',' << r.variant.alpha << ','
        << r.input_size_n << ',' << r.noise_sigma_mm << ',' << r.partial_fraction << ','
        << (r.train_subset_size ? std::to_string(*r.train_subset_size) : std::string("all")) << ',' << r.seed
        << ',' << r.status << ',' << r.epochs_run << ',' << r.best_epoch << ',' << r.best_val_cd << ','
        << r.test_cd_mm2 << ',' << r.test_emd_mm << ',' << r.test_p2f_mm << ',' << r.compactness << ','
        << r.generalization_mm2 << ',' << r.specificity_mm2 << ',' << r.mapping_error << '\n';
  }
}

}  // namespace p2ssm
