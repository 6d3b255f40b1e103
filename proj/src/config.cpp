#include "p2ssm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "p2ssm/errors.hpp"

namespace p2ssm {

namespace {

// Walks one JSON object, type-checking each key it is asked for and
// rejecting any key nobody asked for.
class Reader {
 public:
  Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }
  ~Reader() = default;

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  const Json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    out = convert<T>(j_.at(key), key_path(key));
  }

  template <typename T>
  static T convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max()) {
        throw ConfigError(path + ": integer out of range");
      }
      return static_cast<T>(x);
    } else {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
      return v.get<T>();
    }
  }

  template <typename T>
  std::vector<T> list(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_array()) throw ConfigError(key_path(key) + ": expected an array");
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.push_back(convert<T>(v[i], key_path(key) + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(key_path(key) + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto parse_enum(const Json& v, const std::string& path, F parse) {
  const auto s = Reader::convert<std::string>(v, path);
  try {
    return parse(s);
  } catch (const ValidationError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

Json subset_to_json(const std::optional<int>& s) { return s ? Json(*s) : Json("all"); }

std::optional<int> subset_from_json(const Json& v, const std::string& path) {
  if (v.is_string()) {
    if (v.get<std::string>() != "all") throw ConfigError(path + ": expected a positive integer or \"all\"");
    return std::nullopt;
  }
  return Reader::convert<int>(v, path);
}

Json to_json(const CohortSpec& s) {
  Json j;
  j["family"] = to_string(s.family);
  j["n_shapes"] = s.n_shapes;
  j["latent_dims"] = s.latent_dims;
  Json ranges = Json::array();
  for (const auto& [lo, hi] : s.latent_ranges) ranges.push_back({lo, hi});
  j["latent_ranges"] = ranges;
  j["subdivisions"] = s.subdivisions;
  j["seed"] = s.seed;
  j["pose_jitter_deg"] = s.pose_jitter_deg;
  j["translation_jitter_mm"] = s.translation_jitter_mm;
  return j;
}

CohortSpec cohort_spec_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  CohortSpec s;
  if (r.has("family")) s.family = parse_enum(r.at("family"), r.key_path("family"), parse_family);
  r.get("n_shapes", s.n_shapes);
  r.get("latent_dims", s.latent_dims);
  if (r.has("latent_ranges")) {
    const Json& v = r.at("latent_ranges");
    const std::string p = r.key_path("latent_ranges");
    if (!v.is_array()) throw ConfigError(p + ": expected an array of [lo, hi] pairs");
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string pi = p + "[" + std::to_string(i) + "]";
      if (!v[i].is_array() || v[i].size() != 2) throw ConfigError(pi + ": expected [lo, hi]");
      s.latent_ranges.emplace_back(Reader::convert<double>(v[i][0], pi), Reader::convert<double>(v[i][1], pi));
    }
  }
  r.get("subdivisions", s.subdivisions);
  r.get("seed", s.seed);
  r.get("pose_jitter_deg", s.pose_jitter_deg);
  r.get("translation_jitter_mm", s.translation_jitter_mm);
  r.finish();
  return s;
}

ModelVariant variant_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  ModelVariant v;
  r.get("name", v.name);
  if (r.has("encoder")) v.encoder = parse_enum(r.at("encoder"), r.key_path("encoder"), parse_encoder);
  if (r.has("head")) v.head = parse_enum(r.at("head"), r.key_path("head"), parse_head);
  if (r.has("bottleneck")) v.bottleneck = parse_enum(r.at("bottleneck"), r.key_path("bottleneck"), parse_bottleneck);
  r.get("alpha", v.alpha);
  r.finish();
  if (v.name.empty()) {
    v.name = std::string(to_string(v.encoder)) + "_" + to_string(v.head) +
             (v.bottleneck == BottleneckKind::global ? "_ae" : "");
  }
  return v;
}

}  // namespace

Json to_json(const ModelConfig& m) {
  Json j;
  j["encoder"] = to_string(m.encoder);
  j["head"] = to_string(m.head);
  j["bottleneck"] = to_string(m.bottleneck);
  j["N"] = m.n_input;
  j["M"] = m.m_output;
  j["L"] = m.feature_dim;
  j["hidden_dim"] = m.hidden_dim;
  j["graph_k"] = m.graph_k;
  j["sfa_blocks"] = m.sfa_blocks;
  j["attention_heads"] = m.attention_heads;
  j["seed"] = m.seed;
  return j;
}

ModelConfig model_config_from_json(const Json& j, const std::string& path) {
  Reader r(j, path);
  ModelConfig m;
  if (r.has("encoder")) m.encoder = parse_enum(r.at("encoder"), r.key_path("encoder"), parse_encoder);
  if (r.has("head")) m.head = parse_enum(r.at("head"), r.key_path("head"), parse_head);
  if (r.has("bottleneck")) m.bottleneck = parse_enum(r.at("bottleneck"), r.key_path("bottleneck"), parse_bottleneck);
  r.get("N", m.n_input);
  r.get("M", m.m_output);
  r.get("L", m.feature_dim);
  r.get("hidden_dim", m.hidden_dim);
  r.get("graph_k", m.graph_k);
  r.get("sfa_blocks", m.sfa_blocks);
  r.get("attention_heads", m.attention_heads);
  r.get("seed", m.seed);
  r.finish();
  return m;
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  Json ds;
  if (c.dataset.mesh_dir) ds["mesh_dir"] = *c.dataset.mesh_dir;
  if (c.dataset.synthetic) ds["synthetic"] = to_json(*c.dataset.synthetic);
  ds["split"] = c.dataset.split;
  ds["split_seed"] = c.dataset.split_seed;
  j["dataset"] = ds;

  j["preprocessing"] = {{"align", c.preprocessing.align},
                        {"icp_max_iters", c.preprocessing.icp_max_iters},
                        {"icp_tol", c.preprocessing.icp_tol}};

  j["corruption"] = {{"noise_sigma_mm", c.corruption.noise_sigma_mm},
                     {"partial_fraction", c.corruption.partial_fraction},
                     {"train_subset_size", subset_to_json(c.corruption.train_subset_size)},
                     {"seed", c.corruption.seed}};

  j["model"] = to_json(c.model);

  j["train"] = {{"B", c.train.batch_size},
                {"LR", c.train.learning_rate},
                {"ES", c.train.patience},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"adam_eps", c.train.adam_eps},
                {"K", c.train.loss.k_neighbors},
                {"alpha", c.train.loss.alpha},
                {"max_epochs", c.train.max_epochs},
                {"max_target_points", c.train.max_target_points},
                {"seed", c.train.seed}};

  j["evaluation"] = {{"metrics", c.evaluation.metrics},
                     {"specificity_samples", c.evaluation.specificity_samples},
                     {"variance_threshold", c.evaluation.variance_threshold},
                     {"mode_walk_modes", c.evaluation.mode_walk_modes},
                     {"mode_walk_steps", c.evaluation.mode_walk_steps},
                     {"export_maps", c.evaluation.export_maps},
                     {"seed", c.evaluation.seed}};

  Json variants = Json::array();
  for (const auto& v : c.benchmark.variants) {
    variants.push_back({{"name", v.name},
                        {"encoder", to_string(v.encoder)},
                        {"head", to_string(v.head)},
                        {"bottleneck", to_string(v.bottleneck)},
                        {"alpha", v.alpha}});
  }
  Json subsets = Json::array();
  for (const auto& s : c.benchmark.train_subset_size) subsets.push_back(subset_to_json(s));
  j["benchmark"] = {{"variants", variants},
                    {"noise_sigma_mm", c.benchmark.noise_sigma_mm},
                    {"partial_fraction", c.benchmark.partial_fraction},
                    {"train_subset_size", subsets},
                    {"input_size_n", c.benchmark.input_size_n},
                    {"seeds", c.benchmark.seeds},
                    {"workers", c.benchmark.workers}};

  j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  Reader root(j, "");

  if (root.has("dataset")) {
    Reader r(root.at("dataset"), "dataset");
    if (r.has("mesh_dir")) c.dataset.mesh_dir = Reader::convert<std::string>(r.at("mesh_dir"), "dataset.mesh_dir");
    if (r.has("synthetic")) c.dataset.synthetic = cohort_spec_from_json(r.at("synthetic"), "dataset.synthetic");
    if (r.has("split")) {
      const auto v = r.list<double>("split");
      if (v.size() != 3) throw ConfigError("dataset.split: expected [train, val, test]");
      c.dataset.split = {v[0], v[1], v[2]};
    }
    r.get("split_seed", c.dataset.split_seed);
    r.finish();
  }
  if (root.has("preprocessing")) {
    Reader r(root.at("preprocessing"), "preprocessing");
    r.get("align", c.preprocessing.align);
    r.get("icp_max_iters", c.preprocessing.icp_max_iters);
    r.get("icp_tol", c.preprocessing.icp_tol);
    r.finish();
  }
  if (root.has("corruption")) {
    Reader r(root.at("corruption"), "corruption");
    r.get("noise_sigma_mm", c.corruption.noise_sigma_mm);
    r.get("partial_fraction", c.corruption.partial_fraction);
    if (r.has("train_subset_size")) {
      c.corruption.train_subset_size = subset_from_json(r.at("train_subset_size"), "corruption.train_subset_size");
    }
    r.get("seed", c.corruption.seed);
    r.finish();
  }
  if (root.has("model")) c.model = model_config_from_json(root.at("model"), "model");
  c.corruption.input_size_n = c.model.n_input;
  if (root.has("train")) {
    Reader r(root.at("train"), "train");
    r.get("B", c.train.batch_size);
    r.get("LR", c.train.learning_rate);
    r.get("ES", c.train.patience);
    r.get("beta1", c.train.beta1);
    r.get("beta2", c.train.beta2);
    r.get("adam_eps", c.train.adam_eps);
    r.get("K", c.train.loss.k_neighbors);
    r.get("alpha", c.train.loss.alpha);
    r.get("max_epochs", c.train.max_epochs);
    r.get("max_target_points", c.train.max_target_points);
    r.get("seed", c.train.seed);
    r.finish();
  }
  if (root.has("evaluation")) {
    Reader r(root.at("evaluation"), "evaluation");
    if (r.has("metrics")) c.evaluation.metrics = r.list<std::string>("metrics");
    r.get("specificity_samples", c.evaluation.specificity_samples);
    r.get("variance_threshold", c.evaluation.variance_threshold);
    r.get("mode_walk_modes", c.evaluation.mode_walk_modes);
    if (r.has("mode_walk_steps")) c.evaluation.mode_walk_steps = r.list<double>("mode_walk_steps");
    r.get("export_maps", c.evaluation.export_maps);
    r.get("seed", c.evaluation.seed);
    r.finish();
  }
  if (root.has("benchmark")) {
    Reader r(root.at("benchmark"), "benchmark");
    if (r.has("variants")) {
      const Json& v = r.at("variants");
      if (!v.is_array()) throw ConfigError("benchmark.variants: expected an array");
      for (std::size_t i = 0; i < v.size(); ++i) {
        c.benchmark.variants.push_back(variant_from_json(v[i], "benchmark.variants[" + std::to_string(i) + "]"));
      }
    }
    if (r.has("noise_sigma_mm")) c.benchmark.noise_sigma_mm = r.list<double>("noise_sigma_mm");
    if (r.has("partial_fraction")) c.benchmark.partial_fraction = r.list<double>("partial_fraction");
    if (r.has("train_subset_size")) {
      const Json& v = r.at("train_subset_size");
      if (!v.is_array()) throw ConfigError("benchmark.train_subset_size: expected an array");
      for (std::size_t i = 0; i < v.size(); ++i) {
        c.benchmark.train_subset_size.push_back(
            subset_from_json(v[i], "benchmark.train_subset_size[" + std::to_string(i) + "]"));
      }
    }
    if (r.has("input_size_n")) c.benchmark.input_size_n = r.list<int>("input_size_n");
    if (r.has("seeds")) c.benchmark.seeds = r.list<std::uint64_t>("seeds");
    r.get("workers", c.benchmark.workers);
    r.finish();
  }
  root.get("output_dir", c.output_dir);
  root.finish();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    train.validate();
    corruption.validate();
    if (dataset.synthetic) dataset.synthetic->validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (train.loss.alpha > 0.0 && train.loss.k_neighbors >= model.m_output) {
    throw ConfigError("train.K must be < model.M");
  }
  if (!dataset.mesh_dir && !dataset.synthetic) {
    throw ConfigError("dataset: one of dataset.mesh_dir or dataset.synthetic is required");
  }
  double sum = 0.0;
  for (double r : dataset.split) {
    if (!(r >= 0.0)) throw ConfigError("dataset.split: ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("dataset.split: ratios must sum to 1");
  if (preprocessing.icp_max_iters < 1) throw ConfigError("preprocessing.icp_max_iters must be >= 1");
  if (!(preprocessing.icp_tol >= 0.0)) throw ConfigError("preprocessing.icp_tol must be >= 0");
  for (const auto& m : evaluation.metrics) {
    if (m != "cd" && m != "emd" && m != "p2f") {
      throw ConfigError("evaluation.metrics: unknown metric '" + m + "' (expected cd|emd|p2f)");
    }
  }
  if (evaluation.specificity_samples < 1) throw ConfigError("evaluation.specificity_samples must be >= 1");
  if (!(evaluation.variance_threshold > 0.0 && evaluation.variance_threshold <= 1.0)) {
    throw ConfigError("evaluation.variance_threshold must lie in (0, 1]");
  }
  if (evaluation.mode_walk_modes < 0) throw ConfigError("evaluation.mode_walk_modes must be >= 0");
  if (benchmark.workers < 1) throw ConfigError("benchmark.workers must be >= 1");
  for (double s : benchmark.noise_sigma_mm) {
    if (!(s >= 0.0)) throw ConfigError("benchmark.noise_sigma_mm: values must be >= 0");
  }
  for (double f : benchmark.partial_fraction) {
    if (!(f >= 0.0 && f < 1.0)) throw ConfigError("benchmark.partial_fraction: values must lie in [0, 1)");
  }
  for (const auto& s : benchmark.train_subset_size) {
    if (s && *s < 1) throw ConfigError("benchmark.train_subset_size: values must be >= 1 or \"all\"");
  }
  for (int n : benchmark.input_size_n) {
    if (n < 1) throw ConfigError("benchmark.input_size_n: values must be >= 1");
  }
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
    if (!node->is_object()) {
      throw ConfigError(path.substr(0, start == 0 ? 0 : start - 1) + ": cannot override inside a non-object");
    }
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& c) {
  const std::filesystem::path dir(c.output_dir);
  const char* root = std::getenv(kOutputRootEnv);
  if (root != nullptr && *root != '\0' && dir.is_relative()) return std::filesystem::path(root) / dir;
  return dir;
}

}  // namespace p2ssm
