#include "p2ssm/checkpoint.hpp"

#include "binary_io.hpp"
#include "p2ssm/config.hpp"

namespace p2ssm {

namespace {
constexpr char kMagic[9] = "P2SSMCKP";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());

  Json header;
  header["model"] = to_json(ckpt.params.config);
  header["init"] = {{"scheme", ckpt.params.init_scheme}, {"seed", ckpt.params.init_seed}};
  header["loss"] = {{"alpha", ckpt.loss.alpha}, {"K", ckpt.loss.k_neighbors}};
  header["best_epoch"] = ckpt.best_epoch;
  header["best_val_cd"] = ckpt.best_val_cd;
  if (ckpt.normalization) {
    const auto& c = ckpt.normalization->center;
    header["normalization"] = {{"center", {c.x(), c.y(), c.z()}}, {"scale", ckpt.normalization->scale}};
  }

  out.write(kMagic, 8);
  binio::put<std::uint32_t>(out, kVersion);
  binio::put_string(out, header.dump());
  const auto& t = ckpt.params.tensors;
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) {
    binio::put_string(out, t.name(i));
    binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(t[i].rows()));
    binio::put<std::uint64_t>(out, static_cast<std::uint64_t>(t[i].cols()));
    binio::put_doubles(out, t[i].data(), static_cast<std::size_t>(t[i].size()));
  }
  if (!out) throw FormatError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  const std::string what = "checkpoint " + path.string();
  binio::expect_magic(in, kMagic, what);
  const auto version = binio::get<std::uint32_t>(in, what);
  if (version != kVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));

  Json header;
  try {
    header = Json::parse(binio::get_string(in, what));
  } catch (const Json::parse_error& e) {
    throw FormatError(what + ": bad header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.params.config = model_config_from_json(header.at("model"));
    ckpt.params.init_scheme = header.at("init").at("scheme").get<std::string>();
    ckpt.params.init_seed = header.at("init").at("seed").get<std::uint64_t>();
    ckpt.loss.alpha = header.at("loss").at("alpha").get<double>();
    ckpt.loss.k_neighbors = header.at("loss").at("K").get<int>();
    ckpt.best_epoch = header.at("best_epoch").get<int>();
    ckpt.best_val_cd = header.at("best_val_cd").get<double>();
    if (header.contains("normalization")) {
      const auto& n = header.at("normalization");
      NormalizationParams p;
      for (int a = 0; a < 3; ++a) p.center(a) = n.at("center").at(static_cast<std::size_t>(a)).get<double>();
      p.scale = n.at("scale").get<double>();
      ckpt.normalization = p;
    }
  } catch (const Json::exception& e) {
    throw FormatError(what + ": bad header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(what + ": bad model config: " + e.what());
  }

  // Re-create the expected layout and fill it, so a checkpoint that does not
  // match its own config is rejected.
  ModelParams layout = init_params(ckpt.params.config);
  const auto count = binio::get<std::uint32_t>(in, what);
  if (count != layout.tensors.size()) {
    throw FormatError(what + ": " + std::to_string(count) + " tensors, config expects " +
                      std::to_string(layout.tensors.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = binio::get_string(in, what, 4096);
    const auto idx = layout.tensors.find(name);
    if (!idx) throw FormatError(what + ": unexpected tensor '" + name + "'");
    const auto rows = binio::get<std::uint64_t>(in, what);
    const auto cols = binio::get<std::uint64_t>(in, what);
    auto& m = layout.tensors[*idx];
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols())) {
      throw FormatError(what + ": tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols));
    }
    binio::get_doubles(in, m.data(), static_cast<std::size_t>(m.size()), what);
  }
  if (!layout.tensors.all_finite()) throw FormatError(what + ": non-finite parameter values");
  ckpt.params.tensors = std::move(layout.tensors);
  return ckpt;
}

}  // namespace p2ssm
