#pragma once

#include <filesystem>
#include <optional>

#include "p2ssm/losses.hpp"
#include "p2ssm/model.hpp"

namespace p2ssm {

struct Checkpoint {
  ModelParams params;
  std::optional<NormalizationParams> normalization;
  LossConfig loss;
  int best_epoch = 0;
  double best_val_cd = 0.0;
};

// Container layout: "P2SSMCKP", u32 version, JSON header (model config,
// initialisation record, loss, normalization), u32 tensor count, then per
// tensor its name, u64 rows, u64 cols and row-major doubles.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace p2ssm
