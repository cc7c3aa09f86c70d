#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "irmlab/dataset.hpp"
#include "irmlab/host_model.hpp"
#include "irmlab/irm.hpp"
#include "irmlab/train.hpp"

namespace irmlab {

/// Everything a training run needs, loadable from one JSON file. A run
/// directory holds the exact config used plus checkpoints/, traces/ and
/// reports/.
struct ExperimentConfig {
  ModelConfig model;
  std::array<std::size_t, 4> irm_hidden_dims{128, 256, 256, 256};
  std::vector<std::size_t> irm_plan;  // empty = all blocks
  TrainConfig train;

  // Corpus: either a JSONL file or an inline generation spec.
  std::string corpus_path;
  Style corpus_style = Style::kNeutral;
  std::size_t corpus_n_pairs = 2000;
  std::uint64_t corpus_seed = 42;

  std::string host_checkpoint;        // input for train-irm
  std::string expected_host_hash;     // optional gate for train-irm
  std::vector<std::string> prompts;   // text prompts for generation-based reports

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  InjectionPlan plan() const;
  IrmConfig irm_config() const;
};

/// Seed precedence: explicit flag > IRMLAB_SEED environment variable >
/// config value.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag_seed, std::uint64_t config_seed);

/// Creates dir plus the fixed run layout (checkpoints/, traces/, reports/).
void prepare_run_dir(const std::filesystem::path& dir);

}  // namespace irmlab
