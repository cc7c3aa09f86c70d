#include "irmlab/experiment.hpp"

#include <cstdlib>
#include <fstream>

#include "irmlab/errors.hpp"

namespace irmlab {

using nlohmann::json;

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("model")) {
      const json& m = j.at("model");
      read_if(m, "d_model", c.model.d_model);
      read_if(m, "n_layers", c.model.n_layers);
      read_if(m, "n_heads", c.model.n_heads);
      read_if(m, "d_ff", c.model.d_ff);
      read_if(m, "vocab_size", c.model.vocab_size);
      read_if(m, "max_seq", c.model.max_seq);
      read_if(m, "rope_theta", c.model.rope_theta);
      read_if(m, "rmsnorm_eps", c.model.rmsnorm_eps);
    }
    if (j.contains("irm")) {
      const json& i = j.at("irm");
      if (i.contains("hidden_dims")) {
        const auto dims = i.at("hidden_dims").get<std::vector<std::size_t>>();
        if (dims.size() != 4) throw ConfigError("irm.hidden_dims must list 4 sizes");
        for (std::size_t k = 0; k < 4; ++k) c.irm_hidden_dims[k] = dims[k];
      }
      read_if(i, "plan", c.irm_plan);
      read_if(i, "host_checkpoint", c.host_checkpoint);
      read_if(i, "host_hash", c.expected_host_hash);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      read_if(t, "lr0", c.train.lr0);
      read_if(t, "lr_gamma", c.train.lr_gamma);
      read_if(t, "adam_beta1", c.train.adam_beta1);
      read_if(t, "adam_beta2", c.train.adam_beta2);
      read_if(t, "adam_eps", c.train.adam_eps);
      read_if(t, "batch_size", c.train.batch_size);
      read_if(t, "max_epochs", c.train.max_epochs);
      read_if(t, "patience", c.train.patience);
      read_if(t, "seed", c.train.seed);
      if (t.contains("split")) {
        const auto s = t.at("split").get<std::vector<double>>();
        if (s.size() != 3) throw ConfigError("train.split must list 3 fractions");
        c.train.split = {s[0], s[1], s[2]};
      }
    }
    if (j.contains("corpus")) {
      const json& d = j.at("corpus");
      read_if(d, "path", c.corpus_path);
      if (d.contains("style")) c.corpus_style = style_from_name(d.at("style").get<std::string>());
      read_if(d, "n_pairs", c.corpus_n_pairs);
      read_if(d, "seed", c.corpus_seed);
    }
    read_if(j, "prompts", c.prompts);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["model"] = {{"d_model", model.d_model},       {"n_layers", model.n_layers},
                {"n_heads", model.n_heads},       {"d_ff", model.d_ff},
                {"vocab_size", model.vocab_size}, {"max_seq", model.max_seq},
                {"rope_theta", model.rope_theta}, {"rmsnorm_eps", model.rmsnorm_eps}};
  j["irm"] = {{"hidden_dims", irm_hidden_dims}, {"plan", plan().blocks}};
  if (!host_checkpoint.empty()) j["irm"]["host_checkpoint"] = host_checkpoint;
  if (!expected_host_hash.empty()) j["irm"]["host_hash"] = expected_host_hash;
  j["train"] = {{"lr0", train.lr0},
                {"lr_gamma", train.lr_gamma},
                {"adam_beta1", train.adam_beta1},
                {"adam_beta2", train.adam_beta2},
                {"adam_eps", train.adam_eps},
                {"batch_size", train.batch_size},
                {"max_epochs", train.max_epochs},
                {"patience", train.patience},
                {"seed", train.seed},
                {"split", train.split}};
  j["corpus"] = {{"style", style_name(corpus_style)},
                 {"n_pairs", corpus_n_pairs},
                 {"seed", corpus_seed}};
  if (!corpus_path.empty()) j["corpus"]["path"] = corpus_path;
  j["prompts"] = prompts;
  return j;
}

InjectionPlan ExperimentConfig::plan() const {
  if (irm_plan.empty()) return InjectionPlan::all(model.n_layers);
  InjectionPlan p;
  p.blocks = irm_plan;
  p.validate(model.n_layers);
  return p;
}

IrmConfig ExperimentConfig::irm_config() const {
  IrmConfig c;
  c.input_dim = model.d_model;
  c.hidden_dims = irm_hidden_dims;
  c.plan = plan();
  c.validate();
  return c;
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag_seed, std::uint64_t config_seed) {
  if (flag_seed.has_value()) return *flag_seed;
  if (const char* env = std::getenv("IRMLAB_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') {
      throw ConfigError("IRMLAB_SEED must be an unsigned integer, got '" + std::string(env) +
                        "'");
    }
    return static_cast<std::uint64_t>(v);
  }
  return config_seed;
}

void prepare_run_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "checkpoints", ec);
  std::filesystem::create_directories(dir / "traces", ec);
  std::filesystem::create_directories(dir / "reports", ec);
  if (ec) throw IoError("cannot create run directory " + dir.string());
}

}  // namespace irmlab
