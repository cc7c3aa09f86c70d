#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "irmlab/dataset.hpp"
#include "irmlab/errors.hpp"
#include "irmlab/host_model.hpp"
#include "irmlab/irm.hpp"
#include "irmlab/rng.hpp"
#include "irmlab/tensor.hpp"

namespace irmlab {

struct TrainConfig {
  double lr0 = 1e-4;
  double lr_gamma = 0.85;  // per-epoch multiplicative decay
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 50;
  std::size_t patience = 3;  // early stopping, in epochs without improvement
  std::uint64_t seed = 42;
  std::array<double, 3> split{0.90, 0.05, 0.05};

  double lr_at(std::size_t epoch) const;  // lr0 * gamma^epoch
  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;  // first moments, shaped like the parameters
  std::vector<Tensor> v;  // second moments
  std::size_t step = 0;
};

/// One bias-corrected Adam update for a single parameter tensor.
/// step_index counts from 1. Throws TrainingError on non-finite gradients.
void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
               std::size_t step_index, double lr, double beta1, double beta2, double eps);

/// Adam over a fixed list of parameters (canonical order).
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor*> params, const TrainConfig& cfg);
  void step(const std::vector<const Tensor*>& grads, double lr);
  const AdamState& state() const { return state_; }

 private:
  std::vector<Tensor*> params_;
  AdamState state_;
  double beta1_, beta2_, eps_;
};

template <typename T>
struct SplitResult {
  std::vector<T> train, val, test;
};

/// Deterministic seeded shuffle, then contiguous 90/5/5 (or as configured)
/// split. Requires at least 20 examples.
template <typename T>
SplitResult<T> split_dataset(const std::vector<T>& examples, const std::array<double, 3>& split,
                             std::uint64_t seed);

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_ce = 0.0;
  double val_ce = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t stopped_epoch = 0;  // number of completed epochs
  std::size_t best_epoch = 0;
  double best_val_ce = 0.0;
  double initial_val_ce = 0.0;
  std::string host_hash_before;
  std::string host_hash_after;
  std::size_t trained_parameter_count = 0;
  bool early_stopped = false;

  /// One JSON record per epoch plus a trailing summary record.
  std::string to_jsonl() const;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Trains the IRM against a frozen host by minimizing next-token
/// cross-entropy of the injected forward pass. Returns the
/// best-validation-epoch weights (not the last). The host is verified
/// unchanged by hashing before and after. Aborts with TrainingError when
/// validation CE exceeds twice its initial value for two consecutive epochs.
TrainReport train_irm(const HostModel& host, IrmNet& irm,
                      const std::vector<TokenSequence>& corpus, const TrainConfig& cfg,
                      const EpochCallback& on_epoch = nullptr);

/// Next-token training of all host parameters (used to pretrain the toy
/// host). Same machinery, no IRM, no loss masking beyond what the sequences
/// carry.
TrainReport pretrain_host(HostModel& host, const std::vector<TokenSequence>& corpus,
                          const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr);

/// Token-mean cross-entropy of the (optionally injected) model over a set of
/// sequences, honoring each sequence's loss mask. Pure evaluation, no tape.
double evaluate_ce(const HostModel& host, const IrmNet* irm, const InjectionPlan& plan,
                   const std::vector<TokenSequence>& sequences);

// --- implementation of the template ---

template <typename T>
SplitResult<T> split_dataset(const std::vector<T>& examples, const std::array<double, 3>& split,
                             std::uint64_t seed) {
  if (examples.size() < 20) {
    throw ConfigError("split_dataset: need at least 20 examples, got " +
                      std::to_string(examples.size()));
  }
  const double sum = split[0] + split[1] + split[2];
  if (sum < 1.0 - 1e-9 || sum > 1.0 + 1e-9) {
    throw ConfigError("split_dataset: split fractions must sum to 1");
  }
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  CounterRng rng = CounterRng(seed).derive("dataset-split");
  deterministic_shuffle(order, rng);

  const auto n = examples.size();
  std::size_t n_train = static_cast<std::size_t>(std::llround(split[0] * static_cast<double>(n)));
  std::size_t n_val = static_cast<std::size_t>(std::llround(split[1] * static_cast<double>(n)));
  if (n_train + n_val > n) n_train = n - n_val;
  if (n_train + n_val == n && n_val > 0) --n_val;  // keep the test partition nonempty

  SplitResult<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    const T& ex = examples[order[i]];
    if (i < n_train) {
      out.train.push_back(ex);
    } else if (i < n_train + n_val) {
      out.val.push_back(ex);
    } else {
      out.test.push_back(ex);
    }
  }
  return out;
}

}  // namespace irmlab
