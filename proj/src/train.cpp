#include "irmlab/train.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "irmlab/errors.hpp"
#include "irmlab/kernels.hpp"
#include "irmlab/rng.hpp"

namespace irmlab {

using nlohmann::json;

double TrainConfig::lr_at(std::size_t epoch) const {
  return lr0 * std::pow(lr_gamma, static_cast<double>(epoch));
}

void TrainConfig::validate() const {
  if (lr0 <= 0.0) throw ConfigError("train config: lr0 must be positive");
  if (lr_gamma <= 0.0 || lr_gamma > 1.0) {
    throw ConfigError("train config: lr_gamma must be in (0, 1]");
  }
  if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
  if (patience < 1) throw ConfigError("train config: patience must be >= 1");
  const double s = split[0] + split[1] + split[2];
  if (s < 1.0 - 1e-9 || s > 1.0 + 1e-9) {
    throw ConfigError("train config: split must sum to 1");
  }
}

void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
               std::size_t step_index, double lr, double beta1, double beta2, double eps) {
  if (!param.same_shape(grad) || !param.same_shape(m) || !param.same_shape(v)) {
    throw DimensionError("adam_step: parameter/gradient/moment shapes disagree");
  }
  if (!grad.all_finite()) {
    throw TrainingError("adam_step: non-finite gradient for parameter of shape " +
                        param.shape_str() + " at step " + std::to_string(step_index));
  }
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_index));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.at(i);
    m.at(i) = beta1 * m.at(i) + (1.0 - beta1) * g;
    v.at(i) = beta2 * v.at(i) + (1.0 - beta2) * g * g;
    const double m_hat = m.at(i) / bc1;
    const double v_hat = v.at(i) / bc2;
    param.at(i) -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor*> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      beta1_(cfg.adam_beta1),
      beta2_(cfg.adam_beta2),
      eps_(cfg.adam_eps) {
  state_.m.reserve(params_.size());
  state_.v.reserve(params_.size());
  for (const Tensor* p : params_) {
    state_.m.emplace_back(p->shape());
    state_.v.emplace_back(p->shape());
  }
}

void AdamOptimizer::step(const std::vector<const Tensor*>& grads, double lr) {
  if (grads.size() != params_.size()) {
    throw DimensionError("optimizer step: expected " + std::to_string(params_.size()) +
                         " gradients, got " + std::to_string(grads.size()));
  }
  ++state_.step;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_step(*params_[i], *grads[i], state_.m[i], state_.v[i], state_.step, lr, beta1_,
              beta2_, eps_);
  }
}

namespace {

double ce_sum_rows(const Tensor& logits, std::span<const int> targets,
                   std::span<const std::uint8_t> mask, std::size_t* count) {
  double total = 0.0;
  for (std::size_t p = 0; p < logits.rows(); ++p) {
    if (!mask[p]) continue;
    const double lse = kern::log_sum_exp(logits.row(p), logits.cols());
    total += lse - logits.row(p)[static_cast<std::size_t>(targets[p])];
    ++*count;
  }
  return total;
}

std::vector<Var> ordered_irm_vars(const IrmGraphLeaves& lv) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < lv.weights.size(); ++i) {
    out.push_back(lv.weights[i]);
    out.push_back(lv.biases[i]);
  }
  return out;
}

struct TrainLoop {
  const HostModel& host;
  IrmNet* irm;  // nullptr when pretraining the host itself
  HostModel* mutable_host;
  const std::vector<TokenSequence>& corpus;
  const TrainConfig& cfg;
  const EpochCallback& on_epoch;
  InjectionPlan plan;

  bool train_host() const { return irm == nullptr; }

  double eval_ce(const std::vector<TokenSequence>& seqs) const {
    return evaluate_ce(host, irm, plan, seqs);
  }

  TrainReport run() {
    cfg.validate();
    TrainReport report;
    report.host_hash_before = host.weights_hash();

    std::vector<Tensor*> params =
        train_host() ? mutable_host->parameters() : irm->parameters();
    for (const Tensor* p : params) report.trained_parameter_count += p->size();

    if (cfg.max_epochs == 0) {
      report.host_hash_after = host.weights_hash();
      return report;
    }

    SplitResult<TokenSequence> split = split_dataset(corpus, cfg.split, cfg.seed);
    AdamOptimizer opt(params, cfg);

    report.initial_val_ce = eval_ce(split.val);
    double best_val = report.initial_val_ce;
    std::size_t best_epoch = 0;
    std::vector<Tensor> best_params;
    best_params.reserve(params.size());
    for (const Tensor* p : params) best_params.push_back(*p);

    std::size_t since_improvement = 0;
    std::size_t divergent_epochs = 0;
    CounterRng order_rng = CounterRng(cfg.seed).derive("epoch-order");

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      const double lr = cfg.lr_at(epoch);
      CounterRng epoch_rng = order_rng.derive(epoch);
      deterministic_shuffle(order, epoch_rng);

      double epoch_loss = 0.0;
      std::size_t epoch_tokens = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        epoch_loss += train_batch(opt, split.train, order, start, end, lr, &epoch_tokens);
      }

      EpochStats stats;
      stats.epoch = epoch;
      stats.lr = lr;
      stats.train_ce = epoch_tokens > 0 ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0;
      stats.val_ce = eval_ce(split.val);
      report.epochs.push_back(stats);
      if (on_epoch) on_epoch(stats);

      if (stats.val_ce > 2.0 * report.initial_val_ce) {
        if (++divergent_epochs >= 2) {
          throw TrainingError("training diverged: validation CE " +
                              std::to_string(stats.val_ce) + " above twice the initial " +
                              std::to_string(report.initial_val_ce) + " for 2 epochs");
        }
      } else {
        divergent_epochs = 0;
      }

      if (stats.val_ce < best_val) {
        best_val = stats.val_ce;
        best_epoch = epoch + 1;
        for (std::size_t i = 0; i < params.size(); ++i) best_params[i] = *params[i];
        since_improvement = 0;
      } else {
        ++since_improvement;
        if (since_improvement >= cfg.patience) {
          report.early_stopped = true;
          report.stopped_epoch = epoch + 1;
          break;
        }
      }
    }
    if (report.stopped_epoch == 0) report.stopped_epoch = report.epochs.size();

    // Keep the best-validation weights, not the last.
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best_params[i];
    report.best_epoch = best_epoch;
    report.best_val_ce = best_val;
    report.host_hash_after = host.weights_hash();
    if (!train_host() && report.host_hash_after != report.host_hash_before) {
      throw TrainingError("frozen host changed during IRM training (hash mismatch)");
    }
    return report;
  }

  /// Builds one batch graph with shared leaves, backprops the token-weighted
  /// mean loss, applies one optimizer step. Returns the summed batch loss.
  double train_batch(AdamOptimizer& opt, const std::vector<TokenSequence>& train_set,
                     const std::vector<std::size_t>& order, std::size_t start, std::size_t end,
                     double lr, std::size_t* token_accum) {
    Graph g;
    HostGraphLeaves hl = host_leaves(g, host, train_host());
    IrmGraphLeaves il;
    if (irm != nullptr) il = irm_leaves(g, *irm, true);

    Var total;
    std::size_t batch_tokens = 0;
    for (std::size_t i = start; i < end; ++i) {
      const TokenSequence& seq = train_set[order[i]];
      SequenceLoss sl = sequence_loss(g, host.config, hl, irm != nullptr ? &il : nullptr,
                                      plan, seq.tokens, seq.loss_mask);
      batch_tokens += sl.n_loss_tokens;
      total = total.valid() ? g.add(total, sl.loss_sum) : sl.loss_sum;
    }
    if (batch_tokens == 0) return 0.0;
    const double batch_loss = total.value().item();
    Var loss = g.scale(total, 1.0 / static_cast<double>(batch_tokens));
    g.backward(loss);

    const std::vector<Var> vars = train_host() ? hl.ordered : ordered_irm_vars(il);
    std::vector<const Tensor*> grads;
    grads.reserve(vars.size());
    for (Var v : vars) grads.push_back(&g.grad(v));
    opt.step(grads, lr);

    *token_accum += batch_tokens;
    return batch_loss;
  }
};

}  // namespace

double evaluate_ce(const HostModel& host, const IrmNet* irm, const InjectionPlan& plan,
                   const std::vector<TokenSequence>& sequences) {
  if (sequences.empty()) throw ConfigError("evaluate_ce: no sequences");
  double total = 0.0;
  std::size_t count = 0;
  for (const TokenSequence& seq : sequences) {
    if (seq.tokens.size() < 2) continue;
    const std::size_t t = seq.tokens.size() - 1;
    ForwardResult r = forward(host, std::span(seq.tokens).subspan(0, t), irm, plan,
                              /*record_trace=*/false);
    total += ce_sum_rows(r.logits, std::span(seq.tokens).subspan(1, t),
                         std::span(seq.loss_mask), &count);
  }
  if (count == 0) throw ConfigError("evaluate_ce: all positions masked");
  return total / static_cast<double>(count);
}

TrainReport train_irm(const HostModel& host, IrmNet& irm,
                      const std::vector<TokenSequence>& corpus, const TrainConfig& cfg,
                      const EpochCallback& on_epoch) {
  if (irm.config.input_dim != host.config.d_model) {
    throw ConfigError("train_irm: IRM input dim does not match host d_model");
  }
  irm.config.plan.validate(host.config.n_layers);
  TrainLoop loop{host, &irm, nullptr, corpus, cfg, on_epoch, irm.config.plan};
  return loop.run();
}

TrainReport pretrain_host(HostModel& host, const std::vector<TokenSequence>& corpus,
                          const TrainConfig& cfg, const EpochCallback& on_epoch) {
  TrainLoop loop{host, nullptr, &host, corpus, cfg, on_epoch, InjectionPlan{}};
  return loop.run();
}

std::string TrainReport::to_jsonl() const {
  std::ostringstream out;
  for (const EpochStats& e : epochs) {
    json rec{{"record", "epoch"},
             {"epoch", e.epoch},
             {"lr", e.lr},
             {"train_ce", e.train_ce},
             {"val_ce", e.val_ce}};
    out << rec.dump() << '\n';
  }
  json summary{{"record", "summary"},
               {"stopped_epoch", stopped_epoch},
               {"best_epoch", best_epoch},
               {"best_val_ce", best_val_ce},
               {"initial_val_ce", initial_val_ce},
               {"early_stopped", early_stopped},
               {"host_hash_before", host_hash_before},
               {"host_hash_after", host_hash_after},
               {"trained_parameter_count", trained_parameter_count}};
  out << summary.dump() << '\n';
  return out.str();
}

}  // namespace irmlab
