#include "irmlab/host_model.hpp"

#include <cmath>
#include <string>

#include "irmlab/errors.hpp"
#include "irmlab/kernels.hpp"
#include "irmlab/rng.hpp"
#include "irmlab/sha256.hpp"

namespace irmlab {

void ModelConfig::validate() const {
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 ||
      max_seq == 0) {
    throw ConfigError("model config: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_head() % 2 != 0) {
    throw ConfigError("model config: head dimension " + std::to_string(d_head()) +
                      " must be even for rotary positions");
  }
}

namespace {

void init_uniform(Tensor& t, CounterRng& rng, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.next_uniform(-bound, bound);
}

}  // namespace

HostModel HostModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  HostModel m;
  m.config = cfg;
  CounterRng rng = CounterRng(seed).derive("host-init");
  m.token_embedding = Tensor({cfg.vocab_size, cfg.d_model});
  init_uniform(m.token_embedding, rng, cfg.d_model);
  m.blocks.resize(cfg.n_layers);
  for (Block& b : m.blocks) {
    b.attn_norm_gain = Tensor::full({cfg.d_model}, 1.0);
    b.ffn_norm_gain = Tensor::full({cfg.d_model}, 1.0);
    b.wq = Tensor({cfg.d_model, cfg.d_model});
    b.wk = Tensor({cfg.d_model, cfg.d_model});
    b.wv = Tensor({cfg.d_model, cfg.d_model});
    b.wo = Tensor({cfg.d_model, cfg.d_model});
    init_uniform(b.wq, rng, cfg.d_model);
    init_uniform(b.wk, rng, cfg.d_model);
    init_uniform(b.wv, rng, cfg.d_model);
    init_uniform(b.wo, rng, cfg.d_model);
    b.w1 = Tensor({cfg.d_ff, cfg.d_model});
    b.w3 = Tensor({cfg.d_ff, cfg.d_model});
    b.w2 = Tensor({cfg.d_model, cfg.d_ff});
    init_uniform(b.w1, rng, cfg.d_model);
    init_uniform(b.w3, rng, cfg.d_model);
    init_uniform(b.w2, rng, cfg.d_ff);
  }
  m.final_norm_gain = Tensor::full({cfg.d_model}, 1.0);
  m.lm_head = Tensor({cfg.vocab_size, cfg.d_model});
  init_uniform(m.lm_head, rng, cfg.d_model);
  for (Tensor* t : m.parameters()) t->requires_grad = true;
  return m;
}

std::vector<std::pair<std::string, Tensor*>> HostModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    Block& b = blocks[i];
    out.emplace_back(p + "attn_norm_gain", &b.attn_norm_gain);
    out.emplace_back(p + "wq", &b.wq);
    out.emplace_back(p + "wk", &b.wk);
    out.emplace_back(p + "wv", &b.wv);
    out.emplace_back(p + "wo", &b.wo);
    out.emplace_back(p + "ffn_norm_gain", &b.ffn_norm_gain);
    out.emplace_back(p + "w1", &b.w1);
    out.emplace_back(p + "w3", &b.w3);
    out.emplace_back(p + "w2", &b.w2);
  }
  out.emplace_back("final_norm_gain", &final_norm_gain);
  out.emplace_back("lm_head", &lm_head);
  return out;
}

std::vector<Tensor*> HostModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> HostModel::parameters() const {
  std::vector<const Tensor*> out;
  for (auto& [name, t] : const_cast<HostModel*>(this)->named_parameters()) out.push_back(t);
  return out;
}

std::size_t HostModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

std::string HostModel::weights_hash() const { return hash_tensors(parameters()); }

// --- incremental inference ---

InferenceSession::InferenceSession(const HostModel& model, const IrmNet* irm,
                                   InjectionPlan plan, bool record_trace)
    : model_(model), irm_(irm), plan_(std::move(plan)), record_trace_(record_trace) {
  model_.config.validate();
  if (irm_ != nullptr) {
    plan_.validate(model_.config.n_layers);
    if (irm_->config.input_dim != model_.config.d_model) {
      throw ConfigError("irm input_dim " + std::to_string(irm_->config.input_dim) +
                        " vs host d_model " + std::to_string(model_.config.d_model));
    }
    if (irm_->config.plan.blocks != plan_.blocks) {
      throw ConfigError("injection plan does not match the IRM's configured plan");
    }
  }
  k_cache_.resize(model_.config.n_layers);
  v_cache_.resize(model_.config.n_layers);
  for (auto& c : k_cache_) c.reserve(model_.config.max_seq * model_.config.d_model);
  for (auto& c : v_cache_) c.reserve(model_.config.max_seq * model_.config.d_model);
  trace_.plan = plan_;
}

void InferenceSession::set_probe(std::size_t index, double delta) {
  if (index >= model_.config.d_model) {
    throw DimensionError("probe index " + std::to_string(index) + " out of d_model " +
                         std::to_string(model_.config.d_model));
  }
  probe_ = {index, delta};
}

void InferenceSession::mark_generated() { generated_phase_ = true; }

Tensor InferenceSession::step(int token) {
  const ModelConfig& cfg = model_.config;
  const std::size_t d = cfg.d_model;
  if (token < 0 || static_cast<std::size_t>(token) >= cfg.vocab_size) {
    throw DimensionError("unknown token id " + std::to_string(token));
  }
  if (pos_ >= cfg.max_seq) {
    throw DimensionError("sequence exceeds max_seq " + std::to_string(cfg.max_seq));
  }

  StepRecord rec;
  rec.step = pos_;
  rec.generated = generated_phase_;

  std::vector<double> x(model_.token_embedding.row(static_cast<std::size_t>(token)),
                        model_.token_embedding.row(static_cast<std::size_t>(token)) + d);
  std::vector<double> hn(d), q(d), k(d), v(d), ctx(d), a(d);
  std::vector<double> f1(cfg.d_ff), f3(cfg.d_ff), fo(d);
  Tensor m_values;

  for (std::size_t bi = 0; bi < cfg.n_layers; ++bi) {
    const Block& blk = model_.blocks[bi];

    kern::rmsnorm_row(x.data(), blk.attn_norm_gain.data(), d, cfg.rmsnorm_eps, hn.data());
    kern::linear_row(blk.wq, hn.data(), q.data());
    kern::linear_row(blk.wk, hn.data(), k.data());
    kern::linear_row(blk.wv, hn.data(), v.data());
    kern::rope_row(q.data(), d, cfg.n_heads, pos_, cfg.rope_theta);
    kern::rope_row(k.data(), d, cfg.n_heads, pos_, cfg.rope_theta);
    k_cache_[bi].insert(k_cache_[bi].end(), k.begin(), k.end());
    v_cache_[bi].insert(v_cache_[bi].end(), v.begin(), v.end());

    kern::attention_row(q.data(), k_cache_[bi].data(), v_cache_[bi].data(), pos_ + 1, d,
                        cfg.n_heads, ctx.data(), nullptr);
    kern::linear_row(blk.wo, ctx.data(), a.data());

    if (bi == 0 && probe_) {
      a[probe_->first] += probe_->second;
      probe_.reset();
    }
    if (record_trace_) {
      rec.post_attention.emplace_back(std::vector<std::size_t>{d},
                                      std::vector<double>(a.begin(), a.end()));
    }
    if (bi == 0 && irm_ != nullptr) {
      // M_i is computed from the raw block-0 activation, before any
      // injection that block 0 itself might receive.
      m_values = irm_forward(Tensor({d}, std::vector<double>(a.begin(), a.end())), *irm_,
                             pos_).values;
    }
    if (irm_ != nullptr) {
      const std::size_t row = plan_.row_of(bi);
      if (row < plan_.size()) {
        kern::axpy(1.0, m_values.row(row), a.data(), d);
        if (record_trace_) {
          rec.injected_rows.emplace_back(
              bi, Tensor({d}, std::vector<double>(m_values.row(row), m_values.row(row) + d)));
        }
      }
    }

    for (std::size_t i = 0; i < d; ++i) x[i] += a[i];

    kern::rmsnorm_row(x.data(), blk.ffn_norm_gain.data(), d, cfg.rmsnorm_eps, hn.data());
    kern::linear_row(blk.w1, hn.data(), f1.data());
    kern::linear_row(blk.w3, hn.data(), f3.data());
    for (std::size_t i = 0; i < cfg.d_ff; ++i) f1[i] = kern::silu(f1[i]) * f3[i];
    kern::linear_row(blk.w2, f1.data(), fo.data());
    for (std::size_t i = 0; i < d; ++i) x[i] += fo[i];
  }

  if (record_trace_) {
    rec.pre_lm_head = Tensor({d}, std::vector<double>(x.begin(), x.end()));
    rec.injection = m_values;
  }

  kern::rmsnorm_row(x.data(), model_.final_norm_gain.data(), d, cfg.rmsnorm_eps, hn.data());
  Tensor logits({cfg.vocab_size});
  kern::linear_row(model_.lm_head, hn.data(), logits.data());
  if (!logits.all_finite()) throw NumericsError("inference produced non-finite logits");

  if (record_trace_) {
    trace_.steps.push_back(std::move(rec));
    if (!generated_phase_) ++trace_.n_prompt;
  }
  ++pos_;
  return logits;
}

ForwardResult forward(const HostModel& model, std::span<const int> tokens, const IrmNet* irm,
                      const InjectionPlan& plan, bool record_trace) {
  if (tokens.empty()) throw DimensionError("forward: empty token sequence");
  InferenceSession session(model, irm, plan, record_trace);
  ForwardResult out;
  out.logits = Tensor({tokens.size(), model.config.vocab_size});
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    Tensor row = session.step(tokens[p]);
    double* dst = out.logits.row(p);
    for (std::size_t i = 0; i < row.size(); ++i) dst[i] = row.at(i);
  }
  out.trace = session.take_trace();
  return out;
}

namespace {

int argmax_lowest(const Tensor& logits) {
  int best = 0;
  double best_v = logits.at(0);
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits.at(i) > best_v) {
      best_v = logits.at(i);
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

GenerateResult generate(const HostModel& model, std::span<const int> prompt, std::size_t n_new,
                        const IrmNet* irm, const InjectionPlan& plan, int eos_id) {
  if (prompt.empty()) throw DimensionError("generate: empty prompt");
  if (prompt.size() > model.config.max_seq) {
    throw DimensionError("generate: prompt longer than max_seq");
  }
  GenerateResult out;
  out.tokens.assign(prompt.begin(), prompt.end());
  out.n_prompt = prompt.size();

  InferenceSession session(model, irm, plan, true);
  Tensor logits;
  for (int t : prompt) logits = session.step(t);
  session.mark_generated();

  for (std::size_t g = 0; g < n_new; ++g) {
    const int next = argmax_lowest(logits);
    out.tokens.push_back(next);
    const bool can_process = session.position() < model.config.max_seq;
    if (can_process) logits = session.step(next);  // records this position's M_i
    if (next == eos_id || !can_process) break;
  }
  out.trace = session.take_trace();
  return out;
}

std::vector<int> probe_prompt(std::size_t vocab_size) {
  std::vector<int> prompt;
  prompt.push_back(0);
  for (std::size_t i = 1; i < 8; ++i) {
    prompt.push_back(static_cast<int>((13 * i + 7) % vocab_size));
  }
  return prompt;
}

ContinuityReport continuity_probe(const HostModel& model, const InjectionPlan& plan,
                                  std::size_t index, double delta, ProbeMode mode) {
  (void)plan;
  const std::size_t d = model.config.d_model;
  if (index >= d) {
    throw DimensionError("continuity probe index " + std::to_string(index) +
                         " out of d_model " + std::to_string(d));
  }

  // kZeroed isolates the skip path: no attention output anywhere (all Wo
  // zero) and no feed-forward output (all W2 zero), so the perturbation can
  // only travel along the residual additions.
  HostModel zeroed;
  const HostModel* target = &model;
  if (mode == ProbeMode::kZeroed) {
    zeroed = model;
    for (Block& b : zeroed.blocks) {
      b.wo.zero();
      b.w2.zero();
    }
    target = &zeroed;
  }

  const std::vector<int> prompt = probe_prompt(model.config.vocab_size);
  auto run = [&](bool probed) {
    InferenceSession session(*target, nullptr, InjectionPlan{}, true);
    for (std::size_t p = 0; p < prompt.size(); ++p) {
      if (probed && p + 1 == prompt.size()) session.set_probe(index, delta);
      session.step(prompt[p]);
    }
    return session.trace().steps.back().pre_lm_head;
  };

  const Tensor base = run(false);
  const Tensor probed = run(true);

  ContinuityReport rep;
  rep.index = index;
  rep.delta = delta;
  rep.mode = mode;
  rep.on_index = probed.at(index) - base.at(index);
  double ss = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    if (i == index) continue;
    const double diff = probed.at(i) - base.at(i);
    ss += diff * diff;
  }
  rep.off_index_rms = d > 1 ? std::sqrt(ss / static_cast<double>(d - 1)) : 0.0;
  return rep;
}

// --- standalone sublayers ---

Tensor attention_sublayer(const HostModel& model, std::size_t block_idx, const Tensor& x,
                          std::size_t pos0) {
  const ModelConfig& cfg = model.config;
  if (block_idx >= model.blocks.size()) throw DimensionError("block index out of range");
  if (x.rank() != 2 || x.cols() != cfg.d_model) {
    throw DimensionError("attention_sublayer: input " + x.shape_str() + " vs d_model " +
                         std::to_string(cfg.d_model));
  }
  const std::size_t t = x.rows();
  if (pos0 + t > cfg.max_seq) {
    throw DimensionError("attention_sublayer: " + std::to_string(pos0 + t) +
                         " positions exceed max_seq " + std::to_string(cfg.max_seq));
  }
  const Block& blk = model.blocks[block_idx];
  const std::size_t d = cfg.d_model;
  Tensor q({t, d}), k({t, d}), v({t, d}), out({t, d});
  std::vector<double> hn(d), ctx(d);
  for (std::size_t p = 0; p < t; ++p) {
    kern::rmsnorm_row(x.row(p), blk.attn_norm_gain.data(), d, cfg.rmsnorm_eps, hn.data());
    kern::linear_row(blk.wq, hn.data(), q.row(p));
    kern::linear_row(blk.wk, hn.data(), k.row(p));
    kern::linear_row(blk.wv, hn.data(), v.row(p));
    kern::rope_row(q.row(p), d, cfg.n_heads, pos0 + p, cfg.rope_theta);
    kern::rope_row(k.row(p), d, cfg.n_heads, pos0 + p, cfg.rope_theta);
  }
  for (std::size_t p = 0; p < t; ++p) {
    kern::attention_row(q.row(p), k.data(), v.data(), p + 1, d, cfg.n_heads, ctx.data(),
                        nullptr);
    kern::linear_row(blk.wo, ctx.data(), out.row(p));
  }
  return out;
}

Tensor block_forward(const HostModel& model, std::size_t block_idx, const Tensor& x,
                     const Tensor* injected_row, std::size_t pos0) {
  const ModelConfig& cfg = model.config;
  Tensor a = attention_sublayer(model, block_idx, x, pos0);
  const std::size_t t = x.rows();
  const std::size_t d = cfg.d_model;
  if (injected_row != nullptr) {
    if (injected_row->size() != d) {
      throw DimensionError("block_forward: injected row " + injected_row->shape_str() +
                           " vs d_model " + std::to_string(d));
    }
    kern::axpy(1.0, injected_row->data(), a.row(t - 1), d);
  }
  const Block& blk = model.blocks[block_idx];
  Tensor out = x;
  for (std::size_t p = 0; p < t; ++p) {
    kern::axpy(1.0, a.row(p), out.row(p), d);
  }
  std::vector<double> hn(d), f1(cfg.d_ff), f3(cfg.d_ff), fo(d);
  for (std::size_t p = 0; p < t; ++p) {
    kern::rmsnorm_row(out.row(p), blk.ffn_norm_gain.data(), d, cfg.rmsnorm_eps, hn.data());
    kern::linear_row(blk.w1, hn.data(), f1.data());
    kern::linear_row(blk.w3, hn.data(), f3.data());
    for (std::size_t i = 0; i < cfg.d_ff; ++i) f1[i] = kern::silu(f1[i]) * f3[i];
    kern::linear_row(blk.w2, f1.data(), fo.data());
    kern::axpy(1.0, fo.data(), out.row(p), d);
  }
  return out;
}

// --- training graph ---

HostGraphLeaves host_leaves(Graph& g, const HostModel& model, bool requires_grad) {
  HostGraphLeaves lv;
  lv.token_embedding = g.leaf(model.token_embedding, requires_grad);
  lv.ordered.push_back(lv.token_embedding);
  for (const Block& b : model.blocks) {
    HostGraphLeaves::BlockLeaves bl;
    bl.attn_norm_gain = g.leaf(b.attn_norm_gain, requires_grad);
    bl.wq = g.leaf(b.wq, requires_grad);
    bl.wk = g.leaf(b.wk, requires_grad);
    bl.wv = g.leaf(b.wv, requires_grad);
    bl.wo = g.leaf(b.wo, requires_grad);
    bl.ffn_norm_gain = g.leaf(b.ffn_norm_gain, requires_grad);
    bl.w1 = g.leaf(b.w1, requires_grad);
    bl.w3 = g.leaf(b.w3, requires_grad);
    bl.w2 = g.leaf(b.w2, requires_grad);
    lv.ordered.push_back(bl.attn_norm_gain);
    lv.ordered.push_back(bl.wq);
    lv.ordered.push_back(bl.wk);
    lv.ordered.push_back(bl.wv);
    lv.ordered.push_back(bl.wo);
    lv.ordered.push_back(bl.ffn_norm_gain);
    lv.ordered.push_back(bl.w1);
    lv.ordered.push_back(bl.w3);
    lv.ordered.push_back(bl.w2);
    lv.blocks.push_back(bl);
  }
  lv.final_norm_gain = g.leaf(model.final_norm_gain, requires_grad);
  lv.lm_head = g.leaf(model.lm_head, requires_grad);
  lv.ordered.push_back(lv.final_norm_gain);
  lv.ordered.push_back(lv.lm_head);
  return lv;
}

SequenceLoss sequence_loss(Graph& g, const ModelConfig& cfg, const HostGraphLeaves& host,
                           const IrmGraphLeaves* irm, const InjectionPlan& plan,
                           std::span<const int> tokens,
                           std::span<const std::uint8_t> loss_mask) {
  if (tokens.size() < 2) throw DimensionError("loss graph needs at least 2 tokens");
  if (tokens.size() > cfg.max_seq + 1) {
    throw DimensionError("sequence of " + std::to_string(tokens.size()) +
                         " tokens exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  const std::size_t t = tokens.size() - 1;
  if (loss_mask.size() != t) {
    throw DimensionError("loss mask length " + std::to_string(loss_mask.size()) + " vs " +
                         std::to_string(t) + " targets");
  }

  std::vector<std::size_t> positions(t);
  for (std::size_t p = 0; p < t; ++p) positions[p] = p;

  SequenceLoss sl;
  Var x = g.embedding_rows(host.token_embedding, tokens.subspan(0, t));
  Var m_flat;  // t x (|plan| * d), set at block 0
  for (std::size_t bi = 0; bi < cfg.n_layers; ++bi) {
    const auto& bl = host.blocks[bi];
    Var hn = g.rmsnorm_rows(x, bl.attn_norm_gain, cfg.rmsnorm_eps);
    Var q = g.rope_rows(g.linear(hn, bl.wq), cfg.n_heads, positions, cfg.rope_theta);
    Var k = g.rope_rows(g.linear(hn, bl.wk), cfg.n_heads, positions, cfg.rope_theta);
    Var v = g.linear(hn, bl.wv);
    Var a = g.linear(g.causal_attention(q, k, v, cfg.n_heads), bl.wo);
    if (bi == 0 && irm != nullptr) {
      m_flat = irm_forward_rows(g, *irm, a);
    }
    if (irm != nullptr) {
      const std::size_t row = plan.row_of(bi);
      if (row < plan.size()) {
        a = g.add(a, g.col_slice(m_flat, row * cfg.d_model, cfg.d_model));
      }
    }
    x = g.add(x, a);
    Var fn = g.rmsnorm_rows(x, bl.ffn_norm_gain, cfg.rmsnorm_eps);
    x = g.add(x, swiglu_ffn(g, fn, bl.w1, bl.w3, bl.w2));
  }
  Var xn = g.rmsnorm_rows(x, host.final_norm_gain, cfg.rmsnorm_eps);
  sl.logits = g.linear(xn, host.lm_head);
  sl.loss = g.cross_entropy(sl.logits, tokens.subspan(1, t), loss_mask);
  sl.loss_sum = g.cross_entropy_sum(sl.logits, tokens.subspan(1, t), loss_mask);
  for (std::uint8_t m : loss_mask) sl.n_loss_tokens += m ? 1 : 0;
  return sl;
}

LossGraph build_loss_graph(Graph& g, const HostModel& model, const IrmNet* irm,
                           const InjectionPlan& plan, std::span<const int> tokens,
                           std::span<const std::uint8_t> loss_mask, bool train_host,
                           bool train_irm) {
  LossGraph lg;
  lg.host = host_leaves(g, model, train_host);
  if (irm != nullptr) {
    plan.validate(model.config.n_layers);
    if (irm->config.plan.blocks != plan.blocks) {
      throw ConfigError("injection plan does not match the IRM's configured plan");
    }
    lg.irm = irm_leaves(g, *irm, train_irm);
  }
  SequenceLoss sl = sequence_loss(g, model.config, lg.host, irm != nullptr ? &lg.irm : nullptr,
                                  plan, tokens, loss_mask);
  lg.loss = sl.loss;
  lg.loss_sum = sl.loss_sum;
  lg.logits = sl.logits;
  lg.n_loss_tokens = sl.n_loss_tokens;
  return lg;
}

}  // namespace irmlab
