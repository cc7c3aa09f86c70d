#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irmlab/graph.hpp"
#include "irmlab/irm.hpp"
#include "irmlab/tensor.hpp"

namespace irmlab {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 8;
  std::size_t n_heads = 4;
  std::size_t d_ff = 172;
  std::size_t vocab_size = 512;
  std::size_t max_seq = 64;
  double rope_theta = 10000.0;
  double rmsnorm_eps = 1e-5;

  std::size_t d_head() const { return d_model / n_heads; }
  void validate() const;  // ConfigError: divisibility, even head dim, nonzero sizes
  bool operator==(const ModelConfig&) const = default;
};

/// Pre-norm residual block: x += Attn(norm(x)); x += Ffn(norm(x)).
struct Block {
  Tensor attn_norm_gain, ffn_norm_gain;  // [d]
  Tensor wq, wk, wv, wo;                 // [d x d]
  Tensor w1, w3;                         // [f x d]
  Tensor w2;                             // [d x f]
};

/// Decoder-only transformer: token embedding, pre-norm blocks with rotary
/// attention and SwiGLU feed-forward, RMSNorm, and a single linear LM head
/// (no bias, no hidden layer).
struct HostModel {
  ModelConfig config;
  Tensor token_embedding;  // [V x d]
  std::vector<Block> blocks;
  Tensor final_norm_gain;  // [d]
  Tensor lm_head;          // [V x d]

  static HostModel init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  std::size_t parameter_count() const;
  std::string weights_hash() const;  // SHA-256 over all tensors, canonical order
};

/// Per-position capture of one forward pass.
struct StepRecord {
  std::size_t step = 0;     // token position
  bool generated = false;   // false for prompt positions
  std::vector<Tensor> post_attention;              // n_layers rows of [d], pre-injection
  Tensor injection;                                // [|plan| x d]; empty without an IRM
  std::vector<std::pair<std::size_t, Tensor>> injected_rows;  // (block, row actually added)
  Tensor pre_lm_head;                              // [d] residual before the final norm
};

struct ForwardTrace {
  std::size_t n_prompt = 0;
  InjectionPlan plan;
  std::vector<StepRecord> steps;  // one per processed token position
};

/// Incremental decoding state with per-block KV caches. Cached keys/values
/// reflect the injected residual stream. The model must outlive the session
/// and stay unchanged while it is in use.
class InferenceSession {
 public:
  InferenceSession(const HostModel& model, const IrmNet* irm, InjectionPlan plan,
                   bool record_trace = true);

  /// Feeds one token; returns the next-token logits row [V].
  Tensor step(int token);

  /// Adds delta to component `index` of block 0's post-attention output on
  /// the next processed position only (continuity probing).
  void set_probe(std::size_t index, double delta);

  std::size_t position() const { return pos_; }
  const ForwardTrace& trace() const { return trace_; }
  ForwardTrace take_trace() { return std::move(trace_); }
  void mark_generated();  // subsequent steps are recorded as generated

 private:
  const HostModel& model_;
  const IrmNet* irm_;
  InjectionPlan plan_;
  bool record_trace_;
  bool generated_phase_ = false;
  std::size_t pos_ = 0;
  std::vector<std::vector<double>> k_cache_, v_cache_;  // per block, rows of d_model
  std::optional<std::pair<std::size_t, double>> probe_;
  ForwardTrace trace_;
};

struct ForwardResult {
  Tensor logits;  // [t x V]: row p predicts token p+1
  ForwardTrace trace;
};

/// Full-sequence evaluation via the incremental session (prompt semantics:
/// every position computes and injects its own M_i).
ForwardResult forward(const HostModel& model, std::span<const int> tokens, const IrmNet* irm,
                      const InjectionPlan& plan, bool record_trace = true);

struct GenerateResult {
  std::vector<int> tokens;       // prompt + generated
  std::size_t n_prompt = 0;
  ForwardTrace trace;            // one record per processed position
};

/// Greedy decoding (argmax, ties to the lowest id), stopping at EOS or when
/// the context window fills. Every generated token, including a terminal EOS,
/// is processed so its injection matrix is recorded.
GenerateResult generate(const HostModel& model, std::span<const int> prompt, std::size_t n_new,
                        const IrmNet* irm, const InjectionPlan& plan, int eos_id);

enum class ProbeMode { kZeroed, kTrained };

struct ContinuityReport {
  std::size_t index = 0;
  double delta = 0.0;
  ProbeMode mode = ProbeMode::kTrained;
  double on_index = 0.0;       // change of the probed component, pre-LM-head
  double off_index_rms = 0.0;  // RMS of the change over all other components
};

/// Measures how a block-0 perturbation of delta * e_n survives to the final
/// residual. kZeroed runs on a copy with Wo (blocks 1..L-1) and every W2
/// zeroed, isolating the skip path.
ContinuityReport continuity_probe(const HostModel& model, const InjectionPlan& plan,
                                  std::size_t index, double delta, ProbeMode mode);

/// The fixed prompt used by continuity_probe.
std::vector<int> probe_prompt(std::size_t vocab_size);

// --- standalone sublayer evaluation (plain tensors, shared kernels) ---

/// Multi-head causal attention sublayer of one block over x (t x d):
/// pre-norm, rotary q/k starting at position pos0, heads merged through Wo.
/// Returns the output BEFORE the residual addition.
Tensor attention_sublayer(const HostModel& model, std::size_t block_idx, const Tensor& x,
                          std::size_t pos0 = 0);

/// Whole block: attention (optionally with one injection row added at the
/// last position), residual, feed-forward, residual.
Tensor block_forward(const HostModel& model, std::size_t block_idx, const Tensor& x,
                     const Tensor* injected_row = nullptr, std::size_t pos0 = 0);

// --- training-graph construction ---

struct HostGraphLeaves {
  Var token_embedding;
  struct BlockLeaves {
    Var attn_norm_gain, ffn_norm_gain, wq, wk, wv, wo, w1, w3, w2;
  };
  std::vector<BlockLeaves> blocks;
  Var final_norm_gain;
  Var lm_head;
  /// Leaves in the canonical parameter order (matches HostModel::parameters).
  std::vector<Var> ordered;
};

HostGraphLeaves host_leaves(Graph& g, const HostModel& model, bool requires_grad);

struct SequenceLoss {
  Var loss;      // scalar: token-mean cross-entropy over unmasked targets
  Var loss_sum;  // summed cross-entropy (for token-weighted batching)
  Var logits;    // [t-1 x V]
  std::size_t n_loss_tokens = 0;
};

/// Teacher-forced next-token loss over one sequence built on existing leaves,
/// with per-position IRM injection when irm leaves are supplied. loss_mask
/// aligns with targets (length tokens.size() - 1). Several sequences may
/// share one graph and one set of leaves (batching).
SequenceLoss sequence_loss(Graph& g, const ModelConfig& cfg, const HostGraphLeaves& host,
                           const IrmGraphLeaves* irm, const InjectionPlan& plan,
                           std::span<const int> tokens,
                           std::span<const std::uint8_t> loss_mask);

struct LossGraph {
  Var loss;
  Var loss_sum;
  Var logits;
  std::size_t n_loss_tokens = 0;
  HostGraphLeaves host;
  IrmGraphLeaves irm;  // empty when no IRM
};

/// Convenience wrapper: fresh leaves plus one sequence.
LossGraph build_loss_graph(Graph& g, const HostModel& model, const IrmNet* irm,
                           const InjectionPlan& plan, std::span<const int> tokens,
                           std::span<const std::uint8_t> loss_mask, bool train_host,
                           bool train_irm);

}  // namespace irmlab
