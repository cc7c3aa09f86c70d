#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "irmlab/dataset.hpp"
#include "irmlab/host_model.hpp"
#include "irmlab/tensor.hpp"

namespace irmlab {

/// Injection matrices averaged over a token window (all prompt steps plus the
/// first G generated steps).
struct HeatmapMatrix {
  Tensor h;  // [|plan| x d_model]
  std::vector<std::size_t> plan_blocks;
  std::size_t n_steps_averaged = 0;
  nlohmann::json metadata;  // prompt/style/seed/window description
};

HeatmapMatrix average_heatmap(std::span<const Tensor> step_matrices, std::size_t n_prompt,
                              std::size_t first_generated = 10);
HeatmapMatrix average_heatmap(const ForwardTrace& trace, std::size_t first_generated = 10);

/// Two-way sum-of-squares decomposition of a heatmap. ss_index grows with
/// column (neuron-index) structure, ss_layer with row (layer) structure;
/// ratio > 1 means index explains more than layer.
struct StriationReport {
  double ss_index = 0.0;
  double ss_layer = 0.0;
  double ratio = 0.0;  // +inf sentinel when ss_layer == 0 and ss_index > 0
  double grand_mean = 0.0;
  std::size_t rows = 0, cols = 0;
};

StriationReport striation_ratio(const Tensor& h);

/// Column scores s_n = mean_j |H[j, n]|; the dominant index is the argmax
/// (lowest index on ties) with a z-score against the score distribution.
struct DominanceReport {
  std::vector<double> scores;
  std::size_t top_index = 0;
  double top_score = 0.0;
  double z_score = 0.0;
};

DominanceReport dominant_index(const Tensor& h);

/// Where during inference the k largest-magnitude injection values occur.
struct PositionHistogram {
  std::size_t k = 0;
  std::size_t assigned = 0;  // min(k, total entries)
  std::size_t n_prompt = 0;
  std::vector<std::size_t> counts;  // one per step position
};

PositionHistogram topk_position_histogram(std::span<const Tensor> step_matrices, std::size_t k,
                                          std::size_t n_prompt);

/// Incoming LM-head weight magnitude per residual index, with outliers at
/// factor x median and the strongest-coupled tokens per outlier.
struct LmHeadOutlier {
  std::size_t index = 0;
  double score = 0.0;  // max_t |lm_head[t, index]|
  std::vector<std::pair<int, double>> top_tokens;  // (token id, weight), 5 largest |w|
};

struct LmHeadReport {
  double factor = 10.0;
  double median = 0.0;
  std::vector<double> scores;  // per index
  std::vector<LmHeadOutlier> outliers;  // sorted by score descending
};

LmHeadReport lmhead_outliers(const Tensor& lm_head, double factor = 10.0);

/// Per-index difference of column means between two heatmaps.
struct ContrastReport {
  std::vector<double> d;
  std::size_t argmin = 0, argmax = 0;
};

ContrastReport contrast_heatmaps(const Tensor& a, const Tensor& b);

/// Base vs injected cross-entropy on held-out sequences plus marker rates of
/// greedy generations from the given prompts.
struct FluencyReport {
  double base_ce = 0.0;
  double injected_ce = 0.0;
  double marker_rate_base = 0.0;
  double marker_rate_injected = 0.0;
  Style style = Style::kNeutral;
  std::size_t n_prompts = 0;
  std::size_t n_new = 0;
};

FluencyReport fluency_delta(const HostModel& host, const IrmNet* irm, const InjectionPlan& plan,
                            const std::vector<TokenSequence>& eval_sequences,
                            const std::vector<std::vector<int>>& prompts, std::size_t n_new,
                            Style style, const Tokenizer& tok);

// --- emission ---

/// CSV: header "layer,0,1,...,d-1"; one row per planned block.
void write_heatmap_csv(const std::filesystem::path& path, const HeatmapMatrix& hm);
HeatmapMatrix read_heatmap_csv(const std::filesystem::path& path);

/// 8-bit binary PGM on a symmetric diverging scale around zero; vmax and the
/// mapping are recorded in a sidecar JSON next to the image.
void write_heatmap_pgm(const std::filesystem::path& path, const HeatmapMatrix& hm);

/// Per-step injection matrices as produced by generate(); the JSON carries
/// the plan, d_model and the prompt/generated boundary.
void write_trace_json(const std::filesystem::path& path, const ForwardTrace& trace,
                      const nlohmann::json& metadata);

struct LoadedTrace {
  std::vector<Tensor> step_matrices;
  std::size_t n_prompt = 0;
  std::vector<std::size_t> plan_blocks;
  nlohmann::json metadata;
};

LoadedTrace read_trace_json(const std::filesystem::path& path);

nlohmann::json striation_to_json(const StriationReport& r);
nlohmann::json dominance_to_json(const DominanceReport& r);
nlohmann::json histogram_to_json(const PositionHistogram& r);
nlohmann::json lmhead_to_json(const LmHeadReport& r);
nlohmann::json contrast_to_json(const ContrastReport& r);
nlohmann::json continuity_to_json(const ContinuityReport& r);
nlohmann::json fluency_to_json(const FluencyReport& r);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace irmlab
