#include "irmlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "irmlab/errors.hpp"
#include "irmlab/train.hpp"

namespace irmlab {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

HeatmapMatrix average_heatmap(std::span<const Tensor> step_matrices, std::size_t n_prompt,
                              std::size_t first_generated) {
  const std::size_t window = std::min(step_matrices.size(), n_prompt + first_generated);
  if (window == 0) throw DimensionError("average_heatmap: empty step window");
  HeatmapMatrix hm;
  hm.h = Tensor(step_matrices[0].shape());
  for (std::size_t s = 0; s < window; ++s) {
    const Tensor& m = step_matrices[s];
    if (!m.same_shape(hm.h)) {
      throw DimensionError("average_heatmap: step " + std::to_string(s) + " has shape " +
                           m.shape_str() + ", want " + hm.h.shape_str());
    }
    for (std::size_t i = 0; i < hm.h.size(); ++i) hm.h.at(i) += m.at(i);
  }
  const double inv = 1.0 / static_cast<double>(window);
  for (std::size_t i = 0; i < hm.h.size(); ++i) hm.h.at(i) *= inv;
  hm.n_steps_averaged = window;
  return hm;
}

HeatmapMatrix average_heatmap(const ForwardTrace& trace, std::size_t first_generated) {
  std::vector<Tensor> ms;
  ms.reserve(trace.steps.size());
  for (const StepRecord& s : trace.steps) {
    if (s.injection.empty()) {
      throw ConfigError("average_heatmap: trace has no injection matrices (no IRM attached)");
    }
    ms.push_back(s.injection);
  }
  HeatmapMatrix hm = average_heatmap(ms, trace.n_prompt, first_generated);
  hm.plan_blocks = trace.plan.blocks;
  return hm;
}

StriationReport striation_ratio(const Tensor& h) {
  if (h.rank() != 2 || h.rows() < 2 || h.cols() < 2) {
    throw DimensionError("striation_ratio: need at least a 2x2 heatmap, got " + h.shape_str());
  }
  const std::size_t rows = h.rows();
  const std::size_t cols = h.cols();
  StriationReport r;
  r.rows = rows;
  r.cols = cols;

  double total = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) total += h.at(i);
  r.grand_mean = total / static_cast<double>(rows * cols);

  for (std::size_t n = 0; n < cols; ++n) {
    double c = 0.0;
    for (std::size_t j = 0; j < rows; ++j) c += h.at(j, n);
    c /= static_cast<double>(rows);
    const double dev = c - r.grand_mean;
    r.ss_index += dev * dev;
  }
  r.ss_index *= static_cast<double>(rows);

  for (std::size_t j = 0; j < rows; ++j) {
    double m = 0.0;
    for (std::size_t n = 0; n < cols; ++n) m += h.at(j, n);
    m /= static_cast<double>(cols);
    const double dev = m - r.grand_mean;
    r.ss_layer += dev * dev;
  }
  r.ss_layer *= static_cast<double>(cols);

  if (r.ss_layer == 0.0) {
    r.ratio = r.ss_index > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  } else {
    r.ratio = r.ss_index / r.ss_layer;
  }
  return r;
}

DominanceReport dominant_index(const Tensor& h) {
  if (h.rank() != 2 || h.size() == 0) {
    throw DimensionError("dominant_index: need a nonempty matrix, got " + h.shape_str());
  }
  const std::size_t rows = h.rows();
  const std::size_t cols = h.cols();
  DominanceReport r;
  r.scores.resize(cols);
  for (std::size_t n = 0; n < cols; ++n) {
    double s = 0.0;
    for (std::size_t j = 0; j < rows; ++j) s += std::abs(h.at(j, n));
    r.scores[n] = s / static_cast<double>(rows);
  }
  r.top_index = 0;
  for (std::size_t n = 1; n < cols; ++n) {
    if (r.scores[n] > r.scores[r.top_index]) r.top_index = n;  // lowest index wins ties
  }
  r.top_score = r.scores[r.top_index];

  double mean = 0.0;
  for (double s : r.scores) mean += s;
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (double s : r.scores) var += (s - mean) * (s - mean);
  const double stddev = std::sqrt(var / static_cast<double>(cols));
  r.z_score = stddev == 0.0 ? 0.0 : (r.top_score - mean) / stddev;
  return r;
}

PositionHistogram topk_position_histogram(std::span<const Tensor> step_matrices, std::size_t k,
                                          std::size_t n_prompt) {
  if (k == 0) throw ConfigError("topk_position_histogram: k must be >= 1");
  if (step_matrices.empty()) {
    throw DimensionError("topk_position_histogram: no step matrices");
  }
  struct Entry {
    double mag;
    std::size_t step, layer, index;
  };
  std::vector<Entry> entries;
  std::size_t total = 0;
  for (const Tensor& m : step_matrices) total += m.size();
  entries.reserve(total);
  for (std::size_t s = 0; s < step_matrices.size(); ++s) {
    const Tensor& m = step_matrices[s];
    for (std::size_t j = 0; j < m.rows(); ++j) {
      for (std::size_t n = 0; n < m.cols(); ++n) {
        entries.push_back({std::abs(m.at(j, n)), s, j, n});
      }
    }
  }
  // Largest magnitude first; ties resolved by (step, layer, index).
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.mag != b.mag) return a.mag > b.mag;
    if (a.step != b.step) return a.step < b.step;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.index < b.index;
  });

  PositionHistogram hist;
  hist.k = k;
  hist.n_prompt = n_prompt;
  hist.assigned = std::min(k, entries.size());
  hist.counts.assign(step_matrices.size(), 0);
  for (std::size_t i = 0; i < hist.assigned; ++i) ++hist.counts[entries[i].step];
  return hist;
}

LmHeadReport lmhead_outliers(const Tensor& lm_head, double factor) {
  if (lm_head.rank() != 2 || lm_head.size() == 0) {
    throw DimensionError("lmhead_outliers: need a nonempty [vocab x d] matrix");
  }
  const std::size_t vocab = lm_head.rows();
  const std::size_t d = lm_head.cols();
  LmHeadReport r;
  r.factor = factor;
  r.scores.resize(d);
  for (std::size_t n = 0; n < d; ++n) {
    double best = 0.0;
    for (std::size_t t = 0; t < vocab; ++t) {
      const double a = std::abs(lm_head.at(t, n));
      if (a > best) best = a;
    }
    r.scores[n] = best;
  }
  std::vector<double> sorted = r.scores;
  std::sort(sorted.begin(), sorted.end());
  r.median = d % 2 == 1 ? sorted[d / 2] : 0.5 * (sorted[d / 2 - 1] + sorted[d / 2]);

  for (std::size_t n = 0; n < d; ++n) {
    // An index counts as an outlier only when it actually carries weight;
    // an all-zero matrix has no outliers even though 0 >= factor * 0.
    if (r.scores[n] > 0.0 && r.scores[n] >= factor * r.median) {
      LmHeadOutlier o;
      o.index = n;
      o.score = r.scores[n];
      std::vector<std::pair<int, double>> all(vocab);
      for (std::size_t t = 0; t < vocab; ++t) {
        all[t] = {static_cast<int>(t), lm_head.at(t, n)};
      }
      std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        const double ma = std::abs(a.second), mb = std::abs(b.second);
        if (ma != mb) return ma > mb;
        return a.first < b.first;
      });
      all.resize(std::min<std::size_t>(5, all.size()));
      o.top_tokens = std::move(all);
      r.outliers.push_back(std::move(o));
    }
  }
  std::sort(r.outliers.begin(), r.outliers.end(), [](const LmHeadOutlier& a, const LmHeadOutlier& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  return r;
}

ContrastReport contrast_heatmaps(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || !a.same_shape(b)) {
    throw DimensionError("contrast_heatmaps: shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
  }
  const std::size_t rows = a.rows();
  const std::size_t cols = a.cols();
  ContrastReport r;
  r.d.resize(cols);
  for (std::size_t n = 0; n < cols; ++n) {
    double ca = 0.0, cb = 0.0;
    for (std::size_t j = 0; j < rows; ++j) {
      ca += a.at(j, n);
      cb += b.at(j, n);
    }
    r.d[n] = ca / static_cast<double>(rows) - cb / static_cast<double>(rows);
  }
  for (std::size_t n = 1; n < cols; ++n) {
    if (r.d[n] < r.d[r.argmin]) r.argmin = n;
    if (r.d[n] > r.d[r.argmax]) r.argmax = n;
  }
  return r;
}

FluencyReport fluency_delta(const HostModel& host, const IrmNet* irm, const InjectionPlan& plan,
                            const std::vector<TokenSequence>& eval_sequences,
                            const std::vector<std::vector<int>>& prompts, std::size_t n_new,
                            Style style, const Tokenizer& tok) {
  if (eval_sequences.empty()) throw ConfigError("fluency_delta: empty evaluation corpus");
  FluencyReport r;
  r.style = style;
  r.n_prompts = prompts.size();
  r.n_new = n_new;
  r.base_ce = evaluate_ce(host, nullptr, InjectionPlan{}, eval_sequences);
  r.injected_ce =
      irm != nullptr ? evaluate_ce(host, irm, plan, eval_sequences) : r.base_ce;

  auto measure = [&](const IrmNet* net) {
    std::vector<int> measured;
    for (const std::vector<int>& prompt : prompts) {
      GenerateResult gen = generate(host, prompt, n_new, net, plan, tok.eos());
      if (n_new == 0) {
        measured.insert(measured.end(), prompt.begin(), prompt.end());
      } else {
        measured.insert(measured.end(), gen.tokens.begin() + static_cast<long>(gen.n_prompt),
                        gen.tokens.end());
      }
    }
    return measured.empty() ? 0.0 : marker_rate(measured, style, tok);
  };
  if (!prompts.empty()) {
    r.marker_rate_base = measure(nullptr);
    r.marker_rate_injected = irm != nullptr ? measure(irm) : r.marker_rate_base;
  }
  return r;
}

// --- emission ---

void write_heatmap_csv(const std::filesystem::path& path, const HeatmapMatrix& hm) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write heatmap CSV " + path.string());
  out << "layer";
  for (std::size_t n = 0; n < hm.h.cols(); ++n) out << ',' << n;
  out << '\n';
  for (std::size_t j = 0; j < hm.h.rows(); ++j) {
    out << (j < hm.plan_blocks.size() ? hm.plan_blocks[j] : j);
    for (std::size_t n = 0; n < hm.h.cols(); ++n) out << ',' << fmt_double(hm.h.at(j, n));
    out << '\n';
  }
}

HeatmapMatrix read_heatmap_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open heatmap CSV " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty CSV");
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> plan;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    std::size_t field = 0;
    while (pos <= line.size()) {
      std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) comma = line.size();
      const std::string cell = line.substr(pos, comma - pos);
      if (field == 0) {
        plan.push_back(static_cast<std::size_t>(std::stoul(cell)));
      } else {
        row.push_back(std::stod(cell));
      }
      ++field;
      pos = comma + 1;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(path.string() + ": no data rows");
  const std::size_t cols = rows[0].size();
  HeatmapMatrix hm;
  hm.h = Tensor({rows.size(), cols});
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (rows[j].size() != cols) throw IoError(path.string() + ": ragged CSV");
    for (std::size_t n = 0; n < cols; ++n) hm.h.at(j, n) = rows[j][n];
  }
  hm.plan_blocks = std::move(plan);
  return hm;
}

void write_heatmap_pgm(const std::filesystem::path& path, const HeatmapMatrix& hm) {
  double vmax = 0.0;
  for (std::size_t i = 0; i < hm.h.size(); ++i) vmax = std::max(vmax, std::abs(hm.h.at(i)));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write PGM " + path.string());
  out << "P5\n" << hm.h.cols() << ' ' << hm.h.rows() << "\n255\n";
  for (std::size_t i = 0; i < hm.h.size(); ++i) {
    int pix = 128;
    if (vmax > 0.0) {
      pix = static_cast<int>(std::lround((hm.h.at(i) + vmax) / (2.0 * vmax) * 255.0));
      pix = std::clamp(pix, 0, 255);
    }
    out.put(static_cast<char>(static_cast<unsigned char>(pix)));
  }
  json sidecar{{"vmax", vmax},
               {"width", hm.h.cols()},
               {"height", hm.h.rows()},
               {"scale", "linear map from [-vmax, +vmax] to [0, 255], 128 = zero"},
               {"plan", hm.plan_blocks},
               {"n_steps_averaged", hm.n_steps_averaged},
               {"metadata", hm.metadata}};
  write_json(path.string() + ".json", sidecar);
}

void write_trace_json(const std::filesystem::path& path, const ForwardTrace& trace,
                      const json& metadata) {
  json steps = json::array();
  for (const StepRecord& s : trace.steps) {
    if (s.injection.empty()) {
      throw ConfigError("trace has no injection matrices (generate with an IRM attached)");
    }
    json rows = json::array();
    for (std::size_t j = 0; j < s.injection.rows(); ++j) {
      json row = json::array();
      for (std::size_t n = 0; n < s.injection.cols(); ++n) row.push_back(s.injection.at(j, n));
      rows.push_back(std::move(row));
    }
    steps.push_back(json{{"step", s.step}, {"generated", s.generated}, {"m", std::move(rows)}});
  }
  json j{{"format", "irmlab-trace-v1"},
         {"n_prompt", trace.n_prompt},
         {"plan", trace.plan.blocks},
         {"steps", std::move(steps)},
         {"metadata", metadata}};
  write_json(path, j);
}

LoadedTrace read_trace_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad trace JSON: " + std::string(e.what()));
  }
  LoadedTrace t;
  t.n_prompt = j.at("n_prompt").get<std::size_t>();
  t.plan_blocks = j.at("plan").get<std::vector<std::size_t>>();
  if (j.contains("metadata")) t.metadata = j.at("metadata");
  for (const json& s : j.at("steps")) {
    const json& rows = s.at("m");
    const std::size_t nr = rows.size();
    if (nr == 0) throw IoError(path.string() + ": empty step matrix");
    const std::size_t nc = rows[0].size();
    Tensor m({nr, nc});
    for (std::size_t r = 0; r < nr; ++r) {
      if (rows[r].size() != nc) throw IoError(path.string() + ": ragged step matrix");
      for (std::size_t c = 0; c < nc; ++c) m.at(r, c) = rows[r][c].get<double>();
    }
    t.step_matrices.push_back(std::move(m));
  }
  if (t.step_matrices.empty()) throw IoError(path.string() + ": trace has no steps");
  return t;
}

json striation_to_json(const StriationReport& r) {
  json j{{"ss_index", r.ss_index},
         {"ss_layer", r.ss_layer},
         {"grand_mean", r.grand_mean},
         {"rows", r.rows},
         {"cols", r.cols}};
  if (std::isinf(r.ratio)) {
    j["ratio"] = "inf";
  } else {
    j["ratio"] = r.ratio;
  }
  return j;
}

json dominance_to_json(const DominanceReport& r) {
  return json{{"scores", r.scores},
              {"top_index", r.top_index},
              {"top_score", r.top_score},
              {"z_score", r.z_score}};
}

json histogram_to_json(const PositionHistogram& r) {
  json positions = json::array();
  for (std::size_t i = 0; i < r.counts.size(); ++i) {
    positions.push_back(json{{"position", i},
                             {"kind", i < r.n_prompt ? "prompt" : "generated"},
                             {"count", r.counts[i]}});
  }
  return json{{"k", r.k},
              {"assigned", r.assigned},
              {"n_prompt", r.n_prompt},
              {"positions", std::move(positions)}};
}

json lmhead_to_json(const LmHeadReport& r) {
  json outliers = json::array();
  for (const LmHeadOutlier& o : r.outliers) {
    json tokens = json::array();
    for (const auto& [id, w] : o.top_tokens) {
      tokens.push_back(json{{"token_id", id}, {"weight", w}});
    }
    outliers.push_back(
        json{{"index", o.index}, {"score", o.score}, {"top_tokens", std::move(tokens)}});
  }
  return json{{"factor", r.factor},
              {"median", r.median},
              {"scores", r.scores},
              {"outliers", std::move(outliers)}};
}

json contrast_to_json(const ContrastReport& r) {
  return json{{"d", r.d}, {"argmin", r.argmin}, {"argmax", r.argmax}};
}

json continuity_to_json(const ContinuityReport& r) {
  return json{{"index", r.index},
              {"delta", r.delta},
              {"mode", r.mode == ProbeMode::kZeroed ? "zeroed" : "trained"},
              {"on_index", r.on_index},
              {"off_index_rms", r.off_index_rms}};
}

json fluency_to_json(const FluencyReport& r) {
  return json{{"base_ce", r.base_ce},
              {"injected_ce", r.injected_ce},
              {"marker_rate_base", r.marker_rate_base},
              {"marker_rate_injected", r.marker_rate_injected},
              {"style", style_name(r.style)},
              {"n_prompts", r.n_prompts},
              {"n_new", r.n_new}};
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace irmlab
