#include "irmlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "irmlab/errors.hpp"
#include "irmlab/sha256.hpp"

namespace irmlab {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'I', 'R', 'M', 'L', 'A', 'B', '1', '\n'};
constexpr std::size_t kAlign = 64;

std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

json model_config_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},       {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},       {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
              {"rope_theta", c.rope_theta}, {"rmsnorm_eps", c.rmsnorm_eps}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq = j.at("max_seq").get<std::size_t>();
  c.rope_theta = j.at("rope_theta").get<double>();
  c.rmsnorm_eps = j.at("rmsnorm_eps").get<double>();
  return c;
}

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

void write_container(const std::filesystem::path& path, const std::string& kind,
                     const json& config, const std::vector<NamedTensor>& tensors) {
  json dir = json::array();
  for (const NamedTensor& nt : tensors) {
    dir.push_back({{"name", nt.name},
                   {"dtype", "f32"},
                   {"shape", nt.tensor->shape()},
                   {"offset", 0}});
  }
  json header{{"format", "IRMLAB1"}, {"kind", kind}, {"config", config}, {"tensors", dir}};

  // Offsets are absolute and depend on the header's own length, so iterate
  // until the serialized size stabilizes (offset digit growth can bump it).
  std::string head_str;
  std::vector<std::size_t> offsets(tensors.size());
  for (int pass = 0; pass < 8; ++pass) {
    head_str = header.dump();
    std::size_t pos = align_up(8 + 8 + head_str.size());
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      offsets[i] = pos;
      pos = align_up(pos + tensors[i].tensor->size() * sizeof(float));
      header["tensors"][i]["offset"] = offsets[i];
    }
    if (header.dump().size() == head_str.size()) {
      head_str = header.dump();
      break;
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = head_str.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(head_str.data(), static_cast<std::streamsize>(head_str.size()));

  std::size_t pos = 8 + 8 + head_str.size();
  const char zeros[kAlign] = {};
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (offsets[i] < pos) throw IoError("checkpoint layout error");
    out.write(zeros, static_cast<std::streamsize>(offsets[i] - pos));
    const Tensor& t = *tensors[i].tensor;
    std::vector<float> payload(t.size());
    for (std::size_t k = 0; k < t.size(); ++k) payload[k] = static_cast<float>(t.at(k));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    pos = offsets[i] + payload.size() * sizeof(float);
  }
  const std::size_t end = align_up(pos);
  out.write(zeros, static_cast<std::streamsize>(end - pos));
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

struct Container {
  json header;
  std::vector<char> bytes;
};

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  Container c;
  c.bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (c.bytes.size() < 16 || std::memcmp(c.bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + ": not an IRMLAB1 checkpoint");
  }
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, c.bytes.data() + 8, sizeof(hlen));
  if (16 + hlen > c.bytes.size()) throw IoError(path.string() + ": truncated header");
  try {
    c.header = json::parse(std::string_view(c.bytes.data() + 16, hlen));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad header JSON: " + std::string(e.what()));
  }
  return c;
}

Tensor read_tensor(const Container& c, const json& entry, const std::filesystem::path& path) {
  const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
  const auto offset = entry.at("offset").get<std::size_t>();
  if (entry.at("dtype").get<std::string>() != "f32") {
    throw IoError(path.string() + ": unsupported dtype for " +
                  entry.at("name").get<std::string>());
  }
  if (offset % kAlign != 0) {
    throw IoError(path.string() + ": misaligned tensor " +
                  entry.at("name").get<std::string>());
  }
  const std::size_t n = shape_product(shape);
  if (offset + n * sizeof(float) > c.bytes.size()) {
    throw IoError(path.string() + ": truncated tensor " +
                  entry.at("name").get<std::string>());
  }
  Tensor t(shape);
  const char* src = c.bytes.data() + offset;
  for (std::size_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, src + i * sizeof(float), sizeof(float));
    t.at(i) = static_cast<double>(f);
  }
  return t;
}

const json& find_tensor_entry(const json& header, const std::string& name,
                              const std::filesystem::path& path) {
  for (const json& e : header.at("tensors")) {
    if (e.at("name").get<std::string>() == name) return e;
  }
  throw IoError(path.string() + ": missing tensor " + name);
}

}  // namespace

void save_host_checkpoint(const std::filesystem::path& path, const HostModel& model) {
  std::vector<NamedTensor> tensors;
  for (auto& [name, t] : const_cast<HostModel&>(model).named_parameters()) {
    tensors.push_back({name, t});
  }
  write_container(path, "host", model_config_json(model.config), tensors);
}

HostModel load_host_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header.at("kind").get<std::string>() != "host") {
    throw IoError(path.string() + ": not a host checkpoint");
  }
  HostModel m;
  m.config = model_config_from_json(c.header.at("config"));
  m.config.validate();
  m.blocks.resize(m.config.n_layers);
  for (auto& [name, t] : m.named_parameters()) {
    *t = read_tensor(c, find_tensor_entry(c.header, name, path), path);
    t->requires_grad = true;
  }
  if (m.token_embedding.rows() != m.config.vocab_size ||
      m.token_embedding.cols() != m.config.d_model ||
      m.lm_head.rows() != m.config.vocab_size) {
    throw IoError(path.string() + ": tensor shapes disagree with config");
  }
  return m;
}

void save_irm_checkpoint(const std::filesystem::path& path, const IrmNet& net,
                         const std::string& host_payload_hash) {
  json config{{"input_dim", net.config.input_dim},
              {"hidden_dims", net.config.hidden_dims},
              {"plan", net.config.plan.blocks},
              {"host_ckpt_hash", host_payload_hash}};
  std::vector<NamedTensor> tensors;
  for (auto& [name, t] : const_cast<IrmNet&>(net).named_parameters()) {
    tensors.push_back({name, t});
  }
  write_container(path, "irm", config, tensors);
}

LoadedIrm load_irm_checkpoint(const std::filesystem::path& path,
                              const std::string& expected_host_hash) {
  Container c = read_container(path);
  if (c.header.at("kind").get<std::string>() != "irm") {
    throw IoError(path.string() + ": not an IRM checkpoint");
  }
  const json& cfg = c.header.at("config");
  LoadedIrm out;
  out.net.config.input_dim = cfg.at("input_dim").get<std::size_t>();
  const auto hidden = cfg.at("hidden_dims").get<std::vector<std::size_t>>();
  if (hidden.size() != out.net.config.hidden_dims.size()) {
    throw IoError(path.string() + ": expected 4 hidden dims");
  }
  for (std::size_t i = 0; i < hidden.size(); ++i) out.net.config.hidden_dims[i] = hidden[i];
  out.net.config.plan.blocks = cfg.at("plan").get<std::vector<std::size_t>>();
  out.host_payload_hash = cfg.at("host_ckpt_hash").get<std::string>();
  if (!expected_host_hash.empty() && expected_host_hash != out.host_payload_hash) {
    throw ConfigError(path.string() + ": IRM was trained against host " +
                      out.host_payload_hash.substr(0, 12) + "..., but the supplied host is " +
                      expected_host_hash.substr(0, 12) + "...");
  }
  out.net.weights.resize(5);
  out.net.biases.resize(5);
  for (auto& [name, t] : out.net.named_parameters()) {
    *t = read_tensor(c, find_tensor_entry(c.header, name, path), path);
    t->requires_grad = true;
  }
  out.net.config.validate();
  if (out.net.weights[4].rows() != out.net.config.output_dim()) {
    throw IoError(path.string() + ": output layer disagrees with plan size");
  }
  return out;
}

std::string checkpoint_payload_hash(const std::filesystem::path& path) {
  Container c = read_container(path);
  std::size_t first = c.bytes.size();
  for (const json& e : c.header.at("tensors")) {
    first = std::min(first, e.at("offset").get<std::size_t>());
  }
  return sha256_hex(c.bytes.data() + first, c.bytes.size() - first);
}

}  // namespace irmlab
