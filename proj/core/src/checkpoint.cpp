#include "dpmusic/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "dpmusic/error.hpp"
#include "dpmusic/midi_io.hpp"
#include "json.hpp"

namespace dpmusic {

namespace {

constexpr char kMagic[8] = {'D', 'P', 'C', 'K', 'P', 'T', '0', '1'};

using nlohmann::json;

json config_json(const ModelConfig& cfg) {
  const auto& q = cfg.vocab.quantization();
  return json{
      {"layers", cfg.layers},
      {"heads", cfg.heads},
      {"d_model", cfg.d_model},
      {"d_ff", cfg.d_ff},
      {"dropout", cfg.dropout},
      {"max_steps", cfg.max_steps},
      {"tie_embeddings", cfg.tie_embeddings},
      {"delays", cfg.schedule.delays},
      {"vocab",
       {{"resolution", q.resolution},
        {"max_beat", q.max_beat},
        {"max_duration", q.max_duration},
        {"num_instruments", cfg.vocab.num_instruments()}}},
  };
}

ModelConfig config_from(const json& j) {
  ModelConfig cfg;
  cfg.layers = j.at("layers").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.max_steps = j.at("max_steps").get<int>();
  cfg.tie_embeddings = j.value("tie_embeddings", false);
  cfg.schedule.delays = j.at("delays").get<std::array<int, kNumFields>>();
  const auto& v = j.at("vocab");
  QuantizationConfig q;
  q.resolution = v.at("resolution").get<int>();
  q.max_beat = v.at("max_beat").get<int>();
  q.max_duration = v.at("max_duration").get<int>();
  cfg.vocab = FieldVocabulary(q, v.at("num_instruments").get<int>());
  cfg.validate();
  return cfg;
}

void put_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64le(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_json(cfg).dump(2); }

ModelConfig model_config_from_json(std::string_view text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadFormat, std::string("model config: ") + e.what());
  }
}

std::vector<std::uint8_t> checkpoint_to_bytes(const Model& model) {
  json tensors = json::array();
  std::vector<std::uint8_t> payload;
  model.params().visit([&](const std::string& name, const Matrix& m) {
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", payload.size()}});
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i]));
      for (int b = 0; b < 4; ++b) payload.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  });
  const json header{{"config", config_json(model.config())}, {"dtype", "f32le"}, {"tensors", tensors}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u64le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Model checkpoint_from_bytes(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw Error(ErrorCode::kBadFormat, "not a checkpoint (bad magic)");
  }
  const std::uint64_t header_len = get_u64le(bytes, 8);
  if (header_len > bytes.size() - 16) throw Error(ErrorCode::kBadFormat, "checkpoint header truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBadFormat, std::string("checkpoint header: ") + e.what());
  }
  if (header.value("dtype", "") != "f32le") throw Error(ErrorCode::kBadFormat, "unsupported dtype");
  Model model(config_from(header.at("config")));
  const auto payload = bytes.subspan(16 + header_len);

  std::map<std::string, json> index;
  for (const auto& t : header.at("tensors")) index[t.at("name").get<std::string>()] = t;
  model.params().visit([&](const std::string& name, Matrix& m) {
    const auto it = index.find(name);
    if (it == index.end()) throw Error(ErrorCode::kCheckpointMismatch, "missing tensor " + name);
    const auto shape = it->second.at("shape").get<std::array<Eigen::Index, 2>>();
    if (shape[0] != m.rows() || shape[1] != m.cols()) {
      throw Error(ErrorCode::kCheckpointMismatch, "shape mismatch for " + name);
    }
    const auto offset = it->second.at("offset").get<std::size_t>();
    if (offset + static_cast<std::size_t>(m.size()) * 4 > payload.size()) {
      throw Error(ErrorCode::kBadFormat, "tensor " + name + " runs past end of file");
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[offset + i * 4 + b]) << (8 * b);
      m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
  });
  return model;
}

void save_checkpoint(const std::string& path, const Model& model) {
  write_file_bytes(path, checkpoint_to_bytes(model));
}

Model load_checkpoint(const std::string& path) { return checkpoint_from_bytes(read_file_bytes(path)); }

}  // namespace dpmusic
