#include "cdcn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdcn/error.hpp"

namespace cdcn {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'C', 'N', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

nlohmann::json config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["theta"] = cfg.theta;
  j["init_channels"] = cfg.init_channels;
  j["expand_ratio"] = cfg.expand_ratio;
  j["input_size"] = cfg.input_size;
  j["fusion"] = to_string(cfg.fusion);
  j["attention"] = cfg.attention;
  j["modalities"] = nlohmann::json::array();
  for (Modality m : cfg.modalities) j["modalities"].push_back(to_string(m));
  j["score_weights"] = cfg.score_weights;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.theta = j.at("theta").get<float>();
  cfg.init_channels = j.at("init_channels").get<int>();
  cfg.expand_ratio = j.at("expand_ratio").get<float>();
  cfg.input_size = j.at("input_size").get<int>();
  cfg.fusion = parse_fusion(j.at("fusion").get<std::string>());
  cfg.attention = j.at("attention").get<bool>();
  cfg.modalities.clear();
  for (const auto& m : j.at("modalities"))
    cfg.modalities.push_back(parse_modality(m.get<std::string>()));
  cfg.score_weights = j.at("score_weights").get<std::vector<float>>();
  return cfg;
}

struct TensorEntry {
  std::string name;
  Shape shape;
  int64_t offset = 0;
  int64_t nelem = 0;
};

struct Header {
  ModelConfig config;
  std::vector<TensorEntry> tensors;
};

Header read_header(std::ifstream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw ValueError("not a checkpoint file: " + path);
  uint32_t version = 0;
  uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&header_len), 4);
  if (!in) throw ValueError("truncated checkpoint header: " + path);
  if (version != kVersion)
    throw ValueError("unsupported checkpoint version " +
                     std::to_string(version) + " in " + path);
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), header_len);
  if (!in) throw ValueError("truncated checkpoint header: " + path);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header_text);
  } catch (const std::exception& e) {
    throw ValueError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  Header header;
  try {
    header.config = config_from_json(j.at("config"));
    for (const auto& t : j.at("tensors")) {
      TensorEntry entry;
      entry.name = t.at("name").get<std::string>();
      entry.shape = t.at("shape").get<Shape>();
      entry.offset = t.at("offset").get<int64_t>();
      entry.nelem = t.at("nelem").get<int64_t>();
      header.tensors.push_back(std::move(entry));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw ValueError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  return header;
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model) {
  nlohmann::json header;
  header["config"] = config_to_json(model.config());
  header["tensors"] = nlohmann::json::array();

  std::vector<float> payload;
  auto append = [&](const std::string& name, const Shape& shape,
                    const float* values, int64_t n) {
    nlohmann::json t;
    t["name"] = name;
    t["shape"] = shape;
    t["offset"] = int64_t(payload.size());
    t["nelem"] = n;
    header["tensors"].push_back(t);
    payload.insert(payload.end(), values, values + n);
  };

  for (ParamRefT<float>& p : model.params())
    append(p.name, p.tensor->shape(), p.tensor->data(), p.tensor->numel());
  for (StateRefT<float>& s : model.state())
    append(s.name, Shape{int(s.values->size())}, s.values->data(),
           int64_t(s.values->size()));

  std::string header_text = header.dump();
  uint32_t header_len = uint32_t(header_text.size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(&kVersion), 4);
  out.write(reinterpret_cast<const char*>(&header_len), 4);
  out.write(header_text.data(), header_text.size());
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

ModelConfig read_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  return read_header(in, path).config;
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  Header header = read_header(in, path);

  int64_t payload_elems = 0;
  for (const TensorEntry& t : header.tensors) {
    int64_t prod = 1;
    for (int d : t.shape) prod *= d;
    if (prod != t.nelem)
      throw ValueError("checkpoint tensor '" + t.name +
                       "' has inconsistent shape/nelem in " + path);
    if (t.offset != payload_elems)
      throw ValueError("checkpoint tensor '" + t.name +
                       "' has a non-contiguous offset in " + path);
    payload_elems += t.nelem;
  }
  std::vector<float> payload(static_cast<size_t>(payload_elems));
  in.read(reinterpret_cast<char*>(payload.data()),
          std::streamsize(payload.size() * sizeof(float)));
  if (!in) throw ValueError("truncated checkpoint payload: " + path);

  auto model = std::make_unique<Model>(header.config, /*seed=*/0);

  std::map<std::string, TensorEntry*> directory;
  for (TensorEntry& t : header.tensors) directory[t.name] = &t;

  auto take = [&](const std::string& name) -> TensorEntry* {
    auto it = directory.find(name);
    if (it == directory.end())
      throw ValueError("checkpoint " + path + " is missing tensor '" + name + "'");
    TensorEntry* entry = it->second;
    directory.erase(it);
    return entry;
  };

  for (ParamRefT<float>& p : model->params()) {
    TensorEntry* entry = take(p.name);
    if (entry->shape != p.tensor->shape())
      throw ShapeError("checkpoint tensor '" + p.name +
                       "' shape does not match the rebuilt model");
    std::memcpy(p.tensor->data(), payload.data() + entry->offset,
                size_t(entry->nelem) * sizeof(float));
  }
  for (StateRefT<float>& s : model->state()) {
    TensorEntry* entry = take(s.name);
    if (entry->nelem != int64_t(s.values->size()))
      throw ShapeError("checkpoint buffer '" + s.name +
                       "' size does not match the rebuilt model");
    std::memcpy(s.values->data(), payload.data() + entry->offset,
                size_t(entry->nelem) * sizeof(float));
  }
  if (!directory.empty())
    throw ValueError("checkpoint " + path + " holds unknown tensor '" +
                     directory.begin()->first + "'");
  return model;
}

}  // namespace cdcn
