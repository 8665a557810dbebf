#include "forecast/nets/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <json.hpp>

#include "forecast/errors.hpp"

namespace forecast::nets {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'F', 'C', 'K', 'P', 'T', '0', '0', '1'};

using nlohmann::json;

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  json header;
  header["model"] = json::parse(to_json(checkpoint.model));
  try {
    header["metadata"] = json::parse(checkpoint.metadata);
  } catch (const json::parse_error&) {
    throw DataError("checkpoint metadata is not valid JSON");
  }
  json tensors = json::array();
  std::size_t offset = 0;
  auto describe = [&](const NamedTensors& group, const char* name) {
    for (const auto& [tensor_name, t] : group) {
      tensors.push_back({{"name", tensor_name}, {"group", name}, {"shape", t.shape()}, {"offset", offset}});
      offset += t.size();
    }
  };
  describe(checkpoint.parameters, "parameter");
  describe(checkpoint.optimizer_state, "optimizer");
  header["tensors"] = std::move(tensors);
  header["elements"] = offset;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<float> block;
  block.reserve(offset);
  for (const auto* group : {&checkpoint.parameters, &checkpoint.optimizer_state})
    for (const auto& [name, t] : *group)
      for (double v : t.data()) block.push_back(static_cast<float>(v));
  out.write(reinterpret_cast<const char*>(block.data()), static_cast<std::streamsize>(block.size() * sizeof(float)));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw DataError("not a checkpoint file (bad magic): " + path.string());
  }
  std::uint64_t length = 0;
  if (!in.read(reinterpret_cast<char*>(&length), sizeof(length)) || length > (1ull << 32)) {
    throw DataError("corrupt checkpoint header: " + path.string());
  }
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) throw DataError("truncated checkpoint header");

  Checkpoint cp;
  try {
    const json header = json::parse(text);
    cp.model = model_config_from_json(header.at("model").dump(), ModelConfig{});
    cp.metadata = header.at("metadata").dump();
    const std::size_t elements = header.at("elements").get<std::size_t>();
    std::vector<float> block(elements);
    if (!in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(elements * sizeof(float)))) {
      throw DataError("truncated checkpoint data: " + path.string());
    }
    for (const auto& entry : header.at("tensors")) {
      const Shape shape = entry.at("shape").get<Shape>();
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      Tensor t(shape);
      if (offset + t.size() > elements) throw DataError("checkpoint tensor exceeds data block");
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = block[offset + i];
      auto& group = entry.at("group").get<std::string>() == "optimizer" ? cp.optimizer_state : cp.parameters;
      group.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  return cp;
}

Checkpoint capture(const ForecastModel& model) {
  Checkpoint cp;
  cp.model = model.config();
  for (const auto& p : model.parameters().items()) cp.parameters.emplace_back(p.name(), p.value());
  return cp;
}

void load_parameters(ForecastModel& model, const NamedTensors& parameters) {
  auto& params = model.parameters();
  if (parameters.size() != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(parameters.size()) + " tensors, model has " +
                    std::to_string(params.size()));
  }
  for (const auto& [name, t] : parameters) {
    if (!params.contains(name)) throw DataError("checkpoint tensor '" + name + "' is not a model parameter");
    auto& p = params.get(name);
    if (p.value().shape() != t.shape()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_string(t.shape()) + ", model expects " +
                      shape_string(p.value().shape()));
    }
    p.value() = t;
  }
}

std::unique_ptr<ForecastModel> load_model(const std::filesystem::path& path) {
  const Checkpoint cp = read_checkpoint(path);
  auto model = make_model(cp.model);
  load_parameters(*model, cp.parameters);
  return model;
}

}  // namespace forecast::nets
