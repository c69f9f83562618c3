#include "densemp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace densemp {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void save_checkpoint(const std::filesystem::path& path, const Encoder& encoder, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["format"] = "densemp-checkpoint";
  header["version"] = 1;
  header["encoder_config"] = encoder.config();
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  std::vector<float> payload;
  for (const auto& [name, t] : encoder.parameters()) {
    header["tensors"].push_back(
        {{"name", name}, {"shape", t.shape}, {"offset", payload.size() * sizeof(float)}, {"count", t.size()}});
    for (double v : t.data) payload.push_back(static_cast<float>(v));
  }
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError(path.string() + " is not a densemp checkpoint");
  if (len > (1u << 28)) throw IoError(path.string() + ": implausible header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": bad checkpoint header: " + e.what());
  }
  if (header.value("format", "") != "densemp-checkpoint" || header.value("version", 0) != 1)
    throw IoError(path.string() + ": unsupported checkpoint format");
  std::vector<char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  ck.config = header.at("encoder_config").get<EncoderConfig>();
  ck.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& entry : header.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (count != ad::shape_size(shape) || offset + count * sizeof(float) > payload.size())
      throw IoError(path.string() + ": tensor '" + entry.at("name").get<std::string>() + "' out of bounds");
    std::vector<float> raw(count);
    std::memcpy(raw.data(), payload.data() + offset, count * sizeof(float));
    ad::Tensor t(shape);
    for (std::size_t i = 0; i < count; ++i) t.data[i] = raw[i];
    ck.params[entry.at("name").get<std::string>()] = std::move(t);
  }
  return ck;
}

Encoder load_encoder(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  return Encoder(ck.config, std::move(ck.params));
}

ParameterSet round_to_float32(const ParameterSet& params) {
  ParameterSet out = params;
  for (auto& [_, t] : out)
    for (auto& v : t.data) v = static_cast<float>(v);
  return out;
}

}  // namespace densemp
