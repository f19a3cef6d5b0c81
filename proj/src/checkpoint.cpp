#include "cstvsr/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

namespace cstvsr {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::array<char, 8> kMagic{'C', 'S', 'T', 'V', 'S', 'R', 'C', 'K'};

std::vector<std::pair<std::string, torch::Tensor>> named_tensors(const torch::nn::Module& net) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : net.named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : net.named_buffers(true)) out.emplace_back(b.key(), b.value());
  return out;
}

}  // namespace

std::string checkpoint_segment(const std::string& parameter_name) {
  const auto head = parameter_name.substr(0, parameter_name.find('.'));
  if (head == "extractor" || head == "propagator") return "propagation";
  if (head == "temporal") return "temporal";
  if (head == "upsampler") return "upsampler";
  if (head == "flow") return "flow";
  throw std::invalid_argument("checkpoint: parameter outside known segments: " + parameter_name);
}

void save_checkpoint(const std::filesystem::path& path, const CstvsrNet& net, int64_t iteration,
                     const nlohmann::json& extra) {
  nlohmann::json manifest;
  manifest["format"] = "cstvsr-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["iteration"] = iteration;
  manifest["config"] = net->config().to_json();
  manifest["extra"] = extra;
  nlohmann::json segments = nlohmann::json::object();

  std::vector<torch::Tensor> blobs;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : named_tensors(*net)) {
    auto data = tensor.detach().to(torch::kFloat32).contiguous();
    const uint64_t nbytes = static_cast<uint64_t>(data.numel()) * sizeof(float);
    segments[checkpoint_segment(name)].push_back(
        {{"name", name}, {"shape", tensor.sizes().vec()}, {"dtype", "float32"}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
    blobs.push_back(std::move(data));
  }
  manifest["segments"] = segments;
  manifest["data_bytes"] = offset;

  const std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kMagic.data(), kMagic.size());
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& blob : blobs) {
    out.write(static_cast<const char*>(blob.data_ptr()), static_cast<std::streamsize>(blob.numel() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed while writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error(path.string() + " is not a checkpoint archive");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (uint64_t{1} << 32)) throw std::runtime_error("corrupt checkpoint header in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint manifest in " + path.string());
  const auto manifest = nlohmann::json::parse(text);
  if (manifest.value("format", "") != "cstvsr-checkpoint" || manifest.value("version", -1) != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  }
  const auto data_start = in.tellg();

  Checkpoint ck;
  ck.config = ModelConfig::from_json(manifest.at("config"));
  ck.iteration = manifest.value("iteration", int64_t{0});
  ck.extra = manifest.value("extra", nlohmann::json::object());
  ck.net = CstvsrNet(ck.config);

  std::map<std::string, nlohmann::json> entries;
  for (const auto& [segment, list] : manifest.at("segments").items()) {
    for (const auto& entry : list) {
      const auto name = entry.at("name").get<std::string>();
      if (checkpoint_segment(name) != segment) {
        throw std::runtime_error("checkpoint entry " + name + " filed under wrong segment " + segment);
      }
      entries[name] = entry;
    }
  }
  const auto tensors = named_tensors(*ck.net);
  if (tensors.size() != entries.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                             std::to_string(tensors.size()));
  }
  torch::NoGradGuard no_grad;
  for (const auto& [name, tensor] : tensors) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("checkpoint is missing tensor " + name);
    const auto shape = it->second.at("shape").get<std::vector<int64_t>>();
    if (shape != tensor.sizes().vec()) throw std::runtime_error("shape mismatch for " + name);
    const auto nbytes = it->second.at("nbytes").get<uint64_t>();
    if (nbytes != static_cast<uint64_t>(tensor.numel()) * sizeof(float)) {
      throw std::runtime_error("byte count mismatch for " + name);
    }
    auto buffer = torch::empty(tensor.sizes(), torch::kFloat32);
    in.seekg(data_start + static_cast<std::streamoff>(it->second.at("offset").get<uint64_t>()));
    in.read(static_cast<char*>(buffer.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw std::runtime_error("truncated data for " + name + " in " + path.string());
    tensor.copy_(buffer);
  }
  return ck;
}

}  // namespace cstvsr
