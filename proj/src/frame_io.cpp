#include "cstvsr/frame_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <fstream>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <stdexcept>

namespace cstvsr {
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "raw tensor I/O assumes a little-endian host");

bool is_image(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm";
}

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".json"); }

}  // namespace

void FrameSequence::validate() const {
  if (frames.empty()) throw std::invalid_argument("frame sequence is empty");
  if (timestamps.size() != frames.size()) throw std::invalid_argument("one timestamp per frame is required");
  const auto& ref = frames.front();
  for (size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.dim() != 3 || f.size(0) != 3) throw std::invalid_argument("frames must be [3, H, W]");
    if (f.sizes() != ref.sizes()) {
      throw std::invalid_argument("mixed resolutions in " + source_path + " at frame " + std::to_string(i));
    }
    if (i > 0 && !(timestamps[i] > timestamps[i - 1])) {
      throw std::invalid_argument("timestamps must increase strictly");
    }
  }
}

torch::Tensor FrameSequence::stacked() const { return torch::stack(frames, 0); }

std::vector<double> uniform_timestamps(int64_t n) {
  std::vector<double> t(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n && n > 1; ++i) t[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  return t;
}

FrameSequence make_sequence(std::vector<torch::Tensor> frames, std::string source) {
  FrameSequence seq;
  seq.timestamps = uniform_timestamps(static_cast<int64_t>(frames.size()));
  seq.frames = std::move(frames);
  seq.source_path = std::move(source);
  seq.validate();
  return seq;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

torch::Tensor read_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image " + path.string());
  if (bgr.depth() != CV_8U) throw std::runtime_error("not an 8-bit image: " + path.string());
  auto hwc = torch::from_blob(bgr.data, {bgr.rows, bgr.cols, 3}, torch::kUInt8).clone();
  // BGR -> RGB, HWC -> CHW
  return hwc.flip(2).permute({2, 0, 1}).contiguous().to(torch::kFloat32).div_(255.0);
}

void write_image(const fs::path& path, const torch::Tensor& image) {
  auto img = image.dim() == 4 ? image.squeeze(0) : image;
  if (img.dim() != 3 || img.size(0) != 3) throw std::invalid_argument("write_image expects [3, H, W]");
  auto hwc = img.detach()
                 .to(torch::kFloat32)
                 .clamp(0.0, 1.0)
                 .mul(255.0)
                 .round()
                 .to(torch::kUInt8)
                 .flip(0)
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat bgr(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr());
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("cannot write image " + path.string());
}

fs::path frame_filename(int64_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%04lld.png", static_cast<long long>(index));
  return name;
}

void write_sequence(const fs::path& dir, const FrameSequence& seq) {
  fs::create_directories(dir);
  for (int64_t i = 0; i < seq.size(); ++i) write_image(dir / frame_filename(i), seq.frames[i]);
}

void write_raw_tensor(const fs::path& path, const torch::Tensor& tensor) {
  auto data = tensor.detach().to(torch::kFloat32).contiguous();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(static_cast<const char*>(data.data_ptr()), static_cast<std::streamsize>(data.numel() * sizeof(float)));
  nlohmann::json shape;
  const auto sizes = data.sizes();
  if (sizes.size() == 4) {
    shape = {{"n", sizes[0]}, {"c", sizes[1]}, {"h", sizes[2]}, {"w", sizes[3]}};
  } else if (sizes.size() == 3) {
    shape = {{"n", 1}, {"c", sizes[0]}, {"h", sizes[1]}, {"w", sizes[2]}};
  } else {
    throw std::invalid_argument("raw tensors must be 3D or 4D");
  }
  std::ofstream(sidecar(path)) << shape.dump() << "\n";
}

torch::Tensor read_raw_tensor(const fs::path& path) {
  std::ifstream meta(sidecar(path));
  if (!meta) throw std::runtime_error("missing sidecar " + sidecar(path).string());
  nlohmann::json shape;
  try {
    meta >> shape;
  } catch (const std::exception& e) {
    throw std::runtime_error("unreadable sidecar " + sidecar(path).string() + ": " + e.what());
  }
  std::vector<int64_t> sizes;
  for (const char* key : {"n", "c", "h", "w"}) {
    if (!shape.contains(key)) throw std::runtime_error(sidecar(path).string() + " lacks field " + key);
    const auto v = shape.at(key).get<int64_t>();
    if (v <= 0) throw std::runtime_error(sidecar(path).string() + " has non-positive " + key);
    sizes.push_back(v);
  }
  auto tensor = torch::empty(sizes, torch::kFloat32);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  const auto nbytes = static_cast<std::streamsize>(tensor.numel() * sizeof(float));
  in.read(static_cast<char*>(tensor.data_ptr()), nbytes);
  if (in.gcount() != nbytes) throw std::runtime_error("raw tensor " + path.string() + " is shorter than its sidecar");
  return tensor;
}

FrameSequence ingest(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("no such file or directory: " + path.string());
  std::vector<torch::Tensor> frames;
  if (fs::is_directory(path)) {
    const auto files = list_images(path);
    if (files.empty()) throw std::runtime_error("no image files in " + path.string());
    for (const auto& f : files) {
      frames.push_back(read_image(f));
      if (frames.back().sizes() != frames.front().sizes()) {
        throw std::runtime_error("mixed resolutions: " + f.string() + " differs from " + files.front().string());
      }
    }
  } else {
    const auto tensor = read_raw_tensor(path);
    if (tensor.size(1) != 3) throw std::runtime_error(path.string() + ": expected 3 channels");
    if (!torch::isfinite(tensor).all().item<bool>()) throw std::runtime_error(path.string() + " contains non-finite values");
    for (int64_t i = 0; i < tensor.size(0); ++i) frames.push_back(tensor[i].clamp(0.0, 1.0));
  }
  return make_sequence(std::move(frames), path.string());
}

}  // namespace cstvsr
