#include "cstvsr/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cstvsr/degrade.hpp"
#include "cstvsr/frame_io.hpp"
#include "cstvsr/inference.hpp"
#include "cstvsr/losses_metrics.hpp"

namespace cstvsr {
namespace fs = std::filesystem;

namespace {

// Relative name -> image path for every sequence below root.
std::map<std::string, std::vector<fs::path>> sequence_tree(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  std::map<std::string, std::vector<fs::path>> tree;
  auto own = list_images(root);
  if (!own.empty()) tree["."] = std::move(own);
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    auto files = list_images(entry.path());
    if (!files.empty()) tree[fs::relative(entry.path(), root).generic_string()] = std::move(files);
  }
  return tree;
}

// JSON has no infinity; identical images report PSNR as the string "inf".
nlohmann::json db(double v) { return std::isinf(v) ? nlohmann::json(v > 0 ? "inf" : "-inf") : nlohmann::json(v); }

void accumulate(MetricAggregate& agg, const FrameMetric& m) {
  ++agg.count;
  agg.psnr += m.psnr;
  agg.psnr_y += m.psnr_y;
  agg.ssim += m.ssim;
}

void average(MetricAggregate& agg) {
  if (agg.count == 0) return;
  agg.psnr /= static_cast<double>(agg.count);
  agg.psnr_y /= static_cast<double>(agg.count);
  agg.ssim /= static_cast<double>(agg.count);
}

}  // namespace

nlohmann::json FrameMetric::to_json() const {
  return {{"sequence", sequence},
          {"frame_index", frame_index},
          {"kind", existing ? "existing" : "interpolated"},
          {"psnr", db(psnr)},
          {"psnr_y", db(psnr_y)},
          {"ssim", ssim}};
}

nlohmann::json MetricAggregate::to_json() const {
  return {{"count", count}, {"psnr", db(psnr)}, {"psnr_y", db(psnr_y)}, {"ssim", ssim}};
}

void EvalReport::finalize() {
  existing = {};
  interpolated = {};
  overall = {};
  for (const auto& m : frames) {
    accumulate(m.existing ? existing : interpolated, m);
    accumulate(overall, m);
  }
  average(existing);
  average(interpolated);
  average(overall);
}

std::vector<nlohmann::json> EvalReport::json_lines() const {
  std::vector<nlohmann::json> lines;
  for (const auto& m : frames) lines.push_back(m.to_json());
  for (const auto& [kind, agg] : {std::pair{"existing", existing}, {"interpolated", interpolated}, {"all", overall}}) {
    auto j = agg.to_json();
    j["aggregate"] = kind;
    lines.push_back(j);
  }
  return lines;
}

void EvalReport::write_jsonl(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& line : json_lines()) out << line.dump() << '\n';
}

bool is_existing_index(int64_t index, int rate) { return rate <= 1 || index % rate == 0; }

void append_metrics(EvalReport& report, const std::string& sequence, const std::vector<torch::Tensor>& pred,
                    const std::vector<torch::Tensor>& gt, int rate) {
  if (pred.size() != gt.size()) {
    throw std::runtime_error("sequence " + sequence + ": " + std::to_string(pred.size()) + " predicted frames vs " +
                             std::to_string(gt.size()) + " ground-truth frames");
  }
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].sizes() != gt[i].sizes()) {
      throw std::runtime_error("sequence " + sequence + " frame " + std::to_string(i) + ": size mismatch");
    }
    FrameMetric m;
    m.sequence = sequence;
    m.frame_index = static_cast<int64_t>(i);
    m.existing = is_existing_index(m.frame_index, rate);
    m.psnr = psnr(pred[i], gt[i]);
    m.psnr_y = psnr_y(pred[i], gt[i]);
    m.ssim = ssim(pred[i], gt[i]);
    report.frames.push_back(m);
  }
  report.finalize();
}

EvalReport evaluate(const fs::path& pred_root, const fs::path& gt_root, int rate) {
  const auto pred = sequence_tree(pred_root);
  const auto gt = sequence_tree(gt_root);
  std::vector<std::string> missing;
  for (const auto& [name, files] : gt) {
    const auto it = pred.find(name);
    if (it == pred.end()) {
      missing.push_back("prediction lacks sequence " + name);
      continue;
    }
    std::set<std::string> have;
    for (const auto& f : it->second) have.insert(f.filename().string());
    std::set<std::string> want;
    for (const auto& f : files) want.insert(f.filename().string());
    for (const auto& f : want) {
      if (!have.count(f)) missing.push_back("prediction lacks " + name + "/" + f);
    }
    for (const auto& f : have) {
      if (!want.count(f)) missing.push_back("ground truth lacks " + name + "/" + f);
    }
  }
  for (const auto& [name, files] : pred) {
    if (!gt.count(name)) missing.push_back("ground truth lacks sequence " + name);
  }
  if (gt.empty()) missing.push_back("no ground-truth sequences below " + gt_root.string());
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "evaluation trees do not match:";
    for (const auto& m : missing) msg << "\n  " << m;
    throw std::runtime_error(msg.str());
  }

  EvalReport report;
  for (const auto& [name, files] : gt) {
    std::vector<torch::Tensor> p;
    std::vector<torch::Tensor> g;
    const auto& pred_files = pred.at(name);
    for (size_t i = 0; i < files.size(); ++i) {
      g.push_back(read_image(files[i]));
      p.push_back(read_image(pred_files[i]));
    }
    append_metrics(report, name, p, g, rate);
  }
  return report;
}

BenchmarkResult benchmark_against_bicubic(CstvsrNet& net, const FlowEstimator& estimator,
                                          const std::vector<FrameSequence>& hr_clips, const ScaleSpec& scale) {
  BenchmarkResult result;
  for (const auto& hr : hr_clips) {
    const auto clip = degrade_clip(hr, scale);
    const auto pred = run_inference(clip.lr, scale, net, estimator);
    append_metrics(result.model, hr.source_path, pred.frames, clip.targets, scale.rate);
    append_metrics(result.bicubic, hr.source_path, bicubic_baseline(clip.lr, scale), clip.targets, scale.rate);
  }
  return result;
}

}  // namespace cstvsr
