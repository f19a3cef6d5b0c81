#include "cstvsr/memory_profiler.hpp"

#include <c10/core/CPUAllocator.h>
#include <c10/core/impl/alloc_cpu.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <mutex>
#include <unordered_map>

#include "cstvsr/inference.hpp"
#include "cstvsr/synthetic.hpp"

namespace cstvsr {
namespace {

std::atomic<int64_t> g_current{0};
std::atomic<int64_t> g_peak{0};

void raise_peak(int64_t value) {
  int64_t seen = g_peak.load();
  while (value > seen && !g_peak.compare_exchange_weak(seen, value)) {
  }
}

std::mutex g_sizes_mutex;
std::unordered_map<void*, int64_t> g_sizes;

void release(void* ptr) {
  int64_t bytes = 0;
  {
    std::lock_guard<std::mutex> lock(g_sizes_mutex);
    auto it = g_sizes.find(ptr);
    if (it != g_sizes.end()) {
      bytes = it->second;
      g_sizes.erase(it);
    }
  }
  g_current.fetch_sub(bytes);
  c10::free_cpu(ptr);
}

// Context equals the data pointer; some kernels rely on that.
class CountingAllocator final : public c10::Allocator {
 public:
  c10::DataPtr allocate(size_t n) override {
    void* data = c10::alloc_cpu(n);
    {
      std::lock_guard<std::mutex> lock(g_sizes_mutex);
      g_sizes[data] = static_cast<int64_t>(n);
    }
    raise_peak(g_current.fetch_add(static_cast<int64_t>(n)) + static_cast<int64_t>(n));
    return {data, data, &release, c10::Device(c10::DeviceType::CPU)};
  }

  c10::DeleterFnPtr raw_deleter() const override { return &release; }

  void copy_data(void* dest, const void* src, std::size_t count) const override {
    std::memcpy(dest, src, count);
  }
};

}  // namespace

void MemoryTracker::install() {
  static std::once_flag once;
  std::call_once(once, [] {
    static CountingAllocator allocator;
    c10::SetCPUAllocator(&allocator, /*priority=*/100);
  });
}

int64_t MemoryTracker::current_bytes() { return g_current.load(); }
int64_t MemoryTracker::peak_bytes() { return g_peak.load(); }
void MemoryTracker::reset_peak() { g_peak.store(g_current.load()); }

PeakMemoryScope::PeakMemoryScope() {
  MemoryTracker::install();
  MemoryTracker::reset_peak();
  baseline_ = MemoryTracker::current_bytes();
}

int64_t PeakMemoryScope::peak_above_baseline() const { return MemoryTracker::peak_bytes() - baseline_; }

nlohmann::json MemoryRecord::to_json() const {
  return {{"frames", frames},
          {"height", height},
          {"width", width},
          {"rate", scale.rate},
          {"scale_h", scale.scale_h},
          {"scale_w", scale.scale_w},
          {"output_frames", output_frames},
          {"peak_bytes", peak_bytes},
          {"peak_mib", static_cast<double>(peak_bytes) / (1024.0 * 1024.0)},
          {"seconds", seconds}};
}

MemoryRecord profile_memory(CstvsrNet& net, const FlowEstimator& estimator, int64_t n, int64_t height,
                            int64_t width, const ScaleSpec& scale, uint64_t seed) {
  MemoryTracker::install();
  SyntheticOptions opts;
  opts.height = height;
  opts.width = width;
  opts.frames = static_cast<int>(n);
  const auto clip = make_synthetic_clip(opts, seed);

  MemoryRecord rec;
  rec.frames = n;
  rec.height = height;
  rec.width = width;
  rec.scale = scale;
  const auto start = std::chrono::steady_clock::now();
  PeakMemoryScope scope;
  stream_inference(clip.sequence, scale, net, estimator, [&](const OutputFrame&) { ++rec.output_frames; });
  rec.peak_bytes = scope.peak_above_baseline();
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

}  // namespace cstvsr
