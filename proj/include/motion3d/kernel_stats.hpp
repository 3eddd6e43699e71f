#pragma once

// Process-wide invocation counters for the heavy kernels. The benchmark uses
// them to show which stages an inference path actually executes.

#include <array>
#include <atomic>
#include <cstdint>

namespace motion3d {

enum class Kernel : std::size_t {
  Conv3d = 0,
  Deconv3d,
  MaxPool3d,
  Linear,
  FlowTarget,  // ground-truth flow rasterised or imported
  Count_
};

struct KernelCounts {
  std::uint64_t conv3d = 0;
  std::uint64_t deconv3d = 0;
  std::uint64_t maxpool3d = 0;
  std::uint64_t linear = 0;
  std::uint64_t flow_target = 0;

  /// Network kernels only; flow-target work is tracked separately.
  std::uint64_t network_total() const { return conv3d + deconv3d + maxpool3d + linear; }

  KernelCounts operator-(const KernelCounts& o) const {
    return {conv3d - o.conv3d, deconv3d - o.deconv3d, maxpool3d - o.maxpool3d,
            linear - o.linear, flow_target - o.flow_target};
  }
};

namespace detail {
inline std::array<std::atomic<std::uint64_t>, static_cast<std::size_t>(Kernel::Count_)>
    g_kernel_counts{};
}  // namespace detail

inline void count_kernel(Kernel k) {
  detail::g_kernel_counts[static_cast<std::size_t>(k)].fetch_add(1, std::memory_order_relaxed);
}

inline KernelCounts kernel_counts() {
  auto get = [](Kernel k) {
    return detail::g_kernel_counts[static_cast<std::size_t>(k)].load(std::memory_order_relaxed);
  };
  return {get(Kernel::Conv3d), get(Kernel::Deconv3d), get(Kernel::MaxPool3d), get(Kernel::Linear),
          get(Kernel::FlowTarget)};
}

}  // namespace motion3d
