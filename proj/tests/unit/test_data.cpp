#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "motion3d/data.hpp"

using namespace motion3d;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("motion3d_data_" + name);
  fs::remove_all(p);
  return p;
}

SynthConfig small_config() {
  SynthConfig c;
  c.clips_per_class = 4;
  return c;
}

// Pixels of frame t that belong to the moving shape (non-zero flow).
std::vector<std::pair<Index, Index>> support(const VideoSample<float>& s, Index t) {
  std::vector<std::pair<Index, Index>> out;
  for (Index y = 0; y < s.frames.dim(2); ++y)
    for (Index x = 0; x < s.frames.dim(3); ++x)
      if (s.flow.at(0, t, y, x) != 0.0f || s.flow.at(1, t, y, x) != 0.0f) out.emplace_back(y, x);
  return out;
}

}  // namespace

TEST(Synth, DefaultSplitSizes) {
  const Dataset ds = gen_synthetic(SynthConfig{});
  EXPECT_EQ(ds.train.size(), 64u);
  EXPECT_EQ(ds.test.size(), 24u);
  int per_class[4] = {};
  for (const auto& s : ds.train) ++per_class[s.label];
  for (int k : per_class) EXPECT_EQ(k, 16);
}

TEST(Synth, ClassZeroMovesRight) {
  const Dataset ds = gen_synthetic(small_config());
  const auto& s = ds.train.front();
  ASSERT_EQ(s.label, 0);
  ASSERT_EQ(s.flow.shape(), (Shape{2, 7, 32, 32}));
  Index inside = 0;
  for (Index t = 0; t < 7; ++t)
    for (Index y = 0; y < 32; ++y)
      for (Index x = 0; x < 32; ++x) {
        const float u = s.flow.at(0, t, y, x), v = s.flow.at(1, t, y, x);
        if (u != 0.0f || v != 0.0f) {
          EXPECT_EQ(u, 1.0f);
          EXPECT_EQ(v, 0.0f);
          ++inside;
        }
      }
  EXPECT_GE(inside, 7 * 140);  // smallest shape is a disc of diameter 14
}

TEST(Synth, FourDirections) {
  const auto progs = small_config().motion_programs();
  ASSERT_EQ(progs.size(), 4u);
  const std::pair<double, double> want[] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(SynthConfig::displacement(progs[k]), want[k]) << k;
}

TEST(Synth, SpeedZeroGivesZeroFlow) {
  SynthConfig c = small_config();
  c.num_classes = 2;
  c.programs = {{0, 0}, {0, 1}};
  const Dataset ds = gen_synthetic(c);
  for (const auto& s : ds.train) {
    if (s.label != 0) continue;
    for (float v : s.flow.data()) ASSERT_EQ(v, 0.0f);
  }
}

// Frame t+1 on the shape equals frame t shifted by the flow vector.
TEST(Synth, WarpOracle) {
  const Dataset ds = gen_synthetic(small_config());
  for (const auto& s : ds.train) {
    for (Index t = 0; t + 1 < s.frames.dim(1); ++t) {
      for (auto [y, x] : support(s, t)) {
        const Index dx = std::lround(s.flow.at(0, t, y, x)), dy = std::lround(s.flow.at(1, t, y, x));
        for (Index c = 0; c < 3; ++c) {
          ASSERT_EQ(s.frames.at(c, t + 1, y + dy, x + dx), s.frames.at(c, t, y, x))
              << "label " << s.label << " t " << t << " (" << y << "," << x << ")";
        }
      }
    }
  }
}

TEST(Synth, FramesInUnitRangeAndFlowBounded) {
  const Dataset ds = gen_synthetic(small_config());
  for (const auto& s : ds.train) {
    for (float v : s.frames.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    for (Index i = 0; i < s.flow.numel() / 2; ++i) {
      ASSERT_LE(std::hypot(s.flow[i], s.flow[s.flow.numel() / 2 + i]), 1.0 + 1e-6);
    }
  }
}

TEST(Synth, Deterministic) {
  const Dataset a = gen_synthetic(small_config()), b = gen_synthetic(small_config());
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].frames, b.train[i].frames);
    EXPECT_EQ(a.train[i].flow, b.train[i].flow);
  }
  SynthConfig c = small_config();
  c.seed = 7;
  EXPECT_FALSE(gen_synthetic(c).train[0].frames == a.train[0].frames);
}

TEST(Synth, TooFastIsRejected) {
  SynthConfig c = small_config();
  c.speed = 4;  // 4 px/frame x 7 steps leaves no room for a 14px shape in 32px
  EXPECT_THROW(gen_synthetic(c), SpecError);
}

TEST(Synth, DuplicateProgramsRejected) {
  SynthConfig c = small_config();
  c.num_classes = 2;
  c.programs = {{0, 1}, {360, 1}};
  EXPECT_THROW(c.validate(), SpecError);
}

// Per-class pixel statistics match: a clip's mean intensity says nothing
// about its label.
TEST(Synth, AppearanceIndependentOfLabel) {
  SynthConfig c;
  c.clips_per_class = 60;
  c.train_fraction = 1.0;
  const Dataset ds = gen_synthetic(c);
  std::vector<std::vector<double>> means(4);
  for (const auto& s : ds.train) {
    double m = 0;
    for (float v : s.frames.data()) m += v;
    means[static_cast<std::size_t>(s.label)].push_back(m / static_cast<double>(s.frames.numel()));
  }
  double pooled_var = 0, grand = 0;
  std::vector<double> class_mean(4);
  for (std::size_t k = 0; k < 4; ++k) {
    double mu = 0;
    for (double v : means[k]) mu += v;
    mu /= static_cast<double>(means[k].size());
    class_mean[k] = mu;
    grand += mu / 4;
    for (double v : means[k]) pooled_var += (v - mu) * (v - mu);
  }
  pooled_var /= static_cast<double>(ds.train.size() - 4);
  const double se = std::sqrt(pooled_var / 60.0);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_LT(std::abs(class_mean[k] - grand), 4 * se) << "class " << k;
}

TEST(SampleIo, RoundTripBitwise) {
  const fs::path dir = scratch("roundtrip");
  const Dataset ds = gen_synthetic(small_config());
  save_sample(dir / "clip", ds.train[3]);
  const VideoSample<float> back = load_sample(dir / "clip");
  EXPECT_EQ(back.frames, ds.train[3].frames);
  EXPECT_EQ(back.flow, ds.train[3].flow);
  EXPECT_EQ(back.label, ds.train[3].label);
  fs::remove_all(dir);
}

TEST(SampleIo, TruncatedFileIsFormatError) {
  const fs::path dir = scratch("truncated");
  const Dataset ds = gen_synthetic(small_config());
  save_sample(dir / "clip", ds.train[0]);
  const fs::path vxt = dir / "clip.vxt";
  fs::resize_file(vxt, fs::file_size(vxt) - 10);
  EXPECT_THROW(load_sample(dir / "clip"), FormatError);
  fs::resize_file(vxt, 6);
  EXPECT_THROW(load_sample(dir / "clip"), FormatError);
  fs::remove_all(dir);
}

TEST(SampleIo, CorruptMagicIsFormatError) {
  std::stringstream ss;
  write_tensor(ss, Tensor<float>(Shape{2, 2}, 1.0f));
  std::string bytes = ss.str();
  bytes[0] = 'X';
  std::stringstream bad(bytes);
  EXPECT_THROW(read_tensor<float>(bad), FormatError);

  std::stringstream fs_;
  write_flow(fs_, Tensor<float>(Shape{2, 1, 2, 2}));
  std::string fb = fs_.str() + "extra";
  std::stringstream trailing(fb);
  EXPECT_THROW(read_flow<float>(trailing), FormatError);
}

TEST(SampleIo, FlowFileLayout) {
  Tensor<float> flow(Shape{2, 1, 1, 2});
  flow[0] = 1.5f;   // u(0,0)
  flow[1] = -2.0f;  // u(0,1)
  flow[2] = 0.25f;  // v(0,0)
  flow[3] = 3.0f;   // v(0,1)
  std::stringstream ss;
  write_flow(ss, flow);
  const std::string b = ss.str();
  ASSERT_EQ(b.size(), 4u + 12u + 16u);
  EXPECT_EQ(b.substr(0, 4), "VXF1");
  auto u32 = [&](std::size_t off) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(b[off])) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[off + 1])) << 8;
  };
  EXPECT_EQ(u32(4), 1u);
  EXPECT_EQ(u32(8), 1u);
  EXPECT_EQ(u32(12), 2u);
  float first;
  std::memcpy(&first, b.data() + 16, 4);  // little-endian host
  EXPECT_EQ(first, 1.5f);
}

TEST(DatasetIo, LayoutAndDeterministicOrder) {
  const fs::path root = scratch("layout");
  const Dataset ds = gen_synthetic(small_config());
  save_dataset(root, ds);
  EXPECT_TRUE(fs::exists(root / "train" / "0" / "00000.vxt"));
  EXPECT_TRUE(fs::exists(root / "train" / "3" / "00002.vxf"));
  EXPECT_TRUE(fs::exists(root / "test" / "1" / "00000.lbl"));
  const auto a = load_split(root, "train"), b = load_split(root, "train");
  ASSERT_EQ(a.size(), ds.train.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].frames, b[i].frames);
    EXPECT_EQ(a[i].frames, ds.train[i].frames);  // generation order is class-major, like the tree
  }
  EXPECT_THROW(load_split(root, "val"), FormatError);
  fs::remove_all(root);
}

TEST(ImportFlow, PairingArithmetic) {
  const fs::path root = scratch("import");
  const Dataset ds = gen_synthetic(small_config());
  const VideoSample<float>& s = ds.train[5];
  export_clip(s, root / "frames", root / "flow");
  std::vector<fs::path> flows;
  for (const auto& e : fs::directory_iterator(root / "flow")) flows.push_back(e.path());
  std::sort(flows.begin(), flows.end());
  ASSERT_EQ(flows.size(), 7u);

  const VideoSample<float> back = import_flow(root / "frames", flows, s.label);
  EXPECT_EQ(back.frames, s.frames);
  EXPECT_EQ(back.flow, s.flow);

  std::vector<fs::path> eight = flows;
  eight.push_back(flows.back());
  EXPECT_THROW(import_flow(root / "frames", eight, 0), PairingError);
  flows.pop_back();
  EXPECT_THROW(import_flow(root / "frames", flows, 0), PairingError);
  fs::remove_all(root);
}

TEST(Batching, StacksSamples) {
  const Dataset ds = gen_synthetic(small_config());
  const std::vector<std::size_t> idx{4, 1};
  const Batch<float> b = make_batch<float>(ds.train, idx);
  EXPECT_EQ(b.clips.shape(), (Shape{2, 3, 8, 32, 32}));
  EXPECT_EQ(b.flow.shape(), (Shape{2, 2, 7, 32, 32}));
  EXPECT_EQ(b.labels, (std::vector<int>{ds.train[4].label, ds.train[1].label}));
  EXPECT_EQ(b.clips[3 * 8 * 32 * 32], ds.train[1].frames[0]);
  EXPECT_THROW(make_batch<float>(ds.train, std::vector<std::size_t>{}), ContractError);
}
