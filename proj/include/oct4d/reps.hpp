#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "oct4d/architectures.hpp"
#include "oct4d/phantom.hpp"
#include "oct4d/tensor.hpp"

namespace oct4d {

// Per-column surface depth in raw voxel indices [0, raw_depth - 1].
struct DepthMap {
  int height = 0;
  int width = 0;
  int raw_depth = 0;
  std::vector<std::int32_t> values;  // row-major [h, w]

  std::int32_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

// Argmax over depth per column; ties go to the smallest index.
DepthMap project_depth(const float* volume, int height, int width, int raw_depth);
DepthMap project_depth(const Tensor<float>& volume);  // [h, w, raw_depth]

// One-hot column occupancy [h, w, d_out]: voxel (y, x, round(k (d_out-1) / (raw_depth-1))) = 1.
Tensor<float> reproject_pseudo(const DepthMap& dm, int d_out);
// Exact integer round-half-up of depth * (d_out - 1) / (raw_depth - 1).
std::int32_t rescale_depth(std::int32_t depth, int raw_depth, int d_out);

// Depth resampling of every column from raw_depth to d_out by averaging the
// raw voxels each output voxel covers (linear weights at partial overlaps).
std::vector<float> downsample_depth(const float* volume, int height, int width, int raw_depth, int d_out);

// Input frame for a representation: a [h, w, d] volume (4d-st, 3d-s), a
// [h, w, d] pseudo volume (ps-4d-st) or a [h, w] depth map scaled to [0, 1]
// (3d-st, 2d-s).
std::vector<float> encode_frame(const float* raw, const RenderConfig& render, Representation rep, int d_out);
Shape frame_shape(const RenderConfig& render, Representation rep, int d_out);

// Window i covers frames [i, i + p) and is labelled by frame i + p - 1 + f.
struct Sample {
  std::size_t start = 0;
  std::size_t label = 0;
};

// Number of windows: len - (p - 1) - f. Throws if the series is shorter than p + f.
std::size_t window_count(std::size_t len, int p, int f);
std::vector<Sample> window(std::size_t len, int p, int f);

// Encoded frames and labels of one experiment.
struct ExperimentFrames {
  std::uint32_t id = 0;
  Split split = Split::train;
  std::vector<float> frames;  // n x frame_size
  std::vector<float> labels;  // n
};

ExperimentFrames encode_experiment(const Experiment& e, const RenderConfig& render, Representation rep, int d_out);

struct WindowRef {
  std::uint32_t experiment = 0;  // index into WindowedData::experiments
  Sample sample;
};

// Windowed view of a dataset for one model configuration. Windows never
// cross experiment boundaries.
class WindowedData {
 public:
  WindowedData(const ModelConfig& cfg, const RenderConfig& render);

  void add(ExperimentFrames frames);
  // Same encoded frames windowed for another history / horizon. The frames
  // are shared, not copied; representation and depth must match.
  WindowedData rewindow(const ModelConfig& cfg) const;

  const std::vector<WindowRef>& windows(Split s) const { return windows_[static_cast<std::size_t>(s)]; }
  const std::vector<ExperimentFrames>& experiments() const { return *experiments_; }
  const Shape& frame_shape() const { return frame_shape_; }
  int window_length() const { return window_; }

  // Network input [b, p, ...frame] (temporal) or [b, ...frame], channel axis appended.
  template <typename T>
  Tensor<T> inputs(std::span<const WindowRef> refs) const;
  Tensor<double> labels(std::span<const WindowRef> refs) const;  // [b, 1], raw mN

 private:
  ModelConfig cfg_;
  Shape frame_shape_;
  std::int64_t frame_size_ = 0;
  int window_ = 1;
  std::shared_ptr<std::vector<ExperimentFrames>> experiments_;
  std::vector<WindowRef> windows_[3];

  void index(std::uint32_t experiment);
};

// Encodes every experiment of a dataset for `cfg`.
WindowedData build_windows(const Dataset& d, const ModelConfig& cfg);
// Same, streaming experiments from a dataset file so raw volumes are
// dropped as soon as they are encoded.
WindowedData load_windows(const std::filesystem::path& path, const ModelConfig& cfg);

}  // namespace oct4d
