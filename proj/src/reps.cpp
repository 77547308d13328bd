#include "oct4d/reps.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oct4d {

DepthMap project_depth(const float* volume, int height, int width, int raw_depth) {
  if (height < 1 || width < 1 || raw_depth < 1) throw std::invalid_argument("empty volume");
  DepthMap dm{height, width, raw_depth, std::vector<std::int32_t>(static_cast<std::size_t>(height) * width)};
  for (std::size_t col = 0; col < dm.values.size(); ++col) {
    const float* v = volume + col * static_cast<std::size_t>(raw_depth);
    // max_element returns the first maximum, which is the surface-first tie rule.
    dm.values[col] = static_cast<std::int32_t>(std::max_element(v, v + raw_depth) - v);
  }
  return dm;
}

DepthMap project_depth(const Tensor<float>& volume) {
  if (volume.rank() != 3) throw std::invalid_argument("project_depth expects [h, w, d], got " + shape_str(volume.shape()));
  return project_depth(volume.ptr(), static_cast<int>(volume.dim(0)), static_cast<int>(volume.dim(1)),
                       static_cast<int>(volume.dim(2)));
}

std::int32_t rescale_depth(std::int32_t depth, int raw_depth, int d_out) {
  if (raw_depth <= 1) return 0;
  const std::int64_t num = std::int64_t{depth} * (d_out - 1);
  const std::int64_t den = raw_depth - 1;
  return static_cast<std::int32_t>((2 * num + den) / (2 * den));
}

Tensor<float> reproject_pseudo(const DepthMap& dm, int d_out) {
  if (d_out < 1) throw std::invalid_argument("reproject_pseudo needs d_out >= 1");
  Tensor<float> out(Shape{dm.height, dm.width, d_out});
  for (std::size_t col = 0; col < dm.values.size(); ++col) {
    const std::int32_t k = dm.values[col];
    if (k < 0 || k >= dm.raw_depth) throw std::invalid_argument("depth map entry outside [0, raw_depth)");
    out[static_cast<std::int64_t>(col) * d_out + rescale_depth(k, dm.raw_depth, d_out)] = 1.0f;
  }
  return out;
}

std::vector<float> downsample_depth(const float* volume, int height, int width, int raw_depth, int d_out) {
  if (d_out < 1 || raw_depth < 1) throw std::invalid_argument("bad depth extents");
  const auto cols = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  std::vector<float> out(cols * static_cast<std::size_t>(d_out));
  const double ratio = static_cast<double>(raw_depth) / d_out;
  for (std::size_t col = 0; col < cols; ++col) {
    const float* v = volume + col * static_cast<std::size_t>(raw_depth);
    for (int j = 0; j < d_out; ++j) {
      const double lo = j * ratio;
      const double hi = (j + 1) * ratio;
      double acc = 0.0;
      for (auto z = static_cast<int>(std::floor(lo)); z < std::min(raw_depth, static_cast<int>(std::ceil(hi))); ++z) {
        const double overlap = std::min<double>(hi, z + 1) - std::max<double>(lo, z);
        acc += overlap * v[z];
      }
      out[col * static_cast<std::size_t>(d_out) + static_cast<std::size_t>(j)] = static_cast<float>(acc / ratio);
    }
  }
  return out;
}

Shape frame_shape(const RenderConfig& render, Representation rep, int d_out) {
  if (is_volumetric(rep)) return {render.height, render.width, d_out};
  return {render.height, render.width};
}

std::vector<float> encode_frame(const float* raw, const RenderConfig& render, Representation rep, int d_out) {
  const int h = render.height;
  const int w = render.width;
  const int d = render.raw_depth;
  switch (rep) {
    case Representation::st4d:
    case Representation::s3d:
      return downsample_depth(raw, h, w, d, d_out);
    case Representation::ps_st4d:
      return std::move(reproject_pseudo(project_depth(raw, h, w, d), d_out).storage());
    case Representation::st3d:
    case Representation::s2d: {
      const DepthMap dm = project_depth(raw, h, w, d);
      std::vector<float> out(dm.values.size());
      const float scale = d > 1 ? 1.0f / static_cast<float>(d - 1) : 0.0f;
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(dm.values[i]) * scale;
      return out;
    }
  }
  throw std::invalid_argument("unknown representation");
}

std::size_t window_count(std::size_t len, int p, int f) {
  if (p < 1 || f < 0) throw std::invalid_argument("window needs p >= 1 and f >= 0");
  const auto need = static_cast<std::size_t>(p + f);
  if (len < need) {
    throw std::invalid_argument("series of length " + std::to_string(len) + " is shorter than p + f = " +
                                std::to_string(need));
  }
  return len - static_cast<std::size_t>(p - 1) - static_cast<std::size_t>(f);
}

std::vector<Sample> window(std::size_t len, int p, int f) {
  const std::size_t n = window_count(len, p, f);
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = {i, i + static_cast<std::size_t>(p - 1 + f)};
  return out;
}

ExperimentFrames encode_experiment(const Experiment& e, const RenderConfig& render, Representation rep, int d_out) {
  ExperimentFrames out;
  out.id = e.meta.id;
  out.split = e.meta.split;
  out.labels = e.forces;
  const std::int64_t voxels = render.voxels();
  const std::int64_t frame = numel(oct4d::frame_shape(render, rep, d_out));
  out.frames.reserve(static_cast<std::size_t>(frame) * e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    const auto f = encode_frame(e.volume(i, voxels), render, rep, d_out);
    out.frames.insert(out.frames.end(), f.begin(), f.end());
  }
  return out;
}

WindowedData::WindowedData(const ModelConfig& cfg, const RenderConfig& render)
    : cfg_(cfg),
      frame_shape_(oct4d::frame_shape(render, cfg.representation, cfg.depth)),
      window_(cfg.window()),
      experiments_(std::make_shared<std::vector<ExperimentFrames>>()) {
  frame_size_ = numel(frame_shape_);
  if (render.height != cfg.height || render.width != cfg.width) {
    throw std::invalid_argument("model input " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                                " does not match dataset frames " + std::to_string(render.height) + "x" +
                                std::to_string(render.width));
  }
}

void WindowedData::add(ExperimentFrames frames) {
  if (frames.frames.size() != frames.labels.size() * static_cast<std::size_t>(frame_size_)) {
    throw std::invalid_argument("experiment frames do not match the frame shape");
  }
  if (experiments_.use_count() > 1) throw std::logic_error("cannot add experiments to shared frames");
  experiments_->push_back(std::move(frames));
  index(static_cast<std::uint32_t>(experiments_->size() - 1));
}

void WindowedData::index(std::uint32_t experiment) {
  const ExperimentFrames& e = (*experiments_)[experiment];
  for (const Sample& s : window(e.labels.size(), window_, cfg_.horizon)) {
    windows_[static_cast<std::size_t>(e.split)].push_back({experiment, s});
  }
}

WindowedData WindowedData::rewindow(const ModelConfig& cfg) const {
  if (cfg.representation != cfg_.representation || cfg.depth != cfg_.depth || cfg.height != cfg_.height ||
      cfg.width != cfg_.width) {
    throw std::invalid_argument("rewindow needs the same representation and frame size");
  }
  WindowedData out(*this);
  out.cfg_ = cfg;
  out.window_ = cfg.window();
  for (auto& w : out.windows_) w.clear();
  for (std::uint32_t i = 0; i < experiments_->size(); ++i) out.index(i);
  return out;
}

template <typename T>
Tensor<T> WindowedData::inputs(std::span<const WindowRef> refs) const {
  Shape shape{static_cast<std::int64_t>(refs.size())};
  if (is_temporal(cfg_.representation)) shape.push_back(window_);
  shape.insert(shape.end(), frame_shape_.begin(), frame_shape_.end());
  shape.push_back(1);
  Tensor<T> out(shape);
  T* dst = out.ptr();
  const auto block = static_cast<std::size_t>(frame_size_) * static_cast<std::size_t>(window_);
  for (const WindowRef& r : refs) {
    const auto& e = experiments_->at(r.experiment);
    const float* src = e.frames.data() + r.sample.start * static_cast<std::size_t>(frame_size_);
    std::copy(src, src + block, dst);
    dst += block;
  }
  return out;
}

Tensor<double> WindowedData::labels(std::span<const WindowRef> refs) const {
  Tensor<double> out(Shape{static_cast<std::int64_t>(refs.size()), 1});
  for (std::size_t i = 0; i < refs.size(); ++i) {
    out[static_cast<std::int64_t>(i)] = experiments_->at(refs[i].experiment).labels.at(refs[i].sample.label);
  }
  return out;
}

WindowedData build_windows(const Dataset& d, const ModelConfig& cfg) {
  WindowedData w(cfg, d.config.render);
  for (const auto& e : d.experiments) w.add(encode_experiment(e, d.config.render, cfg.representation, cfg.depth));
  return w;
}

WindowedData load_windows(const std::filesystem::path& path, const ModelConfig& cfg) {
  DatasetReader reader(path);
  WindowedData w(cfg, reader.config().render);
  Experiment e;
  while (reader.next(e)) w.add(encode_experiment(e, reader.config().render, cfg.representation, cfg.depth));
  return w;
}

template Tensor<float> WindowedData::inputs(std::span<const WindowRef>) const;
template Tensor<double> WindowedData::inputs(std::span<const WindowRef>) const;

}  // namespace oct4d
