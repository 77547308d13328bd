#include "oct4d/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "oct4d/binio.hpp"
#include "oct4d/random.hpp"

namespace oct4d {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Tissue optics of the synthetic phantom, in raw voxels.
constexpr double kSurfaceWidth = 1.5;
constexpr double kSubsurfaceGap = 2.0;
constexpr double kSubsurfaceGain = 0.3;
constexpr double kSubsurfaceDecay = 12.0;
constexpr double kTextureGain = 0.2;

// Seed streams per experiment.
enum Stream : std::uint64_t { trajectory_stream = 1, pose_stream, roi_stream, noise_stream, stiffness_stream };

}  // namespace

std::string to_string(TrajectoryKind k) { return k == TrajectoryKind::sinusoid ? "sinusoid" : "spline"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "sinusoid") return TrajectoryKind::sinusoid;
  if (s == "spline") return TrajectoryKind::spline;
  throw std::invalid_argument("unknown trajectory kind '" + s + "' (sinusoid|spline)");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

void TrajectoryConfig::validate() const {
  if (!(amplitude_min > 0 && amplitude_max >= amplitude_min)) throw std::invalid_argument("bad amplitude range");
  if (!(frequency_min > 0 && frequency_max >= frequency_min)) throw std::invalid_argument("bad frequency range");
  if (!(offset_max >= offset_min)) throw std::invalid_argument("bad offset range");
  if (!(knot_spacing_min > 0 && knot_spacing_max >= knot_spacing_min)) {
    throw std::invalid_argument("bad knot spacing range");
  }
  if (!(contact_depth >= 0 && contact_depth < max_depth)) throw std::invalid_argument("need 0 <= d0 < d_max");
  if (!(sample_rate > 0)) throw std::invalid_argument("sample rate must be positive");
  if (length < 1) throw std::invalid_argument("experiment length must be >= 1");
}

// ---- trajectories ----------------------------------------------------------------

TrajectoryParams TrajectoryParams::draw(const TrajectoryConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  TrajectoryParams p;
  p.kind = cfg.kind;
  p.depth_range = cfg.depth_range();
  p.sample_rate = cfg.sample_rate;
  if (cfg.kind == TrajectoryKind::sinusoid) {
    p.amplitude = rng.uniform(cfg.amplitude_min, cfg.amplitude_max);
    p.frequency = rng.uniform(cfg.frequency_min, cfg.frequency_max);
    p.phase = rng.uniform(0.0, kTwoPi);
    p.offset = rng.uniform(cfg.offset_min, cfg.offset_max) * p.amplitude;
    return p;
  }
  const double duration = (cfg.length - 1) / cfg.sample_rate;
  double t = 0.0;
  p.knot_times.push_back(t);
  p.knot_depths.push_back(rng.uniform(0.0, p.depth_range));
  while (t < duration || p.knot_times.size() < 2) {
    t += rng.uniform(cfg.knot_spacing_min, cfg.knot_spacing_max);
    p.knot_times.push_back(t);
    p.knot_depths.push_back(rng.uniform(0.0, p.depth_range));
  }
  return p;
}

double sinusoid_trajectory(const TrajectoryParams& p, double t) {
  const double v = p.amplitude * std::sin(kTwoPi * p.frequency * t / p.sample_rate + p.phase) - p.offset;
  return std::clamp(v, 0.0, p.depth_range);
}

std::vector<double> natural_spline_moments(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("spline needs >= 2 knots with matching values");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(x[i] > x[i - 1])) throw std::invalid_argument("spline knots must be strictly increasing");
  }
  std::vector<double> m(n, 0.0);
  if (n == 2) return m;
  // Tridiagonal system for the interior moments (Thomas algorithm).
  const std::size_t k = n - 2;
  std::vector<double> diag(k), upper(k), rhs(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double h0 = x[i + 1] - x[i];
    const double h1 = x[i + 2] - x[i + 1];
    diag[i] = 2.0 * (h0 + h1);
    upper[i] = h1;
    rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
  }
  for (std::size_t i = 1; i < k; ++i) {
    const double lower = x[i + 1] - x[i];
    const double w = lower / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  m[k] = rhs[k - 1] / diag[k - 1];
  for (std::size_t i = k - 1; i-- > 0;) m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
  return m;
}

double spline_eval(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& m,
                   double t, int derivative) {
  const std::size_t n = x.size();
  std::size_t i = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), t) - x.begin());
  i = std::clamp<std::size_t>(i, 1, n - 1) - 1;
  const double h = x[i + 1] - x[i];
  const double a = (x[i + 1] - t) / h;
  const double b = (t - x[i]) / h;
  if (derivative == 0) {
    return a * y[i] + b * y[i + 1] + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0;
  }
  return (y[i + 1] - y[i]) / h - (3.0 * a * a - 1.0) * h * m[i] / 6.0 + (3.0 * b * b - 1.0) * h * m[i + 1] / 6.0;
}

double spline_trajectory(const TrajectoryParams& p, double t) {
  const auto m = natural_spline_moments(p.knot_times, p.knot_depths);
  return std::clamp(spline_eval(p.knot_times, p.knot_depths, m, t / p.sample_rate), 0.0, p.depth_range);
}

double TrajectoryParams::depth(double t) const {
  return kind == TrajectoryKind::sinusoid ? sinusoid_trajectory(*this, t) : spline_trajectory(*this, t);
}

double TrajectoryParams::velocity(double t) const {
  const double ts = t / sample_rate;
  double raw = 0.0;
  double slope = 0.0;
  if (kind == TrajectoryKind::sinusoid) {
    const double w = kTwoPi * frequency;
    raw = amplitude * std::sin(w * ts + phase) - offset;
    slope = amplitude * w * std::cos(w * ts + phase);
  } else {
    const auto m = natural_spline_moments(knot_times, knot_depths);
    raw = spline_eval(knot_times, knot_depths, m, ts, 0);
    slope = spline_eval(knot_times, knot_depths, m, ts, 1);
  }
  return (raw > 0.0 && raw < depth_range) ? slope : 0.0;
}

double force_model(double depth, double velocity, const ForceModel& m) {
  if (depth < 0) throw std::invalid_argument("indentation depth must be non-negative");
  return m.k1 * depth + m.k2 * depth * depth + (depth > 0 ? m.c * velocity : 0.0);
}

// ---- rendering ---------------------------------------------------------------

double surface_voxel(double depth, const NeedlePose& pose, const RenderConfig& cfg, int y, int x) {
  const double py = (y + 0.5) * cfg.lateral_fov / cfg.height;
  const double px = (x + 0.5) * cfg.lateral_fov / cfg.width;
  const double sy = cfg.bump_sigma * (1.0 + std::abs(pose.tilt_y));
  const double sx = cfg.bump_sigma * (1.0 + std::abs(pose.tilt_x));
  const double dy = (py - pose.tip_y) / sy;
  const double dx = (px - pose.tip_x) / sx;
  const double bump = std::exp(-0.5 * (dy * dy + dx * dx));
  return cfg.surface_voxel + depth * bump / cfg.voxel_depth();
}

std::vector<float> render_volume(double depth, const ExperimentMeta& meta, const RenderConfig& cfg,
                                 std::uint64_t sample) {
  const int h = cfg.height;
  const int w = cfg.width;
  const int d = cfg.raw_depth;
  std::vector<float> vol(static_cast<std::size_t>(cfg.voxels()));
  const std::uint64_t noise = derive_seed(meta.noise_seed, sample);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double s = surface_voxel(depth, meta.pose, cfg, y, x);
      const auto column = static_cast<std::uint64_t>(y) * static_cast<std::uint64_t>(w) + static_cast<std::uint64_t>(x);
      const auto s_floor = static_cast<std::int64_t>(std::floor(s));
      float* out = vol.data() + column * static_cast<std::uint64_t>(d);
      for (int z = 0; z < d; ++z) {
        const double u = (z - s) / kSurfaceWidth;
        double v = std::exp(-u * u);
        const double below = z - s - kSubsurfaceGap;
        if (below >= 0) {
          // Texture moves with the tissue: indexed by depth below the surface.
          const auto rel = static_cast<std::uint64_t>(z - s_floor);
          const double tex = 2.0 * hash_uniform(meta.roi_seed, column * 4096 + rel) - 1.0;
          v += kSubsurfaceGain * std::exp(-below / kSubsurfaceDecay) * (1.0 + kTextureGain * tex);
        }
        if (cfg.speckle) v *= 0.7 + 0.6 * hash_uniform(noise, column * static_cast<std::uint64_t>(d) + z);
        out[z] = static_cast<float>(v);
      }
    }
  }
  return vol;
}

// ---- generation --------------------------------------------------------------

void SimConfig::validate() const {
  trajectory.validate();
  if (render.height < 1 || render.width < 1 || render.raw_depth < 2) throw std::invalid_argument("bad render size");
  if (!(render.lateral_fov > 0 && render.depth_fov > 0)) throw std::invalid_argument("bad field of view");
  const double deepest = render.surface_voxel + trajectory.depth_range() / render.voxel_depth() + kSurfaceWidth;
  if (deepest >= render.raw_depth) {
    throw std::invalid_argument("maximum indentation leaves the rendered depth range");
  }
  if (experiments < 3) throw std::invalid_argument("need at least 3 experiments to populate train/val/test");
  double total = 0.0;
  for (double f : split_fractions) {
    if (!(f >= 0)) throw std::invalid_argument("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");
}

std::array<int, 3> split_counts(int n, const std::array<double, 3>& fractions) {
  if (n < 3) throw std::invalid_argument("need at least 3 experiments to populate train/val/test");
  std::array<int, 3> counts{};
  std::array<double, 3> rem{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fractions[static_cast<std::size_t>(i)] * n;
    counts[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(exact));
    rem[static_cast<std::size_t>(i)] = exact - std::floor(exact);
    assigned += counts[static_cast<std::size_t>(i)];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; assigned < n; ++k, ++assigned) ++counts[static_cast<std::size_t>(order[k % 3])];
  // Every split needs an experiment; borrow from the largest.
  for (auto& c : counts) {
    if (c == 0) {
      ++c;
      --*std::max_element(counts.begin(), counts.end());
    }
  }
  return counts;
}

ExperimentMeta draw_experiment_meta(const SimConfig& cfg, std::uint32_t id) {
  const std::uint64_t seed = derive_seed(cfg.seed, id);
  ExperimentMeta meta;
  meta.id = id;
  meta.trajectory = TrajectoryParams::draw(cfg.trajectory, derive_seed(seed, trajectory_stream));
  Rng pose_rng(derive_seed(seed, pose_stream));
  const double fov = cfg.render.lateral_fov;
  meta.pose.tip_y = pose_rng.uniform(0.25 * fov, 0.75 * fov);
  meta.pose.tip_x = pose_rng.uniform(0.25 * fov, 0.75 * fov);
  meta.pose.tilt_y = pose_rng.uniform(-0.5, 0.5);
  meta.pose.tilt_x = pose_rng.uniform(-0.5, 0.5);
  meta.roi_seed = derive_seed(seed, roi_stream);
  meta.noise_seed = derive_seed(seed, noise_stream);
  meta.force = cfg.force;
  if (cfg.hard_mode) {
    Rng stiff(derive_seed(seed, stiffness_stream));
    const double scale = stiff.uniform(0.6, 1.4);
    meta.force.k1 *= scale;
    meta.force.k2 *= scale;
  }
  const auto counts = split_counts(cfg.experiments, cfg.split_fractions);
  const auto i = static_cast<int>(id);
  meta.split = i < counts[0] ? Split::train : (i < counts[0] + counts[1] ? Split::val : Split::test);
  return meta;
}

Experiment generate_experiment(const SimConfig& cfg, std::uint32_t id) {
  cfg.validate();
  Experiment e;
  e.meta = draw_experiment_meta(cfg, id);
  const auto n = static_cast<std::size_t>(cfg.trajectory.length);
  const std::size_t voxels = static_cast<std::size_t>(cfg.render.voxels());
  e.timestamps.resize(n);
  e.forces.resize(n);
  e.volumes.resize(n * voxels);
  for (std::size_t t = 0; t < n; ++t) {
    const double td = static_cast<double>(t);
    const double depth = e.meta.trajectory.depth(td);
    const double velocity = e.meta.trajectory.velocity(td);
    e.timestamps[t] = td / cfg.trajectory.sample_rate;
    e.forces[t] = static_cast<float>(std::abs(force_model(depth, velocity, e.meta.force)));
    const auto vol = render_volume(depth, e.meta, cfg.render, t);
    std::copy(vol.begin(), vol.end(), e.volumes.begin() + static_cast<std::ptrdiff_t>(t * voxels));
  }
  return e;
}

std::size_t Dataset::sample_count() const {
  std::size_t n = 0;
  for (const auto& e : experiments) n += e.size();
  return n;
}

Dataset generate_dataset(const SimConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.config = cfg;
  for (int i = 0; i < cfg.experiments; ++i) d.experiments.push_back(generate_experiment(cfg, static_cast<std::uint32_t>(i)));
  return d;
}

// ---- config serialization ------------------------------------------------------

std::map<std::string, std::string> SimConfig::to_map() const {
  using binio::format_double;
  return {{"kind", to_string(trajectory.kind)},
          {"amplitude_min", format_double(trajectory.amplitude_min)},
          {"amplitude_max", format_double(trajectory.amplitude_max)},
          {"frequency_min", format_double(trajectory.frequency_min)},
          {"frequency_max", format_double(trajectory.frequency_max)},
          {"offset_min", format_double(trajectory.offset_min)},
          {"offset_max", format_double(trajectory.offset_max)},
          {"knot_spacing_min", format_double(trajectory.knot_spacing_min)},
          {"knot_spacing_max", format_double(trajectory.knot_spacing_max)},
          {"contact_depth", format_double(trajectory.contact_depth)},
          {"max_depth", format_double(trajectory.max_depth)},
          {"sample_rate", format_double(trajectory.sample_rate)},
          {"length", std::to_string(trajectory.length)},
          {"height", std::to_string(render.height)},
          {"width", std::to_string(render.width)},
          {"raw_depth", std::to_string(render.raw_depth)},
          {"lateral_fov", format_double(render.lateral_fov)},
          {"depth_fov", format_double(render.depth_fov)},
          {"surface_voxel", format_double(render.surface_voxel)},
          {"bump_sigma", format_double(render.bump_sigma)},
          {"speckle", render.speckle ? "1" : "0"},
          {"k1", format_double(force.k1)},
          {"k2", format_double(force.k2)},
          {"c", format_double(force.c)},
          {"experiments", std::to_string(experiments)},
          {"split_train", format_double(split_fractions[0])},
          {"split_val", format_double(split_fractions[1])},
          {"split_test", format_double(split_fractions[2])},
          {"hard_mode", hard_mode ? "1" : "0"},
          {"seed", std::to_string(seed)}};
}

SimConfig SimConfig::from_map(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(std::string("dataset config missing key '") + key + "'");
    return it->second;
  };
  auto num = [&](const char* key) { return std::stod(get(key)); };
  auto integer = [&](const char* key) { return std::stoi(get(key)); };
  SimConfig c;
  c.trajectory.kind = parse_trajectory_kind(get("kind"));
  c.trajectory.amplitude_min = num("amplitude_min");
  c.trajectory.amplitude_max = num("amplitude_max");
  c.trajectory.frequency_min = num("frequency_min");
  c.trajectory.frequency_max = num("frequency_max");
  c.trajectory.offset_min = num("offset_min");
  c.trajectory.offset_max = num("offset_max");
  c.trajectory.knot_spacing_min = num("knot_spacing_min");
  c.trajectory.knot_spacing_max = num("knot_spacing_max");
  c.trajectory.contact_depth = num("contact_depth");
  c.trajectory.max_depth = num("max_depth");
  c.trajectory.sample_rate = num("sample_rate");
  c.trajectory.length = integer("length");
  c.render.height = integer("height");
  c.render.width = integer("width");
  c.render.raw_depth = integer("raw_depth");
  c.render.lateral_fov = num("lateral_fov");
  c.render.depth_fov = num("depth_fov");
  c.render.surface_voxel = num("surface_voxel");
  c.render.bump_sigma = num("bump_sigma");
  c.render.speckle = get("speckle") == "1";
  c.force.k1 = num("k1");
  c.force.k2 = num("k2");
  c.force.c = num("c");
  c.experiments = integer("experiments");
  c.split_fractions = {num("split_train"), num("split_val"), num("split_test")};
  c.hard_mode = get("hard_mode") == "1";
  c.seed = std::stoull(get("seed"));
  return c;
}

// ---- file I/O ------------------------------------------------------------------

namespace {

void write_meta(std::ostream& out, const ExperimentMeta& m) {
  using binio::format_double;
  using binio::put_string;
  const TrajectoryParams& t = m.trajectory;
  std::map<std::string, std::string> fields = {
      {"id", std::to_string(m.id)},
      {"kind", to_string(t.kind)},
      {"amplitude", format_double(t.amplitude)},
      {"frequency", format_double(t.frequency)},
      {"phase", format_double(t.phase)},
      {"offset", format_double(t.offset)},
      {"depth_range", format_double(t.depth_range)},
      {"sample_rate", format_double(t.sample_rate)},
      {"tip_y", format_double(m.pose.tip_y)},
      {"tip_x", format_double(m.pose.tip_x)},
      {"tilt_y", format_double(m.pose.tilt_y)},
      {"tilt_x", format_double(m.pose.tilt_x)},
      {"k1", format_double(m.force.k1)},
      {"k2", format_double(m.force.k2)},
      {"c", format_double(m.force.c)},
      {"roi_seed", std::to_string(m.roi_seed)},
      {"noise_seed", std::to_string(m.noise_seed)},
      {"split", to_string(m.split)},
  };
  put_string(out, binio::encode_map(fields));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.knot_times.size()));
  binio::put_array(out, t.knot_times.data(), t.knot_times.size());
  binio::put_array(out, t.knot_depths.data(), t.knot_depths.size());
}

ExperimentMeta read_meta(std::istream& in) {
  const auto kv = binio::decode_map(binio::get_string(in));
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(std::string("experiment metadata missing '") + key + "'");
    return it->second;
  };
  auto num = [&](const char* key) { return std::stod(get(key)); };
  ExperimentMeta m;
  m.id = static_cast<std::uint32_t>(std::stoul(get("id")));
  m.trajectory.kind = parse_trajectory_kind(get("kind"));
  m.trajectory.amplitude = num("amplitude");
  m.trajectory.frequency = num("frequency");
  m.trajectory.phase = num("phase");
  m.trajectory.offset = num("offset");
  m.trajectory.depth_range = num("depth_range");
  m.trajectory.sample_rate = num("sample_rate");
  m.pose = {num("tip_y"), num("tip_x"), num("tilt_y"), num("tilt_x")};
  m.force = {num("k1"), num("k2"), num("c")};
  m.roi_seed = std::stoull(get("roi_seed"));
  m.noise_seed = std::stoull(get("noise_seed"));
  m.split = parse_split(get("split"));
  const auto knots = binio::get<std::uint32_t>(in);
  if (knots > (1u << 24)) throw std::runtime_error("corrupt knot count");
  m.trajectory.knot_times.resize(knots);
  m.trajectory.knot_depths.resize(knots);
  binio::get_array(in, m.trajectory.knot_times.data(), knots);
  binio::get_array(in, m.trajectory.knot_depths.data(), knots);
  return m;
}

}  // namespace

DatasetWriter::DatasetWriter(const std::filesystem::path& path, const SimConfig& cfg) : path_(path), cfg_(cfg) {
  cfg_.validate();
  out_.open(path_.string() + ".tmp", std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot write " + path_.string());
  out_.write(kDatasetMagic, sizeof(kDatasetMagic));
  binio::put<std::uint32_t>(out_, kDatasetVersion);
  binio::put<std::uint32_t>(out_, static_cast<std::uint32_t>(cfg_.render.height));
  binio::put<std::uint32_t>(out_, static_cast<std::uint32_t>(cfg_.render.width));
  binio::put<std::uint32_t>(out_, static_cast<std::uint32_t>(cfg_.render.raw_depth));
  binio::put_string(out_, binio::encode_map(cfg_.to_map()));
  binio::put<std::uint32_t>(out_, static_cast<std::uint32_t>(cfg_.experiments));
}

void DatasetWriter::write(const Experiment& e) {
  if (written_ >= cfg_.experiments) throw std::logic_error("more experiments than declared");
  const auto voxels = static_cast<std::size_t>(cfg_.render.voxels());
  if (e.forces.size() != e.size() || e.volumes.size() != e.size() * voxels) {
    throw std::invalid_argument("experiment arrays do not match the dataset dimensions");
  }
  write_meta(out_, e.meta);
  binio::put<std::uint64_t>(out_, e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    binio::put<double>(out_, e.timestamps[i]);
    binio::put<float>(out_, e.forces[i]);
    binio::put_array(out_, e.volume(i, cfg_.render.voxels()), voxels);
  }
  if (!out_) throw std::runtime_error("write failed for " + path_.string());
  ++written_;
}

void DatasetWriter::close() {
  if (written_ != cfg_.experiments) {
    throw std::logic_error("wrote " + std::to_string(written_) + " of " + std::to_string(cfg_.experiments) +
                           " experiments");
  }
  out_.close();
  if (!out_) throw std::runtime_error("write failed for " + path_.string());
  std::filesystem::rename(path_.string() + ".tmp", path_);
}

DatasetReader::DatasetReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
  if (!in_) throw std::runtime_error("cannot open dataset " + path.string());
  char magic[sizeof(kDatasetMagic)];
  in_.read(magic, sizeof(magic));
  if (!in_ || !std::equal(magic, magic + sizeof(magic), kDatasetMagic)) {
    throw std::runtime_error(path.string() + " is not a dataset file (bad magic)");
  }
  const auto version = binio::get<std::uint32_t>(in_);
  if (version != kDatasetVersion) {
    throw std::runtime_error("unsupported dataset version " + std::to_string(version));
  }
  const auto h = binio::get<std::uint32_t>(in_);
  const auto w = binio::get<std::uint32_t>(in_);
  const auto d = binio::get<std::uint32_t>(in_);
  cfg_ = SimConfig::from_map(binio::decode_map(binio::get_string(in_)));
  if (static_cast<int>(h) != cfg_.render.height || static_cast<int>(w) != cfg_.render.width ||
      static_cast<int>(d) != cfg_.render.raw_depth) {
    throw std::runtime_error("dataset header dimensions disagree with its config");
  }
  count_ = binio::get<std::uint32_t>(in_);
}

bool DatasetReader::next(Experiment& e) {
  if (read_ >= count_) return false;
  e = Experiment{};
  e.meta = read_meta(in_);
  const auto n = binio::get<std::uint64_t>(in_);
  if (n > (1u << 24)) throw std::runtime_error("corrupt sample count");
  const auto voxels = static_cast<std::size_t>(cfg_.render.voxels());
  e.timestamps.resize(n);
  e.forces.resize(n);
  e.volumes.resize(n * voxels);
  for (std::size_t i = 0; i < n; ++i) {
    e.timestamps[i] = binio::get<double>(in_);
    e.forces[i] = binio::get<float>(in_);
    binio::get_array(in_, e.volumes.data() + i * voxels, voxels);
  }
  ++read_;
  return true;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  SimConfig cfg = d.config;
  cfg.experiments = static_cast<int>(d.experiments.size());
  DatasetWriter writer(path, cfg);
  for (const auto& e : d.experiments) writer.write(e);
  writer.close();
}

Dataset load_dataset(const std::filesystem::path& path) {
  DatasetReader reader(path);
  Dataset d;
  d.config = reader.config();
  Experiment e;
  while (reader.next(e)) d.experiments.push_back(std::move(e));
  return d;
}

void write_sidecar(const SimConfig& cfg, const std::vector<ExperimentMeta>& metas, std::size_t samples,
                   const std::filesystem::path& path) {
  const std::string tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "format_version=" << kDatasetVersion << "\n";
    out << "samples=" << samples << "\n";
    std::array<int, 3> per_split{};
    for (const auto& m : metas) ++per_split[static_cast<std::size_t>(m.split)];
    out << "experiments_train=" << per_split[0] << "\n";
    out << "experiments_val=" << per_split[1] << "\n";
    out << "experiments_test=" << per_split[2] << "\n";
    for (const auto& [k, v] : cfg.to_map()) out << "config." << k << "=" << v << "\n";
    for (const auto& m : metas) {
      out << "experiment." << m.id << ".split=" << to_string(m.split) << "\n";
      out << "experiment." << m.id << ".roi_seed=" << m.roi_seed << "\n";
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace oct4d
