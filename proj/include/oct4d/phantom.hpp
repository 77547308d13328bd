#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace oct4d {

enum class TrajectoryKind { sinusoid, spline };
enum class Split { train, val, test };

std::string to_string(TrajectoryKind k);
std::string to_string(Split s);
TrajectoryKind parse_trajectory_kind(const std::string& s);
Split parse_split(const std::string& s);

struct TrajectoryConfig {
  TrajectoryKind kind = TrajectoryKind::sinusoid;
  double amplitude_min = 1.0;  // mm
  double amplitude_max = 3.0;
  double frequency_min = 3.0;  // Hz
  double frequency_max = 6.0;
  // Offset subtracted from the sinusoid, as a fraction of its amplitude.
  double offset_min = -0.3;
  double offset_max = 0.3;
  double knot_spacing_min = 0.5;  // s
  double knot_spacing_max = 1.5;
  double contact_depth = 0.0;  // d0, mm
  double max_depth = 3.0;      // d_max, mm
  double sample_rate = 60.0;   // Hz
  int length = 500;            // samples per experiment

  void validate() const;
  double depth_range() const { return max_depth - contact_depth; }
};

// Per-experiment trajectory parameters drawn from a TrajectoryConfig.
struct TrajectoryParams {
  TrajectoryKind kind = TrajectoryKind::sinusoid;
  double amplitude = 0.0;
  double frequency = 0.0;
  double phase = 0.0;
  double offset = 0.0;
  double depth_range = 3.0;
  double sample_rate = 60.0;
  std::vector<double> knot_times;   // s
  std::vector<double> knot_depths;  // mm

  static TrajectoryParams draw(const TrajectoryConfig& cfg, std::uint64_t seed);
  // Indentation depth (mm) and its time derivative (mm/s) at sample index t.
  double depth(double t) const;
  double velocity(double t) const;
};

// delta(t) = max(0, A sin(2 pi nu t / rate + phi) - offset), clipped to [0, range].
double sinusoid_trajectory(const TrajectoryParams& p, double t);
// Natural cubic spline through (knot_times, knot_depths), clipped to [0, range].
double spline_trajectory(const TrajectoryParams& p, double t);

// Natural cubic spline: second derivatives at the knots.
std::vector<double> natural_spline_moments(const std::vector<double>& x, const std::vector<double>& y);
double spline_eval(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& m,
                   double t, int derivative = 0);

struct ForceModel {
  double k1 = 200.0;  // mN/mm
  double k2 = 60.0;   // mN/mm^2
  double c = 5.0;     // mN s/mm
};

// F = k1 d + k2 d^2 + c v [d > 0]  (mN)
double force_model(double depth, double velocity, const ForceModel& m = {});

struct NeedlePose {
  double tip_y = 1.5;  // mm, lateral position of the tip
  double tip_x = 1.5;
  double tilt_y = 0.0;  // rad
  double tilt_x = 0.0;
};

struct ExperimentMeta {
  std::uint32_t id = 0;
  TrajectoryParams trajectory;
  NeedlePose pose;
  ForceModel force;
  std::uint64_t roi_seed = 0;
  std::uint64_t noise_seed = 0;
  Split split = Split::train;
};

struct RenderConfig {
  int height = 16;
  int width = 16;
  int raw_depth = 128;
  double lateral_fov = 3.0;  // mm
  double depth_fov = 3.5;    // mm
  double surface_voxel = 8.0;
  double bump_sigma = 0.6;  // mm at zero tilt
  bool speckle = true;

  double voxel_depth() const { return depth_fov / raw_depth; }
  std::int64_t voxels() const { return std::int64_t{height} * width * raw_depth; }
};

// Intensity volume [h, w, raw_depth] (row-major) of the phantom indented by
// `depth` mm under `meta.pose`. `sample` selects the speckle realisation.
std::vector<float> render_volume(double depth, const ExperimentMeta& meta, const RenderConfig& cfg,
                                 std::uint64_t sample);
// Surface depth (voxels, fractional) of column (y, x).
double surface_voxel(double depth, const NeedlePose& pose, const RenderConfig& cfg, int y, int x);

struct Experiment {
  ExperimentMeta meta;
  std::vector<double> timestamps;  // s
  std::vector<float> forces;       // mN, non-negative
  std::vector<float> volumes;      // samples x h x w x raw_depth

  std::size_t size() const { return timestamps.size(); }
  const float* volume(std::size_t i, std::int64_t voxels) const {
    return volumes.data() + static_cast<std::int64_t>(i) * voxels;
  }
};

struct SimConfig {
  TrajectoryConfig trajectory;
  RenderConfig render;
  ForceModel force;
  int experiments = 12;
  std::array<double, 3> split_fractions{0.75, 0.08, 0.17};
  // Per-experiment stiffness variation (x U[0.6, 1.4] on k1 and k2).
  bool hard_mode = false;
  std::uint64_t seed = 0;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static SimConfig from_map(const std::map<std::string, std::string>& kv);
};

// Largest-remainder apportionment of n experiments; every split gets >= 1.
std::array<int, 3> split_counts(int n, const std::array<double, 3>& fractions);

ExperimentMeta draw_experiment_meta(const SimConfig& cfg, std::uint32_t id);
Experiment generate_experiment(const SimConfig& cfg, std::uint32_t id);

struct Dataset {
  SimConfig config;
  std::vector<Experiment> experiments;
  std::size_t sample_count() const;
};

Dataset generate_dataset(const SimConfig& cfg);

// ---- file format ---------------------------------------------------------------

inline constexpr char kDatasetMagic[8] = {'O', 'C', 'T', '4', 'D', 'S', 'I', 'M'};
inline constexpr std::uint32_t kDatasetVersion = 1;

// Streams experiments to disk one at a time so full-size datasets never
// need to be resident in memory. Output goes to a temporary file that
// close() renames into place.
class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& path, const SimConfig& cfg);
  void write(const Experiment& e);
  // Throws unless exactly cfg.experiments experiments were written.
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  SimConfig cfg_;
  int written_ = 0;
};

class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& path);
  const SimConfig& config() const { return cfg_; }
  std::uint32_t experiment_count() const { return count_; }
  // Reads the next experiment; false once all are consumed.
  bool next(Experiment& e);

 private:
  std::ifstream in_;
  SimConfig cfg_;
  std::uint32_t count_ = 0;
  std::uint32_t read_ = 0;
};

void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
// key=value summary written next to the dataset file (path + ".txt").
void write_sidecar(const SimConfig& cfg, const std::vector<ExperimentMeta>& metas, std::size_t samples,
                   const std::filesystem::path& path);

}  // namespace oct4d
