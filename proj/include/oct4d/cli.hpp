#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "oct4d/architectures.hpp"
#include "oct4d/checkpoint.hpp"
#include "oct4d/metrics.hpp"
#include "oct4d/phantom.hpp"
#include "oct4d/training.hpp"

namespace oct4d {

// File names inside an output directory.
inline constexpr const char* kDatasetFile = "dataset.oct4d";
inline constexpr const char* kCheckpointFile = "checkpoint.oct4d";
inline constexpr const char* kLossFile = "loss.csv";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kComparisonFile = "comparisons.csv";
inline constexpr const char* kSweepFile = "sweep.csv";
inline constexpr const char* kSweepPlot = "sweep.svg";

struct GenOptions {
  SimConfig sim;
  std::filesystem::path out = ".";
};

struct GenSummary {
  std::filesystem::path dataset;
  int experiments = 0;
  std::size_t samples = 0;
  std::array<int, 3> splits{};
};

GenSummary cmd_gen(const GenOptions& opt, std::ostream& log);

struct TrainOptions {
  std::filesystem::path dataset;
  std::string arch = "convgru-resnet3d";
  ModelConfig model;  // height / width are taken from the dataset
  TrainConfig train;
  std::filesystem::path out = ".";
};

struct TrainSummary {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
  std::vector<EpochLoss> history;
};

// Resolves the preset against the dataset's frame size and validates both configs.
ModelConfig resolve_model(const TrainOptions& opt, const RenderConfig& render);

TrainSummary cmd_train(const TrainOptions& opt, std::ostream& log);
// Same, on frames already encoded for the model's representation.
TrainSummary train_on(const TrainOptions& opt, const WindowedData& data, std::ostream& log);

struct EvalOptions {
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::filesystem::path out = ".";
  std::string run_id = "run";
  bool plot = false;
  std::optional<std::filesystem::path> compare;  // .errors file of another run
};

// Preset name matching a trained configuration ("convgru-resnet3d", ...).
std::string arch_name(const ModelConfig& cfg);

MetricsReport cmd_eval(const EvalOptions& opt, std::ostream& log);
// Test-split report for a checkpoint on already encoded frames.
MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const WindowedData& data, std::vector<double>* pred,
                                  std::vector<double>* target);

struct SweepOptions {
  TrainOptions base;
  std::vector<int> histories{2, 4, 6, 8};
  std::vector<int> horizons{0, 1, 2, 3, 4};
  int jobs = 1;
};

std::vector<MetricsReport> cmd_sweep(const SweepOptions& opt, std::ostream& log);

// Appends rows to a CSV, writing the header when the file is new. Throws
// if an existing file has a different header. Atomic.
void append_csv(const std::filesystem::path& path, const std::string& header, const std::vector<std::string>& rows);

void write_errors(const std::filesystem::path& path, const std::vector<double>& errors);
std::vector<double> read_errors(const std::filesystem::path& path);

// Entry point of the oct4d tool; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace oct4d
