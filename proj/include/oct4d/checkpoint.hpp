#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "oct4d/architectures.hpp"
#include "oct4d/training.hpp"

namespace oct4d {

inline constexpr char kCheckpointMagic[8] = {'O', 'C', 'T', '4', 'D', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 2;

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Tensor<float>> params;
  std::map<std::string, Tensor<float>> ema;
  std::map<std::string, Tensor<float>> buffers;
  std::map<std::string, Tensor<float>> ema_buffers;
  TargetScale scale;
};

// Snapshot of a network's raw parameters, buffers and optional EMA shadows.
template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, const Ema<T>* ema, const TargetScale& scale);

// Copies tensors into `net`; with use_ema the shadow parameters and buffers
// replace the raw ones. Throws on any missing name or shape mismatch.
template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, Network<T>& net, bool use_ema);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace oct4d
