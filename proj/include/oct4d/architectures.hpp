#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "oct4d/layers.hpp"
#include "oct4d/recurrent.hpp"

namespace oct4d {

enum class Family { resnet, fac_resnet, resnet_rnn, convrnn_resnet };
enum class RnnKind { none, gru, lstm };
enum class Representation { s2d, s3d, st3d, st4d, ps_st4d };
enum class Capacity { base, wide, deep };

std::string to_string(Family f);
std::string to_string(RnnKind r);
std::string to_string(Representation r);
std::string to_string(Capacity c);
Family parse_family(const std::string& s);
RnnKind parse_rnn_kind(const std::string& s);
Representation parse_representation(const std::string& s);
Capacity parse_capacity(const std::string& s);

// True for the representations carrying a temporal window.
bool is_temporal(Representation r);
// True when frames are volumes (h x w x d) rather than depth maps (h x w).
bool is_volumetric(Representation r);

struct ModelConfig {
  Family family = Family::resnet;
  RnnKind rnn = RnnKind::none;
  Representation representation = Representation::st4d;
  int base_channels = 16;
  int n_blocks = 5;
  int output_stride = 16;
  Capacity capacity = Capacity::base;
  int history = 6;
  int horizon = 0;
  int height = 16;
  int width = 16;
  int depth = 16;
  int kernel = 3;
  // Hidden channels of the convolutional recurrent layer; 0 means 4x its input.
  int convrnn_hidden = 0;

  // Throws std::invalid_argument on inconsistent combinations.
  void validate() const;
  // Channels and block count after applying the capacity variant.
  int effective_channels() const;
  int effective_blocks() const;
  // Frames per window: history for temporal representations, else 1.
  int window() const;

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Named architecture presets ("resnet4d", "convgru-resnet3d", "resnet2d-s",
// ...) mapped onto family / recurrent kind, and the representations each
// accepts.
struct ArchPreset {
  std::string name;
  Family family;
  RnnKind rnn;
  std::vector<Representation> representations;
};
const std::vector<ArchPreset>& arch_presets();
const ArchPreset& find_arch(const std::string& name);
// Applies a preset to `cfg`, checking that cfg.representation is accepted.
ModelConfig apply_arch(const std::string& name, ModelConfig cfg);

struct BlockPlan {
  std::int64_t cin;
  std::int64_t cout;
  int stride;
};
// Residual block sequence: one stride-1 block, then log2(s_o) stride-2
// blocks. Channels double at the first, third, ... stride-2 block. Extra
// stride-1 blocks are dealt out one per stride-2 stage, last stage first.
std::vector<BlockPlan> plan_blocks(std::int64_t channels, int n_blocks, int output_stride);

template <typename T>
class Network {
 public:
  Network(const ModelConfig& config, std::uint64_t seed, double init_std = 0.01);

  // Input shapes: 4d-st / ps-4d-st [b, p, h, w, d, 1]; 3d-st [b, p, h, w, 1];
  // 3d-s [b, h, w, d, 1]; 2d-s [b, h, w, 1]. Output [b, 1].
  Var<T> forward(const Var<T>& batch, bool training);

  Shape input_shape(std::int64_t batch) const;
  const ModelConfig& config() const { return config_; }
  const Registry<T>& registry() const { return registry_; }
  std::int64_t param_count() const { return registry_.param_count(); }
  DenseHead<T>& head() { return head_; }

 private:
  struct Backbone {
    ConvUnit<T> stem;
    std::vector<ResidualBlock<T>> blocks;
    BatchNormState<T> final_bn;
    Var<T> forward(const Var<T>& x, bool training);
  };

  Backbone make_backbone(KernelLayout layout, bool factorized, std::int64_t in_channels, InitContext& init);
  void collect_backbone(const std::string& prefix, const Backbone& b);
  Var<T> to_canonical(const Var<T>& batch) const;

  ModelConfig config_;
  Backbone backbone_;
  std::vector<std::unique_ptr<RecurrentCell<T>>> rnn_;
  DenseHead<T> head_;
  Registry<T> registry_;
  std::int64_t feature_channels_ = 0;
};

template <typename T>
std::int64_t param_count(const Network<T>& net) {
  return net.param_count();
}

}  // namespace oct4d
