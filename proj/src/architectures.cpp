#include "oct4d/architectures.hpp"

#include <algorithm>
#include <stdexcept>

#include "oct4d/ops.hpp"

namespace oct4d {

namespace {

template <typename E>
struct NameTable {
  E value;
  const char* name;
};

constexpr NameTable<Family> kFamilies[] = {{Family::resnet, "resnet"},
                                           {Family::fac_resnet, "fac_resnet"},
                                           {Family::resnet_rnn, "resnet_rnn"},
                                           {Family::convrnn_resnet, "convrnn_resnet"}};
constexpr NameTable<RnnKind> kRnnKinds[] = {{RnnKind::none, "none"}, {RnnKind::gru, "gru"}, {RnnKind::lstm, "lstm"}};
constexpr NameTable<Representation> kReps[] = {{Representation::s2d, "2d-s"},
                                               {Representation::s3d, "3d-s"},
                                               {Representation::st3d, "3d-st"},
                                               {Representation::st4d, "4d-st"},
                                               {Representation::ps_st4d, "ps-4d-st"}};
constexpr NameTable<Capacity> kCapacities[] = {
    {Capacity::base, "base"}, {Capacity::wide, "wide"}, {Capacity::deep, "deep"}};

template <typename E, std::size_t N>
std::string name_of(const NameTable<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  throw std::invalid_argument("unnamed enum value");
}

template <typename E, std::size_t N>
E parse(const NameTable<E> (&table)[N], const std::string& s, const char* what) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_int(int v) {
  int n = 0;
  while (v > 1) {
    v >>= 1;
    ++n;
  }
  return n;
}

}  // namespace

std::string to_string(Family f) { return name_of(kFamilies, f); }
std::string to_string(RnnKind r) { return name_of(kRnnKinds, r); }
std::string to_string(Representation r) { return name_of(kReps, r); }
std::string to_string(Capacity c) { return name_of(kCapacities, c); }
Family parse_family(const std::string& s) { return parse(kFamilies, s, "family"); }
RnnKind parse_rnn_kind(const std::string& s) { return parse(kRnnKinds, s, "recurrent kind"); }
Representation parse_representation(const std::string& s) { return parse(kReps, s, "representation"); }
Capacity parse_capacity(const std::string& s) { return parse(kCapacities, s, "capacity"); }

bool is_temporal(Representation r) {
  return r == Representation::st3d || r == Representation::st4d || r == Representation::ps_st4d;
}

bool is_volumetric(Representation r) {
  return r == Representation::s3d || r == Representation::st4d || r == Representation::ps_st4d;
}

// ---- ModelConfig -----------------------------------------------------------------

int ModelConfig::effective_channels() const {
  return capacity == Capacity::wide ? 2 * base_channels : base_channels;
}

int ModelConfig::effective_blocks() const { return capacity == Capacity::deep ? n_blocks + 4 : n_blocks; }

int ModelConfig::window() const { return is_temporal(representation) ? history : 1; }

void ModelConfig::validate() const {
  if (base_channels < 1 || n_blocks < 1) throw std::invalid_argument("channels and block count must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("kernel size must be positive and odd");
  if (!is_power_of_two(output_stride)) throw std::invalid_argument("output stride must be a power of two");
  if (effective_blocks() < 1 + log2_int(output_stride)) {
    throw std::invalid_argument("output stride " + std::to_string(output_stride) + " needs at least " +
                                std::to_string(1 + log2_int(output_stride)) + " blocks");
  }
  if (height < 1 || width < 1 || depth < 1) throw std::invalid_argument("input extents must be positive");
  if (height % output_stride != 0 || width % output_stride != 0 ||
      (is_volumetric(representation) && depth % output_stride != 0)) {
    throw std::invalid_argument("output stride " + std::to_string(output_stride) +
                                " must divide the spatial input extents");
  }
  if (history < 1) throw std::invalid_argument("history must be >= 1");
  if (horizon < 0) throw std::invalid_argument("horizon must be >= 0");
  if (convrnn_hidden < 0) throw std::invalid_argument("convrnn_hidden must be >= 0");

  const bool recurrent = family == Family::resnet_rnn || family == Family::convrnn_resnet;
  if (recurrent && rnn == RnnKind::none) throw std::invalid_argument("recurrent family needs rnn kind gru or lstm");
  if (!recurrent && rnn != RnnKind::none) throw std::invalid_argument("convolutional family takes rnn kind none");
  if (!is_temporal(representation) && family != Family::resnet) {
    throw std::invalid_argument("representation " + to_string(representation) +
                                " carries no temporal axis; only family resnet applies");
  }
  if (family == Family::fac_resnet && kernel < 3) {
    throw std::invalid_argument("factorized convolutions need a temporal kernel extent > 1");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"family", to_string(family)},
          {"rnn", to_string(rnn)},
          {"representation", to_string(representation)},
          {"base_channels", std::to_string(base_channels)},
          {"n_blocks", std::to_string(n_blocks)},
          {"output_stride", std::to_string(output_stride)},
          {"capacity", to_string(capacity)},
          {"history", std::to_string(history)},
          {"horizon", std::to_string(horizon)},
          {"height", std::to_string(height)},
          {"width", std::to_string(width)},
          {"depth", std::to_string(depth)},
          {"kernel", std::to_string(kernel)},
          {"convrnn_hidden", std::to_string(convrnn_hidden)}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument(std::string("model config missing key '") + key + "'");
    return it->second;
  };
  auto get_int = [&](const char* key) { return std::stoi(get(key)); };
  ModelConfig c;
  c.family = parse_family(get("family"));
  c.rnn = parse_rnn_kind(get("rnn"));
  c.representation = parse_representation(get("representation"));
  c.base_channels = get_int("base_channels");
  c.n_blocks = get_int("n_blocks");
  c.output_stride = get_int("output_stride");
  c.capacity = parse_capacity(get("capacity"));
  c.history = get_int("history");
  c.horizon = get_int("horizon");
  c.height = get_int("height");
  c.width = get_int("width");
  c.depth = get_int("depth");
  c.kernel = get_int("kernel");
  c.convrnn_hidden = get_int("convrnn_hidden");
  c.validate();
  return c;
}

// ---- presets ---------------------------------------------------------------------

const std::vector<ArchPreset>& arch_presets() {
  using R = Representation;
  static const std::vector<ArchPreset> presets = {
      {"resnet4d", Family::resnet, RnnKind::none, {R::st4d, R::ps_st4d}},
      {"facresnet4d", Family::fac_resnet, RnnKind::none, {R::st4d, R::ps_st4d}},
      {"resnet3d-gru", Family::resnet_rnn, RnnKind::gru, {R::st4d, R::ps_st4d}},
      {"resnet3d-lstm", Family::resnet_rnn, RnnKind::lstm, {R::st4d, R::ps_st4d}},
      {"convgru-resnet3d", Family::convrnn_resnet, RnnKind::gru, {R::st4d, R::ps_st4d}},
      {"convlstm-resnet3d", Family::convrnn_resnet, RnnKind::lstm, {R::st4d, R::ps_st4d}},
      {"resnet3d-st", Family::resnet, RnnKind::none, {R::st3d}},
      {"facresnet3d", Family::fac_resnet, RnnKind::none, {R::st3d}},
      {"resnet2d-gru", Family::resnet_rnn, RnnKind::gru, {R::st3d}},
      {"resnet2d-lstm", Family::resnet_rnn, RnnKind::lstm, {R::st3d}},
      {"convgru-resnet2d", Family::convrnn_resnet, RnnKind::gru, {R::st3d}},
      {"convlstm-resnet2d", Family::convrnn_resnet, RnnKind::lstm, {R::st3d}},
      {"resnet3d-s", Family::resnet, RnnKind::none, {R::s3d}},
      {"resnet2d-s", Family::resnet, RnnKind::none, {R::s2d}},
  };
  return presets;
}

const ArchPreset& find_arch(const std::string& name) {
  for (const auto& p : arch_presets()) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

ModelConfig apply_arch(const std::string& name, ModelConfig cfg) {
  const ArchPreset& preset = find_arch(name);
  if (std::find(preset.representations.begin(), preset.representations.end(), cfg.representation) ==
      preset.representations.end()) {
    throw std::invalid_argument("architecture " + name + " is incompatible with representation " +
                                to_string(cfg.representation));
  }
  cfg.family = preset.family;
  cfg.rnn = preset.rnn;
  cfg.validate();
  return cfg;
}

std::vector<BlockPlan> plan_blocks(std::int64_t channels, int n_blocks, int output_stride) {
  const int strided = log2_int(output_stride);
  if (n_blocks < 1 + strided) throw std::invalid_argument("not enough blocks for the requested output stride");
  // extra[k] stride-1 blocks follow stride-2 block k (k = 0 is the first block)
  std::vector<int> extra(static_cast<std::size_t>(strided) + 1, 0);
  for (int e = 0; e < n_blocks - 1 - strided; ++e) {
    extra[strided == 0 ? 0 : static_cast<std::size_t>(strided - e % strided)] += 1;
  }
  std::vector<BlockPlan> plan;
  plan.push_back({channels, channels, 1});
  for (int r = 0; r < extra[0]; ++r) plan.push_back({channels, channels, 1});
  std::int64_t ch = channels;
  for (int k = 1; k <= strided; ++k) {
    const std::int64_t next = (k % 2 == 1) ? 2 * ch : ch;
    plan.push_back({ch, next, 2});
    ch = next;
    for (int r = 0; r < extra[static_cast<std::size_t>(k)]; ++r) plan.push_back({ch, ch, 1});
  }
  return plan;
}

// ---- Network ---------------------------------------------------------------------

template <typename T>
Var<T> Network<T>::Backbone::forward(const Var<T>& x, bool training) {
  Var<T> h = stem.forward(x);
  for (auto& b : blocks) h = b.forward(h, training);
  return relu(batch_norm(h, final_bn, training));
}

template <typename T>
typename Network<T>::Backbone Network<T>::make_backbone(KernelLayout layout, bool factorized,
                                                        std::int64_t in_channels, InitContext& init) {
  Backbone b;
  const std::int64_t c = config_.effective_channels();
  b.stem = ConvUnit<T>(layout, in_channels, c, 1, false, init);
  std::int64_t last = c;
  for (const auto& p : plan_blocks(c, config_.effective_blocks(), config_.output_stride)) {
    b.blocks.emplace_back(layout, p.cin, p.cout, p.stride, factorized, init);
    last = p.cout;
  }
  b.final_bn = BatchNormState<T>::make(last);
  feature_channels_ = last;
  return b;
}

template <typename T>
void Network<T>::collect_backbone(const std::string& prefix, const Backbone& b) {
  b.stem.collect(prefix + ".stem", registry_);
  for (std::size_t i = 0; i < b.blocks.size(); ++i) {
    b.blocks[i].collect(prefix + ".block" + std::to_string(i + 1), registry_);
  }
  b.final_bn.collect(prefix + ".final_bn", registry_);
}

template <typename T>
Network<T>::Network(const ModelConfig& config, std::uint64_t seed, double init_std) : config_(config) {
  config_.validate();
  InitContext init{Rng(seed), init_std};
  const int k = config_.kernel;
  const bool volumetric = is_volumetric(config_.representation);
  KernelLayout spatial{1, k, k, volumetric ? k : 1};
  KernelLayout joint = spatial;
  joint.kt = is_temporal(config_.representation) ? k : 1;

  auto make_cell = [&](std::int64_t in, std::int64_t hidden, bool convolutional) -> std::unique_ptr<RecurrentCell<T>> {
    CellShape s{in, hidden, convolutional, spatial};
    if (config_.rnn == RnnKind::lstm) return std::make_unique<LstmCell<T>>(s, init);
    return std::make_unique<GruCell<T>>(s, init);
  };

  switch (config_.family) {
    case Family::resnet:
      backbone_ = make_backbone(joint, false, 1, init);
      collect_backbone("resnet", backbone_);
      break;
    case Family::fac_resnet:
      backbone_ = make_backbone(joint, true, 1, init);
      collect_backbone("resnet", backbone_);
      break;
    case Family::resnet_rnn: {
      backbone_ = make_backbone(spatial, false, 1, init);
      collect_backbone("resnet", backbone_);
      for (int layer = 0; layer < 2; ++layer) {
        rnn_.push_back(make_cell(feature_channels_, feature_channels_, false));
        rnn_.back()->collect("rnn" + std::to_string(layer + 1), registry_);
      }
      break;
    }
    case Family::convrnn_resnet: {
      const std::int64_t hidden = config_.convrnn_hidden > 0 ? config_.convrnn_hidden : 4;
      rnn_.push_back(make_cell(1, hidden, true));
      rnn_.back()->collect("convrnn", registry_);
      backbone_ = make_backbone(spatial, false, hidden, init);
      collect_backbone("resnet", backbone_);
      break;
    }
  }
  head_ = DenseHead<T>::make(feature_channels_, init);
  head_.collect("head", registry_);
}

template <typename T>
Shape Network<T>::input_shape(std::int64_t batch) const {
  const std::int64_t p = config_.history;
  const std::int64_t h = config_.height;
  const std::int64_t w = config_.width;
  const std::int64_t d = config_.depth;
  switch (config_.representation) {
    case Representation::s2d:
      return {batch, h, w, 1};
    case Representation::s3d:
      return {batch, h, w, d, 1};
    case Representation::st3d:
      return {batch, p, h, w, 1};
    case Representation::st4d:
    case Representation::ps_st4d:
      return {batch, p, h, w, d, 1};
  }
  throw std::invalid_argument("unknown representation");
}

template <typename T>
Var<T> Network<T>::to_canonical(const Var<T>& batch) const {
  const Shape& s = batch.shape();
  if (s.empty() || s != input_shape(s.front())) {
    throw std::invalid_argument("input " + shape_str(s) + " does not match " + to_string(config_.representation) +
                                " network input " + shape_str(input_shape(s.empty() ? 1 : s.front())));
  }
  switch (config_.representation) {
    case Representation::s2d:
      return reshape(batch, Shape{s[0], 1, s[1], s[2], 1, 1});
    case Representation::s3d:
      return reshape(batch, Shape{s[0], 1, s[1], s[2], s[3], 1});
    case Representation::st3d:
      return reshape(batch, Shape{s[0], s[1], s[2], s[3], 1, 1});
    default:
      return batch;
  }
}

template <typename T>
Var<T> Network<T>::forward(const Var<T>& batch, bool training) {
  Var<T> x = to_canonical(batch);
  const Shape cs = x.shape();
  const std::int64_t b = cs[0];
  const std::int64_t p = cs[1];
  switch (config_.family) {
    case Family::resnet:
    case Family::fac_resnet: {
      Var<T> f = backbone_.forward(x, training);
      return head_.forward(global_avg_pool(f, PoolAxes::temporal_spatial));
    }
    case Family::resnet_rnn: {
      // Frames share the spatial ResNet; fold time into the batch axis.
      Var<T> frames = reshape(x, Shape{b * p, 1, cs[2], cs[3], cs[4], cs[5]});
      Var<T> f = global_avg_pool(backbone_.forward(frames, training), PoolAxes::temporal_spatial);
      Var<T> seq = reshape(f, Shape{b, p, feature_channels_});
      auto states = unroll(*rnn_[0], seq, training);
      states = unroll(*rnn_[1], stack_hidden(states), training);
      return head_.forward(states.back().h);
    }
    case Family::convrnn_resnet: {
      auto states = unroll(*rnn_[0], x, training);
      Var<T> f = backbone_.forward(states.back().h, training);
      return head_.forward(global_avg_pool(f, PoolAxes::temporal_spatial));
    }
  }
  throw std::invalid_argument("unknown family");
}

template class Network<float>;
template class Network<double>;

}  // namespace oct4d
