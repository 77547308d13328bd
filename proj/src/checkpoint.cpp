#include "oct4d/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "oct4d/binio.hpp"

namespace oct4d {

namespace {

using TensorMap = std::map<std::string, Tensor<float>>;

void write_section(std::ostream& out, const TensorMap& m) {
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(m.size()));
  for (const auto& [name, t] : m) {
    binio::put_string(out, name);
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) binio::put<std::int64_t>(out, d);
    binio::put_array(out, t.ptr(), static_cast<std::size_t>(t.size()));
  }
}

TensorMap read_section(std::istream& in) {
  TensorMap m;
  const auto n = binio::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = binio::get_string(in, 4096);
    const auto rank = binio::get<std::uint32_t>(in);
    if (rank > 8) throw std::runtime_error("corrupt tensor rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) {
      d = binio::get<std::int64_t>(in);
      if (d < 1 || d > (std::int64_t{1} << 32)) throw std::runtime_error("corrupt tensor shape for '" + name + "'");
    }
    Tensor<float> t(shape);
    binio::get_array(in, t.ptr(), static_cast<std::size_t>(t.size()));
    m.emplace(std::move(name), std::move(t));
  }
  return m;
}

template <typename T>
void copy_into(const TensorMap& src, const std::string& name, Var<T>& dst) {
  auto it = src.find(name);
  if (it == src.end()) throw std::runtime_error("checkpoint has no tensor '" + name + "'");
  if (it->second.shape() != dst.shape()) {
    throw std::runtime_error("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                             ", network expects " + shape_str(dst.shape()));
  }
  dst.mutable_value() = it->second.template cast<T>();
}

}  // namespace

template <typename T>
Checkpoint make_checkpoint(const Network<T>& net, const Ema<T>* ema, const TargetScale& scale) {
  Checkpoint c;
  if (ema && ema->swapped()) throw std::logic_error("checkpoint taken while EMA weights are swapped in");
  c.config = net.config();
  c.scale = scale;
  const auto& reg = net.registry();
  for (std::size_t i = 0; i < reg.params.size(); ++i) {
    c.params[reg.params[i].name] = reg.params[i].var.value().template cast<float>();
    if (ema) c.ema[reg.params[i].name] = ema->shadow()[i].template cast<float>();
  }
  for (std::size_t i = 0; i < reg.buffers.size(); ++i) {
    c.buffers[reg.buffers[i].name] = reg.buffers[i].var.value().template cast<float>();
    if (ema) c.ema_buffers[reg.buffers[i].name] = ema->buffer_shadow()[i].template cast<float>();
  }
  return c;
}

template <typename T>
void apply_checkpoint(const Checkpoint& ckpt, Network<T>& net, bool use_ema) {
  if (!(ckpt.config == net.config())) throw std::runtime_error("checkpoint was saved for a different model config");
  if (use_ema && ckpt.ema.empty()) throw std::runtime_error("checkpoint carries no EMA weights");
  auto reg = net.registry();
  for (auto& p : reg.params) copy_into(use_ema ? ckpt.ema : ckpt.params, p.name, p.var);
  for (auto& b : reg.buffers) copy_into(use_ema ? ckpt.ema_buffers : ckpt.buffers, b.name, b.var);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    binio::put<std::uint32_t>(out, kCheckpointVersion);
    binio::put_string(out, binio::encode_map(ckpt.config.to_map()));
    write_section(out, ckpt.params);
    write_section(out, ckpt.ema);
    write_section(out, ckpt.buffers);
    write_section(out, ckpt.ema_buffers);
    binio::put<double>(out, ckpt.scale.mean);
    binio::put<double>(out, ckpt.scale.std);
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + sizeof(magic), kCheckpointMagic)) {
    throw std::runtime_error(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = binio::get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config = ModelConfig::from_map(binio::decode_map(binio::get_string(in)));
  c.params = read_section(in);
  c.ema = read_section(in);
  c.buffers = read_section(in);
  c.ema_buffers = read_section(in);
  c.scale.mean = binio::get<double>(in);
  c.scale.std = binio::get<double>(in);
  return c;
}

template Checkpoint make_checkpoint(const Network<float>&, const Ema<float>*, const TargetScale&);
template Checkpoint make_checkpoint(const Network<double>&, const Ema<double>*, const TargetScale&);
template void apply_checkpoint(const Checkpoint&, Network<float>&, bool);
template void apply_checkpoint(const Checkpoint&, Network<double>&, bool);

}  // namespace oct4d
