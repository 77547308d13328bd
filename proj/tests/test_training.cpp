#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "scratch.hpp"
#include "oct4d/binio.hpp"
#include "oct4d/checkpoint.hpp"
#include "oct4d/init.hpp"
#include "oct4d/ops.hpp"
#include "oct4d/training.hpp"

using namespace oct4d;

namespace {

Var<double> leaf(Shape s, std::vector<double> v) { return Var<double>(Tensor<double>(std::move(s), std::move(v)), true); }

void set_grad(Var<double>& v, const std::vector<double>& g) {
  v.zero_grad();
  Tensor<double> w(v.shape(), g);
  backward(sum(mul(v, Var<double>(w))));
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.family = Family::resnet;
  m.representation = Representation::st3d;
  m.base_channels = 2;
  m.n_blocks = 2;
  m.output_stride = 2;
  m.history = 2;
  m.height = m.width = 4;
  return m;
}

WindowedData tiny_data(const ModelConfig& m, std::uint64_t seed = 3) {
  SimConfig s;
  s.experiments = 3;
  s.split_fractions = {0.34, 0.33, 0.33};
  s.trajectory.length = 12;
  s.render.height = s.render.width = 4;
  s.render.raw_depth = 64;
  s.trajectory.max_depth = 1.5;
  s.seed = seed;
  return build_windows(generate_dataset(s), m);
}

std::vector<Tensor<double>> snapshot(const Network<double>& net) {
  std::vector<Tensor<double>> out;
  for (const auto& p : net.registry().params) out.push_back(p.var.value());
  return out;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("truncated normal initialisation") {
    const auto a = init_truncated_normal<double>({1000, 1000}, 0.01, 42);
    double ss = 0, mx = 0;
    for (double v : a.storage()) {
      ss += v * v;
      mx = std::max(mx, std::fabs(v));
    }
    CHECK(mx <= 0.02);
    // Closed-form std of N(0, 1) truncated to [-2, 2].
    const double phi2 = std::exp(-2.0) / std::sqrt(2 * std::numbers::pi);
    const double mass = std::erf(2.0 / std::sqrt(2.0));
    const double factor = std::sqrt(1.0 - 4.0 * phi2 / mass);
    CHECK(factor == doctest::Approx(0.88).epsilon(0.01));
    CHECK(std::sqrt(ss / 1e6) == doctest::Approx(0.01 * factor).epsilon(0.02));
    CHECK(init_truncated_normal<float>({50}, 0.01, 7).storage() == init_truncated_normal<float>({50}, 0.01, 7).storage());
    CHECK(init_truncated_normal<float>({50}, 0.01, 7).storage() != init_truncated_normal<float>({50}, 0.01, 8).storage());
  }

  TEST_CASE("adam first step and steady state") {
    auto w = leaf({3}, {1.0, -2.0, 0.5});
    Adam<double> adam({{"w", w}}, 0.1);
    set_grad(w, {0.3, -4.0, 0.0});
    adam.step();
    // t=1: m_hat = g, v_hat = g^2, so the step is -lr g / (|g| + eps).
    CHECK(w.value()[0] == doctest::Approx(1.0 - 0.1 * 0.3 / (0.3 + 1e-8)).epsilon(1e-14));
    CHECK(w.value()[1] == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-14));
    CHECK(w.value()[2] == 0.5);
    CHECK(adam.steps() == 1);
    CHECK(adam.first_moment(0)[1] == doctest::Approx(-0.4));
    CHECK(adam.second_moment(0)[1] == doctest::Approx(0.016));

    auto u = leaf({1}, {0.0});
    Adam<double> steady({{"u", u}}, 0.01);
    double before = 0;
    for (int i = 0; i < 2000; ++i) {
      before = u.value()[0];
      set_grad(u, {2.5});
      steady.step();
    }
    CHECK(before - u.value()[0] == doctest::Approx(0.01).epsilon(1e-6));
  }

  TEST_CASE("adam rejects non-finite gradients") {
    auto a = leaf({2}, {1.0, 2.0});
    auto b = leaf({1}, {3.0});
    Adam<double> adam({{"a", a}, {"conv.w", b}}, 0.1);
    set_grad(a, {1.0, 1.0});
    b.zero_grad();
    backward(sum(mul(b, Var<double>(Tensor<double>({1}, {std::numeric_limits<double>::quiet_NaN()})))));
    CHECK_THROWS_WITH(adam.step(), doctest::Contains("conv.w"));
    CHECK(a.value()[0] == 1.0);
    CHECK(adam.steps() == 0);
  }

  TEST_CASE("ema closed form") {
    auto w = leaf({2}, {0.5, -0.5});
    Ema<double> ema({{"w", w}}, 0.999);
    ema.update();
    CHECK(ema.shadow()[0].storage() == w.value().storage());

    Rng rng(9);
    const double d = 0.999;
    std::vector<std::vector<double>> walk;
    const auto p0 = w.value().storage();
    for (int n = 0; n < 1000; ++n) {
      auto& v = w.mutable_value();
      for (std::int64_t k = 0; k < 2; ++k) v[k] += rng.uniform(-0.1, 0.1);
      walk.push_back(v.storage());
      ema.update();
    }
    // shadow_n = d^n p0 + sum_k (1 - d) d^(n-k) p_k
    for (int k = 0; k < 2; ++k) {
      double want = std::pow(d, 1000) * p0[static_cast<std::size_t>(k)];
      for (int i = 0; i < 1000; ++i) want += (1 - d) * std::pow(d, 999 - i) * walk[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      CHECK(ema.shadow()[0][k] == doctest::Approx(want).epsilon(1e-9));
    }

    // Constant parameters: the gap shrinks by d per step.
    auto c = leaf({1}, {0.0});
    Ema<double> g({{"c", c}}, 0.9);
    c.mutable_value()[0] = 1.0;
    for (int i = 0; i < 10; ++i) g.update();
    CHECK(1.0 - g.shadow()[0][0] == doctest::Approx(std::pow(0.9, 10)).epsilon(1e-12));

    const auto raw = w.value().storage();
    {
      EmaScope<double> scope(ema);
      CHECK(w.value().storage() == ema.shadow()[0].storage());
      CHECK_THROWS_AS(ema.update(), std::logic_error);
    }
    CHECK(w.value().storage() == raw);
  }

  TEST_CASE("ema buffer shadows") {
    auto w = leaf({1}, {1.0});
    Var<double> buf(Tensor<double>(Shape{2}, std::vector<double>{0.0, 1.0}));
    Ema<double> ema({{"w", w}}, 0.5, {{"b", buf}});
    REQUIRE(ema.buffer_shadow().size() == 1);
    CHECK(ema.buffer_shadow()[0].storage() == buf.value().storage());

    buf.mutable_value()[0] = 7.0;
    {
      EmaScope<double> scope(ema);
      CHECK(buf.value()[0] == 0.0);
      buf.mutable_value()[1] = 3.0;
    }
    // Raw buffer back, changes made under the shadow kept as the shadow.
    CHECK(buf.value().storage() == std::vector<double>{7.0, 1.0});
    CHECK(ema.buffer_shadow()[0].storage() == std::vector<double>{0.0, 3.0});
    ema.sync_buffers();
    CHECK(ema.buffer_shadow()[0].storage() == buf.value().storage());
  }

  TEST_CASE("mini-batches") {
    Rng rng(1);
    const auto b = make_batches(17, 8, rng);
    REQUIRE(b.size() == 2);
    CHECK(b[0].size() == 8);
    CHECK(b[1].size() == 9);  // trailing single sample folded in
    std::set<std::size_t> seen;
    for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
    CHECK(seen.size() == 17);
    CHECK(make_batches(16, 8, rng).size() == 2);
    CHECK(make_batches(3, 8, rng).size() == 1);
    Rng r1(5), r2(5);
    CHECK(make_batches(40, 6, r1) == make_batches(40, 6, r2));
    CHECK_THROWS(make_batches(4, 0, rng));
  }

  TEST_CASE("config defaults") {
    CHECK(default_batch_size(Representation::st4d) == 8);
    CHECK(default_batch_size(Representation::ps_st4d) == 8);
    CHECK(default_batch_size(Representation::st3d) == 16);
    CHECK(default_learning_rate(Representation::st4d) == 2.5e-4);
    CHECK(default_learning_rate(Representation::s2d) == 5e-4);
    TrainConfig c;
    CHECK(c.epochs == 100);
    CHECK(c.init_std == 0.01);
    CHECK(c.ema_decay == 0.999);
    c.ema_decay = 1.0;
    CHECK_THROWS(c.validate());
  }

  TEST_CASE("one full-batch epoch is one optimizer step") {
    const auto m = tiny_model();
    const auto data = tiny_data(m);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = static_cast<int>(data.windows(Split::train).size());
    TrainState<double> state(m, cfg);
    train(state, data, cfg);
    CHECK(state.adam.steps() == 1);
    REQUIRE(state.history.size() == 1);
    CHECK(std::isfinite(state.history[0].train_mse));
    CHECK(std::isfinite(state.history[0].val_mse));
  }

  TEST_CASE("same seed, same history") {
    const auto m = tiny_model();
    const auto data = tiny_data(m);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 77;
    TrainState<float> a(m, cfg), b(m, cfg);
    train(a, data, cfg);
    train(b, data, cfg);
    REQUIRE(a.history.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(a.history[i].train_mse == b.history[i].train_mse);
      CHECK(a.history[i].val_mse == b.history[i].val_mse);
    }
    cfg.seed = 78;
    TrainState<float> c(m, cfg);
    train(c, data, cfg);
    CHECK(c.history[0].train_mse != a.history[0].train_mse);
  }

  TEST_CASE("zero learning rate keeps the weights") {
    const auto m = tiny_model();
    const auto data = tiny_data(m);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 0.0;
    cfg.batch_size = static_cast<int>(data.windows(Split::train).size());
    TrainState<double> state(m, cfg);
    const auto init = snapshot(state.net);
    train(state, data, cfg);
    const auto after = snapshot(state.net);
    for (std::size_t i = 0; i < init.size(); ++i) {
      CHECK(after[i].storage() == init[i].storage());
      CHECK(state.ema.shadow()[i].storage() == init[i].storage());
    }
    for (const auto& h : state.history) CHECK(h.train_mse == doctest::Approx(state.history[0].train_mse).epsilon(1e-12));
  }

  TEST_CASE("batch-norm recalibration") {
    const auto m = tiny_model();
    const auto data = tiny_data(m);
    const auto& refs = data.windows(Split::train);
    Network<double> net(m, 5, 0.3);
    const auto before = [&] {
      std::vector<std::vector<double>> out;
      for (const auto& b : net.registry().buffers) out.push_back(b.var.value().storage());
      return out;
    };
    const auto init = before();
    Rng r0(1);
    recalibrate_batch_norm(net, data, refs, 4, 0, r0);
    CHECK(before() == init);

    // One batch holding every window: the statistics of that single pass.
    Rng r1(1);
    recalibrate_batch_norm(net, data, refs, static_cast<int>(refs.size()), 10, r1);
    const auto full = before();
    CHECK(full != init);
    Network<double> twin(m, 5, 0.3);
    {
      BatchNormMomentumScope zero(0.0);
      NoGradGuard guard;
      twin.forward(Var<double>(data.inputs<double>(refs)), true);
    }
    for (std::size_t i = 0; i < full.size(); ++i) {
      const auto& t = twin.registry().buffers[i].var.value().storage();
      for (std::size_t k = 0; k < t.size(); ++k) CHECK(full[i][k] == doctest::Approx(t[k]).epsilon(1e-10));
    }

    // Repeating with the same seed reproduces the statistics.
    Rng ra(3), rb(3);
    recalibrate_batch_norm(net, data, refs, 4, 3, ra);
    const auto once = before();
    recalibrate_batch_norm(net, data, refs, 4, 3, rb);
    CHECK(before() == once);
  }

  TEST_CASE("ema batch-norm statistics during training") {
    const auto m = tiny_model();
    const auto data = tiny_data(m);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.lr = 1e-2;
    cfg.ema_decay = 0.9;
    cfg.bn_recalibration_batches = 0;
    TrainState<double> off(m, cfg);
    train(off, data, cfg);
    const auto& bufs = off.net.registry().buffers;
    for (std::size_t i = 0; i < bufs.size(); ++i) CHECK(off.ema.buffer_shadow()[i].storage() == bufs[i].var.value().storage());

    cfg.bn_recalibration_batches = 50;
    TrainState<double> on(m, cfg);
    train(on, data, cfg);
    bool differs = false;
    for (std::size_t i = 0; i < bufs.size(); ++i) {
      differs |= on.ema.buffer_shadow()[i].storage() != on.net.registry().buffers[i].var.value().storage();
    }
    CHECK(differs);
    // Raw weights and raw statistics follow the same path either way.
    for (std::size_t i = 0; i < bufs.size(); ++i) {
      CHECK(on.net.registry().buffers[i].var.value().storage() == bufs[i].var.value().storage());
    }
    cfg.bn_recalibration_batches = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }

  TEST_CASE("target scaling and prediction") {
    const auto m = tiny_model();
    const auto data = tiny_data(m);
    const auto s = fit_target_scale(data);
    const auto y = data.labels(data.windows(Split::train));
    double mean = 0;
    for (double v : y.storage()) mean += v;
    mean /= static_cast<double>(y.size());
    CHECK(s.mean == doctest::Approx(mean));
    CHECK(s.std > 0);

    Network<double> net(m, 1);
    net.head().weight.mutable_value().fill(0.0);
    net.head().bias.mutable_value().fill(0.5);
    const auto pred = predict(net, data, data.windows(Split::test), TargetScale{100.0, 20.0}, 3);
    REQUIRE(pred.size() == data.windows(Split::test).size());
    for (double p : pred) CHECK(p == doctest::Approx(110.0));
  }

  TEST_CASE("training loss falls on a tiny problem") {
    const auto m = tiny_model();
    const auto data = tiny_data(m);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = static_cast<int>(data.windows(Split::train).size());
    cfg.lr = 1e-2;
    cfg.init_std = 0.3;
    TrainState<float> state(m, cfg);
    train(state, data, cfg);
    CHECK(state.history.back().train_mse < 0.1 * state.history.front().train_mse);
  }

  TEST_CASE("loss csv and checkpoints") {
    ScratchDir dir("training");
    std::vector<EpochLoss> h{{1, 0.5, 0.25}, {2, 0.125, std::numeric_limits<double>::quiet_NaN()}};
    write_loss_csv(h, dir / "loss.csv");
    CHECK(binio::read_file(dir / "loss.csv") == "epoch,train_mse,val_mse\n1,0.5,0.25\n2,0.125,nan\n");

    const auto m = tiny_model();
    const auto data = tiny_data(m);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.checkpoint_every = 1;
    cfg.checkpoint_path = dir / "ck.oct4d";
    TrainState<float> state(m, cfg);
    train(state, data, cfg);
    REQUIRE(std::filesystem::exists(cfg.checkpoint_path));
    const auto ck = load_checkpoint(cfg.checkpoint_path);
    CHECK(ck.config == m);
    CHECK(ck.scale.mean == state.scale.mean);

    Network<float> fresh(m, 999);
    apply_checkpoint(ck, fresh, false);
    for (std::size_t i = 0; i < fresh.registry().params.size(); ++i) {
      CHECK(fresh.registry().params[i].var.value().storage() == state.net.registry().params[i].var.value().storage());
    }
    for (std::size_t i = 0; i < fresh.registry().buffers.size(); ++i) {
      CHECK(fresh.registry().buffers[i].var.value().storage() == state.net.registry().buffers[i].var.value().storage());
    }
    apply_checkpoint(ck, fresh, true);
    CHECK(fresh.registry().params[0].var.value().storage() == state.ema.shadow()[0].storage());
    for (std::size_t i = 0; i < fresh.registry().buffers.size(); ++i) {
      CHECK(fresh.registry().buffers[i].var.value().storage() == state.ema.buffer_shadow()[i].storage());
    }

    auto other = m;
    other.base_channels = 3;
    Network<float> wrong(other, 1);
    CHECK_THROWS(apply_checkpoint(ck, wrong, false));
    std::string bytes = binio::read_file(cfg.checkpoint_path);
    bytes[1] = '?';
    binio::write_file_atomic(dir / "bad.oct4d", bytes);
    CHECK_THROWS(load_checkpoint(dir / "bad.oct4d"));
  }
}
