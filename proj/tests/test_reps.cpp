#include <doctest.h>

#include <cstdlib>
#include <random>

#include "oct4d/reps.hpp"

using namespace oct4d;

namespace {

// Nearest integer j to k (d_out - 1) / (raw - 1) by exact cross-multiplied
// comparison; halves go up.
std::int32_t nearest_slice(std::int64_t k, std::int64_t raw, std::int64_t d_out) {
  std::int32_t best = 0;
  for (std::int32_t j = 1; j < d_out; ++j) {
    const std::int64_t dj = std::llabs(2 * j * (raw - 1) - 2 * k * (d_out - 1));
    const std::int64_t db = std::llabs(2 * best * (raw - 1) - 2 * k * (d_out - 1));
    if (dj <= db) best = j;
  }
  return best;
}

DepthMap random_depth_map(int h, int w, int raw, std::mt19937_64& g) {
  std::uniform_int_distribution<int> u(0, raw - 1);
  DepthMap dm{h, w, raw, std::vector<std::int32_t>(static_cast<std::size_t>(h) * w)};
  for (auto& v : dm.values) v = u(g);
  return dm;
}

ExperimentFrames counting_experiment(std::uint32_t id, Split split, std::size_t n, std::int64_t frame) {
  ExperimentFrames e;
  e.id = id;
  e.split = split;
  for (std::size_t t = 0; t < n; ++t) {
    e.labels.push_back(static_cast<float>(1000 * id + t));
    for (std::int64_t i = 0; i < frame; ++i) e.frames.push_back(static_cast<float>(1000 * id + t));
  }
  return e;
}

}  // namespace

TEST_SUITE("reps") {
  TEST_CASE("depth projection picks the brightest voxel per column") {
    const int h = 3, w = 4, d = 10;
    std::vector<float> vol(static_cast<std::size_t>(h * w * d), 0.1f);
    for (int c = 0; c < h * w; ++c) vol[static_cast<std::size_t>(c * d + (c * 7) % d)] = 2.0f;
    const auto dm = project_depth(vol.data(), h, w, d);
    for (int c = 0; c < h * w; ++c) CHECK(dm.values[static_cast<std::size_t>(c)] == (c * 7) % d);

    std::vector<float> flat(static_cast<std::size_t>(h * w * d), 0.5f);
    const auto z = project_depth(flat.data(), h, w, d);
    for (auto v : z.values) CHECK(v == 0);

    std::mt19937_64 g(3);
    std::uniform_int_distribution<int> level(0, 5);
    std::vector<float> rnd(static_cast<std::size_t>(h * w * d));
    for (auto& v : rnd) v = static_cast<float>(level(g));  // many ties
    const auto r = project_depth(Tensor<float>({h, w, d}, rnd));
    for (int c = 0; c < h * w; ++c) {
      int best = 0;
      for (int k = 1; k < d; ++k)
        if (rnd[static_cast<std::size_t>(c * d + k)] > rnd[static_cast<std::size_t>(c * d + best)]) best = k;
      CHECK(r.values[static_cast<std::size_t>(c)] == best);
    }
    CHECK_THROWS(project_depth(Tensor<float>({2, 2})));
  }

  TEST_CASE("pseudo volumes") {
    std::mt19937_64 g(5);
    for (int rep = 0; rep < 1000; ++rep) {
      const auto dm = random_depth_map(5, 4, 16, g);
      const auto pv = reproject_pseudo(dm, 16);
      REQUIRE(project_depth(pv) == dm);
    }
    const auto dm = random_depth_map(6, 6, 128, g);
    const auto pv = reproject_pseudo(dm, 32);
    for (int c = 0; c < 36; ++c) {
      int ones = 0, at = -1;
      for (int k = 0; k < 32; ++k) {
        const float v = pv[c * 32 + k];
        CHECK((v == 0.0f || v == 1.0f));
        if (v == 1.0f) {
          ++ones;
          at = k;
        }
      }
      CHECK(ones == 1);
      CHECK(at == nearest_slice(dm.values[static_cast<std::size_t>(c)], 128, 32));
    }
    for (std::int32_t k = 0; k < 128; ++k) CHECK(rescale_depth(k, 128, 32) == nearest_slice(k, 128, 32));
    DepthMap zero{2, 2, 128, {0, 0, 0, 0}};
    const auto plane = reproject_pseudo(zero, 8);
    for (int c = 0; c < 4; ++c) CHECK(plane[c * 8] == 1.0f);
    DepthMap bad{1, 1, 4, {4}};
    CHECK_THROWS(reproject_pseudo(bad, 4));
    CHECK_THROWS(reproject_pseudo(zero, 0));
  }

  TEST_CASE("depth downsampling averages covered voxels") {
    std::vector<float> col{1, 3, 5, 7, 2, 2, 0, 4};
    const auto half = downsample_depth(col.data(), 1, 1, 8, 4);
    CHECK(half == std::vector<float>{2, 6, 2, 2});
    const auto third = downsample_depth(col.data(), 1, 1, 8, 3);
    // Output voxel 0 covers raw [0, 8/3): 1 + 3 + 5 * 2/3.
    CHECK(third[0] == doctest::Approx((1 + 3 + 5 * 2.0 / 3) * 3 / 8));
    double mass = 0;
    for (float v : third) mass += v * 8.0 / 3;
    CHECK(mass == doctest::Approx(24.0));
    std::vector<float> ones(2 * 3 * 10, 1.0f);
    for (float v : downsample_depth(ones.data(), 2, 3, 10, 4)) CHECK(v == doctest::Approx(1.0f));
  }

  TEST_CASE("frame encodings") {
    RenderConfig r;
    r.height = 2;
    r.width = 2;
    r.raw_depth = 9;
    std::vector<float> vol(36, 0.0f);
    for (int c = 0; c < 4; ++c) vol[static_cast<std::size_t>(c * 9 + 2 * c)] = 1.0f;
    CHECK(encode_frame(vol.data(), r, Representation::st3d, 3) == std::vector<float>{0.0f, 0.25f, 0.5f, 0.75f});
    CHECK(encode_frame(vol.data(), r, Representation::s2d, 3).size() == 4);
    CHECK(encode_frame(vol.data(), r, Representation::st4d, 3).size() == 12);
    const auto ps = encode_frame(vol.data(), r, Representation::ps_st4d, 5);
    CHECK(ps[0 * 5 + 0] == 1.0f);
    CHECK(ps[3 * 5 + 3] == 1.0f);
    CHECK(frame_shape(r, Representation::s3d, 3) == Shape{2, 2, 3});
    CHECK(frame_shape(r, Representation::st3d, 3) == Shape{2, 2});
  }

  TEST_CASE("window counts and labels") {
    CHECK(window_count(10, 6, 0) == 5);
    const auto w4 = window(10, 6, 4);
    CHECK(w4.size() == 1);
    CHECK(w4.back().label == 9);
    const auto w = window(10, 2, 4);
    for (const auto& s : w) CHECK(s.label <= 9);
    CHECK(w.size() == 5);
    CHECK_THROWS_AS(window(5, 4, 2), std::invalid_argument);
    CHECK_THROWS_AS(window(5, 0, 0), std::invalid_argument);
    CHECK(window(3, 3, 0).size() == 1);
  }

  TEST_CASE("hand-enumerated windows, p=2 f=1") {
    // Series of 5: frames (0,1)->label 2, (1,2)->3, (2,3)->4.
    const auto w = window(5, 2, 1);
    REQUIRE(w.size() == 3);
    CHECK(w[0].start == 0);
    CHECK(w[0].label == 2);
    CHECK(w[1].start == 1);
    CHECK(w[1].label == 3);
    CHECK(w[2].start == 2);
    CHECK(w[2].label == 4);
  }

  TEST_CASE("windowed data stays inside experiments") {
    RenderConfig r;
    r.height = r.width = 2;
    ModelConfig cfg;
    cfg.representation = Representation::st3d;
    cfg.height = cfg.width = 2;
    cfg.output_stride = 2;
    cfg.history = 3;
    cfg.horizon = 1;
    WindowedData data(cfg, r);
    data.add(counting_experiment(0, Split::train, 6, 4));
    data.add(counting_experiment(1, Split::train, 5, 4));
    data.add(counting_experiment(2, Split::test, 4, 4));
    CHECK(data.windows(Split::train).size() == (6 - 2 - 1) + (5 - 2 - 1));
    CHECK(data.windows(Split::test).size() == 1);
    CHECK(data.windows(Split::val).empty());

    const auto& refs = data.windows(Split::train);
    const auto x = data.inputs<float>(refs);
    CHECK(x.shape() == Shape{5, 3, 2, 2, 1});
    const auto y = data.labels(refs);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto b = static_cast<std::int64_t>(i);
      const float first = x[b * 12];
      const float last = x[b * 12 + 11];
      // Frames carry 1000 * experiment + t: same experiment across the window.
      CHECK(static_cast<int>(first) / 1000 == static_cast<int>(last) / 1000);
      CHECK(last - first == 2.0f);
      CHECK(y[b] == doctest::Approx(last + 1.0f));
    }

    ModelConfig p1 = cfg;
    p1.history = 1;
    p1.horizon = 0;
    const auto re = data.rewindow(p1);
    CHECK(re.windows(Split::train).size() == 11);
    CHECK(&re.experiments() == &data.experiments());
    CHECK_THROWS_AS(data.add(counting_experiment(3, Split::val, 4, 4)), std::logic_error);
    ModelConfig other = cfg;
    other.representation = Representation::st4d;
    CHECK_THROWS(data.rewindow(other));

    WindowedData fresh(cfg, r);
    CHECK_THROWS(fresh.add(counting_experiment(0, Split::train, 2, 4)));  // shorter than p + f
    ExperimentFrames bad = counting_experiment(0, Split::train, 6, 3);
    CHECK_THROWS(fresh.add(bad));
  }

  TEST_CASE("spatial representations use single frames") {
    RenderConfig r;
    r.height = r.width = 2;
    ModelConfig cfg;
    cfg.representation = Representation::s2d;
    cfg.height = cfg.width = 2;
    cfg.output_stride = 2;
    cfg.history = 6;
    cfg.horizon = 2;
    WindowedData data(cfg, r);
    data.add(counting_experiment(0, Split::val, 5, 4));
    CHECK(data.window_length() == 1);
    CHECK(data.windows(Split::val).size() == 3);
    CHECK(data.inputs<double>(data.windows(Split::val)).shape() == Shape{3, 2, 2, 1});
  }
}
