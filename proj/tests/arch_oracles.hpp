#pragma once

// Closed-form parameter counts for the residual backbones and recurrent cells.

#include <cstdint>
#include <vector>

namespace oracle {

struct Stage {
  std::int64_t cin, cout;
  int stride;
};

// Hand-written block schedules for c=base channels, s_o=16.
inline std::vector<Stage> base_schedule(std::int64_t c) {
  return {{c, c, 1}, {c, 2 * c, 2}, {2 * c, 2 * c, 2}, {2 * c, 4 * c, 2}, {4 * c, 4 * c, 2}};
}
inline std::vector<Stage> deep_schedule(std::int64_t c) {
  return {{c, c, 1},         {c, 2 * c, 2},     {2 * c, 2 * c, 1}, {2 * c, 2 * c, 2}, {2 * c, 2 * c, 1},
          {2 * c, 4 * c, 2}, {4 * c, 4 * c, 1}, {4 * c, 4 * c, 2}, {4 * c, 4 * c, 1}};
}

// taps: full kernel taps; spatial/temporal taps used when factorized.
inline std::int64_t backbone_count(std::int64_t taps, std::int64_t in, std::int64_t c, const std::vector<Stage>& sched,
                            bool fac = false, std::int64_t s_taps = 0, std::int64_t t_taps = 0) {
  auto conv = [&](std::int64_t a, std::int64_t b) { return fac ? s_taps * a * b + t_taps * b * b : taps * a * b; };
  std::int64_t n = taps * in * c;
  for (const auto& s : sched) {
    n += 2 * s.cin + conv(s.cin, s.cout) + 2 * s.cout + conv(s.cout, s.cout);
    if (s.stride != 1 || s.cin != s.cout) n += s.cin * s.cout;
  }
  return n + 2 * sched.back().cout;
}

inline std::int64_t gru_count(std::int64_t in, std::int64_t h, std::int64_t taps) { return 3 * taps * (in * h + h * h) + 10 * h; }
inline std::int64_t lstm_count(std::int64_t in, std::int64_t h, std::int64_t taps) { return 4 * taps * (in * h + h * h) + 16 * h; }

}  // namespace oracle
