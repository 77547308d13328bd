#pragma once

#include <span>
#include <string>
#include <vector>

namespace oct4d {

// Predicted vs. true force scatter with the least-squares line, next to a
// histogram of residuals. Returns a standalone SVG document.
std::string regression_svg(std::span<const double> pred, std::span<const double> target, const std::string& title);

struct SweepPoint {
  int history = 0;
  int horizon = 0;
  double mae = 0.0;
};

// MAE against prediction horizon, one line per history length.
std::string sweep_svg(const std::vector<SweepPoint>& points, const std::string& title);

}  // namespace oct4d
