#include "oct4d/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include "oct4d/metrics.hpp"

namespace oct4d {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

// Maps a data range onto a pixel box and draws axes with a few ticks.
struct Panel {
  double x0, y0, w, h;
  double lo_x, hi_x, lo_y, hi_y;

  double px(double v) const { return x0 + (v - lo_x) / (hi_x - lo_x) * w; }
  double py(double v) const { return y0 + h - (v - lo_y) / (hi_y - lo_y) * h; }

  void axes(std::ostringstream& os, const std::string& xlabel, const std::string& ylabel) const {
    os << "<rect x='" << x0 << "' y='" << y0 << "' width='" << w << "' height='" << h
       << "' fill='none' stroke='#333'/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double vx = lo_x + (hi_x - lo_x) * i / 4.0;
      const double vy = lo_y + (hi_y - lo_y) * i / 4.0;
      os << "<text x='" << px(vx) << "' y='" << y0 + h + 16 << "' font-size='11' text-anchor='middle'>" << num(vx)
         << "</text>\n";
      os << "<text x='" << x0 - 6 << "' y='" << py(vy) + 4 << "' font-size='11' text-anchor='end'>" << num(vy)
         << "</text>\n";
    }
    os << "<text x='" << x0 + w / 2 << "' y='" << y0 + h + 34 << "' font-size='12' text-anchor='middle'>"
       << escape(xlabel) << "</text>\n";
    os << "<text transform='translate(" << x0 - 44 << "," << y0 + h / 2
       << ") rotate(-90)' font-size='12' text-anchor='middle'>" << escape(ylabel) << "</text>\n";
  }
};

void pad_range(double& lo, double& hi) {
  if (hi <= lo) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double m = 0.05 * (hi - lo);
  lo -= m;
  hi += m;
}

std::string header(int width, int height, const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height << "' viewBox='0 0 "
     << width << " " << height << "'>\n<rect width='100%' height='100%' fill='white'/>\n"
     << "<text x='" << width / 2 << "' y='22' font-size='15' text-anchor='middle'>" << escape(title) << "</text>\n";
  return os.str();
}

}  // namespace

std::string regression_svg(std::span<const double> pred, std::span<const double> target, const std::string& title) {
  if (pred.size() != target.size() || pred.size() < 2) throw std::invalid_argument("regression plot needs >= 2 pairs");
  std::ostringstream os;
  os << header(900, 420, title);

  double lo = std::min(*std::min_element(pred.begin(), pred.end()), *std::min_element(target.begin(), target.end()));
  double hi = std::max(*std::max_element(pred.begin(), pred.end()), *std::max_element(target.begin(), target.end()));
  pad_range(lo, hi);
  const Panel scatter{70, 40, 330, 320, lo, hi, lo, hi};
  scatter.axes(os, "true force (mN)", "predicted force (mN)");
  os << "<line x1='" << scatter.px(lo) << "' y1='" << scatter.py(lo) << "' x2='" << scatter.px(hi) << "' y2='"
     << scatter.py(hi) << "' stroke='#999' stroke-dasharray='4 3'/>\n";
  for (std::size_t i = 0; i < pred.size(); ++i) {
    os << "<circle cx='" << num(scatter.px(target[i])) << "' cy='" << num(scatter.py(pred[i]))
       << "' r='1.8' fill='#1f77b4' fill-opacity='0.5'/>\n";
  }
  const LinearFit fit = linreg_r2(pred, target);
  os << "<line x1='" << scatter.px(lo) << "' y1='" << scatter.py(fit.slope * lo + fit.intercept) << "' x2='"
     << scatter.px(hi) << "' y2='" << scatter.py(fit.slope * hi + fit.intercept) << "' stroke='#d62728'/>\n";
  os << "<text x='" << scatter.x0 + 8 << "' y='" << scatter.y0 + 16 << "' font-size='12'>R^2 = " << num(fit.r2)
     << "</text>\n";

  std::vector<double> res(pred.size());
  for (std::size_t i = 0; i < res.size(); ++i) res[i] = pred[i] - target[i];
  double rlo = *std::min_element(res.begin(), res.end());
  double rhi = *std::max_element(res.begin(), res.end());
  if (rhi <= rlo) {
    rlo -= 1.0;
    rhi += 1.0;
  }
  constexpr int kBins = 30;
  std::vector<int> counts(kBins, 0);
  for (double r : res) {
    const int b = std::min(kBins - 1, static_cast<int>((r - rlo) / (rhi - rlo) * kBins));
    ++counts[static_cast<std::size_t>(b)];
  }
  const double top = *std::max_element(counts.begin(), counts.end());
  const Panel hist{530, 40, 330, 320, rlo, rhi, 0.0, top * 1.05};
  hist.axes(os, "residual (mN)", "count");
  const double bw = (rhi - rlo) / kBins;
  for (int b = 0; b < kBins; ++b) {
    const double x = rlo + b * bw;
    const double c = counts[static_cast<std::size_t>(b)];
    os << "<rect x='" << num(hist.px(x)) << "' y='" << num(hist.py(c)) << "' width='"
       << num(hist.px(x + bw) - hist.px(x)) << "' height='" << num(hist.py(0) - hist.py(c))
       << "' fill='#1f77b4' stroke='white' stroke-width='0.5'/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string sweep_svg(const std::vector<SweepPoint>& points, const std::string& title) {
  if (points.empty()) throw std::invalid_argument("sweep plot needs at least one point");
  std::map<int, std::vector<SweepPoint>> lines;
  double lo_f = points.front().horizon, hi_f = lo_f;
  double lo_m = points.front().mae, hi_m = lo_m;
  for (const auto& p : points) {
    lines[p.history].push_back(p);
    lo_f = std::min<double>(lo_f, p.horizon);
    hi_f = std::max<double>(hi_f, p.horizon);
    lo_m = std::min(lo_m, p.mae);
    hi_m = std::max(hi_m, p.mae);
  }
  pad_range(lo_f, hi_f);
  pad_range(lo_m, hi_m);
  std::ostringstream os;
  os << header(620, 420, title);
  const Panel panel{80, 40, 400, 320, lo_f, hi_f, lo_m, hi_m};
  panel.axes(os, "prediction horizon f", "MAE (mN)");
  std::size_t k = 0;
  for (auto& [p, pts] : lines) {
    std::sort(pts.begin(), pts.end(), [](const SweepPoint& a, const SweepPoint& b) { return a.horizon < b.horizon; });
    const char* color = kPalette[k % std::size(kPalette)];
    os << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
    for (const auto& pt : pts) os << num(panel.px(pt.horizon)) << "," << num(panel.py(pt.mae)) << " ";
    os << "'/>\n";
    for (const auto& pt : pts) {
      os << "<circle cx='" << num(panel.px(pt.horizon)) << "' cy='" << num(panel.py(pt.mae)) << "' r='3' fill='"
         << color << "'/>\n";
    }
    os << "<text x='" << 500 << "' y='" << 60 + 18 * static_cast<double>(k) << "' font-size='12' fill='" << color
       << "'>p = " << p << "</text>\n";
    ++k;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace oct4d
