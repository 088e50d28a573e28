// include/axvec/det_plot.h

// Copyright 2026  The axvec Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "axvec/metrics.h"

namespace axvec {

/// Inverse standard normal CDF by bisection on erfc; exact to double
/// resolution over the clamped range.
inline double Probit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("probit argument must lie in (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::numbers::sqrt2) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// CSV of the DET points, one row per point, in sweep order.
inline std::string DetCsv(const std::vector<DetPoint>& points) {
  std::ostringstream os;
  os << "threshold,p_fa,p_miss\n";
  char buf[128];
  for (const DetPoint& p : points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", p.threshold, p.p_fa, p.p_miss);
    os << buf;
  }
  return os.str();
}

inline std::string EscapeXml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct DetCurve {
  std::string label;
  std::vector<DetPoint> points;
};

/// Overlay of DET curves on probit axes.  Probabilities are clamped to
/// [kDetAxisMin, kDetAxisMax] so that 0 and 1 land on the plot border.
inline constexpr double kDetAxisMin = 1e-3;
inline constexpr double kDetAxisMax = 0.6;

inline std::string DetSvg(const std::vector<DetCurve>& curves) {
  const double w = 640, h = 640, margin = 70;
  const double lo = Probit(kDetAxisMin), hi = Probit(kDetAxisMax);
  auto axis = [&](double p) {
    return (Probit(std::clamp(p, kDetAxisMin, kDetAxisMax)) - lo) / (hi - lo);
  };
  auto px = [&](double p) { return margin + axis(p) * (w - 2 * margin); };
  auto py = [&](double p) { return h - margin - axis(p) * (h - 2 * margin); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%g\" height=\"%g\" "
                "font-family=\"sans-serif\" font-size=\"12\">\n",
                w, h);
  os << buf;
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double ticks[] = {0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4};
  for (double t : ticks) {
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#ddd\"/>\n"
                  "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#ddd\"/>\n",
                  px(t), py(kDetAxisMin), px(t), py(kDetAxisMax), px(kDetAxisMin), py(t),
                  px(kDetAxisMax), py(t));
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"middle\">%g</text>\n"
                  "<text x=\"%.2f\" y=\"%.2f\" text-anchor=\"end\">%g</text>\n",
                  px(t), h - margin + 18, t * 100, margin - 6, py(t) + 4, t * 100);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf),
                "<rect x=\"%g\" y=\"%g\" width=\"%g\" height=\"%g\" fill=\"none\" "
                "stroke=\"black\"/>\n",
                margin, margin, w - 2 * margin, h - 2 * margin);
  os << buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%g\" y=\"%g\" text-anchor=\"middle\">False alarm probability (%%)"
                "</text>\n<text transform=\"translate(%g,%g) rotate(-90)\" "
                "text-anchor=\"middle\">Miss probability (%%)</text>\n",
                w / 2, h - 25, 22.0, h / 2);
  os << buf;
  for (size_t c = 0; c < curves.size(); ++c) {
    const char* color = kColors[c % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const DetPoint& p : curves[c].points) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", px(p.p_fa), py(p.p_miss));
      os << buf;
    }
    os << "\"/>\n";
    const double ly = margin + 16 + 18 * static_cast<double>(c);
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"%s\" "
                  "stroke-width=\"2\"/>\n<text x=\"%g\" y=\"%g\">",
                  w - margin - 150, ly, w - margin - 125, ly, color, w - margin - 120, ly + 4);
    os << buf << EscapeXml(curves[c].label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace axvec
