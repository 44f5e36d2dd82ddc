#include "miltremor/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace miltremor::svg {

namespace {

constexpr int kWidth = 900;
constexpr int kPanelHeight = 150;
constexpr int kMarginX = 10;
constexpr int kMarginY = 24;
const char* kAxisColor[3] = {"#c0392b", "#27ae60", "#2980b9"};

}  // namespace

std::string render_segments(const std::vector<Panel>& panels) {
  const int height = static_cast<int>(panels.size()) * kPanelHeight + kMarginY;
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\">\n",
                kWidth, height, kWidth, height);
  out += buf;
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (size_t p = 0; p < panels.size(); ++p) {
    const Panel& panel = panels[p];
    const int top = static_cast<int>(p) * kPanelHeight + kMarginY;
    const int plot_h = kPanelHeight - 30;
    const int plot_w = kWidth - 2 * kMarginX;

    float lo = 0.0f, hi = 0.0f;
    for (int a = 0; a < 3; ++a)
      for (int i = 0; i < panel.samples; ++i) {
        const float v = panel.raw[a * panel.samples + i];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    if (hi - lo < 1e-6f) hi = lo + 1e-6f;

    std::snprintf(buf, sizeof buf,
                  "<text x=\"%d\" y=\"%d\" font-family=\"monospace\" font-size=\"12\">%s</text>\n",
                  kMarginX, top - 6, panel.title.c_str());
    out += buf;
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"none\" "
                  "stroke=\"#ccc\"/>\n",
                  kMarginX, top, plot_w, plot_h);
    out += buf;

    for (int a = 0; a < 3; ++a) {
      out += "<polyline fill=\"none\" stroke=\"";
      out += kAxisColor[a];
      out += "\" stroke-width=\"1\" points=\"";
      for (int i = 0; i < panel.samples; ++i) {
        const float v = panel.raw[a * panel.samples + i];
        const double px = kMarginX + static_cast<double>(i) / (panel.samples - 1) * plot_w;
        const double py = top + (1.0 - (v - lo) / (hi - lo)) * plot_h;
        std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px, py);
        out += buf;
      }
      out += "\"/>\n";
    }
  }
  out += "</svg>\n";
  return out;
}

}  // namespace miltremor::svg
