#pragma once

// Minimal SVG line rendering for raw acceleration segments.

#include <string>
#include <vector>

namespace miltremor::svg {

struct Panel {
  std::string title;
  std::vector<float> raw;  // 3 x N, axis-major
  int samples = 0;
};

// One panel per segment; three polylines (x, y, z axes) per panel.
std::string render_segments(const std::vector<Panel>& panels);

}  // namespace miltremor::svg
