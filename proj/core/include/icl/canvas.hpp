#pragma once

#include <set>
#include <string>
#include <vector>

#include "icl/tensor.hpp"

namespace icl {

// Panel position markers, matching the merged-prompt grammar. The token layer
// renders them bracketed ("[TOP-LEFT]"); JSON and filenames use the bare name.
enum class Marker {
  TopLeft,
  TopRight,
  BottomLeft,
  BottomRight,
  Left,
  Right,
  Top,
  Bottom,
  Single,
};

std::string marker_name(Marker m);            // "TOP-LEFT"
std::string marker_token(Marker m);           // "[TOP-LEFT]"
Marker marker_from_name(const std::string&);  // accepts "TOP-LEFT", "[TOP-LEFT]", "TL"

// Geometry of the composed large image: a rows x cols grid of equally sized
// panels, one marker per cell in row-major order.
struct PanelLayout {
  int rows = 0;
  int cols = 0;
  int panel_h = 0;
  int panel_w = 0;
  std::vector<Marker> markers;

  int panel_count() const { return rows * cols; }
  int canvas_h() const { return rows * panel_h; }
  int canvas_w() const { return cols * panel_w; }
  int index_of(Marker m) const; // throws on unknown marker

  // Supported grids: "2x2", "1x2", "2x1", "1x1" with their fixed marker sets.
  static PanelLayout make(const std::string& grid, int panel_h = 32, int panel_w = 32);
  std::string grid_name() const; // "2x2"

  bool operator==(const PanelLayout&) const = default;
};

// One image: 3 channels, channel-major pixels in [-1, 1].
struct Canvas {
  int height = 0;
  int width = 0;
  Tensor pixels; // shape [3, height, width]

  static Canvas zeros(int h, int w);
  static Canvas from_tensor(Tensor t); // expects [3, h, w]
  int64_t numel() const { return int64_t(3) * height * width; }
};

// Panels selected for masking/generation on a layout.
struct PanelMask {
  PanelLayout layout;
  std::set<Marker> masked;

  void validate(bool require_nonempty) const;
};

// Row-major tiling of panels into one canvas. Panel i lands in cell i.
Canvas compose(const std::vector<Canvas>& panels, const PanelLayout& layout);

// Exact inverse of compose.
std::vector<Canvas> split(const Canvas& canvas, const PanelLayout& layout);

// 0/1 field over canvas pixels, 1 exactly on the masked panels' pixels.
// Shape [3, H, W] so it can be combined arithmetically with canvases.
Tensor mask_region(const PanelMask& mask);

} // namespace icl
