#include "icl/canvas.hpp"

#include <algorithm>

namespace icl {

namespace {

struct MarkerInfo {
  Marker m;
  const char* name;
  const char* abbrev;
};

constexpr MarkerInfo kMarkers[] = {
    {Marker::TopLeft, "TOP-LEFT", "TL"},   {Marker::TopRight, "TOP-RIGHT", "TR"},
    {Marker::BottomLeft, "BOTTOM-LEFT", "BL"}, {Marker::BottomRight, "BOTTOM-RIGHT", "BR"},
    {Marker::Left, "LEFT", "L"},           {Marker::Right, "RIGHT", "R"},
    {Marker::Top, "TOP", "T"},             {Marker::Bottom, "BOTTOM", "B"},
    {Marker::Single, "SINGLE", "S"},
};

} // namespace

std::string marker_name(Marker m) {
  for (const auto& info : kMarkers)
    if (info.m == m) return info.name;
  throw InvalidArgument("unknown marker enum value");
}

std::string marker_token(Marker m) { return "[" + marker_name(m) + "]"; }

Marker marker_from_name(const std::string& s) {
  std::string t = s;
  if (t.size() >= 2 && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::toupper(c); });
  for (const auto& info : kMarkers)
    if (t == info.name || t == info.abbrev) return info.m;
  throw InvalidArgument("unknown marker '" + s + "'");
}

int PanelLayout::index_of(Marker m) const {
  for (size_t i = 0; i < markers.size(); ++i)
    if (markers[i] == m) return int(i);
  throw InvalidArgument("marker " + marker_name(m) + " not in layout " + grid_name());
}

PanelLayout PanelLayout::make(const std::string& grid, int panel_h, int panel_w) {
  ICL_CHECK(panel_h > 0 && panel_w > 0, "panel size must be positive");
  PanelLayout l;
  l.panel_h = panel_h;
  l.panel_w = panel_w;
  if (grid == "2x2") {
    l.rows = 2;
    l.cols = 2;
    l.markers = {Marker::TopLeft, Marker::TopRight, Marker::BottomLeft, Marker::BottomRight};
  } else if (grid == "1x2") {
    l.rows = 1;
    l.cols = 2;
    l.markers = {Marker::Left, Marker::Right};
  } else if (grid == "2x1") {
    l.rows = 2;
    l.cols = 1;
    l.markers = {Marker::Top, Marker::Bottom};
  } else if (grid == "1x1") {
    l.rows = 1;
    l.cols = 1;
    l.markers = {Marker::Single};
  } else {
    throw InvalidArgument("unsupported layout '" + grid + "' (supported: 2x2, 1x2, 2x1, 1x1)");
  }
  return l;
}

std::string PanelLayout::grid_name() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

Canvas Canvas::zeros(int h, int w) {
  ICL_CHECK(h > 0 && w > 0, "canvas dims must be positive");
  return Canvas{h, w, Tensor::zeros({3, h, w})};
}

Canvas Canvas::from_tensor(Tensor t) {
  ICL_CHECK(t.rank() == 3 && t.dim(0) == 3,
            "canvas tensor must be [3, h, w], got " << shape_str(t.shape()));
  Canvas c;
  c.height = int(t.dim(1));
  c.width = int(t.dim(2));
  c.pixels = std::move(t);
  return c;
}

void PanelMask::validate(bool require_nonempty) const {
  if (require_nonempty) ICL_CHECK(!masked.empty(), "panel mask is empty");
  for (Marker m : masked) layout.index_of(m); // throws on unknown marker
}

Canvas compose(const std::vector<Canvas>& panels, const PanelLayout& layout) {
  ICL_CHECK(int(panels.size()) == layout.panel_count(),
            "compose: " << panels.size() << " panels for a " << layout.grid_name() << " layout");
  const int ph = layout.panel_h, pw = layout.panel_w;
  for (const auto& p : panels) {
    ICL_CHECK(p.height == ph && p.width == pw, "compose: panel is " << p.height << "x" << p.width
                                                                    << ", layout wants " << ph
                                                                    << "x" << pw);
  }
  Canvas out = Canvas::zeros(layout.canvas_h(), layout.canvas_w());
  real* dst = out.pixels.value_mut().data();
  const int H = out.height, W = out.width;
  for (int i = 0; i < layout.panel_count(); ++i) {
    const int r0 = (i / layout.cols) * ph;
    const int c0 = (i % layout.cols) * pw;
    const real* src = panels[size_t(i)].pixels.value().data();
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < ph; ++y)
        std::copy(src + (int64_t(c) * ph + y) * pw, src + (int64_t(c) * ph + y + 1) * pw,
                  dst + (int64_t(c) * H + r0 + y) * W + c0);
  }
  return out;
}

std::vector<Canvas> split(const Canvas& canvas, const PanelLayout& layout) {
  ICL_CHECK(canvas.height == layout.canvas_h() && canvas.width == layout.canvas_w(),
            "split: canvas " << canvas.height << "x" << canvas.width << " does not match layout "
                             << layout.grid_name() << " of " << layout.panel_h << "x"
                             << layout.panel_w << " panels");
  const int ph = layout.panel_h, pw = layout.panel_w;
  const int H = canvas.height, W = canvas.width;
  const real* src = canvas.pixels.value().data();
  std::vector<Canvas> panels;
  panels.reserve(size_t(layout.panel_count()));
  for (int i = 0; i < layout.panel_count(); ++i) {
    const int r0 = (i / layout.cols) * ph;
    const int c0 = (i % layout.cols) * pw;
    Canvas p = Canvas::zeros(ph, pw);
    real* dst = p.pixels.value_mut().data();
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < ph; ++y)
        std::copy(src + (int64_t(c) * H + r0 + y) * W + c0,
                  src + (int64_t(c) * H + r0 + y) * W + c0 + pw,
                  dst + (int64_t(c) * ph + y) * pw);
    panels.push_back(std::move(p));
  }
  return panels;
}

Tensor mask_region(const PanelMask& mask) {
  mask.validate(/*require_nonempty=*/false);
  const PanelLayout& l = mask.layout;
  const int H = l.canvas_h(), W = l.canvas_w();
  Tensor field = Tensor::zeros({3, H, W});
  real* dst = field.value_mut().data();
  for (Marker m : mask.masked) {
    const int i = l.index_of(m);
    const int r0 = (i / l.cols) * l.panel_h;
    const int c0 = (i % l.cols) * l.panel_w;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < l.panel_h; ++y)
        std::fill(dst + (int64_t(c) * H + r0 + y) * W + c0,
                  dst + (int64_t(c) * H + r0 + y) * W + c0 + l.panel_w, real(1));
  }
  return field;
}

} // namespace icl
