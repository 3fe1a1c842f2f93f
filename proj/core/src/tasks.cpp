#include "icl/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

namespace icl {

namespace {

const std::vector<std::string> kColorNames = {"red",  "orange", "yellow", "green",
                                              "cyan", "blue",   "purple", "magenta"};

// Canonical hues, degrees.
const std::map<std::string, real> kColorHues = {
    {"red", 0},    {"orange", 30}, {"yellow", 60},  {"green", 120},
    {"cyan", 180}, {"blue", 240},  {"purple", 270}, {"magenta", 300},
};

const std::vector<std::string> kPositions = {"tl", "tc", "tr", "cl", "cc",
                                             "cr", "bl", "bc", "br"};

// Fixed-seed 8x8 lattice for the storm value-noise field, bilinear upsampled
// to the panel. One lattice for every panel, by design: the transform must be
// deterministic so effect_fidelity can replay it.
const std::vector<real>& storm_lattice() {
  static std::vector<real> lattice = [] {
    Rng rng(0x1CE0001);
    std::vector<real> l(64);
    for (auto& v : l) v = real(rng.uniform()) * 2 - 1;
    return l;
  }();
  return lattice;
}

real storm_noise(int y, int x, int h, int w) {
  const auto& l = storm_lattice();
  real fy = (h > 1) ? real(y) / real(h - 1) * 7 : 0;
  real fx = (w > 1) ? real(x) / real(w - 1) * 7 : 0;
  int y0 = int(fy), x0 = int(fx);
  int y1 = std::min(y0 + 1, 7), x1 = std::min(x0 + 1, 7);
  real ty = fy - real(y0), tx = fx - real(x0);
  real a = l[size_t(y0 * 8 + x0)] * (1 - tx) + l[size_t(y0 * 8 + x1)] * tx;
  real b = l[size_t(y1 * 8 + x0)] * (1 - tx) + l[size_t(y1 * 8 + x1)] * tx;
  return a * (1 - ty) + b * ty;
}

void set_pixel(Canvas& c, int y, int x, const Rgb& rgb) {
  real* px = c.pixels.value_mut().data();
  const int64_t plane = int64_t(c.height) * c.width;
  const int64_t at = int64_t(y) * c.width + x;
  px[at] = rgb.r * 2 - 1;
  px[plane + at] = rgb.g * 2 - 1;
  px[2 * plane + at] = rgb.b * 2 - 1;
}

Rgb get_pixel(const Canvas& c, int y, int x) {
  const real* px = c.pixels.value().data();
  const int64_t plane = int64_t(c.height) * c.width;
  const int64_t at = int64_t(y) * c.width + x;
  return Rgb{(px[at] + 1) / 2, (px[plane + at] + 1) / 2, (px[2 * plane + at] + 1) / 2};
}

void cell_center(const Canvas& block, int cell, int* cx, int* cy) {
  ICL_CHECK(cell >= 0 && cell < 9, "grid cell " << cell << " out of range");
  const int row = cell / 3, col = cell % 3;
  *cx = int(std::lround((col + 0.5) * block.width / 3.0));
  *cy = int(std::lround((row + 0.5) * block.height / 3.0));
}

int position_cell(const std::string& pos) {
  auto it = std::find(kPositions.begin(), kPositions.end(), pos);
  ICL_CHECK(it != kPositions.end(), "unknown position '" << pos << "'");
  return int(it - kPositions.begin());
}

std::string cell_position(int cell) { return kPositions.at(size_t(cell)); }

// Foreground predicate shared by draw_shape and the identity templates.
bool shape_covers(ShapeKind shape, int dx, int dy) {
  switch (shape) {
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= 36;
    case ShapeKind::Square:
      return dx >= -6 && dx <= 5 && dy >= -6 && dy <= 5;
    case ShapeKind::Triangle: {
      if (dy < -6 || dy > 5) return false;
      int r = dy + 6;
      int half = (r + 1) / 2;
      return dx >= -half && dx <= half;
    }
    case ShapeKind::Cross:
      return (dx >= -2 && dx <= 1 && dy >= -6 && dy <= 5) ||
             (dy >= -2 && dy <= 1 && dx >= -6 && dx <= 5);
  }
  return false;
}

} // namespace

std::string task_name(TaskKind t) {
  switch (t) {
    case TaskKind::Palette: return "palette";
    case TaskKind::Identity: return "identity";
    case TaskKind::Effect: return "effect";
  }
  throw InvalidArgument("unknown task enum value");
}

TaskKind task_from_name(const std::string& s) {
  if (s == "palette") return TaskKind::Palette;
  if (s == "identity") return TaskKind::Identity;
  if (s == "effect") return TaskKind::Effect;
  throw InvalidArgument("unknown task '" + s + "'");
}

ShapeKind shape_from_name(const std::string& s) {
  if (s == "circle") return ShapeKind::Circle;
  if (s == "square") return ShapeKind::Square;
  if (s == "triangle") return ShapeKind::Triangle;
  if (s == "cross") return ShapeKind::Cross;
  throw InvalidArgument("unknown shape '" + s + "'");
}

std::string shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Cross: return "cross";
  }
  throw InvalidArgument("unknown shape enum value");
}

const std::vector<std::string>& color_names() { return kColorNames; }

Rgb color_rgb(const std::string& name) {
  return hsv_to_rgb(Hsv{color_hue(name), 1, 1});
}

real color_hue(const std::string& name) {
  auto it = kColorHues.find(name);
  ICL_CHECK(it != kColorHues.end(), "unknown color '" << name << "'");
  return it->second;
}

const std::map<std::string, IdentitySignature>& identity_signatures() {
  static const std::map<std::string, IdentitySignature> sigs = {
      {"id0", {ShapeKind::Circle, "red"}},    {"id1", {ShapeKind::Square, "blue"}},
      {"id2", {ShapeKind::Triangle, "green"}}, {"id3", {ShapeKind::Cross, "yellow"}},
      {"id4", {ShapeKind::Circle, "purple"}},  {"id5", {ShapeKind::Square, "orange"}},
      {"id6", {ShapeKind::Triangle, "cyan"}},  {"id7", {ShapeKind::Cross, "magenta"}},
  };
  return sigs;
}

void TaskSpec::validate() const {
  if (kind == TaskKind::Effect) {
    ICL_CHECK(layout.panel_count() == 2, "effect task needs a two-panel layout, got "
                                             << layout.grid_name());
  }
  ICL_CHECK(layout.panel_count() >= 1, "invalid layout");
}

void ImageSetRecord::finalize(int l_text) {
  canvas = compose(panels, layout);
  tokens = tokenize(prompt, layout, l_text);
}

Canvas blank_panel(int h, int w) {
  Canvas c = Canvas::zeros(h, w);
  real* px = c.pixels.value_mut().data();
  const real v = kBackgroundGray * 2 - 1;
  std::fill(px, px + c.numel(), v);
  return c;
}

void draw_shape(Canvas& block, ShapeKind shape, const Rgb& color, int cell) {
  int cx = 0, cy = 0;
  cell_center(block, cell, &cx, &cy);
  for (int y = 0; y < block.height; ++y)
    for (int x = 0; x < block.width; ++x)
      if (shape_covers(shape, x - cx, y - cy)) set_pixel(block, y, x, color);
}

Canvas apply_effect(const Canvas& panel, const std::string& effect) {
  if (effect == "invert") {
    Canvas out = Canvas::zeros(panel.height, panel.width);
    const real* src = panel.pixels.value().data();
    real* dst = out.pixels.value_mut().data();
    for (int64_t i = 0; i < panel.numel(); ++i) dst[i] = -src[i];
    return out;
  }
  if (effect == "storm") {
    Canvas out = Canvas::zeros(panel.height, panel.width);
    for (int y = 0; y < panel.height; ++y) {
      for (int x = 0; x < panel.width; ++x) {
        Hsv hsv = rgb_to_hsv(get_pixel(panel, y, x));
        hsv.s *= real(0.6);
        hsv.v = std::clamp(hsv.v + real(0.35) * storm_noise(y, x, panel.height, panel.width),
                           real(0), real(1));
        set_pixel(out, y, x, hsv_to_rgb(hsv));
      }
    }
    return out;
  }
  throw InvalidArgument("unknown effect '" + effect + "'");
}

// Draw order per set (fixed, part of dataset determinism): task-level
// attributes first, then per-panel attributes in panel order.
ImageSetRecord gen_set(const TaskSpec& task, Rng& rng) {
  task.validate();
  ImageSetRecord rec;
  rec.layout = task.layout;
  rec.task = task_name(task.kind);
  const int n = task.layout.panel_count();
  const int ph = task.layout.panel_h, pw = task.layout.panel_w;

  switch (task.kind) {
    case TaskKind::Palette: {
      const std::string color = kColorNames[rng.uniform_index(kColorNames.size())];
      rec.prompt.overall = {{Attr::Task, "palette"}, {Attr::Color, color}};
      for (int i = 0; i < n; ++i) {
        auto shape = ShapeKind(rng.uniform_index(4));
        int cell = int(rng.uniform_index(9));
        Canvas p = blank_panel(ph, pw);
        draw_shape(p, shape, color_rgb(color), cell);
        rec.panels.push_back(std::move(p));
        rec.prompt.panels.emplace_back(
            task.layout.markers[size_t(i)],
            std::map<Attr, std::string>{{Attr::Shape, shape_name(shape)},
                                        {Attr::Pos, cell_position(cell)}});
      }
      break;
    }
    case TaskKind::Identity: {
      const auto& sigs = identity_signatures();
      auto it = sigs.begin();
      std::advance(it, long(rng.uniform_index(sigs.size())));
      rec.prompt.overall = {{Attr::Task, "identity"}, {Attr::Id, it->first}};
      for (int i = 0; i < n; ++i) {
        int cell = int(rng.uniform_index(9));
        Canvas p = blank_panel(ph, pw);
        draw_shape(p, it->second.shape, color_rgb(it->second.color), cell);
        rec.panels.push_back(std::move(p));
        rec.prompt.panels.emplace_back(
            task.layout.markers[size_t(i)],
            std::map<Attr, std::string>{{Attr::Pos, cell_position(cell)}});
      }
      break;
    }
    case TaskKind::Effect: {
      const std::string effect = rng.uniform() < 0.5 ? "storm" : "invert";
      rec.prompt.overall = {{Attr::Task, "effect"}, {Attr::Effect, effect}};
      Canvas scene = blank_panel(ph, pw);
      const int count = 2 + int(rng.uniform_index(2)); // 2-3 primitives
      std::vector<int> cells = {0, 1, 2, 3, 4, 5, 6, 7, 8};
      for (int s = 0; s < count; ++s) {
        auto shape = ShapeKind(rng.uniform_index(4));
        const std::string color = kColorNames[rng.uniform_index(kColorNames.size())];
        size_t pick = rng.uniform_index(cells.size());
        int cell = cells[pick];
        cells.erase(cells.begin() + long(pick));
        draw_shape(scene, shape, color_rgb(color), cell);
      }
      rec.panels.push_back(scene);
      rec.panels.push_back(apply_effect(scene, effect));
      for (int i = 0; i < n; ++i)
        rec.prompt.panels.emplace_back(task.layout.markers[size_t(i)],
                                       std::map<Attr, std::string>{});
      break;
    }
  }
  rec.finalize();
  return rec;
}

ImageSetRecord gen_corpus_set(Rng& rng) {
  ImageSetRecord rec;
  const double layout_draw = rng.uniform();
  if (layout_draw < 0.5) {
    rec.layout = PanelLayout::make("1x1");
  } else if (layout_draw < 0.6667) {
    rec.layout = PanelLayout::make("2x2");
  } else if (layout_draw < 0.8333) {
    rec.layout = PanelLayout::make("1x2");
  } else {
    rec.layout = PanelLayout::make("2x1");
  }
  rec.task = "mixed";
  const int n = rec.layout.panel_count();

  // At most one identity-flavored panel per set keeps the one-identity-tag
  // grammar rule.
  int identity_panel = -1;
  if (rng.uniform() < 0.15) identity_panel = int(rng.uniform_index(uint64_t(n)));

  for (int i = 0; i < n; ++i) {
    Canvas p = blank_panel(rec.layout.panel_h, rec.layout.panel_w);
    std::map<Attr, std::string> clause;
    if (i == identity_panel) {
      const auto& sigs = identity_signatures();
      auto it = sigs.begin();
      std::advance(it, long(rng.uniform_index(sigs.size())));
      int cell = int(rng.uniform_index(9));
      draw_shape(p, it->second.shape, color_rgb(it->second.color), cell);
      clause[Attr::Id] = it->first;
      clause[Attr::Pos] = cell_position(cell);
    } else {
      auto shape = ShapeKind(rng.uniform_index(4));
      const std::string color = kColorNames[rng.uniform_index(kColorNames.size())];
      int cell = int(rng.uniform_index(9));
      draw_shape(p, shape, color_rgb(color), cell);
      clause[Attr::Shape] = shape_name(shape);
      if (rng.uniform() >= 0.1) clause[Attr::Color] = color;
      if (rng.uniform() >= 0.1) clause[Attr::Pos] = cell_position(cell);
      if (rng.uniform() < 0.2) {
        const std::string effect = rng.uniform() < 0.5 ? "storm" : "invert";
        p = apply_effect(p, effect);
        clause[Attr::Effect] = effect;
      }
    }
    rec.panels.push_back(std::move(p));
    rec.prompt.panels.emplace_back(rec.layout.markers[size_t(i)], std::move(clause));
  }
  rec.finalize();
  return rec;
}

// ---- metrics -------------------------------------------------------------------

Hsv rgb_to_hsv(const Rgb& c) {
  const real mx = std::max({c.r, c.g, c.b});
  const real mn = std::min({c.r, c.g, c.b});
  const real d = mx - mn;
  Hsv out;
  out.v = mx;
  out.s = mx > 0 ? d / mx : 0;
  if (d <= 0) {
    out.h = 0;
  } else if (mx == c.r) {
    out.h = 60 * std::fmod((c.g - c.b) / d + 6, real(6));
  } else if (mx == c.g) {
    out.h = 60 * ((c.b - c.r) / d + 2);
  } else {
    out.h = 60 * ((c.r - c.g) / d + 4);
  }
  return out;
}

Rgb hsv_to_rgb(const Hsv& c) {
  const real h = std::fmod(std::fmod(c.h, real(360)) + 360, real(360)) / 60;
  const int i = int(h) % 6;
  const real f = h - real(int(h));
  const real p = c.v * (1 - c.s);
  const real q = c.v * (1 - c.s * f);
  const real t = c.v * (1 - c.s * (1 - f));
  switch (i) {
    case 0: return {c.v, t, p};
    case 1: return {q, c.v, p};
    case 2: return {p, c.v, t};
    case 3: return {p, q, c.v};
    case 4: return {t, p, c.v};
    default: return {c.v, p, q};
  }
}

real hue_distance(real a, real b) {
  real d = std::fabs(std::fmod(a - b + 540, real(360)) - 180);
  return 180 - d;
}

std::optional<real> mean_hue(const Canvas& panel) {
  double sx = 0, sy = 0;
  int64_t count = 0;
  for (int y = 0; y < panel.height; ++y) {
    for (int x = 0; x < panel.width; ++x) {
      Hsv hsv = rgb_to_hsv(get_pixel(panel, y, x));
      if (hsv.s > real(0.2) && hsv.v > real(0.2)) {
        double rad = double(hsv.h) * M_PI / 180.0;
        sx += std::cos(rad);
        sy += std::sin(rad);
        ++count;
      }
    }
  }
  if (count == 0) return std::nullopt;
  double h = std::atan2(sy, sx) * 180.0 / M_PI;
  if (h < 0) h += 360.0;
  return real(h);
}

real hue_consistency(const std::vector<Canvas>& panels) {
  ICL_CHECK(panels.size() >= 2, "hue_consistency needs at least 2 panels");
  std::vector<real> hues;
  for (size_t i = 0; i < panels.size(); ++i) {
    auto h = mean_hue(panels[i]);
    ICL_CHECK(h.has_value(),
              "hue_consistency: panel " << i << " has no qualifying pixels (metric undefined)");
    hues.push_back(*h);
  }
  real worst = 0;
  for (size_t i = 0; i < hues.size(); ++i)
    for (size_t j = i + 1; j < hues.size(); ++j)
      worst = std::max(worst, hue_distance(hues[i], hues[j]));
  return worst;
}

IdentityScore identity_rate(const std::vector<Canvas>& panels, real confidence_threshold) {
  ICL_CHECK(!panels.empty(), "identity_rate: no panels");
  const int h = panels[0].height, w = panels[0].width;

  struct Template {
    std::string id;
    std::vector<int64_t> fg; // foreground offsets within a plane
    std::vector<real> vals;  // rgb over the mask, mean-ready
  };
  static std::mutex cache_mutex;
  static std::map<std::pair<int, int>, std::vector<Template>> cache;
  std::lock_guard<std::mutex> lock(cache_mutex);
  auto& templates = cache[{h, w}];
  if (templates.empty()) {
    for (const auto& [id, sig] : identity_signatures()) {
      for (int cell = 0; cell < 9; ++cell) {
        Canvas t = blank_panel(h, w);
        draw_shape(t, sig.shape, color_rgb(sig.color), cell);
        Template tpl;
        tpl.id = id;
        const real bg = kBackgroundGray * 2 - 1;
        const real* px = t.pixels.value().data();
        const int64_t plane = int64_t(h) * w;
        for (int64_t i = 0; i < plane; ++i) {
          if (px[i] != bg || px[plane + i] != bg || px[2 * plane + i] != bg) tpl.fg.push_back(i);
        }
        if (tpl.fg.empty()) continue;
        for (int c = 0; c < 3; ++c)
          for (int64_t i : tpl.fg) tpl.vals.push_back(px[c * plane + i]);
        templates.push_back(std::move(tpl));
      }
    }
  }

  auto ncc = [&](const Canvas& panel, const Template& tpl) -> std::optional<real> {
    const real* px = panel.pixels.value().data();
    const int64_t plane = int64_t(h) * w;
    const size_t m = tpl.fg.size() * 3;
    double pa = 0, pb = 0;
    std::vector<real> a(m);
    size_t k = 0;
    for (int c = 0; c < 3; ++c)
      for (int64_t i : tpl.fg) a[k++] = px[c * plane + i];
    for (size_t i = 0; i < m; ++i) {
      pa += a[i];
      pb += tpl.vals[i];
    }
    const double ma = pa / double(m), mb = pb / double(m);
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < m; ++i) {
      const double xa = a[i] - ma, xb = tpl.vals[i] - mb;
      num += xa * xb;
      da += xa * xa;
      db += xb * xb;
    }
    if (da < 1e-12 || db < 1e-12) return std::nullopt; // no usable variation
    return real(num / std::sqrt(da * db));
  };

  std::vector<std::string> best_ids;
  IdentityScore score;
  score.min_confidence = 1;
  for (size_t p = 0; p < panels.size(); ++p) {
    ICL_CHECK(panels[p].height == h && panels[p].width == w,
              "identity_rate: panel dims differ");
    real best = -2;
    std::string best_id;
    bool any = false;
    for (const auto& tpl : templates) {
      auto c = ncc(panels[p], tpl);
      if (!c) continue;
      any = true;
      if (*c > best) {
        best = *c;
        best_id = tpl.id;
      }
    }
    ICL_CHECK(any, "identity_rate: panel " << p << " has empty foreground under every template");
    best_ids.push_back(best_id);
    score.min_confidence = std::min(score.min_confidence, best);
  }

  std::map<std::string, int> votes;
  for (const auto& id : best_ids) ++votes[id];
  int modal = 0;
  for (const auto& [id, v] : votes) {
    (void)id;
    modal = std::max(modal, v);
  }
  score.rate = real(modal) / real(best_ids.size());
  score.low_confidence = score.min_confidence < confidence_threshold;
  return score;
}

real effect_fidelity(const Canvas& panel_a, const Canvas& panel_b, const std::string& effect) {
  ICL_CHECK(panel_a.height == panel_b.height && panel_a.width == panel_b.width,
            "effect_fidelity: panel dims differ");
  Canvas t = apply_effect(panel_a, effect);
  const real* a = t.pixels.value().data();
  const real* b = panel_b.pixels.value().data();
  double acc = 0;
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return real(std::sqrt(acc / double(t.numel())));
}

} // namespace icl
