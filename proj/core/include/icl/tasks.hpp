#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "icl/canvas.hpp"
#include "icl/prompt.hpp"
#include "icl/rng.hpp"

namespace icl {

enum class TaskKind { Palette, Identity, Effect };

std::string task_name(TaskKind t);
TaskKind task_from_name(const std::string& s);

enum class ShapeKind { Circle, Square, Triangle, Cross };
ShapeKind shape_from_name(const std::string& s);
std::string shape_name(ShapeKind s);

struct Rgb {
  real r = 0, g = 0, b = 0; // [0,1]
};

// The 8 palette colors at full saturation/value, and their canonical hues.
const std::vector<std::string>& color_names();
Rgb color_rgb(const std::string& name);
real color_hue(const std::string& name); // degrees

// Identity tag -> fixed (shape, color) signature.
struct IdentitySignature {
  ShapeKind shape;
  std::string color;
};
const std::map<std::string, IdentitySignature>& identity_signatures();

struct TaskSpec {
  TaskKind kind = TaskKind::Palette;
  PanelLayout layout = PanelLayout::make("2x2");

  void validate() const;
};

// One training/eval sample. Canvas and tokens are cached at construction so
// the training loop never re-renders.
struct ImageSetRecord {
  std::vector<Canvas> panels;
  PanelLayout layout;
  PromptProgram prompt;
  std::string task; // provenance: task name; sampled attributes live in the prompt

  Canvas canvas;   // compose(panels, layout)
  TokenSeq tokens; // tokenize(prompt, layout)

  void finalize(int l_text = TokenSeq::kDefaultLen);
};

struct ConsistencyReport {
  std::string task;
  std::vector<real> per_set;   // metric value per set
  std::vector<bool> per_set_pass;
  real aggregate_mean = 0;
  real pass_rate = 0;
  int count = 0;
  real threshold = 0;
  bool low_confidence = false; // any set scored with weak evidence
  int undefined_sets = 0;      // sets where the metric was undefined (count as fail)
};

// ---- rendering ---------------------------------------------------------------

// Neutral background value for rendered panels, in [0,1] rgb.
inline constexpr real kBackgroundGray = real(0.82);

// Rasterize a filled shape into `block` at one of the 3x3 grid cells
// (cell = row-major 0..8, matching the "tl".."br" position tokens).
// Geometry is fixed in pixels, designed for 32x32 panels: circle radius 6,
// square 12x12, triangle base 13 height 12, cross bars 12 long 4 thick.
// Shapes clip at panel borders.
void draw_shape(Canvas& block, ShapeKind shape, const Rgb& color, int cell);

Canvas blank_panel(int h, int w);

// Deterministic panel transforms for the effect task.
//   "invert": per-channel negation (exact involution in [-1,1]).
//   "storm":  desaturate 40% and add a fixed-seed value-noise field at 0.35
//             amplitude to the HSV value channel.
Canvas apply_effect(const Canvas& panel, const std::string& effect);

// ---- generation ---------------------------------------------------------------

// Draws one image set for a task. Panels satisfy the task's own metric by
// construction; the prompt encodes exactly the sampled attributes.
ImageSetRecord gen_set(const TaskSpec& task, Rng& rng);

// One base-corpus sample: 50% single-panel renders, 50% multi-panel sets with
// independently random per-panel attributes (no task-level consistency).
// Panel clauses carry SHAPE/COLOR/POS (COLOR and POS each dropped at 10%);
// 20% of panels get an effect render (+EFFECT key); at most one panel per set
// renders an identity signature (+ID key, replacing SHAPE/COLOR).
ImageSetRecord gen_corpus_set(Rng& rng);

// ---- metrics ------------------------------------------------------------------

// Max pairwise circular distance (degrees) between the panels' mean hues,
// computed over pixels with saturation > 0.2 and value > 0.2. Throws if any
// panel has no qualifying pixels.
real hue_consistency(const std::vector<Canvas>& panels);

struct IdentityScore {
  real rate = 0;           // fraction of panels matching the modal signature
  real min_confidence = 0; // weakest best-template correlation
  bool low_confidence = false;
};

// Classifies each panel to the nearest identity signature by masked template
// correlation (every signature at every grid cell); rate is the fraction
// agreeing with the modal signature. Panels that are constant over every
// template mask have no usable foreground and throw.
IdentityScore identity_rate(const std::vector<Canvas>& panels,
                            real confidence_threshold = real(0.5));

// rmse(apply_effect(panel_a, effect), panel_b) in [-1,1] units.
real effect_fidelity(const Canvas& panel_a, const Canvas& panel_b, const std::string& effect);

// ---- color helpers -------------------------------------------------------------

struct Hsv {
  real h = 0; // degrees [0, 360)
  real s = 0;
  real v = 0;
};
Hsv rgb_to_hsv(const Rgb& c);
Rgb hsv_to_rgb(const Hsv& c);

// Circular distance between hues, degrees in [0, 180].
real hue_distance(real a, real b);

// Mean hue of qualifying pixels (sat/val > 0.2); nullopt if none qualify.
std::optional<real> mean_hue(const Canvas& panel);

} // namespace icl
