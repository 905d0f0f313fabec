#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nltrack/flow.hpp"
#include "nltrack/geometry.hpp"
#include "nltrack/image.hpp"

namespace nltrack {

enum class Shape { kSquare, kCircle, kTriangle };

std::string to_string(Shape s);
Shape shape_from_string(const std::string& s);

// Piecewise-linear trajectory control point. Motion between keyframes is
// linear; before the first and after the last the position holds.
struct Keyframe {
  int frame = 0;
  double cx = 0.0;
  double cy = 0.0;
};

struct ObjectSpec {
  Shape shape = Shape::kSquare;
  std::string color;      // name from color_table()
  std::string end_color;  // when set, base color ramps linearly over the clip
  double size = 0.0;      // tight-box side in pixels
  std::vector<Keyframe> keyframes;
  bool is_target = false;
};

// Flat rectangle drawn over everything on frames [t_begin, t_end).
struct OccluderSpec {
  int t_begin = 0;
  int t_end = 0;
  BBox region;
};

struct ScenarioSpec {
  std::string name;
  int width = 0;
  int height = 0;
  int length = 0;
  std::vector<ObjectSpec> objects;
  std::vector<OccluderSpec> occluders;
  std::uint64_t background_seed = 0;
  std::uint64_t seed = 0;
};

// Color vocabulary shared by the renderer and the language descriptions.
const std::vector<std::pair<std::string, std::array<std::uint8_t, 3>>>&
color_table();
std::array<std::uint8_t, 3> color_rgb(const std::string& name);

// Throws naming the offending object/field; in particular any object whose
// tight box leaves the frame on some frame.
void validate_scenario(const ScenarioSpec& spec);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

Point object_center(const ObjectSpec& obj, int frame);
BBox object_box(const ObjectSpec& obj, int frame);
const ObjectSpec& target_object(const ScenarioSpec& spec);

// "<color> <shape>" plus a "moving <direction>" clause when the target's net
// displacement is non-trivial.
std::string nl_description(const ScenarioSpec& spec);

Image render_frame(const ScenarioSpec& spec, int frame);

// True when active occluders cover more than 90% of the target's rasterized
// pixels on this frame.
bool full_occlusion(const ScenarioSpec& spec, int frame);

// Per-pixel displacement from frame-1 to frame, written at the pixels the
// target occupied on frame-1; zero elsewhere. frame must be >= 1.
FlowField target_flow(const ScenarioSpec& spec, int frame);

struct WriteOptions {
  bool flow_files = true;
};

// Renders the whole clip into `dir`:
//   img/0001.ppm..., groundtruth_rect.txt, full_occlusion.txt, nlp.txt,
//   flow/0002.flo..., scenario.json
void write_sequence(const ScenarioSpec& spec, const std::string& dir,
                    const WriteOptions& opts = {});

// Scenario factories. The seed varies target color/shape and nudges
// positions; the motion arithmetic that makes each scenario stress what it
// stresses is fixed.
ScenarioSpec make_clean_scenario(std::uint64_t seed);
ScenarioSpec make_fast_motion_scenario(std::uint64_t seed);
ScenarioSpec make_occlusion_scenario(std::uint64_t seed);
ScenarioSpec make_distractor_scenario(std::uint64_t seed);
ScenarioSpec make_appearance_change_scenario(std::uint64_t seed);

std::vector<ScenarioSpec> standard_suite();

std::string scenario_to_json(const ScenarioSpec& spec);
ScenarioSpec scenario_from_json_text(const std::string& text);

}  // namespace nltrack
