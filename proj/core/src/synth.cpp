#include "nltrack/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nltrack/common.hpp"

namespace nltrack {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Shape s) {
  switch (s) {
    case Shape::kSquare: return "square";
    case Shape::kCircle: return "circle";
    case Shape::kTriangle: return "triangle";
  }
  return "square";
}

Shape shape_from_string(const std::string& s) {
  if (s == "square") return Shape::kSquare;
  if (s == "circle") return Shape::kCircle;
  if (s == "triangle") return Shape::kTriangle;
  throw std::invalid_argument("unknown shape '" + s + "'");
}

const std::vector<std::pair<std::string, std::array<std::uint8_t, 3>>>&
color_table() {
  static const std::vector<std::pair<std::string, std::array<std::uint8_t, 3>>>
      table = {
          {"red", {200, 40, 40}},     {"green", {40, 200, 40}},
          {"blue", {40, 40, 200}},    {"yellow", {200, 200, 40}},
          {"magenta", {200, 40, 200}}, {"cyan", {40, 200, 200}},
      };
  return table;
}

std::array<std::uint8_t, 3> color_rgb(const std::string& name) {
  for (const auto& [n, rgb] : color_table())
    if (n == name) return rgb;
  throw std::invalid_argument("unknown color '" + name + "'");
}

Point object_center(const ObjectSpec& obj, int frame) {
  require(!obj.keyframes.empty(), "object has no keyframes");
  const auto& kfs = obj.keyframes;
  if (frame <= kfs.front().frame) return {kfs.front().cx, kfs.front().cy};
  if (frame >= kfs.back().frame) return {kfs.back().cx, kfs.back().cy};
  for (std::size_t i = 1; i < kfs.size(); ++i) {
    if (frame > kfs[i].frame) continue;
    const Keyframe& a = kfs[i - 1];
    const Keyframe& b = kfs[i];
    const double u =
        static_cast<double>(frame - a.frame) / (b.frame - a.frame);
    return {a.cx + u * (b.cx - a.cx), a.cy + u * (b.cy - a.cy)};
  }
  return {kfs.back().cx, kfs.back().cy};
}

BBox object_box(const ObjectSpec& obj, int frame) {
  const Point c = object_center(obj, frame);
  return BBox{c.x, c.y, obj.size, obj.size};
}

const ObjectSpec& target_object(const ScenarioSpec& spec) {
  for (const auto& obj : spec.objects)
    if (obj.is_target) return obj;
  throw std::invalid_argument("scenario '" + spec.name + "' has no target");
}

void validate_scenario(const ScenarioSpec& spec) {
  require(spec.width >= 16 && spec.height >= 16,
          "scenario '" + spec.name + "': frame must be at least 16x16");
  require(spec.length >= 1, "scenario '" + spec.name + "': length must be >= 1");
  require(!spec.objects.empty(),
          "scenario '" + spec.name + "': needs at least one object");

  int targets = 0;
  for (const auto& obj : spec.objects) targets += obj.is_target ? 1 : 0;
  require(targets == 1, "scenario '" + spec.name +
                            "': expected exactly one target object, found " +
                            std::to_string(targets));

  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& obj = spec.objects[i];
    const std::string who = "object " + std::to_string(i) + " ('" + obj.color +
                            " " + to_string(obj.shape) + "')";
    require(obj.size > 0, who + ": size must be positive");
    color_rgb(obj.color);
    if (!obj.end_color.empty()) color_rgb(obj.end_color);
    require(!obj.keyframes.empty(), who + ": needs at least one keyframe");
    for (std::size_t k = 0; k < obj.keyframes.size(); ++k) {
      const Keyframe& kf = obj.keyframes[k];
      require(kf.frame >= 0 && kf.frame < spec.length,
              who + ": keyframe " + std::to_string(k) + " at frame " +
                  std::to_string(kf.frame) + " is outside the clip");
      if (k > 0)
        require(kf.frame > obj.keyframes[k - 1].frame,
                who + ": keyframe frames must strictly increase");
    }
    for (int t = 0; t < spec.length; ++t) {
      const BBox b = object_box(obj, t);
      if (b.x1() < 0 || b.y1() < 0 || b.x2() > spec.width ||
          b.y2() > spec.height)
        throw std::invalid_argument(who + " leaves the frame at frame " +
                                    std::to_string(t));
    }
  }

  const ObjectSpec& target = target_object(spec);
  for (const auto& obj : spec.objects) {
    if (obj.is_target) continue;
    require(obj.color != target.color || obj.shape != target.shape,
            "scenario '" + spec.name + "': non-target shares '" + obj.color +
                " " + to_string(obj.shape) +
                "' with the target; the description would be ambiguous");
  }

  for (std::size_t i = 0; i < spec.occluders.size(); ++i) {
    const OccluderSpec& occ = spec.occluders[i];
    require(occ.t_begin >= 0 && occ.t_begin < occ.t_end &&
                occ.t_end <= spec.length,
            "occluder " + std::to_string(i) + ": bad interval [" +
                std::to_string(occ.t_begin) + ", " +
                std::to_string(occ.t_end) + ")");
    require(occ.region.w > 0 && occ.region.h > 0,
            "occluder " + std::to_string(i) + ": empty region");
  }
}

std::string nl_description(const ScenarioSpec& spec) {
  const ObjectSpec& target = target_object(spec);
  std::string text = target.color + " " + to_string(target.shape);
  const Point a = object_center(target, 0);
  const Point b = object_center(target, spec.length - 1);
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  if (std::abs(dx) >= 2.0 || std::abs(dy) >= 2.0) {
    const char* dir = std::abs(dx) >= std::abs(dy)
                          ? (dx >= 0 ? "right" : "left")
                          : (dy >= 0 ? "down" : "up");
    text += std::string(" moving ") + dir;
  }
  return text;
}

namespace {

bool inside_shape(Shape shape, double px, double py, const Point& c,
                  double size) {
  const double dx = px - c.x;
  const double dy = py - c.y;
  const double r = size / 2.0;
  switch (shape) {
    case Shape::kSquare:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case Shape::kCircle:
      return dx * dx + dy * dy <= r * r;
    case Shape::kTriangle: {
      // Apex up, base along the bottom of the tight box.
      if (dy < -r || dy > r) return false;
      const double half_width = (dy + r) / 2.0;
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

std::array<std::uint8_t, 3> base_color(const ObjectSpec& obj, int frame,
                                       int length) {
  const auto start = color_rgb(obj.color);
  if (obj.end_color.empty() || length <= 1) return start;
  const auto end = color_rgb(obj.end_color);
  const double u = static_cast<double>(frame) / (length - 1);
  std::array<std::uint8_t, 3> out{};
  for (int i = 0; i < 3; ++i)
    out[i] = static_cast<std::uint8_t>(
        std::lround(start[i] + u * (end[i] - start[i])));
  return out;
}

constexpr std::uint8_t kOccluderGray = 140;

}  // namespace

Image render_frame(const ScenarioSpec& spec, int frame) {
  require(frame >= 0 && frame < spec.length, "render_frame: frame out of range");
  Image img(spec.width, spec.height);

  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const std::uint8_t v = static_cast<std::uint8_t>(
          70 + 50 * hash01(spec.background_seed,
                           static_cast<std::uint64_t>(y) * spec.width + x));
      std::uint8_t* p = img.px(x, y);
      p[0] = p[1] = p[2] = v;
    }
  }

  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    const ObjectSpec& obj = spec.objects[i];
    const Point c = object_center(obj, frame);
    const auto rgb = base_color(obj, frame, spec.length);
    const BBox box = object_box(obj, frame);
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x1())));
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y1())));
    const int x1 = std::min(spec.width, static_cast<int>(std::ceil(box.x2())));
    const int y1 = std::min(spec.height, static_cast<int>(std::ceil(box.y2())));
    // Texture keyed to object-local pixel coordinates so it translates with
    // the object; block matching needs structure that moves rigidly.
    const std::uint64_t tex_seed = spec.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1));
    const int ax = static_cast<int>(std::floor(box.x1()));
    const int ay = static_cast<int>(std::floor(box.y1()));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        if (!inside_shape(obj.shape, x + 0.5, y + 0.5, c, obj.size)) continue;
        const double f =
            0.75 + 0.5 * hash01(tex_seed, static_cast<std::uint64_t>(y - ay) *
                                                  4096 +
                                              (x - ax));
        std::uint8_t* p = img.px(x, y);
        for (int ch = 0; ch < 3; ++ch)
          p[ch] = static_cast<std::uint8_t>(
              std::clamp(rgb[ch] * f, 0.0, 255.0));
      }
    }
  }

  for (const auto& occ : spec.occluders) {
    if (frame < occ.t_begin || frame >= occ.t_end) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(occ.region.x1())));
    const int y0 = std::max(0, static_cast<int>(std::floor(occ.region.y1())));
    const int x1 =
        std::min(spec.width, static_cast<int>(std::ceil(occ.region.x2())));
    const int y1 =
        std::min(spec.height, static_cast<int>(std::ceil(occ.region.y2())));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        std::uint8_t* p = img.px(x, y);
        p[0] = p[1] = p[2] = kOccluderGray;
      }
  }

  return img;
}

bool full_occlusion(const ScenarioSpec& spec, int frame) {
  const ObjectSpec& target = target_object(spec);
  const Point c = object_center(target, frame);
  const BBox box = object_box(target, frame);
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1())));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1())));
  const int x1 = std::min(spec.width, static_cast<int>(std::ceil(box.x2())));
  const int y1 = std::min(spec.height, static_cast<int>(std::ceil(box.y2())));

  long total = 0;
  long covered = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      if (!inside_shape(target.shape, x + 0.5, y + 0.5, c, target.size))
        continue;
      ++total;
      for (const auto& occ : spec.occluders) {
        if (frame < occ.t_begin || frame >= occ.t_end) continue;
        if (x + 0.5 >= occ.region.x1() && x + 0.5 <= occ.region.x2() &&
            y + 0.5 >= occ.region.y1() && y + 0.5 <= occ.region.y2()) {
          ++covered;
          break;
        }
      }
    }
  }
  if (total == 0) return false;
  return covered > 0.9 * total;
}

FlowField target_flow(const ScenarioSpec& spec, int frame) {
  require(frame >= 1 && frame < spec.length, "target_flow: frame out of range");
  const ObjectSpec& target = target_object(spec);
  const Point prev = object_center(target, frame - 1);
  const Point cur = object_center(target, frame);
  const float dx = static_cast<float>(cur.x - prev.x);
  const float dy = static_cast<float>(cur.y - prev.y);

  FlowField field(spec.width, spec.height);
  const BBox box = object_box(target, frame - 1);
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x1())));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y1())));
  const int x1 = std::min(spec.width, static_cast<int>(std::ceil(box.x2())));
  const int y1 = std::min(spec.height, static_cast<int>(std::ceil(box.y2())));
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      if (!inside_shape(target.shape, x + 0.5, y + 0.5, prev, target.size))
        continue;
      float* uv = field.at(x, y);
      uv[0] = dx;
      uv[1] = dy;
    }
  return field;
}

void write_sequence(const ScenarioSpec& spec, const std::string& dir,
                    const WriteOptions& opts) {
  validate_scenario(spec);
  fs::create_directories(fs::path(dir) / "img");
  if (opts.flow_files) fs::create_directories(fs::path(dir) / "flow");

  const ObjectSpec& target = target_object(spec);
  std::ofstream gt(fs::path(dir) / "groundtruth_rect.txt");
  std::ofstream occ(fs::path(dir) / "full_occlusion.txt");
  require(gt.good() && occ.good(), "write_sequence: cannot write into " + dir);

  char name[32];
  for (int t = 0; t < spec.length; ++t) {
    const Image img = render_frame(spec, t);
    std::snprintf(name, sizeof(name), "%04d.ppm", t + 1);
    save_ppm(img, (fs::path(dir) / "img" / name).string());

    const BBox box = object_box(target, t);
    char line[128];
    std::snprintf(line, sizeof(line), "%.2f,%.2f,%.2f,%.2f\n", box.x1(),
                  box.y1(), box.w, box.h);
    gt << line;
    occ << (full_occlusion(spec, t) ? 1 : 0) << "\n";

    if (opts.flow_files && t >= 1) {
      std::snprintf(name, sizeof(name), "%04d.flo", t + 1);
      save_flow_field(target_flow(spec, t),
                      (fs::path(dir) / "flow" / name).string());
    }
  }

  std::ofstream nlp(fs::path(dir) / "nlp.txt");
  nlp << nl_description(spec) << "\n";

  std::ofstream meta(fs::path(dir) / "scenario.json");
  meta << scenario_to_json(spec) << "\n";
}

namespace {

// Deterministic small nudge in [-amount, amount].
double jitter(std::uint64_t seed, std::uint64_t salt, double amount) {
  return (2.0 * hash01(seed, salt) - 1.0) * amount;
}

void pick_identity(std::uint64_t seed, ObjectSpec& obj) {
  const auto& colors = color_table();
  obj.color = colors[seed % colors.size()].first;
  obj.shape = static_cast<Shape>((seed / colors.size()) % 3);
}

}  // namespace

ScenarioSpec make_clean_scenario(std::uint64_t seed) {
  ScenarioSpec spec;
  spec.name = "clean_" + std::to_string(seed);
  spec.width = 160;
  spec.height = 120;
  spec.length = 60;
  spec.seed = seed;
  spec.background_seed = seed * 31 + 7;

  ObjectSpec target;
  target.is_target = true;
  target.size = 24;
  pick_identity(seed, target);
  const double x0 = 40 + jitter(seed, 1, 3);
  const double y0 = 60 + jitter(seed, 2, 3);
  target.keyframes = {{0, x0, y0}, {59, x0 + 74, y0}};
  spec.objects.push_back(target);
  validate_scenario(spec);
  return spec;
}

ScenarioSpec make_fast_motion_scenario(std::uint64_t seed) {
  // 16 px/frame sweeps with a wide occluder across the middle sweep. A
  // tracker that samples at the previous position loses the target under the
  // occluder and the path never re-enters its stale search region.
  ScenarioSpec spec;
  spec.name = "fast_motion_" + std::to_string(seed);
  spec.width = 240;
  spec.height = 200;
  spec.length = 60;
  spec.seed = seed;
  spec.background_seed = seed * 31 + 11;

  ObjectSpec target;
  target.is_target = true;
  target.size = 20;
  pick_identity(seed, target);
  const double y1 = 40 + std::floor(jitter(seed, 1, 2));
  const double y2 = 100 + std::floor(jitter(seed, 2, 2));
  const double y3 = 160 + std::floor(jitter(seed, 3, 2));
  target.keyframes = {{0, 24, y1},  {12, 216, y1}, {16, 216, y2},
                      {28, 24, y2}, {32, 24, y3},  {44, 216, y3}};
  spec.objects.push_back(target);

  OccluderSpec occ;
  occ.t_begin = 18;
  occ.t_end = 27;
  occ.region = BBox::from_corners(78, y2 - 30, 162, y2 + 30);
  spec.occluders.push_back(occ);
  validate_scenario(spec);
  return spec;
}

ScenarioSpec make_occlusion_scenario(std::uint64_t seed) {
  // Target parks, is fully covered for 30 frames, and reappears far outside
  // the covered spot the moment the occluder vanishes.
  ScenarioSpec spec;
  spec.name = "occlusion_" + std::to_string(seed);
  spec.width = 200;
  spec.height = 150;
  spec.length = 150;
  spec.seed = seed;
  spec.background_seed = seed * 31 + 13;

  ObjectSpec target;
  target.is_target = true;
  target.size = 24;
  pick_identity(seed, target);
  const double xa = 50 + jitter(seed, 1, 3);
  const double ya = 75 + jitter(seed, 2, 3);
  const double xb = 150 + jitter(seed, 3, 3);
  const double yb = 75 + jitter(seed, 4, 3);
  target.keyframes = {{0, xa, ya}, {69, xa, ya}, {70, xb, yb}};
  spec.objects.push_back(target);

  OccluderSpec occ;
  occ.t_begin = 40;
  occ.t_end = 70;
  occ.region = BBox{xa, ya, 64, 64};
  spec.occluders.push_back(occ);
  validate_scenario(spec);
  return spec;
}

ScenarioSpec make_distractor_scenario(std::uint64_t seed) {
  ScenarioSpec spec;
  spec.name = "distractor_" + std::to_string(seed);
  spec.width = 160;
  spec.height = 120;
  spec.length = 60;
  spec.seed = seed;
  spec.background_seed = seed * 31 + 17;

  ObjectSpec target;
  target.is_target = true;
  target.size = 24;
  pick_identity(seed, target);
  const double ty = 40 + jitter(seed, 1, 2);
  target.keyframes = {{0, 45, ty}, {59, 104, ty}};
  spec.objects.push_back(target);

  ObjectSpec decoy;
  decoy.size = 24;
  decoy.shape = target.shape;
  const auto& colors = color_table();
  decoy.color = colors[(seed + 2) % colors.size()].first;
  decoy.keyframes = {{0, 115, 88.0}, {59, 56, 88.0}};
  spec.objects.push_back(decoy);
  validate_scenario(spec);
  return spec;
}

ScenarioSpec make_appearance_change_scenario(std::uint64_t seed) {
  ScenarioSpec spec;
  spec.name = "appearance_" + std::to_string(seed);
  spec.width = 160;
  spec.height = 120;
  spec.length = 80;
  spec.seed = seed;
  spec.background_seed = seed * 31 + 19;

  ObjectSpec target;
  target.is_target = true;
  target.size = 24;
  pick_identity(seed, target);
  const auto& colors = color_table();
  target.end_color = colors[(seed + 3) % colors.size()].first;
  const double y0 = 60 + jitter(seed, 1, 3);
  target.keyframes = {{0, 50, y0}, {79, 121, y0}};
  spec.objects.push_back(target);
  validate_scenario(spec);
  return spec;
}

std::vector<ScenarioSpec> standard_suite() {
  return {make_clean_scenario(101), make_fast_motion_scenario(102),
          make_occlusion_scenario(103), make_distractor_scenario(104),
          make_appearance_change_scenario(105)};
}

std::string scenario_to_json(const ScenarioSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["length"] = spec.length;
  j["background_seed"] = spec.background_seed;
  j["seed"] = spec.seed;
  j["objects"] = json::array();
  for (const auto& obj : spec.objects) {
    json o;
    o["shape"] = to_string(obj.shape);
    o["color"] = obj.color;
    if (!obj.end_color.empty()) o["end_color"] = obj.end_color;
    o["size"] = obj.size;
    o["is_target"] = obj.is_target;
    o["keyframes"] = json::array();
    for (const auto& kf : obj.keyframes)
      o["keyframes"].push_back({{"frame", kf.frame}, {"cx", kf.cx}, {"cy", kf.cy}});
    j["objects"].push_back(std::move(o));
  }
  j["occluders"] = json::array();
  for (const auto& occ : spec.occluders) {
    j["occluders"].push_back({{"t_begin", occ.t_begin},
                              {"t_end", occ.t_end},
                              {"cx", occ.region.cx},
                              {"cy", occ.region.cy},
                              {"w", occ.region.w},
                              {"h", occ.region.h}});
  }
  return j.dump(2);
}

ScenarioSpec scenario_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario JSON: ") + e.what());
  }
  try {
    ScenarioSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.width = j.at("width").get<int>();
    spec.height = j.at("height").get<int>();
    spec.length = j.at("length").get<int>();
    spec.background_seed = j.value("background_seed", std::uint64_t{0});
    spec.seed = j.value("seed", std::uint64_t{0});
    for (const auto& o : j.at("objects")) {
      ObjectSpec obj;
      obj.shape = shape_from_string(o.at("shape").get<std::string>());
      obj.color = o.at("color").get<std::string>();
      obj.end_color = o.value("end_color", std::string{});
      obj.size = o.at("size").get<double>();
      obj.is_target = o.value("is_target", false);
      for (const auto& k : o.at("keyframes"))
        obj.keyframes.push_back({k.at("frame").get<int>(),
                                 k.at("cx").get<double>(),
                                 k.at("cy").get<double>()});
      spec.objects.push_back(std::move(obj));
    }
    if (j.contains("occluders")) {
      for (const auto& o : j.at("occluders")) {
        OccluderSpec occ;
        occ.t_begin = o.at("t_begin").get<int>();
        occ.t_end = o.at("t_end").get<int>();
        occ.region = BBox{o.at("cx").get<double>(), o.at("cy").get<double>(),
                          o.at("w").get<double>(), o.at("h").get<double>()};
        spec.occluders.push_back(occ);
      }
    }
    validate_scenario(spec);
    return spec;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("scenario JSON: ") + e.what());
  }
}

}  // namespace nltrack
