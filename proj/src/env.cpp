#include "dualpol/env.hpp"

#include <algorithm>
#include <cmath>

namespace dualpol::env {

namespace {

constexpr double kSpawnLo = -0.6, kSpawnHi = 0.6;
constexpr double kMinFromOrigin = 0.30;   // effector starts at the origin
constexpr double kMinSeparation = 0.35;   // between the two objects
constexpr double kRegionClearance = 0.30;

const uint8_t kColorTable[kNumColors][3] = {
    {220, 60, 50}, {60, 200, 80}, {70, 110, 230}, {230, 210, 60}};

double dist2d(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

double clampd(double x, double lo, double hi) { return x < lo ? lo : (x > hi ? hi : x); }

}  // namespace

const char* family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::Reach: return "reach";
    case TaskFamily::Push: return "push";
    case TaskFamily::PickPlace: return "pick_place";
    case TaskFamily::Knock: return "knock";
  }
  return "?";
}

TaskFamily family_from_string(const std::string& s) {
  if (s == "reach") return TaskFamily::Reach;
  if (s == "push") return TaskFamily::Push;
  if (s == "pick_place") return TaskFamily::PickPlace;
  if (s == "knock") return TaskFamily::Knock;
  throw EnvError("unknown task family: " + s);
}

const char* color_name(int color) {
  static const char* names[kNumColors] = {"red", "green", "blue", "yellow"};
  if (color < 0 || color >= kNumColors) throw EnvError("bad color id");
  return names[color];
}

int TaskSpec::instruction_id() const {
  switch (family) {
    case TaskFamily::Reach: return color;
    case TaskFamily::Push: return 4 + color * 2 + direction;
    case TaskFamily::PickPlace: return 12 + color;
    case TaskFamily::Knock: return 16 + color;
  }
  throw EnvError("bad family");
}

TaskSpec TaskSpec::from_instruction(int id) {
  if (id < 0 || id >= kNumInstructions) throw EnvError("bad instruction id");
  TaskSpec t;
  if (id < 4) {
    t.family = TaskFamily::Reach;
    t.color = id;
  } else if (id < 12) {
    t.family = TaskFamily::Push;
    t.color = (id - 4) / 2;
    t.direction = (id - 4) % 2;
  } else if (id < 16) {
    t.family = TaskFamily::PickPlace;
    t.color = id - 12;
  } else {
    t.family = TaskFamily::Knock;
    t.color = id - 16;
  }
  return t;
}

std::string TaskSpec::instruction_text() const {
  std::string c = color_name(color);
  switch (family) {
    case TaskFamily::Reach: return "reach the " + c + " object";
    case TaskFamily::Push:
      return "push the " + c + " object " + (direction == 0 ? "left" : "right");
    case TaskFamily::PickPlace: return "put the " + c + " object in the target region";
    case TaskFamily::Knock: return "knock the " + c + " object";
  }
  throw EnvError("bad family");
}

TaskSpec TaskSpec::sample(TaskFamily family, Rng& rng) {
  TaskSpec t;
  t.family = family;
  t.color = int(rng.randint(0, kNumColors - 1));
  t.direction = family == TaskFamily::Push ? int(rng.randint(0, 1)) : 0;
  return t;
}

// ---------------------------------------------------------------------------
// rendering

namespace {

struct Raster {
  const EnvConfig* cfg;
  std::vector<uint8_t>* rgb;
  std::vector<float>* depth;

  void put(int px, int py, const uint8_t* c, float z) {
    if (px < 0 || py < 0 || px >= cfg->width || py >= cfg->height) return;
    size_t i = (size_t(py) * cfg->width + px);
    (*rgb)[i * 3 + 0] = c[0];
    (*rgb)[i * 3 + 1] = c[1];
    (*rgb)[i * 3 + 2] = c[2];
    if (depth) (*depth)[i] = z;
  }

  int to_px(double x) const { return int(std::lround((x + 1.0) / 2.0 * (cfg->width - 1))); }
  int to_py(double y) const { return int(std::lround((y + 1.0) / 2.0 * (cfg->height - 1))); }
  double px_per_unit() const { return (cfg->width - 1) / 2.0; }

  void circle(double cx, double cy, double r, const uint8_t* c, float z) {
    int x0 = to_px(cx - r), x1 = to_px(cx + r);
    int y0 = to_py(cy - r), y1 = to_py(cy + r);
    double rp = r * px_per_unit();
    double pcx = (cx + 1.0) / 2.0 * (cfg->width - 1), pcy = (cy + 1.0) / 2.0 * (cfg->height - 1);
    for (int py = y0; py <= y1; ++py)
      for (int px = x0; px <= x1; ++px)
        if (std::hypot(px - pcx, py - pcy) <= rp + 0.25) put(px, py, c, z);
  }

  void square(double cx, double cy, double r, const uint8_t* c, float z) {
    for (int py = to_py(cy - r); py <= to_py(cy + r); ++py)
      for (int px = to_px(cx - r); px <= to_px(cx + r); ++px) put(px, py, c, z);
  }

  void triangle(double cx, double cy, double r, const uint8_t* c, float z) {
    // upward-pointing isoceles triangle inside the bounding square
    int y0 = to_py(cy - r), y1 = to_py(cy + r);
    int rows = std::max(1, y1 - y0);
    double rp = r * px_per_unit();
    double pcx = (cx + 1.0) / 2.0 * (cfg->width - 1);
    for (int py = y0; py <= y1; ++py) {
      double frac = double(py - y0) / rows;  // 0 at apex
      int half = int(std::lround(frac * rp));
      for (int px = int(pcx) - half; px <= int(pcx) + half + 1; ++px) put(px, py, c, z);
    }
  }
};

}  // namespace

void render(const EnvConfig& cfg, const WorldState& s, std::vector<uint8_t>& rgb,
            std::vector<float>* depth) {
  rgb.assign(size_t(cfg.height) * cfg.width * 3, 0);
  if (depth) depth->assign(size_t(cfg.height) * cfg.width, 0.0f);
  Raster r{&cfg, &rgb, depth};
  const uint8_t bg[3] = {24, 24, 34};
  for (int py = 0; py < cfg.height; ++py)
    for (int px = 0; px < cfg.width; ++px) r.put(px, py, bg, 0.0f);

  if (s.has_region) {
    const uint8_t reg[3] = {80, 80, 88};
    r.circle(s.region_x, s.region_y, s.region_r, reg, 0.1f);
  }

  const double obj_r = 0.10;
  for (const auto& o : s.objects) {
    double ox = o.held ? s.pose[0] : o.x;
    double oy = o.held ? s.pose[1] : o.y;
    const uint8_t* c = kColorTable[o.color];
    float z = o.held ? 0.6f : 0.4f;
    if (o.shape == 0)
      r.circle(ox, oy, obj_r, c, z);
    else if (o.shape == 1)
      r.square(ox, oy, obj_r * 0.9, c, z);
    else
      r.triangle(ox, oy, obj_r, c, z);
  }

  // effector: open gripper renders as a cross, closed as a solid block
  bool open = s.gripper >= 0.5;
  const uint8_t eff_open[3] = {240, 240, 240};
  const uint8_t eff_closed[3] = {235, 120, 235};
  int ex = r.to_px(s.pose[0]), ey = r.to_py(s.pose[1]);
  if (open) {
    for (int d = -2; d <= 2; ++d) {
      r.put(ex + d, ey, eff_open, 0.9f);
      r.put(ex, ey + d, eff_open, 0.9f);
    }
  } else {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) r.put(ex + dx, ey + dy, eff_closed, 0.9f);
  }
}

// ---------------------------------------------------------------------------
// dynamics

bool success_predicate(const EnvConfig& cfg, const WorldState& s, const TaskSpec& task) {
  const ObjectState& o = s.objects[size_t(s.target_index)];
  switch (task.family) {
    case TaskFamily::Reach:
      return dist2d(s.pose[0], s.pose[1], o.x, o.y) <= cfg.reach_radius;
    case TaskFamily::Push: {
      double dx = o.x - o.init_x;
      return task.direction == 0 ? dx <= -cfg.push_dist : dx >= cfg.push_dist;
    }
    case TaskFamily::PickPlace:
      return !o.held && dist2d(o.x, o.y, s.region_x, s.region_y) <= s.region_r;
    case TaskFamily::Knock:
      return dist2d(o.x, o.y, o.init_x, o.init_y) >= cfg.knock_dist;
  }
  return false;
}

void ToyEnv::spawn(const TaskSpec& task, Rng& rng, bool keep_effector) {
  if (!keep_effector) {
    state_.pose = {0, 0, 0, 0, 0, 0};
    state_.gripper = 0.5;  // open; matches the gripper a zero action commands
  }
  state_.tick = 0;
  state_.objects.clear();
  state_.has_region = false;

  auto sample_pos = [&](double& x, double& y, double min_from_eff) {
    for (int attempt = 0; attempt < 256; ++attempt) {
      x = rng.uniform(kSpawnLo, kSpawnHi);
      y = rng.uniform(kSpawnLo, kSpawnHi);
      if (dist2d(x, y, 0, 0) < kMinFromOrigin) continue;
      if (dist2d(x, y, state_.pose[0], state_.pose[1]) < min_from_eff) continue;
      bool ok = true;
      for (auto& o : state_.objects)
        if (dist2d(x, y, o.x, o.y) < kMinSeparation) ok = false;
      if (ok) return;
    }
    throw EnvError("failed to sample object position");
  };

  // target object first, then a distractor of a different color
  ObjectState target;
  target.color = task.color;
  target.shape = int(rng.randint(0, 2));
  sample_pos(target.x, target.y, 0.25);
  if (task.family == TaskFamily::Push) {
    // leave room to push along x
    target.x = clampd(target.x, -0.35, 0.35);
  }
  target.init_x = target.x;
  target.init_y = target.y;
  state_.objects.push_back(target);
  state_.target_index = 0;

  ObjectState distractor;
  do {
    distractor.color = int(rng.randint(0, kNumColors - 1));
  } while (distractor.color == task.color);
  distractor.shape = int(rng.randint(0, 2));
  sample_pos(distractor.x, distractor.y, 0.25);
  distractor.init_x = distractor.x;
  distractor.init_y = distractor.y;
  state_.objects.push_back(distractor);

  if (task.family == TaskFamily::PickPlace) {
    state_.has_region = true;
    state_.region_r = cfg_.region_radius;
    for (int attempt = 0;; ++attempt) {
      state_.region_x = rng.uniform(-0.5, 0.5);
      state_.region_y = rng.uniform(-0.5, 0.5);
      bool ok = true;
      for (auto& o : state_.objects)
        if (dist2d(state_.region_x, state_.region_y, o.x, o.y) < kRegionClearance) ok = false;
      if (ok) break;
      if (attempt > 256) throw EnvError("failed to sample target region");
    }
  }
}

Observation ToyEnv::reset(const TaskSpec& task, uint64_t seed) {
  task_ = task;
  Rng rng(seed ^ 0x7031u ^ (uint64_t(task.instruction_id()) << 32));
  spawn(task, rng, /*keep_effector=*/false);
  active_ = true;
  done_ = false;
  return observe();
}

Observation ToyEnv::switch_task(const TaskSpec& task, uint64_t seed) {
  if (!active_) throw EnvError("switch_task before reset");
  task_ = task;
  Rng rng(seed ^ 0x9d2cu ^ (uint64_t(task.instruction_id()) << 32));
  spawn(task, rng, /*keep_effector=*/true);
  done_ = false;
  return observe();
}

ToyEnv::StepResult ToyEnv::step(const std::array<float, 7>& action) {
  if (!active_) throw EnvError("step before reset");
  if (done_) throw EnvError("step after episode end");

  std::array<double, 7> a;
  for (int i = 0; i < 7; ++i) {
    double x = double(action[size_t(i)]);
    if (!std::isfinite(x)) throw EnvError("non-finite action");
    a[size_t(i)] = clampd(x, -1.0, 1.0);
  }

  for (int i = 0; i < 6; ++i)
    state_.pose[size_t(i)] = clampd(state_.pose[size_t(i)] + a[size_t(i)] * cfg_.step_scale,
                                    -1.0, 1.0);
  state_.gripper = (a[6] + 1.0) / 2.0;

  double ex = state_.pose[0], ey = state_.pose[1];
  bool open = state_.gripper >= 0.5;

  // held object follows the effector; release drops it in place
  std::vector<bool> just_released(state_.objects.size(), false);
  for (size_t i = 0; i < state_.objects.size(); ++i) {
    auto& o = state_.objects[i];
    if (o.held) {
      o.x = ex;
      o.y = ey;
      if (open) {
        o.held = false;
        just_released[i] = true;
      }
    }
  }

  if (open) {
    // open gripper shoves objects out to the contact radius
    for (size_t i = 0; i < state_.objects.size(); ++i) {
      auto& o = state_.objects[i];
      if (o.held || just_released[i]) continue;
      double d = dist2d(ex, ey, o.x, o.y);
      if (d < cfg_.contact_radius) {
        double nx = 1.0, ny = 0.0;
        if (d > 1e-9) {
          nx = (o.x - ex) / d;
          ny = (o.y - ey) / d;
        }
        o.x = clampd(ex + nx * cfg_.contact_radius, -1.0, 1.0);
        o.y = clampd(ey + ny * cfg_.contact_radius, -1.0, 1.0);
      }
    }
  } else {
    // closed gripper grasps the nearest object in range
    bool holding = false;
    for (auto& o : state_.objects) holding = holding || o.held;
    if (!holding) {
      int best = -1;
      double best_d = cfg_.grasp_radius;
      for (size_t i = 0; i < state_.objects.size(); ++i) {
        double d = dist2d(ex, ey, state_.objects[i].x, state_.objects[i].y);
        if (d <= best_d) {
          best_d = d;
          best = int(i);
        }
      }
      if (best >= 0) {
        state_.objects[size_t(best)].held = true;
        state_.objects[size_t(best)].x = ex;
        state_.objects[size_t(best)].y = ey;
      }
    }
  }

  ++state_.tick;
  StepResult res;
  res.success = success_predicate(cfg_, state_, task_);
  res.done = res.success || state_.tick >= cfg_.max_ticks;
  done_ = res.done;
  res.obs = observe();
  return res;
}

Observation ToyEnv::observe() const {
  Observation obs;
  obs.height = cfg_.height;
  obs.width = cfg_.width;
  render(cfg_, state_, obs.rgb, cfg_.depth ? &obs.depth : nullptr);
  for (int i = 0; i < 6; ++i) obs.proprio[size_t(i)] = float(state_.pose[size_t(i)]);
  obs.proprio[6] = float(state_.gripper * 2.0 - 1.0);
  obs.instruction_id = task_.instruction_id();
  obs.instruction_text = task_.instruction_text();
  return obs;
}

// ---------------------------------------------------------------------------
// scripted expert

namespace {

std::array<float, 7> move_action(const WorldState& s, double tx, double ty,
                                 double step_scale, double gripper_cmd) {
  std::array<float, 7> a{};
  a[0] = float(clampd((tx - s.pose[0]) / step_scale, -1.0, 1.0));
  a[1] = float(clampd((ty - s.pose[1]) / step_scale, -1.0, 1.0));
  for (int i = 2; i < 6; ++i)
    a[size_t(i)] = float(clampd(-s.pose[size_t(i)] / step_scale, -1.0, 1.0));
  a[6] = float(gripper_cmd);
  return a;
}

// Distance from obstacle to the segment eff -> target.
double segment_clearance(double ex, double ey, double tx, double ty, double ox, double oy) {
  double dx = tx - ex, dy = ty - ey;
  double len2 = dx * dx + dy * dy;
  double t = len2 > 1e-12 ? ((ox - ex) * dx + (oy - ey) * dy) / len2 : 0.0;
  t = clampd(t, 0.0, 1.0);
  return dist2d(ox, oy, ex + t * dx, ey + t * dy);
}

// Steers toward (tx, ty), detouring around any obstacle that blocks the
// straight path.
std::array<float, 7> navigate(const EnvConfig& cfg, const WorldState& s, double tx, double ty,
                              const std::vector<int>& obstacles, double gripper_cmd) {
  double ex = s.pose[0], ey = s.pose[1];
  const double avoid = cfg.contact_radius + 0.05;
  for (int oi : obstacles) {
    const auto& o = s.objects[size_t(oi)];
    if (dist2d(tx, ty, o.x, o.y) < avoid) continue;  // target is next to it anyway
    if (segment_clearance(ex, ey, tx, ty, o.x, o.y) < avoid &&
        dist2d(ex, ey, o.x, o.y) < dist2d(ex, ey, tx, ty)) {
      // sidestep perpendicular to the object, on the side the effector is on
      double dx = tx - ex, dy = ty - ey;
      double len = std::hypot(dx, dy);
      if (len < 1e-9) break;
      double px = -dy / len, py = dx / len;
      double side = (o.x - ex) * px + (o.y - ey) * py > 0 ? -1.0 : 1.0;
      double wx = clampd(o.x + side * px * (avoid + 0.08), -0.95, 0.95);
      double wy = clampd(o.y + side * py * (avoid + 0.08), -0.95, 0.95);
      return move_action(s, wx, wy, cfg.step_scale, gripper_cmd);
    }
  }
  return move_action(s, tx, ty, cfg.step_scale, gripper_cmd);
}

}  // namespace

std::array<float, 7> scripted_expert(const EnvConfig& cfg, const WorldState& s,
                                     const TaskSpec& task) {
  if (success_predicate(cfg, s, task)) return std::array<float, 7>{};

  const ObjectState& o = s.objects[size_t(s.target_index)];
  std::vector<int> others;
  for (size_t i = 0; i < s.objects.size(); ++i)
    if (int(i) != s.target_index) others.push_back(int(i));

  switch (task.family) {
    case TaskFamily::Reach:
      return navigate(cfg, s, o.x, o.y, others, 1.0);

    case TaskFamily::Knock:
      // drive straight through the object; the contact shove does the knocking
      return navigate(cfg, s, o.x, o.y, others, 1.0);

    case TaskFamily::Push: {
      double dirx = task.direction == 0 ? -1.0 : 1.0;
      double diry = 0.0;
      double bx = o.x - dirx * (cfg.contact_radius + 0.05);
      double by = o.y - diry * (cfg.contact_radius + 0.05);
      double behind = (s.pose[0] - o.x) * dirx + (s.pose[1] - o.y) * diry;  // < 0 when behind
      double lateral = std::abs((s.pose[0] - o.x) * diry - (s.pose[1] - o.y) * dirx);
      if (behind < -cfg.contact_radius * 0.5 && lateral < 0.06) {
        // lined up: drive through the object
        return move_action(s, o.x + dirx, o.y + diry, cfg.step_scale, 1.0);
      }
      std::vector<int> all_obstacles = others;
      all_obstacles.push_back(s.target_index);
      return navigate(cfg, s, bx, by, all_obstacles, 1.0);
    }

    case TaskFamily::PickPlace: {
      if (!o.held) {
        double d = dist2d(s.pose[0], s.pose[1], o.x, o.y);
        if (d > 0.12)
          return navigate(cfg, s, o.x, o.y, others, 1.0);
        // final approach with the gripper closed so the object is not shoved
        return move_action(s, o.x, o.y, cfg.step_scale, -1.0);
      }
      double d = dist2d(s.pose[0], s.pose[1], s.region_x, s.region_y);
      if (d > 0.04) return navigate(cfg, s, s.region_x, s.region_y, others, -1.0);
      return std::array<float, 7>{0, 0, 0, 0, 0, 0, 1};  // release
    }
  }
  return {};
}

}  // namespace dualpol::env
