#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualpol/rng.hpp"

// Deterministic 2D tabletop simulator with multi-task instructions and a
// scripted expert. Effector and objects live in a [-1, 1]^2 workspace;
// actions are 7-DoF delta-pose commands even though the toy dynamics only
// exercise (x, y, gripper).

namespace dualpol::env {

struct EnvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EnvConfig {
  int height = 48, width = 48;
  bool depth = true;
  int max_ticks = 80;
  double step_scale = 0.05;     // workspace units per unit action per tick
  double grasp_radius = 0.05;   // closed gripper grasps within this range
  double contact_radius = 0.10; // open gripper shoves objects to this range
  double reach_radius = 0.10;
  double push_dist = 0.25;
  double knock_dist = 0.20;
  double region_radius = 0.12;
};

enum class TaskFamily { Reach = 0, Push = 1, PickPlace = 2, Knock = 3 };

constexpr int kNumColors = 4;  // red, green, blue, yellow
constexpr int kNumInstructions = 20;

const char* family_name(TaskFamily f);
TaskFamily family_from_string(const std::string& s);
const char* color_name(int color);

struct TaskSpec {
  TaskFamily family = TaskFamily::Reach;
  int color = 0;
  int direction = 0;  // push only: 0 = left (-x), 1 = right (+x)

  int instruction_id() const;
  std::string instruction_text() const;
  static TaskSpec from_instruction(int id);
  // Uniformly sampled concrete task of a family (color, direction).
  static TaskSpec sample(TaskFamily family, Rng& rng);
};

struct ObjectState {
  int shape = 0;  // 0 circle, 1 square, 2 triangle
  int color = 0;
  double x = 0, y = 0;
  double init_x = 0, init_y = 0;
  bool held = false;
};

struct WorldState {
  std::array<double, 6> pose{};  // x, y, z, roll, pitch, yaw
  double gripper = 1.0;          // open fraction
  std::vector<ObjectState> objects;
  int target_index = 0;
  double region_x = 0, region_y = 0, region_r = 0;  // pick-place goal
  bool has_region = false;
  int tick = 0;
};

struct Observation {
  int height = 0, width = 0;
  std::vector<uint8_t> rgb;   // H*W*3
  std::vector<float> depth;   // H*W, empty when disabled
  std::array<float, 7> proprio{};
  int instruction_id = 0;
  std::string instruction_text;
};

// Pure render of a world state; fills rgb and, when enabled, depth.
void render(const EnvConfig& cfg, const WorldState& s, std::vector<uint8_t>& rgb,
            std::vector<float>* depth);

bool success_predicate(const EnvConfig& cfg, const WorldState& s, const TaskSpec& task);

// Deterministic phase controller toward the current subgoal.
std::array<float, 7> scripted_expert(const EnvConfig& cfg, const WorldState& s,
                                     const TaskSpec& task);

class ToyEnv {
 public:
  explicit ToyEnv(EnvConfig cfg = {}) : cfg_(cfg) {}

  Observation reset(const TaskSpec& task, uint64_t seed);

  struct StepResult {
    Observation obs;
    bool done = false;
    bool success = false;
  };
  StepResult step(const std::array<float, 7>& action);

  Observation observe() const;
  const WorldState& state() const { return state_; }
  const TaskSpec& task() const { return task_; }
  const EnvConfig& config() const { return cfg_; }
  bool done() const { return done_; }
  bool active() const { return active_; }

  // Swap in a fresh task without moving the effector (chain evaluation).
  Observation switch_task(const TaskSpec& task, uint64_t seed);

 private:
  void spawn(const TaskSpec& task, Rng& rng, bool keep_effector);

  EnvConfig cfg_;
  TaskSpec task_;
  WorldState state_;
  bool active_ = false;
  bool done_ = false;
};

}  // namespace dualpol::env
