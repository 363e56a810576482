#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fino/matrix.hpp"
#include "fino/rng.hpp"

namespace fino {

struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s2;
  bool done = false;

  friend bool operator==(const Transition& x, const Transition& y) {
    return x.s == y.s && x.a == y.a && x.r == y.r && x.s2 == y.s2 && x.done == y.done;
  }
};

/// Column view of a minibatch of transitions.
struct TransitionBatch {
  Matrix s;   // [B x state_dim]
  Matrix a;   // [B x action_dim]
  std::vector<double> r;
  Matrix s2;  // [B x state_dim]
  std::vector<uint8_t> done;

  int size() const { return s.rows(); }
  void resize(int batch, int state_dim, int action_dim);
  void set_row(int i, const Transition& t);
};

struct StepResult {
  std::vector<double> state;
  double reward = 0.0;
  bool done = false;       // true terminal (goal reached)
  bool truncated = false;  // horizon hit
};

/// Environments clamp actions to [-1,1]^d and are deterministic given the
/// reset seed and the action sequence.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int horizon() const = 0;
  virtual std::string name() const = 0;
  virtual std::vector<double> reset(uint64_t seed) = 0;
  virtual StepResult step(std::span<const double> action) = 0;
};

// ---------------------------------------------------------------------------
// Point maze

struct MazeCell {
  int x = 0;
  int y = 0;
  friend bool operator==(const MazeCell& a, const MazeCell& b) { return a.x == b.x && a.y == b.y; }
};

/// Wall grid parsed from rows of '#' (wall), '.' (open), 'S' (start),
/// 'G' (goal). Positions live in [0,W]x[0,H] with unit cells.
struct MazeLayout {
  std::vector<std::string> grid;
  MazeCell start;
  MazeCell goal;

  int width() const { return grid.empty() ? 0 : static_cast<int>(grid.front().size()); }
  int height() const { return static_cast<int>(grid.size()); }
  bool open(int cx, int cy) const;
  bool connected(const std::vector<MazeCell>& blocked = {}) const;

  static MazeLayout parse(const std::vector<std::string>& rows);
  /// 7x7 grid with two disjoint start->goal corridors (upper-right and
  /// lower-left).
  static MazeLayout default_layout();
};

/// Cells of the two corridors of the default layout, excluding start/goal.
std::vector<MazeCell> default_corridor_a();
std::vector<MazeCell> default_corridor_b();

std::unique_ptr<Environment> four_circles_env();
std::unique_ptr<Environment> rightward_reward_env();
std::unique_ptr<Environment> point_maze_env(const MazeLayout& layout);
std::unique_ptr<Environment> make_env(const std::string& name);

/// Geometry of the four-circles dataset: centers (+-0.5, +-0.5), radius 0.15.
bool inside_any_disk(std::span<const double> action);

/// Max displacement per step in the point maze.
inline constexpr double kMazeStepScale = 0.2;

// ---------------------------------------------------------------------------
// Datasets and replay

enum class BehaviorPolicy { uniform_in_region, gaussian, scripted_corridor };

BehaviorPolicy parse_behavior(const std::string& name);

/// Behavior used when a caller names only the environment.
BehaviorPolicy default_behavior_for(const std::string& env_name);

struct DatasetHeader {
  std::string env;
  uint64_t seed = 0;
  int size = 0;
  int state_dim = 0;
  int action_dim = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Transition> transitions;

  int size() const { return static_cast<int>(transitions.size()); }
};

Dataset generate_offline_dataset(Environment& env, BehaviorPolicy behavior, int size,
                                 uint64_t seed);

/// Text header line followed by fixed-width little-endian f64 records;
/// round trips bit-exactly.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);
void export_dataset_csv(const Dataset& dataset, const std::string& path);

TransitionBatch sample_batch(const Dataset& dataset, int batch_size, Rng& rng);

/// Ring buffer with FIFO eviction and uniform-with-replacement sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity);

  size_t capacity() const { return capacity_; }
  size_t size() const { return items_.size(); }
  size_t total_pushed() const { return pushed_; }
  const Transition& at(size_t i) const { return items_[(head_ + i) % items_.size()]; }

  void push(Transition t);
  TransitionBatch sample(int batch_size, Rng& rng) const;

 private:
  size_t capacity_;
  size_t head_ = 0;  // index of oldest element once full
  size_t pushed_ = 0;
  std::vector<Transition> items_;
};

}  // namespace fino
