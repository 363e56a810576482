#include "fino/env.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <stdexcept>

namespace fino {

void TransitionBatch::resize(int batch, int state_dim, int action_dim) {
  s.resize(batch, state_dim);
  a.resize(batch, action_dim);
  s2.resize(batch, state_dim);
  r.resize(batch);
  done.resize(batch);
}

void TransitionBatch::set_row(int i, const Transition& t) {
  std::copy(t.s.begin(), t.s.end(), s.row(i));
  std::copy(t.a.begin(), t.a.end(), a.row(i));
  std::copy(t.s2.begin(), t.s2.end(), s2.row(i));
  r[i] = t.r;
  done[i] = t.done ? 1 : 0;
}

namespace {

void clamp_action(std::vector<double>& a) {
  for (double& x : a) x = std::clamp(x, -1.0, 1.0);
}

std::vector<double> clamped(std::span<const double> action, int dim) {
  if (static_cast<int>(action.size()) != dim)
    throw std::invalid_argument("step: action dimension mismatch");
  std::vector<double> a(action.begin(), action.end());
  clamp_action(a);
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Maze layout

bool MazeLayout::open(int cx, int cy) const {
  if (cx < 0 || cy < 0 || cy >= height() || cx >= width()) return false;
  return grid[cy][cx] != '#';
}

bool MazeLayout::connected(const std::vector<MazeCell>& blocked) const {
  auto is_blocked = [&](int x, int y) {
    return std::find(blocked.begin(), blocked.end(), MazeCell{x, y}) != blocked.end();
  };
  std::vector<uint8_t> seen(static_cast<size_t>(width()) * height(), 0);
  std::deque<MazeCell> queue{start};
  seen[start.y * width() + start.x] = 1;
  while (!queue.empty()) {
    const MazeCell c = queue.front();
    queue.pop_front();
    if (c == goal) return true;
    const int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int nx = c.x + dx[k], ny = c.y + dy[k];
      if (!open(nx, ny) || is_blocked(nx, ny) || seen[ny * width() + nx]) continue;
      seen[ny * width() + nx] = 1;
      queue.push_back({nx, ny});
    }
  }
  return false;
}

MazeLayout MazeLayout::parse(const std::vector<std::string>& rows) {
  if (rows.empty()) throw std::invalid_argument("maze layout: empty grid");
  MazeLayout layout;
  layout.grid = rows;
  int starts = 0, goals = 0;
  for (size_t y = 0; y < rows.size(); ++y) {
    if (rows[y].size() != rows.front().size())
      throw std::invalid_argument("maze layout: ragged grid");
    for (size_t x = 0; x < rows[y].size(); ++x) {
      const char c = rows[y][x];
      if (c == 'S') {
        layout.start = {static_cast<int>(x), static_cast<int>(y)};
        ++starts;
      } else if (c == 'G') {
        layout.goal = {static_cast<int>(x), static_cast<int>(y)};
        ++goals;
      } else if (c != '#' && c != '.') {
        throw std::invalid_argument("maze layout: unknown cell char");
      }
    }
  }
  if (starts != 1 || goals != 1)
    throw std::invalid_argument("maze layout: need exactly one S and one G");
  return layout;
}

MazeLayout MazeLayout::default_layout() {
  return parse({
      "#######",
      "#S....#",
      "#.###.#",
      "#.###.#",
      "#.###.#",
      "#....G#",
      "#######",
  });
}

std::vector<MazeCell> default_corridor_a() {
  return {{2, 1}, {3, 1}, {4, 1}, {5, 1}, {5, 2}, {5, 3}, {5, 4}};
}

std::vector<MazeCell> default_corridor_b() {
  return {{1, 2}, {1, 3}, {1, 4}, {1, 5}, {2, 5}, {3, 5}, {4, 5}};
}

namespace {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-separated move with wall collisions: a blocked axis leaves that
/// coordinate unchanged.
Vec2 maze_move(const MazeLayout& layout, Vec2 pos, std::span<const double> action) {
  const double dx = kMazeStepScale * std::clamp(action[0], -1.0, 1.0);
  const double dy = kMazeStepScale * std::clamp(action[1], -1.0, 1.0);
  Vec2 next = pos;
  const double nx = pos.x + dx;
  if (layout.open(static_cast<int>(std::floor(nx)), static_cast<int>(std::floor(pos.y))))
    next.x = nx;
  const double ny = pos.y + dy;
  if (layout.open(static_cast<int>(std::floor(next.x)), static_cast<int>(std::floor(ny))))
    next.y = ny;
  return next;
}

MazeCell cell_of(Vec2 pos) {
  return {static_cast<int>(std::floor(pos.x)), static_cast<int>(std::floor(pos.y))};
}

// ---------------------------------------------------------------------------
// Environments

class FixedStateBandit : public Environment {
 public:
  int state_dim() const override { return 1; }
  int action_dim() const override { return 2; }
  int horizon() const override { return 1; }
  std::vector<double> reset(uint64_t) override { return {0.0}; }
  StepResult step(std::span<const double> action) override {
    const std::vector<double> a = clamped(action, 2);
    return {{0.0}, reward(a), true, false};
  }

 protected:
  virtual double reward(const std::vector<double>& a) const = 0;
};

class FourCirclesEnv final : public FixedStateBandit {
 public:
  std::string name() const override { return "four_circles"; }

 protected:
  // density-only study: the reward carries no signal
  double reward(const std::vector<double>&) const override { return 0.0; }
};

class RightwardRewardEnv final : public FixedStateBandit {
 public:
  std::string name() const override { return "rightward_reward"; }

 protected:
  double reward(const std::vector<double>& a) const override { return a[0]; }
};

class PointMazeEnv final : public Environment {
 public:
  explicit PointMazeEnv(MazeLayout layout) : layout_(std::move(layout)) {
    if (!layout_.connected())
      throw std::invalid_argument("point_maze_env: start and goal are not connected");
  }

  int state_dim() const override { return 2; }
  int action_dim() const override { return 2; }
  int horizon() const override { return 200; }
  std::string name() const override { return "point_maze"; }

  std::vector<double> reset(uint64_t seed) override {
    Rng rng(derive_seed(seed, 0xE21));
    pos_ = {layout_.start.x + 0.5 + rng.uniform(-0.1, 0.1),
            layout_.start.y + 0.5 + rng.uniform(-0.1, 0.1)};
    steps_ = 0;
    return {pos_.x, pos_.y};
  }

  StepResult step(std::span<const double> action) override {
    const std::vector<double> a = clamped(action, 2);
    pos_ = maze_move(layout_, pos_, a);
    ++steps_;
    const bool at_goal = cell_of(pos_) == layout_.goal;
    StepResult out;
    out.state = {pos_.x, pos_.y};
    out.reward = at_goal ? 1.0 : 0.0;
    out.done = at_goal;
    out.truncated = !at_goal && steps_ >= horizon();
    return out;
  }

  const MazeLayout& layout() const { return layout_; }

 private:
  MazeLayout layout_;
  Vec2 pos_;
  int steps_ = 0;
};

constexpr double kDiskRadius = 0.15;
constexpr double kDiskCenters[4][2] = {{0.5, 0.5}, {0.5, -0.5}, {-0.5, 0.5}, {-0.5, -0.5}};

}  // namespace

bool inside_any_disk(std::span<const double> action) {
  for (const auto& c : kDiskCenters) {
    const double dx = action[0] - c[0], dy = action[1] - c[1];
    if (dx * dx + dy * dy <= kDiskRadius * kDiskRadius) return true;
  }
  return false;
}

std::unique_ptr<Environment> four_circles_env() { return std::make_unique<FourCirclesEnv>(); }

std::unique_ptr<Environment> rightward_reward_env() {
  return std::make_unique<RightwardRewardEnv>();
}

std::unique_ptr<Environment> point_maze_env(const MazeLayout& layout) {
  return std::make_unique<PointMazeEnv>(layout);
}

std::unique_ptr<Environment> make_env(const std::string& name) {
  if (name == "four_circles") return four_circles_env();
  if (name == "rightward_reward") return rightward_reward_env();
  if (name == "point_maze") return point_maze_env(MazeLayout::default_layout());
  throw std::invalid_argument("unknown environment: " + name);
}

// ---------------------------------------------------------------------------
// Dataset generation

BehaviorPolicy parse_behavior(const std::string& name) {
  if (name == "uniform-in-region" || name == "uniform_in_region")
    return BehaviorPolicy::uniform_in_region;
  if (name == "gaussian") return BehaviorPolicy::gaussian;
  if (name == "scripted-corridor" || name == "scripted_corridor")
    return BehaviorPolicy::scripted_corridor;
  throw std::invalid_argument("unknown behavior policy: " + name);
}

namespace {

std::vector<double> disk_sample(Rng& rng) {
  const int k = rng.uniform_int(4);
  const double radius = kDiskRadius * std::sqrt(rng.uniform());
  const double angle = 2.0 * M_PI * rng.uniform();
  return {kDiskCenters[k][0] + radius * std::cos(angle),
          kDiskCenters[k][1] + radius * std::sin(angle)};
}

Dataset generate_bandit_dataset(Environment& env, BehaviorPolicy behavior, int size,
                                uint64_t seed) {
  Rng rng(derive_seed(seed, 0xDA7A));
  Dataset ds;
  ds.transitions.reserve(size);
  for (int i = 0; i < size; ++i) {
    std::vector<double> s = env.reset(derive_seed(seed, i));
    std::vector<double> a;
    if (behavior == BehaviorPolicy::uniform_in_region) {
      a = disk_sample(rng);
    } else {
      a = {0.2 * rng.normal(), 0.2 * rng.normal()};
      clamp_action(a);
    }
    const StepResult res = env.step(a);
    ds.transitions.push_back({std::move(s), std::move(a), res.reward, res.state, res.done});
  }
  return ds;
}

bool in_corridor_b(Vec2 pos) {
  const MazeCell c = cell_of(pos);
  const auto b = default_corridor_b();
  return std::find(b.begin(), b.end(), c) != b.end();
}

/// Follows corridor A waypoints with action noise; 10% of steps take a
/// uniform random action. Any candidate action whose outcome would land in a
/// corridor-B cell is resampled, so dataset coverage stays on route A.
Dataset generate_maze_dataset(Environment& env, int size, uint64_t seed) {
  const MazeLayout layout = MazeLayout::default_layout();
  std::vector<Vec2> waypoints;
  for (const MazeCell& c : default_corridor_a()) waypoints.push_back({c.x + 0.5, c.y + 0.5});
  waypoints.push_back({layout.goal.x + 0.5, layout.goal.y + 0.5});

  Rng rng(derive_seed(seed, 0xDA7A));
  Dataset ds;
  ds.transitions.reserve(size);
  uint64_t episode = 0;
  std::vector<double> s = env.reset(derive_seed(seed, episode));
  size_t wp = 0;
  while (ds.size() < size) {
    const Vec2 pos{s[0], s[1]};
    while (wp + 1 < waypoints.size() &&
           std::hypot(waypoints[wp].x - pos.x, waypoints[wp].y - pos.y) < 0.35)
      ++wp;
    std::vector<double> a(2);
    for (int attempt = 0; attempt < 100; ++attempt) {
      if (rng.uniform() < 0.1) {
        a = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      } else {
        a = {(waypoints[wp].x - pos.x) / kMazeStepScale + 0.15 * rng.normal(),
             (waypoints[wp].y - pos.y) / kMazeStepScale + 0.15 * rng.normal()};
        clamp_action(a);
      }
      if (!in_corridor_b(maze_move(layout, pos, a))) break;
      a = {0.0, 0.0};
    }
    const StepResult res = env.step(a);
    ds.transitions.push_back({s, a, res.reward, res.state, res.done});
    if (res.done || res.truncated) {
      ++episode;
      s = env.reset(derive_seed(seed, episode));
      wp = 0;
    } else {
      s = res.state;
    }
  }
  return ds;
}

}  // namespace

Dataset generate_offline_dataset(Environment& env, BehaviorPolicy behavior, int size,
                                 uint64_t seed) {
  if (size < 1) throw std::invalid_argument("generate_offline_dataset: size must be >= 1");
  const std::string env_name = env.name();
  Dataset ds;
  if (env_name == "four_circles" && behavior == BehaviorPolicy::uniform_in_region) {
    ds = generate_bandit_dataset(env, behavior, size, seed);
  } else if (env_name == "rightward_reward" && behavior == BehaviorPolicy::gaussian) {
    ds = generate_bandit_dataset(env, behavior, size, seed);
  } else if (env_name == "point_maze" && behavior == BehaviorPolicy::scripted_corridor) {
    ds = generate_maze_dataset(env, size, seed);
  } else {
    throw std::invalid_argument("generate_offline_dataset: behavior not supported for env " +
                                env_name);
  }
  ds.header = {env_name, seed, size, env.state_dim(), env.action_dim()};
  return ds;
}

BehaviorPolicy default_behavior_for(const std::string& env_name) {
  if (env_name == "four_circles") return BehaviorPolicy::uniform_in_region;
  if (env_name == "rightward_reward") return BehaviorPolicy::gaussian;
  if (env_name == "point_maze") return BehaviorPolicy::scripted_corridor;
  throw std::invalid_argument("no default behavior for env: " + env_name);
}

// ---------------------------------------------------------------------------
// Dataset serialization

namespace {

void put_f64(std::ofstream& out, double d) {
  const uint64_t v = std::bit_cast<uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  const DatasetHeader& h = dataset.header;
  out << "FINODATA 1 env=" << h.env << " seed=" << h.seed << " size=" << h.size
      << " state_dim=" << h.state_dim << " action_dim=" << h.action_dim << "\n";
  for (const Transition& t : dataset.transitions) {
    for (double v : t.s) put_f64(out, v);
    for (double v : t.a) put_f64(out, v);
    put_f64(out, t.r);
    for (double v : t.s2) put_f64(out, v);
    put_f64(out, t.done ? 1.0 : 0.0);
  }
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_dataset: missing header");
  Dataset ds;
  char env_buf[128] = {0};
  unsigned long long seed = 0;
  int size = 0, sd = 0, ad = 0;
  if (std::sscanf(line.c_str(), "FINODATA 1 env=%127s seed=%llu size=%d state_dim=%d action_dim=%d",
                  env_buf, &seed, &size, &sd, &ad) != 5)
    throw std::runtime_error("load_dataset: bad header in " + path);
  ds.header = {env_buf, seed, size, sd, ad};
  ds.transitions.resize(size);
  for (Transition& t : ds.transitions) {
    t.s.resize(sd);
    t.a.resize(ad);
    t.s2.resize(sd);
    for (double& v : t.s) v = get_f64(in);
    for (double& v : t.a) v = get_f64(in);
    t.r = get_f64(in);
    for (double& v : t.s2) v = get_f64(in);
    t.done = get_f64(in) != 0.0;
  }
  if (!in) throw std::runtime_error("load_dataset: truncated file " + path);
  return ds;
}

void export_dataset_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("export_dataset_csv: cannot open " + path);
  const int sd = dataset.header.state_dim, ad = dataset.header.action_dim;
  for (int i = 0; i < sd; ++i) out << "s" << i << ",";
  for (int i = 0; i < ad; ++i) out << "a" << i << ",";
  out << "r,";
  for (int i = 0; i < sd; ++i) out << "next_s" << i << ",";
  out << "done\n";
  char buf[64];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (const Transition& t : dataset.transitions) {
    for (double v : t.s) {
      emit(v);
      out << ",";
    }
    for (double v : t.a) {
      emit(v);
      out << ",";
    }
    emit(t.r);
    out << ",";
    for (double v : t.s2) {
      emit(v);
      out << ",";
    }
    out << (t.done ? 1 : 0) << "\n";
  }
}

TransitionBatch sample_batch(const Dataset& dataset, int batch_size, Rng& rng) {
  if (dataset.size() == 0) throw std::invalid_argument("sample_batch: empty dataset");
  TransitionBatch batch;
  batch.resize(batch_size, dataset.header.state_dim, dataset.header.action_dim);
  for (int i = 0; i < batch_size; ++i)
    batch.set_row(i, dataset.transitions[rng.uniform_index(dataset.transitions.size())]);
  return batch;
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: zero capacity");
  items_.reserve(std::min(capacity, size_t{1} << 20));
}

void ReplayBuffer::push(Transition t) {
  ++pushed_;
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
  }
}

TransitionBatch ReplayBuffer::sample(int batch_size, Rng& rng) const {
  if (items_.empty()) throw std::runtime_error("ReplayBuffer::sample: buffer is empty");
  TransitionBatch batch;
  const Transition& first = items_.front();
  batch.resize(batch_size, static_cast<int>(first.s.size()), static_cast<int>(first.a.size()));
  for (int i = 0; i < batch_size; ++i) batch.set_row(i, items_[rng.uniform_index(items_.size())]);
  return batch;
}

}  // namespace fino
