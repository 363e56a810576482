#include "fino/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fino/flow.hpp"
#include "fino/schedule.hpp"

namespace fino {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

long parse_long(const std::string& key, const std::string& value) {
  size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key + ": " + value);
  }
  if (pos != value.size()) throw std::invalid_argument("config: bad integer for " + key);
  return v;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad unsigned integer for " + key + ": " + value);
  }
  if (pos != value.size()) throw std::invalid_argument("config: bad unsigned integer for " + key);
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": " + value);
  }
  if (pos != value.size()) throw std::invalid_argument("config: bad number for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config: bad bool for " + key + ": " + value);
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(parse_long(key, item)));
  }
  if (out.empty()) throw std::invalid_argument("config: empty list for " + key);
  return out;
}

}  // namespace

void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "env") c.env = value;
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "dataset") c.dataset = value;
  else if (key == "offline_steps") c.offline_steps = parse_long(key, value);
  else if (key == "online_steps") c.online_steps = parse_long(key, value);
  else if (key == "eval_interval") c.eval_interval = parse_long(key, value);
  else if (key == "eval_episodes") c.eval_episodes = static_cast<int>(parse_long(key, value));
  else if (key == "log_interval") c.log_interval = parse_long(key, value);
  else if (key == "hidden") c.hidden = parse_int_list(key, value);
  else if (key == "batch_size") c.batch_size = static_cast<int>(parse_long(key, value));
  else if (key == "learning_rate") c.learning_rate = parse_double(key, value);
  else if (key == "discount") c.discount = parse_double(key, value);
  else if (key == "tau") c.tau = parse_double(key, value);
  else if (key == "bc_coefficient") c.bc_coefficient = parse_double(key, value);
  else if (key == "eta") c.eta = parse_double(key, value);
  else if (key == "sigma_min") c.sigma_min = parse_double(key, value);
  else if (key == "schedule") c.schedule = value;
  else if (key == "target_mode") c.target_mode = value;
  else if (key == "flow_steps") c.flow_steps = static_cast<int>(parse_long(key, value));
  else if (key == "use_min_of_two") c.use_min_of_two = parse_bool(key, value);
  else if (key == "selection") c.selection = value;
  else if (key == "n_sample") c.n_sample = static_cast<int>(parse_long(key, value));
  else if (key == "xi_init") c.xi_init = parse_double(key, value);
  else if (key == "xi_learning_rate") c.xi_learning_rate = parse_double(key, value);
  else if (key == "entropy_update_interval") c.entropy_update_interval = parse_long(key, value);
  else if (key == "target_entropy") {
    c.target_entropy = parse_double(key, value);
    c.target_entropy_auto = false;
  } else if (key == "entropy_actions_per_state")
    c.entropy_actions_per_state = static_cast<int>(parse_long(key, value));
  else if (key == "entropy_components")
    c.entropy_components = static_cast<int>(parse_long(key, value));
  else if (key == "em_max_iterations")
    c.em_max_iterations = static_cast<int>(parse_long(key, value));
  else if (key == "em_tolerance") c.em_tolerance = parse_double(key, value);
  else if (key == "em_jitter") c.em_jitter = parse_double(key, value);
  else if (key == "replay_capacity") c.replay_capacity = parse_long(key, value);
  else throw std::invalid_argument("config: unknown key: " + key);
}

RunConfig parse_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: missing '=' at " + path + ":" +
                                  std::to_string(line_no));
    apply_config_entry(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

void validate_config(const RunConfig& c) {
  if (c.offline_steps < 0 || c.online_steps < 0)
    throw std::invalid_argument("config: step counts must be >= 0");
  if (c.eval_interval < 1) throw std::invalid_argument("config: eval_interval must be >= 1");
  if (c.eval_episodes < 1) throw std::invalid_argument("config: eval_episodes must be >= 1");
  if (c.log_interval < 1 || c.log_interval % c.eval_interval != 0)
    throw std::invalid_argument("config: log_interval must be a multiple of eval_interval");
  if (c.hidden.empty()) throw std::invalid_argument("config: hidden layer list is empty");
  for (int h : c.hidden)
    if (h < 1) throw std::invalid_argument("config: hidden dims must be positive");
  if (c.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (c.learning_rate <= 0) throw std::invalid_argument("config: learning_rate must be > 0");
  if (!(c.discount > 0.0 && c.discount < 1.0))
    throw std::invalid_argument("config: discount must be in (0,1)");
  if (!(c.tau > 0.0 && c.tau <= 1.0)) throw std::invalid_argument("config: tau must be in (0,1]");
  if (c.bc_coefficient < 0) throw std::invalid_argument("config: bc_coefficient must be >= 0");
  if (!(c.eta >= 0.0 && c.eta <= 1.0)) throw std::invalid_argument("config: eta must be in [0,1]");
  if (c.sigma_min < 0) throw std::invalid_argument("config: sigma_min must be >= 0");
  parse_schedule_variant(c.schedule);
  parse_target_mode(c.target_mode);
  if (c.flow_steps < 1) throw std::invalid_argument("config: flow_steps must be >= 1");
  if (c.selection != "softmax" && c.selection != "greedy")
    throw std::invalid_argument("config: selection must be softmax or greedy");
  if (c.n_sample < 0) throw std::invalid_argument("config: n_sample must be >= 0");
  if (c.entropy_update_interval < 1)
    throw std::invalid_argument("config: entropy_update_interval must be >= 1");
  if (c.entropy_actions_per_state < 1 || c.entropy_components < 1 ||
      c.entropy_actions_per_state < c.entropy_components)
    throw std::invalid_argument("config: bad entropy estimation parameters");
  if (c.em_max_iterations < 1 || c.em_tolerance <= 0 || c.em_jitter <= 0)
    throw std::invalid_argument("config: EM parameters must be positive");
  if (c.replay_capacity < 0) throw std::invalid_argument("config: replay_capacity must be >= 0");
}

void write_config_file(const RunConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("config: cannot open " + path + " for writing");
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "env=" << c.env << "\n";
  out << "seed=" << c.seed << "\n";
  if (!c.dataset.empty()) out << "dataset=" << c.dataset << "\n";
  out << "offline_steps=" << c.offline_steps << "\n";
  out << "online_steps=" << c.online_steps << "\n";
  out << "eval_interval=" << c.eval_interval << "\n";
  out << "eval_episodes=" << c.eval_episodes << "\n";
  out << "log_interval=" << c.log_interval << "\n";
  out << "hidden=";
  for (size_t i = 0; i < c.hidden.size(); ++i) out << (i ? "," : "") << c.hidden[i];
  out << "\n";
  out << "batch_size=" << c.batch_size << "\n";
  out << "learning_rate=" << num(c.learning_rate) << "\n";
  out << "discount=" << num(c.discount) << "\n";
  out << "tau=" << num(c.tau) << "\n";
  out << "bc_coefficient=" << num(c.bc_coefficient) << "\n";
  out << "eta=" << num(c.eta) << "\n";
  out << "sigma_min=" << num(c.sigma_min) << "\n";
  out << "schedule=" << c.schedule << "\n";
  out << "target_mode=" << c.target_mode << "\n";
  out << "flow_steps=" << c.flow_steps << "\n";
  out << "use_min_of_two=" << (c.use_min_of_two ? "true" : "false") << "\n";
  out << "selection=" << c.selection << "\n";
  out << "n_sample=" << c.n_sample << "\n";
  out << "xi_init=" << num(c.xi_init) << "\n";
  out << "xi_learning_rate=" << num(c.xi_learning_rate) << "\n";
  out << "entropy_update_interval=" << c.entropy_update_interval << "\n";
  if (!c.target_entropy_auto) out << "target_entropy=" << num(c.target_entropy) << "\n";
  out << "entropy_actions_per_state=" << c.entropy_actions_per_state << "\n";
  out << "entropy_components=" << c.entropy_components << "\n";
  out << "em_max_iterations=" << c.em_max_iterations << "\n";
  out << "em_tolerance=" << num(c.em_tolerance) << "\n";
  out << "em_jitter=" << num(c.em_jitter) << "\n";
  out << "replay_capacity=" << c.replay_capacity << "\n";
}

}  // namespace fino
