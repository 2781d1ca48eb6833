#include "moevit/config.hpp"

#include <fstream>
#include <sstream>

namespace moevit {

namespace {

size_t to_size(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return (size_t)n;
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const uint64_t n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected an unsigned integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw config_error("key '" + key + "': expected a boolean (true/false/1/0), got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    try {
      size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw config_error("key '" + key + "': expected comma-separated integers, got '" + v + "'");
    }
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "height") spec.height = to_size(key, value);
  else if (key == "width") spec.width = to_size(key, value);
  else if (key == "patch") spec.patch = to_size(key, value);
  else if (key == "channels") spec.channels = to_size(key, value);
  else if (key == "dim") spec.dim = to_size(key, value);
  else if (key == "heads") spec.heads = to_size(key, value);
  else if (key == "layers") spec.layers = to_size(key, value);
  else if (key == "topk") spec.topk = to_size(key, value);
  else if (key == "num_classes") spec.num_classes = to_size(key, value);
  else if (key == "aggregation") {
    if (value == "gate") spec.aggregation = AggMode::kGateWeighted;
    else if (value == "uniform") spec.aggregation = AggMode::kUniform;
    else throw config_error("key 'aggregation': expected gate|uniform, got '" + value + "'");
  }
  else if (key == "hcs") spec.hcs = to_bool(key, value);
  else if (key == "steps") opt.steps = to_size(key, value);
  else if (key == "lr") opt.lr = to_double(key, value);
  else if (key == "seed") opt.seed = to_u64(key, value);
  else if (key == "batch_size") opt.batch_size = to_size(key, value);
  else if (key == "weight_decay") opt.weight_decay = to_double(key, value);
  else if (key == "w_importance") opt.w_importance = to_double(key, value);
  else if (key == "w_load") opt.w_load = to_double(key, value);
  else if (key == "balance") opt.balance = to_bool(key, value);
  else if (key == "eval_interval") opt.eval_interval = to_size(key, value);
  else if (key == "train_size") opt.train_size = to_size(key, value);
  else if (key == "eval_size") opt.eval_size = to_size(key, value);
  else if (key == "task_seed") task.seed = to_u64(key, value);
  else if (key == "signal_channels") task.signal_channels = to_int_list(key, value);
  else if (key == "amplitude") task.amplitude = to_double(key, value);
  else if (key == "noise_sigma") task.noise_sigma = to_double(key, value);
  else throw config_error("unknown config key '" + key + "'");

  // The task mirrors the architecture geometry; keep them in lock step.
  task.height = spec.height;
  task.width = spec.width;
  task.channels = spec.channels;
  task.num_classes = spec.num_classes;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  cfg.task.height = cfg.spec.height;
  cfg.task.width = cfg.spec.width;
  cfg.task.channels = cfg.spec.channels;
  cfg.task.num_classes = cfg.spec.num_classes;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("line " + std::to_string(lineno) +
                         ": expected key=value, got '" + line + "'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot read config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str());
}

std::string dump_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "height=" << cfg.spec.height << "\n";
  out << "width=" << cfg.spec.width << "\n";
  out << "patch=" << cfg.spec.patch << "\n";
  out << "channels=" << cfg.spec.channels << "\n";
  out << "dim=" << cfg.spec.dim << "\n";
  out << "heads=" << cfg.spec.heads << "\n";
  out << "layers=" << cfg.spec.layers << "\n";
  out << "topk=" << cfg.spec.topk << "\n";
  out << "num_classes=" << cfg.spec.num_classes << "\n";
  out << "aggregation="
      << (cfg.spec.aggregation == AggMode::kGateWeighted ? "gate" : "uniform")
      << "\n";
  out << "hcs=" << (cfg.spec.hcs ? "true" : "false") << "\n";
  out << "steps=" << cfg.opt.steps << "\n";
  out << "lr=" << cfg.opt.lr << "\n";
  out << "seed=" << cfg.opt.seed << "\n";
  out << "batch_size=" << cfg.opt.batch_size << "\n";
  out << "weight_decay=" << cfg.opt.weight_decay << "\n";
  out << "w_importance=" << cfg.opt.w_importance << "\n";
  out << "w_load=" << cfg.opt.w_load << "\n";
  out << "balance=" << (cfg.opt.balance ? "true" : "false") << "\n";
  out << "eval_interval=" << cfg.opt.eval_interval << "\n";
  out << "train_size=" << cfg.opt.train_size << "\n";
  out << "eval_size=" << cfg.opt.eval_size << "\n";
  out << "task_seed=" << cfg.task.seed << "\n";
  out << "signal_channels=";
  for (size_t i = 0; i < cfg.task.signal_channels.size(); ++i)
    out << (i ? "," : "") << cfg.task.signal_channels[i];
  out << "\n";
  out << "amplitude=" << cfg.task.amplitude << "\n";
  out << "noise_sigma=" << cfg.task.noise_sigma << "\n";
  return out.str();
}

}  // namespace moevit
