#include "ascm/config.hpp"

#include <charconv>
#include <sstream>

#include "ascm/io.hpp"

namespace ascm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string s = trim(text);
  T value{};
  const char* first = s.data();
  if (!s.empty() && s[0] == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config: key '" + key + "': cannot parse '" + text + "' as a number");
  }
  return value;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "1", "seed for every stochastic step"},
      {"threads", "0", "worker threads (0: ASCM_THREADS or all cores)"},
      {"in_channels", "1", "network input channels (1: grayscale, 3: color)"},
      {"width", "64", "feature dimension D"},
      {"scales", "1,2", "down-sampling factors, increasing"},
      {"fusion", "attention", "attention or concat"},
      {"negatives", "200", "negatives per training triplet"},
      {"window", "8", "search window: r, 'ry,rx' or 'y_min,y_max,x_min,x_max'"},
      {"lr", "0.002", "base learning rate"},
      {"momentum", "0.9", "Nesterov momentum"},
      {"lr_step", "50000", "iterations between learning-rate drops"},
      {"lr_factor", "5", "learning-rate drop factor"},
      {"iterations", "1000", "total training iterations"},
      {"batch", "32", "triplets per step"},
      {"checkpoint_interval", "0", "iterations between checkpoints (0: final only)"},
      {"val_interval", "0", "iterations between validation passes (0: never)"},
      {"val_triplets", "256", "held-out triplets for validation"},
      {"log_interval", "1", "iterations between loss rows"},
      {"train_pairs", "16", "synthetic training pairs"},
      {"val_pairs", "4", "synthetic validation pairs"},
      {"data_list", "", "training list of 'source target flow' lines (replaces synthetic data)"},
      {"val_list", "", "validation list in the same format"},
      {"synth_height", "48", "synthetic image height"},
      {"synth_width", "48", "synthetic image width"},
      {"regions", "3", "moving rectangles per synthetic pair"},
      {"max_flow", "6", "largest synthetic |u|, |v|"},
      {"fixed_flow", "", "'u,v' applied to every synthetic layer"},
      {"noise_sigma", "0", "synthetic Gaussian pixel noise"},
      {"brightness", "0", "synthetic target brightness offset"},
      {"blur", "1", "synthetic texture smoothing"},
      {"contrast", "45", "synthetic texture contrast"},
      {"min_local_contrast", "3", "synthetic 7x7 contrast floor"},
      {"threshold", "3", "forward-backward consistency threshold"},
      {"checkpoint", "", "model checkpoint to load (train: resume)"},
      {"source", "", "source image (PGM/PPM)"},
      {"target", "", "target image (PGM/PPM)"},
      {"out", "", "output file, directory or prefix"},
      {"pred", "", "predicted flow (.flo) or keypoint predictions (CSV)"},
      {"gt", "", "ground-truth flow (.flo)"},
      {"mask", "", "PGM mask for masked EPE (non-zero: counted)"},
      {"keypoints", "", "keypoint CSV"},
      {"alphas", "", "PCK alphas (default 0.01..0.10)"},
      {"pixel", "", "'row,col' source pixel for match"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second = trim(value);
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string::npos) throw ConfigError("config: " + where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!values_.count(key)) throw ConfigError("config: " + where + ": unknown key '" + key + "'");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void RunConfig::merge_file(const std::string& path) {
  const auto bytes = read_file(path);
  merge_text(std::string(bytes.begin(), bytes.end()), path);
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  return it->second;
}

const std::string& RunConfig::require(const std::string& key) const {
  const auto& v = get(key);
  if (v.empty()) throw ConfigError("config: missing required key '" + key + "'");
  return v;
}

int RunConfig::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }
long RunConfig::get_long(const std::string& key) const { return parse_number<long>(key, get(key)); }
std::uint64_t RunConfig::get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }
double RunConfig::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_number<double>(key, item));
  return out;
}

std::vector<int> RunConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_number<int>(key, item));
  return out;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.in_channels = get_int("in_channels");
  m.width = get_int("width");
  m.scales = get_doubles("scales");
  try {
    m.fusion = parse_fusion(get("fusion"));
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return m;
}

SearchWindow RunConfig::window() const {
  const auto v = get_ints("window");
  SearchWindow w;
  if (v.size() == 1) {
    w = SearchWindow::symmetric(v[0], v[0]);
  } else if (v.size() == 2) {
    w = SearchWindow::symmetric(v[0], v[1]);
  } else if (v.size() == 4) {
    w = {v[0], v[1], v[2], v[3]};
  } else {
    throw ConfigError("config: key 'window': expected 1, 2 or 4 integers");
  }
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: key 'window': ") + e.what());
  }
  return w;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.model = model_config();
  t.negatives = get_int("negatives");
  t.window = window();
  t.lr = get_double("lr");
  t.momentum = get_double("momentum");
  t.lr_step = get_long("lr_step");
  t.lr_factor = get_double("lr_factor");
  t.iterations = get_long("iterations");
  t.batch = get_int("batch");
  t.seed = get_u64("seed");
  t.checkpoint_interval = get_long("checkpoint_interval");
  t.val_interval = get_long("val_interval");
  t.val_triplets = get_int("val_triplets");
  t.log_interval = get_long("log_interval");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return t;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig s;
  s.height = get_int("synth_height");
  s.width = get_int("synth_width");
  s.regions = get_int("regions");
  s.max_flow = get_int("max_flow");
  const SearchWindow w = window();
  s.radius = std::min({-w.y_min, w.y_max, -w.x_min, w.x_max});
  if (is_set("fixed_flow")) {
    const auto f = get_ints("fixed_flow");
    if (f.size() != 2) throw ConfigError("config: key 'fixed_flow': expected 'u,v'");
    s.fixed_flow = std::make_pair(f[0], f[1]);
  }
  s.noise_sigma = get_double("noise_sigma");
  s.brightness = get_double("brightness");
  s.blur = get_double("blur");
  s.contrast = get_double("contrast");
  s.min_local_contrast = get_double("min_local_contrast");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return s;
}

}  // namespace ascm
