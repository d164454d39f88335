#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ascm/matcher.hpp"
#include "ascm/model.hpp"
#include "ascm/synth.hpp"
#include "ascm/trainer.hpp"

namespace ascm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

/// Every recognized key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Built-in defaults, then `key = value` files, then explicit overrides.
class RunConfig {
 public:
  RunConfig();

  /// Lines of `key = value`; '#' starts a comment. Unknown keys throw.
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  bool is_set(const std::string& key) const { return !get(key).empty(); }
  int get_int(const std::string& key) const;
  long get_long(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;
  /// Throws naming the key when it is empty.
  const std::string& require(const std::string& key) const;

  ModelConfig model_config() const;
  /// `window` holds one radius, "ry,rx", or "y_min,y_max,x_min,x_max".
  SearchWindow window() const;
  TrainConfig train_config() const;
  SynthConfig synth_config() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ascm
