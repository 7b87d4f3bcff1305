#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "nlh/effective.hpp"
#include "nlh/environment.hpp"
#include "nlh/fullscale.hpp"

namespace nlh {

inline constexpr int kSchemaVersion = 1;

/// Flat `key = value` configuration with '#' comments. Keys are checked against a fixed
/// schema; missing keys take their documented defaults.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "<config>");
  static Config load(const std::string& path);
  static Config defaults();

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Whitespace or comma separated numbers.
  std::vector<double> get_list(const std::string& key) const;

  /// Sets a key after validating it against the schema.
  void set(const std::string& key, const std::string& value);

  /// Sorted `key = value` lines of every key that enters numerical results.
  std::string canonical() const;
  const std::map<std::string, std::string>& values() const { return values_; }
  const std::string& origin() const { return origin_; }

 private:
  void check(const std::string& key, const std::string& value, int line) const;

  std::map<std::string, std::string> values_;
  std::string origin_;
};

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& data);

Mode config_mode(const Config& cfg);
Kernel build_kernel(const Config& cfg);
MarkovDriver build_driver(const Config& cfg);
EnvironmentModel build_environment(const Config& cfg);
ErgodicOptions ergodic_options(const Config& cfg);
std::vector<TestFunction> test_functions(const Config& cfg);
int config_workers(const Config& cfg);

}  // namespace nlh
