#include "nlh/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "nlh/parallel.hpp"

namespace nlh {

namespace {

enum class Kind { integer, uinteger, real, boolean, choice, list, text, matrix, field };

struct KeySpec {
  const char* key;
  Kind kind;
  const char* fallback;
  std::vector<std::string> choices = {};
  bool numerical = true;  // enters the config hash
};

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> s = {
      {"schema_version", Kind::integer, "1"},
      {"name", Kind::text, "unnamed", {}, false},
      {"mode", Kind::choice, "symmetric", {"symmetric", "nonsymmetric"}},
      {"seed", Kind::uinteger, "1"},
      {"workers", Kind::integer, "0", {}, false},
      {"torus_points", Kind::integer, "32"},
      {"ds", Kind::real, "0.25"},
      {"kernel", Kind::choice, "uniform", {"uniform", "gaussian", "tabulated"}},
      {"kernel.half_width", Kind::real, "1.0"},
      {"kernel.sigma", Kind::real, "0.3"},
      {"kernel.cutoff", Kind::real, "6.0"},
      {"kernel.table_z", Kind::list, ""},
      {"kernel.table_a", Kind::list, ""},
      {"driver.generator", Kind::matrix, "0"},
      {"lambda_min", Kind::real, "0.5"},
      {"lambda_max", Kind::real, "1.5"},
      {"initial.center", Kind::real, "0.0"},
      {"initial.width", Kind::real, "1.0"},
      {"correctors.window", Kind::integer, "200"},
      {"correctors.decay_horizon", Kind::real, "400"},
      {"effective.production", Kind::real, "2000"},
      {"effective.burn_in", Kind::real, "0"},
      {"effective.batches", Kind::integer, "16"},
      {"effective.chi1_gauge", Kind::choice, "weighted", {"weighted", "plain"}},
      {"effective.chi2_gauge", Kind::choice, "weighted", {"weighted", "plain"}},
      {"simulate.eps", Kind::list, "0.2 0.1 0.05"},
      {"simulate.horizon", Kind::real, "0.5"},
      {"simulate.replicates", Kind::integer, "200"},
      {"simulate.snapshot_times", Kind::list, ""},
      {"simulate.tests", Kind::text, "0:1 0.8:0.7 -1.2:1.3"},
      {"simulate.tail_tolerance", Kind::real, "1e-6"},
      {"simulate.error_samples", Kind::integer, "50"},
      {"simulate.with_r1", Kind::boolean, "false"},
      {"clt.eps", Kind::list, "0.05 0.02"},
      {"clt.horizon", Kind::real, "1.0"},
      {"clt.replicates", Kind::integer, "400"},
      {"spde.samples", Kind::integer, "1000"},
      {"spde.steps", Kind::integer, "200"},
      {"verify.residual_samples", Kind::integer, "20"},
      {"verify.decay_replicates", Kind::integer, "4"},
      {"verify.indicator_state", Kind::integer, "0"},
  };
  return s;
}

const KeySpec* find_spec(const std::string& key) {
  for (const auto& s : schema())
    if (key == s.key) return &s;
  if (key.rfind("field.", 0) == 0 && key.size() > 6 &&
      std::all_of(key.begin() + 6, key.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    static const KeySpec field{"field.N", Kind::field, ""};
    return &field;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_tokens(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (seps.find(c) != std::string::npos) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double& v) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto r = std::from_chars(b, e, v);
  return r.ec == std::errc() && r.ptr == e && std::isfinite(v);
}

bool parse_ll(const std::string& s, long long& v) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto r = std::from_chars(b, e, v);
  return r.ec == std::errc() && r.ptr == e;
}

std::string where(const std::string& origin, int line, const std::string& key) {
  std::string w = origin;
  if (line > 0) w += ":" + std::to_string(line);
  return w + ": key '" + key + "': ";
}

}  // namespace

void Config::check(const std::string& key, const std::string& value, int line) const {
  const KeySpec* spec = find_spec(key);
  if (spec == nullptr) throw ConfigError(where(origin_, line, key) + "unknown key");
  double d = 0.0;
  long long ll = 0;
  switch (spec->kind) {
    case Kind::integer:
      if (!parse_ll(value, ll)) throw ConfigError(where(origin_, line, key) + "expected an integer");
      break;
    case Kind::uinteger:
      if (!parse_ll(value, ll) || ll < 0)
        throw ConfigError(where(origin_, line, key) + "expected a non-negative integer");
      break;
    case Kind::real:
      if (!parse_double(value, d)) throw ConfigError(where(origin_, line, key) + "expected a number");
      break;
    case Kind::boolean:
      if (value != "true" && value != "false")
        throw ConfigError(where(origin_, line, key) + "expected true or false");
      break;
    case Kind::choice:
      if (std::find(spec->choices.begin(), spec->choices.end(), value) == spec->choices.end())
        throw ConfigError(where(origin_, line, key) + "unsupported value '" + value + "'");
      break;
    case Kind::list:
    case Kind::matrix:
    case Kind::field:
      for (const auto& tok : split_tokens(value, " ,;\t"))
        if (!parse_double(tok, d))
          throw ConfigError(where(origin_, line, key) + "'" + tok + "' is not a number");
      if (spec->kind == Kind::field) {
        const auto n = split_tokens(value, " ,\t").size();
        if (n < 5 || n > 6)
          throw ConfigError(where(origin_, line, key) + "expected mu alpha gamma delta phase [source]");
      }
      break;
    case Kind::text:
      break;
  }
}

Config Config::defaults() {
  Config c;
  c.origin_ = "<defaults>";
  for (const auto& s : schema()) c.values_[s.key] = s.fallback;
  return c;
}

Config Config::parse(std::istream& in, const std::string& origin) {
  Config c = defaults();
  c.origin_ = origin;
  std::string raw;
  int line = 0;
  bool saw_version = false;
  std::map<std::string, int> seen;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(line) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (seen.count(key))
      throw ConfigError(where(origin, line, key) + "duplicate (first set on line " + std::to_string(seen[key]) + ")");
    seen[key] = line;
    c.check(key, value, line);
    if (key == "schema_version") {
      saw_version = true;
      if (value != std::to_string(kSchemaVersion))
        throw ConfigError(where(origin, line, key) + "unsupported schema version " + value);
    }
    c.values_[key] = value;
  }
  if (!saw_version) throw ConfigError(origin + ": missing schema_version");
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  return parse(f, path);
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(where(origin_, 0, key) + "not set");
  return it->second;
}

double Config::get_double(const std::string& key) const {
  double v = 0.0;
  if (!parse_double(get(key), v)) throw ConfigError(where(origin_, 0, key) + "expected a number");
  return v;
}

long long Config::get_int(const std::string& key) const {
  long long v = 0;
  if (!parse_ll(get(key), v)) throw ConfigError(where(origin_, 0, key) + "expected an integer");
  return v;
}

std::uint64_t Config::get_uint(const std::string& key) const {
  const long long v = get_int(key);
  if (v < 0) throw ConfigError(where(origin_, 0, key) + "expected a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

bool Config::get_bool(const std::string& key) const { return get(key) == "true"; }

std::vector<double> Config::get_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& tok : split_tokens(get(key), " ,;\t")) {
    double v = 0.0;
    if (!parse_double(tok, v)) throw ConfigError(where(origin_, 0, key) + "'" + tok + "' is not a number");
    out.push_back(v);
  }
  return out;
}

void Config::set(const std::string& key, const std::string& value) {
  check(key, value, 0);
  values_[key] = value;
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    const KeySpec* s = find_spec(k);
    if (s != nullptr && !s->numerical) continue;
    out += k + " = " + v + "\n";
  }
  return out;
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw NumericalError("sha256 failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// ---------------------------------------------------------------------------

Mode config_mode(const Config& cfg) {
  return cfg.get("mode") == "nonsymmetric" ? Mode::nonsymmetric : Mode::symmetric;
}

Kernel build_kernel(const Config& cfg) {
  const std::string& k = cfg.get("kernel");
  if (k == "uniform") return Kernel::uniform(cfg.get_double("kernel.half_width"));
  if (k == "gaussian") return Kernel::truncated_gaussian(cfg.get_double("kernel.sigma"), cfg.get_double("kernel.cutoff"));
  return Kernel::tabulated(cfg.get_list("kernel.table_z"), cfg.get_list("kernel.table_a"));
}

MarkovDriver build_driver(const Config& cfg) {
  const auto rows = split_tokens(cfg.get("driver.generator"), ";");
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw ConfigError("driver.generator: empty matrix");
  Eigen::MatrixXd q(n, n);
  for (int r = 0; r < n; ++r) {
    const auto toks = split_tokens(rows[r], " ,\t");
    if (static_cast<int>(toks.size()) != n)
      throw ConfigError("driver.generator: row " + std::to_string(r) + " has " +
                        std::to_string(toks.size()) + " entries, expected " + std::to_string(n));
    for (int c = 0; c < n; ++c) parse_double(toks[c], q(r, c));
  }
  return MarkovDriver(q);
}

EnvironmentModel build_environment(const Config& cfg) {
  MarkovDriver driver = build_driver(cfg);
  std::vector<FieldCoefficients> coeffs;
  for (int k = 0; k < driver.states(); ++k) {
    const std::string key = "field." + std::to_string(k);
    if (!cfg.has(key)) throw ConfigError("missing " + key + " for driver state " + std::to_string(k));
    const auto v = cfg.get_list(key);
    FieldCoefficients c;
    c.mu = v[0];
    c.alpha = v[1];
    c.gamma = v[2];
    c.delta = v[3];
    c.phase = v[4];
    if (v.size() > 5) c.source = v[5];
    coeffs.push_back(c);
  }
  for (const auto& [key, value] : cfg.values())
    if (key.rfind("field.", 0) == 0 && std::stoll(key.substr(6)) >= driver.states())
      throw ConfigError("key '" + key + "': no such driver state");
  const long long nt = cfg.get_int("torus_points");
  if (nt < 4 || nt > 1 << 16) throw ConfigError("torus_points out of range");
  return EnvironmentModel::from_coefficients(build_kernel(cfg), std::move(driver), static_cast<int>(nt),
                                             coeffs, cfg.get_double("lambda_min"),
                                             cfg.get_double("lambda_max"));
}

ErgodicOptions ergodic_options(const Config& cfg) {
  ErgodicOptions o;
  o.mode = config_mode(cfg);
  o.ds = cfg.get_double("ds");
  o.burn_in = cfg.get_double("effective.burn_in");
  o.production = cfg.get_double("effective.production");
  o.batches = static_cast<int>(cfg.get_int("effective.batches"));
  o.seed = cfg.get_uint("seed");
  o.stream = 0;
  o.pilot_horizon = cfg.get_double("correctors.decay_horizon");
  o.chi1_gauge = cfg.get("effective.chi1_gauge") == "plain" ? Gauge::plain : Gauge::weighted;
  o.chi2_gauge = cfg.get("effective.chi2_gauge") == "plain" ? Gauge::plain : Gauge::weighted;
  return o;
}

std::vector<TestFunction> test_functions(const Config& cfg) {
  std::vector<TestFunction> out;
  for (const auto& tok : split_tokens(cfg.get("simulate.tests"), " ,\t")) {
    const auto parts = split_tokens(tok, ":");
    TestFunction f;
    if (parts.size() != 2 || !parse_double(parts[0], f.center) || !parse_double(parts[1], f.width) ||
        !(f.width > 0.0))
      throw ConfigError("simulate.tests: expected center:width pairs, got '" + tok + "'");
    out.push_back(f);
  }
  return out;
}

int config_workers(const Config& cfg) {
  const long long w = cfg.get_int("workers");
  return w > 0 ? static_cast<int>(w) : default_workers();
}

}  // namespace nlh
