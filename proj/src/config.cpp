#include "sombrl/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace sombrl {

namespace {

// ---------------------------------------------------------------------------
// Document model

struct Value {
  enum class Kind { Int, Float, Bool, String, Array };
  Kind kind = Kind::Int;
  long long i = 0;
  double f = 0.0;
  bool b = false;
  std::string s;
  std::vector<Value> items;
};

struct Entry {
  Value value;
  int line = 0;
};

class Cursor {
 public:
  Cursor(const std::string& text, const std::string& where) : t_(text), where_(where) {}

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(where_ + ": " + what); }

  void skip_space() {
    while (p_ < t_.size() && (t_[p_] == ' ' || t_[p_] == '\t')) ++p_;
  }
  bool done() const { return p_ >= t_.size(); }
  char peek() const { return done() ? '\0' : t_[p_]; }

  Value value() {
    skip_space();
    if (done()) fail("missing value");
    const char c = peek();
    if (c == '"') return string();
    if (c == '[') return array();
    return scalar();
  }

 private:
  Value string() {
    ++p_;
    Value v;
    v.kind = Value::Kind::String;
    while (true) {
      if (done()) fail("unterminated string");
      const char c = t_[p_++];
      if (c == '"') break;
      if (c == '\\') {
        if (done()) fail("unterminated escape");
        const char e = t_[p_++];
        switch (e) {
          case '"': v.s += '"'; break;
          case '\\': v.s += '\\'; break;
          case 'n': v.s += '\n'; break;
          case 't': v.s += '\t'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      } else {
        v.s += c;
      }
    }
    return v;
  }

  Value array() {
    ++p_;
    Value v;
    v.kind = Value::Kind::Array;
    skip_space();
    if (peek() == ']') {
      ++p_;
      return v;
    }
    while (true) {
      Value item = value();
      if (item.kind == Value::Kind::Array) fail("nested arrays are not supported");
      v.items.push_back(std::move(item));
      skip_space();
      if (peek() == ',') {
        ++p_;
        skip_space();
        if (peek() == ']') {
          ++p_;
          return v;
        }
        continue;
      }
      if (peek() == ']') {
        ++p_;
        return v;
      }
      fail("expected ',' or ']' in array");
    }
  }

  Value scalar() {
    const std::size_t start = p_;
    while (p_ < t_.size() && t_[p_] != ',' && t_[p_] != ']' && t_[p_] != ' ' && t_[p_] != '\t') ++p_;
    const std::string tok = t_.substr(start, p_ - start);
    Value v;
    if (tok == "true" || tok == "false") {
      v.kind = Value::Kind::Bool;
      v.b = tok == "true";
      return v;
    }
    if (tok == "inf" || tok == "+inf" || tok == "-inf") {
      v.kind = Value::Kind::Float;
      v.f = tok[0] == '-' ? -HUGE_VAL : HUGE_VAL;
      return v;
    }
    const bool integral = !tok.empty() && tok.find_first_not_of("+-0123456789") == std::string::npos;
    errno = 0;
    char* end = nullptr;
    if (integral) {
      v.kind = Value::Kind::Int;
      v.i = std::strtoll(tok.c_str(), &end, 10);
    } else {
      v.kind = Value::Kind::Float;
      v.f = std::strtod(tok.c_str(), &end);
    }
    if (tok.empty() || end != tok.c_str() + tok.size() || errno == ERANGE || tok.find("nan") != std::string::npos) {
      fail("cannot read value '" + tok + "'");
    }
    return v;
  }

  const std::string& t_;
  std::string where_;
  std::size_t p_ = 0;
};

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && in_string) {
      ++i;
    } else if (line[i] == '"') {
      in_string = !in_string;
    } else if (line[i] == '#' && !in_string) {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

const std::set<std::string>& sections() {
  static const std::set<std::string> s{"env", "run", "planner", "model", "experiment"};
  return s;
}

std::map<std::string, Entry> parse_document(const std::string& text, const std::string& origin) {
  std::map<std::string, Entry> out;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!sections().count(section)) {
        throw ParseError(where + ": unknown section [" + section + "] (expected env, run, planner, model or experiment)");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty() || key.find_first_of(" \t\".[]") != std::string::npos) {
      throw ParseError(where + ": bad key '" + key + "'");
    }
    if (section.empty()) throw ParseError(where + ": key '" + key + "' appears before any section");
    const std::string full = section + "." + key;
    if (out.count(full)) throw ParseError(where + ": duplicate key '" + full + "'");
    const std::string rest = line.substr(eq + 1);
    Cursor c(rest, where);
    Entry e;
    e.value = c.value();
    e.line = line_no;
    c.skip_space();
    if (!c.done()) throw ParseError(where + ": trailing characters after the value of '" + full + "'");
    out.emplace(full, std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Typed access

[[noreturn]] void type_error(const std::string& key, const char* expected) {
  throw ConfigError(key + ": expected " + expected);
}

long long as_int(const Value& v, const std::string& key) {
  if (v.kind != Value::Kind::Int) type_error(key, "an integer");
  return v.i;
}

int as_int32(const Value& v, const std::string& key) {
  const long long x = as_int(v, key);
  if (x < -2147483647LL || x > 2147483647LL) throw ConfigError(key + ": integer out of range");
  return static_cast<int>(x);
}

std::uint64_t as_u64(const Value& v, const std::string& key) {
  const long long x = as_int(v, key);
  if (x < 0) throw ConfigError(key + ": must be >= 0");
  return static_cast<std::uint64_t>(x);
}

double as_double(const Value& v, const std::string& key) {
  if (v.kind == Value::Kind::Int) return static_cast<double>(v.i);
  if (v.kind != Value::Kind::Float) type_error(key, "a number");
  return v.f;
}

bool as_bool(const Value& v, const std::string& key) {
  if (v.kind != Value::Kind::Bool) type_error(key, "true or false");
  return v.b;
}

std::string as_string(const Value& v, const std::string& key) {
  if (v.kind != Value::Kind::String) type_error(key, "a quoted string");
  return v.s;
}

const std::vector<Value>& as_array(const Value& v, const std::string& key) {
  if (v.kind != Value::Kind::Array) type_error(key, "an array");
  return v.items;
}

Eigen::VectorXd as_vector(const Value& v, const std::string& key) {
  const auto& items = as_array(v, key);
  Eigen::VectorXd out(static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) out(static_cast<Eigen::Index>(i)) = as_double(items[i], key);
  return out;
}

std::string fmt(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  std::string s = buf;
  // Keep floats recognisable as floats.
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

std::string fmt(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    if (c == '\t') {
      out += "\\t";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

std::string fmt(const Eigen::VectorXd& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v(i));
  return s + "]";
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

// ---------------------------------------------------------------------------
// Key table

struct KeySpec {
  std::string key;
  std::function<void(ExperimentConfig&, const Value&, const std::string&)> set;
  std::function<std::optional<std::string>(const ExperimentConfig&)> get;
};

template <class Ref>
KeySpec real_key(std::string key, Ref ref) {
  return {key, [ref](ExperimentConfig& c, const Value& v, const std::string& k) { ref(c) = as_double(v, k); },
          [ref](const ExperimentConfig& c) -> std::optional<std::string> {
            return fmt(ref(const_cast<ExperimentConfig&>(c)));
          }};
}

template <class Ref>
KeySpec int_key(std::string key, Ref ref) {
  return {key, [ref](ExperimentConfig& c, const Value& v, const std::string& k) { ref(c) = as_int32(v, k); },
          [ref](const ExperimentConfig& c) -> std::optional<std::string> {
            return std::to_string(ref(const_cast<ExperimentConfig&>(c)));
          }};
}

template <class Ref>
KeySpec bool_key(std::string key, Ref ref) {
  return {key, [ref](ExperimentConfig& c, const Value& v, const std::string& k) { ref(c) = as_bool(v, k); },
          [ref](const ExperimentConfig& c) -> std::optional<std::string> {
            return fmt_bool(ref(const_cast<ExperimentConfig&>(c)));
          }};
}

/// Optional vector: empty (or unset) vectors are omitted from the output.
template <class Ref>
KeySpec vector_key(std::string key, Ref ref) {
  return {key, [ref](ExperimentConfig& c, const Value& v, const std::string& k) { ref(c) = as_vector(v, k); },
          [ref](const ExperimentConfig& c) -> std::optional<std::string> {
            const Eigen::VectorXd& v = ref(const_cast<ExperimentConfig&>(c));
            if (v.size() == 0) return std::nullopt;
            return fmt(v);
          }};
}

/// String-valued enumeration with `parse` and `name` converters.
template <class Ref, class Parse, class Name>
KeySpec enum_key(std::string key, Ref ref, Parse parse, Name name) {
  return {key,
          [ref, parse](ExperimentConfig& c, const Value& v, const std::string& k) {
            const std::string s = as_string(v, k);
            try {
              ref(c) = parse(s);
            } catch (const InputError& e) {
              throw ConfigError(k + ": " + e.what());
            }
          },
          [ref, name](const ExperimentConfig& c) -> std::optional<std::string> {
            return fmt(std::string(name(ref(const_cast<ExperimentConfig&>(c)))));
          }};
}

LambdaSchedule::Mode lambda_mode_from_string(const std::string& s) {
  for (auto m : {LambdaSchedule::Mode::Constant, LambdaSchedule::Mode::Theory, LambdaSchedule::Mode::LinearDecay,
                 LambdaSchedule::Mode::AutoTune}) {
    if (s == to_string(m)) return m;
  }
  throw InputError("unknown lambda schedule '" + s + "' (expected constant, theory, linear_decay or autotune)");
}

BetaSchedule::Mode beta_mode_from_string(const std::string& s) {
  if (s == "fixed") return BetaSchedule::Mode::Fixed;
  if (s == "theory") return BetaSchedule::Mode::Theory;
  throw InputError("unknown beta schedule '" + s + "' (expected fixed or theory)");
}

std::string beta_mode_name(BetaSchedule::Mode m) { return m == BetaSchedule::Mode::Fixed ? "fixed" : "theory"; }

#define REF(expr) [](ExperimentConfig & c) -> auto& { return expr; }

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = [] {
    std::vector<KeySpec> t;
    // [env]
    t.push_back(enum_key(
        "env.family", REF(c.env.family), [](const std::string& s) { return env_family_from_string(s); },
        [](EnvFamily f) { return to_string(f); }));
    t.push_back(real_key("env.dt", REF(c.env.dt)));
    t.push_back(vector_key("env.noise_std", REF(c.env.noise_std)));
    t.push_back(int_key("env.horizon", REF(c.env.horizon)));
    t.push_back(real_key("env.reset_jitter", REF(c.env.reset_jitter)));
    t.push_back(real_key("env.action_cost_weight", REF(c.env.action_cost_weight)));
    t.push_back(real_key("env.gravity", REF(c.env.gravity)));
    t.push_back(real_key("env.length", REF(c.env.length)));
    t.push_back(real_key("env.mass", REF(c.env.mass)));
    t.push_back(real_key("env.damping", REF(c.env.damping)));
    t.push_back(real_key("env.max_torque", REF(c.env.max_torque)));
    t.push_back(real_key("env.torque_penalty", REF(c.env.torque_penalty)));
    t.push_back(real_key("env.power", REF(c.env.power)));
    t.push_back(real_key("env.goal_position", REF(c.env.goal_position)));
    // [run]
    t.push_back(enum_key(
        "run.regime", REF(c.run.regime), [](const std::string& s) { return regime_from_string(s); },
        [](Regime r) { return to_string(r); }));
    t.push_back(int_key("run.episodes", REF(c.run.episodes)));
    t.push_back(real_key("run.gamma", REF(c.run.gamma)));
    t.push_back(real_key("run.trigger_threshold", REF(c.run.trigger_threshold)));
    t.push_back(int_key("run.min_horizon", REF(c.run.min_horizon)));
    t.push_back(int_key("run.hard_cap", REF(c.run.hard_cap)));
    t.push_back(int_key("run.random_episodes", REF(c.run.random_episodes)));
    t.push_back(int_key("run.autotune_states", REF(c.run.autotune_states)));
    // [planner]
    t.push_back(int_key("planner.population", REF(c.run.planner.icem.population)));
    t.push_back(int_key("planner.elites", REF(c.run.planner.icem.elites)));
    t.push_back(int_key("planner.iterations", REF(c.run.planner.icem.iterations)));
    t.push_back(int_key("planner.horizon", REF(c.run.planner.icem.horizon)));
    t.push_back(real_key("planner.noise_color_exponent", REF(c.run.planner.icem.noise_color_exponent)));
    t.push_back(real_key("planner.population_decay", REF(c.run.planner.icem.population_decay)));
    t.push_back(real_key("planner.elite_fraction_kept", REF(c.run.planner.icem.elite_fraction_kept)));
    t.push_back(vector_key("planner.init_std", REF(c.run.planner.icem.init_std)));
    t.push_back(int_key("planner.particles", REF(c.run.planner.rollout.particles)));
    t.push_back(enum_key(
        "planner.lambda_schedule", REF(c.run.lambda.mode), [](const std::string& s) { return lambda_mode_from_string(s); },
        [](LambdaSchedule::Mode m) { return to_string(m); }));
    t.push_back(real_key("planner.lambda", REF(c.run.lambda.value)));
    t.push_back(real_key("planner.c_max", REF(c.run.lambda.c_max)));
    t.push_back(real_key("planner.theory_horizon", REF(c.run.lambda.theory_horizon)));
    t.push_back(real_key("planner.lambda0", REF(c.run.lambda.lambda0)));
    t.push_back(real_key("planner.lambda_final", REF(c.run.lambda.lambda_final)));
    t.push_back(real_key("planner.n_final", REF(c.run.lambda.n_final)));
    t.push_back(real_key("planner.step_size", REF(c.run.lambda.step_size)));
    t.push_back(real_key("planner.lambda_init", REF(c.run.lambda.lambda_init)));
    t.push_back(real_key("planner.lambda_min", REF(c.run.lambda.lambda_min)));
    t.push_back(real_key("planner.lambda_max", REF(c.run.lambda.lambda_max)));
    t.push_back(int_key("planner.lag", REF(c.run.lambda.lag)));
    // [model]
    t.push_back(enum_key(
        "model.kernel", REF(c.run.model.kernel), [](const std::string& s) { return kernel_family_from_string(s); },
        [](KernelFamily f) { return to_string(f); }));
    t.push_back({"model.lengthscales",
                 [](ExperimentConfig& c, const Value& v, const std::string& k) { c.run.model.lengthscales = as_vector(v, k); },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (!c.run.model.lengthscales) return std::nullopt;
                   return fmt(*c.run.model.lengthscales);
                 }});
    t.push_back(real_key("model.signal_variance", REF(c.run.model.signal_variance)));
    t.push_back(real_key("model.noise_std", REF(c.run.model.noise_std)));
    t.push_back(bool_key("model.fit_hyperparameters", REF(c.run.model.fit_hyperparameters)));
    t.push_back(int_key("model.fit_every", REF(c.run.model.fit_every)));
    t.push_back(int_key("model.fit_max_points", REF(c.run.model.fit_max_points)));
    t.push_back(real_key("model.fit_bound_factor", REF(c.run.model.fit_bound_factor)));
    t.push_back(int_key("model.fit_restarts", REF(c.run.model.fit_restarts)));
    t.push_back(int_key("model.max_points", REF(c.run.model.max_points)));
    t.push_back(real_key("model.admit_std_ratio", REF(c.run.model.admit_std_ratio)));
    t.push_back(enum_key(
        "model.beta", REF(c.run.model.beta.mode), [](const std::string& s) { return beta_mode_from_string(s); },
        beta_mode_name));
    t.push_back(real_key("model.beta_value", REF(c.run.model.beta.value)));
    t.push_back(real_key("model.delta", REF(c.run.model.beta.delta)));
    t.push_back(real_key("model.rkhs_bound", REF(c.run.model.rkhs_bound)));
    t.push_back(bool_key("model.lipschitz_projection", REF(c.run.model.lipschitz_projection)));
    // [experiment]
    t.push_back({"experiment.modes",
                 [](ExperimentConfig& c, const Value& v, const std::string& k) {
                   c.modes.clear();
                   for (const Value& item : as_array(v, k)) c.modes.push_back(as_string(item, k));
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   std::string s = "[";
                   for (std::size_t i = 0; i < c.modes.size(); ++i) s += (i ? ", " : "") + fmt(c.modes[i]);
                   return s + "]";
                 }});
    t.push_back({"experiment.seeds",
                 [](ExperimentConfig& c, const Value& v, const std::string& k) {
                   c.seeds.clear();
                   if (v.kind == Value::Kind::Int) {
                     const std::uint64_t n = as_u64(v, k);
                     for (std::uint64_t i = 0; i < n; ++i) c.seeds.push_back(i);
                     return;
                   }
                   for (const Value& item : as_array(v, k)) c.seeds.push_back(as_u64(item, k));
                 },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   std::string s = "[";
                   for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? ", " : "") + std::to_string(c.seeds[i]);
                   return s + "]";
                 }});
    t.push_back({"experiment.master_seed",
                 [](ExperimentConfig& c, const Value& v, const std::string& k) { c.master_seed = as_u64(v, k); },
                 [](const ExperimentConfig& c) -> std::optional<std::string> { return std::to_string(c.master_seed); }});
    t.push_back({"experiment.output_dir",
                 [](ExperimentConfig& c, const Value& v, const std::string& k) { c.output_dir = as_string(v, k); },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (c.output_dir.empty()) return std::nullopt;
                   return fmt(c.output_dir);
                 }});
    t.push_back(int_key("experiment.workers", REF(c.workers)));
    t.push_back(int_key("experiment.pets_particles", REF(c.pets_particles)));
    t.push_back(int_key("experiment.oracle_population", REF(c.oracle_population)));
    t.push_back(int_key("experiment.oracle_iterations", REF(c.oracle_iterations)));
    t.push_back(int_key("experiment.oracle_horizon", REF(c.oracle_horizon)));
    t.push_back({"experiment.oracle_value",
                 [](ExperimentConfig& c, const Value& v, const std::string& k) { c.oracle_value = as_double(v, k); },
                 [](const ExperimentConfig& c) -> std::optional<std::string> {
                   if (!c.oracle_value) return std::nullopt;
                   return fmt(*c.oracle_value);
                 }});
    return t;
  }();
  return table;
}

#undef REF

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::resolve() {
  env = env.resolved();
  const auto e = make_env(env);
  run.lambda.state_dim = e->state_dim();
  run.lambda.sigma = run.model.noise_std;
  run.model.beta.noise_std = run.model.noise_std;
  run.model.beta.rkhs_bound = run.model.rkhs_bound;
}

void ExperimentConfig::validate() const {
  try {
    env.validate();
    run.validate();
  } catch (const InputError& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  const auto e = make_env(env);
  if (run.model.lengthscales && run.model.lengthscales->size() != e->model_input_dim()) {
    throw ConfigError("model.lengthscales: expected " + std::to_string(e->model_input_dim()) + " entries");
  }
  if (run.planner.icem.init_std.size() != 0 && run.planner.icem.init_std.size() != e->action_dim()) {
    throw ConfigError("planner.init_std: expected " + std::to_string(e->action_dim()) + " entries");
  }
  if (run.planner.rollout.particles < 1) throw ConfigError("planner.particles must be >= 1");
  if (modes.empty()) throw ConfigError("experiment.modes must not be empty");
  std::set<std::string> seen;
  for (const std::string& m : modes) {
    const auto& k = known_modes();
    if (std::find(k.begin(), k.end(), m) == k.end()) {
      throw ConfigError("experiment.modes: unknown mode '" + m + "' (expected optimistic, mean, pets or hallucinated)");
    }
    if (!seen.insert(m).second) throw ConfigError("experiment.modes: duplicate mode '" + m + "'");
  }
  if (seeds.empty()) throw ConfigError("experiment.seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("experiment.seeds must be distinct");
  }
  if (workers < 0) throw ConfigError("experiment.workers must be >= 0");
  if (pets_particles < 1) throw ConfigError("experiment.pets_particles must be >= 1");
  if (oracle_population < 2) throw ConfigError("experiment.oracle_population must be >= 2");
  if (oracle_iterations < 1) throw ConfigError("experiment.oracle_iterations must be >= 1");
  if (oracle_horizon < 0) throw ConfigError("experiment.oracle_horizon must be >= 0");
  if (oracle_value && !std::isfinite(*oracle_value)) throw ConfigError("experiment.oracle_value must be finite");
}

ExperimentConfig parse_config_text(const std::string& text, const ExperimentConfig& base, const std::string& origin) {
  const auto doc = parse_document(text, origin);
  ExperimentConfig cfg = base;
  std::map<std::string, const KeySpec*> index;
  for (const KeySpec& k : key_table()) index.emplace(k.key, &k);
  for (const auto& [key, entry] : doc) {
    const auto it = index.find(key);
    if (it == index.end()) {
      throw ConfigError(origin + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
    }
    try {
      it->second->set(cfg, entry.value, key);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(entry.line) + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig parse_config_layer(const std::filesystem::path& path, const ExperimentConfig& base) {
  return parse_config_text(read_file(path), base, path.string());
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  ExperimentConfig cfg = parse_config_layer(path, ExperimentConfig{});
  cfg.resolve();
  cfg.validate();
  return cfg;
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const KeySpec& k : key_table()) {
    const std::string sec = k.key.substr(0, k.key.find('.'));
    const std::optional<std::string> v = k.get(config);
    if (sec != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + sec + "]\n";
      section = sec;
    }
    if (v) out += k.key.substr(sec.size() + 1) + " = " + *v + "\n";
  }
  return out;
}

const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> m{"optimistic", "mean", "pets", "hallucinated"};
  return m;
}

ObjectiveKind objective_for_mode(const std::string& mode) {
  if (mode == "optimistic") return ObjectiveKind::Optimistic;
  if (mode == "mean") return ObjectiveKind::Mean;
  if (mode == "pets") return ObjectiveKind::PosteriorSample;
  if (mode == "hallucinated") return ObjectiveKind::Hallucinated;
  throw ConfigError("unknown mode '" + mode + "' (expected optimistic, mean, pets or hallucinated)");
}

std::vector<std::string> preset_names() { return {"paper-gp", "smoke"}; }

std::vector<ExperimentConfig> preset(const std::string& name) {
  if (name == "paper-gp") {
    ExperimentConfig common;
    common.modes = {"optimistic", "mean", "pets", "hallucinated"};
    common.seeds = {0, 1, 2, 3, 4};
    common.run.lambda.value = 10.0;
    common.run.planner.icem.population = 100;
    common.run.planner.icem.elites = 10;
    common.run.planner.icem.iterations = 3;
    common.run.model.admit_std_ratio = 1.0;
    common.run.model.max_points = 250;

    ExperimentConfig pendulum = common;
    pendulum.env.family = EnvFamily::Pendulum;
    pendulum.run.episodes = 20;
    pendulum.run.planner.icem.horizon = 30;
    pendulum.run.model.noise_std = 0.01;

    ExperimentConfig car = common;
    car.env.family = EnvFamily::MountainCar;
    // A small action charge, as in the continuous Gym task: without it every
    // plan scores zero until the goal is in sight and ties act as random search.
    car.env.action_cost_weight = 0.01;
    car.run.episodes = 30;
    car.run.planner.icem.horizon = 50;
    car.run.model.noise_std = 0.001;
    return {pendulum, car};
  }
  if (name == "smoke") {
    ExperimentConfig c;
    c.env.family = EnvFamily::Pendulum;
    c.env.horizon = 25;
    c.modes = {"optimistic", "mean"};
    c.seeds = {0, 1};
    c.run.episodes = 3;
    c.run.planner.icem.population = 30;
    c.run.planner.icem.elites = 5;
    c.run.planner.icem.iterations = 2;
    c.run.planner.icem.horizon = 10;
    c.run.model.fit_restarts = 2;
    c.oracle_population = 30;
    c.oracle_iterations = 2;
    return {c};
  }
  throw ConfigError("unknown preset '" + name + "' (expected paper-gp or smoke)");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  const std::vector<std::string> items = split_list(text);
  if (items.empty()) throw ConfigError("--seeds: expected a count or a comma-separated list");
  std::vector<std::uint64_t> out;
  for (const std::string& s : items) {
    if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 19) {
      throw ConfigError("--seeds: '" + s + "' is not a nonnegative integer");
    }
    out.push_back(std::stoull(s));
  }
  if (items.size() == 1 && text.find(',') == std::string::npos) {
    const std::uint64_t n = out[0];
    if (n == 0) throw ConfigError("--seeds: count must be >= 1");
    out.clear();
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(i);
  }
  return out;
}

std::vector<ExperimentConfig> build_configs(const CliOverrides& cli, const std::optional<std::string>& env_out) {
  std::vector<ExperimentConfig> configs = cli.preset ? preset(*cli.preset) : std::vector<ExperimentConfig>{{}};
  if (cli.config_path) {
    const std::string text = read_file(*cli.config_path);
    for (ExperimentConfig& c : configs) c = parse_config_text(text, c, *cli.config_path);
  }
  for (ExperimentConfig& c : configs) {
    if (cli.modes) c.modes = *cli.modes;
    if (cli.seeds) c.seeds = *cli.seeds;
    if (cli.out) c.output_dir = *cli.out;
    if (c.output_dir.empty()) c.output_dir = env_out && !env_out->empty() ? *env_out : "results";
    c.resolve();
    c.validate();
  }
  return configs;
}

}  // namespace sombrl
