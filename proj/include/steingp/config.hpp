#ifndef STEINGP_CONFIG_HPP
#define STEINGP_CONFIG_HPP

// INI-style run configuration and the kernel expression grammar.
//
//   [section]
//   key = value        ; or # comments, on their own line
//
// Kernel expressions: sums of products of leaves, with parentheses.
//   leaf  := name ['[' dim {',' dim} ']']
//   name  := se | matern12 | matern52 | poly<degree> | white
//   e.g.  matern52[0,1] * poly3[2] * white

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "steingp/data.hpp"
#include "steingp/errors.hpp"
#include "steingp/kernels.hpp"
#include "steingp/models.hpp"
#include "steingp/predict.hpp"
#include "steingp/svgd.hpp"

namespace steingp {

// ---------------------------------------------------------------------------
// INI files

struct IniValue {
  std::string text;
  std::size_t line = 0;
};

struct IniFile {
  std::string source;
  std::map<std::string, std::map<std::string, IniValue>> sections;
};

inline IniFile parse_ini(std::istream &in, const std::string &source) {
  IniFile ini;
  ini.source = source;
  std::string line;
  std::string section;
  std::size_t line_no = 0;
  auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') {
      continue;
    }
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError(where() + "malformed section header '" + t + "'");
      }
      section = detail::trim(t.substr(1, t.size() - 2));
      ini.sections[section];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where() + "expected 'key = value', got '" + t + "'");
    }
    if (section.empty()) {
      throw ConfigError(where() + "key outside of any section");
    }
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(where() + "empty key");
    }
    auto &sec = ini.sections[section];
    if (sec.count(key) != 0) {
      throw ConfigError(where() + "duplicate key '" + section + "." + key + "'");
    }
    sec[key] = {value, line_no};
  }
  return ini;
}

inline IniFile load_ini(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file '" + path.string() + "'");
  }
  return parse_ini(in, path.string());
}

// ---------------------------------------------------------------------------
// Kernel expressions

struct KernelInit {
  double sigma = 1.0;
  double lengthscale = 1.0;
  double offset = 1.0;
  bool ard = true;
};

namespace detail {

class KernelParser {
public:
  KernelParser(std::string text, Eigen::Index input_dim, KernelInit init)
      : text_(std::move(text)), dim_(input_dim), init_(init) {}

  KernelSpec parse() {
    KernelSpec k = sum();
    skip_space();
    if (pos_ != text_.size()) {
      fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    }
    return k;
  }

private:
  [[noreturn]] void fail(const std::string &msg) const {
    throw ConfigError("kernel expression '" + text_ + "' at position " +
                      std::to_string(pos_ + 1) + ": " + msg);
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  KernelSpec sum() {
    KernelSpec k = product();
    while (accept('+')) {
      k = std::move(k) + product();
    }
    return k;
  }

  KernelSpec product() {
    KernelSpec k = factor();
    while (accept('*')) {
      k = std::move(k) * factor();
    }
    return k;
  }

  KernelSpec factor() {
    if (accept('(')) {
      KernelSpec k = sum();
      if (!accept(')')) {
        fail("missing ')'");
      }
      return k;
    }
    return leaf();
  }

  std::vector<int> dims() {
    std::vector<int> out;
    if (!accept('[')) {
      return out;
    }
    do {
      skip_space();
      int v = 0;
      const char *b = text_.data() + pos_;
      const char *e = text_.data() + text_.size();
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc{} || p == b) {
        fail("expected a dimension index");
      }
      if (v < 0 || v >= dim_) {
        fail("dimension " + std::to_string(v) + " out of range for " +
             std::to_string(dim_) + "-dimensional inputs");
      }
      pos_ += static_cast<std::size_t>(p - b);
      out.push_back(v);
    } while (accept(','));
    if (!accept(']')) {
      fail("missing ']'");
    }
    return out;
  }

  KernelSpec leaf() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isalnum(static_cast<unsigned char>(text_[pos_]))) {
      ++pos_;
    }
    const std::string name = text_.substr(start, pos_ - start);
    if (name.empty()) {
      fail("expected a kernel name");
    }
    const std::vector<int> active = dims();
    const auto n_active = active.empty() ? static_cast<std::size_t>(dim_) : active.size();
    const std::vector<double> ls(init_.ard ? n_active : 1, init_.lengthscale);
    if (name == "se") {
      return KernelSpec::squared_exponential(init_.sigma, ls, active);
    }
    if (name == "matern12") {
      return KernelSpec::matern12(init_.sigma, ls, active);
    }
    if (name == "matern52") {
      return KernelSpec::matern52(init_.sigma, ls, active);
    }
    if (name == "white") {
      return KernelSpec::white(init_.sigma, active);
    }
    if (name.rfind("poly", 0) == 0) {
      int degree = 0;
      const std::string digits = name.substr(4);
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), degree);
      if (digits.empty() || ec != std::errc{} || p != digits.data() + digits.size() ||
          degree < 1) {
        fail("polynomial kernels are written poly<degree>, e.g. poly3");
      }
      return KernelSpec::polynomial(degree, init_.sigma, init_.offset, active);
    }
    fail("unknown kernel '" + name + "' (known: se, matern12, matern52, poly<d>, white)");
  }

  std::string text_;
  std::size_t pos_ = 0;
  Eigen::Index dim_;
  KernelInit init_;
};

} // namespace detail

inline KernelSpec parse_kernel(const std::string &expr, Eigen::Index input_dim,
                               KernelInit init = {}) {
  return detail::KernelParser(expr, input_dim, init).parse();
}

// ---------------------------------------------------------------------------
// Run configuration

enum class InitMode { Prior, Fixed };

struct RunConfig {
  struct Model {
    std::string kernel = "se";
    Likelihood likelihood = Likelihood::GaussianNoise;
    bool whitened = false;
    std::size_t inducing = 0;
    bool ard = true;
    double prior_shape = 1.0;
    double prior_scale = 2.0;
  } model;

  struct Svgd {
    std::size_t particles = 20;
    std::size_t iterations = 1000;
    std::optional<double> step_size; // 0.05, or 0.001 when batched
    std::size_t batch_size = 0;      // 0 = full data
    std::uint64_t seed = 0;
    std::size_t trace_every = 10;
    StepRule rule = StepRule::Adam;
    InitMode init = InitMode::Prior;
    std::size_t workers = 1;
  } svgd;

  struct Data {
    std::string path;
    std::string generator; // neal | step
    std::size_t n = 200;
    double flip = 0.1;
    std::string target = "y";
    bool header = true;
    Task task = Task::Regression;
    std::string split; // fraction in (0, 1], "halves", or empty for the default
    bool standardize = true;
  } data;

  struct Predict {
    std::size_t samples = kDefaultSamplesPerParticle;
  } predict;

  struct Benchmark {
    std::size_t replicates = 5;
  } benchmark;

  /// "halves" for neal (first half trains, in generation order), 0.7 otherwise.
  std::string split() const {
    if (!data.split.empty()) {
      return data.split;
    }
    return data.generator == "neal" ? "halves" : "0.7";
  }

  double step_size() const {
    if (svgd.step_size) {
      return *svgd.step_size;
    }
    return svgd.batch_size > 0 ? 0.001 : 0.05;
  }

  SvgdConfig svgd_config() const {
    SvgdConfig c;
    c.particles = svgd.particles;
    c.iterations = svgd.iterations;
    c.step_size = step_size();
    if (svgd.batch_size > 0) {
      c.batch_size = svgd.batch_size;
    }
    c.seed = svgd.seed;
    c.rule = svgd.rule;
    c.trace_every = svgd.trace_every;
    c.workers = svgd.workers;
    return c;
  }
};

namespace detail {

class Reader {
public:
  explicit Reader(const IniFile &ini) : ini_(ini) {}

  const IniValue *find(const std::string &section, const std::string &key) {
    used_.insert(section + "." + key);
    auto s = ini_.sections.find(section);
    if (s == ini_.sections.end()) {
      return nullptr;
    }
    auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  [[noreturn]] void bad(const std::string &section, const std::string &key,
                        const IniValue &v, const std::string &what) const {
    throw ConfigError(ini_.source + ":" + std::to_string(v.line) + ": " + section + "." +
                      key + " = '" + v.text + "': " + what);
  }

  void str(const std::string &s, const std::string &k, std::string &out) {
    if (const auto *v = find(s, k)) {
      out = v->text;
    }
  }

  template <typename T> void number(const std::string &s, const std::string &k, T &out) {
    const auto *v = find(s, k);
    if (v == nullptr) {
      return;
    }
    T value{};
    const char *b = v->text.data();
    const char *e = b + v->text.size();
    auto [p, ec] = std::from_chars(b, e, value);
    if (ec != std::errc{} || p != e) {
      bad(s, k, *v, "not a valid number");
    }
    if constexpr (std::is_floating_point_v<T>) {
      if (!std::isfinite(value)) {
        bad(s, k, *v, "must be finite");
      }
    }
    out = value;
  }

  void boolean(const std::string &s, const std::string &k, bool &out) {
    const auto *v = find(s, k);
    if (v == nullptr) {
      return;
    }
    if (v->text == "true" || v->text == "1" || v->text == "yes") {
      out = true;
    } else if (v->text == "false" || v->text == "0" || v->text == "no") {
      out = false;
    } else {
      bad(s, k, *v, "expected true or false");
    }
  }

  template <typename E>
  void choice(const std::string &s, const std::string &k,
              const std::vector<std::pair<std::string, E>> &options, E &out) {
    const auto *v = find(s, k);
    if (v == nullptr) {
      return;
    }
    std::string names;
    for (const auto &[name, value] : options) {
      if (name == v->text) {
        out = value;
        return;
      }
      names += (names.empty() ? "" : ", ") + name;
    }
    bad(s, k, *v, "expected one of: " + names);
  }

  void reject_unknown() const {
    for (const auto &[section, keys] : ini_.sections) {
      for (const auto &[key, value] : keys) {
        if (used_.count(section + "." + key) == 0) {
          throw ConfigError(ini_.source + ":" + std::to_string(value.line) +
                            ": unknown key '" + section + "." + key + "'");
        }
      }
    }
  }

  const std::string &source() const { return ini_.source; }

private:
  const IniFile &ini_;
  std::set<std::string> used_;
};

inline const std::vector<std::pair<std::string, Likelihood>> kLikelihoodNames = {
    {"gaussian", Likelihood::GaussianNoise}, {"bernoulli", Likelihood::BernoulliLogit}};
inline const std::vector<std::pair<std::string, Task>> kTaskNames = {
    {"regression", Task::Regression}, {"classification", Task::Classification}};
inline const std::vector<std::pair<std::string, StepRule>> kRuleNames = {
    {"adam", StepRule::Adam}, {"plain", StepRule::Plain}};
inline const std::vector<std::pair<std::string, InitMode>> kInitNames = {
    {"prior", InitMode::Prior}, {"fixed", InitMode::Fixed}};

template <typename E>
std::string name_of(const std::vector<std::pair<std::string, E>> &options, E value) {
  for (const auto &[name, v] : options) {
    if (v == value) {
      return name;
    }
  }
  return "?";
}

} // namespace detail

/// Checks cross-field constraints; throws ConfigError.
inline void validate(const RunConfig &c) {
  if (c.svgd.particles < 1) {
    throw ConfigError("svgd.particles must be at least 1");
  }
  if (!(c.step_size() > 0.0)) {
    throw ConfigError("svgd.step_size must be positive");
  }
  if (!(c.model.prior_shape > 0.0) || !(c.model.prior_scale > 0.0)) {
    throw ConfigError("model.prior_shape and model.prior_scale must be positive");
  }
  if (c.data.path.empty() == c.data.generator.empty()) {
    throw ConfigError("set exactly one of data.path and data.generator");
  }
  if (!c.data.generator.empty() && c.data.generator != "neal" && c.data.generator != "step") {
    throw ConfigError("unknown data.generator '" + c.data.generator +
                      "' (available: neal, step)");
  }
  if (c.data.n < 1) {
    throw ConfigError("data.n must be at least 1");
  }
  if (const std::string s = c.split(); s != "halves") {
    double f = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), f);
    if (ec != std::errc{} || p != s.data() + s.size() || !(f > 0.0) || f > 1.0) {
      throw ConfigError("data.split must be a fraction in (0, 1] or 'halves'");
    }
  }
  if (!(c.data.flip >= 0.0 && c.data.flip <= 1.0)) {
    throw ConfigError("data.flip must lie in [0, 1]");
  }
  if (c.predict.samples < 1) {
    throw ConfigError("predict.samples must be at least 1");
  }
  if (c.benchmark.replicates < 1) {
    throw ConfigError("benchmark.replicates must be at least 1");
  }
  if (c.model.likelihood == Likelihood::BernoulliLogit && c.data.task != Task::Classification &&
      c.data.generator != "step") {
    throw ConfigError("model.likelihood = bernoulli needs data.task = classification");
  }
}

inline RunConfig run_config_from(const IniFile &ini) {
  RunConfig c;
  detail::Reader r(ini);
  r.str("model", "kernel", c.model.kernel);
  r.choice("model", "likelihood", detail::kLikelihoodNames, c.model.likelihood);
  r.boolean("model", "whitened", c.model.whitened);
  r.number("model", "inducing", c.model.inducing);
  r.boolean("model", "ard", c.model.ard);
  r.number("model", "prior_shape", c.model.prior_shape);
  r.number("model", "prior_scale", c.model.prior_scale);

  r.number("svgd", "particles", c.svgd.particles);
  r.number("svgd", "iterations", c.svgd.iterations);
  if (r.find("svgd", "step_size") != nullptr) {
    double s = 0.0;
    r.number("svgd", "step_size", s);
    c.svgd.step_size = s;
  }
  r.number("svgd", "batch_size", c.svgd.batch_size);
  r.number("svgd", "seed", c.svgd.seed);
  r.number("svgd", "trace_every", c.svgd.trace_every);
  r.choice("svgd", "rule", detail::kRuleNames, c.svgd.rule);
  r.choice("svgd", "init", detail::kInitNames, c.svgd.init);
  r.number("svgd", "workers", c.svgd.workers);

  r.str("data", "path", c.data.path);
  r.str("data", "generator", c.data.generator);
  r.number("data", "n", c.data.n);
  r.number("data", "flip", c.data.flip);
  r.str("data", "target", c.data.target);
  r.boolean("data", "header", c.data.header);
  r.choice("data", "task", detail::kTaskNames, c.data.task);
  r.str("data", "split", c.data.split);
  r.boolean("data", "standardize", c.data.standardize);

  r.number("predict", "samples", c.predict.samples);
  r.number("benchmark", "replicates", c.benchmark.replicates);
  r.reject_unknown();
  if (c.data.generator == "step") {
    c.data.task = Task::Classification;
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path &path) {
  return run_config_from(load_ini(path));
}

namespace detail {

// Shortest text that parses back to the same double.
inline std::string shortest(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

} // namespace detail

/// Every setting, defaults included, in a form load_run_config accepts.
inline std::string to_ini(const RunConfig &c) {
  using detail::shortest;
  std::ostringstream o;
  o << "[model]\n"
    << "kernel = " << c.model.kernel << '\n'
    << "likelihood = " << detail::name_of(detail::kLikelihoodNames, c.model.likelihood) << '\n'
    << "whitened = " << (c.model.whitened ? "true" : "false") << '\n'
    << "inducing = " << c.model.inducing << '\n'
    << "ard = " << (c.model.ard ? "true" : "false") << '\n'
    << "prior_shape = " << shortest(c.model.prior_shape) << '\n'
    << "prior_scale = " << shortest(c.model.prior_scale) << "\n\n";
  o << "[svgd]\n"
    << "particles = " << c.svgd.particles << '\n'
    << "iterations = " << c.svgd.iterations << '\n'
    << "step_size = " << shortest(c.step_size()) << '\n'
    << "batch_size = " << c.svgd.batch_size << '\n'
    << "seed = " << c.svgd.seed << '\n'
    << "trace_every = " << c.svgd.trace_every << '\n'
    << "rule = " << detail::name_of(detail::kRuleNames, c.svgd.rule) << '\n'
    << "init = " << detail::name_of(detail::kInitNames, c.svgd.init) << '\n'
    << "workers = " << c.svgd.workers << "\n\n";
  o << "[data]\n";
  if (!c.data.path.empty()) {
    o << "path = " << c.data.path << '\n';
  }
  if (!c.data.generator.empty()) {
    o << "generator = " << c.data.generator << '\n';
  }
  o << "n = " << c.data.n << '\n'
    << "flip = " << shortest(c.data.flip) << '\n'
    << "target = " << c.data.target << '\n'
    << "header = " << (c.data.header ? "true" : "false") << '\n'
    << "task = " << detail::name_of(detail::kTaskNames, c.data.task) << '\n'
    << "split = " << c.split() << '\n'
    << "standardize = " << (c.data.standardize ? "true" : "false") << "\n\n";
  o << "[predict]\n"
    << "samples = " << c.predict.samples << "\n\n";
  o << "[benchmark]\n"
    << "replicates = " << c.benchmark.replicates << '\n';
  return o.str();
}

} // namespace steingp

#endif // STEINGP_CONFIG_HPP
