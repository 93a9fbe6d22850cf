#ifndef STEINGP_COMMANDS_HPP
#define STEINGP_COMMANDS_HPP

// fit / predict / synth / benchmark, shared by the CLI and its tests.
// Commands throw; exit_code() maps the exception to the process status.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "steingp/config.hpp"
#include "steingp/steingp.hpp"

namespace steingp {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitIo = 4;

inline const char *kParticlesFile = "particles.csv";
inline const char *kTraceFile = "trace.csv";
inline const char *kResolvedConfigFile = "config.resolved.ini";
inline const char *kPredictionsFile = "predictions.csv";
inline const char *kMetricsFile = "metrics.csv";
inline const char *kBenchmarkFile = "benchmark.csv";

/// Train/holdout data and the model built on the training part.
struct Experiment {
  Dataset train;
  Dataset test; // may be empty
  ModelSpec model;
};

namespace detail {

inline std::ofstream open_output(const fs::path &path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) {
      throw DataError("cannot create directory '" + path.parent_path().string() +
                      "': " + ec.message());
    }
  }
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot write '" + path.string() + "'");
  }
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

inline ColumnRef column_ref(const std::string &target) {
  const bool digits = !target.empty() &&
                      std::all_of(target.begin(), target.end(),
                                  [](unsigned char c) { return std::isdigit(c) != 0; });
  if (digits) {
    return static_cast<std::size_t>(std::stoull(target));
  }
  return target;
}

inline Dataset raw_data(const RunConfig &c, std::uint64_t seed) {
  if (c.data.generator == "neal") {
    return generate_neal(c.data.n, seed);
  }
  if (c.data.generator == "step") {
    return generate_step(c.data.n, c.data.flip, seed);
  }
  return load_csv(c.data.path, column_ref(c.data.target), c.data.header, c.data.task);
}

inline std::pair<Dataset, Dataset> split_data(const RunConfig &c, const Dataset &d,
                                              std::uint64_t seed) {
  const std::string how = c.split();
  if (how == "halves") {
    auto [train, test] = split_halves(d);
    if (!c.data.standardize || train.size() < 2) {
      return {std::move(train), std::move(test)};
    }
    auto [std_train, record] = standardize(train);
    if (test.size() > 0) {
      test = apply_standardization(std::move(test), record);
    }
    return {std::move(std_train), std::move(test)};
  }
  SplitSpec spec;
  spec.train_fraction = std::stod(how);
  spec.seed = seed;
  spec.allow_empty_test = true;
  spec.standardize = c.data.standardize;
  return split(d, spec);
}

} // namespace detail

/// Data generation, split, standardisation and model construction for one
/// master seed.
inline Experiment build_experiment(const RunConfig &c, std::uint64_t seed) {
  validate(c);
  Experiment e;
  std::tie(e.train, e.test) = detail::split_data(c, detail::raw_data(c, seed), seed);

  KernelInit init;
  init.lengthscale = std::sqrt(static_cast<double>(e.train.dim()));
  init.ard = c.model.ard;
  KernelSpec kernel = parse_kernel(c.model.kernel, e.train.dim(), init);

  ModelOptions opts;
  opts.whitened = c.model.whitened;
  opts.hyper_prior = Prior::gamma(c.model.prior_shape, c.model.prior_scale);
  if (c.model.inducing > 0) {
    const auto m = static_cast<Eigen::Index>(c.model.inducing);
    if (m > e.train.size()) {
      throw ConfigError("model.inducing = " + std::to_string(m) + " exceeds the " +
                        std::to_string(e.train.size()) + " training points");
    }
    opts.inducing = farthest_point_inducing(e.train.x, m, seed);
  }
  e.model = make_model_spec(std::move(kernel), c.model.likelihood, e.train, std::move(opts));
  return e;
}

/// init = fixed: every hyperparameter at its initial value, nu ~ N(0, I).
inline ParticleEnsemble fixed_initial_ensemble(const ModelSpec &m, std::size_t count,
                                               std::mt19937_64 &rng) {
  Eigen::VectorXd constrained(static_cast<Eigen::Index>(m.layout.dimension()));
  const auto nk = static_cast<Eigen::Index>(m.kernel_param_count());
  constrained.head(nk) = hyperparameter_values(m.kernel);
  Eigen::Index pos = nk;
  if (m.has_noise()) {
    constrained(pos++) = 1.0;
  }
  ParticleEnsemble e;
  e.particles.resize(static_cast<Eigen::Index>(count), constrained.size());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < e.size(); ++j) {
    for (Eigen::Index i = pos; i < constrained.size(); ++i) {
      constrained(i) = normal(rng);
    }
    e.particles.row(j) = inverse(constrained, m.layout).transpose();
  }
  return e;
}

inline RunResult fit(const RunConfig &c, const Experiment &e, std::uint64_t seed,
                     const TraceSink &sink = {}) {
  SvgdConfig sc = c.svgd_config();
  sc.seed = seed;
  const GpTarget target(e.model, e.train);
  std::mt19937_64 rng(sc.seed);
  ParticleEnsemble initial = c.svgd.init == InitMode::Fixed
                                 ? fixed_initial_ensemble(e.model, sc.particles, rng)
                                 : initial_ensemble(target, sc.particles, rng);
  return run_from(target, std::move(initial), sc, rng, sink);
}

/// J x d matrix of constrained values.
inline Eigen::MatrixXd constrained_particles(const ParticleEnsemble &e, const ModelSpec &m) {
  Eigen::MatrixXd out(e.size(), e.dim());
  for (Eigen::Index j = 0; j < e.size(); ++j) {
    out.row(j) = forward(e.particles.row(j).transpose(), m.layout).transpose();
  }
  return out;
}

inline ParticleEnsemble ensemble_from_constrained(const Eigen::MatrixXd &values,
                                                  const ModelSpec &m) {
  ParticleEnsemble e;
  e.particles.resize(values.rows(), values.cols());
  for (Eigen::Index j = 0; j < values.rows(); ++j) {
    e.particles.row(j) = inverse(values.row(j).transpose(), m.layout).transpose();
  }
  return e;
}

inline void write_particles(const fs::path &path, const Eigen::MatrixXd &constrained,
                            const ModelSpec &m) {
  std::ofstream out = detail::open_output(path);
  const auto names = m.layout.column_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << (i ? "," : "") << names[i];
  }
  out << '\n';
  for (Eigen::Index j = 0; j < constrained.rows(); ++j) {
    for (Eigen::Index i = 0; i < constrained.cols(); ++i) {
      out << (i ? "," : "") << constrained(j, i);
    }
    out << '\n';
  }
}

/// Reads particles.csv and checks its header against the model layout.
inline Eigen::MatrixXd read_particles(const fs::path &path, const ModelSpec &m) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open particles file '" + path.string() + "'");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(path.string() + ": empty particles file");
  }
  const std::vector<std::string> header = detail::split_fields(line);
  const std::vector<std::string> expected = m.layout.column_names();
  if (header != expected) {
    std::string missing, extra;
    for (const auto &name : expected) {
      if (std::find(header.begin(), header.end(), name) == header.end()) {
        missing += (missing.empty() ? "" : ", ") + name;
      }
    }
    for (const auto &name : header) {
      if (std::find(expected.begin(), expected.end(), name) == expected.end()) {
        extra += (extra.empty() ? "" : ", ") + name;
      }
    }
    std::string msg = path.string() + ": particle columns do not match the model layout";
    if (!missing.empty()) {
      msg += "; missing: " + missing;
    }
    if (!extra.empty()) {
      msg += "; unexpected: " + extra;
    }
    if (missing.empty() && extra.empty()) {
      msg += "; columns are out of order";
    }
    throw DataError(msg);
  }
  std::vector<Eigen::VectorXd> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) {
      continue;
    }
    const auto fields = detail::split_fields(line);
    if (fields.size() != expected.size()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(expected.size()));
    }
    Eigen::VectorXd row(static_cast<Eigen::Index>(fields.size()));
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!detail::parse_double(fields[i], row(static_cast<Eigen::Index>(i)))) {
        throw DataError(path.string() + ": line " + std::to_string(line_no) + ", column '" +
                        expected[i] + "' is not a finite number");
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw DataError(path.string() + ": no particles");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(expected.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    out.row(static_cast<Eigen::Index>(j)) = rows[j].transpose();
  }
  return out;
}

/// Query inputs on the original scale, one row per point. A first line that
/// does not parse as numbers is taken as a header.
inline Eigen::MatrixXd read_query(const fs::path &path, Eigen::Index dim) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open query file '" + path.string() + "'");
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) {
      continue;
    }
    const auto fields = detail::split_fields(line);
    std::vector<double> row(fields.size());
    bool ok = true;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      ok = ok && detail::parse_double(fields[i], row[i]);
    }
    if (!ok) {
      if (line_no == 1) {
        continue;
      }
      throw DataError(path.string() + ": line " + std::to_string(line_no) +
                      " has a non-numeric field");
    }
    if (static_cast<Eigen::Index>(row.size()) != dim) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " has " +
                      std::to_string(row.size()) + " columns, the model expects " +
                      std::to_string(dim));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw DataError(path.string() + ": no query points");
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index c = 0; c < dim; ++c) {
      x(static_cast<Eigen::Index>(i), c) = rows[i][static_cast<std::size_t>(c)];
    }
  }
  return x;
}

inline Eigen::MatrixXd standardize_inputs(Eigen::MatrixXd x, const Standardization &s) {
  if (!s.applied) {
    return x;
  }
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    x.col(c) = (x.col(c).array() - s.x_mean(c)) / s.x_std(c);
  }
  return x;
}

inline void write_predictions(const fs::path &path, const PredictiveSummary &s) {
  std::ofstream out = detail::open_output(path);
  out << "query_index,mean,variance" << (s.probability ? ",prob" : "") << '\n';
  for (Eigen::Index i = 0; i < s.mean.size(); ++i) {
    out << i << ',' << s.mean(i) << ',' << s.variance(i);
    if (s.probability) {
      out << ',' << (*s.probability)(i);
    }
    out << '\n';
  }
}

inline void write_metrics(const fs::path &path, const Metrics &m) {
  std::ofstream out = detail::open_output(path);
  out << "rmse,test_log_likelihood\n" << m.rmse << ',' << m.test_log_likelihood << '\n';
}

/// Holdout targets on the original scale.
inline Eigen::VectorXd holdout_truth(const Dataset &test) {
  return destandardize(test).y;
}

// ---------------------------------------------------------------------------
// Commands

/// Writes particles.csv, trace.csv (row by row) and config.resolved.ini.
inline void cmd_fit(const RunConfig &c, const fs::path &out_dir) {
  const Experiment e = build_experiment(c, c.svgd.seed);
  {
    std::ofstream cfg = detail::open_output(out_dir / kResolvedConfigFile);
    cfg << to_ini(c);
  }
  std::ofstream trace = detail::open_output(out_dir / kTraceFile);
  trace << kTraceHeader << '\n' << std::flush;
  const RunResult r = fit(c, e, c.svgd.seed, [&](const TraceRow &row) {
    write_trace_row(trace, row);
    trace.flush();
  });
  write_particles(out_dir / kParticlesFile, constrained_particles(r.ensemble, e.model),
                  e.model);
}

/// Predicts at `query` (original input scale) or, without one, at the holdout
/// set, where metrics.csv is written too.
inline void cmd_predict(const RunConfig &c, const fs::path &particles_path,
                        const std::optional<fs::path> &query, const fs::path &out_dir) {
  const Experiment e = build_experiment(c, c.svgd.seed);
  const ParticleEnsemble ensemble =
      ensemble_from_constrained(read_particles(particles_path, e.model), e.model);
  const std::size_t k = c.predict.samples;
  if (query) {
    const Eigen::MatrixXd xq =
        standardize_inputs(read_query(*query, e.train.dim()), e.train.standardization);
    write_predictions(out_dir / kPredictionsFile,
                      predict(ensemble, e.model, e.train, xq, k, c.svgd.seed));
    return;
  }
  if (e.test.size() == 0) {
    throw ConfigError("no holdout set (data.split = " + c.split() +
                      "); pass --query to predict elsewhere");
  }
  const PredictiveDraws draws = predict_draws(ensemble, e.model, e.train, e.test.x, k,
                                              c.svgd.seed);
  write_predictions(out_dir / kPredictionsFile, summarize(draws));
  write_metrics(out_dir / kMetricsFile, metrics(draws, holdout_truth(e.test)));
}

inline const std::vector<std::string> kGenerators = {"neal", "step"};

inline void cmd_synth(const std::string &generator, std::size_t n, double flip,
                      std::uint64_t seed, const fs::path &out_path) {
  Dataset d;
  if (generator == "neal") {
    d = generate_neal(n, seed);
  } else if (generator == "step") {
    d = generate_step(n, flip, seed);
  } else {
    std::string names;
    for (const auto &g : kGenerators) {
      names += (names.empty() ? "" : ", ") + g;
    }
    throw ConfigError("unknown generator '" + generator + "' (available: " + names + ")");
  }
  if (out_path.has_parent_path()) {
    fs::create_directories(out_path.parent_path());
  }
  write_csv(out_path, d);
}

struct ReplicateResult {
  std::uint64_t seed = 0;
  Metrics metrics;
  double wall_ms = 0.0;
};

/// fit then holdout prediction for one seed, particles passed through their
/// written precision exactly as fit + predict would.
inline ReplicateResult run_replicate(const RunConfig &c, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const Experiment e = build_experiment(c, seed);
  if (e.test.size() == 0) {
    throw ConfigError("benchmark needs a holdout set (data.split = " + c.split() + ")");
  }
  const RunResult r = fit(c, e, seed);
  const ParticleEnsemble ensemble =
      ensemble_from_constrained(constrained_particles(r.ensemble, e.model), e.model);
  const PredictiveDraws draws =
      predict_draws(ensemble, e.model, e.train, e.test.x, c.predict.samples, seed);
  ReplicateResult out;
  out.seed = seed;
  out.metrics = metrics(draws, holdout_truth(e.test));
  out.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - start)
                    .count();
  return out;
}

inline const char *kBenchmarkHeader = "replicate,seed,rmse,rmse_sd,test_log_likelihood,"
                                      "test_log_likelihood_sd,wall_ms,wall_ms_sd";

/// Replicate r uses master seed base + r. The last row (replicate -1) holds
/// means and population standard deviations.
inline std::vector<ReplicateResult> cmd_benchmark(const RunConfig &c, const fs::path &out_dir,
                                                  std::ostream *progress = nullptr) {
  const std::size_t reps = c.benchmark.replicates;
  std::vector<ReplicateResult> results;
  std::ofstream out = detail::open_output(out_dir / kBenchmarkFile);
  out << kBenchmarkHeader << '\n';
  for (std::size_t r = 0; r < reps; ++r) {
    results.push_back(run_replicate(c, c.svgd.seed + r));
    const auto &res = results.back();
    out << r << ',' << res.seed << ',' << res.metrics.rmse << ",0,"
        << res.metrics.test_log_likelihood << ",0," << res.wall_ms << ",0\n";
    out.flush();
    if (progress != nullptr) {
      *progress << "replicate " << r << " seed " << res.seed << " rmse "
                << res.metrics.rmse << '\n';
    }
  }
  auto moments = [&](auto field) {
    double mean = 0.0;
    for (const auto &res : results) {
      mean += field(res);
    }
    mean /= static_cast<double>(results.size());
    double var = 0.0;
    for (const auto &res : results) {
      var += (field(res) - mean) * (field(res) - mean);
    }
    return std::pair{mean, std::sqrt(var / static_cast<double>(results.size()))};
  };
  const auto [rm, rs] = moments([](const ReplicateResult &x) { return x.metrics.rmse; });
  const auto [lm, ls] =
      moments([](const ReplicateResult &x) { return x.metrics.test_log_likelihood; });
  const auto [wm, ws] = moments([](const ReplicateResult &x) { return x.wall_ms; });
  out << -1 << ',' << c.svgd.seed << ',' << rm << ',' << rs << ',' << lm << ',' << ls << ','
      << wm << ',' << ws << '\n';
  return results;
}

/// Maps the in-flight exception to an exit status and reports it on `err`.
inline int exit_code(std::exception_ptr ex, std::ostream &err) {
  try {
    std::rethrow_exception(ex);
  } catch (const ConfigError &e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidArgument &e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError &e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DomainError &e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const DataError &e) {
    err << "data error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error &e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

} // namespace steingp

#endif // STEINGP_COMMANDS_HPP
