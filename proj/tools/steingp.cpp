// steingp: fit, predict, synth, benchmark.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "steingp/commands.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> particles;
  std::optional<std::size_t> iters;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> data;
};

void add_common(CLI::App *cmd, Overrides &o) {
  cmd->add_option("--config", o.config, "run configuration (INI)")->required();
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "master seed, overrides svgd.seed");
  cmd->add_option("--particles", o.particles, "number of particles J");
  cmd->add_option("--iters", o.iters, "SVGD iterations T");
  cmd->add_option("--batch-size", o.batch_size, "mini-batch size, 0 for full data");
  cmd->add_option("--data", o.data, "CSV data file, replaces data.path/generator");
}

steingp::RunConfig resolve(const Overrides &o) {
  steingp::RunConfig c = steingp::load_run_config(o.config);
  if (o.seed) {
    c.svgd.seed = *o.seed;
  }
  if (o.particles) {
    c.svgd.particles = *o.particles;
  }
  if (o.iters) {
    c.svgd.iterations = *o.iters;
  }
  if (o.batch_size) {
    c.svgd.batch_size = *o.batch_size;
  }
  if (o.data) {
    c.data.path = *o.data;
    c.data.generator.clear();
  }
  steingp::validate(c);
  return c;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Gaussian-process inference with Stein variational gradient descent"};
  app.require_subcommand(1);

  Overrides fit_o;
  auto *fit = app.add_subcommand("fit", "transport particles, write particles.csv and trace.csv");
  add_common(fit, fit_o);

  Overrides pred_o;
  std::string particles_path;
  std::optional<std::string> query;
  auto *pred = app.add_subcommand("predict", "pooled predictive at query points or the holdout");
  add_common(pred, pred_o);
  pred->add_option("--particles-csv", particles_path, "particles.csv from fit")->required();
  pred->add_option("--query", query, "CSV of query inputs (original scale)");

  std::string generator;
  std::size_t synth_n = 200;
  double flip = 0.1;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto *synth = app.add_subcommand("synth", "write a synthetic dataset");
  synth->add_option("generator", generator, "neal or step")->required();
  synth->add_option("--n", synth_n, "number of rows");
  synth->add_option("--flip", flip, "label flip probability (step)");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output CSV")->required();

  Overrides bench_o;
  std::optional<std::size_t> replicates;
  auto *bench = app.add_subcommand("benchmark", "seeded fit+predict replicates");
  add_common(bench, bench_o);
  bench->add_option("--replicates", replicates, "overrides benchmark.replicates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : steingp::kExitConfig;
  }

  try {
    if (fit->parsed()) {
      steingp::cmd_fit(resolve(fit_o), fit_o.out);
    } else if (pred->parsed()) {
      const steingp::RunConfig c = resolve(pred_o);
      std::optional<std::filesystem::path> q;
      if (query) {
        q = *query;
      }
      steingp::cmd_predict(c, particles_path, q, pred_o.out);
    } else if (synth->parsed()) {
      steingp::cmd_synth(generator, synth_n, flip, synth_seed, synth_out);
    } else if (bench->parsed()) {
      steingp::RunConfig c = resolve(bench_o);
      if (replicates) {
        c.benchmark.replicates = *replicates;
      }
      steingp::cmd_benchmark(c, bench_o.out, &std::cerr);
    }
  } catch (...) {
    return steingp::exit_code(std::current_exception(), std::cerr);
  }
  return steingp::kExitOk;
}
