// Command-line front end: train, eval, gradcheck, bench, dump-episodes.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hcam/bench.hpp"
#include "hcam/checkpoint.hpp"
#include "hcam/episode_dump.hpp"
#include "hcam/errors.hpp"
#include "hcam/gradcheck_suite.hpp"
#include "hcam/random.hpp"
#include "hcam/task_model.hpp"
#include "hcam/training.hpp"

namespace {

using Settings = std::vector<std::pair<std::string, std::string>>;

// Every key accepted by apply_setting, exposed as --key.
const char* const kRunKeys[] = {
    "task",       "dances",     "delay",      "chain-length", "n-pairs",       "pool-size", "direct-fraction",
    "model",      "chunk-size", "top-k",      "layers",       "d-model",       "heads",
    "window",     "xl-length",  "mlp-hidden", "overlap",      "capacity",      "chunk-positions",
    "aux-weight", "lr",         "beta1",      "beta2",        "epsilon",       "batch",
    "steps",      "eval-every", "eval-episodes", "seed",      "target-acc",    "wall-time",
    "out",        "checkpoint",
};

const std::map<std::string, std::string> kRunHelp{
    {"task", "ballet | pai"},
    {"dances", "ballet: dances (and dancers) per episode"},
    {"delay", "ballet: blank steps between dances"},
    {"chain-length", "pai: 1 (direct pair) or 3 (one hop)"},
    {"n-pairs", "pai: stored pairs per episode"},
    {"pool-size", "pai: size of the item pool"},
    {"direct-fraction", "pai chain 3: share of training episodes with a direct query"},
    {"model", "hcam | trxl | trxl-topk | lstm"},
    {"chunk-size", "rows per memory chunk"},
    {"top-k", "chunks read per query (trxl-topk: keys kept per head)"},
    {"layers", "memory layers"},
    {"d-model", "model width"},
    {"heads", "attention heads"},
    {"window", "local attention window"},
    {"xl-length", "trxl: extra cached steps"},
    {"mlp-hidden", "MLP hidden width"},
    {"overlap", "rows shared by consecutive chunks"},
    {"capacity", "chunks kept per layer memory"},
    {"chunk-positions", "add within-chunk positions in detail attention (0/1)"},
    {"aux-weight", "ballet reconstruction loss weight"},
    {"lr", "Adam learning rate"},
    {"beta1", "Adam beta1"},
    {"beta2", "Adam beta2"},
    {"epsilon", "Adam epsilon"},
    {"batch", "episodes per update"},
    {"steps", "parameter updates"},
    {"eval-every", "updates between evaluations"},
    {"eval-episodes", "episodes per evaluation"},
    {"seed", "run seed"},
    {"target-acc", "stop once eval accuracy reaches this (0: off)"},
    {"wall-time", "record wall_ms (0 writes zeros)"},
    {"out", "metrics CSV path"},
    {"checkpoint", "checkpoint manifest path"},
};

CLI::Option* add_run_option(CLI::App* cmd, const std::string& key, std::string& value) {
  const auto it = kRunHelp.find(key);
  return cmd->add_option("--" + key, value, it == kRunHelp.end() ? "" : it->second);
}

struct RunFlags {
  std::map<std::string, std::string> values;
  std::string config_file;

  void attach(CLI::App* cmd, std::initializer_list<std::string> keys) {
    for (const auto& key : keys) values.emplace(key, "");
    for (auto& [key, value] : values) add_run_option(cmd, key, value);
  }
  void attach_all(CLI::App* cmd) {
    for (const char* key : kRunKeys) values.emplace(key, "");
    for (auto& [key, value] : values) add_run_option(cmd, key, value);
    cmd->add_option("--config", config_file, "flat key = value file; flags override it");
  }

  Settings given(CLI::App* cmd) const {
    Settings out;
    for (const auto& [key, value] : values) {
      if (cmd->count("--" + key) > 0) out.emplace_back(key, value);
    }
    return out;
  }
};

std::string find(const Settings& s, const std::string& key) {
  std::string out;
  for (const auto& [k, v] : s) {
    if (k == key) out = v;
  }
  return out;
}

// Config file first, then flags; the task (which sets defaults) is resolved
// before anything else.
hcam::RunConfig build_config(const Settings& file, const Settings& flags) {
  std::string task = find(flags, "task");
  if (task.empty()) task = find(file, "task");
  hcam::RunConfig config =
      hcam::default_run_config(task.empty() ? hcam::TaskKind::ballet : hcam::parse_task_kind(task));
  for (const auto& [k, v] : file) hcam::apply_setting(config, k, v);
  for (const auto& [k, v] : flags) hcam::apply_setting(config, k, v);
  return config;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

int fail(const std::string& kind, const std::string& message, int code = 1) {
  std::cerr << "error kind=" << kind << " message=" << quote(message) << std::endl;
  return code;
}

std::size_t stack_parameters(hcam::ModelConfig model, hcam::ModelKind kind) {
  model.kind = kind;
  hcam::ParameterSet params;
  hcam::Rng rng(0);
  return hcam::MemoryStack(model, params, rng).parameter_count();
}

int run_train(const hcam::RunConfig& config) {
  hcam::TaskModel model(config.model, config.task, hcam::mix_seed(config.seed, 0));
  std::cout << "parameters total=" << model.parameters().scalar_count()
            << " stack=" << model.stack().parameter_count()
            << " parity_hcam=" << stack_parameters(config.model, hcam::ModelKind::hcam)
            << " parity_trxl=" << stack_parameters(config.model, hcam::ModelKind::trxl)
            << " parity_lstm=" << stack_parameters(config.model, hcam::ModelKind::lstm) << '\n';
  const hcam::TrainResult result = hcam::train(config, model, &std::cout);
  std::cout << "train steps=" << result.steps_run << " eval_acc=" << result.final_eval_accuracy
            << " reached_target=" << (result.reached_target ? 1 : 0) << std::endl;
  return 0;
}

int run_eval(const std::string& checkpoint, const Settings& flags, std::size_t episodes,
             std::uint64_t seed) {
  const hcam::CheckpointManifest manifest = hcam::read_manifest(checkpoint);
  hcam::RunConfig requested;
  requested.model = manifest.model;
  requested.task = manifest.task;
  for (const auto& [k, v] : flags) hcam::apply_setting(requested, k, v);
  hcam::check_compatible(manifest, requested.model, requested.task);
  // Task parameters that do not change the architecture (delay, chain
  // length) may be varied at evaluation time.
  hcam::TaskModel evaluated(manifest.model, requested.task, 0);
  hcam::load_parameters(checkpoint, evaluated);
  const double acc = hcam::evaluate(evaluated, episodes, seed);
  std::cout << "eval accuracy=" << acc << " episodes=" << episodes << " task="
            << hcam::to_string(requested.task.kind) << std::endl;
  return 0;
}

int run_gradcheck(std::uint64_t seed, double tolerance) {
  hcam::GradCheckOptions options;
  options.tolerance = tolerance;
  const hcam::GradcheckReport report = hcam::run_gradcheck_suite(seed, options);
  for (const auto& e : report.entries) {
    std::cout << "op=" << e.name << " max_rel_err=" << e.result.max_relative_error
              << " max_abs_err=" << e.result.max_absolute_error
              << " entries=" << e.result.entries_checked
              << " status=" << (e.passed ? "pass" : "FAIL") << '\n';
  }
  const hcam::GradcheckEntry mutation = hcam::run_mutation_selftest(seed, options);
  const bool caught = !mutation.passed;
  std::cout << "selftest=mutation max_rel_err=" << mutation.result.max_relative_error
            << " status=" << (caught ? "detected" : "MISSED") << '\n';
  const hcam::StopGradientProbe probe = hcam::probe_stop_gradient(seed);
  const bool stop_ok = probe.max_analytic == 0.0 && probe.max_numeric <= 1e-9;
  std::cout << "probe=stop_gradient analytic=" << probe.max_analytic
            << " numeric=" << probe.max_numeric << " status=" << (stop_ok ? "pass" : "FAIL")
            << '\n';
  const bool ok = report.all_passed() && caught && stop_ok;
  std::cout << "gradcheck " << (ok ? "passed" : "failed")
            << " worst_rel_err=" << report.worst_relative_error() << std::endl;
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical chunk attention memory: training and analysis tool"};
  app.require_subcommand(1);

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "train a model on a generated task");
  train_flags.attach_all(train);

  RunFlags eval_flags;
  std::string eval_checkpoint;
  std::size_t eval_episodes = 1000;
  std::uint64_t eval_seed = 12345;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on fresh episodes");
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint manifest")->required();
  eval->add_option("--episodes", eval_episodes, "number of episodes");
  eval->add_option("--seed", eval_seed, "episode stream seed");
  eval_flags.attach(eval, {"task", "dances", "delay", "chain-length", "n-pairs", "model",
                           "chunk-size", "top-k", "layers", "d-model", "heads", "window",
                           "xl-length"});

  std::uint64_t grad_seed = 7;
  double grad_tol = 1e-4;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op");
  grad->add_option("--seed", grad_seed);
  grad->add_option("--tolerance", grad_tol);

  hcam::BenchConfig bench_config;
  auto* bench = app.add_subcommand("bench", "hierarchical vs dense attention cost");
  bench->add_option("--chunks,-N", bench_config.chunks);
  bench->add_option("--chunk-size,-C", bench_config.chunk_size);
  bench->add_option("--top-k,-k", bench_config.top_k);
  bench->add_option("--d-model", bench_config.d_model);
  bench->add_option("--heads", bench_config.heads);
  bench->add_option("--queries", bench_config.queries);
  bench->add_option("--trials", bench_config.trials);
  bench->add_option("--seed", bench_config.seed);

  RunFlags dump_flags;
  std::size_t dump_count = 10;
  std::uint64_t dump_seed = 1;
  std::string dump_out;
  auto* dump = app.add_subcommand("dump-episodes", "write generated episodes as JSON lines");
  dump_flags.attach(dump, {"task", "dances", "delay", "chain-length", "n-pairs", "pool-size"});
  dump->add_option("--count", dump_count);
  dump->add_option("--seed", dump_seed);
  dump->add_option("--out", dump_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*train) {
      Settings file;
      if (!train_flags.config_file.empty()) file = hcam::read_config_file(train_flags.config_file);
      return run_train(build_config(file, train_flags.given(train)));
    }
    if (*eval) return run_eval(eval_checkpoint, eval_flags.given(eval), eval_episodes, eval_seed);
    if (*grad) return run_gradcheck(grad_seed, grad_tol);
    if (*bench) {
      const hcam::BenchReport report = hcam::run_bench(bench_config);
      std::cout << hcam::format_bench(report) << std::endl;
      return report.counts_match() ? 0 : 3;
    }
    if (*dump) {
      const hcam::RunConfig config = build_config({}, dump_flags.given(dump));
      if (dump_out.empty()) {
        hcam::dump_episodes(std::cout, config.task, dump_seed, dump_count);
      } else {
        std::ofstream out(dump_out);
        if (!out) return fail("io", "cannot write '" + dump_out + "'");
        hcam::dump_episodes(out, config.task, dump_seed, dump_count);
      }
      return 0;
    }
  } catch (const hcam::ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const hcam::CheckpointVersionError& e) {
    return fail("checkpoint_version", e.what());
  } catch (const hcam::CheckpointShapeError& e) {
    return fail("checkpoint_shape", e.what());
  } catch (const hcam::CheckpointTruncatedError& e) {
    return fail("checkpoint_truncated", e.what());
  } catch (const hcam::CheckpointMismatchError& e) {
    return fail("manifest_mismatch", e.what());
  } catch (const hcam::CheckpointError& e) {
    return fail("checkpoint", e.what());
  } catch (const hcam::TrainingError& e) {
    return fail("training", e.what());
  } catch (const hcam::ContractError& e) {
    return fail("contract", e.what());
  } catch (const hcam::DimensionError& e) {
    return fail("dimension", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
