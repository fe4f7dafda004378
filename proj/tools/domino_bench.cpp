// Command-line harness for corpus generation, drafter training, decode
// benchmarks, the losslessness grid and the cost model.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "domino/cli/commands.hpp"
#include "domino/numerics/checkpoint.hpp"
#include "domino/numerics/error.hpp"

using namespace domino;

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::fprintf(stderr, "error kind=%s message=\"%s\"\n", kind, escape(msg).c_str());
  return code;
}

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> block_size;
  std::optional<std::string> mode;
  std::optional<int> temperature;
  std::optional<std::string> out;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value config file");
    app->add_option("--set", sets, "override one key (key=value), repeatable");
    app->add_option("--seed", seed, "run seed");
    app->add_option("--block-size", block_size, "draft block size B (gamma = B - 1)");
    app->add_option("--mode", mode, "TF+Curr | TF | TTT | backbone-only | eagle-ar-baseline");
    app->add_option("--temperature", temperature, "0 or 1");
    app->add_option("--out", out, "output directory");
  }

  RunConfig resolve(const std::string& verb, const std::string& label = "") const {
    RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ContractError("--set expects key=value, got '" + s + "'");
      c.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) c.seed = *seed;
    if (block_size) {
      c.block_size = *block_size;
      c.gamma = *block_size - 1;
    }
    if (mode) c.mode = *mode;
    if (temperature) c.temperature = *temperature;
    if (out) {
      c.out = *out;
    } else if (config_path.empty() || c.out == ".") {
      std::string name = verb;
      if (!label.empty()) {
        name += "-" + label + "-t" + std::to_string(c.temperature);
      } else if (verb == "train") {
        name += "-" + c.mode;
      }
      c.out = default_out_root() + "/" + name + "-s" + std::to_string(c.seed);
    }
    c.validate();
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speculative decoding lab: block drafter with causal correction head"};
  app.require_subcommand(1);

  Common gen_c, train_c, bench_c, loss_c, cost_c;
  auto* gen = app.add_subcommand("gen-corpus", "sample a training corpus from the target");
  gen_c.attach(gen);

  auto* train = app.add_subcommand("train", "train a drafter bundle");
  train_c.attach(train);
  std::string corpus;
  train->add_option("--corpus", corpus, "corpus file")->required();

  auto* bench = app.add_subcommand("bench", "speculative decoding benchmark");
  bench_c.attach(bench);
  std::string drafter = "oracle", eval_path;
  bench->add_option("--drafter", drafter, "bundle path or 'oracle'");
  bench->add_option("--eval", eval_path, "prompt corpus (default: sampled from the target)");

  auto* loss = app.add_subcommand("losslessness", "exact enumeration grid");
  loss_c.attach(loss);
  int n_targets = 20;
  loss->add_option("--targets", n_targets, "number of seeded tabular targets");

  auto* cost = app.add_subcommand("costmodel", "consistency checks against published figures, and calibration");
  cost_c.attach(cost);
  std::string profile;
  std::vector<std::string> metrics;
  cost->add_option("--profile", profile, "latency profile JSON");
  cost->add_option("--metrics", metrics, "metrics.json files to calibrate");

  auto* report = app.add_subcommand("report", "collect metrics.json files into report.csv");
  std::string report_dir;
  report->add_option("--dir", report_dir, "directory to scan")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*gen) {
      const std::string path = cmd_gen_corpus(gen_c.resolve("gen-corpus"));
      std::printf("corpus %s\n", path.c_str());
    } else if (*train) {
      const RunConfig cfg = train_c.resolve("train");
      const TrainOutputs o = cmd_train(cfg, corpus);
      std::printf("bundle %s hash %s loss_base %.6f loss_final %.6f\n", o.bundle_path.c_str(),
                  hash_hex(o.bundle_hash).c_str(), o.final_loss_base, o.final_loss_final);
    } else if (*bench) {
      const std::string label =
          drafter == "oracle" ? drafter
                              : std::filesystem::path(drafter).parent_path().filename().string();
      const RunConfig cfg = bench_c.resolve("bench", label.empty() ? "bundle" : label);
      const BenchOutputs o = cmd_bench(cfg, drafter, eval_path);
      std::printf("%s\n", o.metrics.to_json().c_str());
      std::printf("draft_ms %.4f verify_ms %.4f target_ms %.4f eta_model %.4f eta_measured %.4f\n",
                  o.draft_ms, o.verify_ms, o.target_ms, o.report.eta, o.measured_speedup);
    } else if (*loss) {
      const auto rows = cmd_losslessness(loss_c.resolve("losslessness"), n_targets);
      double worst = 0.0;
      for (const auto& r : rows) worst = std::max(worst, r.tv);
      std::printf("rows %zu max_tv %.3e\n", rows.size(), worst);
    } else if (*cost) {
      const ReportedChecks c = cmd_costmodel(cost_c.resolve("costmodel"), profile, metrics);
      std::printf("speedup_ratio predicted %.4f reported %.4f rel_err %.4f\n",
                  c.speedup_ratio_predicted, c.speedup_ratio_reported, c.speedup_ratio_rel_err);
      std::printf("cycle_ratio eagle3 %.4f dflash %.4f\n", c.eagle3_cycle_ratio,
                  c.dflash_cycle_ratio);
      std::printf("dhead_delta_ms %.4f\n", c.dhead_delta_s * 1e3);
    } else if (*report) {
      std::printf("rows %zu\n", cmd_report(report_dir));
    }
  } catch (const ContractError& e) {
    return fail("contract", e.what(), 3);
  } catch (const ShapeError& e) {
    return fail("shape", e.what(), 3);
  } catch (const FormatError& e) {
    return fail("format", e.what(), 4);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 5);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
