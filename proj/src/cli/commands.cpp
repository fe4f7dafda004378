#include "domino/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "domino/drafter/ar.hpp"
#include "domino/drafter/bundle.hpp"
#include "domino/lm/chain.hpp"
#include "domino/numerics/checkpoint.hpp"
#include "domino/numerics/error.hpp"
#include "domino/specdec/losslessness.hpp"
#include "domino/trainer/corpus.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace domino {

namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  os << text;
}

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

constexpr int kTimingRepeats = 5;
constexpr std::size_t kWarmupCycles = 3;

}  // namespace

const TinyTransformer& LoadedTarget::require_transformer() const {
  if (!transformer) throw ContractError("this command needs a transformer target");
  return *transformer;
}

LoadedTarget load_target(const RunConfig& cfg) {
  LoadedTarget t;
  if (cfg.target == "chain") {
    const Vocabulary vocab = cfg.vocab();
    const ChainSpec spec = ChainSpec::random_words(vocab, cfg.chain_words, cfg.chain_word_length,
                                                   cfg.target_seed);
    t.transformer.emplace(make_chain_target(cfg.target_config(), spec, cfg.target_seed));
  } else if (cfg.target == "cycle-tabular") {
    t.tabular.emplace(TabularTarget::cycle(Vocabulary::plain(cfg.vocab_size)));
  } else if (cfg.target.ends_with(".tab")) {
    if (!fs::exists(cfg.target)) throw FormatError("target file not found: " + cfg.target);
    t.tabular.emplace(TabularTarget::load(cfg.target));
  } else {
    if (!fs::exists(cfg.target)) throw FormatError("target file not found: " + cfg.target);
    t.transformer.emplace(TinyTransformer::load(cfg.target_config(), cfg.target));
  }
  return t;
}

std::string cmd_gen_corpus(const RunConfig& cfg) {
  cfg.validate();
  const LoadedTarget t = load_target(cfg);
  ensure_dir(cfg.out);
  const std::string path = join(cfg.out, "corpus.txt");
  if (t.transformer) {
    sample_corpus(*t.transformer, cfg.corpus_size, cfg.corpus_length, cfg.seed).save(path);
    t.transformer->save(join(cfg.out, "target.ckpt"));
  } else {
    sample_corpus(*t.tabular, cfg.corpus_size, cfg.corpus_length, cfg.seed).save(path);
  }
  return path;
}

TrainOutputs cmd_train(const RunConfig& cfg, const std::string& corpus_path) {
  cfg.validate();
  const LoadedTarget t = load_target(cfg);
  const TinyTransformer& target = t.require_transformer();
  const Corpus corpus = Corpus::load(corpus_path);
  ensure_dir(cfg.out);
  cfg.save(join(cfg.out, "config.txt"));

  const TrainResult res = train_run(target, corpus, cfg.drafter_config(), cfg.train_config());
  TrainOutputs out;
  out.bundle_path = join(cfg.out, "bundle.bin");
  out.curves_path = join(cfg.out, "curves.csv");
  save_bundle(out.bundle_path, res.bundle);
  write_curves_csv(out.curves_path, res.curve);
  out.bundle_hash = bundle_hash(res.bundle);
  out.final_loss_base = res.curve.back().loss_base;
  out.final_loss_final = res.curve.back().loss_final;

  json j;
  j["mode"] = cfg.mode;
  j["steps"] = cfg.steps;
  j["seed"] = cfg.seed;
  j["bundle_hash"] = hash_hex(out.bundle_hash);
  j["target_hash"] = hash_hex(target.hash());
  j["final_loss_base"] = out.final_loss_base;
  j["final_loss_final"] = out.final_loss_final;
  write_text(join(cfg.out, "train.json"), j.dump(2) + "\n");
  return out;
}

std::vector<TokenSeq> eval_prompts(const RunConfig& cfg, const TinyTransformer& target,
                                   const std::string& eval_path) {
  std::vector<TokenSeq> prompts;
  if (!eval_path.empty()) {
    prompts = Corpus::load(eval_path).sequences;
  } else {
    prompts = sample_corpus(target, cfg.eval_prompts, 4, cfg.eval_seed).sequences;
  }
  for (const auto& p : prompts) {
    if (p.size() < 2) throw ContractError("eval prompts need at least 2 tokens");
  }
  return prompts;
}

SpecMetrics run_eval(const TinyTransformer& target, Drafter& drafter,
                     const std::vector<TokenSeq>& prompts, const RunConfig& cfg) {
  SpecMetrics total;
  total.method = drafter.name();
  total.gamma = drafter.gamma();
  total.temperature = cfg.temperature;
  total.seed = cfg.eval_seed;
  total.tau_hist.assign(total.gamma + 2, 0);
  const Rng root(cfg.eval_seed);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng = root.split(i);
    const DecodeResult r =
        decode_loop(target, drafter, prompts[i], {cfg.eval_max_new, cfg.temperature}, rng);
    total.merge(r.metrics);
  }
  return total;
}

BenchOutputs cmd_bench(const RunConfig& cfg, const std::string& drafter_spec,
                       const std::string& eval_path) {
  cfg.validate();
  const LoadedTarget t = load_target(cfg);
  const TinyTransformer& target = t.require_transformer();

  std::optional<DominoDrafter> domino;
  std::optional<ArDrafter> ar;
  std::unique_ptr<Drafter> drafter;
  bool parallel = true;
  bool head = false;
  if (drafter_spec == "oracle") {
    drafter = std::make_unique<OracleDrafter>(target, cfg.gamma);
    parallel = false;
  } else {
    DrafterBundle b = load_bundle(drafter_spec);
    check_bundle_target(b, target);
    if (b.config.block_size != cfg.block_size) {
      throw ContractError("bundle block_size " + std::to_string(b.config.block_size) +
                          " does not match config block_size " + std::to_string(cfg.block_size));
    }
    if (b.kind == DrafterKind::ar) {
      ar.emplace(target, b.config, std::move(b.params));
      drafter = std::make_unique<ArBlockDrafter>(*ar);
      parallel = false;
    } else {
      domino.emplace(target, b.config, std::move(b.params));
      head = b.mode != mode_name(TrainMode::backbone_only);
      drafter = std::make_unique<DominoBlockDrafter>(*domino, head);
    }
  }

  const auto prompts = eval_prompts(cfg, target, eval_path);
  BenchOutputs out;
  out.metrics = run_eval(target, *drafter, prompts, cfg);
  if (!(out.metrics.tau_mean >= 1.0 && out.metrics.tau_mean <= cfg.gamma + 1.0)) {
    throw ContractError("tau outside [1, gamma + 1]");
  }

  // Wall clock: first 3 cycles of each decode excluded, median of 5 passes.
  std::vector<double> draft_rep, verify_rep, target_rep, spec_rep;
  const Rng root(cfg.eval_seed);
  for (int rep = 0; rep < kTimingRepeats; ++rep) {
    double d = 0.0, v = 0.0, total = 0.0;
    std::size_t n = 0;
    auto t0 = Clock::now();
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      Rng rng = root.split(i);
      const DecodeResult r =
          decode_loop(target, *drafter, prompts[i], {cfg.eval_max_new, cfg.temperature}, rng);
      for (std::size_t c = kWarmupCycles; c < r.timings.size(); ++c) {
        d += r.timings[c].draft_s;
        v += r.timings[c].verify_s;
        ++n;
      }
    }
    total = std::chrono::duration<double>(Clock::now() - t0).count();
    draft_rep.push_back(n ? d / n : 0.0);
    verify_rep.push_back(n ? v / n : 0.0);
    spec_rep.push_back(total);

    t0 = Clock::now();
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      Rng rng = root.split(i);
      autoregressive_decode(target, prompts[i], cfg.eval_max_new, cfg.temperature, rng);
    }
    const double ar_total = std::chrono::duration<double>(Clock::now() - t0).count();
    const double tokens = static_cast<double>(prompts.size()) * std::max(1, cfg.eval_max_new);
    target_rep.push_back(ar_total / tokens);
    spec_rep.back() = ar_total / std::max(spec_rep.back(), 1e-12);
  }
  out.draft_ms = 1e3 * median(draft_rep);
  out.verify_ms = 1e3 * median(verify_rep);
  out.target_ms = 1e3 * median(target_rep);
  out.measured_speedup = median(spec_rep);
  const double t_draft = std::max(out.draft_ms, 0.0) * 1e-3;
  const double t_verify = std::max(out.verify_ms * 1e-3, 1e-12);
  out.report = speedup(out.metrics.tau_mean, cfg.gamma, t_draft, t_verify,
                       std::max(out.target_ms * 1e-3, 1e-12), out.metrics.method);
  out.report.breakdown["measured_speedup"] = out.measured_speedup;
  out.report.breakdown["parallel"] = parallel ? 1.0 : 0.0;
  out.report.breakdown["domino_head"] = head ? 1.0 : 0.0;

  ensure_dir(cfg.out);
  write_text(join(cfg.out, "metrics.json"), out.metrics.to_json() + "\n");
  write_text(join(cfg.out, "speedup.json"), out.report.to_json() + "\n");
  return out;
}

std::vector<LosslessnessRow> losslessness_grid(int n_targets, std::uint64_t seed) {
  if (n_targets < 1) throw ContractError("losslessness grid needs at least one target");
  static const char* kDrafters[] = {"target", "uniform", "adversarial", "random"};
  std::vector<LosslessnessRow> rows;
  const Rng root(seed);
  for (int k = 0; k < n_targets; ++k) {
    LosslessnessRow base;
    base.target_seed = root.split(static_cast<std::uint64_t>(k)).next_u64();
    base.vocab = 3 + k % 2;
    base.order = 1 + (k / 2) % 2;
    base.gamma = 1 + k % 3;
    base.horizon = 3;
    const TabularTarget target =
        TabularTarget::random(base.order, Vocabulary::plain(base.vocab), base.target_seed);
    TokenSeq prompt;
    for (int i = 0; i < base.order; ++i) prompt.push_back(static_cast<TokenId>(i % base.vocab));
    for (const char* d : kDrafters) {
      LosslessnessRow row = base;
      row.drafter = d;
      const auto q = make_reference_drafter(d, target, base.target_seed ^ 0x5eedULL);
      row.tv = enumerate_losslessness(target, prompt, q, row.gamma, row.horizon).tv;
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<LosslessnessRow> cmd_losslessness(const RunConfig& cfg, int n_targets) {
  const auto rows = losslessness_grid(n_targets, cfg.seed);
  ensure_dir(cfg.out);
  std::string csv = "target_seed,vocab,order,gamma,horizon,drafter,tv\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%llu,%d,%d,%d,%d,%s,%.17g\n",
                  static_cast<unsigned long long>(r.target_seed), r.vocab, r.order, r.gamma,
                  r.horizon, r.drafter.c_str(), r.tv);
    csv += buf;
  }
  write_text(join(cfg.out, "losslessness.csv"), csv);
  return rows;
}

ReportedChecks reported_checks(const LatencyProfile& profile) {
  ReportedChecks c;
  c.speedup_ratio_predicted = predicted_speedup_ratio(1.0 + reported::kDominoTauGain,
                                                      1.0 + reported::kDominoLatencyGain);
  c.speedup_ratio_reported = 1.0 + reported::kDominoSpeedupGain;
  c.speedup_ratio_rel_err =
      std::abs(c.speedup_ratio_predicted - c.speedup_ratio_reported) / c.speedup_ratio_reported;
  c.eagle3_cycle_ratio = implied_cycle_ratio(reported::kEagle3Tau, reported::kEagle3Speedup);
  c.dflash_cycle_ratio = implied_cycle_ratio(reported::kDflashTau, reported::kDflashSpeedup);
  LatencyProfile slow = profile, fast = profile;
  slow.t_dhead = reported::kDheadUnoptimizedMs * 1e-3;
  fast.t_dhead = reported::kDheadOptimizedMs * 1e-3;
  c.dhead_delta_s = par_draft_cost(slow, true) - par_draft_cost(fast, true);
  return c;
}

ReportedChecks cmd_costmodel(const RunConfig& cfg, const std::string& profile_path,
                          const std::vector<std::string>& metrics_paths) {
  LatencyProfile profile;
  if (!profile_path.empty()) profile = LatencyProfile::from_json(read_text(profile_path));
  profile.validate();
  const ReportedChecks c = reported_checks(profile);

  std::vector<MeasuredTau> measured;
  for (const auto& p : metrics_paths) {
    json j;
    try {
      j = json::parse(read_text(p));
    } catch (const json::exception& e) {
      throw FormatError("metrics " + p + ": " + e.what());
    }
    MeasuredTau m;
    m.method = j.at("method").get<std::string>();
    m.tau = j.at("tau_mean").get<double>();
    m.gamma = j.at("gamma").get<int>();
    m.parallel = m.method == "domino" || m.method == "backbone-only";
    m.domino_head = m.method == "domino";
    measured.push_back(m);
  }
  const auto rows = calibration_report(measured, profile);

  ensure_dir(cfg.out);
  json j;
  j["speedup_ratio_predicted"] = c.speedup_ratio_predicted;
  j["speedup_ratio_reported"] = c.speedup_ratio_reported;
  j["speedup_ratio_rel_err"] = c.speedup_ratio_rel_err;
  j["eagle3_cycle_ratio"] = c.eagle3_cycle_ratio;
  j["dflash_cycle_ratio"] = c.dflash_cycle_ratio;
  j["dhead_delta_s"] = c.dhead_delta_s;
  j["profile"] = json::parse(profile.to_json());
  j["calibration"] = json::parse(calibration_json(rows));
  write_text(join(cfg.out, "costmodel.json"), j.dump(2) + "\n");
  write_text(join(cfg.out, "calibration.csv"), calibration_csv(rows));
  return c;
}

std::size_t cmd_report(const std::string& dir) {
  if (!fs::is_directory(dir)) throw FormatError("report: not a directory: " + dir);
  std::vector<std::string> paths;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "metrics.json") {
      paths.push_back(e.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::string csv = "path,method,gamma,temperature,cycles,tokens,tau_mean,net_calls,head_calls,seed\n";
  for (const auto& p : paths) {
    json j;
    try {
      j = json::parse(read_text(p));
    } catch (const json::exception& e) {
      throw FormatError("metrics " + p + ": " + e.what());
    }
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%lld,%lld,%.17g,%lld,%lld,%llu\n",
                  fs::relative(p, dir).string().c_str(), j.at("method").get<std::string>().c_str(),
                  j.at("gamma").get<int>(), j.at("temperature").get<int>(),
                  j.at("cycles").get<long long>(), j.at("tokens").get<long long>(),
                  j.at("tau_mean").get<double>(), j.at("net_calls").get<long long>(),
                  j.at("head_calls").get<long long>(), j.at("seed").get<unsigned long long>());
    csv += buf;
  }
  write_text(join(dir, "report.csv"), csv);
  return paths.size();
}

std::string default_out_root() {
  const char* env = std::getenv("DOMINO_OUT");
  return env && *env ? env : "domino_out";
}

}  // namespace domino
