#include "domino/costmodel/costmodel.hpp"

#include <cmath>
#include <cstdio>

#include "domino/numerics/error.hpp"
#include "json.hpp"

namespace domino {

using json = nlohmann::ordered_json;

void LatencyProfile::validate() const {
  for (double x : {t_net, t_head, t_net_block, t_head_block, t_dhead, t_tree, t_verify}) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw ContractError("latency profile components must be finite and >= 0");
    }
  }
  if (!(l_target > 0.0) || !std::isfinite(l_target)) {
    throw ContractError("latency profile needs l_target > 0");
  }
}

std::string LatencyProfile::to_json() const {
  json j;
  j["t_net"] = t_net;
  j["t_head"] = t_head;
  j["t_net_block"] = t_net_block;
  j["t_head_block"] = t_head_block;
  j["t_dhead"] = t_dhead;
  j["t_tree"] = t_tree;
  j["t_verify"] = t_verify;
  j["l_target"] = l_target;
  return j.dump(2);
}

LatencyProfile LatencyProfile::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("latency profile: ") + e.what());
  }
  LatencyProfile p;
  auto take = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = j.at(k).get<double>();
  };
  take("t_net", p.t_net);
  take("t_head", p.t_head);
  take("t_net_block", p.t_net_block);
  take("t_head_block", p.t_head_block);
  take("t_dhead", p.t_dhead);
  take("t_tree", p.t_tree);
  take("t_verify", p.t_verify);
  take("l_target", p.l_target);
  p.validate();
  return p;
}

double ar_draft_cost(int gamma, const LatencyProfile& p, bool with_tree) {
  if (gamma < 1) throw ContractError("ar_draft_cost: gamma must be >= 1");
  return gamma * (p.t_net + p.t_head) + (with_tree ? p.t_tree : 0.0);
}

double par_draft_cost(const LatencyProfile& p, bool with_domino_head) {
  return p.t_net_block + p.t_head_block + (with_domino_head ? p.t_dhead : 0.0);
}

std::string SpeedupReport::to_json() const {
  json j;
  j["method"] = method;
  j["gamma"] = gamma;
  j["tau"] = tau;
  j["t_draft"] = t_draft;
  j["t_verify"] = t_verify;
  j["l_target"] = l_target;
  j["l_spec"] = l_spec;
  j["eta"] = eta;
  j["breakdown"] = breakdown;
  return j.dump(2);
}

SpeedupReport speedup(double tau, int gamma, double t_draft, double t_verify, double l_target,
                      const std::string& method) {
  if (gamma < 1) throw ContractError("speedup: gamma must be >= 1");
  if (!(tau >= 1.0 && tau <= gamma + 1.0)) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "speedup: tau %.6g outside [1, %d]", tau, gamma + 1);
    throw ContractError(buf);
  }
  if (!(t_draft >= 0.0) || !(t_verify >= 0.0) || !(t_draft + t_verify > 0.0) ||
      !(l_target > 0.0)) {
    throw ContractError("speedup: need T_draft, T_verify >= 0 with a positive sum and L_target > 0");
  }
  SpeedupReport r;
  r.method = method;
  r.gamma = gamma;
  r.tau = tau;
  r.t_draft = t_draft;
  r.t_verify = t_verify;
  r.l_target = l_target;
  r.l_spec = (t_draft + t_verify) / tau;
  r.eta = tau * l_target / (t_draft + t_verify);
  r.breakdown = {{"draft", t_draft}, {"verify", t_verify}};
  return r;
}

double implied_cycle_ratio(double tau, double eta) {
  if (!(tau > 0.0) || !(eta > 0.0)) throw ContractError("implied_cycle_ratio: need tau, eta > 0");
  return tau / eta;
}

double predicted_speedup_ratio(double tau_ratio, double latency_ratio) {
  if (!(tau_ratio > 0.0) || !(latency_ratio > 0.0)) {
    throw ContractError("predicted_speedup_ratio: ratios must be positive");
  }
  return tau_ratio / latency_ratio;
}

std::vector<CalibrationRow> calibration_report(const std::vector<MeasuredTau>& measured,
                                               const LatencyProfile& profile) {
  profile.validate();
  std::vector<CalibrationRow> rows;
  for (const auto& m : measured) {
    CalibrationRow r;
    r.method = m.method;
    r.tau_measured = m.tau;
    r.t_draft = m.parallel ? par_draft_cost(profile, m.domino_head)
                           : ar_draft_cost(m.gamma, profile, profile.t_tree > 0.0);
    const SpeedupReport s = speedup(m.tau, m.gamma, r.t_draft, profile.t_verify,
                                    profile.l_target, m.method);
    r.eta_predicted = s.eta;
    r.cycle_ratio = (r.t_draft + profile.t_verify) / profile.l_target;
    if (m.method == "eagle-3" || m.method == "eagle-ar") {
      r.tau_reported = reported::kEagle3Tau;
      r.eta_reported = reported::kEagle3Speedup;
    } else if (m.method == "dflash" || m.method == "backbone-only") {
      r.tau_reported = reported::kDflashTau;
      r.eta_reported = reported::kDflashSpeedup;
    } else if (m.method == "domino") {
      r.tau_reported = reported::kDflashTau * (1.0 + reported::kDominoTauGain);
      r.eta_reported = reported::kDflashSpeedup * (1.0 + reported::kDominoSpeedupGain);
    }
    if (r.eta_reported > 0.0) r.cycle_ratio_reported = implied_cycle_ratio(r.tau_reported, r.eta_reported);
    rows.push_back(r);
  }
  return rows;
}

std::string calibration_csv(const std::vector<CalibrationRow>& rows) {
  std::string out =
      "method,tau_measured,eta_predicted,t_draft,cycle_ratio,tau_reported,eta_reported,"
      "cycle_ratio_reported\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.method.c_str(), r.tau_measured, r.eta_predicted, r.t_draft, r.cycle_ratio,
                  r.tau_reported, r.eta_reported, r.cycle_ratio_reported);
    out += buf;
  }
  return out;
}

std::string calibration_json(const std::vector<CalibrationRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    json j;
    j["method"] = r.method;
    j["tau_measured"] = r.tau_measured;
    j["eta_predicted"] = r.eta_predicted;
    j["t_draft"] = r.t_draft;
    j["cycle_ratio"] = r.cycle_ratio;
    j["tau_reported"] = r.tau_reported;
    j["eta_reported"] = r.eta_reported;
    j["cycle_ratio_reported"] = r.cycle_ratio_reported;
    arr.push_back(j);
  }
  return arr.dump(2);
}

}  // namespace domino
