#pragma once

// Latency algebra of draft-then-verify decoding.
//
//   L_spec = (T_draft + T_verify) / tau,   eta = L_target / L_spec
//   T_draft^AR  = gamma (t_net + t_head)  (+ t_tree)
//   T_draft^PAR = t_net_block + t_head_block  (+ t_dhead with the Domino head)
//
// All times are in seconds unless a name says otherwise.

#include <map>
#include <string>
#include <vector>

namespace domino {

struct LatencyProfile {
  double t_net = 0.0;
  double t_head = 0.0;
  double t_net_block = 0.0;
  double t_head_block = 0.0;
  double t_dhead = 0.0;
  double t_tree = 0.0;
  double t_verify = 0.0;
  double l_target = 1.0;

  void validate() const;
  std::string to_json() const;
  static LatencyProfile from_json(const std::string& text);
};

double ar_draft_cost(int gamma, const LatencyProfile& p, bool with_tree = false);
double par_draft_cost(const LatencyProfile& p, bool with_domino_head);

struct SpeedupReport {
  std::string method;
  int gamma = 0;
  double tau = 0.0;
  double t_draft = 0.0;
  double t_verify = 0.0;
  double l_target = 0.0;
  double l_spec = 0.0;
  double eta = 0.0;
  std::map<std::string, double> breakdown;

  std::string to_json() const;
};

// Throws ContractError unless 1 <= tau <= gamma + 1 and the denominators are
// positive.
SpeedupReport speedup(double tau, int gamma, double t_draft, double t_verify, double l_target,
                      const std::string& method = "");

// (T_draft + T_verify) / L_target implied by a reported (tau, eta) pair.
double implied_cycle_ratio(double tau, double eta);

// Published figures for the 8B-scale latency comparison.
namespace reported {
inline constexpr double kEagle3Tau = 4.86;
inline constexpr double kEagle3Speedup = 3.28;
inline constexpr double kDflashTau = 4.03;
inline constexpr double kDflashSpeedup = 3.42;
inline constexpr double kDominoTauGain = 0.166;      // vs DFlash
inline constexpr double kDominoLatencyGain = 0.028;  // draft-then-verify latency vs DFlash
inline constexpr double kDominoSpeedupGain = 0.123;  // end-to-end speedup vs DFlash
inline constexpr double kDheadUnoptimizedMs = 2.64;
inline constexpr double kDheadOptimizedMs = 1.20;
}  // namespace reported

// Speedup ratio between two methods from their tau ratio and their
// draft-then-verify latency ratio.
double predicted_speedup_ratio(double tau_ratio, double latency_ratio);

struct MeasuredTau {
  std::string method;
  double tau = 0.0;
  int gamma = 0;
  bool parallel = false;  // block drafter (else sequential)
  bool domino_head = false;
};

struct CalibrationRow {
  std::string method;
  double tau_measured = 0.0;
  double eta_predicted = 0.0;
  double t_draft = 0.0;
  double cycle_ratio = 0.0;  // (T_draft + T_verify) / L_target under the profile
  double tau_reported = 0.0;    // 0 when nothing is published for the method
  double eta_reported = 0.0;
  double cycle_ratio_reported = 0.0;
};

// Predicted eta per measured method next to the published figures.
std::vector<CalibrationRow> calibration_report(const std::vector<MeasuredTau>& measured,
                                               const LatencyProfile& profile);

std::string calibration_csv(const std::vector<CalibrationRow>& rows);
std::string calibration_json(const std::vector<CalibrationRow>& rows);

}  // namespace domino
