#pragma once

// Greedy policy extraction, clinician-vs-model comparison and simulator-based evaluation.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "morphdose/checkpoint.hpp"
#include "morphdose/cohort_synth.hpp"
#include "morphdose/ingestion.hpp"
#include "morphdose/mdp.hpp"

namespace morphdose {

/// Index of the largest entry; ties go to the lowest index (the smaller dose).
int argmax_lowest(const Eigen::VectorXd& q);

ActionIndex greedy_action(const QModel& model, const StateVector& raw_state);

struct TimestepActions {
  std::string admission_id;
  int hour = 0;
  ActionIndex physician{0};
  ActionIndex model{0};

  friend bool operator==(const TimestepActions&, const TimestepActions&) = default;
};

using ActionHistogram = std::array<std::int64_t, kNumActions>;

/// Counts and rates for one agent (physician or model).
struct AgentSummary {
  ActionHistogram actions{};                 // all hours
  std::int64_t dosing_hours = 0;             // hours with action >= 1
  std::map<int, std::int64_t> dose_intervals;  // hours between consecutive doses -> count
  std::int64_t next_hour_redoses = 0;        // intervals equal to 1

  std::optional<double> morphine_rate(std::int64_t timesteps) const;
  std::optional<double> next_hour_redose_rate() const;

  friend bool operator==(const AgentSummary&, const AgentSummary&) = default;
};

struct PolicyReport {
  std::vector<TimestepActions> per_timestep;  // sorted by admission_id, then hour
  AgentSummary physician;
  AgentSummary model;
  /// joint[physician][model] over every timestep. Its [1..13] x [1..13] block is the
  /// co-administration view.
  std::array<std::array<std::int64_t, kNumActions>, kNumActions> joint{};
  /// Model actions at hours where the physician withheld morphine.
  ActionHistogram model_given_physician_withhold{};

  std::int64_t timesteps() const { return static_cast<std::int64_t>(per_timestep.size()); }
  /// P(model >= 1 | physician >= 1); empty when the physician never dosed.
  std::optional<double> model_doses_when_physician_doses() const;
  /// Fraction of timesteps where both agents chose the same bin.
  std::optional<double> exact_agreement() const;

  friend bool operator==(const PolicyReport&, const PolicyReport&) = default;
};

/// Builds every aggregate from the per-timestep list (which is sorted first).
PolicyReport build_report(std::vector<TimestepActions> per_timestep);

/// Compares logged physician actions with the model's greedy actions at every hour of every
/// (imputed) episode. Throws InsufficientData for an empty test set.
PolicyReport compare_policies(const QModel& model, std::span<const EpisodeLog> episodes, unsigned jobs = 1);

enum class ReportFormat { Csv, JsonLines };

// CSV export writes, in `dir`: per_timestep.csv, actions.csv, joint_histogram.csv,
// withhold_histogram.csv, dose_intervals.csv and summary.csv. Every file begins with
// "# morphdose-report v1 <table>" followed by a column header; count tables list only
// nonzero cells. JSON-lines export writes report.jsonl: a header object followed by one
// object per row, tagged by "table".
inline constexpr std::string_view kReportSchema = "morphdose-report v1";

void export_report(const PolicyReport& report, ReportFormat format, const std::filesystem::path& dir);
PolicyReport import_report(ReportFormat format, const std::filesystem::path& dir);

/// A policy for simulator rollouts.
using ActionPolicy = std::function<ActionIndex(const StateVector& observed, Rng& rng)>;

ActionPolicy greedy_policy(QModel model);
ActionPolicy withhold_policy();
ActionPolicy uniform_random_policy();

/// Wraps an action policy as a dose policy (bin -> representative dose).
DosePolicy as_dose_policy(ActionPolicy policy);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
};

/// Per-episode statistics averaged over episodes. Rewards score the simulator's true state
/// in the hour after each action; components are the unweighted reward terms.
struct SimulationStats {
  std::size_t episodes = 0;
  MeanSd discounted_return;
  MeanSd mean_reward;
  MeanSd pain_component;
  MeanSd hr_component;
  MeanSd rr_component;
  MeanSd doses_per_hour;
};

/// Rolls `policy` on n_episodes patients drawn from `population`. Episode i uses patient
/// parameters and noise streams derived from (seed, i), so different policies evaluated with
/// the same seed face identical patients and identical dynamics noise.
SimulationStats simulate_policy(const ActionPolicy& policy, const CohortConfig& population, std::size_t n_episodes,
                                int horizon_hours, std::uint64_t seed, double gamma, unsigned jobs = 1);

}  // namespace morphdose
