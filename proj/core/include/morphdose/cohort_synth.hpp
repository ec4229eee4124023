#pragma once

// Synthetic ICU cohort: a one-compartment morphine model driving pain, respiration and heart
// rate, charted the way bedside data is (rounded, sometimes missing), under a configurable
// dosing policy.
//
// Hourly dynamics for patient parameters (P0, drift, H0, k, R0, t_half, s, c):
//
//   e[t+1]    = e[t] * 2^(-1/t_half) + dose[t]
//   pain[t+1] = clamp(P0 + drift*(t+1) - s*e[t+1] + N(0, sd_pain), 0, 10)
//   rr[t+1]   = max(kRrFloor, R0 - c*e[t+1] + N(0, sd_rr))
//   hr[t+1]   = max(kHrFloor, H0 + k*pain[t+1] + N(0, sd_hr))
//
// A bolus given during hour t is fully absorbed by the end of that hour.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "morphdose/ingestion.hpp"
#include "morphdose/mdp.hpp"
#include "morphdose/seeding.hpp"

namespace morphdose {

inline constexpr double kRrFloor = 4.0;
inline constexpr double kHrFloor = 30.0;

struct NoiseSd {
  double pain = 0.5;
  double hr = 3.0;
  double rr = 1.0;
};

/// A scheduled adjuvant: `dose_mg` of drug `drug` every `interval_hours`, first at `offset_hours`.
/// Adjuvants are recorded in the state but have no pharmacodynamic effect in the simulator.
struct CoanalgesicRegimen {
  std::size_t drug = 0;
  double dose_mg = 0.0;
  int interval_hours = 6;
  int offset_hours = 0;
};

struct PatientParams {
  double baseline_pain = 6.0;
  double pain_drift_per_hour = 0.0;
  double baseline_hr = 75.0;
  double hr_pain_coupling = 2.0;  // bpm per pain point
  double baseline_rr = 16.0;
  double pk_half_life_hours = 3.5;
  double analgesic_sensitivity = 0.3;   // pain points per mg at the effect site
  double resp_depression_coeff = 0.12;  // breaths/min per mg at the effect site
  NoiseSd noise_sd;
  std::vector<CoanalgesicRegimen> coanalgesics;

  /// Throws InvalidParameter on out-of-range fields.
  void validate() const;
};

struct SimState {
  double effect_site_mg = 0.0;
  double pain = 0.0;
  double hr = 0.0;
  double rr = 0.0;
  int hour = 0;
};

/// Exact one-hour first-order elimination: amount * 2^(-1/half_life).
double decay_step(double effect_site_mg, double half_life_hours);

/// Hour-0 state with no drug on board.
SimState initial_state(const PatientParams& params, Rng& rng);

/// Advances one hour after giving `dose_mg` during the current hour. Draws exactly three
/// normal variates from `rng`, whatever the dose.
SimState sim_step(const SimState& state, const PatientParams& params, double dose_mg, Rng& rng);

std::array<double, kNumCoanalgesics> coanalgesics_at(const PatientParams& params, int hour);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Rule-based stand-in for clinician behaviour: dose proportional to charted pain above a
/// threshold, randomly withheld, with occasional arbitrary doses.
struct ClinicianConfig {
  double pain_threshold = 7.0;
  double mg_per_pain_point = 3.0;
  double withhold_prob = 0.5;
  double explore_prob = 0.08;
  double rr_hold_below = 10.0;
  double max_dose_mg = 20.0;
};

struct ChartingConfig {
  double pain_missing_prob = 0.25;
  double vitals_missing_prob = 0.05;
  double pain_text_prob = 0.3;
};

/// Population from which patients are drawn (uniform within each range).
struct CohortConfig {
  Range baseline_pain{4.0, 9.0};
  Range pain_drift_per_hour{-0.04, 0.0};
  Range baseline_hr{65.0, 85.0};
  Range hr_pain_coupling{1.5, 2.5};
  Range baseline_rr{13.0, 18.0};
  Range half_life_hours{3.0, 4.0};
  Range analgesic_sensitivity{0.2, 0.4};
  Range resp_depression_coeff{0.08, 0.16};
  NoiseSd noise_sd;
  double coanalgesic_regimen_prob = 0.5;
  int max_regimens = 2;
  ClinicianConfig clinician;
  ChartingConfig charting;

  void validate() const;
};

PatientParams sample_patient(const CohortConfig& config, Rng& rng);

/// Maps the observed (charted, sample-and-hold) 19-dim state to a dose in mg.
using DosePolicy = std::function<double(const StateVector& observed, Rng& rng)>;

/// "clinician" (default), "withhold" or "random" (uniform over the 14 dose bins).
/// Throws Configuration for anything else.
DosePolicy make_behavior_policy(std::string_view descriptor, const ClinicianConfig& clinician = {});

struct SimulatedHour {
  SimState truth;
  HourlyRecord charted;   // what reached the chart; missing values stay missing
  HourlyRecord observed;  // charted values carried forward, what the policy sees
  double dose_mg = 0.0;
};

struct SyntheticEpisode {
  std::string admission_id;
  PatientParams params;
  Minutes admit_time = 0;
  std::uint64_t event_seed = 0;
  double pain_text_prob = 0.3;
  std::vector<SimulatedHour> hours;

  /// Charted values as timestamped events (minute offsets drawn from event_seed), sorted by time.
  std::vector<RawEvent> to_events(const DrugList& drugs) const;
};

/// Independent random streams for one simulated patient.
struct EpisodeStreams {
  Rng dynamics;
  Rng charting;
  Rng policy;
};
EpisodeStreams episode_streams(std::uint64_t master_seed, std::size_t index);

/// Rolls `horizon_hours` charted hours under `policy`. Hour 0 charts every channel and the
/// last hour always charts heart rate, so the charted span equals the horizon.
SyntheticEpisode rollout_episode(const PatientParams& params, const DosePolicy& policy, int horizon_hours,
                                 const ChartingConfig& charting, EpisodeStreams& streams);

/// Patient i uses streams derived from (master_seed, i); output is identical for any `jobs`.
std::vector<SyntheticEpisode> generate_cohort(std::size_t n_patients, int horizon_hours,
                                              std::string_view behavior_policy, std::uint64_t master_seed,
                                              const CohortConfig& config = {}, unsigned jobs = 1);

std::string synthetic_admission_id(std::size_t index);

}  // namespace morphdose
