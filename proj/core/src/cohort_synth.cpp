#include "morphdose/cohort_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "morphdose/error.hpp"
#include "morphdose/parallel.hpp"

namespace morphdose {

namespace {

constexpr std::array<std::string_view, 11> kPainLabels{
    "No Pain", "Mild", "Mild", "Mild to Mod", "Moderate", "Moderate",
    "Mod to Severe", "Severe", "Severe", "Very Severe", "Worst Pain"};

// Admission times start at 2150-01-01T00:00 (date-shifted, as in de-identified ICU data).
Minutes first_admit() {
  static const Minutes t = *parse_timestamp("2150-01-01T00:00");
  return t;
}

constexpr std::array<double, 6> kRegimenDoses{25, 50, 100, 200, 500, 1000};
constexpr std::array<int, 4> kRegimenIntervals{4, 6, 8, 12};

double uniform(const Range& r, Rng& rng) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

void check_range(const Range& r, const char* name) {
  require(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi, ErrorKind::Configuration,
          std::string(name) + ": need lo <= hi");
}

double round_to_half(double x) { return std::round(x * 2.0) / 2.0; }

}  // namespace

void PatientParams::validate() const {
  require(baseline_pain >= 0.0 && baseline_pain <= 10.0, ErrorKind::InvalidParameter, "baseline_pain outside [0,10]");
  require(baseline_hr > 0.0 && baseline_rr > 0.0, ErrorKind::InvalidParameter, "baselines must be positive");
  require(pk_half_life_hours > 0.0, ErrorKind::InvalidParameter, "half-life must be positive");
  require(analgesic_sensitivity > 0.0, ErrorKind::InvalidParameter, "analgesic_sensitivity must be positive");
  require(resp_depression_coeff >= 0.0, ErrorKind::InvalidParameter, "resp_depression_coeff must be >= 0");
  require(noise_sd.pain >= 0.0 && noise_sd.hr >= 0.0 && noise_sd.rr >= 0.0, ErrorKind::InvalidParameter,
          "noise standard deviations must be >= 0");
  for (const auto& r : coanalgesics) {
    require(r.drug < kNumCoanalgesics && r.dose_mg >= 0.0 && r.interval_hours > 0 && r.offset_hours >= 0,
            ErrorKind::InvalidParameter, "bad co-analgesic regimen");
  }
}

double decay_step(double effect_site_mg, double half_life_hours) {
  require(half_life_hours > 0.0 && std::isfinite(half_life_hours), ErrorKind::InvalidParameter,
          "half-life must be positive");
  require(effect_site_mg >= 0.0, ErrorKind::InvalidParameter, "effect-site amount must be >= 0");
  return effect_site_mg * std::exp2(-1.0 / half_life_hours);
}

namespace {

// Shared observation equations for hour `hour` at effect-site amount `e`.
SimState observe(const PatientParams& p, double e, int hour, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  const double n_pain = z(rng), n_rr = z(rng), n_hr = z(rng);
  SimState s;
  s.effect_site_mg = e;
  s.hour = hour;
  s.pain = std::clamp(p.baseline_pain + p.pain_drift_per_hour * hour - p.analgesic_sensitivity * e +
                          p.noise_sd.pain * n_pain,
                      0.0, 10.0);
  s.rr = std::max(kRrFloor, p.baseline_rr - p.resp_depression_coeff * e + p.noise_sd.rr * n_rr);
  s.hr = std::max(kHrFloor, p.baseline_hr + p.hr_pain_coupling * s.pain + p.noise_sd.hr * n_hr);
  return s;
}

}  // namespace

SimState initial_state(const PatientParams& params, Rng& rng) {
  params.validate();
  return observe(params, 0.0, 0, rng);
}

SimState sim_step(const SimState& state, const PatientParams& params, double dose_mg, Rng& rng) {
  require(std::isfinite(dose_mg) && dose_mg >= 0.0, ErrorKind::InvalidParameter,
          "dose must be a non-negative number of mg");
  const double e = decay_step(state.effect_site_mg, params.pk_half_life_hours) + dose_mg;
  return observe(params, e, state.hour + 1, rng);
}

std::array<double, kNumCoanalgesics> coanalgesics_at(const PatientParams& params, int hour) {
  std::array<double, kNumCoanalgesics> out{};
  for (const auto& r : params.coanalgesics) {
    if (hour >= r.offset_hours && (hour - r.offset_hours) % r.interval_hours == 0) out[r.drug] += r.dose_mg;
  }
  return out;
}

void CohortConfig::validate() const {
  check_range(baseline_pain, "baseline_pain");
  check_range(pain_drift_per_hour, "pain_drift_per_hour");
  check_range(baseline_hr, "baseline_hr");
  check_range(hr_pain_coupling, "hr_pain_coupling");
  check_range(baseline_rr, "baseline_rr");
  check_range(half_life_hours, "half_life_hours");
  check_range(analgesic_sensitivity, "analgesic_sensitivity");
  check_range(resp_depression_coeff, "resp_depression_coeff");
  require(baseline_pain.lo >= 0.0 && baseline_pain.hi <= 10.0, ErrorKind::Configuration,
          "baseline_pain must lie in [0,10]");
  require(half_life_hours.lo > 0.0 && analgesic_sensitivity.lo > 0.0 && resp_depression_coeff.lo >= 0.0 &&
              baseline_hr.lo > 0.0 && baseline_rr.lo > 0.0,
          ErrorKind::Configuration, "physiological parameters must be positive");
  const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  require(prob(coanalgesic_regimen_prob) && prob(clinician.withhold_prob) && prob(clinician.explore_prob) &&
              prob(charting.pain_missing_prob) && prob(charting.vitals_missing_prob) &&
              prob(charting.pain_text_prob),
          ErrorKind::Configuration, "probabilities must lie in [0,1]");
  require(max_regimens >= 0, ErrorKind::Configuration, "max_regimens must be >= 0");
}

PatientParams sample_patient(const CohortConfig& config, Rng& rng) {
  PatientParams p;
  p.baseline_pain = uniform(config.baseline_pain, rng);
  p.pain_drift_per_hour = uniform(config.pain_drift_per_hour, rng);
  p.baseline_hr = uniform(config.baseline_hr, rng);
  p.hr_pain_coupling = uniform(config.hr_pain_coupling, rng);
  p.baseline_rr = uniform(config.baseline_rr, rng);
  p.pk_half_life_hours = uniform(config.half_life_hours, rng);
  p.analgesic_sensitivity = uniform(config.analgesic_sensitivity, rng);
  p.resp_depression_coeff = uniform(config.resp_depression_coeff, rng);
  p.noise_sd = config.noise_sd;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < config.max_regimens; ++k) {
    const bool on = unit(rng) < config.coanalgesic_regimen_prob;
    CoanalgesicRegimen r;
    r.drug = std::uniform_int_distribution<std::size_t>(0, kNumCoanalgesics - 1)(rng);
    r.dose_mg = kRegimenDoses[std::uniform_int_distribution<std::size_t>(0, kRegimenDoses.size() - 1)(rng)];
    r.interval_hours = kRegimenIntervals[std::uniform_int_distribution<std::size_t>(0, kRegimenIntervals.size() - 1)(rng)];
    r.offset_hours = std::uniform_int_distribution<int>(0, r.interval_hours - 1)(rng);
    if (on) p.coanalgesics.push_back(r);
  }
  return p;
}

DosePolicy make_behavior_policy(std::string_view descriptor, const ClinicianConfig& c) {
  if (descriptor == "clinician") {
    return [c](const StateVector& obs, Rng& rng) {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      if (unit(rng) < c.explore_prob) {
        const int a = std::uniform_int_distribution<int>(1, kNumActions - 1)(rng);
        return representative_dose(ActionIndex(a));
      }
      const double pain = obs[kPain];
      if (pain < c.pain_threshold || obs[kRespRate] < c.rr_hold_below) return 0.0;
      if (unit(rng) < c.withhold_prob) return 0.0;
      return std::clamp(round_to_half(c.mg_per_pain_point * (pain - c.pain_threshold + 1.0)), 0.5, c.max_dose_mg);
    };
  }
  if (descriptor == "withhold") {
    return [](const StateVector&, Rng&) { return 0.0; };
  }
  if (descriptor == "random") {
    return [](const StateVector&, Rng& rng) {
      return representative_dose(ActionIndex(std::uniform_int_distribution<int>(0, kNumActions - 1)(rng)));
    };
  }
  fail(ErrorKind::Configuration, "unknown behavior policy \"" + std::string(descriptor) +
                                     "\" (expected clinician, withhold or random)");
}

EpisodeStreams episode_streams(std::uint64_t master_seed, std::size_t index) {
  return EpisodeStreams{Rng(derive_seed(master_seed, 4 * index + 1)), Rng(derive_seed(master_seed, 4 * index + 2)),
                        Rng(derive_seed(master_seed, 4 * index + 3))};
}

SyntheticEpisode rollout_episode(const PatientParams& params, const DosePolicy& policy, int horizon_hours,
                                 const ChartingConfig& charting, EpisodeStreams& streams) {
  require(horizon_hours >= 0, ErrorKind::InvalidParameter, "horizon must be >= 0");
  params.validate();
  SyntheticEpisode ep;
  ep.params = params;
  if (horizon_hours == 0) return ep;
  ep.hours.reserve(static_cast<std::size_t>(horizon_hours));

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SimState state = initial_state(params, streams.dynamics);
  HourlyRecord held;
  for (int t = 0; t < horizon_hours; ++t) {
    // Fixed number of draws per hour keeps the charting stream aligned across policies.
    const double u_pain = unit(streams.charting);
    const double u_hr = unit(streams.charting);
    const double u_rr = unit(streams.charting);
    const bool first = t == 0;
    const bool last = t == horizon_hours - 1;

    SimulatedHour h;
    h.truth = state;
    h.charted.hour_index = t;
    if (first || u_pain >= charting.pain_missing_prob) h.charted.pain = std::clamp(std::round(state.pain), 0.0, 10.0);
    if (first || last || u_hr >= charting.vitals_missing_prob) h.charted.hr = std::round(state.hr);
    if (first || u_rr >= charting.vitals_missing_prob) h.charted.rr = std::round(state.rr);
    h.charted.coanalgesics_mg = coanalgesics_at(params, t);

    if (h.charted.pain) held.pain = h.charted.pain;
    if (h.charted.hr) held.hr = h.charted.hr;
    if (h.charted.rr) held.rr = h.charted.rr;
    h.observed = h.charted;
    h.observed.pain = held.pain;
    h.observed.hr = held.hr;
    h.observed.rr = held.rr;

    const double dose = policy(build_state(h.observed), streams.policy);
    require(std::isfinite(dose) && dose >= 0.0, ErrorKind::InvalidParameter, "policy returned an invalid dose");
    h.dose_mg = dose;
    h.charted.morphine_mg = dose;
    h.observed.morphine_mg = dose;
    ep.hours.push_back(h);
    if (!last) state = sim_step(state, params, dose, streams.dynamics);
  }
  return ep;
}

std::vector<RawEvent> SyntheticEpisode::to_events(const DrugList& drugs) const {
  std::vector<RawEvent> events;
  Rng rng(event_seed);
  std::uniform_int_distribution<int> minute(0, 59);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto fmt_int = [](double v) { return std::to_string(static_cast<long long>(v)); };
  for (const auto& h : hours) {
    const Minutes base = admit_time + static_cast<Minutes>(h.charted.hour_index) * 60;
    const int m_pain = minute(rng), m_hr = minute(rng), m_rr = minute(rng), m_dose = minute(rng), m_co = minute(rng);
    const bool as_text = unit(rng) < pain_text_prob;
    if (h.charted.pain) {
      const int score = static_cast<int>(*h.charted.pain);
      if (as_text) {
        events.push_back({admission_id, base + m_pain, Channel::PainText, "",
                          std::to_string(score) + "-" + std::string(kPainLabels[static_cast<std::size_t>(score)])});
      } else {
        events.push_back({admission_id, base + m_pain, Channel::PainNumeric, "", std::to_string(score)});
      }
    }
    if (h.charted.hr) events.push_back({admission_id, base + m_hr, Channel::HeartRate, "", fmt_int(*h.charted.hr)});
    if (h.charted.rr) {
      events.push_back({admission_id, base + m_rr, Channel::RespirationRate, "", fmt_int(*h.charted.rr)});
    }
    if (h.charted.morphine_mg > 0.0) {
      events.push_back({admission_id, base + m_dose, Channel::MorphineBolusMg, "", format_real(h.charted.morphine_mg)});
    }
    for (std::size_t d = 0; d < kNumCoanalgesics; ++d) {
      if (h.charted.coanalgesics_mg[d] > 0.0) {
        events.push_back({admission_id, base + m_co, Channel::CoanalgesicMg, drugs.names()[d],
                          format_real(h.charted.coanalgesics_mg[d])});
      }
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
  return events;
}

std::string synthetic_admission_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "SYN%06zu", index);
  return buf;
}

std::vector<SyntheticEpisode> generate_cohort(std::size_t n_patients, int horizon_hours,
                                              std::string_view behavior_policy, std::uint64_t master_seed,
                                              const CohortConfig& config, unsigned jobs) {
  require(n_patients > 0, ErrorKind::InvalidParameter, "need at least one patient");
  require(horizon_hours >= 0, ErrorKind::InvalidParameter, "horizon must be >= 0");
  config.validate();
  const DosePolicy policy = make_behavior_policy(behavior_policy, config.clinician);

  std::vector<SyntheticEpisode> cohort(n_patients);
  parallel_for(n_patients, jobs, [&](std::size_t i) {
    Rng params_rng(derive_seed(master_seed, 4 * i));
    const PatientParams params = sample_patient(config, params_rng);
    const int admit_hour = std::uniform_int_distribution<int>(0, 23)(params_rng);
    EpisodeStreams streams = episode_streams(master_seed, i);
    auto ep = rollout_episode(params, policy, horizon_hours, config.charting, streams);
    ep.admission_id = synthetic_admission_id(i);
    ep.admit_time = first_admit() + static_cast<Minutes>(i) * 7 * 1440 + admit_hour * 60;
    ep.event_seed = derive_seed(~master_seed, i);
    ep.pain_text_prob = config.charting.pain_text_prob;
    cohort[i] = std::move(ep);
  });
  return cohort;
}

}  // namespace morphdose
