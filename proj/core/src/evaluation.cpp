#include "morphdose/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "morphdose/error.hpp"
#include "morphdose/parallel.hpp"
#include "morphdose/text_io.hpp"

namespace morphdose {

int argmax_lowest(const Eigen::VectorXd& q) {
  require(q.size() > 0, ErrorKind::Dimension, "argmax of an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < q.size(); ++a) {
    if (q[a] > q[best]) best = a;
  }
  return static_cast<int>(best);
}

ActionIndex greedy_action(const QModel& model, const StateVector& raw_state) {
  return ActionIndex(argmax_lowest(model.q_values(raw_state)));
}

std::optional<double> AgentSummary::morphine_rate(std::int64_t timesteps) const {
  if (timesteps <= 0) return std::nullopt;
  return static_cast<double>(dosing_hours) / static_cast<double>(timesteps);
}

std::optional<double> AgentSummary::next_hour_redose_rate() const {
  std::int64_t intervals = 0;
  for (const auto& [gap, n] : dose_intervals) intervals += n;
  if (intervals == 0) return std::nullopt;
  return static_cast<double>(next_hour_redoses) / static_cast<double>(intervals);
}

std::optional<double> PolicyReport::model_doses_when_physician_doses() const {
  std::int64_t both = 0;
  for (int p = 1; p < kNumActions; ++p) {
    for (int m = 1; m < kNumActions; ++m) both += joint[p][m];
  }
  if (physician.dosing_hours == 0) return std::nullopt;
  return static_cast<double>(both) / static_cast<double>(physician.dosing_hours);
}

std::optional<double> PolicyReport::exact_agreement() const {
  if (per_timestep.empty()) return std::nullopt;
  std::int64_t same = 0;
  for (int a = 0; a < kNumActions; ++a) same += joint[a][a];
  return static_cast<double>(same) / static_cast<double>(timesteps());
}

namespace {

void add_intervals(AgentSummary& s, const std::vector<int>& dose_hours) {
  for (std::size_t i = 1; i < dose_hours.size(); ++i) {
    const int gap = dose_hours[i] - dose_hours[i - 1];
    ++s.dose_intervals[gap];
    if (gap == 1) ++s.next_hour_redoses;
  }
}

}  // namespace

PolicyReport build_report(std::vector<TimestepActions> per_timestep) {
  std::sort(per_timestep.begin(), per_timestep.end(), [](const TimestepActions& a, const TimestepActions& b) {
    return a.admission_id != b.admission_id ? a.admission_id < b.admission_id : a.hour < b.hour;
  });
  PolicyReport r;
  r.per_timestep = std::move(per_timestep);
  std::vector<int> phys_hours, model_hours;
  for (std::size_t i = 0; i < r.per_timestep.size(); ++i) {
    const auto& t = r.per_timestep[i];
    if (i > 0 && r.per_timestep[i - 1].admission_id == t.admission_id) {
      require(t.hour > r.per_timestep[i - 1].hour, ErrorKind::InvalidParameter,
              "duplicate hour " + std::to_string(t.hour) + " for " + t.admission_id);
    }
    if (i == 0 || r.per_timestep[i - 1].admission_id != t.admission_id) {
      add_intervals(r.physician, phys_hours);
      add_intervals(r.model, model_hours);
      phys_hours.clear();
      model_hours.clear();
    }
    const int p = t.physician.value(), m = t.model.value();
    ++r.physician.actions[p];
    ++r.model.actions[m];
    ++r.joint[p][m];
    if (p > 0) {
      ++r.physician.dosing_hours;
      phys_hours.push_back(t.hour);
    } else {
      ++r.model_given_physician_withhold[m];
    }
    if (m > 0) {
      ++r.model.dosing_hours;
      model_hours.push_back(t.hour);
    }
  }
  add_intervals(r.physician, phys_hours);
  add_intervals(r.model, model_hours);
  return r;
}

PolicyReport compare_policies(const QModel& model, std::span<const EpisodeLog> episodes, unsigned jobs) {
  require(!episodes.empty(), ErrorKind::InsufficientData, "empty test set");
  std::vector<std::vector<TimestepActions>> slots(episodes.size());
  parallel_for(episodes.size(), jobs, [&](std::size_t i) {
    const auto& ep = episodes[i];
    auto& out = slots[i];
    out.reserve(ep.records.size());
    for (const auto& rec : ep.records) {
      out.push_back({ep.admission_id, rec.hour_index, discretize_dose(rec.morphine_mg),
                     greedy_action(model, build_state(rec))});
    }
  });
  std::vector<TimestepActions> all;
  for (auto& s : slots) all.insert(all.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  return build_report(std::move(all));
}

namespace {

std::string table_header(std::string_view table) {
  return "# " + std::string(kReportSchema) + " " + std::string(table) + "\n";
}

std::vector<std::pair<std::string, double>> summary_rows(const PolicyReport& r) {
  std::vector<std::pair<std::string, double>> rows;
  const auto add = [&rows](const char* name, std::optional<double> v) {
    if (v) rows.emplace_back(name, *v);
  };
  add("physician_morphine_rate", r.physician.morphine_rate(r.timesteps()));
  add("model_morphine_rate", r.model.morphine_rate(r.timesteps()));
  add("model_doses_when_physician_doses", r.model_doses_when_physician_doses());
  add("exact_agreement", r.exact_agreement());
  add("physician_next_hour_redose_rate", r.physician.next_hour_redose_rate());
  add("model_next_hour_redose_rate", r.model.next_hour_redose_rate());
  return rows;
}

struct Tables {
  std::string per_timestep, actions, joint, withhold, intervals, summary;
};

Tables render_csv(const PolicyReport& r) {
  Tables t;
  t.per_timestep = table_header("per_timestep") + "admission_id,hour,physician_action,model_action\n";
  for (const auto& ts : r.per_timestep) {
    t.per_timestep += csv_field(ts.admission_id) + ',' + std::to_string(ts.hour) + ',' +
                      std::to_string(ts.physician.value()) + ',' + std::to_string(ts.model.value()) + '\n';
  }
  t.actions = table_header("actions") + "action,label,physician_count,model_count\n";
  for (int a = 0; a < kNumActions; ++a) {
    if (r.physician.actions[a] == 0 && r.model.actions[a] == 0) continue;
    t.actions += std::to_string(a) + ',' + csv_field(action_label(ActionIndex(a))) + ',' +
                 std::to_string(r.physician.actions[a]) + ',' + std::to_string(r.model.actions[a]) + '\n';
  }
  t.joint = table_header("joint_histogram") + "physician_action,model_action,count\n";
  for (int p = 0; p < kNumActions; ++p) {
    for (int m = 0; m < kNumActions; ++m) {
      if (r.joint[p][m] == 0) continue;
      t.joint += std::to_string(p) + ',' + std::to_string(m) + ',' + std::to_string(r.joint[p][m]) + '\n';
    }
  }
  t.withhold = table_header("withhold_histogram") + "model_action,count\n";
  for (int m = 0; m < kNumActions; ++m) {
    if (r.model_given_physician_withhold[m] == 0) continue;
    t.withhold += std::to_string(m) + ',' + std::to_string(r.model_given_physician_withhold[m]) + '\n';
  }
  t.intervals = table_header("dose_intervals") + "agent,interval_hours,count\n";
  for (const auto& [agent, s] : {std::pair{"physician", &r.physician}, std::pair{"model", &r.model}}) {
    for (const auto& [gap, n] : s->dose_intervals) {
      t.intervals += std::string(agent) + ',' + std::to_string(gap) + ',' + std::to_string(n) + '\n';
    }
  }
  t.summary = table_header("summary") + "metric,value\n";
  for (const auto& [k, v] : summary_rows(r)) t.summary += k + ',' + format_real(v) + '\n';
  return t;
}

std::string render_jsonl(const PolicyReport& r) {
  using nlohmann::json;
  std::string out = json{{"schema", kReportSchema}}.dump() + "\n";
  const auto emit = [&out](const json& j) { out += j.dump() + "\n"; };
  for (const auto& ts : r.per_timestep) {
    emit({{"table", "per_timestep"},
          {"admission_id", ts.admission_id},
          {"hour", ts.hour},
          {"physician_action", ts.physician.value()},
          {"model_action", ts.model.value()}});
  }
  for (int a = 0; a < kNumActions; ++a) {
    if (r.physician.actions[a] == 0 && r.model.actions[a] == 0) continue;
    emit({{"table", "actions"},
          {"action", a},
          {"label", action_label(ActionIndex(a))},
          {"physician_count", r.physician.actions[a]},
          {"model_count", r.model.actions[a]}});
  }
  for (int p = 0; p < kNumActions; ++p) {
    for (int m = 0; m < kNumActions; ++m) {
      if (r.joint[p][m] == 0) continue;
      emit({{"table", "joint_histogram"}, {"physician_action", p}, {"model_action", m}, {"count", r.joint[p][m]}});
    }
  }
  for (int m = 0; m < kNumActions; ++m) {
    if (r.model_given_physician_withhold[m] == 0) continue;
    emit({{"table", "withhold_histogram"}, {"model_action", m}, {"count", r.model_given_physician_withhold[m]}});
  }
  for (const auto& [agent, s] : {std::pair{"physician", &r.physician}, std::pair{"model", &r.model}}) {
    for (const auto& [gap, n] : s->dose_intervals) {
      emit({{"table", "dose_intervals"}, {"agent", agent}, {"interval_hours", gap}, {"count", n}});
    }
  }
  for (const auto& [k, v] : summary_rows(r)) emit({{"table", "summary"}, {"metric", k}, {"value", v}});
  return out;
}

constexpr std::array<std::pair<const char*, std::string Tables::*>, 6> kCsvFiles{{
    {"per_timestep.csv", &Tables::per_timestep},
    {"actions.csv", &Tables::actions},
    {"joint_histogram.csv", &Tables::joint},
    {"withhold_histogram.csv", &Tables::withhold},
    {"dose_intervals.csv", &Tables::intervals},
    {"summary.csv", &Tables::summary},
}};

}  // namespace

void export_report(const PolicyReport& report, ReportFormat format, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  if (format == ReportFormat::JsonLines) {
    write_file(dir / "report.jsonl", render_jsonl(report));
    return;
  }
  const Tables t = render_csv(report);
  for (const auto& [name, member] : kCsvFiles) write_file(dir / name, t.*member);
}

namespace {

ActionIndex action_from(std::int64_t v, const std::string& where) {
  require(v >= 0 && v < kNumActions, ErrorKind::Format, where + ": action out of range");
  return ActionIndex(static_cast<int>(v));
}

std::vector<TimestepActions> parse_per_timestep_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  require(std::getline(in, line) && line + "\n" == table_header("per_timestep"), ErrorKind::Format,
          "per_timestep.csv: bad schema line");
  require(std::getline(in, line) && line == "admission_id,hour,physician_action,model_action", ErrorKind::Format,
          "per_timestep.csv: bad column header");
  std::vector<TimestepActions> rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    require(f.size() == 4, ErrorKind::Format, "per_timestep.csv: wrong column count");
    const auto hour = parse_int(f[1]), p = parse_int(f[2]), m = parse_int(f[3]);
    require(hour && p && m, ErrorKind::Format, "per_timestep.csv: bad integer");
    rows.push_back({f[0], static_cast<int>(*hour), action_from(*p, "per_timestep.csv"),
                    action_from(*m, "per_timestep.csv")});
  }
  return rows;
}

}  // namespace

PolicyReport import_report(ReportFormat format, const std::filesystem::path& dir) {
  PolicyReport report;
  if (format == ReportFormat::Csv) {
    report = build_report(parse_per_timestep_csv(read_file(dir / "per_timestep.csv")));
    const Tables expected = render_csv(report);
    for (const auto& [name, member] : kCsvFiles) {
      require(read_file(dir / name) == expected.*member, ErrorKind::Format,
              std::string(name) + " is inconsistent with per_timestep.csv");
    }
    return report;
  }
  using nlohmann::json;
  const std::string text = read_file(dir / "report.jsonl");
  std::istringstream in{text};
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format, "report.jsonl is empty");
  try {
    require(json::parse(line).value("schema", "") == kReportSchema, ErrorKind::Format, "report.jsonl: bad schema");
    std::vector<TimestepActions> rows;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const auto j = json::parse(line);
      if (j.at("table") != "per_timestep") continue;
      rows.push_back({j.at("admission_id").get<std::string>(), j.at("hour").get<int>(),
                      action_from(j.at("physician_action").get<std::int64_t>(), "report.jsonl"),
                      action_from(j.at("model_action").get<std::int64_t>(), "report.jsonl")});
    }
    report = build_report(std::move(rows));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("report.jsonl: ") + e.what());
  }
  require(render_jsonl(report) == text, ErrorKind::Format, "report.jsonl aggregates are inconsistent");
  return report;
}

ActionPolicy greedy_policy(QModel model) {
  return [m = std::move(model)](const StateVector& s, Rng&) { return greedy_action(m, s); };
}

ActionPolicy withhold_policy() {
  return [](const StateVector&, Rng&) { return ActionIndex(0); };
}

ActionPolicy uniform_random_policy() {
  return [](const StateVector&, Rng& rng) {
    return ActionIndex(std::uniform_int_distribution<int>(0, kNumActions - 1)(rng));
  };
}

DosePolicy as_dose_policy(ActionPolicy policy) {
  return [p = std::move(policy)](const StateVector& s, Rng& rng) { return representative_dose(p(s, rng)); };
}

namespace {

struct EpisodeOutcome {
  double discounted = 0.0, mean_reward = 0.0, pain = 0.0, hr = 0.0, rr = 0.0, doses = 0.0;
};

MeanSd mean_sd(const std::vector<EpisodeOutcome>& xs, double EpisodeOutcome::*field) {
  MeanSd m;
  if (xs.empty()) return m;
  double sum = 0.0;
  for (const auto& x : xs) sum += x.*field;
  m.mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (const auto& x : xs) sq += (x.*field - m.mean) * (x.*field - m.mean);
  m.sd = xs.size() > 1 ? std::sqrt(sq / static_cast<double>(xs.size() - 1)) : 0.0;
  return m;
}

}  // namespace

SimulationStats simulate_policy(const ActionPolicy& policy, const CohortConfig& population, std::size_t n_episodes,
                                int horizon_hours, std::uint64_t seed, double gamma, unsigned jobs) {
  require(horizon_hours >= 2, ErrorKind::InvalidParameter, "simulation horizon must be at least 2 hours");
  require(gamma >= 0.0 && gamma <= 1.0, ErrorKind::InvalidParameter, "gamma must lie in [0,1]");
  population.validate();
  const DosePolicy dose_policy = as_dose_policy(policy);

  std::vector<EpisodeOutcome> outcomes(n_episodes);
  parallel_for(n_episodes, jobs, [&](std::size_t i) {
    Rng params_rng(derive_seed(seed, 4 * i));
    const PatientParams params = sample_patient(population, params_rng);
    EpisodeStreams streams = episode_streams(seed, i);
    const auto ep = rollout_episode(params, dose_policy, horizon_hours, population.charting, streams);
    EpisodeOutcome o;
    double discount = 1.0;
    const auto steps = ep.hours.size() - 1;
    for (std::size_t t = 0; t < steps; ++t) {
      const auto& next = ep.hours[t + 1].truth;
      const auto c = reward_components(next.hr, next.rr, next.pain);
      o.discounted += discount * c.total;
      discount *= gamma;
      o.mean_reward += c.total;
      o.pain += c.pain;
      o.hr += c.hr_window;
      o.rr += c.rr_window;
    }
    for (const auto& h : ep.hours) o.doses += h.dose_mg > 0.0 ? 1.0 : 0.0;
    const double n = static_cast<double>(steps);
    o.mean_reward /= n;
    o.pain /= n;
    o.hr /= n;
    o.rr /= n;
    o.doses /= static_cast<double>(ep.hours.size());
    outcomes[i] = o;
  });

  SimulationStats s;
  s.episodes = n_episodes;
  s.discounted_return = mean_sd(outcomes, &EpisodeOutcome::discounted);
  s.mean_reward = mean_sd(outcomes, &EpisodeOutcome::mean_reward);
  s.pain_component = mean_sd(outcomes, &EpisodeOutcome::pain);
  s.hr_component = mean_sd(outcomes, &EpisodeOutcome::hr);
  s.rr_component = mean_sd(outcomes, &EpisodeOutcome::rr);
  s.doses_per_hour = mean_sd(outcomes, &EpisodeOutcome::doses);
  return s;
}

}  // namespace morphdose
