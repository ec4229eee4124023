#include "morphdose/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "morphdose/checkpoint.hpp"
#include "morphdose/cohort_synth.hpp"
#include "morphdose/error.hpp"
#include "morphdose/evaluation.hpp"
#include "morphdose/ingestion.hpp"
#include "morphdose/mdp.hpp"
#include "morphdose/seeding.hpp"
#include "morphdose/text_io.hpp"
#include "morphdose/trainer.hpp"

#ifndef MORPHDOSE_VERSION
#define MORPHDOSE_VERSION "0.0.0"
#endif

namespace morphdose::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct MissingArtifact : std::runtime_error {
  explicit MissingArtifact(const fs::path& p) : std::runtime_error("missing artifact: " + p.string()) {}
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const fs::path& need(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifact(p);
  return p;
}

std::string timestamp_now() {
  std::time_t t = 0;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    const auto v = parse_int(epoch);
    if (!v) throw UsageError("SOURCE_DATE_EPOCH is not an integer");
    t = static_cast<std::time_t>(*v);
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Common {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out;
  bool json_output = false;
};

struct Run {
  std::string command;
  std::string config_path;
  const Common* common = nullptr;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  json parameters = json::object();

  void write_manifest(const fs::path& dir) const {
    json m{{"schema", kManifestSchema},
           {"command", command},
           {"config_path", config_path.empty() ? json(nullptr) : json(config_path)},
           {"seed", common->seed},
           {"jobs", common->jobs},
           {"inputs", inputs},
           {"outputs", outputs},
           {"parameters", parameters},
           {"tool_version", MORPHDOSE_VERSION},
           {"timestamp", timestamp_now()}};
    write_file(dir / "manifest.json", m.dump(2) + "\n");
  }
};

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

void add_common(CLI::App* sub, Common& c, bool with_seed, bool seed_required) {
  if (with_seed) {
    auto* opt = sub->add_option("--seed", c.seed, "Master seed; all randomness derives from it")->envname("MORPHDOSE_SEED");
    if (seed_required) opt->required();
  }
  sub->add_option("--jobs", c.jobs, "Worker threads")->envname("MORPHDOSE_JOBS")->check(CLI::Range(1u, 1024u));
  sub->add_flag("--json", c.json_output, "Print a machine-readable summary");
}

json stats_json(const IngestStats& s) {
  return {{"rows_read", s.rows_read},
          {"malformed_rows", s.malformed_rows},
          {"bad_timestamps", s.bad_timestamps},
          {"unknown_channels", s.unknown_channels},
          {"unknown_drugs", s.unknown_drugs},
          {"unparseable_pain", s.unparseable_pain},
          {"bad_values", s.bad_values},
          {"empty_admissions", s.empty_admissions},
          {"dropped", s.dropped()}};
}

json mean_sd_json(const MeanSd& m) { return {{"mean", m.mean}, {"sd", m.sd}}; }

json simulation_json(const SimulationStats& s) {
  return {{"episodes", s.episodes},
          {"discounted_return", mean_sd_json(s.discounted_return)},
          {"mean_reward", mean_sd_json(s.mean_reward)},
          {"pain_component", mean_sd_json(s.pain_component)},
          {"hr_component", mean_sd_json(s.hr_component)},
          {"rr_component", mean_sd_json(s.rr_component)},
          {"doses_per_hour", mean_sd_json(s.doses_per_hour)}};
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::size_t patients = 0;
  int hours = 0;
  std::string policy = "clinician";
};

int cmd_synth(const SynthArgs& a, Run& run, std::ostream& out) {
  const fs::path dir = run.common->out;
  const CohortConfig population;
  const auto cohort = generate_cohort(a.patients, a.hours, a.policy, run.common->seed, population, run.common->jobs);
  const DrugList drugs = DrugList::standard();
  make_dir(dir / "events");
  std::size_t events = 0;
  for (const auto& ep : cohort) {
    const auto ev = ep.to_events(drugs);
    events += ev.size();
    const std::string name = "events/" + ep.admission_id + ".csv";
    write_file(dir / name, write_events_csv(ev));
    run.outputs.push_back(name);
  }
  run.parameters = {{"patients", a.patients}, {"hours", a.hours}, {"policy", a.policy}};
  run.write_manifest(dir);
  if (run.common->json_output) {
    out << json{{"patients", cohort.size()}, {"events", events}, {"out", dir.string()}}.dump() << "\n";
  } else {
    out << "wrote " << cohort.size() << " episodes (" << events << " events) to " << (dir / "events").string() << "\n";
  }
  return kOk;
}

// ---- ingest ---------------------------------------------------------------

struct IngestArgs {
  std::string in;
  std::string drugs;
  std::string reward_timing = "next";
};

std::vector<fs::path> event_files(const fs::path& in) {
  need(in);
  if (fs::is_regular_file(in)) return {in};
  const fs::path dir = fs::is_directory(in / "events") ? in / "events" : in;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw MissingArtifact(dir / "*.csv");
  return files;
}

int cmd_ingest(const IngestArgs& a, Run& run, std::ostream& out) {
  const fs::path dir = run.common->out;
  const DrugList drugs = a.drugs.empty() ? DrugList::standard() : DrugList::from_file(need(a.drugs));
  const RewardTiming timing = a.reward_timing == "current" ? RewardTiming::CurrentHour : RewardTiming::NextHour;

  IngestStats read_stats;
  std::vector<RawEvent> events;
  for (const auto& f : event_files(a.in)) {
    auto ev = read_events_csv(read_file(f), &read_stats);
    events.insert(events.end(), std::make_move_iterator(ev.begin()), std::make_move_iterator(ev.end()));
    run.inputs.push_back(f.string());
  }
  IngestResult ingested = ingest_events(events, drugs, ImputeDefaults{}, run.common->jobs);
  ingested.stats += read_stats;
  const auto all = ingested.episodes;
  CohortSplit split = split_cohort(std::move(ingested.episodes), SplitFractions{}, run.common->seed);

  const TransitionSet train = cohort_to_transitions(split.train, timing);
  const TransitionSet val = cohort_to_transitions(split.validation, timing);
  const TransitionSet test = cohort_to_transitions(split.test, timing);
  const Normalizer norm = train.transitions.empty() ? Normalizer::identity(kStateDim) : Normalizer::fit(train.transitions);

  make_dir(dir);
  const auto emit = [&](const std::string& name, const std::string& text) {
    write_file(dir / name, text);
    run.outputs.push_back(name);
  };
  emit("episodes.csv", write_episodes(all, drugs));
  emit("episodes_train.csv", write_episodes(split.train, drugs));
  emit("episodes_val.csv", write_episodes(split.validation, drugs));
  emit("episodes_test.csv", write_episodes(split.test, drugs));
  emit("transitions_train.csv", write_transitions(train.transitions, norm));
  emit("transitions_val.csv", write_transitions(val.transitions, norm));
  emit("transitions_test.csv", write_transitions(test.transitions, norm));

  json summary{{"episodes", all.size()},
               {"split", {{"train", split.train.size()}, {"val", split.validation.size()}, {"test", split.test.size()}}},
               {"transitions",
                {{"train", train.transitions.size()},
                 {"val", val.transitions.size()},
                 {"test", test.transitions.size()}}},
               {"skipped_short_episodes", train.skipped_episodes + val.skipped_episodes + test.skipped_episodes},
               {"pain_clamp_warnings", train.clamp_warnings + val.clamp_warnings + test.clamp_warnings},
               {"events", stats_json(ingested.stats)}};
  emit("ingest_stats.json", summary.dump(2) + "\n");
  run.parameters = {{"reward_timing", a.reward_timing}, {"drugs", a.drugs.empty() ? "standard" : a.drugs}};
  run.write_manifest(dir);
  if (run.common->json_output) {
    out << summary.dump() << "\n";
  } else {
    out << "ingested " << all.size() << " episodes: train " << split.train.size() << ", val "
        << split.validation.size() << ", test " << split.test.size() << "; dropped "
        << ingested.stats.dropped() << " events\n";
  }
  return kOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string in;
  TrainConfig config;
  std::string loss = "huber";
  std::size_t val_episodes = 50;
  int val_horizon = 72;
};

int cmd_train(TrainArgs& a, Run& run, std::ostream& out, std::ostream& err) {
  const fs::path in = a.in;
  const fs::path dir = run.common->out;
  const TransitionFile train_file = read_transitions(read_file(need(in / "transitions_train.csv")));
  const TransitionFile val_file = read_transitions(read_file(need(in / "transitions_val.csv")));
  run.inputs = {(in / "transitions_train.csv").string(), (in / "transitions_val.csv").string()};

  TrainConfig& config = a.config;
  config.seed = run.common->seed;
  config.loss = a.loss == "squared" ? LossKind::Squared : LossKind::Huber;

  const CohortConfig population;
  const unsigned jobs = run.common->jobs;
  const std::uint64_t val_seed = derive_seed(config.seed, 2);
  const PolicyScorer scorer = [&](const QModel& m) {
    return simulate_policy(greedy_policy(m), population, a.val_episodes, a.val_horizon, val_seed, config.gamma, jobs)
        .mean_reward.mean;
  };

  auto metadata = config.to_metadata();
  metadata["val_episodes"] = std::to_string(a.val_episodes);
  metadata["val_horizon"] = std::to_string(a.val_horizon);
  metadata["tool_version"] = MORPHDOSE_VERSION;
  run.parameters = json(metadata);

  make_dir(dir);
  TrainResult result;
  try {
    result = train(train_file.transitions, val_file.transitions, config, a.val_episodes > 0 ? &scorer : nullptr);
  } catch (const TrainingDiverged& e) {
    auto md = metadata;
    md["diverged_at_step"] = std::to_string(e.step());
    save_checkpoint({e.last_good(), md}, dir / "model.ckpt");
    run.outputs = {"model.ckpt"};
    run.write_manifest(dir);
    err << e.what() << "; last good model written to " << (dir / "model.ckpt").string() << "\n";
    return kNumericFailure;
  }

  auto best_md = metadata;
  best_md["selected_step"] = std::to_string(result.best_step);
  save_checkpoint({result.best, best_md}, dir / "model.ckpt");
  auto final_md = metadata;
  final_md["selected_step"] = std::to_string(config.total_steps);
  save_checkpoint({result.final_model, final_md}, dir / "final.ckpt");
  write_file(dir / "train_log.csv", format_train_log(result.log));
  run.outputs = {"model.ckpt", "final.ckpt", "train_log.csv"};
  run.write_manifest(dir);

  json summary{{"steps", config.total_steps}, {"best_step", result.best_step}};
  if (result.best_metrics.ok) summary["best_val_mean_abs_td"] = result.best_metrics.mean_abs_td;
  if (result.best_metrics.simulated_mean_reward) {
    summary["best_val_mean_reward"] = *result.best_metrics.simulated_mean_reward;
  }
  if (run.common->json_output) {
    out << summary.dump() << "\n";
  } else {
    out << "trained " << config.total_steps << " steps; selected step " << result.best_step;
    if (result.best_metrics.simulated_mean_reward) {
      out << " (validation mean reward " << format_real(*result.best_metrics.simulated_mean_reward) << ")";
    }
    out << "\n";
  }
  return kOk;
}

// ---- evaluate -------------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::string episodes;
  std::string format = "csv";
  std::size_t sim_episodes = 200;
  int horizon = 72;
  double gamma = -1.0;
};

int cmd_evaluate(const EvaluateArgs& a, Run& run, std::ostream& out) {
  const fs::path dir = run.common->out;
  const Checkpoint ckpt = load_checkpoint(need(a.model));
  const auto episodes = read_episodes(read_file(need(a.episodes)));
  run.inputs = {a.model, a.episodes};

  double gamma = a.gamma;
  if (gamma < 0.0) {
    const auto it = ckpt.metadata.find("gamma");
    const auto parsed = it == ckpt.metadata.end() ? std::nullopt : parse_real(it->second);
    gamma = parsed.value_or(TrainConfig{}.gamma);
  }

  const unsigned jobs = run.common->jobs;
  const PolicyReport report = compare_policies(ckpt.model, episodes, jobs);
  const ReportFormat format = a.format == "jsonl" ? ReportFormat::JsonLines : ReportFormat::Csv;
  export_report(report, format, dir);

  json sim = json::object();
  if (a.sim_episodes > 0) {
    const CohortConfig population;
    const std::uint64_t seed = run.common->seed;
    const auto trained = simulate_policy(greedy_policy(ckpt.model), population, a.sim_episodes, a.horizon, seed, gamma, jobs);
    const auto withhold = simulate_policy(withhold_policy(), population, a.sim_episodes, a.horizon, seed, gamma, jobs);
    const auto random = simulate_policy(uniform_random_policy(), population, a.sim_episodes, a.horizon, seed, gamma, jobs);
    sim = {{"schema", "morphdose-simulation v1"},
           {"episodes", a.sim_episodes},
           {"horizon", a.horizon},
           {"seed", seed},
           {"gamma", gamma},
           {"policies",
            {{"trained", simulation_json(trained)},
             {"withhold", simulation_json(withhold)},
             {"random", simulation_json(random)}}}};
    write_file(dir / "simulation.json", sim.dump(2) + "\n");
    run.outputs.push_back("simulation.json");
  }
  run.parameters = {{"format", a.format}, {"sim_episodes", a.sim_episodes}, {"horizon", a.horizon}, {"gamma", gamma}};
  run.write_manifest(dir);

  json summary{{"timesteps", report.timesteps()}};
  const auto put = [&summary](const char* k, std::optional<double> v) { summary[k] = v ? json(*v) : json(nullptr); };
  put("physician_morphine_rate", report.physician.morphine_rate(report.timesteps()));
  put("model_morphine_rate", report.model.morphine_rate(report.timesteps()));
  put("model_doses_when_physician_doses", report.model_doses_when_physician_doses());
  put("exact_agreement", report.exact_agreement());
  if (!sim.empty()) {
    summary["simulated_mean_reward"] = {{"trained", sim["policies"]["trained"]["mean_reward"]["mean"]},
                                        {"withhold", sim["policies"]["withhold"]["mean_reward"]["mean"]},
                                        {"random", sim["policies"]["random"]["mean_reward"]["mean"]}};
  }
  if (run.common->json_output) {
    out << summary.dump() << "\n";
  } else {
    out << "timesteps " << report.timesteps() << "\n";
    for (const auto& [k, v] : summary.items()) {
      if (k == "timesteps" || k == "simulated_mean_reward") continue;
      out << k << " " << (v.is_null() ? "n/a" : format_real(v.get<double>())) << "\n";
    }
    if (!sim.empty()) {
      for (const auto& [k, v] : summary["simulated_mean_reward"].items()) {
        out << "simulated mean reward (" << k << ") " << format_real(v.get<double>()) << "\n";
      }
    }
  }
  return kOk;
}

// ---- recommend ------------------------------------------------------------

struct RecommendArgs {
  std::string model;
  std::string state;
};

int cmd_recommend(const RecommendArgs& a, Run& run, std::ostream& out) {
  std::vector<double> values;
  for (const auto& f : split_csv(a.state)) {
    const auto v = parse_real(trim(f));
    if (!v || !std::isfinite(*v)) throw UsageError("state value \"" + f + "\" is not a finite number");
    values.push_back(*v);
  }
  if (values.size() != static_cast<std::size_t>(kStateDim)) {
    throw UsageError("state must have " + std::to_string(kStateDim) + " comma-separated values, got " +
                     std::to_string(values.size()));
  }
  const Checkpoint ckpt = load_checkpoint(need(a.model));
  const StateVector state = Eigen::Map<const Eigen::VectorXd>(values.data(), kStateDim);
  const Eigen::VectorXd q = ckpt.model.q_values(state);
  const ActionIndex best(argmax_lowest(q));

  if (run.common->json_output) {
    json qs = json::array();
    for (int i = 0; i < kNumActions; ++i) {
      qs.push_back({{"action", i}, {"label", action_label(ActionIndex(i))}, {"q", q[i]}});
    }
    out << json{{"action", best.value()}, {"label", action_label(best)}, {"q_values", qs}}.dump() << "\n";
    return kOk;
  }
  out << "recommended action " << best.value() << ": " << action_label(best) << "\n";
  out << "action  label          q\n";
  for (int i = 0; i < kNumActions; ++i) {
    std::string label = action_label(ActionIndex(i));
    label.resize(std::max<std::size_t>(label.size(), 13), ' ');
    std::string idx = std::to_string(i);
    idx.resize(6, ' ');
    out << idx << "  " << label << "  " << format_real(q[i]) << (i == best.value() ? "  *" : "") << "\n";
  }
  return kOk;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Configuration:
    case ErrorKind::InvalidParameter:
    case ErrorKind::Dimension:
      return kUsage;
    case ErrorKind::Format:
      return kMissingArtifact;
    case ErrorKind::Numeric:
      return kNumericFailure;
    default:
      return kFailure;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Offline deep-RL toolkit for hourly morphine dosing", "morphdose"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", MORPHDOSE_VERSION);
  std::string config_path;
  app.set_config("--config", "", "Config file (INI; one [section] per subcommand, key=value)")
      ->envname("MORPHDOSE_CONFIG")
      ->check(CLI::ExistingFile);

  Common common;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic cohort as event CSV files");
  add_common(s, common, true, true);
  s->add_option("--patients", synth.patients, "Number of patients")->required()->check(CLI::PositiveNumber);
  s->add_option("--hours", synth.hours, "Charted hours per episode")->required()->check(CLI::NonNegativeNumber);
  s->add_option("--policy", synth.policy, "Behavior policy")
      ->check(CLI::IsMember({"clinician", "withhold", "random"}))
      ->capture_default_str();
  s->add_option("--out", common.out, "Output directory")->required();

  IngestArgs ingest;
  auto* g = app.add_subcommand("ingest", "Aggregate, impute, split and build transitions");
  add_common(g, common, true, true);
  g->add_option("--in", ingest.in, "Event CSV file, or a directory of them (or containing events/)")->required();
  g->add_option("--drugs", ingest.drugs, "Co-analgesic list file (default: built-in list)");
  g->add_option("--reward-timing", ingest.reward_timing, "Observations scoring an action")
      ->check(CLI::IsMember({"next", "current"}))
      ->capture_default_str();
  g->add_option("--out", common.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a dueling double DQN on ingested transitions");
  add_common(t, common, true, true);
  t->add_option("--in", tr.in, "Directory written by ingest")->required();
  t->add_option("--steps", tr.config.total_steps, "Optimizer steps")->capture_default_str();
  t->add_option("--gamma", tr.config.gamma, "Discount factor")->capture_default_str();
  t->add_option("--batch-size", tr.config.batch_size, "Minibatch size")->capture_default_str();
  t->add_option("--lr", tr.config.adam.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--target-sync", tr.config.target_sync_interval, "Steps between target syncs")->capture_default_str();
  t->add_option("--eval-interval", tr.config.eval_interval, "Steps between validations")->capture_default_str();
  t->add_option("--log-interval", tr.config.log_interval, "Steps between log rows")->capture_default_str();
  t->add_option("--loss", tr.loss, "TD loss")->check(CLI::IsMember({"huber", "squared"}))->capture_default_str();
  t->add_option("--per-alpha", tr.config.per.alpha, "Priority exponent")->capture_default_str();
  t->add_option("--val-episodes", tr.val_episodes, "Simulator rollouts per validation (0: use TD error)")
      ->capture_default_str();
  t->add_option("--val-horizon", tr.val_horizon, "Hours per validation rollout")->capture_default_str();
  t->add_option("--out", common.out, "Output directory")->required();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Compare a model with logged clinician actions and baselines");
  add_common(e, common, true, true);
  e->add_option("--model", ev.model, "Checkpoint file")->required();
  e->add_option("--episodes", ev.episodes, "Episode file (usually episodes_test.csv)")->required();
  e->add_option("--format", ev.format, "Report format")->check(CLI::IsMember({"csv", "jsonl"}))->capture_default_str();
  e->add_option("--sim-episodes", ev.sim_episodes, "Simulator episodes per policy (0: skip)")->capture_default_str();
  e->add_option("--horizon", ev.horizon, "Hours per simulated episode")->capture_default_str();
  e->add_option("--gamma", ev.gamma, "Discount for simulated returns (default: from checkpoint)");
  e->add_option("--out", common.out, "Output directory")->required();

  RecommendArgs rec;
  auto* r = app.add_subcommand("recommend", "Print the greedy dose and Q-values for one state");
  add_common(r, common, false, false);
  r->add_option("--model", rec.model, "Checkpoint file")->required();
  r->add_option("--state", rec.state, "19 comma-separated raw state values (pain,hr,rr,16 co-analgesic mg)")
      ->required();

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kOk : kUsage;
  }

  Run run;
  run.common = &common;
  if (auto* cfg = app.get_config_ptr(); cfg && cfg->count() > 0) run.config_path = cfg->as<std::string>();

  try {
    if (*s) {
      run.command = "synth";
      return cmd_synth(synth, run, out);
    }
    if (*g) {
      run.command = "ingest";
      return cmd_ingest(ingest, run, out);
    }
    if (*t) {
      run.command = "train";
      return cmd_train(tr, run, out, err);
    }
    if (*e) {
      run.command = "evaluate";
      return cmd_evaluate(ev, run, out);
    }
    run.command = "recommend";
    return cmd_recommend(rec, run, out);
  } catch (const MissingArtifact& ex) {
    err << "error: " << ex.what() << "\n";
    return kMissingArtifact;
  } catch (const UsageError& ex) {
    err << "error: " << ex.what() << "\n";
    return kUsage;
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex.kind());
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kFailure;
  }
}

}  // namespace morphdose::cli
