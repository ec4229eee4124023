#include "morphdose/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "morphdose/error.hpp"
#include "morphdose/text_io.hpp"

namespace morphdose {

ActionIndex::ActionIndex(int index) : index_(index) {
  require(index >= 0 && index < kNumActions, ErrorKind::InvalidParameter,
          "action index " + std::to_string(index) + " outside [0," + std::to_string(kNumActions - 1) + "]");
}

ActionIndex discretize_dose(double dose_mg) {
  require(!std::isnan(dose_mg) && dose_mg >= 0.0, ErrorKind::InvalidParameter,
          "invalid dose " + format_real(dose_mg) + " mg");
  // First bin whose (closed) upper edge is >= dose.
  const auto it = std::lower_bound(kDoseBinUpperEdges.begin(), kDoseBinUpperEdges.end(), dose_mg);
  return ActionIndex(static_cast<int>(it - kDoseBinUpperEdges.begin()));
}

std::string action_label(ActionIndex a) {
  const int k = a.value();
  if (k == 0) return "0 mg";
  return "(" + format_real(kDoseBinUpperEdges[k - 1]) + "," + format_real(kDoseBinUpperEdges[k]) +
         (k == kNumActions - 1 ? ") mg" : "] mg");
}

double representative_dose(ActionIndex a) {
  const int k = a.value();
  if (k == 0) return 0.0;
  if (k == kNumActions - 1) return 25.0;
  return 0.5 * (kDoseBinUpperEdges[k - 1] + kDoseBinUpperEdges[k]);
}

double logistic(double x) {
  // Branch keeps exp() from overflowing for large |x|.
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double window_score(double x, double lo, double hi) {
  require(lo < hi, ErrorKind::InvalidParameter, "window needs lo < hi");
  return 2.0 * logistic(x - lo) - 2.0 * logistic(x - hi) - 1.0;
}

double pain_score(double p, std::size_t* clamp_warnings) {
  if (std::isnan(p) || p < 0.0 || p > 10.0) {
    if (clamp_warnings) ++*clamp_warnings;
    p = std::isnan(p) ? 10.0 : std::clamp(p, 0.0, 10.0);
  }
  return 1.0 - 2.0 * p / 10.0;
}

RewardComponents reward_components(double hr, double rr, double p, std::size_t* clamp_warnings) {
  const RewardWeights w;
  RewardComponents c;
  c.pain = pain_score(p, clamp_warnings);
  c.hr_window = window_score(hr, kHrLow, kHrHigh);
  c.rr_window = window_score(rr, kRrLow, kRrHigh);
  c.total = w.pain * c.pain + w.hr * c.hr_window + w.rr * c.rr_window;
  return c;
}

double reward(double hr, double rr, double p, std::size_t* clamp_warnings) {
  return reward_components(hr, rr, p, clamp_warnings).total;
}

StateVector build_state(const HourlyRecord& record) {
  require(record.complete(), ErrorKind::InvalidParameter,
          "hour " + std::to_string(record.hour_index) + " has missing values; impute first");
  StateVector s(static_cast<Eigen::Index>(kStateDim));
  s[kPain] = *record.pain;
  s[kHeartRate] = *record.hr;
  s[kRespRate] = *record.rr;
  for (std::size_t d = 0; d < kNumCoanalgesics; ++d) {
    s[static_cast<Eigen::Index>(kFirstCoanalgesic + d)] = record.coanalgesics_mg[d];
  }
  return s;
}

namespace {

std::vector<Transition> to_transitions(const EpisodeLog& episode, RewardTiming timing, std::size_t* clamp_warnings) {
  std::vector<Transition> out;
  const auto& recs = episode.records;
  if (recs.size() < 2) return out;
  out.reserve(recs.size() - 1);
  for (std::size_t t = 0; t + 1 < recs.size(); ++t) {
    const auto& scored = timing == RewardTiming::NextHour ? recs[t + 1] : recs[t];
    require(scored.complete(), ErrorKind::InvalidParameter, "episode " + episode.admission_id + " is not imputed");
    Transition tr;
    tr.state = build_state(recs[t]);
    tr.action = discretize_dose(recs[t].morphine_mg).value();
    tr.reward = reward(*scored.hr, *scored.rr, *scored.pain, clamp_warnings);
    if (t + 2 < recs.size()) tr.next_state = build_state(recs[t + 1]);
    tr.admission_id = episode.admission_id;
    tr.hour = recs[t].hour_index;
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace

std::vector<Transition> episode_to_transitions(const EpisodeLog& episode, RewardTiming timing) {
  return to_transitions(episode, timing, nullptr);
}

TransitionSet cohort_to_transitions(std::span<const EpisodeLog> episodes, RewardTiming timing) {
  TransitionSet set;
  for (const auto& ep : episodes) {
    if (ep.records.size() < 2) {
      ++set.skipped_episodes;
      continue;
    }
    auto trs = to_transitions(ep, timing, &set.clamp_warnings);
    set.transitions.insert(set.transitions.end(), std::make_move_iterator(trs.begin()),
                           std::make_move_iterator(trs.end()));
  }
  return set;
}

Normalizer Normalizer::identity(Eigen::Index dim) {
  return Normalizer{Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Normalizer Normalizer::fit(std::span<const Transition> transitions) {
  require(!transitions.empty(), ErrorKind::InsufficientData, "cannot fit normalization on zero transitions");
  const auto dim = transitions.front().state.size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  for (const auto& t : transitions) {
    require(t.state.size() == dim, ErrorKind::Dimension, "inconsistent state dimension");
    sum += t.state;
  }
  const double n = static_cast<double>(transitions.size());
  const Eigen::VectorXd mean = sum / n;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(dim);
  for (const auto& t : transitions) sq += (t.state - mean).cwiseAbs2();
  Eigen::VectorXd scale = (sq / n).cwiseSqrt();
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (!(scale[i] > 1e-12)) scale[i] = 1.0;
  }
  return Normalizer{mean, scale};
}

StateVector Normalizer::apply(const StateVector& raw) const {
  require(raw.size() == mean.size(), ErrorKind::Dimension,
          "state has " + std::to_string(raw.size()) + " entries, normalizer expects " + std::to_string(mean.size()));
  return (raw - mean).cwiseQuotient(scale);
}

namespace {

std::string join_reals(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_real(v[i]);
  }
  return out;
}

Eigen::VectorXd parse_reals(const std::string& s, Eigen::Index expected, const char* what) {
  const auto f = split_csv(s);
  require(static_cast<Eigen::Index>(f.size()) == expected, ErrorKind::Format,
          std::string(what) + " has " + std::to_string(f.size()) + " values");
  Eigen::VectorXd v(expected);
  for (Eigen::Index i = 0; i < expected; ++i) {
    const auto x = parse_real(f[static_cast<std::size_t>(i)]);
    require(x.has_value(), ErrorKind::Format, std::string("bad number in ") + what);
    v[i] = *x;
  }
  return v;
}

}  // namespace

std::string write_transitions(std::span<const Transition> transitions, const Normalizer& normalizer,
                              int num_actions) {
  const auto dim = normalizer.dim();
  std::string out;
  out += kTransitionsMagic;
  out += "\nstate_dim=" + std::to_string(dim);
  out += "\nnum_actions=" + std::to_string(num_actions);
  out += "\nbin_edges=";
  for (std::size_t i = 0; i < kDoseBinUpperEdges.size(); ++i) {
    if (i) out += ',';
    out += format_real(kDoseBinUpperEdges[i]);
  }
  out += "\nnorm_mean=" + join_reals(normalizer.mean);
  out += "\nnorm_scale=" + join_reals(normalizer.scale);
  out += "\nadmission_id,hour,action,reward,terminal";
  for (Eigen::Index i = 0; i < dim; ++i) out += ",s" + std::to_string(i);
  for (Eigen::Index i = 0; i < dim; ++i) out += ",next" + std::to_string(i);
  out += '\n';
  for (const auto& t : transitions) {
    require(t.state.size() == dim, ErrorKind::Dimension, "transition state dimension mismatch");
    out += csv_field(t.admission_id) + ',' + std::to_string(t.hour) + ',' + std::to_string(t.action) + ',' +
           format_real(t.reward) + ',' + (t.terminal() ? "1" : "0") + ',' + join_reals(t.state);
    for (Eigen::Index i = 0; i < dim; ++i) {
      out += ',';
      out += t.next_state ? format_real((*t.next_state)[i]) : "NA";
    }
    out += '\n';
  }
  return out;
}

TransitionFile read_transitions(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  require(std::getline(in, line) && trim(line) == kTransitionsMagic, ErrorKind::Format,
          "missing transition file header");
  const auto read_key = [&](std::string_view key) {
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format, "truncated transition header");
    const auto eq = line.find('=');
    require(eq != std::string::npos && trim(std::string_view(line).substr(0, eq)) == key, ErrorKind::Format,
            "expected header key " + std::string(key));
    return line.substr(eq + 1);
  };
  const auto dim_v = parse_int(read_key("state_dim"));
  const auto act_v = parse_int(read_key("num_actions"));
  require(dim_v && *dim_v > 0 && act_v && *act_v > 0, ErrorKind::Format, "bad state_dim/num_actions");
  const auto dim = static_cast<Eigen::Index>(*dim_v);
  read_key("bin_edges");
  TransitionFile file;
  file.num_actions = static_cast<int>(*act_v);
  file.normalizer.mean = parse_reals(read_key("norm_mean"), dim, "norm_mean");
  file.normalizer.scale = parse_reals(read_key("norm_scale"), dim, "norm_scale");
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format, "missing transition column header");

  const auto cols = static_cast<std::size_t>(5 + 2 * dim);
  std::size_t line_no = 7;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    const auto where = "transition file line " + std::to_string(line_no);
    require(f.size() == cols, ErrorKind::Format, where + ": wrong column count");
    Transition t;
    t.admission_id = f[0];
    const auto hour = parse_int(f[1]);
    const auto action = parse_int(f[2]);
    const auto r = parse_real(f[3]);
    require(hour && action && r && (f[4] == "0" || f[4] == "1"), ErrorKind::Format, where + ": bad field");
    require(*action >= 0 && *action < file.num_actions, ErrorKind::Format, where + ": action out of range");
    t.hour = static_cast<int>(*hour);
    t.action = static_cast<int>(*action);
    t.reward = *r;
    t.state.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const auto v = parse_real(f[static_cast<std::size_t>(5 + i)]);
      require(v.has_value(), ErrorKind::Format, where + ": bad state value");
      t.state[i] = *v;
    }
    if (f[4] == "0") {
      StateVector next(dim);
      for (Eigen::Index i = 0; i < dim; ++i) {
        const auto v = parse_real(f[static_cast<std::size_t>(5 + dim + i)]);
        require(v.has_value(), ErrorKind::Format, where + ": bad next-state value");
        next[i] = *v;
      }
      t.next_state = std::move(next);
    }
    file.transitions.push_back(std::move(t));
  }
  return file;
}

}  // namespace morphdose
