#pragma once

// State construction, dose discretization and the reward for the hourly dosing MDP.

#include <array>
#include <compare>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "morphdose/ingestion.hpp"

namespace morphdose {

/// pain, heart rate, respiration rate, then one dose per co-analgesic.
inline constexpr std::size_t kStateDim = 3 + kNumCoanalgesics;
inline constexpr int kNumActions = 14;

enum StateChannel : std::size_t { kPain = 0, kHeartRate = 1, kRespRate = 2, kFirstCoanalgesic = 3 };

/// Upper edges of the dose bins in mg: {0}, (0,1], ..., (9,10], (10,15], (15,20], (20,inf).
inline constexpr std::array<double, kNumActions> kDoseBinUpperEdges{
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, std::numeric_limits<double>::infinity()};

class ActionIndex {
 public:
  /// Throws InvalidParameter outside [0,13].
  explicit ActionIndex(int index);

  int value() const { return index_; }
  bool administers_morphine() const { return index_ > 0; }
  friend auto operator<=>(const ActionIndex&, const ActionIndex&) = default;

 private:
  int index_;
};

ActionIndex discretize_dose(double dose_mg);

/// Human-readable bin, e.g. "0 mg", "(2,3] mg", "(20,inf) mg".
std::string action_label(ActionIndex a);

/// Dose used when an action is executed in the simulator: the bin midpoint, 25 mg for the
/// open top bin.
double representative_dose(ActionIndex a);

double logistic(double x);

/// 2*sigma(x - lo) - 2*sigma(x - hi) - 1; close to 1 well inside [lo, hi], towards -1 outside.
double window_score(double x, double lo, double hi);

/// 1 - 2p/10. Inputs outside [0,10] are clamped; `clamp_warnings` is incremented when that happens.
double pain_score(double p, std::size_t* clamp_warnings = nullptr);

struct RewardWeights {
  double pain = 1.0 / 3.0;
  double hr = 1.0 / 3.0;
  double rr = 1.0 / 3.0;
};

inline constexpr double kHrLow = 60.0, kHrHigh = 100.0;
inline constexpr double kRrLow = 12.0, kRrHigh = 20.0;

struct RewardComponents {
  double pain = 0.0;
  double hr_window = 0.0;
  double rr_window = 0.0;
  double total = 0.0;
};

RewardComponents reward_components(double hr, double rr, double p, std::size_t* clamp_warnings = nullptr);
double reward(double hr, double rr, double p, std::size_t* clamp_warnings = nullptr);

using StateVector = Eigen::VectorXd;

/// Raw (unnormalized) 19-dimensional state from a fully imputed hourly record.
StateVector build_state(const HourlyRecord& record);

struct Transition {
  StateVector state;
  int action = 0;
  double reward = 0.0;
  std::optional<StateVector> next_state;  // absent exactly when terminal
  std::string admission_id;
  int hour = 0;

  bool terminal() const { return !next_state.has_value(); }
};

/// Which hour's observations score the action taken at hour t.
enum class RewardTiming { NextHour, CurrentHour };

/// n hourly records give n-1 transitions; the last one is terminal. Episodes shorter than
/// two hours give none.
std::vector<Transition> episode_to_transitions(const EpisodeLog& episode,
                                               RewardTiming timing = RewardTiming::NextHour);

struct TransitionSet {
  std::vector<Transition> transitions;
  std::size_t skipped_episodes = 0;
  std::size_t clamp_warnings = 0;
};
TransitionSet cohort_to_transitions(std::span<const EpisodeLog> episodes,
                                    RewardTiming timing = RewardTiming::NextHour);

/// Per-channel z-score statistics, fitted on training states and stored with the model.
struct Normalizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Normalizer identity(Eigen::Index dim);
  /// Channels with zero variance get scale 1.
  static Normalizer fit(std::span<const Transition> transitions);

  StateVector apply(const StateVector& raw) const;
  Eigen::Index dim() const { return mean.size(); }

  friend bool operator==(const Normalizer& a, const Normalizer& b) {
    return a.mean.size() == b.mean.size() && a.mean == b.mean && a.scale == b.scale;
  }
};

// Transition file: "# morphdose-transitions v1", key=value header lines (state_dim,
// num_actions, bin_edges, norm_mean, norm_scale), a column header, then one row per
// transition. Terminal rows carry NA in the next-state columns.
inline constexpr std::string_view kTransitionsMagic = "# morphdose-transitions v1";

struct TransitionFile {
  std::vector<Transition> transitions;
  Normalizer normalizer;
  int num_actions = kNumActions;
};

std::string write_transitions(std::span<const Transition> transitions, const Normalizer& normalizer,
                              int num_actions = kNumActions);
TransitionFile read_transitions(std::string_view text);

}  // namespace morphdose
