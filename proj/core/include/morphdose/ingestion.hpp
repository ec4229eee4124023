#pragma once

// Raw charted events -> hourly aggregated, sample-and-hold imputed episodes.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "morphdose/text_io.hpp"

namespace morphdose {

inline constexpr std::size_t kNumCoanalgesics = 16;

enum class Channel { PainNumeric, PainText, MorphineBolusMg, CoanalgesicMg, HeartRate, RespirationRate };

std::string_view channel_name(Channel c);
std::optional<Channel> parse_channel(std::string_view name);

/// The configured co-analgesic vocabulary. Order defines the state-vector layout.
class DrugList {
 public:
  explicit DrugList(std::vector<std::string> names);

  /// One name per line; blank lines and lines starting with '#' are ignored.
  static DrugList from_file(const std::filesystem::path& path);
  static DrugList parse(std::string_view text);
  /// The list shipped in config/coanalgesics.txt.
  static DrugList standard();

  std::optional<std::size_t> index_of(std::string_view name) const;
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
};

struct RawEvent {
  std::string admission_id;
  Minutes timestamp = 0;
  Channel channel = Channel::HeartRate;
  std::string drug_name;  // empty unless channel == CoanalgesicMg
  std::string value;

  friend bool operator==(const RawEvent&, const RawEvent&) = default;
};

struct HourlyRecord {
  int hour_index = 0;
  std::optional<double> pain;
  std::optional<double> hr;
  std::optional<double> rr;
  double morphine_mg = 0.0;
  std::array<double, kNumCoanalgesics> coanalgesics_mg{};

  bool complete() const { return pain && hr && rr; }
  friend bool operator==(const HourlyRecord&, const HourlyRecord&) = default;
};

struct EpisodeLog {
  std::string admission_id;
  std::vector<HourlyRecord> records;

  friend bool operator==(const EpisodeLog&, const EpisodeLog&) = default;
};

/// Counts of events dropped during parsing and aggregation. Dirty rows are never fatal.
struct IngestStats {
  std::size_t rows_read = 0;
  std::size_t malformed_rows = 0;
  std::size_t bad_timestamps = 0;
  std::size_t unknown_channels = 0;
  std::size_t unknown_drugs = 0;
  std::size_t unparseable_pain = 0;
  std::size_t bad_values = 0;
  std::size_t empty_admissions = 0;

  std::size_t dropped() const {
    return malformed_rows + bad_timestamps + unknown_channels + unknown_drugs + unparseable_pain + bad_values;
  }
  IngestStats& operator+=(const IngestStats& o);
};

/// Leading integer of a charted pain string ("3-Mild to Mod" -> 3), validated to [0,10].
/// Throws Error(UnparseablePain) when there is no leading integer or it is out of range.
int parse_pain_text(std::string_view text);

/// One record per hour from the first to the last event hour. Hour 0 starts at the earliest
/// event timestamp truncated to the hour. Pain (numeric and text), HR and RR are averaged;
/// morphine and co-analgesic doses are summed. Events with unusable values are dropped and
/// counted in `stats`. Throws EmptyEpisode when no usable event remains.
std::vector<HourlyRecord> aggregate_hourly(std::span<const RawEvent> events, const DrugList& drugs,
                                           IngestStats* stats = nullptr);

struct ImputeDefaults {
  double pain = 0.0;
  double hr = 80.0;
  double rr = 16.0;
};

/// Sample-and-hold: each missing mean-channel value takes the last observed value of that
/// channel, or the default before the first observation.
std::vector<HourlyRecord> impute(std::span<const HourlyRecord> records, const ImputeDefaults& defaults);

/// Groups events by admission (sorted by id), aggregates and imputes each one.
struct IngestResult {
  std::vector<EpisodeLog> episodes;
  IngestStats stats;
};
IngestResult ingest_events(std::span<const RawEvent> events, const DrugList& drugs, const ImputeDefaults& defaults,
                           unsigned jobs = 1);

struct SplitFractions {
  double train = 0.7;
  double validation = 0.2;
  double test = 0.1;
};

struct CohortSplit {
  std::vector<EpisodeLog> train;
  std::vector<EpisodeLog> validation;
  std::vector<EpisodeLog> test;
};

/// Seeded admission-level shuffle. Validation and test sizes are floor(fraction * n); the
/// remainder goes to train.
CohortSplit split_cohort(std::vector<EpisodeLog> episodes, const SplitFractions& fractions, std::uint64_t seed);

// Event CSV: "# morphdose-events v1", then the column header
// admission_id,timestamp_iso8601,channel,drug_name,value
inline constexpr std::string_view kEventsMagic = "# morphdose-events v1";
inline constexpr std::string_view kEventsColumns = "admission_id,timestamp_iso8601,channel,drug_name,value";

std::string write_events_csv(std::span<const RawEvent> events);
/// Rows that cannot be parsed are dropped and counted in `stats`.
std::vector<RawEvent> read_events_csv(std::string_view text, IngestStats* stats = nullptr);

// Episode file: "# morphdose-episodes v1", a column header naming the drugs, then one
// HourlyRecord per line. Missing values are written as NA.
inline constexpr std::string_view kEpisodesMagic = "# morphdose-episodes v1";

std::string write_episodes(std::span<const EpisodeLog> episodes, const DrugList& drugs);
std::vector<EpisodeLog> read_episodes(std::string_view text);

}  // namespace morphdose
