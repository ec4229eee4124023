#include "morphdose/ingestion.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "morphdose/error.hpp"
#include "morphdose/parallel.hpp"
#include "morphdose/seeding.hpp"

namespace morphdose {

namespace {

// Generated from config/coanalgesics.txt at configure time.
constexpr std::string_view kStandardDrugList =
#include "standard_drugs.inc"
    ;

constexpr std::array<std::pair<Channel, std::string_view>, 6> kChannelNames{{
    {Channel::PainNumeric, "pain_numeric"},
    {Channel::PainText, "pain_text"},
    {Channel::MorphineBolusMg, "morphine_bolus_mg"},
    {Channel::CoanalgesicMg, "coanalgesic_mg"},
    {Channel::HeartRate, "heart_rate"},
    {Channel::RespirationRate, "respiration_rate"},
}};

}  // namespace

std::string_view channel_name(Channel c) {
  for (const auto& [ch, name] : kChannelNames) {
    if (ch == c) return name;
  }
  return "unknown";
}

std::optional<Channel> parse_channel(std::string_view name) {
  name = trim(name);
  for (const auto& [ch, n] : kChannelNames) {
    if (n == name) return ch;
  }
  return std::nullopt;
}

DrugList::DrugList(std::vector<std::string> names) : names_(std::move(names)) {
  require(names_.size() == kNumCoanalgesics, ErrorKind::Configuration,
          "co-analgesic list must name exactly " + std::to_string(kNumCoanalgesics) + " drugs, got " +
              std::to_string(names_.size()));
  for (std::size_t i = 0; i < names_.size(); ++i) {
    require(!names_[i].empty(), ErrorKind::Configuration, "empty drug name");
    for (std::size_t j = 0; j < i; ++j) {
      require(names_[i] != names_[j], ErrorKind::Configuration, "duplicate drug name " + names_[i]);
    }
  }
}

DrugList DrugList::parse(std::string_view text) {
  std::vector<std::string> names;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    names.emplace_back(t);
  }
  return DrugList(std::move(names));
}

DrugList DrugList::from_file(const std::filesystem::path& path) { return parse(read_file(path)); }

DrugList DrugList::standard() { return parse(kStandardDrugList); }

std::optional<std::size_t> DrugList::index_of(std::string_view name) const {
  name = trim(name);
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

IngestStats& IngestStats::operator+=(const IngestStats& o) {
  rows_read += o.rows_read;
  malformed_rows += o.malformed_rows;
  bad_timestamps += o.bad_timestamps;
  unknown_channels += o.unknown_channels;
  unknown_drugs += o.unknown_drugs;
  unparseable_pain += o.unparseable_pain;
  bad_values += o.bad_values;
  empty_admissions += o.empty_admissions;
  return *this;
}

int parse_pain_text(std::string_view text) {
  const auto t = trim(text);
  std::size_t n = 0;
  while (n < t.size() && t[n] >= '0' && t[n] <= '9') ++n;
  if (n == 0) fail(ErrorKind::UnparseablePain, "no leading integer in \"" + std::string(text) + "\"");
  // Anything longer than two digits is out of range anyway; avoid overflow.
  if (n > 2) fail(ErrorKind::UnparseablePain, "score out of [0,10] in \"" + std::string(text) + "\"");
  const int v = std::stoi(std::string(t.substr(0, n)));
  if (v > 10) fail(ErrorKind::UnparseablePain, "score out of [0,10] in \"" + std::string(text) + "\"");
  return v;
}

namespace {

struct Window {
  std::vector<double> pain, hr, rr;
  std::vector<double> morphine;
  std::array<std::vector<double>, kNumCoanalgesics> coanalgesics;
};

// Sorting before summation makes the result independent of event order within a window.
double sorted_sum(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  return std::accumulate(v.begin(), v.end(), 0.0);
}

std::optional<double> sorted_mean(std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  return sorted_sum(v) / static_cast<double>(v.size());
}

}  // namespace

std::vector<HourlyRecord> aggregate_hourly(std::span<const RawEvent> events, const DrugList& drugs,
                                           IngestStats* stats) {
  IngestStats local;
  struct Parsed {
    Minutes t;
    Channel channel;
    std::size_t drug;
    double value;
  };
  std::vector<Parsed> parsed;
  parsed.reserve(events.size());
  for (const auto& e : events) {
    require(e.admission_id == events.front().admission_id, ErrorKind::InvalidParameter,
            "aggregate_hourly expects a single admission");
    std::size_t drug = 0;
    double value = 0.0;
    if (e.channel == Channel::PainText) {
      try {
        value = parse_pain_text(e.value);
      } catch (const Error&) {
        ++local.unparseable_pain;
        continue;
      }
    } else {
      const auto v = parse_real(e.value);
      if (!v || !std::isfinite(*v)) {
        ++(e.channel == Channel::PainNumeric ? local.unparseable_pain : local.bad_values);
        continue;
      }
      value = *v;
      switch (e.channel) {
        case Channel::PainNumeric:
          if (value < 0.0 || value > 10.0) {
            ++local.unparseable_pain;
            continue;
          }
          break;
        case Channel::HeartRate:
        case Channel::RespirationRate:
          if (value <= 0.0) {
            ++local.bad_values;
            continue;
          }
          break;
        case Channel::MorphineBolusMg:
          if (value < 0.0) {
            ++local.bad_values;
            continue;
          }
          break;
        case Channel::CoanalgesicMg: {
          if (value < 0.0) {
            ++local.bad_values;
            continue;
          }
          const auto idx = drugs.index_of(e.drug_name);
          if (!idx) {
            ++local.unknown_drugs;
            continue;
          }
          drug = *idx;
          break;
        }
        case Channel::PainText:
          break;
      }
    }
    parsed.push_back({e.timestamp, e.channel, drug, value});
  }
  if (stats) *stats += local;
  if (parsed.empty()) fail(ErrorKind::EmptyEpisode, "no usable events");

  const auto floor_div = [](Minutes a, Minutes b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); };
  Minutes first = parsed.front().t, last = parsed.front().t;
  for (const auto& p : parsed) {
    first = std::min(first, p.t);
    last = std::max(last, p.t);
  }
  const Minutes anchor = floor_div(first, 60) * 60;
  const auto hours = static_cast<std::size_t>((last - anchor) / 60 + 1);

  std::vector<Window> windows(hours);
  for (const auto& p : parsed) {
    auto& w = windows[static_cast<std::size_t>((p.t - anchor) / 60)];
    switch (p.channel) {
      case Channel::PainNumeric:
      case Channel::PainText: w.pain.push_back(p.value); break;
      case Channel::HeartRate: w.hr.push_back(p.value); break;
      case Channel::RespirationRate: w.rr.push_back(p.value); break;
      case Channel::MorphineBolusMg: w.morphine.push_back(p.value); break;
      case Channel::CoanalgesicMg: w.coanalgesics[p.drug].push_back(p.value); break;
    }
  }

  std::vector<HourlyRecord> out(hours);
  for (std::size_t h = 0; h < hours; ++h) {
    auto& w = windows[h];
    auto& r = out[h];
    r.hour_index = static_cast<int>(h);
    r.pain = sorted_mean(w.pain);
    r.hr = sorted_mean(w.hr);
    r.rr = sorted_mean(w.rr);
    r.morphine_mg = sorted_sum(w.morphine);
    for (std::size_t d = 0; d < kNumCoanalgesics; ++d) r.coanalgesics_mg[d] = sorted_sum(w.coanalgesics[d]);
  }
  return out;
}

std::vector<HourlyRecord> impute(std::span<const HourlyRecord> records, const ImputeDefaults& defaults) {
  require(!records.empty(), ErrorKind::EmptyEpisode, "impute needs at least one record");
  std::vector<HourlyRecord> out(records.begin(), records.end());
  double pain = defaults.pain, hr = defaults.hr, rr = defaults.rr;
  for (auto& r : out) {
    if (r.pain) pain = *r.pain; else r.pain = pain;
    if (r.hr) hr = *r.hr; else r.hr = hr;
    if (r.rr) rr = *r.rr; else r.rr = rr;
  }
  return out;
}

IngestResult ingest_events(std::span<const RawEvent> events, const DrugList& drugs, const ImputeDefaults& defaults,
                           unsigned jobs) {
  std::map<std::string, std::vector<RawEvent>> by_admission;
  for (const auto& e : events) by_admission[e.admission_id].push_back(e);

  std::vector<const std::vector<RawEvent>*> groups;
  groups.reserve(by_admission.size());
  for (const auto& [id, evs] : by_admission) groups.push_back(&evs);

  std::vector<std::optional<EpisodeLog>> slots(groups.size());
  std::vector<IngestStats> slot_stats(groups.size());
  parallel_for(groups.size(), jobs, [&](std::size_t i) {
    const auto& evs = *groups[i];
    try {
      auto hourly = aggregate_hourly(evs, drugs, &slot_stats[i]);
      slots[i] = EpisodeLog{evs.front().admission_id, impute(hourly, defaults)};
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::EmptyEpisode) throw;
      ++slot_stats[i].empty_admissions;
    }
  });

  IngestResult result;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    result.stats += slot_stats[i];
    if (slots[i]) result.episodes.push_back(std::move(*slots[i]));
  }
  return result;
}

CohortSplit split_cohort(std::vector<EpisodeLog> episodes, const SplitFractions& fractions, std::uint64_t seed) {
  const double total = fractions.train + fractions.validation + fractions.test;
  require(fractions.train >= 0 && fractions.validation >= 0 && fractions.test >= 0 && std::abs(total - 1.0) < 1e-9,
          ErrorKind::InvalidParameter, "split fractions must be non-negative and sum to 1");
  const std::size_t n = episodes.size();
  require(n >= 10, ErrorKind::InsufficientData,
          "need at least 10 episodes to split, got " + std::to_string(n));

  // Small epsilon so that e.g. 0.2 * 10 is not floored to 1 by representation error.
  const auto alloc = [n](double f) { return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)); };
  const std::size_t n_val = alloc(fractions.validation);
  const std::size_t n_test = alloc(fractions.test);
  const std::size_t n_train = n - n_val - n_test;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  CohortSplit split;
  split.train.reserve(n_train);
  split.validation.reserve(n_val);
  split.test.reserve(n_test);
  for (std::size_t k = 0; k < n; ++k) {
    auto& ep = episodes[order[k]];
    if (k < n_train) split.train.push_back(std::move(ep));
    else if (k < n_train + n_val) split.validation.push_back(std::move(ep));
    else split.test.push_back(std::move(ep));
  }
  return split;
}

std::string write_events_csv(std::span<const RawEvent> events) {
  std::string out;
  out += kEventsMagic;
  out += '\n';
  out += kEventsColumns;
  out += '\n';
  for (const auto& e : events) {
    out += csv_field(e.admission_id);
    out += ',';
    out += format_timestamp(e.timestamp);
    out += ',';
    out += channel_name(e.channel);
    out += ',';
    out += csv_field(e.drug_name);
    out += ',';
    out += csv_field(e.value);
    out += '\n';
  }
  return out;
}

std::vector<RawEvent> read_events_csv(std::string_view text, IngestStats* stats) {
  IngestStats local;
  std::vector<RawEvent> events;
  std::istringstream in{std::string(text)};
  std::string line;
  require(std::getline(in, line) && trim(line) == kEventsMagic, ErrorKind::Format,
          "missing event file header \"" + std::string(kEventsMagic) + "\"");
  require(std::getline(in, line) && trim(line) == kEventsColumns, ErrorKind::Format,
          "unexpected event columns, want \"" + std::string(kEventsColumns) + "\"");
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++local.rows_read;
    auto f = split_csv(line);
    if (f.size() != 5 || trim(f[0]).empty()) {
      ++local.malformed_rows;
      continue;
    }
    const auto ts = parse_timestamp(f[1]);
    if (!ts) {
      ++local.bad_timestamps;
      continue;
    }
    const auto ch = parse_channel(f[2]);
    if (!ch) {
      ++local.unknown_channels;
      continue;
    }
    events.push_back(RawEvent{std::string(trim(f[0])), *ts, *ch, std::string(trim(f[3])), std::move(f[4])});
  }
  if (stats) *stats += local;
  return events;
}

namespace {

std::string opt_field(const std::optional<double>& v) { return v ? format_real(*v) : "NA"; }

}  // namespace

std::string write_episodes(std::span<const EpisodeLog> episodes, const DrugList& drugs) {
  std::string out;
  out += kEpisodesMagic;
  out += "\nadmission_id,hour,pain,hr,rr,morphine_mg";
  for (const auto& n : drugs.names()) out += "," + csv_field(n);
  out += '\n';
  for (const auto& ep : episodes) {
    for (const auto& r : ep.records) {
      out += csv_field(ep.admission_id);
      out += ',' + std::to_string(r.hour_index);
      out += ',' + opt_field(r.pain);
      out += ',' + opt_field(r.hr);
      out += ',' + opt_field(r.rr);
      out += ',' + format_real(r.morphine_mg);
      for (double c : r.coanalgesics_mg) out += ',' + format_real(c);
      out += '\n';
    }
  }
  return out;
}

std::vector<EpisodeLog> read_episodes(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  require(std::getline(in, line) && trim(line) == kEpisodesMagic, ErrorKind::Format, "missing episode file header");
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Format, "missing episode column header");
  const auto header = split_csv(line);
  constexpr std::size_t kColumns = 6 + kNumCoanalgesics;
  require(header.size() == kColumns && header[0] == "admission_id", ErrorKind::Format,
          "episode header must have " + std::to_string(kColumns) + " columns");

  std::vector<EpisodeLog> episodes;
  std::size_t line_no = 2;
  const auto bad = [&line_no](const std::string& why) {
    fail(ErrorKind::Format, "episode file line " + std::to_string(line_no) + ": " + why);
  };
  const auto real_or_na = [&](const std::string& s) -> std::optional<double> {
    if (trim(s) == "NA") return std::nullopt;
    const auto v = parse_real(s);
    if (!v) bad("bad number \"" + s + "\"");
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != kColumns) bad("wrong column count");
    HourlyRecord r;
    const auto hour = parse_int(f[1]);
    if (!hour) bad("bad hour");
    r.hour_index = static_cast<int>(*hour);
    r.pain = real_or_na(f[2]);
    r.hr = real_or_na(f[3]);
    r.rr = real_or_na(f[4]);
    const auto m = real_or_na(f[5]);
    if (!m) bad("morphine_mg cannot be NA");
    r.morphine_mg = *m;
    for (std::size_t d = 0; d < kNumCoanalgesics; ++d) {
      const auto c = real_or_na(f[6 + d]);
      if (!c) bad("co-analgesic dose cannot be NA");
      r.coanalgesics_mg[d] = *c;
    }
    if (episodes.empty() || episodes.back().admission_id != f[0]) {
      episodes.push_back(EpisodeLog{f[0], {}});
    }
    auto& recs = episodes.back().records;
    if (!recs.empty() && r.hour_index != recs.back().hour_index + 1) bad("hour_index must increase by 1");
    if (recs.empty() && r.hour_index != 0) bad("episodes must start at hour 0");
    recs.push_back(r);
  }
  return episodes;
}

}  // namespace morphdose
