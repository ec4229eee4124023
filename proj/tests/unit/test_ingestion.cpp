#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "morphdose/cohort_synth.hpp"
#include "morphdose/error.hpp"
#include "morphdose/ingestion.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace morphdose;
using testutil::event;

namespace {

std::vector<std::string> fixture_lines(const std::string& rel) {
  std::ifstream in(testutil::data_path(rel));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<EpisodeLog> numbered_episodes(std::size_t n) {
  std::vector<EpisodeLog> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].admission_id = "ADM" + std::to_string(i);
    out[i].records = {testutil::record(0, 1, 80, 16)};
  }
  return out;
}

std::optional<double> NA() { return std::nullopt; }

}  // namespace

TEST(ParsePainText, ChartedLabel) { EXPECT_EQ(parse_pain_text("3-Mild to Mod"), 3); }

TEST(ParsePainText, ZeroAndSevere) {
  EXPECT_EQ(parse_pain_text("0-No pain"), 0);
  EXPECT_EQ(parse_pain_text("7-Severe"), 7);
}

TEST(ParsePainText, MatchesLeadingIntegerOracleOnFixture) {
  const auto lines = fixture_lines("fixtures/pain_strings.txt");
  ASSERT_GT(lines.size(), 20u);
  int parsed = 0, rejected = 0;
  for (const auto& s : lines) {
    const auto expected = oracle::leading_pain(s);
    if (expected) {
      EXPECT_EQ(parse_pain_text(s), *expected) << s;
      ++parsed;
    } else {
      try {
        parse_pain_text(s);
        ADD_FAILURE() << "accepted \"" << s << "\"";
      } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnparseablePain) << s;
      }
      ++rejected;
    }
  }
  EXPECT_GT(parsed, 10);
  EXPECT_GT(rejected, 4);
}

TEST(DrugListTest, StandardListHasSixteenDrugs) {
  const DrugList d = DrugList::standard();
  EXPECT_EQ(d.names().size(), kNumCoanalgesics);
  EXPECT_EQ(d.index_of("acetaminophen"), 0u);
  EXPECT_FALSE(d.index_of("morphine"));
  EXPECT_EQ(DrugList::from_file(testutil::data_path("../config/coanalgesics.txt")).names(), d.names());
}

TEST(DrugListTest, RejectsWrongCountOrDuplicates) {
  EXPECT_THROW(DrugList::parse("a\nb\n"), Error);
  std::string dup;
  for (int i = 0; i < 15; ++i) dup += "drug" + std::to_string(i) + "\n";
  dup += "drug0\n";
  EXPECT_THROW(DrugList::parse(dup), Error);
}

TEST(AggregateHourly, MeanOfHeartRates) {
  const std::vector<RawEvent> ev{event("X", "2150-01-01T10:05", Channel::HeartRate, "70"),
                                 event("X", "2150-01-01T10:35", Channel::HeartRate, "90")};
  const auto r = aggregate_hourly(ev, DrugList::standard());
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].hr, 80.0);
  EXPECT_FALSE(r[0].pain);
}

TEST(AggregateHourly, SumOfBoluses) {
  const std::vector<RawEvent> ev{event("X", "2150-01-01T10:05", Channel::MorphineBolusMg, "2"),
                                 event("X", "2150-01-01T10:35", Channel::MorphineBolusMg, "3")};
  const auto r = aggregate_hourly(ev, DrugList::standard());
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].morphine_mg, 5.0);
}

TEST(AggregateHourly, ThreeHourFixture) {
  const DrugList drugs = DrugList::standard();
  IngestStats stats;
  const auto events = read_events_csv(testutil::slurp(testutil::data_path("fixtures/three_hour_events.csv")), &stats);
  EXPECT_EQ(stats.rows_read, 20u);
  EXPECT_EQ(stats.bad_timestamps, 1u);
  EXPECT_EQ(stats.unknown_channels, 1u);
  const auto r = aggregate_hourly(events, drugs, &stats);
  EXPECT_EQ(stats.unparseable_pain, 1u);
  EXPECT_EQ(stats.unknown_drugs, 1u);
  EXPECT_EQ(stats.dropped(), 4u);

  const std::size_t apap = *drugs.index_of("acetaminophen"), ketorolac = *drugs.index_of("ketorolac");
  ASSERT_EQ(r.size(), 3u);
  // hour 0 (08:00-08:59)
  EXPECT_EQ(r[0].hour_index, 0);
  EXPECT_EQ(r[0].pain, 3.0);
  EXPECT_EQ(r[0].hr, 80.0);
  EXPECT_EQ(r[0].rr, 18.0);
  EXPECT_EQ(r[0].morphine_mg, 5.0);
  for (double c : r[0].coanalgesics_mg) EXPECT_EQ(c, 0.0);
  // hour 1 (09:00-09:59)
  EXPECT_EQ(r[1].hour_index, 1);
  EXPECT_EQ(r[1].pain, 7.0);
  EXPECT_EQ(r[1].hr, 100.0);
  EXPECT_EQ(r[1].rr, NA());
  EXPECT_EQ(r[1].morphine_mg, 0.0);
  EXPECT_EQ(r[1].coanalgesics_mg[apap], 1000.0);
  EXPECT_EQ(r[1].coanalgesics_mg[ketorolac], 30.0);
  // hour 2 (10:00-10:59)
  EXPECT_EQ(r[2].hour_index, 2);
  EXPECT_EQ(r[2].pain, NA());
  EXPECT_EQ(r[2].hr, NA());
  EXPECT_EQ(r[2].rr, 14.5);
  EXPECT_EQ(r[2].morphine_mg, 2.5);
  EXPECT_EQ(r[2].coanalgesics_mg[apap], 500.0);
  EXPECT_EQ(r[2].coanalgesics_mg[ketorolac], 0.0);

  const auto filled = impute(r, ImputeDefaults{});
  EXPECT_EQ(filled[1].rr, 18.0);
  EXPECT_EQ(filled[2].pain, 7.0);
  EXPECT_EQ(filled[2].hr, 100.0);
}

TEST(AggregateHourly, GapHoursAreMissingWithZeroDoses) {
  const std::vector<RawEvent> ev{event("X", "2150-01-01T10:05", Channel::HeartRate, "70"),
                                 event("X", "2150-01-01T13:35", Channel::HeartRate, "90")};
  const auto r = aggregate_hourly(ev, DrugList::standard());
  ASSERT_EQ(r.size(), 4u);
  for (int h = 0; h < 4; ++h) EXPECT_EQ(r[static_cast<std::size_t>(h)].hour_index, h);
  EXPECT_FALSE(r[1].hr);
  EXPECT_EQ(r[2].morphine_mg, 0.0);
}

TEST(AggregateHourly, EmptyInputIsEmptyEpisode) {
  try {
    aggregate_hourly(std::vector<RawEvent>{}, DrugList::standard());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyEpisode);
  }
  const std::vector<RawEvent> junk{event("X", "2150-01-01T10:05", Channel::PainText, "asleep")};
  EXPECT_THROW(aggregate_hourly(junk, DrugList::standard()), Error);
}

TEST(AggregateHourly, MixedAdmissionsRejected) {
  const std::vector<RawEvent> ev{event("X", "2150-01-01T10:05", Channel::HeartRate, "70"),
                                 event("Y", "2150-01-01T10:35", Channel::HeartRate, "90")};
  EXPECT_THROW(aggregate_hourly(ev, DrugList::standard()), Error);
}

TEST(AggregateHourly, PermutationInvariantWithinWindow) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> v(40, 140);
  std::uniform_int_distribution<int> minute(0, 59);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RawEvent> ev;
    for (int i = 0; i < 25; ++i) {
      const Minutes t = *parse_timestamp("2150-01-01T10:00") + minute(rng);
      ev.push_back({"X", t, Channel::HeartRate, "", format_real(v(rng))});
      ev.push_back({"X", t, Channel::MorphineBolusMg, "", format_real(v(rng) / 13.0)});
    }
    const auto ref = aggregate_hourly(ev, DrugList::standard());
    for (int k = 0; k < 5; ++k) {
      std::shuffle(ev.begin(), ev.end(), rng);
      ASSERT_EQ(aggregate_hourly(ev, DrugList::standard()), ref);
    }
  }
}

TEST(AggregateHourly, ConservesMorphineMass) {
  const DrugList drugs = DrugList::standard();
  const auto cohort = generate_cohort(30, 48, "clinician", 17);
  for (const auto& ep : cohort) {
    const auto events = ep.to_events(drugs);
    double raw = 0.0;
    for (const auto& e : events) {
      if (e.channel == Channel::MorphineBolusMg) raw += *parse_real(e.value);
    }
    double hourly = 0.0;
    for (const auto& r : aggregate_hourly(events, drugs)) hourly += r.morphine_mg;
    EXPECT_EQ(hourly, raw) << ep.admission_id;
  }
}

TEST(Impute, LeadingDefaultThenHold) {
  std::vector<HourlyRecord> r(4);
  for (int i = 0; i < 4; ++i) r[static_cast<std::size_t>(i)].hour_index = i;
  r[1].pain = 5;
  ImputeDefaults d;
  d.pain = 4;
  const auto out = impute(r, d);
  EXPECT_EQ(out[0].pain, 4.0);
  EXPECT_EQ(out[1].pain, 5.0);
  EXPECT_EQ(out[2].pain, 5.0);
  EXPECT_EQ(out[3].pain, 5.0);
}

TEST(Impute, HeartRateExample) {
  std::vector<HourlyRecord> r(5);
  for (int i = 0; i < 5; ++i) r[static_cast<std::size_t>(i)].hour_index = i;
  r[2].hr = 80;
  r[4].hr = 60;
  ImputeDefaults d;
  d.hr = 75;
  const auto out = impute(r, d);
  const std::vector<double> expected{75, 75, 80, 80, 60};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(out[i].hr, expected[i]);
}

TEST(Impute, CompleteDataUnchangedAndNoMissingAfter) {
  std::vector<HourlyRecord> full{testutil::record(0, 2, 70, 14, 1), testutil::record(1, 3, 75, 15)};
  EXPECT_EQ(impute(full, ImputeDefaults{}), full);

  const auto cohort = generate_cohort(10, 48, "clinician", 3);
  const DrugList drugs = DrugList::standard();
  for (const auto& ep : cohort) {
    for (const auto& r : impute(aggregate_hourly(ep.to_events(drugs), drugs), ImputeDefaults{})) {
      EXPECT_TRUE(r.complete());
    }
  }
}

TEST(SplitCohort, TenEpisodes) {
  const auto s = split_cohort(numbered_episodes(10), SplitFractions{}, 1);
  EXPECT_EQ(s.train.size(), 7u);
  EXPECT_EQ(s.validation.size(), 2u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(SplitCohort, LargeCohortSize) {
  // floor(0.2 * 6843) = 1368, floor(0.1 * 6843) = 684, train takes the remaining 4791.
  const auto s = split_cohort(numbered_episodes(6843), SplitFractions{}, 1);
  EXPECT_EQ(s.train.size(), 4791u);
  EXPECT_EQ(s.validation.size(), 1368u);
  EXPECT_EQ(s.test.size(), 684u);
}

TEST(SplitCohort, DeterministicDisjointAndComplete) {
  for (std::size_t n : {10u, 11u, 37u, 100u, 999u}) {
    const auto a = split_cohort(numbered_episodes(n), SplitFractions{}, 5);
    const auto b = split_cohort(numbered_episodes(n), SplitFractions{}, 5);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_EQ(a.test, b.test);
    std::set<std::string> seen;
    for (const auto* part : {&a.train, &a.validation, &a.test}) {
      for (const auto& e : *part) EXPECT_TRUE(seen.insert(e.admission_id).second);
    }
    EXPECT_EQ(seen.size(), n);
    EXPECT_EQ(a.validation.size(), n * 2 / 10);
    EXPECT_EQ(a.test.size(), n / 10);
  }
  const auto c = split_cohort(numbered_episodes(100), SplitFractions{}, 6);
  const auto d = split_cohort(numbered_episodes(100), SplitFractions{}, 5);
  EXPECT_NE(c.test, d.test);
}

TEST(SplitCohort, TooFewEpisodes) {
  try {
    split_cohort(numbered_episodes(9), SplitFractions{}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
  }
  EXPECT_THROW(split_cohort(numbered_episodes(20), SplitFractions{0.5, 0.5, 0.5}, 1), Error);
}

TEST(IngestEvents, GroupsSortsAndImputes) {
  std::vector<RawEvent> ev{event("B", "2150-01-01T10:05", Channel::HeartRate, "70"),
                           event("A", "2150-01-02T10:05", Channel::PainNumeric, "4"),
                           event("B", "2150-01-01T11:05", Channel::PainNumeric, "6"),
                           event("C", "2150-01-01T11:05", Channel::PainText, "unable")};
  const auto res = ingest_events(ev, DrugList::standard(), ImputeDefaults{}, 2);
  ASSERT_EQ(res.episodes.size(), 2u);
  EXPECT_EQ(res.episodes[0].admission_id, "A");
  EXPECT_EQ(res.episodes[1].admission_id, "B");
  EXPECT_EQ(res.stats.empty_admissions, 1u);
  EXPECT_EQ(res.stats.unparseable_pain, 1u);
  const auto& b = res.episodes[1].records;
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].pain, 0.0);
  EXPECT_EQ(b[1].hr, 70.0);
  EXPECT_EQ(b[1].rr, 16.0);
}

TEST(EventCsv, RoundTrip) {
  const auto cohort = generate_cohort(3, 12, "clinician", 2);
  for (const auto& ep : cohort) {
    const auto ev = ep.to_events(DrugList::standard());
    const std::string text = write_events_csv(ev);
    EXPECT_EQ(read_events_csv(text), ev);
  }
  EXPECT_THROW(read_events_csv("admission_id,timestamp\n"), Error);
}

TEST(EventCsv, MalformedRowsCounted) {
  const std::string text = std::string(kEventsMagic) + "\n" + std::string(kEventsColumns) +
                           "\nA,2150-01-01T00:00,heart_rate,,80\nA,2150-01-01T00:00,heart_rate\n,2150-01-01T00:00,"
                           "heart_rate,,80\n";
  IngestStats s;
  const auto ev = read_events_csv(text, &s);
  EXPECT_EQ(ev.size(), 1u);
  EXPECT_EQ(s.malformed_rows, 2u);
}

TEST(EpisodeFile, RoundTripWithMissing) {
  const DrugList drugs = DrugList::standard();
  std::vector<EpisodeLog> eps;
  const auto cohort = generate_cohort(4, 20, "clinician", 12);
  for (const auto& ep : cohort) eps.push_back({ep.admission_id, aggregate_hourly(ep.to_events(drugs), drugs)});
  const std::string text = write_episodes(eps, drugs);
  EXPECT_EQ(read_episodes(text), eps);
  EXPECT_NE(text.find("NA"), std::string::npos);
  EXPECT_THROW(read_episodes("garbage\n"), Error);
}
