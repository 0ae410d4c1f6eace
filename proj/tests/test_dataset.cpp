#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "lcsurv/dataset.hpp"
#include "support.hpp"

using namespace lcsurv;

namespace {

Dataset parse(const std::string& text, CsvSchema schema = {}) {
  std::istringstream in(text);
  return parse_csv(in, schema);
}

ErrorKind parse_error(const std::string& text, CsvSchema schema = {}) {
  try {
    parse(text, schema);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST(LoadCsv, ThreeRowsInFileOrder) {
  const auto ds = parse("time,event,x\n1,1,0.5\n2,1,-1\n3,0,0\n");
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.x_names, std::vector<std::string>{"x"});
  EXPECT_DOUBLE_EQ(ds.records[0].time, 1.0);
  EXPECT_DOUBLE_EQ(ds.records[1].x[0], -1.0);
  EXPECT_EQ(ds.records[2].event, 0);
  EXPECT_EQ(ds.n_events(), 2u);
}

TEST(LoadCsv, EventValueTwoNamesTheRow) {
  try {
    parse("time,event,x\n1,1,0\n2,2,0\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EventNotBinary);
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
}

TEST(LoadCsv, ErrorKinds) {
  EXPECT_EQ(parse_error("event,x\n1,0\n"), ErrorKind::MissingColumn);
  EXPECT_EQ(parse_error("time,event,x\n1,1,abc\n"), ErrorKind::NonNumericCell);
  EXPECT_EQ(parse_error("time,event,x\n1,1,\n"), ErrorKind::NonNumericCell);
  EXPECT_EQ(parse_error("time,event,x\n-1,1,0\n"), ErrorKind::NegativeTime);
  EXPECT_EQ(parse_error(""), ErrorKind::EmptyFile);
  EXPECT_EQ(parse_error("time,event,x\n"), ErrorKind::EmptyFile);
  EXPECT_EQ(parse_error("time,event,x\n1,0,1\n"), ErrorKind::NoEvents);
  CsvSchema s;
  s.x = {"age"};
  EXPECT_EQ(parse_error("time,event,x\n1,1,0\n", s), ErrorKind::MissingColumn);
}

TEST(LoadCsv, NonNumericReportsRowAndColumn) {
  try {
    parse("time,event,age\n1,1,3\n2,0,n/a\n");
    FAIL();
  } catch (const Error& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("row 2"), std::string::npos);
    EXPECT_NE(w.find("age"), std::string::npos);
  }
}

TEST(LoadCsv, RolesAndIdColumn) {
  CsvSchema s;
  s.id_col = "pid";
  s.x = {"age", "hb"};
  s.z = {"hb", "diabetes"};
  const auto ds = parse("pid,time,event,age,hb,diabetes\nA7,1.5,1,60,13.2,0\nB2,2.5,0,70,11.0,1\n", s);
  EXPECT_EQ(ds.records[0].id, "A7");
  EXPECT_EQ(ds.dim_x(), 2u);
  EXPECT_EQ(ds.dim_z(), 2u);
  EXPECT_DOUBLE_EQ(ds.records[1].z[1], 1.0);
  EXPECT_DOUBLE_EQ(ds.records[1].x[1], 11.0);
}

TEST(LoadCsv, ZDefaultsToXWhenRequested) {
  CsvSchema s;
  s.z_from_x = true;
  const auto ds = parse("time,event,a,b\n1,1,2,3\n", s);
  EXPECT_EQ(ds.z_names, ds.x_names);
  EXPECT_EQ(ds.records[0].z, ds.records[0].x);
}

TEST(LoadCsv, PaperShapedCohort) {
  std::ostringstream csv;
  csv << "time,event,age,haemoglobin,diabetes\n";
  Rng rng(3);
  for (int i = 0; i < 1796; ++i)
    csv << 10.0 * rng.uniform() << ',' << (rng.uniform() < 0.59 ? 1 : 0) << ',' << 50 + 30 * rng.uniform() << ','
        << 10 + 5 * rng.uniform() << ',' << (rng.uniform() < 0.3 ? 1 : 0) << '\n';
  const auto ds = parse(csv.str());
  EXPECT_EQ(ds.size(), 1796u);
  EXPECT_EQ(ds.x_names.size(), 3u);
}

TEST(Summarize, HandComputedOrderStatistics) {
  const auto ds = testkit::make_dataset({1, 2, 3, 4}, {1, 1, 1, 1}, {{5}, {5}, {5}, {5}});
  const auto s = summarize(ds);
  EXPECT_DOUBLE_EQ(s.time_median, 2.5);
  EXPECT_DOUBLE_EQ(s.time_q1, 1.75);
  EXPECT_DOUBLE_EQ(s.time_q3, 3.25);
  EXPECT_EQ(s.deaths, 4u);
  EXPECT_DOUBLE_EQ(s.death_percent, 100.0);
  ASSERT_EQ(s.variables.size(), 1u);
  EXPECT_DOUBLE_EQ(s.variables[0].sd, 0.0);
}

TEST(Summarize, BinaryCountsAndContinuousMoments) {
  const auto ds = testkit::make_dataset({1, 2, 3, 4}, {1, 0, 1, 0}, {{1, 2}, {0, 4}, {1, 6}, {1, 8}});
  const auto s = summarize(ds);
  EXPECT_TRUE(s.variables[0].binary);
  EXPECT_EQ(s.variables[0].count, 3u);
  EXPECT_DOUBLE_EQ(s.variables[0].percent, 75.0);
  EXPECT_FALSE(s.variables[1].binary);
  EXPECT_DOUBLE_EQ(s.variables[1].mean, 5.0);
  EXPECT_NEAR(s.variables[1].sd, std::sqrt(20.0 / 3.0), 1e-12);
  EXPECT_EQ(s.deaths, 2u);
}

TEST(Summarize, RoundTripThroughCsvIsIdentical) {
  const auto ds = testkit::random_dataset(60, 3, 17);
  std::stringstream buf;
  write_csv(buf, ds);
  CsvSchema schema;
  schema.id_col = "id";
  const auto back = parse_csv(buf, schema);
  const auto a = summarize(ds), b = summarize(back);
  EXPECT_EQ(a.time_median, b.time_median);
  EXPECT_EQ(a.deaths, b.deaths);
  ASSERT_EQ(a.variables.size(), b.variables.size());
  for (std::size_t i = 0; i < a.variables.size(); ++i) {
    EXPECT_EQ(a.variables[i].mean, b.variables[i].mean);
    EXPECT_EQ(a.variables[i].sd, b.variables[i].sd);
    EXPECT_EQ(a.variables[i].q3, b.variables[i].q3);
  }
  EXPECT_EQ(back.records[5].id, ds.records[5].id);
}

TEST(KFold, PaperFoldSizes) {
  auto sizes = kfold_split(1796, 10, 1).sizes();
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{179, 179, 179, 179, 180, 180, 180, 180, 180, 180}));
}

TEST(KFold, SingletonFolds) {
  const auto f = kfold_split(4, 4, 3);
  EXPECT_EQ(f.sizes(), (std::vector<std::size_t>{1, 1, 1, 1}));
}

TEST(KFold, Deterministic) {
  EXPECT_EQ(kfold_split(100, 7, 5).fold_of, kfold_split(100, 7, 5).fold_of);
  EXPECT_NE(kfold_split(100, 7, 5).fold_of, kfold_split(100, 7, 6).fold_of);
}

TEST(KFold, Errors) {
  EXPECT_THROW(kfold_split(3, 4, 1), Error);
  try {
    kfold_split(3, 4, 1);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::KTooLarge);
  }
  EXPECT_THROW(kfold_split(10, 1, 1), Error);
}

TEST(KFold, PartitionPropertyRandomized) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(19);
    const std::size_t n = k + rng.below(200);
    const auto f = kfold_split(n, k, rng());
    std::set<std::size_t> all;
    std::size_t total = 0;
    for (std::size_t fold = 0; fold < k; ++fold) {
      const auto m = f.members(fold);
      total += m.size();
      all.insert(m.begin(), m.end());
      const double target = static_cast<double>(n) / static_cast<double>(k);
      EXPECT_LT(std::abs(static_cast<double>(m.size()) - target), 1.0);
    }
    EXPECT_EQ(total, n);
    EXPECT_EQ(all.size(), n);
  }
}

TEST(Bootstrap, SingleRecord) {
  const auto ds = testkit::make_dataset({1}, {1}, {{2}});
  const auto b = bootstrap_sample(ds, 4);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b.records[0].id, ds.records[0].id);
}

TEST(Bootstrap, LengthPreservedAndDeterministic) {
  for (std::size_t n : {1u, 2u, 5u, 37u, 400u}) {
    const auto idx = bootstrap_indices(n, n);
    EXPECT_EQ(idx.size(), n);
    EXPECT_EQ(idx, bootstrap_indices(n, n));
    for (auto i : idx) EXPECT_LT(i, n);
  }
}

TEST(Bootstrap, DistinctFractionNearOneMinusInverseE) {
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto idx = bootstrap_indices(1796, s);
    sum += static_cast<double>(std::set<std::size_t>(idx.begin(), idx.end()).size()) / 1796.0;
  }
  EXPECT_NEAR(sum / 30.0, 1.0 - std::exp(-1.0), 0.03);
}

TEST(Quantile, TypeSevenRule) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.9), 7.0);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 1.0), 4.0);
}
