// Copyright 2026 The voxclass Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "catch_amalgamated.hpp"
#include "oracles/oracles.hpp"
#include "voxclass/metrics.hpp"
#include "voxclass/random.hpp"

using namespace voxclass;
using Catch::Approx;

namespace {

ScanRecord rec(const std::string& id, std::optional<bool> covid, std::optional<int> sev,
               Partition part = Partition::validation) {
  ScanRecord r;
  r.scan_id = id;
  r.partition = part;
  r.covid_label = covid;
  r.severity = sev;
  return r;
}

std::vector<int> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<int> v(n);
  for (auto& x : v) x = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(classes)));
  return v;
}

}  // namespace

TEST_CASE("macro F1 examples") {
  CHECK(macro_f1({1, 0, 1, 0}, {1, 0, 1, 0}, {1, 0}) == 1.0);
  const double m = macro_f1({1, 1, 0, 0}, {1, 0, 0, 0}, {1, 0});
  CHECK(fmt6(m) == "0.733333");
  const auto scores = class_scores(confusion({1, 1, 0, 0}, {1, 0, 0, 0}, {1, 0}));
  CHECK(scores[0].f1 == Approx(2.0 / 3.0).margin(1e-15));
  CHECK(scores[1].f1 == Approx(0.8).margin(1e-15));
  // one class predicted everywhere: P = 1/2, R = 1 for it; the other scores 0
  CHECK(macro_f1({1, 1, 0, 0}, {1, 1, 1, 1}, {1, 0}) == Approx(0.5 * (2 * 0.5 * 1 / 1.5)).margin(1e-15));
}

TEST_CASE("macro F1 counts declared classes that never appear") {
  CHECK(macro_f1({1, 1}, {1, 1}, {1, 2}) == 0.5);
  CHECK_THROWS_AS(macro_f1({}, {}, {0, 1}), Error);
  CHECK_THROWS_AS(macro_f1({0}, {0, 1}, {0, 1}), Error);
  CHECK_THROWS_AS(macro_f1({0}, {7}, {0, 1}), Error);
}

TEST_CASE("confusion matrix bookkeeping") {
  ConfusionMatrix m({1, 2, 3});
  m.add(1, 1);
  m.add(1, 2);
  m.add(3, 2);
  CHECK(m.total() == 3);
  CHECK(m.count(0, 1) == 1);
  CHECK(m.true_positives(0) == 1);
  CHECK(m.false_positives(1) == 2);
  CHECK(m.false_negatives(2) == 1);
}

TEST_CASE("macro F1 equals the enumerating oracle") {
  Rng rng(41);
  for (int i = 0; i < 1000; ++i) {
    const auto t = random_labels(rng, 20, 4), p = random_labels(rng, 20, 4);
    CHECK(macro_f1(t, p, {0, 1, 2, 3}) == oracle::oracle_f1(t, p, {0, 1, 2, 3}));
  }
  CHECK(oracle::oracle_f1({0, 1, 2}, {0, 1, 2}, {0, 1, 2}) == 1.0);
  CHECK(oracle::oracle_f1({0, 0, 1, 1}, {1, 1, 0, 0}, {0, 1}) == 0.0);
}

TEST_CASE("macro F1 is invariant under item permutation and label bijections") {
  Rng rng(43);
  for (int i = 0; i < 200; ++i) {
    auto t = random_labels(rng, 15, 4), p = random_labels(rng, 15, 4);
    const double base = macro_f1(t, p, {0, 1, 2, 3});
    const auto perm = random_permutation(rng, t.size());
    std::vector<int> tp, pp;
    for (auto k : perm) tp.push_back(t[k]), pp.push_back(p[k]);
    CHECK(macro_f1(tp, pp, {0, 1, 2, 3}) == Approx(base).margin(1e-15));
    const auto relabel = random_permutation(rng, 4);
    for (auto& v : tp) v = static_cast<int>(relabel[v]);
    for (auto& v : pp) v = static_cast<int>(relabel[v]);
    CHECK(macro_f1(tp, pp, {0, 1, 2, 3}) == Approx(base).margin(1e-15));
    CHECK(macro_f1(t, t, {0, 1, 2, 3}) == Approx(t.empty() ? 0 : 1.0 * std::set<int>(t.begin(), t.end()).size() / 4));
  }
}

TEST_CASE("task 2 on the published validation severity counts with one critical case called severe") {
  std::vector<ScanRecord> recs;
  std::map<std::string, LabelDecision> preds;
  const int counts[] = {22, 10, 22, 5};
  int k = 0;
  for (int sev = 1; sev <= 4; ++sev)
    for (int i = 0; i < counts[sev - 1]; ++i) {
      const auto id = "v" + std::to_string(k++);
      recs.push_back(rec(id, true, sev));
      preds[id] = {true, sev};
    }
  preds["v" + std::to_string(k - 1)].severity = 3;
  const auto r = evaluate_task2(AnnotationSet(recs), preds);
  // severe: P = 22/23, R = 1; critical: P = 1, R = 4/5
  const double f_severe = 2 * (22.0 / 23) * 1 / (22.0 / 23 + 1);
  const double f_critical = 2 * 1 * 0.8 / 1.8;
  CHECK(r.n_items == 59);
  CHECK(r.macro_f1 == Approx((1 + 1 + f_severe + f_critical) / 4).margin(1e-15));
  CHECK(fmt6(r.macro_f1) == "0.966667");
}

TEST_CASE("task 2 skips scans without severity") {
  std::vector<ScanRecord> recs{rec("a", true, 1), rec("b", true, 2), rec("c", true, 4), rec("d", true, std::nullopt),
                               rec("e", false, std::nullopt), rec("t", true, 3, Partition::train)};
  std::map<std::string, LabelDecision> preds{{"a", {true, 1}}, {"b", {true, 2}}, {"c", {true, 4}},
                                             {"d", {true, 3}}, {"e", {false, 2}}};
  const auto r = evaluate_task2(AnnotationSet(recs), preds);
  CHECK(r.n_items == 3);
  CHECK(r.per_class.size() == 4);
  // class 3 is declared but absent, so it scores 0
  CHECK(r.macro_f1 == 0.75);

  preds.erase("c");
  try {
    evaluate_task2(AnnotationSet(recs), preds);
    FAIL("expected a coverage error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::coverage);
    CHECK(std::string(e.what()).find("c") != std::string::npos);
  }
}

TEST_CASE("task 2 scores 1 when annotated scans are right even if others are wrong") {
  std::vector<ScanRecord> recs{rec("a", true, 1), rec("b", true, 2), rec("c", true, 3), rec("d", true, 4),
                               rec("x", true, std::nullopt), rec("y", true, std::nullopt)};
  std::map<std::string, LabelDecision> preds{{"a", {true, 1}}, {"b", {true, 2}}, {"c", {true, 3}},
                                             {"d", {true, 4}}, {"x", {false, 1}}, {"y", {true, 4}}};
  CHECK(evaluate_task2(AnnotationSet(recs), preds).macro_f1 == 1.0);
}

TEST_CASE("task 1 uses every labeled scan of the partition") {
  std::vector<ScanRecord> recs{rec("a", true, 1), rec("b", true, std::nullopt), rec("c", false, std::nullopt),
                               rec("d", false, std::nullopt), rec("t", true, 1, Partition::train),
                               rec("u", std::nullopt, std::nullopt, Partition::test)};
  std::map<std::string, LabelDecision> preds{{"a", {true, 1}}, {"b", {false, 1}}, {"c", {false, 1}}, {"d", {false, 1}}};
  const auto r = evaluate_task1(AnnotationSet(recs), preds);
  CHECK(r.n_items == 4);
  CHECK(fmt6(r.macro_f1) == "0.733333");
  CHECK(r.macro_f1 == Approx(std::accumulate(r.per_class.begin(), r.per_class.end(), 0.0,
                                             [](double s, const ClassScore& c) { return s + c.f1; }) /
                             2));
}

TEST_CASE("report formats") {
  std::vector<ScanRecord> recs{rec("a", true, 1), rec("b", false, std::nullopt)};
  std::map<std::string, LabelDecision> preds{{"a", {true, 1}}, {"b", {false, 1}}};
  const auto r = evaluate_task1(AnnotationSet(recs), preds);
  const auto kv = format_report_kv(r);
  CHECK(kv.find("task=presence\n") != std::string::npos);
  CHECK(kv.find("macro_f1=1.000000\n") != std::string::npos);
  CHECK(kv.find("class_0.support=1\n") != std::string::npos);
  const auto table = format_report_table(r);
  CHECK(table.find("macro_f1: 1.000000") != std::string::npos);
}
