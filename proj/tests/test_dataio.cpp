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
#include <cstring>
#include <limits>
#include <numeric>

#include "catch_amalgamated.hpp"
#include "test_support.hpp"
#include "voxclass/dataset.hpp"
#include "voxclass/jpeg.hpp"
#include "voxclass/random.hpp"
#include "voxclass/synthetic.hpp"
#include "voxclass/volume_file.hpp"

using namespace voxclass;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

void write_gray_jpeg(const fs::path& path, std::size_t h, std::size_t w, std::uint8_t value) {
  std::vector<std::uint8_t> px(h * w, value);
  const auto bytes = encode_jpeg(px, h, w, 1, 100);
  fs::create_directories(path.parent_path());
  write_file_atomic(path, bytes);
}

void make_scan(const fs::path& root, const std::string& part, const std::string& group, const std::string& id) {
  write_gray_jpeg(root / part / group / id / "1.jpg", 16, 16, 90);
}

void make_partitions(const fs::path& root) {
  for (auto p : {"train", "validation", "test"}) fs::create_directories(root / p);
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::state;
}

}  // namespace

TEST_CASE("scan_dataset counts a hand-built tree") {
  TempDir dir("scan");
  make_partitions(dir.path());
  for (int i = 0; i < 4; ++i) {
    make_scan(dir.path(), "train", "covid", "p" + std::to_string(i));
    make_scan(dir.path(), "train", "non-covid", "n" + std::to_string(i));
  }
  const auto set = scan_dataset(dir.path());
  CHECK(set.size() == 8);
  CHECK(set.counts(Partition::train).positive == 4);
  CHECK(set.counts(Partition::train).negative == 4);
  CHECK(set.counts(Partition::validation).total() == 0);
  for (const auto& r : set.records()) CHECK_FALSE(r.severity.has_value());
}

TEST_CASE("scan_dataset merges the severity table") {
  TempDir dir("sev");
  make_partitions(dir.path());
  for (auto id : {"a", "b", "c"}) make_scan(dir.path(), "validation", "covid", id);
  make_scan(dir.path(), "validation", "non-covid", "d");
  make_scan(dir.path(), "test", "unlabeled", "t");
  testing_support::spit(dir / "severity.csv", "scan_id,partition,severity\na,validation,3\nc,validation,3\n");
  const auto set = scan_dataset(dir.path());
  CHECK(set.find("a")->severity == 3);
  CHECK(set.find("c")->severity == 3);
  CHECK_FALSE(set.find("b")->severity);
  CHECK_FALSE(set.find("d")->severity);
  CHECK_FALSE(set.find("t")->covid_label);
  CHECK(set.counts(Partition::validation).severity[2] == 2);
  CHECK(set.counts(Partition::validation).positive_without_severity == 1);
  CHECK(set.counts(Partition::test).unlabeled == 1);

  testing_support::spit(dir / "severity.csv", "scan_id,partition,severity\nzz,validation,1\n");
  CHECK(kind_of([&] { scan_dataset(dir.path()); }) == ErrorKind::integrity);
  // a severity for a negative scan breaks the record invariant
  testing_support::spit(dir / "severity.csv", "scan_id,partition,severity\nd,validation,1\n");
  CHECK(kind_of([&] { scan_dataset(dir.path()); }) == ErrorKind::integrity);
  testing_support::spit(dir / "severity.csv", "scan_id,partition,severity\na,validation,7\n");
  CHECK(kind_of([&] { scan_dataset(dir.path()); }) == ErrorKind::format);
}

TEST_CASE("scan_dataset structural and integrity errors") {
  TempDir dir("bad");
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "validation");
  CHECK(kind_of([&] { scan_dataset(dir.path()); }) == ErrorKind::structural);
  fs::create_directories(dir / "test");
  make_scan(dir.path(), "train", "covid", "dup");
  make_scan(dir.path(), "validation", "non-covid", "dup");
  CHECK(kind_of([&] { scan_dataset(dir.path()); }) == ErrorKind::integrity);
  CHECK(kind_of([&] { scan_dataset(dir / "nowhere"); }) == ErrorKind::structural);
}

TEST_CASE("AnnotationSet invariants") {
  ScanRecord bad{"x", Partition::train, false, 2};
  CHECK(kind_of([&] { AnnotationSet({bad}); }) == ErrorKind::integrity);
  ScanRecord a{"a", Partition::train, true, 1}, b{"a", Partition::test, std::nullopt, std::nullopt};
  CHECK(kind_of([&] { AnnotationSet({a, b}); }) == ErrorKind::integrity);
  const AnnotationSet set({ScanRecord{"z", Partition::train, true, 4}, ScanRecord{"m", Partition::train, false, {}}});
  CHECK(set.records().front().scan_id == "m");
  CHECK(set.counts(Partition::train).severity[3] == 1);
  CHECK(set.find("q") == nullptr);
}

TEST_CASE("annotations table round-trips") {
  const AnnotationSet set({ScanRecord{"a", Partition::train, true, 2}, ScanRecord{"b", Partition::validation, false, {}},
                           ScanRecord{"c", Partition::test, std::nullopt, std::nullopt},
                           ScanRecord{"d", Partition::train, true, std::nullopt}});
  const auto text = format_annotations(set);
  CHECK(parse_annotations(text, "mem").records() == set.records());
  CHECK(kind_of([&] { parse_annotations("scan_id,partition\n", "mem"); }) == ErrorKind::format);
  CHECK(kind_of([&] { parse_annotations("scan_id,partition,covid_label,severity\na,train,2,\n", "mem"); }) ==
        ErrorKind::format);
}

TEST_CASE("load_slice_stack sorts numerically") {
  TempDir dir("stack");
  const auto scan = dir / "s1";
  write_gray_jpeg(scan / "10.jpg", 32, 32, 30);
  write_gray_jpeg(scan / "2.jpg", 32, 32, 200);
  write_gray_jpeg(scan / "1.jpg", 32, 32, 120);
  testing_support::spit(scan / "notes.txt", "ignored");
  const auto vol = load_slice_stack(scan);
  CHECK(vol.scan_id == "s1");
  REQUIRE(vol.voxels.dims == (Dims3{3, 32, 32}));
  CHECK(std::abs(int(vol.voxels.at(0, 5, 5)) - 120) <= 2);
  CHECK(std::abs(int(vol.voxels.at(1, 5, 5)) - 200) <= 2);
  CHECK(std::abs(int(vol.voxels.at(2, 5, 5)) - 30) <= 2);

  const auto one = dir / "s2";
  write_gray_jpeg(one / "7.jpg", 9, 12, 50);
  CHECK(load_slice_stack(one).voxels.dims == (Dims3{1, 9, 12}));
}

TEST_CASE("load_slice_stack ignores enumeration order") {
  TempDir dir("order");
  Rng rng(77);
  std::vector<std::uint8_t> values(12);
  for (auto& v : values) v = static_cast<std::uint8_t>(uniform_index(rng, 256));
  std::vector<Grid3<std::uint8_t>> results;
  for (int trial = 0; trial < 4; ++trial) {
    const auto scan = dir / ("t" + std::to_string(trial));
    const auto order = random_permutation(rng, values.size());
    for (auto i : order) write_gray_jpeg(scan / (std::to_string(i * 3 + 1) + ".jpg"), 8, 8, values[i]);
    results.push_back(load_slice_stack(scan).voxels);
  }
  for (const auto& r : results) CHECK(r == results.front());
}

TEST_CASE("load_slice_stack errors") {
  TempDir dir("stackerr");
  write_gray_jpeg(dir / "mixed" / "1.jpg", 64, 64, 10);
  write_gray_jpeg(dir / "mixed" / "2.jpg", 32, 32, 10);
  CHECK(kind_of([&] { load_slice_stack(dir / "mixed"); }) == ErrorKind::shape);

  write_gray_jpeg(dir / "broken" / "1.jpg", 16, 16, 10);
  testing_support::spit(dir / "broken" / "2.jpg", "definitely not a jpeg");
  try {
    load_slice_stack(dir / "broken");
    FAIL("expected a decode error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::decode);
    CHECK(std::string(e.what()).find("2.jpg") != std::string::npos);
  }

  write_gray_jpeg(dir / "tiny" / "1.jpg", 4, 4, 10);
  CHECK(kind_of([&] { load_slice_stack(dir / "tiny"); }) == ErrorKind::shape);
  fs::create_directories(dir / "empty");
  CHECK(kind_of([&] { load_slice_stack(dir / "empty"); }) == ErrorKind::structural);
}

TEST_CASE("color slices are reduced by luma") {
  TempDir dir("color");
  std::vector<std::uint8_t> rgb(16 * 16 * 3);
  for (std::size_t i = 0; i < 256; ++i) {
    rgb[3 * i] = 200;
    rgb[3 * i + 1] = 100;
    rgb[3 * i + 2] = 50;
  }
  fs::create_directories(dir / "c");
  write_file_atomic(dir / "c" / "1.jpg", encode_jpeg(rgb, 16, 16, 3, 100));
  const auto vol = load_slice_stack(dir / "c");
  const int luma = static_cast<int>(std::lround(0.299 * 200 + 0.587 * 100 + 0.114 * 50));
  CHECK(std::abs(int(vol.voxels.at(0, 8, 8)) - luma) <= 3);
  CHECK(detail::rec601_luma(255, 255, 255) == 255);
  CHECK(detail::rec601_luma(0, 0, 0) == 0);
}

TEST_CASE("volume files round-trip bit-exactly") {
  TempDir dir("vol");
  Rng rng(91);
  for (int t = 0; t < 20; ++t) {
    Volume v({1 + uniform_index(rng, 4), 1 + uniform_index(rng, 8), 1 + uniform_index(rng, 8)});
    for (auto& x : v.data) x = static_cast<float>(normal(rng) * std::pow(10.0, uniform(rng, -30, 30)));
    v.data[0] = -0.0f;
    v.data.back() = std::numeric_limits<float>::denorm_min();
    const auto path = dir / ("v" + std::to_string(t) + ".c3d");
    write_volume_file(v, path);
    const auto back = read_volume_file(path);
    CHECK(back.scan_id == "v" + std::to_string(t));
    REQUIRE(back.voxels.dims == v.dims);
    CHECK(std::memcmp(back.voxels.data.data(), v.data.data(), v.data.size() * 4) == 0);
  }
  Volume v({4, 8, 8});
  for (auto& x : v.data) x = static_cast<float>(uniform01(rng));
  const auto bytes = encode_volume(v);
  CHECK(bytes.size() == 8 + 12 + 4 * 256);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "COV3DV01");
  CHECK(bytes[8] == 4);  // little-endian depth
  CHECK(decode_volume(bytes) == v);
}

TEST_CASE("volume file errors") {
  std::vector<std::uint8_t> bad(8 + 12 + 32, 0);
  std::memcpy(bad.data(), "XXXXXXXX", 8);
  CHECK(kind_of([&] { decode_volume(bad); }) == ErrorKind::format);

  std::vector<std::uint8_t> shortp;
  put_bytes(shortp, "COV3DV01");
  for (int i = 0; i < 3; ++i) put_u32(shortp, 2);
  for (int i = 0; i < 7; ++i) put_f32(shortp, 0.5f);
  CHECK(kind_of([&] { decode_volume(shortp); }) == ErrorKind::length);
  put_f32(shortp, 0.5f);
  CHECK_NOTHROW(decode_volume(shortp));
  put_f32(shortp, 0.5f);
  CHECK(kind_of([&] { decode_volume(shortp); }) == ErrorKind::length);

  Volume v({1, 1, 2});
  v.data[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK(kind_of([&] { encode_volume(v); }) == ErrorKind::numeric);
}

TEST_CASE("synthetic generator is deterministic and complete") {
  TempDir a("gen-a"), b("gen-b"), c("gen-c");
  SyntheticSpec spec;
  spec.n_scans_per_class = 5;
  spec.depth = {4, 6};
  spec.height = {16, 20};
  spec.width = {16, 20};
  const auto set_a = generate_synthetic_dataset(spec, a.path());
  const auto set_b = generate_synthetic_dataset(spec, b.path());
  CHECK(set_a.size() == 25);
  CHECK(testing_support::tree_contents(a.path()) == testing_support::tree_contents(b.path()));
  spec.seed = 8;
  generate_synthetic_dataset(spec, c.path());
  CHECK(testing_support::tree_contents(a.path()) != testing_support::tree_contents(c.path()));

  // re-indexing the written tree reproduces the manifest
  CHECK(scan_dataset(a.path()).records() == set_a.records());
  CHECK(set_a.counts(Partition::train).positive == 12);
  CHECK(set_a.counts(Partition::train).negative == 3);
  CHECK(set_a.counts(Partition::validation).total() == 10);
}

TEST_CASE("synthetic severity withholding and the test partition") {
  TempDir dir("gen-test");
  SyntheticSpec spec;
  spec.n_scans_per_class = 10;
  spec.n_test_per_class = 1;
  spec.depth = {2, 3};
  spec.height = {12, 12};
  spec.width = {12, 12};
  const auto set = generate_synthetic_dataset(spec, dir.path());
  const auto& train = set.counts(Partition::train);
  // six training scans per class, one positive per class without severity
  CHECK(train.positive_without_severity == 4);
  CHECK(train.severity == std::array<std::size_t, 4>{5, 5, 5, 5});
  CHECK(set.counts(Partition::validation).positive_without_severity == 0);
  CHECK(set.counts(Partition::test).unlabeled == 5);
  CHECK(scan_dataset(dir.path()).records() == set.records());
}

TEST_CASE("synthetic intensity grows with severity") {
  SyntheticSpec spec;
  Rng rng(1234);
  std::array<double, 5> mean{};
  for (int cls = 0; cls <= 4; ++cls) {
    for (int i = 0; i < 20; ++i) {
      const auto v = render_synthetic_scan(spec, cls, rng, "x");
      const double s = std::accumulate(v.voxels.data.begin(), v.voxels.data.end(), 0.0);
      mean[cls] += s / static_cast<double>(v.voxels.data.size()) / 20.0;
    }
  }
  INFO(mean[0] << " " << mean[1] << " " << mean[2] << " " << mean[3] << " " << mean[4]);
  CHECK(mean[4] > mean[1]);
  for (int c = 1; c <= 4; ++c) CHECK(mean[c] > mean[c - 1]);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec spec;
  spec.n_scans_per_class = 0;
  CHECK(kind_of([&] { validate(spec); }) == ErrorKind::parameter);
  spec = SyntheticSpec{};
  spec.height = {4, 6};
  CHECK(kind_of([&] { validate(spec); }) == ErrorKind::parameter);
}
