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


#include <cmath>
#include <vector>

#include "catch_amalgamated.hpp"
#include "oracles/oracles.hpp"
#include "voxclass/network.hpp"
#include "voxclass/random.hpp"

using namespace voxclass;
using Catch::Approx;

namespace {

NetworkConfig tiny_config(HeadMode mode = HeadMode::dual, Dims3 dims = {8, 32, 32}) {
  NetworkConfig c;
  c.stage_widths = {2, 3, 3, 4};
  c.blocks_per_stage = {2, 1, 1, 1};
  c.stage_dropout = {0, 0, 0, 0};
  c.head_hidden = 5;
  c.head_dropout = 0;
  c.head_mode = mode;
  c.input_dims = dims;
  return c;
}

template <typename T>
nn::Tensor<T> random_batch(Rng& rng, std::size_t n, Dims3 d) {
  nn::Tensor<T> t({n, 1, d.depth, d.height, d.width});
  for (auto& v : t.values()) v = static_cast<T>(uniform01(rng));
  return t;
}

// Fixed linear functional of the head outputs, so its gradient is the
// coefficient vector itself.
struct Probe {
  std::vector<double> a;
  std::vector<std::array<double, 5>> b;

  double operator()(const HeadOutputs& h) const {
    double s = 0;
    for (std::size_t n = 0; n < h.batch; ++n) {
      if (h.x) s += a[n] * (*h.x)[n];
      if (h.z)
        for (int c = 0; c < 5; ++c) s += b[n][c] * (*h.z)[n][c];
    }
    return s;
  }
  HeadGradients grad(const HeadOutputs& h) const {
    HeadGradients g;
    g.batch = h.batch;
    if (h.x) g.x = a;
    if (h.z) g.z = b;
    return g;
  }
};

Probe random_probe(Rng& rng, std::size_t n) {
  Probe p;
  p.a.resize(n);
  p.b.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    p.a[i] = normal(rng);
    for (auto& v : p.b[i]) v = normal(rng);
  }
  return p;
}

}  // namespace

TEST_CASE("forward shapes per head mode") {
  NetworkConfig c;
  c.stage_widths = {4, 8, 8, 8};
  c.head_hidden = 16;
  c.input_dims = {16, 32, 32};
  Rng rng(1);
  const auto batch = random_batch<float>(rng, 2, c.input_dims);
  {
    Network<float> net(c, 3);
    const auto h = net.predict(batch);
    CHECK(h.batch == 2);
    REQUIRE(h.x);
    REQUIRE(h.z);
    CHECK(h.x->size() == 2);
    CHECK(h.z->size() == 2);
  }
  c.head_mode = HeadMode::covid_only;
  {
    Network<float> net(c, 3);
    const auto h = net.predict(batch);
    CHECK(h.x);
    CHECK_FALSE(h.z);
  }
  c.head_mode = HeadMode::severity_only;
  {
    Network<float> net(c, 3);
    const auto h = net.predict(batch);
    CHECK_FALSE(h.x);
    CHECK(h.z);
  }
  CHECK(head_units(HeadMode::dual) == 6);
  CHECK(head_units(HeadMode::covid_only) == 1);
  CHECK(head_units(HeadMode::severity_only) == 5);
}

TEST_CASE("construction is deterministic for a seed") {
  const auto c = tiny_config();
  Network<float> a(c, 11), b(c, 11), other(c, 12);
  auto pa = a.parameters(), pb = b.parameters(), po = other.parameters();
  REQUIRE(pa.size() == pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(pa[i]->value == pb[i]->value);
    differs = differs || pa[i]->value != po[i]->value;
  }
  CHECK(differs);
  CHECK(a.parameter_count() == b.parameter_count());
}

TEST_CASE("parameter count follows the configuration") {
  auto c = tiny_config();
  Network<float> net(c, 1);
  // stem: 2*1*3*7*7 + 2 BN pairs
  std::size_t want = 2 * 147 + 4;
  auto block = [](std::size_t in, std::size_t out, bool down) {
    std::size_t n = out * in * 27 + 2 * out + out * out * 27 + 2 * out;
    if (down) n += out * in + 2 * out;
    return n;
  };
  want += block(2, 2, false) + block(2, 2, false) + block(2, 3, true) + block(3, 3, true) + block(3, 4, true);
  want += 4 * 5 + 5 + 5 * 6 + 6;
  CHECK(net.parameter_count() == want);
}

TEST_CASE("input dims too small for the downsampling ladder") {
  auto c = tiny_config();
  c.input_dims = {4, 16, 16};
  try {
    Network<float> net(c, 1);
    FAIL("expected a configuration error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::configuration);
  }
  c = tiny_config();
  c.stage_dropout[1] = 1.0;
  CHECK_THROWS_AS(Network<float>(c, 1), Error);
  c = tiny_config();
  c.head_hidden = 0;
  CHECK_THROWS_AS(Network<float>(c, 1), Error);
}

TEST_CASE("forward rejects mismatched input") {
  Network<float> net(tiny_config(), 1);
  Rng rng(2);
  try {
    net.predict(random_batch<float>(rng, 1, {8, 32, 31}));
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
  }
}

TEST_CASE("eval mode is deterministic and ignores dropout") {
  auto c = tiny_config();
  Rng rng(4);
  const auto batch = random_batch<float>(rng, 2, c.input_dims);
  Network<float> plain(c, 9);
  c.stage_dropout = {0.5, 0.5, 0.5, 0.5};
  c.head_dropout = 0.5;
  Network<float> dropped(c, 9);
  const auto h1 = dropped.predict(batch);
  const auto h2 = dropped.predict(batch);
  CHECK(h1 == h2);
  CHECK(plain.predict(batch) == h1);
  // per-item results do not depend on batch companions
  const std::size_t item = c.input_dims.voxel_count();
  nn::Tensor<float> first({1, 1, 8, 32, 32});
  std::copy(batch.values().begin(), batch.values().begin() + item, first.values().begin());
  const auto single = dropped.predict(first);
  nn::Tensor<float> pair({2, 1, 8, 32, 32}, 0.25f);
  std::copy(first.values().begin(), first.values().end(), pair.values().begin());
  const auto both = dropped.predict(pair);
  CHECK((*single.x)[0] == (*both.x)[0]);
}

TEST_CASE("train mode dropout draws from the run generator") {
  auto c = tiny_config();
  c.head_dropout = 0.5;
  c.head_hidden = 32;
  Rng data(5);
  const auto batch = random_batch<float>(data, 2, c.input_dims);
  Network<float> net(c, 9);
  Rng r1(100), r2(100), r3(101);
  const auto a = net.forward(batch, {nn::Mode::train, &r1, false});
  const auto b = net.forward(batch, {nn::Mode::train, &r2, false});
  const auto d = net.forward(batch, {nn::Mode::train, &r3, false});
  CHECK(a == b);
  CHECK_FALSE(a == d);
  CHECK_THROWS_AS(net.forward(batch, {nn::Mode::train, nullptr, false}), Error);
}

TEST_CASE("backward matches central differences on a tiny double network") {
  for (auto mode : {HeadMode::dual, HeadMode::covid_only, HeadMode::severity_only}) {
    const auto c = tiny_config(mode);
    Network<double> net(c, 21);
    Rng rng(22);
    const auto batch = random_batch<double>(rng, 2, c.input_dims);
    const auto probe = random_probe(rng, 2);
    Rng drop(0);
    const nn::ForwardContext rec{nn::Mode::train, &drop, true};
    const nn::ForwardContext fwd{nn::Mode::train, &drop, false};

    net.zero_grad();
    const auto h = net.forward(batch, rec);
    net.backward(probe.grad(h));

    // every parameter tensor gets a coordinate, plus extra random ones
    std::vector<std::pair<nn::Param<double>*, std::size_t>> picks;
    auto params = net.parameters();
    for (auto* p : params) picks.emplace_back(p, uniform_index(rng, p->size()));
    for (int i = 0; i < 20; ++i) {
      auto* p = params[uniform_index(rng, params.size())];
      picks.emplace_back(p, uniform_index(rng, p->size()));
    }
    oracle::OracleReport report{"network backward", 0, 0, 0, 0, 1e-3};
    for (auto [p, k] : picks) {
      const double saved = p->value[k];
      auto f = [&](const std::vector<double>& v) {
        p->value[k] = v[0];
        const double out = probe(net.forward(batch, fwd));
        p->value[k] = saved;
        return out;
      };
      // a 1e-3 step moves enough pre-activations across ReLU kinks to bias
      // the estimate by a few percent; 1e-6 stays on one linear piece
      const double num = oracle::oracle_grad(f, {saved}, 1e-6)[0];
      report.record(p->grad[k], num, 1e-3);
      INFO(p->name << "[" << k << "] analytic " << p->grad[k] << " numeric " << num);
      CHECK(std::abs(p->grad[k] - num) / std::max({std::abs(num), std::abs(p->grad[k]), 1e-3}) < 1e-3);
    }
    INFO(report);
    CHECK(report.ok());
  }
}

TEST_CASE("backward edge cases") {
  const auto c = tiny_config();
  Network<double> net(c, 31);
  Rng rng(32);
  const auto batch = random_batch<double>(rng, 2, c.input_dims);
  CHECK_THROWS_AS(net.backward(HeadGradients{}), Error);

  Rng drop(0);
  net.zero_grad();
  auto h = net.forward(batch, {nn::Mode::train, &drop, true});
  HeadGradients zero;
  zero.batch = 2;
  zero.x = std::vector<double>(2, 0.0);
  zero.z = std::vector<std::array<double, 5>>(2, std::array<double, 5>{});
  net.backward(zero);
  for (auto* p : net.parameters())
    for (double g : p->grad) CHECK(g == 0.0);

  // a second backward needs a fresh forward
  CHECK_THROWS_AS(net.backward(zero), Error);

  // only the covid logit is probed: severity-only output weights get no gradient
  net.zero_grad();
  h = net.forward(batch, {nn::Mode::train, &drop, true});
  HeadGradients gx = zero;
  gx.x = std::vector<double>{1.0, -0.5};
  net.backward(gx);
  for (auto* p : net.parameters()) {
    if (p->name != "fc.3.weight") continue;
    // row 0 is the covid unit; rows 1..5 feed severity logits only
    for (std::size_t i = c.head_hidden; i < p->size(); ++i) CHECK(p->grad[i] == 0.0);
  }
}

TEST_CASE("adapt_first_conv sums over input channels") {
  WeightTensor ones({8, 3, 3, 7, 7}, 1.0f);
  const auto threes = adapt_first_conv(ones);
  for (float v : threes.values()) CHECK(v == 3.0f);
  CHECK(adapt_first_conv(ones).shape() == nn::Shape{8, 1, 3, 7, 7});
  WeightTensor zeros({8, 3, 3, 7, 7}, 0.0f);
  const auto folded_zeros = adapt_first_conv(zeros);
  for (float v : folded_zeros.values()) CHECK(v == 0.0f);

  Rng rng(61);
  WeightTensor w({4, 3, 2, 3, 3});
  for (auto& v : w.values()) v = static_cast<float>(normal(rng));
  const auto a = adapt_first_conv(w);
  bool exact = true;
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t k = 0; k < 18; ++k) {
      float s = 0.0f;
      for (std::size_t ch = 0; ch < 3; ++ch) s += w[(o * 3 + ch) * 18 + k];
      exact = exact && a[o * 18 + k] == s;
    }
  CHECK(exact);
  CHECK_THROWS_AS(adapt_first_conv(WeightTensor({4, 1, 3, 3, 3})), Error);
}

TEST_CASE("adapt_first_conv preserves the response to replicated grayscale input") {
  Rng rng(62);
  nn::Conv3d<double> rgb("rgb", 3, 4, {3, 7, 7}, {1, 2, 2}, {1, 3, 3});
  nn::Conv3d<double> gray("gray", 1, 4, {3, 7, 7}, {1, 2, 2}, {1, 3, 3});
  WeightTensor w({4, 3, 3, 7, 7});
  for (auto& v : w.values()) v = static_cast<float>(normal(rng) * 0.1);
  for (std::size_t i = 0; i < w.size(); ++i) rgb.weight.value[i] = w[i];
  const auto folded = adapt_first_conv(w);
  for (std::size_t i = 0; i < folded.size(); ++i) gray.weight.value[i] = folded[i];

  nn::Tensor<double> x1({1, 1, 5, 12, 12});
  for (auto& v : x1.values()) v = uniform01(rng);
  nn::Tensor<double> x3({1, 3, 5, 12, 12});
  for (std::size_t ch = 0; ch < 3; ++ch) std::copy(x1.values().begin(), x1.values().end(), x3.data() + ch * x1.size());
  const nn::ForwardContext ctx;
  const auto y3 = rgb.forward(x3, ctx);
  const auto y1 = gray.forward(x1, ctx);
  REQUIRE(y3.shape() == y1.shape());
  for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == Approx(y3[i]).margin(1e-5));

  Network<float> net(tiny_config(), 1);
  WeightTensor stem({2, 3, 3, 7, 7}, 0.5f);
  net.load_stem_weights(stem);
  CHECK(net.parameters()[0]->value[0] == 1.5f);
  CHECK_THROWS_AS(net.load_stem_weights(WeightTensor({3, 3, 3, 7, 7})), Error);
}
