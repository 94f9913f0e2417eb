#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "mmca/model.hpp"
#include "model_test_util.hpp"
#include "reference_model.hpp"

using namespace mmca;
using mmca::test::random_window;
using mmca::test::tiny_config;

namespace {

ForwardResult run_forward(const std::vector<NormalizedWindow>& windows,
                          const ModelParams& params, const ModelConfig& c,
                          BatchInput* keep_input = nullptr) {
  std::vector<const NormalizedWindow*> ptrs;
  for (const auto& w : windows) ptrs.push_back(&w);
  BatchInput in = make_batch(ptrs, c);
  std::mt19937_64 rng(0);
  auto out = forward_model(in, params, c, /*train=*/false, rng);
  if (keep_input) *keep_input = in;
  return out;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("default config hidden dimension is 108 split over 4 heads") {
  ModelConfig c;
  c.n_segments = 5;
  CHECK(c.d_hidden() == 108);
  CHECK(c.d_hidden() % c.heads == 0);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config validation rejects bad settings") {
  ModelConfig c = tiny_config();
  c.heads = 5;  // 16 % 5 != 0
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.n_segments = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("forward output shapes and head ranges") {
  ModelConfig c = tiny_config(5);
  auto params = init_params(c, 1);
  std::mt19937_64 rng(2);
  std::vector<NormalizedWindow> ws{random_window(c, rng), random_window(c, rng),
                                   random_window(c, rng)};
  auto out = run_forward(ws, params, c);
  CHECK(out.mean.shape() == Shape{3, 5, 4});
  CHECK(out.scale2.shape() == Shape{3, 5, 4});
  CHECK(out.df.shape() == Shape{3, 5, 4});
  for (double v : out.scale2.data()) CHECK(v > 0.0);
  for (double v : out.df.data()) CHECK(v >= 2.0);
  REQUIRE(out.scores.layers.size() == 2);
  CHECK(out.scores.layers[0].spatial_self.shape() == Shape{3, 4, 2, 5, 5});
  CHECK(out.scores.layers[0].spatial_cross.shape() == Shape{3, 4, 2, 5, 5});
  CHECK(out.scores.layers[0].temporal_self.shape() == Shape{3, 5, 2, 4, 4});
}

TEST_CASE("attention score rows sum to one") {
  ModelConfig c = tiny_config(5);
  auto params = init_params(c, 3);
  std::mt19937_64 rng(4);
  std::vector<NormalizedWindow> ws{random_window(c, rng), random_window(c, rng)};
  auto out = run_forward(ws, params, c);
  for (const auto& layer : out.scores.layers)
    for (const Tensor* t : {&layer.spatial_self, &layer.spatial_cross,
                            &layer.temporal_self, &layer.temporal_cross}) {
      REQUIRE(t->defined());
      const Shape& s = t->shape();
      int sk = s.back();
      int rows = t->numel() / sk;
      for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int j = 0; j < sk; ++j) acc += t->data()[r * sk + j];
        CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
}

TEST_CASE("single-token attention returns the projected value") {
  // with one key, softmax is 1 and attention reduces to V . Wo regardless of
  // the query; spatial attention over N=1 must therefore be input-independent
  // in its mixing (scores identically 1).
  ModelConfig c = tiny_config(1);
  auto params = init_params(c, 5);
  std::mt19937_64 rng(6);
  std::vector<NormalizedWindow> ws{random_window(c, rng)};
  auto out = run_forward(ws, params, c);
  for (const auto& layer : out.scores.layers) {
    for (double v : layer.spatial_self.data())
      CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
    for (double v : layer.spatial_cross.data())
      CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("H=1 temporal attention scores are all one") {
  ModelConfig c = tiny_config(3);
  c.H = 1;
  c.steps_per_day = c.H + c.F;
  auto params = init_params(c, 7);
  std::mt19937_64 rng(8);
  std::vector<NormalizedWindow> ws{random_window(c, rng)};
  auto out = run_forward(ws, params, c);
  for (const auto& layer : out.scores.layers)
    for (double v : layer.temporal_self.data())
      CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("batched forward matches the straight-line reference") {
  ModelConfig c = tiny_config(4);
  auto params = init_params(c, 11);
  std::mt19937_64 rng(12);
  std::vector<NormalizedWindow> ws{random_window(c, rng), random_window(c, rng),
                                   random_window(c, rng)};
  auto out = run_forward(ws, params, c);
  for (size_t b = 0; b < ws.size(); ++b) {
    auto ref = mmca::test::ref_forward(ws[b], params, c);
    for (int n = 0; n < c.n_segments; ++n)
      for (int f = 0; f < c.F; ++f) {
        size_t i = (b * c.n_segments + n) * c.F + f;
        CHECK(std::abs(out.mean.data()[i] - ref.mean[n][f]) < 1e-10);
        CHECK(std::abs(out.scale2.data()[i] - ref.scale2[n][f]) < 1e-10);
        CHECK(std::abs(out.df.data()[i] - ref.df[n][f]) < 1e-10);
      }
  }
}

TEST_CASE("reference agreement holds for every ablation variant") {
  std::mt19937_64 rng(13);
  for (int variant = 0; variant < 5; ++variant) {
    ModelConfig c = tiny_config(3);
    if (variant == 1) c.use_temporal = false;
    if (variant == 2) c.use_spatial = false;
    if (variant == 3) c.use_cross_attention = false;
    if (variant == 4) c.use_micro = false;
    auto params = init_params(c, 17 + variant);
    std::vector<NormalizedWindow> ws{random_window(c, rng)};
    auto out = run_forward(ws, params, c);
    auto ref = mmca::test::ref_forward(ws[0], params, c);
    for (int n = 0; n < c.n_segments; ++n)
      for (int f = 0; f < c.F; ++f) {
        size_t i = size_t(n) * c.F + f;
        CHECK(std::abs(out.mean.data()[i] - ref.mean[n][f]) < 1e-10);
      }
  }
}

TEST_CASE("masking a micro feature channel matches zeroing the input") {
  ModelConfig c = tiny_config(3);
  c.micro_feature_mask[2] = false;
  auto params = init_params(c, 19);
  std::mt19937_64 rng(20);
  std::vector<NormalizedWindow> ws{random_window(c, rng)};
  auto masked = run_forward(ws, params, c);

  ModelConfig c2 = c;
  c2.micro_feature_mask.fill(true);
  auto zeroed = ws;
  for (size_t i = 0; i < zeroed[0].micro.size(); ++i)
    if (i % kNumMicro == 2) zeroed[0].micro[i] = 0.0;
  auto out2 = run_forward(zeroed, params, c2);
  for (size_t i = 0; i < masked.mean.data().size(); ++i)
    CHECK(masked.mean.data()[i] == out2.mean.data()[i]);
}

TEST_CASE("without the micro stream, micro inputs are ignored") {
  ModelConfig c = tiny_config(3);
  c.use_micro = false;
  auto params = init_params(c, 23);
  std::mt19937_64 rng(24);
  std::vector<NormalizedWindow> ws{random_window(c, rng)};
  auto base = run_forward(ws, params, c);
  auto perturbed = ws;
  for (auto& v : perturbed[0].micro) v = 1.0 - v;
  auto out2 = run_forward(perturbed, params, c);
  for (size_t i = 0; i < base.mean.data().size(); ++i)
    CHECK(base.mean.data()[i] == out2.mean.data()[i]);
}

TEST_CASE("segment permutation only permutes adaptive-embedding identity") {
  // With the per-segment adaptive embedding zeroed, spatial attention treats
  // segments as a set: permuting segments permutes outputs.
  ModelConfig c = tiny_config(4);
  c.use_temporal = false;
  auto params = init_params(c, 29);
  for (auto& [name, t] : params.entries())
    if (name == "embed.macro.adp" || name == "embed.micro.adp")
      std::fill(t.data().begin(), t.data().end(), 0.0);
  std::mt19937_64 rng(30);
  std::vector<NormalizedWindow> ws{random_window(c, rng)};

  std::vector<int> perm{2, 0, 3, 1};
  auto permuted = ws;
  for (int t = 0; t < c.H; ++t)
    for (int n = 0; n < c.n_segments; ++n) {
      for (int f = 0; f < kNumMacro; ++f)
        permuted[0].macro[(size_t(t) * 4 + n) * kNumMacro + f] =
            ws[0].macro[(size_t(t) * 4 + perm[n]) * kNumMacro + f];
      for (int f = 0; f < kNumMicro; ++f)
        permuted[0].micro[(size_t(t) * 4 + n) * kNumMicro + f] =
            ws[0].micro[(size_t(t) * 4 + perm[n]) * kNumMicro + f];
    }
  permuted[0].raw.macro = permuted[0].macro;
  permuted[0].raw.micro = permuted[0].micro;

  auto base = run_forward(ws, params, c);
  auto out2 = run_forward(permuted, params, c);
  for (int n = 0; n < 4; ++n)
    for (int f = 0; f < c.F; ++f)
      CHECK(out2.mean.data()[size_t(n) * c.F + f] ==
            doctest::Approx(base.mean.data()[size_t(perm[n]) * c.F + f])
                .epsilon(1e-10));
}

TEST_CASE("inference forward is deterministic") {
  ModelConfig c = tiny_config(3);
  auto params = init_params(c, 31);
  std::mt19937_64 rng(32);
  std::vector<NormalizedWindow> ws{random_window(c, rng)};
  auto a = run_forward(ws, params, c);
  auto b = run_forward(ws, params, c);
  for (size_t i = 0; i < a.mean.data().size(); ++i) {
    CHECK(a.mean.data()[i] == b.mean.data()[i]);
    CHECK(a.scale2.data()[i] == b.scale2.data()[i]);
    CHECK(a.df.data()[i] == b.df.data()[i]);
  }
}

TEST_CASE("init_params is seed-deterministic and seed-sensitive") {
  ModelConfig c = tiny_config(3);
  auto a = init_params(c, 5);
  auto b = init_params(c, 5);
  auto other = init_params(c, 6);
  REQUIRE(a.entries().size() == b.entries().size());
  bool differs = false;
  for (size_t i = 0; i < a.entries().size(); ++i) {
    const auto& ta = a.entries()[i].second;
    const auto& tb = b.entries()[i].second;
    for (size_t j = 0; j < ta.data().size(); ++j) {
      CHECK(ta.data()[j] == tb.data()[j]);
      differs = differs || ta.data()[j] != other.entries()[i].second.data()[j];
    }
  }
  CHECK(differs);
}

TEST_CASE("checkpoint round trip is bit identical") {
  ModelConfig c = tiny_config(3);
  c.use_cross_attention = false;
  auto params = init_params(c, 37);
  NormStats stats;
  for (int f = 0; f < kNumFeatures; ++f) {
    stats.min[f] = -0.5 * f;
    stats.max[f] = 10.0 + f;
  }
  std::string path = "ckpt_roundtrip_test.bin";
  save_checkpoint(path, c, params, stats);
  auto loaded = load_checkpoint(path);
  std::remove(path.c_str());

  CHECK(loaded.config.n_segments == c.n_segments);
  CHECK(loaded.config.use_cross_attention == false);
  CHECK(loaded.stats.min == stats.min);
  CHECK(loaded.stats.max == stats.max);
  REQUIRE(loaded.params.entries().size() == params.entries().size());
  for (size_t i = 0; i < params.entries().size(); ++i) {
    CHECK(loaded.params.entries()[i].first == params.entries()[i].first);
    const auto& a = params.entries()[i].second.data();
    const auto& b = loaded.params.entries()[i].second.data();
    REQUIRE(a.size() == b.size());
    for (size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
  }

  // loaded params produce the identical forward pass
  std::mt19937_64 rng(38);
  std::vector<NormalizedWindow> ws{random_window(c, rng)};
  auto base = run_forward(ws, params, c);
  auto again = run_forward(ws, loaded.params, loaded.config);
  for (size_t i = 0; i < base.mean.data().size(); ++i)
    CHECK(base.mean.data()[i] == again.mean.data()[i]);
}

TEST_CASE("attention CSV export has the documented header and sane rows") {
  ModelConfig c = tiny_config(2);
  c.layers = 1;
  auto params = init_params(c, 41);
  std::mt19937_64 rng(42);
  std::vector<NormalizedWindow> ws{random_window(c, rng)};
  auto out = run_forward(ws, params, c);
  std::string path = "attention_export_test.csv";
  export_attention_csv(path, out.scores);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "layer,kind,head,axis_index,query,key,score");
  int rows = 0;
  std::string line;
  while (std::getline(is, line)) ++rows;
  is.close();
  std::remove(path.c_str());
  // spatial: H groups * heads * N*N; temporal: N groups * heads * H*H; x2 for cross
  int expected = 2 * (c.H * c.heads * c.n_segments * c.n_segments) +
                 2 * (c.n_segments * c.heads * c.H * c.H);
  CHECK(rows == expected);
}

}  // TEST_SUITE
