#include <cmath>
#include <vector>

#include "mcover/encoder.hpp"
#include "mcover/nn/random.hpp"
#include "test_helpers.hpp"

using namespace mcover;

namespace {

EncoderConfig tiny() {
  EncoderConfig c;
  c.kernels = 2;
  c.embedding_dim = 8;
  return c;
}

PreprocessedInput random_input(nn::Rng& rng, std::string id) {
  PreprocessedInput in;
  in.values = MatrixF(kInputFrames, kInputBins);
  for (auto& v : in.values.values()) v = static_cast<float>(rng.uniform());
  in.track_id = std::move(id);
  return in;
}

double row_norm(const nn::Tensor<float>& t, std::size_t r) {
  double s = 0.0;
  for (std::size_t k = 0; k < t.dim(1); ++k) s += static_cast<double>(t[r * t.dim(1) + k]) * t[r * t.dim(1) + k];
  return std::sqrt(s);
}

}  // namespace

// Frozen from tests/oracles/param_count.py (independent layer arithmetic).
TEST_CASE("trainable parameter count matches the arithmetic oracle") {
  CHECK(EncoderParams<float>::zeros(EncoderConfig{}).trainable_count() == 6796162);
  CHECK(EncoderParams<float>::zeros(tiny()).trainable_count() == 6526);
  EncoderConfig c;
  c.kernels = 8;
  c.embedding_dim = 64;
  CHECK(EncoderParams<float>::zeros(c).trainable_count() == 106738);
}

TEST_CASE("channel widths double per block") {
  const auto c = tiny();
  CHECK(c.feature_width() == 32);
  for (std::size_t b = 0; b < kEncoderBlocks; ++b) CHECK(c.out_channels(b) == (2u << b));
  CHECK(c.in_channels(0) == 1);
  EncoderConfig bad;
  bad.kernels = 0;
  CHECK(testing::error_kind_of([&] { bad.validate(); }) == ErrorKind::kConfig);
}

TEST_CASE("spatial trajectory through the five blocks") {
  nn::Rng rng(1);
  const auto p = EncoderParams<float>::initialize(tiny(), 3);
  std::vector<PreprocessedInput> ins = {random_input(rng, "a"), random_input(rng, "b")};
  std::vector<const PreprocessedInput*> ptrs = {&ins[0], &ins[1]};
  EncoderCache<float> cache;
  nn::Rng drop(2);
  encoder_forward(p, make_input_batch<float>(ptrs), nn::Mode::kTrain, &drop, &cache);
  const std::size_t expect[5][2] = {{341, 18}, {113, 9}, {37, 4}, {12, 2}, {4, 1}};
  for (std::size_t b = 0; b < kEncoderBlocks; ++b) {
    const auto& s = cache.blocks[b].activation.shape();
    CHECK(s[1] / 3 == expect[b][0]);
    CHECK(s[2] / 2 == expect[b][1]);
  }
  CHECK(cache.last_block_shape == nn::Shape{2, 4, 1, 32});
  CHECK(cache.features.shape() == nn::Shape{2, 32});
}

TEST_CASE("embeddings are unit norm and eval mode is deterministic") {
  nn::Rng rng(4);
  const auto p = EncoderParams<float>::initialize(tiny(), 5);
  auto a = random_input(rng, "a");
  auto b = a;
  b.track_id = "b";
  auto c = random_input(rng, "c");
  std::vector<const PreprocessedInput*> ptrs = {&a, &b, &c};
  const auto emb = encoder_forward(p, make_input_batch<float>(ptrs), nn::Mode::kEval);
  for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(row_norm(emb, r) - 1.0) <= 1e-5);
  for (std::size_t k = 0; k < 8; ++k) CHECK(emb[k] == emb[8 + k]);

  nn::Rng d1(7), d2(7);
  const auto t1 = encoder_forward(p, make_input_batch<float>(ptrs), nn::Mode::kTrain, &d1);
  const auto t2 = encoder_forward(p, make_input_batch<float>(ptrs), nn::Mode::kTrain, &d2);
  CHECK(t1 == t2);
}

TEST_CASE("wrong input shape is a shape error") {
  const auto p = EncoderParams<float>::initialize(tiny(), 5);
  nn::Tensor<float> x({2, 1000, 36, 1});
  CHECK(testing::error_kind_of([&] { encoder_forward(p, x, nn::Mode::kEval); }) == ErrorKind::kShape);
}

TEST_CASE("parameters survive a checkpoint round trip") {
  testing::TempDir dir("enc");
  auto p = EncoderParams<float>::initialize(tiny(), 11);
  p.blocks[2].bn_running_mean.fill(0.25f);
  nn::save_checkpoint(p.to_checkpoint(), dir / "m.ckpt");
  const auto q = load_encoder(dir / "m.ckpt");
  std::vector<const nn::Tensor<float>*> a, b;
  p.for_each([&](const std::string&, const nn::Tensor<float>& t, bool) { a.push_back(&t); });
  q.for_each([&](const std::string&, const nn::Tensor<float>& t, bool) { b.push_back(&t); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  CHECK(q.config.kernels == 2);
  CHECK(q.config.embedding_dim == 8);
}

TEST_CASE("embed_tracks is independent of parallelism and batch size") {
  nn::Rng rng(12);
  const auto p = EncoderParams<float>::initialize(tiny(), 13);
  std::vector<PreprocessedInput> inputs;
  for (int i = 0; i < 7; ++i) inputs.push_back(random_input(rng, "t" + std::to_string(i)));
  std::vector<TrackSource> sources;
  for (const auto& in : inputs) sources.push_back({in.track_id, [&in] { return in; }});
  sources.push_back({"broken", []() -> PreprocessedInput { fail(ErrorKind::kData, "missing file"); }});

  const auto serial = embed_tracks(sources, p, {32, 1});
  const auto parallel = embed_tracks(sources, p, {2, 3});
  REQUIRE(serial.embeddings.size() == 7);
  REQUIRE(serial.failures.size() == 1);
  CHECK(serial.failures[0].track_id == "broken");
  REQUIRE(parallel.embeddings.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(serial.embeddings[i].track_id == parallel.embeddings[i].track_id);
    CHECK(serial.embeddings[i].vector == parallel.embeddings[i].vector);
  }
  CHECK(embed_tracks({}, p).embeddings.empty());
}

TEST_CASE("initialisation is seeded") {
  const auto a = EncoderParams<float>::initialize(tiny(), 1);
  const auto b = EncoderParams<float>::initialize(tiny(), 1);
  const auto c = EncoderParams<float>::initialize(tiny(), 2);
  CHECK(a.dense_weight == b.dense_weight);
  CHECK_FALSE(a.dense_weight == c.dense_weight);
  CHECK(a.blocks[0].bn_gamma[0] == 1.0f);
  CHECK(a.blocks[0].bn_beta[0] == 0.0f);
}
