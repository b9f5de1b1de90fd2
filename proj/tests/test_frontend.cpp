#include <cmath>
#include <numbers>
#include <vector>

#include "mcover/frontend.hpp"
#include "mcover/nn/random.hpp"
#include "oracles/cqt_oracle.hpp"
#include "test_helpers.hpp"

using namespace mcover;
using Catch::Approx;

namespace {

constexpr double kSr = 8000.0;

std::vector<float> sine(double freq, double seconds, double amp = 0.5, double sr = kSr) {
  std::vector<float> x(static_cast<std::size_t>(seconds * sr));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * freq * i / sr));
  return x;
}

std::size_t row_argmax(const MatrixF& m, std::size_t r) {
  const auto row = m.row(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Frames whose lowest-bin window lies fully inside the signal.
std::pair<std::size_t, std::size_t> interior(const CqtMatrix& c, std::size_t samples) {
  const double reach = c.params.quality() * c.sample_rate / c.params.f_min / 2.0;
  const double hop = c.params.hop_seconds * c.sample_rate;
  return {static_cast<std::size_t>(std::ceil(reach / hop)),
          static_cast<std::size_t>(std::floor((static_cast<double>(samples) - reach) / hop))};
}

}  // namespace

TEST_CASE("default CQT geometry") {
  CqtParams p;
  CHECK(p.total_bins() == 360);
  CHECK(p.bins_per_octave() == 60);
  CHECK(p.bin_frequency(60) == Approx(2 * 32.70));
  CHECK(cqt_frame_count(1, kSr, 0.011) == 1);
  CHECK(cqt_frame_count(8000, kSr, 0.011) == 91);  // floor(7999 / 88) + 1
}

TEST_CASE("440 Hz sine peaks at bin 225 in every interior frame") {
  const auto x = sine(440.0, 5.0);
  const auto c = compute_cqt(x, kSr);
  REQUIRE(c.freq_bins() == 360);
  const auto expected = static_cast<std::size_t>(std::lround(60.0 * std::log2(440.0 / 32.70)));
  REQUIRE(expected == 225);
  const auto [lo, hi] = interior(c, x.size());
  REQUIRE(hi > lo);
  for (std::size_t t = lo; t < hi; ++t) CHECK(row_argmax(c.values, t) == expected);
}

TEST_CASE("220 Hz + 440 Hz peaks sit 60 bins apart") {
  auto x = sine(220.0, 4.0);
  const auto y = sine(440.0, 4.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
  const auto c = compute_cqt(x, kSr);
  const auto [lo, hi] = interior(c, x.size());
  const std::size_t t = (lo + hi) / 2;
  const auto row = c.values.row(t);
  // Local maxima above half the frame maximum.
  const float top = *std::max_element(row.begin(), row.end());
  std::vector<std::size_t> peaks;
  for (std::size_t b = 1; b + 1 < row.size(); ++b) {
    if (row[b] > 0.5f * top && row[b] >= row[b - 1] && row[b] > row[b + 1]) peaks.push_back(b);
  }
  REQUIRE(peaks.size() == 2);
  CHECK(peaks[1] - peaks[0] == 60);
  CHECK(peaks[0] == 165);
}

TEST_CASE("CQT matches the direct time-domain oracle") {
  nn::Rng rng(7);
  std::vector<float> x(static_cast<std::size_t>(1.5 * kSr));
  for (auto& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  const auto c = compute_cqt(x, kSr);
  oracle::CqtSetup setup;
  setup.sample_rate = kSr;
  for (int probe = 0; probe < 60; ++probe) {
    const auto t = static_cast<std::size_t>(rng.below(c.time_frames()));
    const auto b = static_cast<int>(rng.below(360));
    const double want = oracle::cqt_cell(x, setup, t, b);
    const double got = c.values(t, static_cast<std::size_t>(b));
    CHECK(std::abs(got - want) <= 1e-5 * std::max(want, 1e-6));
  }
}

TEST_CASE("CQT of silence is all zero") {
  std::vector<float> x(4000, 0.0f);
  const auto c = compute_cqt(x, kSr);
  CHECK(c.values.max_value() == 0.0f);
}

TEST_CASE("CQT scales linearly with amplitude") {
  nn::Rng rng(3);
  std::vector<float> x(6000), y(6000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<float>(rng.uniform(-0.5, 0.5));
    y[i] = x[i] * 4.0f;  // exact in binary floating point
  }
  const auto a = compute_cqt(x, kSr);
  const auto b = compute_cqt(y, kSr);
  for (std::size_t i = 0; i < a.values.values().size(); ++i) {
    const double va = a.values.values()[i], vb = b.values.values()[i];
    CHECK(std::abs(vb - 4.0 * va) <= 1e-6 * std::max(4.0 * va, 1e-12));
  }
}

TEST_CASE("CQT parallel and serial runs agree bitwise") {
  const auto x = sine(330.0, 1.0);
  CHECK(compute_cqt(x, kSr, {}, 1).values == compute_cqt(x, kSr, {}, 3).values);
}

TEST_CASE("CQT input errors") {
  std::vector<float> empty;
  CHECK(testing::error_kind_of([&] { compute_cqt(empty, kSr); }) == ErrorKind::kInvalidInput);
  const auto x = sine(100.0, 0.5);
  CHECK(testing::error_kind_of([&] { compute_cqt(x, 4000.0); }) == ErrorKind::kConfig);
}

namespace {

// CQT-shaped matrix with harmonic stacks placed by hand.
CqtMatrix synthetic_cqt(std::size_t frames) {
  CqtMatrix c;
  c.sample_rate = kSr;
  c.values = MatrixF(frames, 360);
  return c;
}

void add_stack(CqtMatrix& c, std::size_t t, std::size_t fundamental, float amp, int harmonics = 6) {
  for (int h = 1; h <= harmonics; ++h) {
    const auto b = fundamental + static_cast<std::size_t>(std::lround(60.0 * std::log2(h)));
    if (b < 360) c.values(t, b) += amp * static_cast<float>(std::pow(0.8, h - 1));
  }
}

// Harmonic sum evaluated independently for one frame.
std::size_t brute_force_argmax(const CqtMatrix& c, std::size_t t) {
  double best = -1.0;
  std::size_t arg = 0;
  for (std::size_t b = 0; b < 360; ++b) {
    double s = 0.0;
    for (int h = 1; h <= 6; ++h) {
      const auto idx = b + static_cast<std::size_t>(std::lround(60.0 * std::log2(h)));
      if (idx < 360) s += std::pow(0.8, h - 1) * c.values(t, idx);
    }
    if (s > best) {
      best = s;
      arg = b;
    }
  }
  return arg;
}

}  // namespace

TEST_CASE("harmonic-sum baseline keeps the fundamental bin") {
  auto c = synthetic_cqt(3);
  add_stack(c, 0, 225, 1.0f);
  add_stack(c, 2, 100, 0.5f);
  const auto f0 = extract_f0_baseline(c);
  REQUIRE(brute_force_argmax(c, 0) == 225);
  for (std::size_t b = 0; b < 360; ++b) {
    CHECK((f0.salience(0, b) > 0.0f) == (b == 225));
    CHECK(f0.salience(1, b) == 0.0f);  // silent frame
  }
  CHECK(f0.salience(2, 100) > 0.0f);
  CHECK(f0.bins_per_semitone == 5);
}

TEST_CASE("octave pair of equal energy resolves to the lower fundamental") {
  auto c = synthetic_cqt(1);
  c.values(0, 100) = 1.0f;
  c.values(0, 160) = 1.0f;
  const auto f0 = extract_f0_baseline(c);
  CHECK(brute_force_argmax(c, 0) == 100);
  CHECK(f0.salience(0, 100) > 0.0f);
  CHECK(f0.salience(0, 160) == 0.0f);
}

TEST_CASE("baseline emits at most one nonzero per frame and respects the floor") {
  nn::Rng rng(11);
  auto c = synthetic_cqt(50);
  for (auto& v : c.values.values()) v = static_cast<float>(rng.uniform());
  for (std::size_t b = 0; b < 360; ++b) c.values(7, b) *= 0.001f;  // far below the 5% floor
  const auto f0 = extract_f0_baseline(c);
  for (std::size_t t = 0; t < 50; ++t) {
    const auto row = f0.salience.row(t);
    const auto nz = std::count_if(row.begin(), row.end(), [](float v) { return v != 0.0f; });
    CHECK(nz <= 1);
    if (t != 7) CHECK(row[brute_force_argmax(c, t)] > 0.0f);
  }
  CHECK(f0.salience.row(7)[brute_force_argmax(c, 7)] == 0.0f);
}

TEST_CASE("F0 files round-trip exactly") {
  testing::TempDir dir("f0");
  nn::Rng rng(5);
  F0Matrix f0;
  f0.salience = MatrixF(17, 360);
  for (auto& v : f0.salience.values()) v = static_cast<float>(rng.uniform());
  f0.track_id = "track-\xc3\xa9";
  f0.hop_seconds = 0.0116;
  save_f0(f0, dir / "a.f0");
  const auto back = load_f0(dir / "a.f0");
  CHECK(back.salience == f0.salience);
  CHECK(back.track_id == f0.track_id);
  CHECK(back.hop_seconds == f0.hop_seconds);
  CHECK(back.f_min == f0.f_min);
  CHECK(back.bins_per_semitone == 5);
}

TEST_CASE("F0 decoding rejects bad magic and truncation") {
  F0Matrix f0;
  f0.salience = MatrixF(4, 360);
  auto bytes = encode_f0(f0);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK(testing::error_kind_of([&] { decode_f0(bad); }) == ErrorKind::kFormat);
  bytes.resize(bytes.size() - 3);
  CHECK(testing::error_kind_of([&] { decode_f0(bytes); }) == ErrorKind::kFormat);
}

TEST_CASE("16-bit WAV round trip") {
  const auto x = sine(440.0, 0.1, 0.25);
  const auto bytes = encode_wav16(x, 8000);
  const auto audio = decode_wav(bytes);
  CHECK(audio.sample_rate == 8000);
  REQUIRE(audio.samples.size() == x.size());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(audio.samples[i] - x[i]) < 1.0 / 32767.0);
}
