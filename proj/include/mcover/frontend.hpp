#ifndef MCOVER_FRONTEND_HPP
#define MCOVER_FRONTEND_HPP

// Audio front end: constant-Q magnitude spectrogram, a harmonic-sum
// dominant-melody salience extractor, mono WAV ingestion and the F0 file format.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mcover/binary_io.hpp"
#include "mcover/error.hpp"
#include "mcover/matrix.hpp"

namespace mcover {

struct CqtParams {
  double f_min = 32.70;
  int n_octaves = 6;
  int bins_per_semitone = 5;
  double hop_seconds = 0.011;

  int bins_per_octave() const { return 12 * bins_per_semitone; }
  int total_bins() const { return n_octaves * bins_per_octave(); }
  double bin_frequency(int bin) const { return f_min * std::exp2(static_cast<double>(bin) / bins_per_octave()); }
  double max_frequency() const { return bin_frequency(total_bins() - 1); }
  // Constant ratio of centre frequency to bandwidth (one bin spacing).
  double quality() const { return 1.0 / (std::exp2(1.0 / bins_per_octave()) - 1.0); }

  void validate() const {
    require(f_min > 0.0 && std::isfinite(f_min), ErrorKind::kConfig, "CQT f_min must be positive");
    require(n_octaves >= 1, ErrorKind::kConfig, "CQT needs at least one octave");
    require(bins_per_semitone >= 1, ErrorKind::kConfig, "CQT needs at least one bin per semitone");
    require(hop_seconds > 0.0 && std::isfinite(hop_seconds), ErrorKind::kConfig, "CQT hop must be positive");
  }
};

struct CqtMatrix {
  MatrixF values;  // [time_frames x freq_bins], magnitudes
  CqtParams params;
  double sample_rate = 0.0;

  std::size_t time_frames() const { return values.rows(); }
  std::size_t freq_bins() const { return values.cols(); }

  void validate() const {
    params.validate();
    require(values.cols() == static_cast<std::size_t>(params.total_bins()), ErrorKind::kInvalidInput,
            "CQT matrix width does not match its parameters");
    require(std::ranges::all_of(values.values(), [](float v) { return v >= 0.0f && std::isfinite(v); }),
            ErrorKind::kInvalidInput, "CQT magnitudes must be finite and non-negative");
  }
};

struct F0Matrix {
  MatrixF salience;  // [time_frames x freq_bins]
  int bins_per_semitone = 5;
  double f_min = 32.70;
  double hop_seconds = 0.011;
  std::string track_id;

  std::size_t time_frames() const { return salience.rows(); }
  std::size_t freq_bins() const { return salience.cols(); }

  void validate() const {
    require(bins_per_semitone >= 1 && bins_per_semitone <= 0xFFFF, ErrorKind::kInvalidInput,
            "bins_per_semitone out of range");
    require(std::ranges::all_of(salience.values(), [](float v) { return v >= 0.0f && std::isfinite(v); }),
            ErrorKind::kInvalidInput, "salience must be finite and non-negative");
  }

  bool operator==(const F0Matrix&) const = default;
};

namespace detail {

// One complex analysis filter: Hann-windowed complex exponential at the bin's
// centre frequency, normalised so a unit sinusoid at that frequency reads 0.5.
struct CqtKernel {
  std::vector<double> re;
  std::vector<double> im;
  std::ptrdiff_t half = 0;  // taps run from centre-half to centre+half
};

inline CqtKernel make_cqt_kernel(double freq, double sample_rate, double quality) {
  const auto half = static_cast<std::ptrdiff_t>(std::floor(quality * sample_rate / freq / 2.0));
  const auto length = static_cast<std::size_t>(2 * half + 1);
  CqtKernel k;
  k.half = half;
  k.re.resize(length);
  k.im.resize(length);
  double window_sum = 0.0;
  for (std::size_t j = 0; j < length; ++j) {
    const double s = std::sin(std::numbers::pi * (static_cast<double>(j) + 0.5) / static_cast<double>(length));
    const double w = s * s;
    const double phase = -2.0 * std::numbers::pi * freq * (static_cast<double>(j) - static_cast<double>(half)) / sample_rate;
    k.re[j] = w * std::cos(phase);
    k.im[j] = w * std::sin(phase);
    window_sum += w;
  }
  for (std::size_t j = 0; j < length; ++j) {
    k.re[j] /= window_sum;
    k.im[j] /= window_sum;
  }
  return k;
}

template <typename Fn>
void parallel_for(std::size_t n, int parallelism, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, parallelism));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
}

}  // namespace detail

inline std::size_t cqt_frame_count(std::size_t samples, double sample_rate, double hop_seconds) {
  const double hop = hop_seconds * sample_rate;
  return static_cast<std::size_t>(std::floor(static_cast<double>(samples - 1) / hop)) + 1;
}

// Frame t is centred on sample round(t * hop_seconds * sample_rate); samples
// outside the signal are zero.
inline CqtMatrix compute_cqt(std::span<const float> audio, double sample_rate, const CqtParams& params = {},
                             int parallelism = 1) {
  params.validate();
  require(!audio.empty(), ErrorKind::kInvalidInput, "empty audio");
  require(sample_rate > 0.0 && std::isfinite(sample_rate), ErrorKind::kInvalidInput, "sample rate must be positive");
  require(sample_rate >= 2.0 * params.max_frequency(), ErrorKind::kConfig,
          "sample rate " + std::to_string(sample_rate) + " Hz is below twice the top CQT bin (" +
              std::to_string(params.max_frequency()) + " Hz)");

  const int n_bins = params.total_bins();
  std::vector<detail::CqtKernel> kernels;
  kernels.reserve(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    kernels.push_back(detail::make_cqt_kernel(params.bin_frequency(b), sample_rate, params.quality()));
  }
  const std::ptrdiff_t pad = kernels.front().half;  // lowest bin has the longest filter

  std::vector<double> padded(audio.size() + 2 * static_cast<std::size_t>(pad), 0.0);
  std::copy(audio.begin(), audio.end(), padded.begin() + pad);

  const std::size_t frames = cqt_frame_count(audio.size(), sample_rate, params.hop_seconds);
  const double hop = params.hop_seconds * sample_rate;

  CqtMatrix out;
  out.params = params;
  out.sample_rate = sample_rate;
  out.values = MatrixF(frames, static_cast<std::size_t>(n_bins));

  detail::parallel_for(frames, parallelism, [&](std::size_t t) {
    const auto centre = static_cast<std::ptrdiff_t>(std::llround(static_cast<double>(t) * hop)) + pad;
    auto row = out.values.row(t);
    for (int b = 0; b < n_bins; ++b) {
      const auto& k = kernels[static_cast<std::size_t>(b)];
      const auto n = static_cast<Eigen::Index>(k.re.size());
      Eigen::Map<const Eigen::VectorXd> x(padded.data() + (centre - k.half), n);
      const double re = x.dot(Eigen::Map<const Eigen::VectorXd>(k.re.data(), n));
      const double im = x.dot(Eigen::Map<const Eigen::VectorXd>(k.im.data(), n));
      row[static_cast<std::size_t>(b)] = static_cast<float>(std::hypot(re, im));
    }
  });
  return out;
}

// Harmonic weights decay geometrically: w_h = 0.8^(h-1).
inline double harmonic_weight(int harmonic) { return std::pow(0.8, harmonic - 1); }

struct F0ExtractOptions {
  int n_harmonics = 6;
  double salience_floor = 0.05;  // fraction of the global maximum below which a frame is silent
};

// Harmonic-sum salience s(b) = sum_h w_h * cqt(b + bins_per_octave*log2(h)),
// reduced to the per-frame argmax (lowest bin on ties).
inline F0Matrix extract_f0_baseline(const CqtMatrix& cqt, const F0ExtractOptions& options = {},
                                    std::string track_id = {}) {
  cqt.validate();
  require(options.n_harmonics >= 1, ErrorKind::kConfig, "n_harmonics must be >= 1");
  require(options.salience_floor >= 0.0 && options.salience_floor <= 1.0, ErrorKind::kConfig,
          "salience_floor must lie in [0, 1]");

  const std::size_t frames = cqt.time_frames();
  const std::size_t bins = cqt.freq_bins();
  std::vector<std::size_t> offsets;
  std::vector<double> weights;
  for (int h = 1; h <= options.n_harmonics; ++h) {
    offsets.push_back(static_cast<std::size_t>(std::llround(cqt.params.bins_per_octave() * std::log2(h))));
    weights.push_back(harmonic_weight(h));
  }

  std::vector<std::size_t> best_bin(frames, 0);
  std::vector<double> best_value(frames, 0.0);
  double global_max = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    const auto row = cqt.values.row(t);
    for (std::size_t b = 0; b < bins; ++b) {
      double s = 0.0;
      for (std::size_t h = 0; h < offsets.size(); ++h) {
        const std::size_t idx = b + offsets[h];
        if (idx < bins) s += weights[h] * row[idx];
      }
      if (s > best_value[t]) {
        best_value[t] = s;
        best_bin[t] = b;
      }
    }
    global_max = std::max(global_max, best_value[t]);
  }

  F0Matrix f0;
  f0.salience = MatrixF(frames, bins);
  f0.bins_per_semitone = cqt.params.bins_per_semitone;
  f0.f_min = cqt.params.f_min;
  f0.hop_seconds = cqt.params.hop_seconds;
  f0.track_id = std::move(track_id);
  if (global_max <= 0.0) return f0;
  const double floor = options.salience_floor * global_max;
  for (std::size_t t = 0; t < frames; ++t) {
    if (best_value[t] > 0.0 && best_value[t] >= floor) {
      f0.salience(t, best_bin[t]) = static_cast<float>(best_value[t]);
    }
  }
  return f0;
}

// ---------------------------------------------------------------------------
// F0 file format (little-endian):
//   "F0CQ" | u32 version=1 | u32 time_frames | u32 freq_bins | u16 bins_per_semitone
//   | f64 f_min | f64 hop_seconds | u16 id_len | id bytes | f32 salience[time][freq]

inline constexpr std::uint32_t kF0FormatVersion = 1;

inline std::vector<std::uint8_t> encode_f0(const F0Matrix& f0) {
  f0.validate();
  io::ByteWriter w;
  w.put_magic("F0CQ");
  w.put<std::uint32_t>(kF0FormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f0.time_frames()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(f0.freq_bins()));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(f0.bins_per_semitone));
  w.put<double>(f0.f_min);
  w.put<double>(f0.hop_seconds);
  w.put_string16(f0.track_id);
  w.put_array<float>(f0.salience.values());
  return w.take();
}

inline F0Matrix decode_f0(std::span<const std::uint8_t> bytes, const std::string& context = "F0 file") {
  io::ByteReader r(bytes, context);
  r.expect_magic("F0CQ");
  const auto version = r.get<std::uint32_t>();
  if (version != kF0FormatVersion) r.corrupt("unsupported version " + std::to_string(version));
  const auto frames = r.get<std::uint32_t>();
  const auto bins = r.get<std::uint32_t>();
  F0Matrix f0;
  f0.bins_per_semitone = r.get<std::uint16_t>();
  f0.f_min = r.get<double>();
  f0.hop_seconds = r.get<double>();
  f0.track_id = r.get_string16();
  const auto count = static_cast<std::uint64_t>(frames) * bins;
  if (count * sizeof(float) != r.remaining()) {
    r.corrupt("payload holds " + std::to_string(r.remaining()) + " bytes, header promises " +
              std::to_string(count * sizeof(float)));
  }
  std::vector<float> values(static_cast<std::size_t>(count));
  r.get_array<float>(values);
  r.expect_end();
  f0.salience = MatrixF(frames, bins, std::move(values));
  if (f0.bins_per_semitone < 1) r.corrupt("bins_per_semitone must be >= 1");
  return f0;
}

inline void save_f0(const F0Matrix& f0, const std::filesystem::path& path) { io::write_file(path, encode_f0(f0)); }

inline F0Matrix load_f0(const std::filesystem::path& path) { return decode_f0(io::read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Minimal RIFF/WAVE reader: integer PCM (8/16/24/32-bit) and IEEE float32.
// Multi-channel input is averaged down to mono.

struct AudioBuffer {
  std::vector<float> samples;
  double sample_rate = 0.0;
};

inline AudioBuffer decode_wav(std::span<const std::uint8_t> bytes, const std::string& context = "WAV file") {
  io::ByteReader r(bytes, context);
  r.expect_magic("RIFF");
  r.get<std::uint32_t>();
  r.expect_magic("WAVE");
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const auto id_pos = r.position();
    const std::string id(reinterpret_cast<const char*>(bytes.data() + id_pos), 4);
    for (int i = 0; i < 4; ++i) r.get<std::uint8_t>();
    const auto size = r.get<std::uint32_t>();
    if (id == "fmt ") {
      if (size < 16) r.corrupt("fmt chunk too small");
      format = r.get<std::uint16_t>();
      channels = r.get<std::uint16_t>();
      rate = r.get<std::uint32_t>();
      r.get<std::uint32_t>();
      r.get<std::uint16_t>();
      bits = r.get<std::uint16_t>();
      std::vector<std::uint8_t> rest(size - 16);
      r.get_array<std::uint8_t>(rest);
      if (format == 0xFFFE && rest.size() >= 10) format = static_cast<std::uint16_t>(rest[8] | (rest[9] << 8));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) r.corrupt("data chunk before fmt chunk");
      if (channels == 0) r.corrupt("zero channels");
      const bool is_float = format == 3 && bits == 32;
      const bool is_pcm = format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
      if (!is_float && !is_pcm) {
        fail(ErrorKind::kData, context + ": unsupported WAV encoding (format " + std::to_string(format) + ", " +
                                   std::to_string(bits) + " bits)");
      }
      const std::size_t width = bits / 8;
      const std::size_t frames = size / (width * channels);
      std::vector<std::uint8_t> raw(frames * width * channels);
      r.get_array<std::uint8_t>(raw);
      AudioBuffer audio;
      audio.sample_rate = rate;
      audio.samples.resize(frames);
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          const std::uint8_t* p = raw.data() + (f * channels + c) * width;
          double v = 0.0;
          if (is_float) {
            float x;
            std::memcpy(&x, p, 4);
            v = x;
          } else if (bits == 8) {
            v = (static_cast<int>(p[0]) - 128) / 128.0;
          } else if (bits == 16) {
            v = static_cast<std::int16_t>(p[0] | (p[1] << 8)) / 32768.0;
          } else if (bits == 24) {
            std::int32_t x = p[0] | (p[1] << 8) | (p[2] << 16);
            if (x & 0x800000) x |= ~0xFFFFFF;
            v = x / 8388608.0;
          } else {
            std::int32_t x;
            std::memcpy(&x, p, 4);
            v = x / 2147483648.0;
          }
          acc += v;
        }
        audio.samples[f] = static_cast<float>(acc / channels);
      }
      return audio;
    } else {
      std::vector<std::uint8_t> skip(size + (size & 1u));
      if (skip.size() > r.remaining()) skip.resize(r.remaining());
      r.get_array<std::uint8_t>(skip);
    }
  }
  r.corrupt("no data chunk");
}

inline AudioBuffer load_wav(const std::filesystem::path& path) { return decode_wav(io::read_file(path), path.string()); }

// 16-bit PCM mono writer, used for fixtures and round-trip tests.
inline std::vector<std::uint8_t> encode_wav16(std::span<const float> samples, std::uint32_t sample_rate) {
  io::ByteWriter w;
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  w.put_magic("RIFF");
  w.put<std::uint32_t>(36 + data_bytes);
  w.put_magic("WAVE");
  w.put_magic("fmt ");
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(1);
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(sample_rate);
  w.put<std::uint32_t>(sample_rate * 2);
  w.put<std::uint16_t>(2);
  w.put<std::uint16_t>(16);
  w.put_magic("data");
  w.put<std::uint32_t>(data_bytes);
  for (float s : samples) {
    const double clamped = std::clamp(static_cast<double>(s), -1.0, 32767.0 / 32768.0);
    w.put<std::int16_t>(static_cast<std::int16_t>(std::lround(clamped * 32768.0)));
  }
  return w.take();
}

}  // namespace mcover

#endif  // MCOVER_FRONTEND_HPP
