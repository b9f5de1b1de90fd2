#ifndef MCOVER_PREPROCESS_HPP
#define MCOVER_PREPROCESS_HPP

// F0 salience -> fixed 1024x36 network input: trim around the mean pitch,
// bilinear downsample by 5 on both axes, bilinear time resize to 1024 frames.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "mcover/error.hpp"
#include "mcover/frontend.hpp"
#include "mcover/matrix.hpp"

namespace mcover {

inline constexpr std::size_t kInputFrames = 1024;
inline constexpr std::size_t kInputBins = 36;
inline constexpr std::size_t kDownsampleFactor = 5;
// Three minutes of 11.6 ms frames.
inline constexpr std::size_t kDefaultMaxFrames = 15500;

struct PreprocessedInput {
  MatrixF values;  // [1024 time x 36 freq]
  std::string track_id;

  void validate() const {
    require(values.rows() == kInputFrames && values.cols() == kInputBins, ErrorKind::kShape,
            "preprocessed input must be 1024x36, got " + std::to_string(values.rows()) + "x" +
                std::to_string(values.cols()));
    require(std::ranges::all_of(values.values(), [](float v) { return v >= 0.0f && std::isfinite(v); }),
            ErrorKind::kInvalidInput, "preprocessed input must be finite and non-negative");
  }
};

struct TrimOptions {
  int octave_span = 3;
  std::size_t max_frames = kDefaultMaxFrames;
};

// Number of frames covering `seconds` at the given hop, for callers that
// specify the time cap in wall-clock terms.
inline std::size_t frames_for_seconds(double seconds, double hop_seconds) {
  require(seconds > 0.0 && hop_seconds > 0.0, ErrorKind::kConfig, "seconds and hop must be positive");
  return static_cast<std::size_t>(std::llround(seconds / hop_seconds));
}

// Salience-weighted mean bin index over the whole matrix.
inline double mean_pitch_bin(const F0Matrix& f0) {
  double weighted = 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < f0.time_frames(); ++t) {
    const auto row = f0.salience.row(t);
    for (std::size_t b = 0; b < row.size(); ++b) {
      weighted += static_cast<double>(row[b]) * static_cast<double>(b);
      total += row[b];
    }
  }
  if (total <= 0.0) fail(ErrorKind::kEmptyMelody, "track '" + f0.track_id + "' has no melody salience");
  return weighted / total;
}

// First bin of the trim window; may be negative or run past the top, the
// out-of-range part is zero-filled.
inline std::ptrdiff_t trim_window_start(const F0Matrix& f0, int octave_span) {
  const auto span = static_cast<std::ptrdiff_t>(octave_span) * 12 * f0.bins_per_semitone;
  return static_cast<std::ptrdiff_t>(std::llround(mean_pitch_bin(f0) - static_cast<double>(span) / 2.0));
}

inline F0Matrix trim(const F0Matrix& f0, const TrimOptions& options = {}) {
  require(options.octave_span >= 1, ErrorKind::kConfig, "octave_span must be >= 1");
  require(options.max_frames >= 1, ErrorKind::kConfig, "max_frames must be >= 1");
  const auto span = static_cast<std::size_t>(options.octave_span) * 12 * static_cast<std::size_t>(f0.bins_per_semitone);
  const std::ptrdiff_t start = trim_window_start(f0, options.octave_span);
  const std::size_t frames = std::min(f0.time_frames(), options.max_frames);
  const auto bins = static_cast<std::ptrdiff_t>(f0.freq_bins());

  F0Matrix out;
  out.bins_per_semitone = f0.bins_per_semitone;
  out.f_min = f0.f_min * std::exp2(static_cast<double>(start) / (12.0 * f0.bins_per_semitone));
  out.hop_seconds = f0.hop_seconds;
  out.track_id = f0.track_id;
  out.salience = MatrixF(frames, span);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, start);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(bins, start + static_cast<std::ptrdiff_t>(span));
  for (std::size_t t = 0; t < frames; ++t) {
    const auto src = f0.salience.row(t);
    auto dst = out.salience.row(t);
    for (std::ptrdiff_t b = lo; b < hi; ++b) dst[static_cast<std::size_t>(b - start)] = src[static_cast<std::size_t>(b)];
  }
  return out;
}

// Bilinear interpolation on the half-pixel (align_corners = false) grid:
// source coordinate = (dst + 0.5) * in/out - 0.5, clamped to the valid range.
template <typename T>
Matrix<T> bilinear_resize(const Matrix<T>& in, std::size_t out_rows, std::size_t out_cols) {
  require(in.rows() >= 1 && in.cols() >= 1, ErrorKind::kShape, "bilinear_resize: empty input");
  require(out_rows >= 1 && out_cols >= 1, ErrorKind::kShape, "bilinear_resize: empty output");

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in_n, std::size_t out_n) {
    std::vector<Tap> result(out_n);
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    for (std::size_t i = 0; i < out_n; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in_n - 1);
      result[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return result;
  };
  const auto row_taps = taps(in.rows(), out_rows);
  const auto col_taps = taps(in.cols(), out_cols);

  Matrix<T> out(out_rows, out_cols);
  for (std::size_t r = 0; r < out_rows; ++r) {
    const auto& rt = row_taps[r];
    const auto top = in.row(rt.lo);
    const auto bottom = in.row(rt.hi);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < out_cols; ++c) {
      const auto& ct = col_taps[c];
      const double upper = (1.0 - ct.frac) * top[ct.lo] + ct.frac * top[ct.hi];
      const double lower = (1.0 - ct.frac) * bottom[ct.lo] + ct.frac * bottom[ct.hi];
      dst[c] = static_cast<T>((1.0 - rt.frac) * upper + rt.frac * lower);
    }
  }
  return out;
}

inline std::size_t downsampled_length(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n) / kDownsampleFactor)));
}

// Intermediate products, kept for inspection and tests.
struct PreprocessStages {
  F0Matrix trimmed;
  MatrixF downsampled;
  PreprocessedInput input;
};

inline PreprocessStages preprocess_stages(const F0Matrix& f0, const TrimOptions& options = {}) {
  f0.validate();
  PreprocessStages s;
  s.trimmed = trim(f0, options);
  const auto& m = s.trimmed.salience;
  s.downsampled = bilinear_resize(m, downsampled_length(m.rows()), downsampled_length(m.cols()));
  s.input.values = bilinear_resize(s.downsampled, kInputFrames, s.downsampled.cols());
  s.input.track_id = f0.track_id;
  require(s.input.values.cols() == kInputBins, ErrorKind::kShape,
          "trim span must downsample to 36 bins; got " + std::to_string(s.input.values.cols()));
  return s;
}

inline PreprocessedInput preprocess_pipeline(const F0Matrix& f0, const TrimOptions& options = {}) {
  return std::move(preprocess_stages(f0, options).input);
}

// Cached inputs reuse the F0 container with a 1024x36 grid at one bin per semitone.
inline F0Matrix to_f0_container(const PreprocessedInput& input, double source_hop_seconds = 0.011) {
  input.validate();
  F0Matrix f0;
  f0.salience = input.values;
  f0.bins_per_semitone = 1;
  f0.hop_seconds = source_hop_seconds;
  f0.track_id = input.track_id;
  return f0;
}

inline bool is_preprocessed_container(const F0Matrix& f0) {
  return f0.bins_per_semitone == 1 && f0.time_frames() == kInputFrames && f0.freq_bins() == kInputBins;
}

inline PreprocessedInput from_f0_container(const F0Matrix& f0) {
  require(is_preprocessed_container(f0), ErrorKind::kFormat,
          "file for '" + f0.track_id + "' is not a 1024x36 preprocessed input");
  PreprocessedInput input{f0.salience, f0.track_id};
  input.validate();
  return input;
}

// Accepts either a raw F0 matrix or a cached preprocessed input.
inline PreprocessedInput load_input(const std::filesystem::path& path) {
  auto f0 = load_f0(path);
  if (is_preprocessed_container(f0)) return from_f0_container(f0);
  return preprocess_pipeline(f0);
}

}  // namespace mcover

#endif  // MCOVER_PREPROCESS_HPP
