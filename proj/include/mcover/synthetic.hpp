#ifndef MCOVER_SYNTHETIC_HPP
#define MCOVER_SYNTHETIC_HPP

// Synthetic cover corpus: each work is a random monophonic note sequence;
// each cover re-renders it with a transposition, a tempo factor, per-note
// edits and pitch jitter, plus additive salience noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "mcover/dataset.hpp"
#include "mcover/error.hpp"
#include "mcover/frontend.hpp"
#include "mcover/nn/random.hpp"

namespace mcover {

struct SynthOptions {
  std::size_t works = 40;
  std::size_t covers_per_work = 8;
  std::size_t notes_per_work = 40;
  double beat_seconds = 0.25;       // note lengths are 1..4 beats at tempo 1
  double rest_probability = 0.1;
  int pitch_low = 48;               // MIDI range of the untransposed melody
  int pitch_high = 72;
  int max_transpose = 6;            // semitones, uniform integer in [-max, max]
  double tempo_min = 0.7;
  double tempo_max = 1.4;
  double note_edit_probability = 0.1;  // a note moves by +-1..2 semitones
  double pitch_jitter = 0.15;          // semitones, per-note Gaussian
  double blur_bins = 1.5;              // Gaussian width across frequency
  double noise_level = 0.005;          // std of clipped Gaussian background
  CqtParams cqt{};
  std::uint64_t seed = 42;

  void validate() const {
    require(works >= 1 && covers_per_work >= 1 && notes_per_work >= 1, ErrorKind::kConfig,
            "synthetic corpus needs works, covers and notes >= 1");
    require(tempo_min > 0.0 && tempo_min <= tempo_max, ErrorKind::kConfig, "invalid tempo range");
    require(pitch_low < pitch_high, ErrorKind::kConfig, "invalid pitch range");
    cqt.validate();
  }
};

struct SynthNote {
  double midi = 0.0;
  int beats = 1;
  bool rest = false;
};

struct SynthWork {
  std::string work_id;
  std::vector<SynthNote> notes;
};

struct SynthCover {
  std::string track_id;
  std::string work_id;
  int transpose = 0;
  double tempo = 1.0;
  F0Matrix f0;
};

inline std::string synth_work_id(std::size_t w) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "W%04zu", w);
  return buf;
}

// Bounded random walk over semitones.
inline SynthWork make_synth_work(std::size_t index, const SynthOptions& o, nn::Rng& rng) {
  SynthWork w;
  w.work_id = synth_work_id(index);
  int pitch = o.pitch_low + static_cast<int>(rng.below(static_cast<std::uint64_t>(o.pitch_high - o.pitch_low + 1)));
  for (std::size_t n = 0; n < o.notes_per_work; ++n) {
    SynthNote note;
    note.beats = 1 + static_cast<int>(rng.below(4));
    note.rest = rng.uniform() < o.rest_probability;
    pitch += static_cast<int>(rng.below(9)) - 4;
    pitch = std::clamp(pitch, o.pitch_low, o.pitch_high);
    note.midi = pitch;
    w.notes.push_back(note);
  }
  return w;
}

inline double midi_to_bin(double midi, const CqtParams& cqt) {
  const double f = 440.0 * std::pow(2.0, (midi - 69.0) / 12.0);
  return static_cast<double>(cqt.bins_per_octave()) * std::log2(f / cqt.f_min);
}

inline SynthCover render_synth_cover(const SynthWork& work, std::size_t cover_index, const SynthOptions& o,
                                     nn::Rng& rng) {
  SynthCover c;
  c.work_id = work.work_id;
  c.track_id = work.work_id + "_C" + (cover_index < 10 ? "0" : "") + std::to_string(cover_index);
  c.transpose = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * o.max_transpose + 1))) - o.max_transpose;
  c.tempo = rng.uniform(o.tempo_min, o.tempo_max);

  // Per-frame pitch in bins (negative = silence).
  const double frame_seconds = o.cqt.hop_seconds;
  std::vector<double> frame_bin;
  double t_end = 0.0;
  for (const auto& note : work.notes) {
    double midi = note.midi + c.transpose;
    if (rng.uniform() < o.note_edit_probability) {
      const int step = 1 + static_cast<int>(rng.below(2));
      midi += rng.uniform() < 0.5 ? -step : step;
    }
    midi += o.pitch_jitter * rng.normal();
    const double bin = note.rest ? -1.0 : midi_to_bin(midi, o.cqt);
    t_end += note.beats * o.beat_seconds / c.tempo;
    while (static_cast<double>(frame_bin.size()) * frame_seconds < t_end) frame_bin.push_back(bin);
  }

  const auto bins = static_cast<std::size_t>(o.cqt.total_bins());
  c.f0.salience = MatrixF(frame_bin.size(), bins);
  c.f0.bins_per_semitone = o.cqt.bins_per_semitone;
  c.f0.f_min = o.cqt.f_min;
  c.f0.hop_seconds = o.cqt.hop_seconds;
  c.f0.track_id = c.track_id;
  const double inv = 1.0 / (2.0 * o.blur_bins * o.blur_bins);
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(4.0 * o.blur_bins));
  for (std::size_t t = 0; t < frame_bin.size(); ++t) {
    auto row = c.f0.salience.row(t);
    if (o.noise_level > 0.0) {
      for (auto& v : row) v = static_cast<float>(std::max(0.0, o.noise_level * rng.normal()));
    }
    if (frame_bin[t] < 0.0) continue;
    const auto centre = static_cast<std::ptrdiff_t>(std::lround(frame_bin[t]));
    for (auto b = centre - reach; b <= centre + reach; ++b) {
      if (b < 0 || b >= static_cast<std::ptrdiff_t>(bins)) continue;
      const double x = static_cast<double>(b) - frame_bin[t];
      row[static_cast<std::size_t>(b)] += static_cast<float>(std::exp(-x * x * inv));
    }
  }
  return c;
}

// Streams covers to `sink` one at a time so large corpora never sit in memory.
inline void generate_synthetic(const SynthOptions& o, const std::function<void(SynthCover&&)>& sink) {
  o.validate();
  nn::Rng rng(o.seed);
  for (std::size_t w = 0; w < o.works; ++w) {
    const auto work = make_synth_work(w, o, rng);
    for (std::size_t c = 0; c < o.covers_per_work; ++c) sink(render_synth_cover(work, c, o, rng));
  }
}

// Writes one F0 file per cover plus a manifest; returns the manifest.
inline Manifest write_synthetic_corpus(const SynthOptions& o, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir / "f0");
  Manifest m, on_disk;  // on_disk keeps paths relative to the manifest
  generate_synthetic(o, [&](SynthCover&& c) {
    const auto rel = std::filesystem::path("f0") / (c.track_id + ".f0");
    save_f0(c.f0, out_dir / rel);
    const double seconds = static_cast<double>(c.f0.time_frames()) * c.f0.hop_seconds;
    m.records.push_back({c.track_id, c.work_id, seconds, (out_dir / rel).string(), ""});
    on_disk.records.push_back({c.track_id, c.work_id, seconds, rel.string(), ""});
  });
  save_manifest(on_disk, out_dir / "manifest.json");
  return m;
}

}  // namespace mcover

#endif  // MCOVER_SYNTHETIC_HPP
