#ifndef MCOVER_DATASET_HPP
#define MCOVER_DATASET_HPP

// Track/work manifests (JSON Lines), corpus filtering, work-disjoint splits
// and the query/reference set constructions used for retrieval experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mcover/binary_io.hpp"
#include "mcover/error.hpp"
#include "mcover/nn/random.hpp"

namespace mcover {

struct TrackRecord {
  std::string track_id;
  std::string work_id;
  double duration_sec = 0.0;
  std::string f0_path;     // empty when absent
  std::string audio_path;  // optional
  bool operator==(const TrackRecord&) const = default;
};

struct Manifest {
  std::vector<TrackRecord> records;

  std::size_t size() const { return records.size(); }

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
      require(!r.track_id.empty(), ErrorKind::kData, "manifest record with empty track_id");
      require(!r.work_id.empty(), ErrorKind::kData, "track '" + r.track_id + "' has an empty work_id");
      require(seen.insert(r.track_id).second, ErrorKind::kData, "duplicate track_id '" + r.track_id + "'");
      require(!r.f0_path.empty() || !r.audio_path.empty(), ErrorKind::kData,
              "track '" + r.track_id + "' has neither f0_path nor audio_path");
    }
  }

  // work id -> track ids, works in lexicographic order, tracks in manifest order.
  std::map<std::string, std::vector<std::string>> tracks_by_work() const {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& r : records) out[r.work_id].push_back(r.track_id);
    return out;
  }

  std::unordered_map<std::string, std::string> work_of() const {
    std::unordered_map<std::string, std::string> out;
    for (const auto& r : records) out.emplace(r.track_id, r.work_id);
    return out;
  }

  const TrackRecord* find(const std::string& track_id) const {
    for (const auto& r : records) {
      if (r.track_id == track_id) return &r;
    }
    return nullptr;
  }

  bool operator==(const Manifest&) const = default;
};

inline nlohmann::json to_json(const TrackRecord& r) {
  nlohmann::json j;
  j["track_id"] = r.track_id;
  j["work_id"] = r.work_id;
  j["duration_sec"] = r.duration_sec;
  j["f0_path"] = r.f0_path;
  if (!r.audio_path.empty()) j["audio_path"] = r.audio_path;
  return j;
}

inline TrackRecord track_from_json(const nlohmann::json& j, const std::string& where) {
  try {
    TrackRecord r;
    r.track_id = j.at("track_id").get<std::string>();
    r.work_id = j.at("work_id").get<std::string>();
    r.duration_sec = j.at("duration_sec").get<double>();
    if (j.contains("f0_path") && !j["f0_path"].is_null()) r.f0_path = j["f0_path"].get<std::string>();
    if (j.contains("audio_path") && !j["audio_path"].is_null()) r.audio_path = j["audio_path"].get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, where + ": " + e.what());
  }
}

inline Manifest parse_manifest(std::istream& in, const std::string& context = "manifest") {
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = context + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kData, where + ": " + e.what());
    }
    m.records.push_back(track_from_json(j, where));
  }
  m.validate();
  return m;
}

// Relative paths inside a manifest are resolved against the manifest's directory.
inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kData, "cannot open manifest " + path.string());
  auto m = parse_manifest(in, path.string());
  const auto base = path.parent_path();
  for (auto& r : m.records) {
    if (!r.f0_path.empty() && std::filesystem::path(r.f0_path).is_relative()) r.f0_path = (base / r.f0_path).string();
    if (!r.audio_path.empty() && std::filesystem::path(r.audio_path).is_relative()) {
      r.audio_path = (base / r.audio_path).string();
    }
  }
  return m;
}

inline std::string serialize_manifest(const Manifest& m) {
  std::string out;
  for (const auto& r : m.records) out += to_json(r).dump() + "\n";
  return out;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  const auto text = serialize_manifest(m);
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::uint64_t manifest_hash(const Manifest& m) {
  const auto text = serialize_manifest(m);
  return io::fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------------------

struct FilterOptions {
  std::size_t min_covers = 5;
  std::size_t max_covers = 15;
  double min_duration_sec = 60.0;
  double max_duration_sec = 300.0;
};

// Duration filter per track first, then the cover-count filter per work on
// the surviving tracks. Bounds are inclusive.
inline Manifest filter_manifest(const Manifest& m, const FilterOptions& options = {}) {
  std::vector<const TrackRecord*> kept;
  std::unordered_map<std::string, std::size_t> per_work;
  for (const auto& r : m.records) {
    if (r.duration_sec < options.min_duration_sec || r.duration_sec > options.max_duration_sec) continue;
    kept.push_back(&r);
    ++per_work[r.work_id];
  }
  Manifest out;
  for (const auto* r : kept) {
    const auto n = per_work[r->work_id];
    if (n >= options.min_covers && n <= options.max_covers) out.records.push_back(*r);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Split {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<std::string> work_ids;   // sorted
  std::vector<std::string> track_ids;  // sorted

  bool operator==(const Split&) const = default;
};

inline nlohmann::json to_json(const Split& s) {
  return {{"name", s.name}, {"seed", s.seed}, {"work_ids", s.work_ids}, {"track_ids", s.track_ids}};
}

inline Split split_from_json(const nlohmann::json& j) {
  try {
    Split s;
    s.name = j.at("name").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.work_ids = j.at("work_ids").get<std::vector<std::string>>();
    s.track_ids = j.at("track_ids").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("split file: ") + e.what());
  }
}

inline void save_split(const Split& s, const std::filesystem::path& path) {
  const auto text = to_json(s).dump(2) + "\n";
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline Split load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kData, "cannot open split " + path.string());
  try {
    return split_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kData, path.string() + ": " + e.what());
  }
}

namespace detail {

inline Split finish_split(std::string name, std::uint64_t seed, const std::vector<std::string>& tracks,
                          const std::unordered_map<std::string, std::string>& work_of) {
  Split s;
  s.name = std::move(name);
  s.seed = seed;
  s.track_ids = tracks;
  std::sort(s.track_ids.begin(), s.track_ids.end());
  std::set<std::string> works;
  for (const auto& t : tracks) works.insert(work_of.at(t));
  s.work_ids.assign(works.begin(), works.end());
  return s;
}

// Random k-subset in random order (partial Fisher-Yates).
template <typename V>
std::vector<V> sample_without_replacement(std::vector<V> items, std::size_t k, nn::Rng& rng) {
  k = std::min(k, items.size());
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(k);
  return items;
}

}  // namespace detail

struct SplitResult {
  Split train;
  Split eval;
  std::vector<std::string> warnings;
};

// Work-level random partition into train and eval. covers_per_work tracks are
// sampled per kept work (0 keeps every track); works with fewer are skipped.
inline SplitResult split_by_work(const Manifest& m, double eval_fraction, std::size_t covers_per_work,
                                 std::uint64_t seed) {
  require(eval_fraction >= 0.0 && eval_fraction <= 1.0, ErrorKind::kConfig, "eval_fraction must lie in [0, 1]");
  const auto by_work = m.tracks_by_work();
  require(!by_work.empty(), ErrorKind::kConfig, "cannot split an empty manifest");
  std::vector<std::string> works;
  for (const auto& [w, _] : by_work) works.push_back(w);
  nn::Rng rng(seed);
  rng.shuffle(works);
  const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(works.size())));

  SplitResult result;
  std::vector<std::string> train_tracks, eval_tracks;
  for (std::size_t i = 0; i < works.size(); ++i) {
    const auto& tracks = by_work.at(works[i]);
    auto& dst = i < n_eval ? eval_tracks : train_tracks;
    if (covers_per_work == 0) {
      dst.insert(dst.end(), tracks.begin(), tracks.end());
      continue;
    }
    if (tracks.size() < covers_per_work) {
      result.warnings.push_back("work '" + works[i] + "' has " + std::to_string(tracks.size()) + " covers, needs " +
                                std::to_string(covers_per_work) + "; skipped");
      continue;
    }
    const auto picked = detail::sample_without_replacement(tracks, covers_per_work, rng);
    dst.insert(dst.end(), picked.begin(), picked.end());
  }
  const auto work_of = m.work_of();
  result.train = detail::finish_split("train", seed, train_tracks, work_of);
  result.eval = detail::finish_split("eval", seed, eval_tracks, work_of);
  return result;
}

// ---------------------------------------------------------------------------
// Query / reference constructions.

// Query works contribute query_covers tracks to the query set and P further
// covers to the reference set; every other work contributes N covers to the
// reference set. Pushing varies N at fixed P, pulling varies P at fixed N;
// the construction is the same.
struct PushPullMode {
  enum class Kind { kPushing, kPulling } kind = Kind::kPushing;
  std::size_t n_other = 5;        // N
  std::size_t p_query = 5;        // P
  std::size_t query_works = 1244;
  std::size_t query_covers = 5;
};

// Random track-level split into query and reference with a q:r ratio.
struct RatioMode {
  std::size_t query_parts = 1;
  std::size_t reference_parts = 5;
};

using QueryReferenceMode = std::variant<PushPullMode, RatioMode>;

struct QueryReferenceSets {
  Split query;
  Split reference;
  std::vector<std::string> warnings;
};

inline QueryReferenceSets build_query_reference(const Manifest& m, const QueryReferenceMode& mode,
                                                std::uint64_t seed) {
  const auto by_work = m.tracks_by_work();
  const auto work_of = m.work_of();
  nn::Rng rng(seed);
  QueryReferenceSets out;
  std::vector<std::string> query_tracks, reference_tracks;

  if (const auto* pp = std::get_if<PushPullMode>(&mode)) {
    require(pp->query_covers >= 1, ErrorKind::kConfig, "query works need at least one query cover");
    require(pp->n_other >= 1, ErrorKind::kConfig, "N (covers per non-query work) must be >= 1");
    std::vector<std::string> works;
    for (const auto& [w, _] : by_work) works.push_back(w);
    rng.shuffle(works);
    const std::size_t needed = pp->query_covers + pp->p_query;
    std::vector<std::string> query_works;
    std::unordered_set<std::string> is_query;
    for (const auto& w : works) {
      if (query_works.size() == pp->query_works) break;
      if (by_work.at(w).size() >= needed) {
        query_works.push_back(w);
        is_query.insert(w);
      }
    }
    require(query_works.size() == pp->query_works, ErrorKind::kConfig,
            "only " + std::to_string(query_works.size()) + " works have the " + std::to_string(needed) +
                " covers needed for " + std::to_string(pp->query_works) + " query works (P=" +
                std::to_string(pp->p_query) + ")");
    for (const auto& w : query_works) {
      auto tracks = by_work.at(w);
      rng.shuffle(tracks);
      query_tracks.insert(query_tracks.end(), tracks.begin(), tracks.begin() + static_cast<std::ptrdiff_t>(pp->query_covers));
      reference_tracks.insert(reference_tracks.end(), tracks.begin() + static_cast<std::ptrdiff_t>(pp->query_covers),
                              tracks.begin() + static_cast<std::ptrdiff_t>(needed));
    }
    std::size_t skipped = 0, others = 0;
    for (const auto& w : works) {
      if (is_query.contains(w)) continue;
      ++others;
      const auto& tracks = by_work.at(w);
      if (tracks.size() < pp->n_other) {
        ++skipped;
        continue;
      }
      const auto picked = detail::sample_without_replacement(tracks, pp->n_other, rng);
      reference_tracks.insert(reference_tracks.end(), picked.begin(), picked.end());
    }
    if (skipped > 0) {
      out.warnings.push_back(std::to_string(skipped) + " non-query works have fewer than N=" +
                             std::to_string(pp->n_other) + " covers and were left out of the reference set");
    }
    require(others == 0 || skipped < others, ErrorKind::kConfig,
            "no non-query work has N=" + std::to_string(pp->n_other) + " covers");
  } else {
    const auto& ratio = std::get<RatioMode>(mode);
    require(ratio.query_parts >= 1 && ratio.reference_parts >= 1, ErrorKind::kConfig, "ratio parts must be >= 1");
    std::vector<std::string> tracks;
    for (const auto& r : m.records) tracks.push_back(r.track_id);
    std::sort(tracks.begin(), tracks.end());
    rng.shuffle(tracks);
    const auto n_query = static_cast<std::size_t>(std::llround(
        static_cast<double>(tracks.size()) * static_cast<double>(ratio.query_parts) /
        static_cast<double>(ratio.query_parts + ratio.reference_parts)));
    query_tracks.assign(tracks.begin(), tracks.begin() + static_cast<std::ptrdiff_t>(n_query));
    reference_tracks.assign(tracks.begin() + static_cast<std::ptrdiff_t>(n_query), tracks.end());
  }

  out.query = detail::finish_split("query", seed, query_tracks, work_of);
  out.reference = detail::finish_split("reference", seed, reference_tracks, work_of);
  return out;
}

}  // namespace mcover

#endif  // MCOVER_DATASET_HPP
