#include <set>
#include <sstream>

#include "mcover/dataset.hpp"
#include "test_helpers.hpp"

using namespace mcover;

namespace {

// works[i] covers of work i, all with the given duration.
Manifest corpus(const std::vector<std::size_t>& covers, double duration = 120.0) {
  Manifest m;
  for (std::size_t w = 0; w < covers.size(); ++w) {
    for (std::size_t c = 0; c < covers[w]; ++c) {
      const auto id = "w" + std::to_string(w) + "_c" + std::to_string(c);
      m.records.push_back({id, "w" + std::to_string(w), duration, "f0/" + id + ".f0", ""});
    }
  }
  return m;
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("manifest JSONL round trip") {
  auto m = corpus({2, 3});
  m.records[0].audio_path = "audio/a.wav";
  std::istringstream in(serialize_manifest(m));
  CHECK(parse_manifest(in) == m);
  testing::TempDir dir("manifest");
  save_manifest(m, dir / "m.jsonl");
  const auto back = load_manifest(dir / "m.jsonl");
  REQUIRE(back.size() == m.size());
  CHECK(back.records[1].f0_path == (dir / "f0/w0_c1.f0").string());
}

TEST_CASE("malformed manifests are data errors") {
  std::istringstream dup(R"({"track_id":"a","work_id":"w","duration_sec":90,"f0_path":"x"}
{"track_id":"a","work_id":"w","duration_sec":90,"f0_path":"y"}
)");
  CHECK(testing::error_kind_of([&] { parse_manifest(dup); }) == ErrorKind::kData);
  std::istringstream broken("{not json\n");
  CHECK(testing::error_kind_of([&] { parse_manifest(broken); }) == ErrorKind::kData);
  CHECK(testing::error_kind_of([&] { load_manifest("/nonexistent/m.jsonl"); }) == ErrorKind::kData);
}

TEST_CASE("cover-count filter keeps 5..15 covers") {
  const auto f = filter_manifest(corpus({4, 5, 15, 16, 20}));
  const auto works = f.tracks_by_work();
  CHECK(works.size() == 2);
  CHECK(works.contains("w1"));
  CHECK(works.contains("w2"));
  CHECK(f.size() == 20);
}

TEST_CASE("duration filter runs before cover counting") {
  auto m = corpus({5, 6});
  m.records[0].duration_sec = 59.0;   // w0 drops to 4 covers and leaves
  m.records[5].duration_sec = 300.0;  // inclusive bound
  m.records[6].duration_sec = 300.5;  // w1 keeps 5
  const auto f = filter_manifest(m);
  CHECK(f.size() == 5);
  CHECK(f.tracks_by_work().size() == 1);
  CHECK(f.find("w1_c0") != nullptr);
  CHECK(f.find("w1_c1") == nullptr);
}

TEST_CASE("filtering is idempotent") {
  nn::Rng rng(3);
  Manifest m;
  for (int i = 0; i < 400; ++i) {
    m.records.push_back({"t" + std::to_string(i), "w" + std::to_string(rng.below(50)), rng.uniform(30, 400), "x", ""});
  }
  const auto once = filter_manifest(m);
  CHECK(filter_manifest(once) == once);
}

TEST_CASE("split_by_work is deterministic and work-disjoint") {
  const auto m = corpus(std::vector<std::size_t>(50, 8));
  const auto a = split_by_work(m, 0.2, 5, 11);
  const auto b = split_by_work(m, 0.2, 5, 11);
  CHECK(a.train == b.train);
  CHECK(a.eval == b.eval);
  CHECK(a.eval.work_ids.size() == 10);
  CHECK(a.train.work_ids.size() == 40);
  CHECK(a.train.track_ids.size() == 200);
  for (const auto& w : a.eval.work_ids) CHECK_FALSE(as_set(a.train.work_ids).contains(w));
  const auto c = split_by_work(m, 0.2, 5, 12);
  CHECK(c.eval.work_ids != a.eval.work_ids);
}

TEST_CASE("split skips works without enough covers") {
  const auto r = split_by_work(corpus({3, 6, 6}), 0.0, 5, 1);
  CHECK(r.train.work_ids.size() == 2);
  CHECK(r.warnings.size() == 1);
  CHECK(testing::error_kind_of([&] { split_by_work(corpus({6}), 1.5, 5, 1); }) == ErrorKind::kConfig);
}

TEST_CASE("split JSON round trip") {
  const auto r = split_by_work(corpus({6, 6, 6}), 0.34, 0, 9);
  testing::TempDir dir("split");
  save_split(r.train, dir / "train.json");
  CHECK(load_split(dir / "train.json") == r.train);
}

TEST_CASE("push/pull reference cardinalities") {
  // 30 works with 12 covers, 10 of them query works.
  const auto m = corpus(std::vector<std::size_t>(30, 12));
  for (std::size_t p : {1u, 3u, 7u}) {
    for (std::size_t n : {1u, 4u, 12u}) {
      PushPullMode mode;
      mode.query_works = 10;
      mode.p_query = p;
      mode.n_other = n;
      const auto s = build_query_reference(m, mode, 5);
      CHECK(s.query.track_ids.size() == 50);
      CHECK(s.reference.track_ids.size() == 10 * p + 20 * n);
      std::set<std::string> qs = as_set(s.query.track_ids);
      for (const auto& t : s.reference.track_ids) CHECK_FALSE(qs.contains(t));
    }
  }
}

TEST_CASE("pushing skips short works with a warning") {
  const auto m = corpus({12, 12, 3, 8});
  PushPullMode mode;
  mode.query_works = 1;
  mode.p_query = 5;
  mode.n_other = 5;
  mode.kind = PushPullMode::Kind::kPushing;
  const auto s = build_query_reference(m, mode, 2);
  CHECK(s.warnings.size() == 1);
  CHECK(s.reference.track_ids.size() == 5 + 2 * 5);
}

TEST_CASE("infeasible query-work count is a config error") {
  PushPullMode mode;
  mode.query_works = 3;
  mode.p_query = 8;
  CHECK(testing::error_kind_of([&] { build_query_reference(corpus({12, 12, 10}), mode, 1); }) == ErrorKind::kConfig);
}

TEST_CASE("1:5 ratio split of 62310 tracks") {
  Manifest m;
  for (int i = 0; i < 62310; ++i) {
    m.records.push_back({"t" + std::to_string(i), "w" + std::to_string(i / 7), 120.0, "x", ""});
  }
  const auto s = build_query_reference(m, RatioMode{1, 5}, 4);
  CHECK(s.query.track_ids.size() == 10385);
  CHECK(s.reference.track_ids.size() == 51925);
  const auto again = build_query_reference(m, RatioMode{1, 5}, 4);
  CHECK(again.query == s.query);
}
