// mcover: preprocess, train, embed, query, evaluate, stats, synth.
// Logs go to stderr; artifacts go to files under --out.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mcover/mcover.hpp"

namespace fs = std::filesystem;
using namespace mcover;

namespace {

void log(const std::string& msg) { std::cerr << "[mcover] " << msg << '\n'; }

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kData:
    case ErrorKind::kFormat:
    case ErrorKind::kEmptyMelody: return 3;
    case ErrorKind::kNumeric: return 4;
    default: return 2;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t file_hash(const fs::path& path) { return io::fnv1a64(io::read_file(path)); }

struct Options {
  std::string manifest;
  std::string out = "out";
  std::string checkpoint;
  std::string store;
  std::string queries;
  EncoderConfig encoder;
  TripletConfig triplet;
  double eval_fraction = 0.1;
  std::uint64_t seed = 42;
  int parallelism = 1;
  std::size_t top_k = 10;
  bool exclude_self = false;
  bool laplace = false;
  std::size_t works = 40;
  std::size_t covers = 8;
};

fs::path out_dir(const Options& o) {
  fs::create_directories(o.out);
  return o.out;
}

// preprocess ---------------------------------------------------------------

PreprocessedInput input_for(const TrackRecord& r) {
  if (!r.f0_path.empty()) {
    auto in = load_input(r.f0_path);
    in.track_id = r.track_id;
    return in;
  }
  const auto audio = load_wav(r.audio_path);
  const auto cqt = compute_cqt(audio.samples, audio.sample_rate);
  auto in = preprocess_pipeline(extract_f0_baseline(cqt, {}, r.track_id));
  in.track_id = r.track_id;
  return in;
}

int cmd_preprocess(const Options& o) {
  const auto m = load_manifest(o.manifest);
  const auto dir = out_dir(o);
  fs::create_directories(dir / "cache");
  Manifest cached;
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : m.records) {
    try {
      const auto in = input_for(r);
      const auto rel = fs::path("cache") / (r.track_id + ".f0");
      const auto bytes = encode_f0(to_f0_container(in));
      const auto target = dir / rel;
      // Leave an identical file untouched so reruns do not rewrite the cache.
      if (!fs::exists(target) || io::read_file(target) != bytes) io::write_file(target, bytes);
      auto rec = r;
      rec.f0_path = rel.string();
      rec.audio_path.clear();
      cached.records.push_back(rec);
    } catch (const Error& e) {
      log("skipping " + r.track_id + ": " + e.what());
      failures.push_back({{"track_id", r.track_id}, {"reason", e.what()}});
    }
  }
  save_manifest(cached, dir / "manifest.json");
  write_text(dir / "failures.json", failures.dump(2) + "\n");
  log("preprocessed " + std::to_string(cached.size()) + " of " + std::to_string(m.size()) + " tracks");
  require(!cached.records.empty() || m.records.empty(), ErrorKind::kData, "every track failed to preprocess");
  return 0;
}

// train --------------------------------------------------------------------

LabeledSet load_split_set(const Manifest& m, const Split& s) {
  LabeledSet set;
  for (const auto& id : s.track_ids) {
    const auto* r = m.find(id);
    set.add(input_for(*r), r->work_id);
  }
  return set;
}

int cmd_train(Options o) {
  const auto m = load_manifest(o.manifest);
  o.triplet.seed = o.seed;
  require(o.triplet.covers_per_work >= 1 && o.triplet.batch_size % o.triplet.covers_per_work == 0, ErrorKind::kConfig,
          "--batch-size must be a multiple of --covers-per-batch");
  o.triplet.works_per_batch = o.triplet.batch_size / o.triplet.covers_per_work;
  o.triplet.validate();
  o.encoder.validate();
  const auto split = split_by_work(m, o.eval_fraction, 0, o.seed);
  for (const auto& w : split.warnings) log(w);
  const auto dir = out_dir(o);
  save_split(split.train, dir / "train_split.json");
  save_split(split.eval, dir / "eval_split.json");
  log("loading " + std::to_string(split.train.track_ids.size()) + " train and " +
      std::to_string(split.eval.track_ids.size()) + " eval tracks");
  const auto train_set = load_split_set(m, split.train);
  const auto eval_set = load_split_set(m, split.eval);
  TrainHooks hooks;
  hooks.on_step = [](const TrainLogRow& row) {
    if (row.eval_loss) {
      log("step " + std::to_string(row.step) + " train " + std::to_string(row.train_loss) + " eval " +
          std::to_string(*row.eval_loss) + " lr " + std::to_string(row.lr));
    }
  };
  const auto r = train(train_set, eval_set, o.encoder, o.triplet, hooks);
  nn::save_checkpoint(checkpoint_with_optimizer(r.best, r.optimizer), dir / "checkpoint.cvnw");
  nn::save_checkpoint(r.final.to_checkpoint(), dir / "final.cvnw");
  write_text(dir / "train_log.csv", training_log_csv(r.log));
  log("best eval loss " + std::to_string(r.best_eval_loss) + " at step " + std::to_string(r.best_step));
  return 0;
}

// embed --------------------------------------------------------------------

EmbeddingStore embed_manifest(const Manifest& m, const fs::path& checkpoint, int parallelism) {
  const auto params = load_encoder(checkpoint);
  std::vector<TrackSource> sources;
  for (const auto& r : m.records) sources.push_back({r.track_id, [&r] { return input_for(r); }});
  const auto res = embed_tracks(sources, params, {32, parallelism});
  for (const auto& f : res.failures) log("embedding failed for " + f.track_id + ": " + f.reason);
  if (res.embeddings.empty() && !m.records.empty()) {
    const bool numeric = std::ranges::all_of(res.failures, [](const TrackFailure& f) { return f.kind == ErrorKind::kNumeric; });
    fail(numeric ? ErrorKind::kNumeric : ErrorKind::kData, "no track could be embedded");
  }
  EmbeddingStore store(static_cast<std::uint32_t>(params.config.embedding_dim), file_hash(checkpoint));
  for (const auto& e : res.embeddings) store.append(e);
  return store;
}

int cmd_embed(const Options& o) {
  require(!o.checkpoint.empty(), ErrorKind::kConfig, "embed needs --checkpoint");
  const auto store = embed_manifest(load_manifest(o.manifest), o.checkpoint, o.parallelism);
  const auto path = o.store.empty() ? out_dir(o) / "embeddings.store" : fs::path(o.store);
  save_store(store, path);
  log("wrote " + std::to_string(store.size()) + " embeddings to " + path.string());
  return 0;
}

// query / evaluate / stats -------------------------------------------------

std::vector<Embedding> rows_of(const EmbeddingStore& s) {
  std::vector<Embedding> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({s.id(i), {s.row(i).begin(), s.row(i).end()}});
  return out;
}

// Queries come from --queries (a store), or default to the reference store itself.
std::vector<Embedding> load_queries(const Options& o, const EmbeddingStore& refs) {
  if (o.queries.empty()) return rows_of(refs);
  const auto q = load_store(o.queries);
  require(q.dim() == refs.dim(), ErrorKind::kConfig, "query and reference stores differ in dimension");
  if (q.checkpoint_hash() != refs.checkpoint_hash()) log("warning: query and reference stores come from different checkpoints");
  return rows_of(q);
}

int cmd_query(const Options& o) {
  require(!o.store.empty(), ErrorKind::kConfig, "query needs --store");
  require(o.top_k >= 1, ErrorKind::kConfig, "--top-k must be >= 1");
  const auto refs = load_store(o.store);
  const auto queries = load_queries(o, refs);
  std::ostringstream out;
  out.precision(9);
  out << "query_id,rank,reference_id,sq_distance\n";
  for (const auto& q : queries) {
    std::size_t rank = 0;
    for (const auto& n : query_topk(q, refs, o.top_k + (o.exclude_self ? 1 : 0))) {
      if (o.exclude_self && n.id == q.track_id) continue;
      if (rank == o.top_k) break;
      out << q.track_id << ',' << ++rank << ',' << n.id << ',' << n.sq_distance << '\n';
    }
  }
  write_text(out_dir(o) / "query.csv", out.str());
  return 0;
}

WorkLookup work_lookup(const Options& o) {
  require(!o.manifest.empty(), ErrorKind::kConfig, "--manifest is needed for work labels");
  return load_manifest(o.manifest).work_of();
}

int cmd_evaluate(const Options& o) {
  require(!o.store.empty(), ErrorKind::kConfig, "evaluate needs --store");
  const auto refs = load_store(o.store);
  const auto queries = load_queries(o, refs);
  const auto work_of = work_lookup(o);
  const CrossOptions cross{o.exclude_self, o.parallelism};
  const auto ev = evaluate_store(queries, refs, work_of, cross);
  nlohmann::json j;
  j["MAP"] = ev.ranking.map;
  j["MT10"] = ev.ranking.mt10;
  j["MR1"] = ev.ranking.mr1;
  j["MR1_percentile"] = ev.ranking.mr1_percentile;
  j["AuC"] = ev.roc.auc;
  j["TPR_at_5"] = ev.roc.tpr_at_5;
  j["BC"] = ev.bc;
  j["evaluated_queries"] = ev.ranking.evaluated_queries;
  j["excluded_queries"] = ev.ranking.excluded_queries;
  j["reference_count"] = refs.size();
  const auto dir = out_dir(o);
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  write_text(dir / "roc.csv", roc_csv(ev.roc));
  if (o.top_k > 0) write_text(dir / "ranking.csv", ranking_csv(cross_distances(queries, refs, work_of, cross), o.top_k));
  log("MAP " + std::to_string(ev.ranking.map) + " MR1 " + std::to_string(ev.ranking.mr1) + " AuC " +
      std::to_string(ev.roc.auc));
  return 0;
}

int cmd_stats(const Options& o) {
  require(!o.store.empty(), ErrorKind::kConfig, "stats needs --store");
  const auto refs = load_store(o.store);
  const auto queries = load_queries(o, refs);
  const auto ev = evaluate_store(queries, refs, work_lookup(o), {o.exclude_self, o.parallelism});
  const auto curve = posterior_curve(ev.histogram, {std::nullopt, o.laplace});
  auto j = distribution_report(ev.histogram, curve);
  j["BC"] = ev.bc;
  std::ostringstream csv;
  csv.precision(9);
  csv << "bin_lo,bin_hi,cover_count,noncover_count,posterior\n";
  for (std::size_t b = 0; b < ev.histogram.bins(); ++b) {
    csv << ev.histogram.edges[b] << ',' << ev.histogram.edges[b + 1] << ',' << ev.histogram.cover_counts[b] << ','
        << ev.histogram.noncover_counts[b] << ',';
    if (curve.probability[b]) csv << *curve.probability[b];
    csv << '\n';
  }
  const auto dir = out_dir(o);
  write_text(dir / "distribution.json", j.dump(2) + "\n");
  write_text(dir / "distribution.csv", csv.str());
  return 0;
}

int cmd_synth(const Options& o) {
  SynthOptions s;
  s.works = o.works;
  s.covers_per_work = o.covers;
  s.seed = o.seed;
  const auto m = write_synthetic_corpus(s, out_dir(o));
  log("wrote " + std::to_string(m.size()) + " synthetic tracks to " + o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mcover: melody-based cover song embeddings and retrieval"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--out", o.out, "Output directory");
    c->add_option("--seed", o.seed, "Random seed");
    c->add_option("--parallelism", o.parallelism, "Worker threads")->check(CLI::PositiveNumber);
  };
  auto add_pairs = [&](CLI::App* c) {
    c->add_option("--store", o.store, "Reference embedding store")->required();
    c->add_option("--queries", o.queries, "Query embedding store (default: the reference store)");
    c->add_flag("--exclude-self", o.exclude_self, "Drop each query's own entry from its ranking");
  };

  auto* pre = app.add_subcommand("preprocess", "Extract and cache 1024x36 network inputs");
  pre->add_option("--manifest", o.manifest, "Input manifest (JSONL)")->required();
  add_common(pre);

  auto* tr = app.add_subcommand("train", "Train the encoder with semi-hard triplet loss");
  tr->add_option("--manifest", o.manifest, "Training manifest (JSONL)")->required();
  tr->add_option("--k-kernels", o.encoder.kernels, "Kernels in the first conv block (K)");
  tr->add_option("--embed-dim", o.encoder.embedding_dim, "Embedding dimension (E)");
  tr->add_option("--batch-size", o.triplet.batch_size, "Tracks per batch");
  tr->add_option("--covers-per-batch", o.triplet.covers_per_work, "Covers per work in a batch");
  tr->add_option("--margin", o.triplet.margin, "Triplet margin");
  tr->add_option("--lr", o.triplet.initial_lr, "Initial learning rate");
  tr->add_option("--max-steps", o.triplet.max_steps, "Maximum training steps");
  tr->add_option("--eval-every", o.triplet.eval_every, "Steps between evaluation-loss checks");
  tr->add_option("--plateau-window", o.triplet.plateau_window, "Steps without improvement before halving the lr");
  tr->add_option("--eval-fraction", o.eval_fraction, "Fraction of works held out for the evaluation loss");
  add_common(tr);

  auto* em = app.add_subcommand("embed", "Embed every track of a manifest into a store");
  em->add_option("--manifest", o.manifest, "Track manifest (JSONL)")->required();
  em->add_option("--checkpoint", o.checkpoint, "Encoder checkpoint")->required();
  em->add_option("--store", o.store, "Store path (default: <out>/embeddings.store)");
  add_common(em);

  auto* qu = app.add_subcommand("query", "Top-k nearest references per query");
  add_pairs(qu);
  qu->add_option("--top-k", o.top_k, "Neighbours per query");
  add_common(qu);

  auto* ev = app.add_subcommand("evaluate", "Ranking and pairwise metrics");
  add_pairs(ev);
  ev->add_option("--manifest", o.manifest, "Manifest with work labels")->required();
  ev->add_option("--top-k", o.top_k, "Rows per query in ranking.csv (0 disables it)");
  add_common(ev);

  auto* st = app.add_subcommand("stats", "Distance histograms and cover posterior");
  add_pairs(st);
  st->add_option("--manifest", o.manifest, "Manifest with work labels")->required();
  st->add_flag("--laplace", o.laplace, "Add-one smoothing before the posterior");
  add_common(st);

  auto* sy = app.add_subcommand("synth", "Write a synthetic cover corpus");
  sy->add_option("--works", o.works, "Number of works")->check(CLI::PositiveNumber);
  sy->add_option("--covers", o.covers, "Covers per work")->check(CLI::PositiveNumber);
  add_common(sy);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*pre) return cmd_preprocess(o);
    if (*tr) return cmd_train(o);
    if (*em) return cmd_embed(o);
    if (*qu) return cmd_query(o);
    if (*ev) return cmd_evaluate(o);
    if (*st) return cmd_stats(o);
    if (*sy) return cmd_synth(o);
  } catch (const Error& e) {
    log(e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return 3;
  }
  return 2;
}
