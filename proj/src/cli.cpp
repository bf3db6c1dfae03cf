#include "lsfd/cli.hpp"

#include "lsfd/config.hpp"
#include "lsfd/report.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <iostream>
#include <optional>

namespace lsfd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::string init_from;
  std::optional<std::string> agg;
  std::optional<int> n;
  std::optional<std::string> loss_flags;
  std::string features = "s,n,f";
  std::vector<std::string> sets;
  std::string corpus = "corpus";
  std::string checkpoint;
  std::string compare;
  bool resume = false;
  bool svg = false;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

RunConfig resolve(const Options& o) {
  RunConfig c;
  if (!o.config_path.empty()) apply_config_file(c, o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.agg) set_key(c, "train.aggregator", *o.agg);
  if (o.n) set_key(c, "train.n", std::to_string(*o.n));
  if (o.loss_flags) set_key(c, "train.loss_flags", *o.loss_flags);
  if (o.svg) c.eval.svg = true;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Config, "--set expects key=value, got '" + s + "'");
    set_key(c, s.substr(0, eq), s.substr(eq + 1));
  }
  c.train.seed = c.seed;
  c.eval.tcn.seed = c.seed;
  c.corpus.validate();
  c.train.validate();
  return c;
}

std::vector<FeatureKind> parse_kinds(const std::string& csv) {
  std::vector<FeatureKind> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const FeatureKind k = parse_feature_kind(item);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  if (out.empty()) throw Error(ErrorCode::Config, "--features needs at least one of s, n, f");
  return out;
}

json config_json(const RunConfig& c) {
  json j = json::object();
  for (const auto& [k, v] : resolved(c)) j[k] = v;
  return j;
}

// Creates out/<prefix>-<hash>. A directory that already holds reports is
// never reused unless `reuse` is set.
fs::path run_directory(const Options& o, const std::string& prefix, const std::string& identity, bool reuse) {
  const fs::path dir = fs::path(o.out) / (prefix + "-" + content_hash(identity));
  if (fs::exists(dir / "metrics.json") && !reuse) {
    throw Error(ErrorCode::Io, "run directory " + dir.string() + " already holds reports");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

Corpus open_corpus(const Options& o) {
  if (!fs::exists(fs::path(o.corpus) / "manifest.json")) {
    throw Error(ErrorCode::Io, "no corpus at " + o.corpus + " (run gen-data first)");
  }
  return load_corpus(o.corpus);
}

ViewPolicy view_policy(const TrainConfig& c) { return ViewPolicy{c.n, c.l, c.stride, c.aug.out_h, c.aug.out_w}; }

int cmd_gen_data(const Options& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  Clock clock;
  const Corpus corpus = build_corpus(c.corpus, c.seed);
  save_corpus(corpus, o.out);
  write_text(fs::path(o.out) / "config.txt", echo(c));
  out << o.out << "\n";
  std::cerr << "generated " << corpus.videos.size() << " videos in " << clock.seconds() << " s\n";
  return 0;
}

int cmd_train(const Options& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const Corpus corpus = open_corpus(o);
  std::string identity = "train\n" + echo(c) + "corpus " + file_hash(fs::path(o.corpus) / "manifest.json") + "\n";
  if (!o.init_from.empty()) identity += "init " + file_hash(o.init_from) + "\n";
  const fs::path dir = run_directory(o, "train", identity, o.resume);
  const fs::path log = dir / "run.log", last = dir / "last.ckpt", best = dir / "best.ckpt";

  TrainState state;
  if (o.resume && fs::exists(last)) {
    state = restore_train_state(load_checkpoint(last));
    std::string lines;
    for (const auto& h : state.history) lines += to_json(h).dump() + "\n";
    write_text(log, lines);
    std::cerr << "resuming at epoch " << state.epoch << "\n";
  } else if (!o.init_from.empty()) {
    state = curriculum_init(c.train, load_checkpoint(o.init_from));
    write_text(log, "");
  } else {
    state = make_train_state(c.train);
    write_text(log, "");
  }
  write_text(dir / "config.txt", echo(c));

  auto best_epoch = [](const TrainState& s) {
    int e = 0;
    for (std::size_t i = 0; i < s.history.size(); ++i) {
      if (e == 0 || s.history[i].val_total < s.history[static_cast<std::size_t>(e - 1)].val_total) e = static_cast<int>(i) + 1;
    }
    return e;
  };

  Clock clock;
  train(corpus, state, [&](const TrainState& s) {
    const EpochStats& h = s.history.back();
    save_checkpoint(s, last);
    if (best_epoch(s) == s.epoch) save_checkpoint(s, best);
    append_line(log, to_json(h).dump());
    std::cerr << "epoch " << h.epoch << " train " << h.train_total << " val " << h.val_total << " lr " << h.lr << " ("
              << clock.seconds() << " s)\n";
  });
  if (state.history.empty()) save_checkpoint(state, last);

  json history = json::array();
  for (const auto& h : state.history) history.push_back(to_json(h));
  write_json(dir / "metrics.json", {{"config", config_json(c)},
                                    {"epochs", state.epoch},
                                    {"best_epoch", best_epoch(state)},
                                    {"history", history}});
  out << dir.string() << "\n";
  return 0;
}

struct EvalContext {
  RunConfig config;
  Corpus corpus;
  TrainState state;
  fs::path dir;
};

EvalContext open_eval(const Options& o, const std::string& name) {
  if (o.checkpoint.empty()) throw Error(ErrorCode::Config, name + " needs --checkpoint");
  EvalContext ctx;
  ctx.config = resolve(o);
  ctx.corpus = open_corpus(o);
  ctx.state = restore_train_state(load_checkpoint(o.checkpoint));
  std::string identity = name + "\n" + echo(ctx.config) + "corpus " +
                         file_hash(fs::path(o.corpus) / "manifest.json") + "\ncheckpoint " +
                         file_hash(o.checkpoint) + "\nfeatures " + o.features + "\n";
  if (!o.compare.empty()) identity += "compare " + file_hash(o.compare) + "\n";
  ctx.dir = run_directory(o, name, identity, false);
  write_text(ctx.dir / "config.txt", echo(ctx.config));
  write_text(ctx.dir / "run.log", "");
  return ctx;
}

json report_header(const EvalContext& ctx, const Options& o) {
  return {{"config", config_json(ctx.config)},
          {"checkpoint_config", to_json(ctx.state.config)},
          {"checkpoint_epoch", ctx.state.epoch},
          {"checkpoint_hash", file_hash(o.checkpoint)}};
}

void log_event(const EvalContext& ctx, const json& event) { append_line(ctx.dir / "run.log", event.dump()); }

int cmd_eval_retrieval(const Options& o, std::ostream& out) {
  EvalContext ctx = open_eval(o, "eval-retrieval");
  const auto kinds = parse_kinds(o.features);
  const FeatureTable table = extract_features(ctx.state.model.query.encoder, ctx.corpus, view_policy(ctx.state.config));
  json report = report_header(ctx, o);
  report["pr_averaging"] = "micro";
  const std::vector<int> ks{1, 5, 10, 20};
  for (LabelTask task : {LabelTask::Static, LabelTask::Dynamic}) {
    std::vector<SvgSeries> series;
    for (FeatureKind kind : kinds) {
      const auto r = recall_at_ks(table, task, kind, ks);
      json row;
      for (std::size_t i = 0; i < ks.size(); ++i) row["R@" + std::to_string(ks[i])] = r[i];
      const PRCurve curve = pr_curve(table, task, kind);
      row["pr_absent_queries"] = curve.absent_queries;
      report["retrieval"][to_string(task)][to_string(kind)] = row;
      const std::string stem = "pr_" + to_string(task) + "_" + to_string(kind);
      write_text(ctx.dir / (stem + ".csv"), pr_curve_csv(curve));
      SvgSeries s{to_string(kind), {}, {}};
      for (const auto& p : curve.points) {
        s.x.push_back(p.recall);
        s.y.push_back(p.precision);
      }
      series.push_back(std::move(s));
      log_event(ctx, {{"task", to_string(task)}, {"features", to_string(kind)}, {"R@1", r[0]}});
    }
    if (ctx.config.eval.svg) {
      write_text(ctx.dir / ("pr_" + to_string(task) + ".svg"),
                 svg_lines("precision-recall, " + to_string(task) + " labels", "recall", "precision", series));
    }
  }
  write_json(ctx.dir / "metrics.json", report);
  out << ctx.dir.string() << "\n";
  return 0;
}

int cmd_eval_probe(const Options& o, std::ostream& out) {
  EvalContext ctx = open_eval(o, "eval-probe");
  const auto kinds = parse_kinds(o.features);
  const FeatureTable table = extract_features(ctx.state.model.query.encoder, ctx.corpus, view_policy(ctx.state.config));
  json report = report_header(ctx, o);
  for (LabelTask task : {LabelTask::Static, LabelTask::Dynamic}) {
    for (FeatureKind kind : kinds) {
      const double acc = linear_probe(table, task, kind, ctx.config.eval.probe);
      report["probe"][to_string(task)][to_string(kind)] = acc;
      log_event(ctx, {{"task", to_string(task)}, {"features", to_string(kind)}, {"accuracy", acc}});
    }
  }
  write_json(ctx.dir / "metrics.json", report);
  out << ctx.dir.string() << "\n";
  return 0;
}

int cmd_eval_seg(const Options& o, std::ostream& out) {
  EvalContext ctx = open_eval(o, "eval-seg");
  const auto kinds = parse_kinds(o.features);
  const EvalConfig& ec = ctx.config.eval;
  const TrainConfig& tc = ctx.state.config;
  Clock clock;
  std::vector<RowMatrix> feats;
  for (const auto& v : ctx.corpus.videos) {
    feats.push_back(frame_features(ctx.state.model.query.encoder, v, ec.seg_window, tc.aug.out_h, tc.aug.out_w));
  }
  std::cerr << "per-frame features in " << clock.seconds() << " s\n";

  json report = report_header(ctx, o);
  for (FeatureKind kind : kinds) {
    std::vector<RowMatrix> train_x;
    std::vector<std::vector<int>> train_y;
    for (int id : ctx.corpus.train) {
      train_x.push_back(select_kind(feats[static_cast<std::size_t>(id)], kind));
      train_y.push_back(ctx.corpus.video(id).frame_labels);
    }
    const TcnProbe probe = tcn_probe_train(train_x, train_y, ec.tcn);
    std::vector<SegMetrics> rows;
    std::vector<CsvRow> csv;
    for (int id : ctx.corpus.test) {
      const auto pred = tcn_probe_predict(probe, select_kind(feats[static_cast<std::size_t>(id)], kind));
      const SegMetrics m = seg_metrics(pred, ctx.corpus.video(id).frame_labels);
      rows.push_back(m);
      csv.push_back({std::to_string(id), format_double(m.acc), format_double(m.edit), format_double(m.f1_10),
                     format_double(m.f1_25), format_double(m.f1_50)});
    }
    write_text(ctx.dir / ("seg_" + to_string(kind) + ".csv"),
               to_csv({"video_id", "acc", "edit", "f1_10", "f1_25", "f1_50"}, csv));
    const SegMetrics mean = mean_metrics(rows);
    report["segmentation"][to_string(kind)] = {{"Acc", mean.acc},
                                               {"Edit", mean.edit},
                                               {"F1@10", mean.f1_10},
                                               {"F1@25", mean.f1_25},
                                               {"F1@50", mean.f1_50},
                                               {"probe_final_loss", probe.loss_history.back()}};
    log_event(ctx, {{"features", to_string(kind)}, {"F1@50", mean.f1_50}});
    std::cerr << "segmentation " << to_string(kind) << " done at " << clock.seconds() << " s\n";
  }
  write_json(ctx.dir / "metrics.json", report);
  out << ctx.dir.string() << "\n";
  return 0;
}

json stability_json(const StabilityResult& r) {
  return {{"psi", histogram_json(r.psi)},
          {"phi", histogram_json(r.phi)},
          {"videos_used", r.videos_used},
          {"videos_skipped", r.videos_skipped}};
}

int cmd_analyze(const Options& o, std::ostream& out) {
  EvalContext ctx = open_eval(o, "analyze");
  const EvalConfig& ec = ctx.config.eval;
  const TrainConfig& tc = ctx.state.config;
  const Encoder& encoder = ctx.state.model.query.encoder;
  json report = report_header(ctx, o);

  const StabilityResult stab = temporal_stability_hist(encoder, ctx.corpus, ctx.corpus.test, ctx.corpus.train,
                                                       ec.stability_clip, tc.aug.out_h, tc.aug.out_w);
  report["temporal_stability"] = stability_json(stab);
  write_text(ctx.dir / "stability_psi.csv", histogram_csv(stab.psi));
  write_text(ctx.dir / "stability_phi.csv", histogram_csv(stab.phi));
  log_event(ctx, {{"analysis", "temporal_stability"}, {"psi_mean", stab.psi.mean}, {"phi_mean", stab.phi.mean}});

  const FeatureTable table = extract_features(encoder, ctx.corpus, view_policy(tc));
  const Histogram sn = sn_similarity_hist(table, table.test_rows());
  report["sn_similarity"] = histogram_json(sn);
  write_text(ctx.dir / "sn_similarity.csv", histogram_csv(sn));
  log_event(ctx, {{"analysis", "sn_similarity"}, {"mean", sn.mean}});

  const FramesNeededResult fn =
      frames_needed_partition(encoder, ctx.corpus, table, view_policy(tc), ec.frame_counts, ec.probe);
  json parts = json::array();
  for (std::size_t i = 0; i < fn.frame_counts.size(); ++i) {
    parts.push_back({{"frames", fn.frame_counts[i]},
                     {"probe_accuracy", fn.probe_accuracy[i]},
                     {"subset_size", fn.subsets[i].size()},
                     {"R@1_s", fn.r1_psi[i] ? json(*fn.r1_psi[i]) : json(nullptr)},
                     {"R@1_n", fn.r1_phi[i] ? json(*fn.r1_phi[i]) : json(nullptr)}});
  }
  report["frames_needed"] = parts;
  log_event(ctx, {{"analysis", "frames_needed"}});

  std::vector<std::pair<std::string, Histogram>> sn_plot{{"with this checkpoint", sn}};
  if (!o.compare.empty()) {
    const TrainState other = restore_train_state(load_checkpoint(o.compare));
    const Encoder& enc2 = other.model.query.encoder;
    const StabilityResult stab2 = temporal_stability_hist(enc2, ctx.corpus, ctx.corpus.test, ctx.corpus.train,
                                                          ec.stability_clip, other.config.aug.out_h,
                                                          other.config.aug.out_w);
    const FeatureTable table2 = extract_features(enc2, ctx.corpus, view_policy(other.config));
    const Histogram sn2 = sn_similarity_hist(table2, table2.test_rows());
    report["compare"] = {{"checkpoint_hash", file_hash(o.compare)},
                         {"checkpoint_config", to_json(other.config)},
                         {"temporal_stability", stability_json(stab2)},
                         {"sn_similarity", histogram_json(sn2)}};
    write_text(ctx.dir / "compare_stability_psi.csv", histogram_csv(stab2.psi));
    write_text(ctx.dir / "compare_stability_phi.csv", histogram_csv(stab2.phi));
    write_text(ctx.dir / "compare_sn_similarity.csv", histogram_csv(sn2));
    if (ec.svg) {
      write_text(ctx.dir / "compare_stability.svg",
                 svg_histograms("temporal stability (compare)", {{"psi", stab2.psi}, {"phi", stab2.phi}}));
    }
    sn_plot.emplace_back("compare checkpoint", sn2);
    log_event(ctx, {{"analysis", "compare"}, {"sn_mean", sn2.mean}});
  }
  if (ec.svg) {
    write_text(ctx.dir / "stability.svg", svg_histograms("temporal stability", {{"psi", stab.psi}, {"phi", stab.phi}}));
    write_text(ctx.dir / "sn_similarity.svg", svg_histograms("cos(psi, phi) of long views", sn_plot));
  }
  write_json(ctx.dir / "metrics.json", report);
  out << ctx.dir.string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Long/short view feature decomposition on synthetic video"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key=value config file");
    sub->add_option("--seed", o.seed, "seed for every random stream");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--set", o.sets, "override one key, key=value (repeatable)");
    sub->add_option("--agg", o.agg, "aggregator: sum, linear, mlp, gru");
    sub->add_option("--n", o.n, "number of short views");
    sub->add_option("--loss-flags", o.loss_flags, "comma list of stationary, non-stationary, instance (or all, none)");
    sub->add_flag("--svg", o.svg, "also write SVG figures");
  };
  auto evaluation = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--corpus", o.corpus, "corpus directory");
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate")->required();
    sub->add_option("--features", o.features, "feature kinds, comma list of s, n, f");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  common(gen);
  auto* tr = app.add_subcommand("train", "train a model");
  common(tr);
  tr->add_option("--corpus", o.corpus, "corpus directory");
  tr->add_option("--init-from", o.init_from, "checkpoint of the N-1 model for curriculum training");
  tr->add_flag("--resume", o.resume, "continue from last.ckpt of the same run");
  auto* ret = app.add_subcommand("eval-retrieval", "nearest-neighbour retrieval and precision-recall");
  evaluation(ret);
  auto* probe = app.add_subcommand("eval-probe", "linear probes on frozen features");
  evaluation(probe);
  auto* seg = app.add_subcommand("eval-seg", "temporal segmentation with a dilated convolution probe");
  evaluation(seg);
  auto* an = app.add_subcommand("analyze", "feature decomposition analyses");
  evaluation(an);
  an->add_option("--compare", o.compare, "second checkpoint, e.g. trained without the instance loss");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "E_CONFIG: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (ret->parsed()) return cmd_eval_retrieval(o, out);
    if (probe->parsed()) return cmd_eval_probe(o, out);
    if (seg->parsed()) return cmd_eval_seg(o, out);
    if (an->parsed()) return cmd_analyze(o, out);
  } catch (const Error& e) {
    err << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "E_VALUE: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace lsfd
