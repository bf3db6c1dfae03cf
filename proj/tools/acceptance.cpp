// Acceptance battery: one PASS/FAIL line per criterion, exit status 0 only
// when all selected criteria pass.

#include "lsfd/cli.hpp"
#include "lsfd/config.hpp"
#include "oracles.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

using namespace lsfd;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kGradInstances = 20;
constexpr double kGradSeconds = 120.0;
constexpr double kOracleTol = 1e-12;
constexpr double kTrainSeconds = 1800.0;
constexpr double kStabilityMargin = 0.10;    // ψ over φ, criterion 5
constexpr double kDegenerateMargin = 0.15;   // cos(ψ, φ) without over with L_instance, criterion 6
constexpr double kSegMargin = 5.0;           // φ over ψ, F1@50
constexpr double kRetrievalMargin = 5.0;     // ψ over φ, background R@1

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

// Runs one lsfd command in-process and returns the directory it printed.
fs::path run_lsfd(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) throw std::runtime_error("lsfd " + args[0] + " failed: " + err.str());
  const std::string s = out.str();
  return s.substr(0, s.find('\n'));
}

Outcome autodiff() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<test::SuiteResult> all = test::op_grad_suites();
  for (auto&& group : {test::model_grad_suites(), test::loss_grad_suites()}) all.insert(all.end(), group.begin(), group.end());
  const double secs = seconds_since(t0);
  Outcome o{secs < kGradSeconds, ""};
  double worst = 0;
  std::string worst_name;
  for (const auto& r : all) {
    if (r.worst >= kGradTol || r.instances < kGradInstances) {
      o.pass = false;
      o.detail += r.name + " failed (" + fmt("%.3g", r.worst) + ", " + std::to_string(r.instances) + " instances); ";
    }
    if (r.worst >= worst) {
      worst = r.worst;
      worst_name = r.name;
    }
  }
  o.detail += std::to_string(all.size()) + " suites, worst rel err " + fmt("%.3g", worst) + " (" + worst_name + "), " +
              fmt("%.1f", secs) + " s";
  return o;
}

Outcome oracle_equivalence() {
  const auto r = test::loss_oracle(100);
  const double worst = std::max({r.stationary, r.non_stationary, r.instance});
  return {r.instances == 100 && worst < kOracleTol,
          "max |diff| stationary " + fmt("%.2g", r.stationary) + ", non-stationary " + fmt("%.2g", r.non_stationary) +
              ", instance " + fmt("%.2g", r.instance) + " over " + std::to_string(r.instances) + " instances"};
}

Outcome closed_forms() {
  const Head id2 = Head::identity(2), id4 = Head::identity(4);
  const Tensor a = Tensor::from({2}, {1, 0});
  const Features f = test::features_of(a, Tensor::from({2}, {0, 1}));
  Rng rng(1);
  const Aggregator sum(AggregatorKind::Sum, 1, 2, rng);
  const bool empty = loss_stationary(id2, {f}, 0, f.psi, std::nullopt, 0.1).item() == 0.0 &&
                     loss_non_stationary(id2, sum, {f}, f.phi, std::nullopt, 0.1).item() == 0.0 &&
                     loss_instance(id4, f.xi, f.xi, std::nullopt, 0.1).item() == 0.0;
  double worst_k = 0;
  for (int k = 1; k <= 16; ++k) {
    Vector rows(2 * k);
    for (int r = 0; r < k; ++r) rows.segment(2 * r, 2) = a.data();
    worst_k = std::max(worst_k, std::abs(infonce(id2, a, a, Tensor({k, 2}, rows), 0.1).item() - std::log(k + 1.0)));
  }
  const double orth = std::abs(infonce(id2, a, a, Tensor::from({1, 2}, {0, 1}), 0.1).item() - std::log1p(std::exp(-10.0)));
  return {empty && worst_k < kOracleTol && orth < kOracleTol,
          std::string("empty bank ") + (empty ? "0" : "nonzero") + ", ln(k+1) err " + fmt("%.2g", worst_k) +
              " (k=1..16), ln(1+e^-10) err " + fmt("%.2g", orth)};
}

Outcome segmentation_oracles() {
  using test::runs;
  const double edit = edit_score(runs({{0, 3}, {2, 5}}), runs({{0, 2}, {1, 2}, {2, 4}}));
  const std::vector<int> gt = runs({{0, 10}, {1, 10}});
  const double f1_full = f1_at(runs({{0, 9}, {1, 11}}), gt, 0.5);
  const double f1_half = f1_at(runs({{0, 3}, {1, 17}}), gt, 0.5);
  const int mismatches = test::edit_dp_mismatches(5);
  const bool ok = std::abs(edit - 200.0 / 3.0) < kOracleTol && f1_full == 100.0 && std::abs(f1_half - 50.0) < kOracleTol &&
                  mismatches == 0;
  return {ok, "edit " + fmt("%.4f", edit) + ", F1@50 " + fmt("%.4f", f1_full) + " and " + fmt("%.4f", f1_half) +
                  ", DP vs brute force mismatches " + std::to_string(mismatches) + " of " +
                  std::to_string(test::segment_sequences(5).size() * test::segment_sequences(5).size())};
}

Outcome aggregator_contracts(const fs::path& work) {
  Rng rng(31);
  const Aggregator sum(AggregatorKind::Sum, 3, 8, rng);
  bool perm = true;
  for (int i = 0; i < 100; ++i) {
    std::vector<Tensor> in{test::random_tensor(rng, {8}), test::random_tensor(rng, {8}), test::random_tensor(rng, {8})};
    const Vector ref = sum.apply(in).data();
    std::vector<int> idx{0, 1, 2};
    while (std::next_permutation(idx.begin(), idx.end())) {
      perm = perm && test::bit_equal(sum.apply({in[idx[0]], in[idx[1]], in[idx[2]]}).data(), ref);
    }
  }
  const Aggregator gru(AggregatorKind::Gru, 2, 8, rng);
  const Tensor x = test::random_tensor(rng, {8}), y = test::random_tensor(rng, {8});
  const bool order = gru.apply({x, y}).data() != gru.apply({y, x}).data();

  TrainConfig c2;
  c2.encoder = EncoderConfig{4, 4, 8};
  const TrainState s2 = make_train_state(c2);
  const fs::path ckpt = work / "curriculum_n2.ckpt";
  save_checkpoint(s2, ckpt);
  TrainConfig c3 = c2;
  c3.n = 3;
  const TrainState s3 = curriculum_init(c3, load_checkpoint(ckpt));
  bool kept = true;
  int compared = 0;
  auto same = [&](const NamedTensors& a, const NamedTensors& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      kept = kept && a[i].first == b[i].first && test::bit_equal(a[i].second.data(), b[i].second.data());
      ++compared;
    }
  };
  same(s2.model.query.parameters("q."), s3.model.query.parameters("q."));
  same(s2.model.key.parameters("k."), s3.model.key.parameters("k."));
  return {perm && order && kept, std::string("sum permutation ") + (perm ? "exact" : "BROKEN") + ", gru order " +
                                     (order ? "sensitive" : "INSENSITIVE") + ", curriculum N=2->3 " +
                                     std::to_string(compared) + " encoder/head tensors " +
                                     (kept ? "bit-identical" : "CHANGED")};
}

// gen-data -> train -> every evaluation, into `root`.
std::vector<fs::path> pipeline(const fs::path& root, const std::vector<std::string>& config) {
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), config.begin(), config.end());
    return a;
  };
  const std::string corpus = (root / "corpus").string(), out = (root / "runs").string();
  std::vector<fs::path> dirs{run_lsfd(with({"gen-data", "--out", corpus}))};
  dirs.push_back(run_lsfd(with({"train", "--corpus", corpus, "--out", out})));
  const std::string ckpt = (dirs.back() / "best.ckpt").string();
  for (const char* cmd : {"eval-retrieval", "eval-probe", "eval-seg", "analyze"}) {
    dirs.push_back(run_lsfd(with({cmd, "--corpus", corpus, "--out", out, "--checkpoint", ckpt})));
  }
  return dirs;
}

Outcome determinism(const fs::path& work) {
  // Reduced corpus and epochs; the pipeline and every code path are the full ones.
  const std::vector<std::string> config{"--seed",     "7",  "--set", "corpus.n_train=48", "--set", "corpus.n_test=16",
                                        "--set", "train.epochs=3", "--set", "train.val_videos=16", "--svg"};
  fs::remove_all(work / "det_a");
  fs::remove_all(work / "det_b");
  const auto a = pipeline(work / "det_a", config), b = pipeline(work / "det_b", config);
  std::size_t files = 0, differ = 0;
  std::string first;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (const auto& e : fs::directory_iterator(a[i])) {
      const fs::path other = b[i] / e.path().filename();
      ++files;
      if (!fs::exists(other) || slurp(e.path()) != slurp(other)) {
        ++differ;
        if (first.empty()) first = e.path().string();
      }
    }
  }
  return {differ == 0 && files > 0, std::to_string(files) + " files over 6 commands, " + std::to_string(differ) +
                                        " differ" + (first.empty() ? "" : " (first: " + first + ")")};
}

// The default desk runs behind criteria 5-8.
struct DeskRuns {
  std::vector<std::string> overrides;  // extra --set pairs, for smoke runs
  fs::path corpus, full, no_instance, instance_only;
  double full_seconds = 0;
  json full_history;
};

fs::path existing_run(const fs::path& root, const std::string& prefix) {
  if (!fs::exists(root)) return {};
  for (const auto& e : fs::directory_iterator(root)) {
    const std::string name = e.path().filename().string();
    if (name.rfind(prefix + "-", 0) == 0 && fs::exists(e.path() / "metrics.json")) return e.path();
  }
  return {};
}

fs::path train_once(const DeskRuns& d, const fs::path& root, const std::string& flags, bool reuse, double* seconds) {
  if (reuse) {
    const fs::path dir = existing_run(root, "train");
    if (!dir.empty()) {
      std::cerr << "reusing " << dir << "\n";
      return dir;
    }
  }
  fs::remove_all(root);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> a{"train", "--corpus", d.corpus.string(), "--out", root.string(), "--loss-flags", flags};
  a.insert(a.end(), d.overrides.begin(), d.overrides.end());
  const fs::path dir = run_lsfd(a);
  if (seconds) *seconds = seconds_since(t0);
  return dir;
}

fs::path evaluate(const DeskRuns& d, const std::string& cmd, const fs::path& ckpt_dir, const fs::path& root, bool reuse,
                  const std::vector<std::string>& extra = {}) {
  if (reuse) {
    const fs::path dir = existing_run(root, cmd);
    if (!dir.empty()) return dir;
  }
  fs::remove_all(root);
  std::vector<std::string> a{cmd, "--corpus", d.corpus.string(), "--out", root.string(), "--checkpoint",
                             (ckpt_dir / "best.ckpt").string(), "--svg"};
  a.insert(a.end(), extra.begin(), extra.end());
  a.insert(a.end(), d.overrides.begin(), d.overrides.end());
  return run_lsfd(a);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-10"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool reuse = false;
  std::vector<std::string> desk_sets;
  app.add_option("--work", work, "scratch directory for corpora and runs");
  app.add_option("--only", only, "run only these criteria");
  app.add_flag("--reuse", reuse, "reuse finished desk runs found in the scratch directory");
  app.add_option("--desk-set", desk_sets, "key=value override for the desk runs (smoke testing only)");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}
                                              : std::set<int>(only.begin(), only.end());
  const fs::path w = fs::absolute(work);
  fs::create_directories(w);

  int failed = 0;
  auto print = [&](int id, const std::string& title, const Outcome& o) {
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail
              << std::endl;
    if (!o.pass) ++failed;
  };
  auto guarded = [&](int id, const std::string& title, const std::function<Outcome()>& f) {
    if (!selected.count(id)) return;
    try {
      print(id, title, f());
    } catch (const std::exception& e) {
      print(id, title, {false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, "autodiff correctness", autodiff);
  guarded(2, "InfoNCE oracle equivalence", oracle_equivalence);
  guarded(3, "closed-form loss values", closed_forms);
  guarded(4, "segmentation metric oracles", segmentation_oracles);

  const bool desk = selected.count(5) || selected.count(6) || selected.count(7) || selected.count(8);
  if (desk) {
    DeskRuns d;
    for (const auto& kv : desk_sets) {
      d.overrides.push_back("--set");
      d.overrides.push_back(kv);
    }
    json stab, seg, ret, probe_full, probe_inst;
    std::string setup_error;
    try {
      d.corpus = w / "desk_corpus";
      if (!reuse || !fs::exists(d.corpus / "manifest.json")) {
        fs::remove_all(d.corpus);
        std::vector<std::string> a{"gen-data", "--out", d.corpus.string()};
        a.insert(a.end(), d.overrides.begin(), d.overrides.end());
        run_lsfd(a);
      }
      d.full = train_once(d, w / "desk_full", "all", reuse, &d.full_seconds);
      if (d.full_seconds == 0) d.full_seconds = read_json(w / "desk_full_seconds.json").get<double>();
      std::ofstream(w / "desk_full_seconds.json") << d.full_seconds;
      d.full_history = read_json(d.full / "metrics.json")["history"];
      d.no_instance = train_once(d, w / "desk_no_instance", "stationary,non-stationary", reuse, nullptr);
      if (selected.count(8)) d.instance_only = train_once(d, w / "desk_instance_only", "instance", reuse, nullptr);

      stab = read_json(evaluate(d, "analyze", d.full, w / "eval_analyze", reuse,
                                {"--compare", (d.no_instance / "best.ckpt").string()}) /
                       "metrics.json");
      if (selected.count(7)) {
        seg = read_json(evaluate(d, "eval-seg", d.full, w / "eval_seg", reuse) / "metrics.json");
        ret = read_json(evaluate(d, "eval-retrieval", d.full, w / "eval_retrieval", reuse) / "metrics.json");
      }
      if (selected.count(8)) {
        probe_full = read_json(evaluate(d, "eval-probe", d.full, w / "eval_probe_full", reuse) / "metrics.json");
        probe_inst =
            read_json(evaluate(d, "eval-probe", d.instance_only, w / "eval_probe_instance", reuse) / "metrics.json");
      }
    } catch (const std::exception& e) {
      setup_error = e.what();
    }

    auto desk_guarded = [&](int id, const std::string& title, const std::function<Outcome()>& f) {
      if (!setup_error.empty()) {
        if (selected.count(id)) print(id, title, {false, "desk run failed: " + setup_error});
        return;
      }
      guarded(id, title, f);
    };

    if (setup_error.empty() && d.full_history.size() >= 20) {
      const double l1 = d.full_history[0]["train_total"], l20 = d.full_history[19]["train_total"];
      std::cout << "info: default run training loss epoch 1 " << fmt("%.4f", l1) << ", epoch 20 " << fmt("%.4f", l20)
                << (l20 < l1 ? " (decreased)" : " (did not decrease)") << ", " << fmt("%.0f", d.full_seconds)
                << " s for " << d.full_history.size() << " epochs" << std::endl;
    }

    desk_guarded(5, "decomposition (temporal stability)", [&] {
      const double psi = stab["temporal_stability"]["psi"]["mean"], phi = stab["temporal_stability"]["phi"]["mean"];
      const bool fast = d.full_seconds < kTrainSeconds;
      return Outcome{psi - phi >= kStabilityMargin && fast,
                     "mean cos psi " + fmt("%.4f", psi) + ", phi " + fmt("%.4f", phi) + ", gap " + fmt("%.4f", psi - phi) +
                         " (need >= " + fmt("%.2f", kStabilityMargin) + "); training " + fmt("%.0f", d.full_seconds) +
                         " s (need < " + fmt("%.0f", kTrainSeconds) + ")"};
    });
    desk_guarded(6, "degenerate solution without L_instance", [&] {
      const double with = stab["sn_similarity"]["mean"], without = stab["compare"]["sn_similarity"]["mean"];
      return Outcome{without - with >= kDegenerateMargin,
                     "mean cos(psi, phi) without " + fmt("%.4f", without) + ", with " + fmt("%.4f", with) + ", gap " +
                         fmt("%.4f", without - with) + " (need >= " + fmt("%.2f", kDegenerateMargin) + ")"};
    });
    desk_guarded(7, "task alignment", [&] {
      const double seg_n = seg["segmentation"]["n"]["F1@50"], seg_s = seg["segmentation"]["s"]["F1@50"];
      const double r_s = ret["retrieval"]["static"]["s"]["R@1"], r_n = ret["retrieval"]["static"]["n"]["R@1"];
      return Outcome{seg_n - seg_s >= kSegMargin && r_s - r_n >= kRetrievalMargin,
                     "F1@50 phi " + fmt("%.2f", seg_n) + " vs psi " + fmt("%.2f", seg_s) + " (need phi ahead by " +
                         fmt("%.0f", kSegMargin) + "); background R@1 psi " + fmt("%.2f", r_s) + " vs phi " +
                         fmt("%.2f", r_n) + " (need psi ahead by " + fmt("%.0f", kRetrievalMargin) + ")"};
    });
    desk_guarded(8, "loss ablation direction", [&] {
      const double full = probe_full["probe"]["dynamic"]["f"], inst = probe_inst["probe"]["dynamic"]["f"];
      return Outcome{full >= inst, "dynamic-label probe accuracy full " + fmt("%.2f", full) + " vs instance-only " +
                                       fmt("%.2f", inst) + (full > inst ? " (strict)" : "")};
    });
  }

  guarded(9, "determinism", [&] { return determinism(w); });
  guarded(10, "aggregator contracts", [&] { return aggregator_contracts(w); });

  std::cout << (failed == 0 ? "all selected criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
