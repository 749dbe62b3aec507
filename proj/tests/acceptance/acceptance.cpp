// Acceptance gate: one PASS/FAIL line per criterion. Optional arguments
// restrict the run to the named criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <tuple>

#include "doramos/ensemble.hpp"
#include "doramos/fileio.hpp"
#include "doramos/labels.hpp"
#include "doramos/metrics.hpp"
#include "doramos/network.hpp"
#include "doramos/predictions.hpp"
#include "doramos/synthetic.hpp"
#include "doramos/training.hpp"
#include "support/metric_oracles.hpp"
#include "support/model_checks.hpp"
#include "support/ridge_oracle.hpp"
#include "support/testing.hpp"

using namespace doramos;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- training

// Desk-scale widths for the end-to-end criteria.
ModelConfig bench_model(Variant v) {
  ModelConfig m;
  m.variant = v;
  m.d_common = 64;
  m.d_hidden = 64;
  m.lstm_hidden = 64;
  return m;
}

TrainConfig bench_train(Criterion c, std::uint64_t seed) {
  TrainConfig t;
  t.criterion = c;
  t.seed = seed;
  t.lr = 3e-3;
  t.max_epochs = 200;
  t.patience = 20;
  return t;
}

struct Bench {
  SyntheticSet set = generate_synthetic(SynthConfig{});
  Split split = stratified_split(set.dataset, 0.2, 0);
  std::map<std::tuple<Variant, Criterion, std::uint64_t>, Checkpoint> runs;

  const Checkpoint& run(Variant v, Criterion c, std::uint64_t seed) {
    const auto key = std::make_tuple(v, c, seed);
    auto it = runs.find(key);
    if (it == runs.end()) {
      const auto t0 = std::chrono::steady_clock::now();
      it = runs.emplace(key, train(bench_model(v), split.train, split.dev, bench_train(c, seed))).first;
      std::fprintf(stderr, "  trained %s/%s seed %llu: %zu epochs, best %zu, %.0f s\n",
                   nlohmann::json(v).get<std::string>().c_str(), to_string(c).c_str(),
                   static_cast<unsigned long long>(seed), it->second.epochs_run, it->second.best_epoch,
                   seconds_since(t0));
    }
    return it->second;
  }

  DevScore dev_score(const Checkpoint& ck) const {
    return system_srcc(predict_dataset(ck.model, ck.params, split.dev), split.dev);
  }
};

Bench& bench() {
  static Bench b;
  return b;
}

// ---------------------------------------------------------------- criteria

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string where;
  std::size_t configs = 0;
  for (Variant v : {Variant::Dora, Variant::Coral, Variant::Decoupled}) {
    for (Temporal t : {Temporal::Transformer, Temporal::BiLstm}) {
      for (Pooling p : {Pooling::Attention, Pooling::Mean}) {
        const auto r = testing_support::full_model_gradcheck(testing_support::tiny_config(v, t, p), 100 + configs);
        ++configs;
        if (r.worst >= worst) {
          worst = r.worst;
          where = nlohmann::json(v).get<std::string>() + "/" + nlohmann::json(t).get<std::string>() + "/" +
                  nlohmann::json(p).get<std::string>() + " " + r.worst_param;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {configs == 12 && worst < 1e-4 && secs < 300.0,
          std::to_string(configs) + " configs, worst rel err " + fmt("%.2e", worst) + " (" + where + "), " +
              fmt("%.1f", secs) + " s"};
}

Outcome decoupling() {
  std::size_t isolated = 0;
  for (Temporal t : {Temporal::Transformer, Temporal::BiLstm}) {
    for (Pooling p : {Pooling::Attention, Pooling::Mean}) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        isolated += testing_support::ta_gradient_isolated(testing_support::tiny_config(Variant::Decoupled, t, p), seed);
      }
    }
  }
  return {isolated == 12, std::to_string(isolated) + "/12 decoupled cases with bitwise-zero temporal gradients"};
}

Outcome label_softening() {
  const ScoreBins bins = make_bins();
  Rng rng(2024);
  const std::size_t cases = 2000;
  std::size_t bad_norm = 0, bad_argmax = 0, bad_decay = 0, bad_order = 0;
  double worst_norm = 0.0;
  for (std::size_t i = 0; i < cases; ++i) {
    const double s = rng.uniform(1.0, 5.0);
    const double sigma = rng.uniform(0.05, 1.0);
    const auto y = gaussian_soften(s, bins, SofteningConfig{sigma});

    double total = 0.0;
    for (double v : y) total += v;
    worst_norm = std::max(worst_norm, std::fabs(total - 1.0));
    bad_norm += std::fabs(total - 1.0) > 1e-12;

    // Nearest center found independently; exact midpoints accept either.
    std::size_t nearest = 0;
    for (std::size_t k = 1; k < bins.K; ++k) {
      if (std::fabs(s - bins.centers[k]) < std::fabs(s - bins.centers[nearest])) nearest = k;
    }
    const auto argmax = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    bad_argmax += argmax != nearest &&
                  std::fabs(std::fabs(s - bins.centers[argmax]) - std::fabs(s - bins.centers[nearest])) > 1e-12;

    for (std::size_t a = 0; a < bins.K; ++a) {
      for (std::size_t b = 0; b < bins.K; ++b) {
        const double da = std::fabs(s - bins.centers[a]), db = std::fabs(s - bins.centers[b]);
        if (da < db - 1e-12 && (y[a] < y[b] || (y[b] > 0.0 && !(y[a] > y[b])))) ++bad_decay;
      }
    }

    const double s2 = rng.uniform(1.0, 5.0);
    const double lo = std::min(s, s2), hi = std::max(s, s2);
    if (hi - lo > 1e-6) {
      const SofteningConfig cfg{sigma};
      const double dlo = decode_expected(gaussian_soften(lo, bins, cfg), bins);
      const double dhi = decode_expected(gaussian_soften(hi, bins, cfg), bins);
      bad_order += !(dlo < dhi);
    }
  }
  const bool pass = bad_norm + bad_argmax + bad_decay + bad_order == 0;
  return {pass, std::to_string(cases) + " cases: normalization worst " + fmt("%.1e", worst_norm) +
                    ", violations norm/argmax/decay/order = " + std::to_string(bad_norm) + "/" +
                    std::to_string(bad_argmax) + "/" + std::to_string(bad_decay) + "/" + std::to_string(bad_order)};
}

Outcome metric_oracles_check() {
  Rng rng(7);
  double worst = 0.0;
  std::size_t mismatched_definedness = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto [x, y] = metric_oracles::random_tied_pair(rng, 2 + rng.index(49));
    const auto s = spearman(x, y), so = metric_oracles::oracle_spearman(x, y);
    const auto k = kendall_tau_b(x, y), ko = metric_oracles::oracle_kendall_b(x, y);
    mismatched_definedness += (s.has_value() != so.has_value()) + (k.has_value() != ko.has_value());
    if (s && so) worst = std::max(worst, std::fabs(*s - *so));
    if (k && ko) worst = std::max(worst, std::fabs(*k - *ko));
  }
  const std::vector<double> a = {1, 2, 3, 4}, b = {1, 3, 2, 4};
  const double hs = *spearman(a, b), hk = *kendall_tau_b(a, b);
  const bool hand = std::fabs(hs - 0.8) <= 1e-15 && std::fabs(hk - 2.0 / 3.0) <= 1e-15;
  return {worst <= 1e-12 && mismatched_definedness == 0 && hand,
          "200 tied vectors, worst diff " + fmt("%.1e", worst) + "; hand cases " + fmt("%.17g", hs) + ", " +
              fmt("%.17g", hk)};
}

Outcome criterion_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  Bench& b = bench();
  const std::vector<Criterion> crits = {Criterion::L1, Criterion::CE, Criterion::Gaussian};
  std::map<Criterion, double> total;
  std::size_t gaussian_wins = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::map<Criterion, double> score;
    for (Criterion c : crits) {
      score[c] = b.dev_score(b.run(Variant::Dora, c, seed)).mean();
      total[c] += score[c] / 5.0;
    }
    const bool win = score[Criterion::Gaussian] > score[Criterion::L1] && score[Criterion::Gaussian] > score[Criterion::CE];
    gaussian_wins += win;
    per_seed << " s" << seed << "=" << fmt("%.3f", score[Criterion::L1]) << "/" << fmt("%.3f", score[Criterion::CE])
             << "/" << fmt("%.3f", score[Criterion::Gaussian]);
  }
  const double secs = seconds_since(t0);
  const bool margin = total[Criterion::Gaussian] >= std::max(total[Criterion::L1], total[Criterion::CE]) - 0.02;
  return {margin && gaussian_wins >= 4 && secs < 3600.0,
          "mean l1/ce/gaussian = " + fmt("%.3f", total[Criterion::L1]) + "/" + fmt("%.3f", total[Criterion::CE]) + "/" +
              fmt("%.3f", total[Criterion::Gaussian]) + ", gaussian highest in " + std::to_string(gaussian_wins) +
              "/5 seeds," + per_seed.str() + ", " + fmt("%.0f", secs) + " s"};
}

Outcome learnability() {
  const auto t0 = std::chrono::steady_clock::now();
  Bench& b = bench();
  const Checkpoint& ck = b.run(Variant::Dora, Criterion::Gaussian, 0);
  const DevScore d = b.dev_score(ck);
  const double secs = seconds_since(t0);
  const bool pass = d.srcc_mi && d.srcc_ta && *d.srcc_mi >= 0.90 && *d.srcc_ta >= 0.85 && ck.epochs_run <= 200 &&
                    secs < 600.0;
  return {pass, "dev system SRCC_MI " + fmt("%.3f", d.srcc_mi.value_or(NAN)) + ", SRCC_TA " +
                    fmt("%.3f", d.srcc_ta.value_or(NAN)) + " (best epoch " + std::to_string(ck.best_epoch) + " of " +
                    std::to_string(ck.epochs_run) + "), " + fmt("%.0f", secs) + " s"};
}

Outcome pooling_equivalence() {
  ParamStore p;
  p.add("pool.query", Tensor::matrix(24, 1));
  Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor seq = testing_support::random_matrix(1 + rng.index(64), 24, rng, 5.0);
    Tape tape;
    const Graph g{tape, p};
    const Var x = tape.constant(seq);
    const Var pooled = nn::attention_pool(g, "pool", x);
    const Var mean = nn::mean_pool(x);
    worst = std::max(worst, testing_support::max_abs_diff(pooled.value(), mean.value()));
  }
  return {worst < 1e-12, "200 sequences, max abs diff " + fmt("%.1e", worst)};
}

Outcome ridge_oracle_check() {
  Rng rng(41);
  Eigen::MatrixXd X(50, 8);
  for (Eigen::Index i = 0; i < 50; ++i) {
    for (Eigen::Index j = 0; j < 8; ++j) X(i, j) = rng.normal();
  }
  Eigen::VectorXd y(50);
  for (Eigen::Index i = 0; i < 50; ++i) y(i) = 0.4 * X(i, 0) - 0.7 * X(i, 3) + rng.normal();
  const std::vector<double> yv(y.data(), y.data() + 50);
  double worst = 0.0;
  for (double lambda : {0.01, 1.0, 100.0}) {
    const RidgeModel m = ridge_fit(X, yv, lambda);
    const auto [w, b0] = ridge_oracle::gradient_descent_ridge(X, y, lambda);
    for (Eigen::Index j = 0; j < 8; ++j) worst = std::max(worst, std::fabs(m.weights[static_cast<std::size_t>(j)] - w(j)));
    worst = std::max(worst, std::fabs(m.intercept - b0));
  }
  Eigen::VectorXd w_true(8);
  w_true << 1, -2, 0.5, 0, 3, -1, 0.25, 2;
  const Eigen::VectorXd exact = (X * w_true).array() - 1.5;
  const RidgeModel m0 = ridge_fit(X, std::vector<double>(exact.data(), exact.data() + 50), 0.0);
  double recovery = std::fabs(m0.intercept + 1.5);
  for (Eigen::Index j = 0; j < 8; ++j) recovery = std::max(recovery, std::fabs(m0.weights[static_cast<std::size_t>(j)] - w_true(j)));
  return {worst < 1e-6 && recovery < 1e-6,
          "max diff vs iterative minimizer " + fmt("%.1e", worst) + ", lambda=0 recovery error " + fmt("%.1e", recovery)};
}

Outcome stacking() {
  const auto t0 = std::chrono::steady_clock::now();
  Bench& b = bench();
  struct Member {
    Variant v;
    std::uint64_t seed;
  };
  std::vector<Member> roster;
  for (std::uint64_t s = 0; s < 5; ++s) roster.push_back({Variant::Dora, s});
  for (std::uint64_t s = 0; s < 2; ++s) roster.push_back({Variant::Coral, s});
  for (std::uint64_t s = 0; s < 2; ++s) roster.push_back({Variant::Decoupled, s});

  const Dataset& dev = b.split.dev;
  std::vector<BaseModel> models;
  for (const auto& m : roster) {
    const Checkpoint& ck = b.run(m.v, Criterion::Gaussian, m.seed);
    const auto preds = predict_dataset(ck.model, ck.params, dev);
    BaseModel base{nlohmann::json(m.v).get<std::string>() + std::to_string(m.seed), {}};
    for (std::size_t i = 0; i < preds.size(); ++i) base.predictions.push_back(to_record(dev.records[i].clip_id, preds[i]));
    models.push_back(std::move(base));
  }
  const std::uint64_t seed = 0;
  const StackedModel sm = stack(models, dev, seed);

  // Single models scored on the same meta-validation clips.
  std::vector<std::string> systems;
  for (const auto& r : dev.records) systems.push_back(r.system_id);
  const MetaSplit ms = meta_split(systems, seed);
  double best_mi = -1.0, best_ta = -1.0;
  for (const auto& m : models) {
    std::vector<double> pm, pt, tm, tt;
    std::vector<std::string> sys;
    for (std::size_t i : ms.val) {
      pm.push_back(m.predictions[i].mi);
      pt.push_back(m.predictions[i].ta);
      tm.push_back(*dev.records[i].mi);
      tt.push_back(*dev.records[i].ta);
      sys.push_back(systems[i]);
    }
    const auto smi = system_level(pm, tm, sys);
    const auto sta = system_level(pt, tt, sys);
    best_mi = std::max(best_mi, spearman(smi.pred, smi.truth).value_or(-1.0));
    best_ta = std::max(best_ta, spearman(sta.pred, sta.truth).value_or(-1.0));
  }
  const bool pass = sm.mi.meta_val_srcc >= best_mi - 0.02 && sm.ta.meta_val_srcc >= best_ta - 0.02;
  return {pass, "meta-val system SRCC stacked/best single: MI " + fmt("%.3f", sm.mi.meta_val_srcc) + "/" +
                    fmt("%.3f", best_mi) + ", TA " + fmt("%.3f", sm.ta.meta_val_srcc) + "/" + fmt("%.3f", best_ta) +
                    " (lambda " + fmt("%g", sm.mi.model.lambda) + ", " + fmt("%g", sm.ta.model.lambda) + "), " +
                    fmt("%.0f", seconds_since(t0)) + " s"};
}

int cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(DORAMOS_CLI_PATH) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Runs the whole CLI pipeline inside `root`; returns the first failing step.
std::string cli_pipeline(const std::filesystem::path& root) {
  const std::string d = root.string();
  const std::string model = " --d-common 16 --n-heads 2 --d-hidden 16 --lstm-hidden 8 --max-epochs 4 --dropout 0.1";
  const std::vector<std::string> steps = {
      "gen-synth --systems 6 --clips 8 --seed 11 --out-dir " + d + "/data",
      "split --manifest " + d + "/data/manifest.jsonl --seed 3 --out " + d + "/train.jsonl " + d + "/dev.jsonl",
      "train --seed 5 --train " + d + "/train.jsonl --dev " + d + "/dev.jsonl --out " + d + "/dora.ckpt" + model,
      "train --seed 6 --variant coral --train " + d + "/train.jsonl --dev " + d + "/dev.jsonl --out " + d +
          "/coral.ckpt" + model,
      "predict --checkpoint " + d + "/dora.ckpt --manifest " + d + "/dev.jsonl --out " + d + "/dora.jsonl",
      "predict --checkpoint " + d + "/coral.ckpt --manifest " + d + "/dev.jsonl --out " + d + "/coral.jsonl",
      "evaluate --predictions " + d + "/dora.jsonl --manifest " + d + "/dev.jsonl --out " + d + "/report.json",
      "ensemble --predictions " + d + "/dora.jsonl " + d + "/coral.jsonl --manifest " + d + "/dev.jsonl --seed 2 --out " +
          d + "/stacked.json",
      "ensemble-predict --stacked " + d + "/stacked.json --predictions " + d + "/dora.jsonl " + d +
          "/coral.jsonl --out " + d + "/stacked.jsonl",
  };
  for (const auto& s : steps) {
    if (cli(s, root / "cli.log") != 0) return s.substr(0, s.find(' '));
  }
  return "";
}

std::map<std::string, std::string> tree_contents(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "cli.log") {
      out[std::filesystem::relative(e.path(), root).string()] = read_file(e.path());
    }
  }
  return out;
}

Outcome determinism() {
  testing_support::ScratchDir a("accept-a"), b("accept-b");
  for (const auto* dir : {&a, &b}) {
    const std::string failed = cli_pipeline(dir->path());
    if (!failed.empty()) return {false, "CLI step '" + failed + "' failed; see " + (dir->path() / "cli.log").string()};
  }
  const auto ta = tree_contents(a.path()), tb = tree_contents(b.path());
  std::size_t differing = 0;
  std::string example;
  for (const auto& [name, bytes] : ta) {
    auto it = tb.find(name);
    if (it == tb.end() || it->second != bytes) {
      ++differing;
      example = name;
    }
  }
  differing += tb.size() > ta.size() ? tb.size() - ta.size() : 0;
  return {differing == 0 && !ta.empty(), std::to_string(ta.size()) + " output files compared, " +
                                             std::to_string(differing) + " differ" +
                                             (example.empty() ? "" : " (e.g. " + example + ")")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient_suite", gradient_suite},
      {"decoupling_exactness", decoupling},
      {"label_softening", label_softening},
      {"metric_oracles", metric_oracles_check},
      {"pooling_equivalence", pooling_equivalence},
      {"ridge_oracle", ridge_oracle_check},
      {"determinism", determinism},
      {"learnability", learnability},
      {"criterion_ordering", criterion_ordering},
      {"stacking", stacking},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && !only.contains(name)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
