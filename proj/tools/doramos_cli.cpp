// doramos: command-line front end for the scoring pipeline.
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "doramos/ablation.hpp"
#include "doramos/checkpoint.hpp"
#include "doramos/dataio.hpp"
#include "doramos/ensemble.hpp"
#include "doramos/fileio.hpp"
#include "doramos/predictions.hpp"
#include "doramos/synthetic.hpp"
#include "doramos/training.hpp"

namespace fs = std::filesystem;
using namespace doramos;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct ModelFlags {
  std::string variant = "dora";
  std::string temporal = "transformer";
  std::string pooling = "attention";
  ModelConfig cfg;
};

struct TrainFlags {
  std::string criterion = "gaussian";
  TrainConfig cfg;
};

void add_model_flags(CLI::App* app, ModelFlags& m, bool with_axes) {
  if (with_axes) {
    app->add_option("--variant", m.variant, "dora | coral | decoupled")->capture_default_str();
    app->add_option("--temporal", m.temporal, "transformer | bilstm")->capture_default_str();
    app->add_option("--pooling", m.pooling, "attention | mean")->capture_default_str();
  }
  app->add_option("--d-common", m.cfg.d_common, "cross-attention width")->capture_default_str();
  app->add_option("--n-heads", m.cfg.n_heads, "attention heads")->capture_default_str();
  app->add_option("--d-hidden", m.cfg.d_hidden, "MLP head hidden width")->capture_default_str();
  app->add_option("--lstm-hidden", m.cfg.lstm_hidden, "BiLSTM hidden size per direction")->capture_default_str();
  app->add_option("--layers", m.cfg.n_layers, "temporal layers")->capture_default_str();
  app->add_option("--bins", m.cfg.K, "score bins K")->capture_default_str();
  app->add_option("--dropout", m.cfg.dropout, "dropout rate")->capture_default_str();
  app->add_flag("--positional-encoding", m.cfg.positional_encoding, "add sinusoidal positions before the transformer");
}

void add_train_flags(CLI::App* app, TrainFlags& t, bool with_criterion) {
  if (with_criterion) app->add_option("--criterion", t.criterion, "l1 | ce | gaussian")->capture_default_str();
  app->add_option("--sigma", t.cfg.sigma, "Gaussian label width")->capture_default_str();
  app->add_option("--lr", t.cfg.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--batch-size", t.cfg.batch_size, "clips per update")->capture_default_str();
  app->add_option("--max-epochs", t.cfg.max_epochs, "epoch limit")->capture_default_str();
  app->add_option("--patience", t.cfg.patience, "epochs without dev improvement before stopping")
      ->capture_default_str();
  app->add_option("--w-mi", t.cfg.w_mi, "MI loss weight")->capture_default_str();
  app->add_option("--w-ta", t.cfg.w_ta, "TA loss weight")->capture_default_str();
}

ModelConfig resolve_model(const ModelFlags& m, const Dataset& ds) {
  ModelConfig cfg = m.cfg;
  cfg.variant = parse_enum<Variant>(m.variant);
  cfg.temporal = parse_enum<Temporal>(m.temporal);
  cfg.pooling = parse_enum<Pooling>(m.pooling);
  cfg.d_audio = ds.d_audio;
  cfg.d_text = ds.d_text;
  cfg.validate();
  return cfg;
}

std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

void require_widths(const Dataset& ds, const ModelConfig& cfg, const std::string& what) {
  if (ds.d_audio != cfg.d_audio || ds.d_text != cfg.d_text) {
    throw DataError(what + ": embedding widths " + std::to_string(ds.d_audio) + "/" + std::to_string(ds.d_text) +
                    " do not match the model's " + std::to_string(cfg.d_audio) + "/" + std::to_string(cfg.d_text));
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Music quality and text-alignment scoring"};
  app.require_subcommand(1);

  // gen-synth
  SynthConfig synth;
  std::string synth_out;
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic dataset with planted structure");
  gen->add_option("--systems", synth.n_systems, "systems")->capture_default_str();
  gen->add_option("--clips", synth.clips_per_system, "clips per system")->capture_default_str();
  gen->add_option("--noise-sd", synth.noise_sd, "score noise")->capture_default_str();
  gen->add_option("--seed", synth.seed, "seed")->capture_default_str();
  gen->add_option("--out-dir", synth_out, "output directory")->required();

  // split
  std::string split_manifest, split_train, split_dev;
  double dev_fraction = 0.2;
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "stratified train/dev split of a manifest");
  split->add_option("--manifest", split_manifest, "input manifest")->required();
  split->add_option("--dev-fraction", dev_fraction, "fraction of each system held out")->capture_default_str();
  split->add_option("--seed", split_seed, "seed")->capture_default_str();
  std::vector<std::string> split_outs;
  split->add_option("--out", split_outs, "train and dev manifest paths")->required()->expected(2);

  // train
  std::string train_path, dev_path, ckpt_out, log_out;
  ModelFlags train_model;
  TrainFlags train_flags;
  bool verbose = false;
  auto* trn = app.add_subcommand("train", "train one model with dev-set early stopping");
  trn->add_option("--train", train_path, "training manifest")->required();
  trn->add_option("--dev", dev_path, "dev manifest")->required();
  trn->add_option("--seed", train_flags.cfg.seed, "seed")->capture_default_str();
  trn->add_option("--out", ckpt_out, "checkpoint path")->required();
  trn->add_option("--log", log_out, "training log (default: <out>.log.tsv)");
  trn->add_flag("--verbose", verbose, "echo the training log to stderr");
  add_model_flags(trn, train_model, true);
  add_train_flags(trn, train_flags, true);

  // predict
  std::string pred_ckpt, pred_manifest, pred_out;
  auto* prd = app.add_subcommand("predict", "score every clip in a manifest");
  prd->add_option("--checkpoint", pred_ckpt, "checkpoint")->required();
  prd->add_option("--manifest", pred_manifest, "manifest")->required();
  prd->add_option("--out", pred_out, "predictions.jsonl")->required();

  // evaluate
  std::string eval_preds, eval_manifest, eval_out;
  auto* evl = app.add_subcommand("evaluate", "utterance- and system-level metrics");
  evl->add_option("--predictions", eval_preds, "predictions.jsonl")->required();
  evl->add_option("--manifest", eval_manifest, "manifest with true scores")->required();
  evl->add_option("--out", eval_out, "report.json (default: stdout)");

  // ensemble
  std::vector<std::string> ens_preds;
  std::string ens_manifest, ens_out;
  std::uint64_t ens_seed = 0;
  double ens_sigma = 0.2;
  auto* ens = app.add_subcommand("ensemble", "fit the stacked ridge meta-models");
  ens->add_option("--predictions", ens_preds, "base-model predictions, in roster order")->required()->expected(1, -1);
  ens->add_option("--manifest", ens_manifest, "manifest with true scores")->required();
  ens->add_option("--seed", ens_seed, "meta-split seed")->capture_default_str();
  ens->add_option("--sigma", ens_sigma, "width used to re-soften cumulative predictions")->capture_default_str();
  ens->add_option("--out", ens_out, "stacked.json")->required();

  // ensemble-predict
  std::vector<std::string> ensp_preds;
  std::string ensp_model, ensp_out;
  auto* ensp = app.add_subcommand("ensemble-predict", "apply a stacked model");
  ensp->add_option("--stacked", ensp_model, "stacked.json")->required();
  ensp->add_option("--predictions", ensp_preds, "base-model predictions, in the stored order")
      ->required()
      ->expected(1, -1);
  ensp->add_option("--out", ensp_out, "predictions.jsonl")->required();

  // ablate
  std::string abl_train, abl_dev, abl_out;
  std::size_t abl_seeds = 5;
  ModelFlags abl_model;
  TrainFlags abl_flags;
  auto* abl = app.add_subcommand("ablate", "criterion and architecture ablation tables");
  abl->add_option("--train", abl_train, "training manifest")->required();
  abl->add_option("--dev", abl_dev, "dev manifest")->required();
  abl->add_option("--seeds", abl_seeds, "seeds 0..N-1 per cell")->capture_default_str()->check(CLI::PositiveNumber);
  abl->add_option("--variant", abl_model.variant, "dora | coral | decoupled")->capture_default_str();
  abl->add_option("--out", abl_out, "also write the tables here");
  add_model_flags(abl, abl_model, false);
  add_train_flags(abl, abl_flags, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "doramos: " << e.what() << "\n";
    return kExitUsage;
  }

  if (gen->parsed()) {
    SyntheticSet set = generate_synthetic(synth);
    write_synthetic(set, synth_out);
    std::cout << "wrote " << set.dataset.records.size() << " clips to " << synth_out << "\n";
  } else if (split->parsed()) {
    const Dataset ds = load_manifest(split_manifest);
    const Split s = stratified_split(ds, dev_fraction, split_seed);
    write_manifest(s.train, split_outs[0]);
    write_manifest(s.dev, split_outs[1]);
    std::cout << "train " << s.train.records.size() << " clips, dev " << s.dev.records.size() << " clips\n";
  } else if (trn->parsed()) {
    const Dataset train_set = load_manifest(train_path);
    const Dataset dev_set = load_manifest(dev_path);
    if (dev_set.d_audio != train_set.d_audio || dev_set.d_text != train_set.d_text) {
      throw DataError("train and dev embedding widths differ");
    }
    const ModelConfig model = resolve_model(train_model, train_set);
    TrainConfig cfg = train_flags.cfg;
    cfg.criterion = parse_enum<Criterion>(train_flags.criterion);
    std::ostringstream log;
    TrainHooks hooks;
    hooks.log = &log;
    const Checkpoint ckpt = train(model, train_set, dev_set, cfg, hooks);
    if (verbose) std::cerr << log.str();
    save_checkpoint(ckpt, ckpt_out);
    write_file_atomic(log_out.empty() ? ckpt_out + ".log.tsv" : log_out, log.str());
    std::cout << "best epoch " << ckpt.best_epoch << " of " << ckpt.epochs_run << ", dev metric "
              << format_metric(std::isfinite(ckpt.best_dev_metric) ? Correlation(ckpt.best_dev_metric)
                                                                   : std::nullopt)
              << "\n";
  } else if (prd->parsed()) {
    const Checkpoint ckpt = load_checkpoint(pred_ckpt);
    const Dataset ds = load_manifest(pred_manifest);
    require_widths(ds, ckpt.model, "predict");
    const auto preds = predict_dataset(ckpt.model, ckpt.params, ds);
    std::vector<PredictionRecord> records;
    for (std::size_t i = 0; i < preds.size(); ++i) records.push_back(to_record(ds.records[i].clip_id, preds[i]));
    write_predictions(records, pred_out);
    std::cout << "scored " << records.size() << " clips\n";
  } else if (evl->parsed()) {
    const auto preds = read_predictions(eval_preds);
    const Dataset ds = load_manifest(eval_manifest);
    const auto scoredclips = scored(preds);
    const std::string text = json_text(to_json(evaluate(scoredclips, ds)));
    if (eval_out.empty()) std::cout << text;
    else write_file_atomic(eval_out, text);
  } else if (ens->parsed()) {
    std::vector<BaseModel> models;
    for (const auto& p : ens_preds) models.push_back({fs::path(p).filename().string(), read_predictions(p)});
    const Dataset ds = load_manifest(ens_manifest);
    const StackedModel sm = stack(models, ds, ens_seed, default_lambda_grid(), make_bins(), ens_sigma);
    write_file_atomic(ens_out, json_text(to_json(sm)));
    std::cout << "mi: lambda " << sm.mi.model.lambda << ", meta-val SRCC " << sm.mi.meta_val_srcc << "\n"
              << "ta: lambda " << sm.ta.model.lambda << ", meta-val SRCC " << sm.ta.meta_val_srcc << "\n";
  } else if (ensp->parsed()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(ensp_model));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(ensp_model + ": " + e.what());
    }
    const StackedModel sm = stacked_from_json(j);
    std::vector<BaseModel> models;
    for (const auto& p : ensp_preds) models.push_back({fs::path(p).filename().string(), read_predictions(p)});
    std::vector<PredictionRecord> records;
    for (const auto& c : stacked_predict(sm, models)) records.push_back({c.clip_id, c.mi, c.ta, false, {}, {}});
    write_predictions(records, ensp_out);
    std::cout << "scored " << records.size() << " clips\n";
  } else if (abl->parsed()) {
    const Dataset train_set = load_manifest(abl_train);
    const Dataset dev_set = load_manifest(abl_dev);
    const ModelConfig model = resolve_model(abl_model, train_set);
    std::vector<CellResult> results;
    for (const auto& cell : ablation_grid()) {
      for (std::uint64_t seed = 0; seed < abl_seeds; ++seed) {
        results.push_back(run_cell(cell, model, abl_flags.cfg, train_set, dev_set, seed));
        const auto& r = results.back();
        std::cerr << r.cell.table << " " << r.cell.label() << " seed " << seed << ": SRCC_MI "
                  << format_metric(r.dev.sys_mi.srcc) << " SRCC_TA " << format_metric(r.dev.sys_ta.srcc) << "\n";
      }
    }
    const std::string tables = format_ablation(results);
    std::cout << tables;
    if (!abl_out.empty()) write_file_atomic(abl_out, tables);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "doramos: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "doramos: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "doramos: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "doramos: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "doramos: " << e.what() << "\n";
    return 1;
  }
}
