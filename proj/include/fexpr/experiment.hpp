// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fexpr/errors.hpp"
#include "fexpr/feature_engine.hpp"
#include "fexpr/landmark_io.hpp"
#include "fexpr/pair_topology.hpp"
#include "fexpr/rng.hpp"
#include "fexpr/training.hpp"

namespace fexpr {

// ---------------------------------------------------------------------------
// Folds and confusion matrices
// ---------------------------------------------------------------------------

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Stratified k-fold split over sample positions.
///
/// Each class is shuffled with the seed and dealt round-robin; the dealing
/// offset carries over between classes so fold sizes stay balanced.
inline std::vector<Fold> stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed,
                                          std::span<const std::string> class_names = {}) {
  if (k < 2)
    throw ConfigurationError("k must be at least 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(i);
  for (const auto &[label, members] : by_class)
    if (members.size() < k) {
      const std::string name = label >= 0 && static_cast<std::size_t>(label) < class_names.size()
                                   ? class_names[static_cast<std::size_t>(label)]
                                   : "class " + std::to_string(label);
      throw ConfigurationError(name + " has " + std::to_string(members.size()) + " samples, fewer than k=" +
                               std::to_string(k));
    }

  std::vector<Fold> folds(k);
  std::size_t offset = 0;
  for (auto &[label, members] : by_class) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(label) + 1));
    rng.shuffle(members);
    for (std::size_t j = 0; j < members.size(); ++j)
      folds[(offset + j) % k].val.push_back(members[j]);
    offset += members.size();
  }
  for (auto &fold : folds) {
    std::sort(fold.val.begin(), fold.val.end());
    std::vector<char> in_val(labels.size(), 0);
    for (auto i : fold.val)
      in_val[i] = 1;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (!in_val[i])
        fold.train.push_back(i);
  }
  return folds;
}

/// Counts indexed (true class, predicted class).
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::size_t> counts;

  explicit ConfusionMatrix(std::size_t n = 0) : classes(n), counts(n * n, 0) {}

  std::size_t &at(std::size_t truth, std::size_t predicted) { return counts[truth * classes + predicted]; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }

  std::size_t total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

  std::size_t trace() const {
    std::size_t t = 0;
    for (std::size_t c = 0; c < classes; ++c)
      t += at(c, c);
    return t;
  }

  std::size_t row_sum(std::size_t truth) const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < classes; ++p)
      s += at(truth, p);
    return s;
  }

  double accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
  }

  ConfusionMatrix &operator+=(const ConfusionMatrix &other) {
    if (other.classes != classes)
      throw ShapeError("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts.size(); ++i)
      counts[i] += other.counts[i];
    return *this;
  }
};

inline ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels,
                                        std::size_t class_count) {
  if (predictions.size() != labels.size())
    throw ShapeError("predictions and labels differ in length");
  ConfusionMatrix cm(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || predictions[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count ||
        static_cast<std::size_t>(predictions[i]) >= class_count)
      throw ShapeError("class index out of range in confusion_matrix");
    ++cm.at(static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(predictions[i]));
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Corpus preparation
// ---------------------------------------------------------------------------

/// Feature tensors for a set of sequences, with class indices into `classes`.
struct PreparedCorpus {
  std::vector<LabeledTensor> samples;
  std::vector<std::string> ids;
  std::vector<std::string> datasets;
  std::vector<EmotionLabel> classes;
  PairTopology topology;

  std::size_t size() const noexcept { return samples.size(); }
};

inline int class_index(std::span<const EmotionLabel> classes, EmotionLabel label) {
  auto it = std::find(classes.begin(), classes.end(), label);
  return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

/// Records whose label is not in `classes` are dropped.
inline PreparedCorpus prepare_corpus(std::span<const SequenceRecord> records, std::vector<EmotionLabel> classes,
                                     const PairTopology &topo) {
  PreparedCorpus corpus;
  corpus.classes = std::move(classes);
  corpus.topology = topo;
  for (const auto &rec : records) {
    const int label = class_index(corpus.classes, rec.label);
    if (label < 0)
      continue;
    corpus.samples.push_back({record_features(rec, topo), label});
    corpus.ids.push_back(rec.seq_id);
    corpus.datasets.push_back(rec.dataset);
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  Preset preset = Preset::P61;
  PairMode mode = PairMode::AUGrouped;
  std::optional<std::filesystem::path> subset_file; // for Preset::Custom
  std::size_t k = 5;
  std::uint64_t seed = 0;
  /// Architecture/optimizer template; feature_count, time_steps, class_count and seed are filled per run.
  ModelConfig model{};
  /// Emotions to keep; empty keeps the manifest's emotion set.
  std::vector<EmotionLabel> whitelist;
  /// Permute labels before folding (chance-level control).
  bool shuffle_labels = false;
  std::function<void(const std::string &)> log;

  void validate() const {
    if (k < 2)
      throw ConfigurationError("k must be at least 2");
  }

  LandmarkSubset subset() const {
    if (preset == Preset::Custom) {
      if (!subset_file)
        throw ConfigurationError("custom preset needs a subset file");
      return load_subset(*subset_file);
    }
    return builtin_subset(preset);
  }

  PairTopology topology() const { return enumerate_pairs(subset(), mode); }
};

struct FoldReport {
  std::size_t fold = 0;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  TrainHistory history;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::uint64_t scaler_digest = 0;
  std::optional<double> best_val_accuracy;
  std::optional<double> final_val_accuracy;
};

struct ExperimentReport {
  std::vector<FoldReport> folds;
  double mean_accuracy = 0.0;
  double min_accuracy = 0.0;
  double max_accuracy = 0.0;
  ConfusionMatrix confusion;
  std::vector<EmotionLabel> classes;
  std::string preset;
  std::string mode;
  std::size_t pair_count = 0;
  std::uint64_t seed = 0;
  bool shuffled_labels = false;
};

namespace detail {

inline ModelConfig run_model_config(const ExperimentConfig &cfg, const PreparedCorpus &corpus, std::uint64_t seed) {
  ModelConfig m = cfg.model;
  m.feature_count = corpus.samples.front().tensor.cols();
  m.time_steps = corpus.samples.front().tensor.rows();
  m.class_count = static_cast<Eigen::Index>(corpus.classes.size());
  m.seed = seed;
  return m;
}

inline void log_line(const ExperimentConfig &cfg, const std::string &text) {
  if (cfg.log)
    cfg.log(text);
}

} // namespace detail

/// Evaluate a trained model on samples; returns predicted class indices.
inline std::vector<int> predict_all(const ModelParams &params, const ScalerParams &scaler,
                                    std::span<const LabeledTensor> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto &s : samples)
    out.push_back(predict(params, scaler, s.tensor).label);
  return out;
}

/// k-fold cross-validation; the scaler is fitted inside each fold on its training split.
inline ExperimentReport run_experiment(const PreparedCorpus &input, const ExperimentConfig &cfg) {
  cfg.validate();
  if (input.samples.empty())
    throw ConfigurationError("experiment corpus is empty");

  PreparedCorpus corpus = input;
  if (cfg.shuffle_labels) {
    std::vector<int> labels;
    for (const auto &s : corpus.samples)
      labels.push_back(s.label);
    Rng rng(mix_seed(cfg.seed, 0x5f1e));
    rng.shuffle(labels);
    for (std::size_t i = 0; i < labels.size(); ++i)
      corpus.samples[i].label = labels[i];
  }

  std::vector<int> labels;
  for (const auto &s : corpus.samples)
    labels.push_back(s.label);
  std::vector<std::string> names;
  for (auto c : corpus.classes)
    names.emplace_back(to_string(c));
  const auto folds = stratified_kfold(labels, cfg.k, cfg.seed, names);

  ExperimentReport report;
  report.classes = corpus.classes;
  report.confusion = ConfusionMatrix(corpus.classes.size());
  report.preset = std::string(to_string(corpus.topology.subset.preset));
  report.mode = std::string(to_string(corpus.topology.mode));
  report.pair_count = corpus.topology.size();
  report.seed = cfg.seed;
  report.shuffled_labels = cfg.shuffle_labels;

  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<LabeledTensor> train_set, val_set;
    FoldReport fr;
    fr.fold = f;
    for (auto i : folds[f].train) {
      train_set.push_back(corpus.samples[i]);
      fr.train_ids.push_back(corpus.ids[i]);
    }
    for (auto i : folds[f].val) {
      val_set.push_back(corpus.samples[i]);
      fr.val_ids.push_back(corpus.ids[i]);
    }
    const auto model_cfg = detail::run_model_config(cfg, corpus, mix_seed(cfg.seed, 100 + f));
    auto result = train(train_set, val_set, model_cfg);
    const auto predicted = predict_all(result.params, result.scaler, val_set);
    std::vector<int> truth;
    for (const auto &s : val_set)
      truth.push_back(s.label);
    fr.confusion = confusion_matrix(predicted, truth, corpus.classes.size());
    fr.accuracy = fr.confusion.accuracy();
    fr.scaler_digest = result.scaler.digest();
    fr.best_val_accuracy = result.history.best_val_accuracy();
    fr.final_val_accuracy = result.history.final_val_accuracy();
    fr.history = std::move(result.history);
    report.confusion += fr.confusion;
    detail::log_line(cfg, "fold " + std::to_string(f + 1) + "/" + std::to_string(folds.size()) +
                              ": accuracy " + std::to_string(fr.accuracy));
    report.folds.push_back(std::move(fr));
  }

  double sum = 0.0;
  report.min_accuracy = 1.0;
  report.max_accuracy = 0.0;
  for (const auto &fr : report.folds) {
    sum += fr.accuracy;
    report.min_accuracy = std::min(report.min_accuracy, fr.accuracy);
    report.max_accuracy = std::max(report.max_accuracy, fr.accuracy);
  }
  report.mean_accuracy = sum / static_cast<double>(report.folds.size());
  return report;
}

/// Load the manifest, keep whitelisted emotions, build features, cross-validate.
inline ExperimentReport run_experiment(const DatasetManifest &manifest, const ExperimentConfig &cfg) {
  std::vector<EmotionLabel> classes;
  for (auto e : manifest.emotion_set)
    if (cfg.whitelist.empty() || std::find(cfg.whitelist.begin(), cfg.whitelist.end(), e) != cfg.whitelist.end())
      classes.push_back(e);
  for (auto e : cfg.whitelist)
    if (std::find(manifest.emotion_set.begin(), manifest.emotion_set.end(), e) == manifest.emotion_set.end())
      throw ConfigurationError("whitelisted emotion '" + std::string(to_string(e)) + "' is not in the manifest");
  const auto records = load_records(manifest);
  const auto corpus = prepare_corpus(records, classes, cfg.topology());
  detail::log_line(cfg, "prepared " + std::to_string(corpus.size()) + " sequences, " +
                            std::to_string(corpus.topology.size()) + " pairs");
  return run_experiment(corpus, cfg);
}

// ---------------------------------------------------------------------------
// Composite datasets
// ---------------------------------------------------------------------------

/// Concatenate sources, keeping only whitelisted emotions. Paths become absolute and
/// each entry records its source dataset. Colliding seq_ids are qualified as "dataset/seq_id".
inline DatasetManifest merge_datasets(std::span<const DatasetManifest> sources,
                                      std::span<const EmotionLabel> whitelist) {
  DatasetManifest merged;
  merged.name = "composite";
  merged.emotion_set.assign(whitelist.begin(), whitelist.end());
  std::set<std::string> ids;
  for (const auto &src : sources)
    for (const auto &e : src.entries) {
      if (std::find(whitelist.begin(), whitelist.end(), e.label) == whitelist.end())
        continue;
      ManifestEntry out = e;
      out.dataset = src.dataset_of(e);
      out.path = std::filesystem::absolute(src.resolve(e));
      if (ids.count(out.seq_id))
        out.seq_id = out.dataset + "/" + out.seq_id;
      if (!ids.insert(out.seq_id).second)
        throw SchemaError("seq_id '" + out.seq_id + "' is not unique across merged datasets");
      merged.entries.push_back(std::move(out));
    }
  if (merged.entries.empty())
    throw ConfigurationError("merged dataset is empty after applying the emotion whitelist");
  return merged;
}

struct LodoReport {
  std::string holdout;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  std::vector<std::size_t> holdout_class_counts;
  std::size_t train_count = 0;
  TrainHistory history;
  std::vector<EmotionLabel> classes;
};

/// Train on every dataset except `holdout`, evaluate on `holdout`.
inline LodoReport leave_one_dataset_out(const PreparedCorpus &corpus, const std::string &holdout,
                                        const ExperimentConfig &cfg) {
  std::vector<LabeledTensor> train_set, test_set;
  std::set<std::string> names;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    names.insert(corpus.datasets[i]);
    (corpus.datasets[i] == holdout ? test_set : train_set).push_back(corpus.samples[i]);
  }
  if (!names.count(holdout))
    throw ConfigurationError("unknown holdout dataset '" + holdout + "'");
  if (train_set.empty())
    throw ConfigurationError("holdout '" + holdout + "' leaves no training data");

  LodoReport report;
  report.holdout = holdout;
  report.classes = corpus.classes;
  report.train_count = train_set.size();
  report.holdout_class_counts.assign(corpus.classes.size(), 0);
  for (const auto &s : test_set)
    ++report.holdout_class_counts[static_cast<std::size_t>(s.label)];

  PreparedCorpus shape_source;
  shape_source.samples = {train_set.front()};
  shape_source.classes = corpus.classes;
  auto result = train(train_set, test_set, detail::run_model_config(cfg, shape_source, mix_seed(cfg.seed, 7)));
  const auto predicted = predict_all(result.params, result.scaler, test_set);
  std::vector<int> truth;
  for (const auto &s : test_set)
    truth.push_back(s.label);
  report.confusion = confusion_matrix(predicted, truth, corpus.classes.size());
  report.accuracy = report.confusion.accuracy();
  report.history = std::move(result.history);
  return report;
}

inline LodoReport leave_one_dataset_out(std::span<const DatasetManifest> manifests, const std::string &holdout,
                                        const ExperimentConfig &cfg) {
  const auto whitelist = cfg.whitelist.empty() ? six_basic_emotions() : cfg.whitelist;
  bool found = false;
  for (const auto &m : manifests)
    found = found || m.name == holdout;
  if (!found)
    throw ConfigurationError("unknown holdout dataset '" + holdout + "'");
  if (manifests.size() < 2)
    throw ConfigurationError("holdout '" + holdout + "' leaves no training data");
  const auto merged = merge_datasets(manifests, whitelist);
  const auto records = load_records(merged);
  return leave_one_dataset_out(prepare_corpus(records, whitelist, cfg.topology()), holdout, cfg);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json confusion_to_json(const ConfusionMatrix &cm) {
  json rows = json::array();
  for (std::size_t t = 0; t < cm.classes; ++t) {
    json row = json::array();
    for (std::size_t p = 0; p < cm.classes; ++p)
      row.push_back(cm.at(t, p));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json classes_to_json(std::span<const EmotionLabel> classes) {
  json out = json::array();
  for (auto c : classes)
    out.push_back(std::string(to_string(c)));
  return out;
}

inline json history_to_json(const TrainHistory &h) {
  json out = json::array();
  for (const auto &e : h.epochs) {
    json row{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}};
    row["val_loss"] = e.val_loss ? json(*e.val_loss) : json(nullptr);
    row["val_accuracy"] = e.val_accuracy ? json(*e.val_accuracy) : json(nullptr);
    out.push_back(std::move(row));
  }
  return out;
}

inline json report_to_json(const ExperimentReport &r) {
  json folds = json::array();
  for (const auto &f : r.folds) {
    folds.push_back({{"fold", f.fold},
                     {"accuracy", f.accuracy},
                     {"best_val_accuracy", f.best_val_accuracy ? json(*f.best_val_accuracy) : json(nullptr)},
                     {"final_val_accuracy", f.final_val_accuracy ? json(*f.final_val_accuracy) : json(nullptr)},
                     {"scaler_digest", fingerprint_hex(f.scaler_digest)},
                     {"train_count", f.train_ids.size()},
                     {"val_ids", f.val_ids},
                     {"confusion", confusion_to_json(f.confusion)}});
  }
  return json{{"format", "fexpr-crossval-report"},
              {"version", 1},
              {"preset", r.preset},
              {"mode", r.mode},
              {"pair_count", r.pair_count},
              {"seed", r.seed},
              {"shuffled_labels", r.shuffled_labels},
              {"classes", classes_to_json(r.classes)},
              {"mean_accuracy", r.mean_accuracy},
              {"min_accuracy", r.min_accuracy},
              {"max_accuracy", r.max_accuracy},
              {"confusion", confusion_to_json(r.confusion)},
              {"folds", std::move(folds)}};
}

inline json lodo_to_json(const LodoReport &r) {
  return json{{"format", "fexpr-lodo-report"},
              {"version", 1},
              {"holdout", r.holdout},
              {"classes", classes_to_json(r.classes)},
              {"accuracy", r.accuracy},
              {"train_count", r.train_count},
              {"holdout_class_counts", r.holdout_class_counts},
              {"confusion", confusion_to_json(r.confusion)},
              {"history", history_to_json(r.history)}};
}

inline void write_confusion_csv(const ConfusionMatrix &cm, std::span<const EmotionLabel> classes,
                                const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << "true\\predicted";
  for (auto c : classes)
    out << ',' << to_string(c);
  out << '\n';
  for (std::size_t t = 0; t < cm.classes; ++t) {
    out << to_string(classes[t]);
    for (std::size_t p = 0; p < cm.classes; ++p)
      out << ',' << cm.at(t, p);
    out << '\n';
  }
}

inline void write_history_csv(const TrainHistory &h, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto &e : h.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',';
    if (e.val_loss)
      out << *e.val_loss;
    out << ',';
    if (e.val_accuracy)
      out << *e.val_accuracy;
    out << '\n';
  }
}

/// report.json, confusion.csv, fold_accuracies.csv, fold_<k>_history.csv and
/// history_summary.csv (per-epoch mean/min/max across folds).
inline void write_experiment_artifacts(const ExperimentReport &r, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out)
      throw IoError("cannot write " + (dir / "report.json").string());
    out << report_to_json(r).dump(2) << '\n';
  }
  write_confusion_csv(r.confusion, r.classes, dir / "confusion.csv");
  {
    std::ofstream out(dir / "fold_accuracies.csv");
    out << "fold,accuracy\n";
    for (const auto &f : r.folds)
      out << f.fold << ',' << f.accuracy << '\n';
  }
  std::size_t epochs = 0;
  for (const auto &f : r.folds) {
    write_history_csv(f.history, dir / ("fold_" + std::to_string(f.fold) + "_history.csv"));
    write_confusion_csv(f.confusion, r.classes, dir / ("fold_" + std::to_string(f.fold) + "_confusion.csv"));
    epochs = std::max(epochs, f.history.epochs.size());
  }
  std::ofstream out(dir / "history_summary.csv");
  out << "epoch,train_acc_mean,train_acc_min,train_acc_max,val_acc_mean,val_acc_min,val_acc_max\n";
  for (std::size_t e = 0; e < epochs; ++e) {
    double tsum = 0, tmin = 1, tmax = 0, vsum = 0, vmin = 1, vmax = 0;
    std::size_t n = 0;
    for (const auto &f : r.folds) {
      if (e >= f.history.epochs.size())
        continue;
      const auto &m = f.history.epochs[e];
      const double va = m.val_accuracy.value_or(0.0);
      tsum += m.train_accuracy;
      tmin = std::min(tmin, m.train_accuracy);
      tmax = std::max(tmax, m.train_accuracy);
      vsum += va;
      vmin = std::min(vmin, va);
      vmax = std::max(vmax, va);
      ++n;
    }
    out << e + 1 << ',' << tsum / static_cast<double>(n) << ',' << tmin << ',' << tmax << ','
        << vsum / static_cast<double>(n) << ',' << vmin << ',' << vmax << '\n';
  }
}

} // namespace fexpr
