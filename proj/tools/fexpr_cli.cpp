// SPDX-License-Identifier: Apache-2.0
// Command-line front end: fexpr <subcommand> [flags]. Exit codes: 0 ok, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>

#include "fexpr/fexpr.hpp"

namespace fs = std::filesystem;
using namespace fexpr;

namespace {

struct PipelineFlags {
  std::string preset = "61";
  std::string mode = "au";
  std::string subset; // landmark subset JSON, replaces the preset
  std::uint64_t seed = 0;
};

struct ModelFlags {
  std::size_t epochs = 200;
  std::size_t batch = 32;
  std::vector<Eigen::Index> dense{2048, 1024};
  Eigen::Index filters = 8;
  double lr = 1e-3;
};

void add_pipeline_flags(CLI::App *cmd, PipelineFlags &f) {
  cmd->add_option("--preset", f.preset, "Landmark preset")->check(CLI::IsMember({"61", "122", "250"}));
  cmd->add_option("--mode", f.mode, "Pair mode: full (all pairs) or au (FACS category pairs)")
      ->check(CLI::IsMember({"full", "au"}));
  cmd->add_option("--subset", f.subset, "Landmark subset JSON file (overrides --preset)");
  cmd->add_option("--seed", f.seed, "Random seed");
}

void add_model_flags(CLI::App *cmd, ModelFlags &f) {
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--batch", f.batch, "Mini-batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--dense", f.dense, "Hidden dense layer sizes")->delimiter(',');
  cmd->add_option("--filters", f.filters, "ConvLSTM filters")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.lr, "Adam learning rate")->check(CLI::PositiveNumber);
}

PairTopology make_topology(const PipelineFlags &f) {
  const auto mode = parse_pair_mode(f.mode);
  if (!f.subset.empty())
    return enumerate_pairs(load_subset(f.subset), mode);
  return builtin_topology(parse_preset(f.preset), mode);
}

ModelConfig make_model_config(const ModelFlags &m, std::uint64_t seed) {
  ModelConfig c;
  c.epochs = m.epochs;
  c.batch_size = m.batch;
  c.dense_sizes = m.dense;
  c.filters = m.filters;
  c.learning_rate = m.lr;
  c.seed = seed;
  return c;
}

std::size_t available_memory_bytes() {
  const long pages = sysconf(_SC_AVPHYS_PAGES);
  const long page = sysconf(_SC_PAGESIZE);
  if (pages <= 0 || page <= 0)
    return SIZE_MAX;
  return static_cast<std::size_t>(pages) * static_cast<std::size_t>(page);
}

/// Refuse configurations whose optimizer state cannot fit in memory.
void check_memory(ModelConfig c, Eigen::Index features, std::size_t classes) {
  c.feature_count = features;
  c.class_count = static_cast<Eigen::Index>(classes);
  const auto need = training_memory_bytes(c);
  const auto have = available_memory_bytes();
  if (need > have / 10 * 9) {
    std::ostringstream msg;
    msg << "model needs about " << need / (1 << 20) << " MiB for weights, gradients and optimizer state but only "
        << have / (1 << 20) << " MiB is available; reduce --dense or choose a smaller preset/mode";
    throw ConfigurationError(msg.str());
  }
}

fs::path scaler_path_for(const fs::path &model) {
  fs::path p = model;
  p.replace_extension(".scaler.json");
  return p;
}

std::vector<EmotionLabel> parse_emotions(const std::vector<std::string> &names) {
  std::vector<EmotionLabel> out;
  for (const auto &n : names)
    out.push_back(parse_emotion(n));
  return out;
}

void write_text(const fs::path &path, const std::string &text) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << text;
}

PreparedCorpus corpus_from_manifest(const DatasetManifest &m, const PairTopology &topo,
                                    const std::vector<EmotionLabel> &whitelist) {
  std::vector<EmotionLabel> classes;
  for (auto e : m.emotion_set)
    if (whitelist.empty() || std::find(whitelist.begin(), whitelist.end(), e) != whitelist.end())
      classes.push_back(e);
  const auto records = load_records(m);
  return prepare_corpus(records, classes, topo);
}

void print_confusion(std::ostream &out, const ConfusionMatrix &cm, std::span<const EmotionLabel> classes) {
  out << "confusion (rows true, columns predicted):\n";
  for (std::size_t t = 0; t < cm.classes; ++t) {
    out << "  " << to_string(classes[t]);
    for (std::size_t p = 0; p < cm.classes; ++p)
      out << ' ' << cm.at(t, p);
    out << '\n';
  }
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Facial expression recognition from landmark sequences"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // pairs
  PipelineFlags pairs_flags;
  std::string pairs_out;
  bool pairs_list = false;
  auto *pairs = app.add_subcommand("pairs", "Print the pair count for a preset and mode");
  add_pipeline_flags(pairs, pairs_flags);
  pairs->add_option("--out", pairs_out, "Write the topology as JSON");
  pairs->add_flag("--list", pairs_list, "Also print every pair as 'i j' (subset positions)");

  // features
  PipelineFlags feat_flags;
  std::string feat_manifest, feat_out;
  auto *features = app.add_subcommand("features", "Compute feature tensors for every sequence in a manifest");
  add_pipeline_flags(features, feat_flags);
  features->add_option("--manifest", feat_manifest, "Dataset manifest")->required();
  features->add_option("--out", feat_out, "NDJSON output (default stdout)");

  // train
  PipelineFlags train_flags;
  ModelFlags train_model;
  std::string train_manifest, train_model_path, train_scaler, train_out;
  std::vector<std::string> train_emotions;
  bool train_verbose = false;
  auto *train_cmd = app.add_subcommand("train", "Train on a whole manifest and save the model");
  add_pipeline_flags(train_cmd, train_flags);
  add_model_flags(train_cmd, train_model);
  train_cmd->add_option("--manifest", train_manifest, "Dataset manifest")->required();
  train_cmd->add_option("--model", train_model_path, "Model output file")->required();
  train_cmd->add_option("--scaler", train_scaler, "Scaler output file (default <model>.scaler.json)");
  train_cmd->add_option("--out", train_out, "Training history CSV");
  train_cmd->add_option("--emotions", train_emotions, "Emotion whitelist")->delimiter(',');
  train_cmd->add_flag("--verbose", train_verbose, "Log every epoch to stderr");

  // crossval
  PipelineFlags cv_flags;
  ModelFlags cv_model;
  std::string cv_manifest, cv_out;
  std::size_t cv_k = 5;
  std::vector<std::string> cv_emotions;
  bool cv_shuffle = false;
  auto *crossval = app.add_subcommand("crossval", "Stratified k-fold cross-validation");
  add_pipeline_flags(crossval, cv_flags);
  add_model_flags(crossval, cv_model);
  crossval->add_option("--manifest", cv_manifest, "Dataset manifest")->required();
  crossval->add_option("--k", cv_k, "Number of folds")->check(CLI::Range(2, 1000));
  crossval->add_option("--out", cv_out, "Directory for report.json and CSV artifacts")->required();
  crossval->add_option("--emotions", cv_emotions, "Emotion whitelist")->delimiter(',');
  crossval->add_flag("--shuffle-labels", cv_shuffle, "Permute labels before folding (chance control)");

  // lodo
  PipelineFlags lodo_flags;
  ModelFlags lodo_model;
  std::vector<std::string> lodo_manifests;
  std::string lodo_holdout, lodo_out;
  std::vector<std::string> lodo_emotions;
  auto *lodo = app.add_subcommand("lodo", "Train on all datasets but one, test on the held-out one");
  add_pipeline_flags(lodo, lodo_flags);
  add_model_flags(lodo, lodo_model);
  lodo->add_option("--manifest", lodo_manifests, "Dataset manifests (repeat per dataset)")->required();
  lodo->add_option("--holdout", lodo_holdout, "Name of the held-out dataset")->required();
  lodo->add_option("--out", lodo_out, "Report JSON file");
  lodo->add_option("--emotions", lodo_emotions, "Emotion whitelist (default: six basic emotions)")->delimiter(',');

  // evaluate
  std::string eval_manifest, eval_model, eval_scaler, eval_out;
  auto *evaluate = app.add_subcommand("evaluate", "Score a saved model on a manifest");
  evaluate->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
  evaluate->add_option("--model", eval_model, "Model file")->required();
  evaluate->add_option("--scaler", eval_scaler, "Scaler file (default <model>.scaler.json)");
  evaluate->add_option("--out", eval_out, "Report JSON file");

  // predict-stream
  std::string ps_model, ps_scaler, ps_input = "-", ps_rate = "max", ps_out;
  double ps_threshold = PhaseConfig{}.t_active;
  std::size_t ps_window = PhaseConfig{}.window;
  std::size_t ps_smoothing = PhaseConfig{}.smoothing;
  std::int64_t ps_cadence = kDefaultCadenceMs;
  auto *predict_stream = app.add_subcommand("predict-stream", "Sliding-window prediction over an NDJSON stream");
  predict_stream->add_option("--model", ps_model, "Model file")->required();
  predict_stream->add_option("--scaler", ps_scaler, "Scaler file (default <model>.scaler.json)");
  predict_stream->add_option("input", ps_input, "NDJSON landmark stream, '-' for stdin");
  predict_stream->add_option("--rate", ps_rate, "Feed rate")->check(CLI::IsMember({"realtime", "max"}));
  predict_stream->add_option("--cadence", ps_cadence, "Milliseconds between frames in realtime mode")
      ->check(CLI::NonNegativeNumber);
  predict_stream->add_option("--apex-threshold", ps_threshold, "Phase activity threshold in pixels")
      ->check(CLI::PositiveNumber);
  predict_stream->add_option("--phase-window", ps_window, "Phase confirmation window in samples")
      ->check(CLI::PositiveNumber);
  predict_stream->add_option("--phase-smoothing", ps_smoothing, "Odd moving-average span for the phase trace")
      ->check(CLI::PositiveNumber);
  predict_stream->add_option("--out", ps_out, "Write predictions here instead of stdout");

  // bench
  std::vector<std::string> bench_presets{"61", "122", "250"};
  std::vector<std::string> bench_modes{"full", "au"};
  BenchOptions bench_opts;
  std::size_t bench_threads = 0;
  std::string bench_out;
  auto *bench = app.add_subcommand("bench", "Feature-creation timing per preset and mode");
  bench->add_option("--preset", bench_presets, "Presets to time")
      ->delimiter(',')
      ->check(CLI::IsMember({"61", "122", "250"}));
  bench->add_option("--mode", bench_modes, "Modes to time")->delimiter(',')->check(CLI::IsMember({"full", "au"}));
  bench->add_option("--iterations", bench_opts.iterations, "Timed iterations")->check(CLI::Range(100, 100000000));
  bench->add_option("--warmup", bench_opts.warmup, "Untimed warm-up iterations");
  bench->add_option("--seed", bench_opts.seed, "Seed for the random frames");
  bench->add_option("--threads", bench_threads, "Also report aggregate throughput with this many threads");
  bench->add_option("--out", bench_out, "JSON report file");

  // synth
  SynthSpec synth_spec;
  std::string synth_out;
  auto *synth = app.add_subcommand("synth", "Generate a synthetic landmark corpus with a manifest");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--classes", synth_spec.class_count, "Number of classes")->check(CLI::Range(1, 7));
  synth->add_option("--per-class", synth_spec.sequences_per_class, "Sequences per class")
      ->check(CLI::PositiveNumber);
  synth->add_option("--magnitude", synth_spec.magnitude_px, "Apex displacement in pixels");
  synth->add_option("--noise", synth_spec.noise_px, "Gaussian landmark jitter in pixels")
      ->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", synth_spec.seed, "Random seed");
  synth->add_option("--lead", synth_spec.profile.lead, "Neutral frames before the ramp");
  synth->add_option("--ramp", synth_spec.profile.ramp, "Frames from neutral to apex");
  synth->add_option("--hold", synth_spec.profile.hold, "Frames held at apex");
  synth->add_option("--decay", synth_spec.profile.decay, "Frames from apex back to neutral");
  synth->add_option("--tail", synth_spec.profile.tail, "Neutral frames after the decay");
  synth->add_option("--name", synth_spec.dataset, "Dataset name");
  synth->add_option("--id-prefix", synth_spec.id_prefix, "Sequence id prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*pairs) {
      const auto topo = make_topology(pairs_flags);
      std::cout << topo.size() << '\n';
      if (pairs_list)
        for (const auto &p : topo.pairs)
          std::cout << p.first << ' ' << p.second << '\n';
      if (!pairs_out.empty())
        write_text(pairs_out, topology_to_json(topo).dump(2) + "\n");
    } else if (*features) {
      const auto topo = make_topology(feat_flags);
      const auto manifest = load_manifest(feat_manifest);
      std::ofstream file;
      if (!feat_out.empty()) {
        file.open(feat_out);
        if (!file)
          throw IoError("cannot write " + feat_out);
      }
      std::ostream &out = feat_out.empty() ? std::cout : file;
      for (const auto &e : manifest.entries) {
        const auto rec = load_sequence_file(manifest.resolve(e), e.label, manifest.dataset_of(e));
        auto with_apex = rec;
        with_apex.apex_idx = e.apex_idx;
        const auto t = record_features(with_apex, topo);
        json j{{"seq_id", e.seq_id},
               {"label", std::string(to_string(e.label))},
               {"dataset", manifest.dataset_of(e)},
               {"topology_fingerprint", fingerprint_hex(t.topology_fingerprint)},
               {"pair_count", topo.size()},
               {"rows", t.rows()},
               {"cols", t.cols()}};
        json values = json::array();
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
          json row = json::array();
          for (Eigen::Index c = 0; c < t.cols(); ++c)
            row.push_back(t.values(r, c));
          values.push_back(std::move(row));
        }
        j["values"] = std::move(values);
        out << j.dump() << '\n';
      }
    } else if (*train_cmd) {
      const auto topo = make_topology(train_flags);
      const auto manifest = load_manifest(train_manifest);
      const auto corpus = corpus_from_manifest(manifest, topo, parse_emotions(train_emotions));
      if (corpus.samples.empty())
        throw ConfigurationError("manifest has no sequences for the selected emotions");
      auto cfg = make_model_config(train_model, train_flags.seed);
      cfg.class_count = static_cast<Eigen::Index>(corpus.classes.size());
      check_memory(cfg, static_cast<Eigen::Index>(topo.feature_count()), corpus.classes.size());
      EpochCallback log;
      if (train_verbose)
        log = [](const EpochMetrics &m) {
          std::cerr << "epoch " << m.epoch << " loss " << m.train_loss << " accuracy " << m.train_accuracy << '\n';
        };
      auto result = train(corpus.samples, {}, cfg, log);
      ModelArtifact artifact;
      artifact.params = std::move(result.params);
      artifact.classes = corpus.classes;
      artifact.subset = topo.subset;
      artifact.mode = topo.mode;
      artifact.topology_fingerprint = topo.fingerprint();
      save_model(artifact, train_model_path);
      save_scaler(result.scaler, train_scaler.empty() ? scaler_path_for(train_model_path) : fs::path(train_scaler));
      if (!train_out.empty())
        write_history_csv(result.history, train_out);
      const auto &last = result.history.epochs;
      std::cout << "trained on " << corpus.size() << " sequences, " << topo.size() << " pairs";
      if (!last.empty())
        std::cout << ", final train accuracy " << last.back().train_accuracy;
      std::cout << '\n';
    } else if (*crossval) {
      ExperimentConfig cfg;
      cfg.mode = parse_pair_mode(cv_flags.mode);
      cfg.preset = parse_preset(cv_flags.preset);
      if (!cv_flags.subset.empty()) {
        cfg.preset = Preset::Custom;
        cfg.subset_file = cv_flags.subset;
      }
      cfg.k = cv_k;
      cfg.seed = cv_flags.seed;
      cfg.model = make_model_config(cv_model, cv_flags.seed);
      cfg.whitelist = parse_emotions(cv_emotions);
      cfg.shuffle_labels = cv_shuffle;
      cfg.log = [](const std::string &line) { std::cerr << line << '\n'; };
      const auto manifest = load_manifest(cv_manifest);
      const auto topo = cfg.topology();
      check_memory(cfg.model, static_cast<Eigen::Index>(topo.feature_count()), manifest.emotion_set.size());
      const auto report = run_experiment(manifest, cfg);
      write_experiment_artifacts(report, cv_out);
      std::cout << "mean accuracy " << report.mean_accuracy << " (min " << report.min_accuracy << ", max "
                << report.max_accuracy << ") over " << report.folds.size() << " folds\n";
    } else if (*lodo) {
      ExperimentConfig cfg;
      cfg.mode = parse_pair_mode(lodo_flags.mode);
      cfg.preset = parse_preset(lodo_flags.preset);
      if (!lodo_flags.subset.empty()) {
        cfg.preset = Preset::Custom;
        cfg.subset_file = lodo_flags.subset;
      }
      cfg.seed = lodo_flags.seed;
      cfg.model = make_model_config(lodo_model, lodo_flags.seed);
      cfg.whitelist = parse_emotions(lodo_emotions);
      std::vector<DatasetManifest> manifests;
      for (const auto &m : lodo_manifests)
        manifests.push_back(load_manifest(m));
      const auto whitelist = cfg.whitelist.empty() ? six_basic_emotions() : cfg.whitelist;
      check_memory(cfg.model, static_cast<Eigen::Index>(cfg.topology().feature_count()), whitelist.size());
      const auto report = leave_one_dataset_out(manifests, lodo_holdout, cfg);
      const auto doc = lodo_to_json(report);
      if (!lodo_out.empty())
        write_text(lodo_out, doc.dump(2) + "\n");
      std::cout << "holdout " << report.holdout << ": accuracy " << report.accuracy << " on "
                << report.confusion.total() << " sequences (trained on " << report.train_count << ")\n";
      print_confusion(std::cout, report.confusion, report.classes);
    } else if (*evaluate) {
      const auto model = load_model(eval_model);
      const auto scaler = load_scaler(eval_scaler.empty() ? scaler_path_for(eval_model) : fs::path(eval_scaler));
      const auto topo = model.topology();
      const auto manifest = load_manifest(eval_manifest);
      const auto records = load_records(manifest);
      const auto corpus = prepare_corpus(records, model.classes, topo);
      if (corpus.samples.empty())
        throw ConfigurationError("manifest has no sequences with the model's classes");
      const auto predicted = predict_all(model.params, scaler, corpus.samples);
      std::vector<int> truth;
      for (const auto &s : corpus.samples)
        truth.push_back(s.label);
      const auto cm = confusion_matrix(predicted, truth, model.classes.size());
      std::cout << "accuracy " << cm.accuracy() << " on " << cm.total() << " sequences\n";
      print_confusion(std::cout, cm, model.classes);
      if (!eval_out.empty())
        write_text(eval_out, json{{"format", "fexpr-evaluation"},
                                  {"version", 1},
                                  {"classes", classes_to_json(model.classes)},
                                  {"accuracy", cm.accuracy()},
                                  {"count", cm.total()},
                                  {"confusion", confusion_to_json(cm)}}
                                     .dump(2) +
                                 "\n");
    } else if (*predict_stream) {
      auto model = load_model(ps_model);
      auto scaler = load_scaler(ps_scaler.empty() ? scaler_path_for(ps_model) : fs::path(ps_scaler));
      PhaseConfig phase;
      phase.t_active = ps_threshold;
      phase.window = ps_window;
      phase.smoothing = ps_smoothing;
      const auto classes = model.classes;
      StreamEngine engine(std::move(model), std::move(scaler), phase, ps_cadence);
      std::ifstream file;
      std::ofstream out_file;
      if (ps_input != "-") {
        file.open(ps_input);
        if (!file)
          throw IoError("cannot open " + ps_input);
      }
      if (!ps_out.empty()) {
        out_file.open(ps_out);
        if (!out_file)
          throw IoError("cannot write " + ps_out);
      }
      std::istream &in = ps_input == "-" ? std::cin : file;
      std::ostream &out = ps_out.empty() ? std::cout : out_file;
      replay(in, engine, parse_replay_rate(ps_rate), [&](const StreamPrediction &p) {
        out << prediction_to_json(p, classes).dump() << '\n';
        out.flush();
      });
    } else if (*bench) {
      std::vector<BenchReport> reports;
      for (const auto &p : {std::string("61"), std::string("122"), std::string("250")}) {
        if (std::find(bench_presets.begin(), bench_presets.end(), p) == bench_presets.end())
          continue;
        for (const auto &m : {std::string("full"), std::string("au")})
          if (std::find(bench_modes.begin(), bench_modes.end(), m) != bench_modes.end())
            reports.push_back(bench_feature_creation(parse_preset(p), parse_pair_mode(m), bench_opts));
      }
      std::cout << bench_markdown(reports);
      std::cout << "\nhost: " << host_descriptor() << "; " << bench_opts.iterations << " iterations after "
                << bench_opts.warmup << " warm-up\n";
      auto doc = bench_to_json(reports);
      if (bench_threads > 0) {
        json tp = json::array();
        for (const auto &r : reports) {
          const auto t = bench_throughput(builtin_topology(parse_preset(r.preset), parse_pair_mode(r.mode)),
                                          bench_threads, bench_opts.iterations, bench_opts.seed);
          tp.push_back(throughput_to_json(t));
          std::cout << r.preset << ' ' << r.mode << ": " << format_us(t.frames_per_second) << " frames/s with "
                    << t.threads << " threads\n";
        }
        doc["throughput"] = std::move(tp);
      }
      if (!bench_out.empty())
        write_text(bench_out, doc.dump(2) + "\n");
    } else if (*synth) {
      const auto manifest = synth_generate(synth_spec, synth_out);
      std::cout << "wrote " << manifest.entries.size() << " sequences to " << synth_out << "\n";
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
