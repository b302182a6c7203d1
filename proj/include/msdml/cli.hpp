#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msdml/audio.hpp"
#include "msdml/checkpoint.hpp"
#include "msdml/config.hpp"
#include "msdml/dataset.hpp"
#include "msdml/eval.hpp"
#include "msdml/features.hpp"
#include "msdml/head.hpp"
#include "msdml/io.hpp"
#include "msdml/msnet.hpp"
#include "msdml/openset.hpp"
#include "msdml/store.hpp"
#include "msdml/trainer.hpp"

namespace msdml::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

namespace detail {

namespace fs = std::filesystem;

// Splits assigned by a split file (keyed by manifest id, matched against the
// store entry's source) or, without one, by the store's own split field.
inline std::vector<std::string> select_ids(const FeatureStore& store, const std::optional<SplitAssignment>& split,
                                           const std::string& which) {
  std::vector<std::string> out;
  for (const auto& [id, e] : store.entries()) {
    std::string s = e.split;
    if (split) {
      if (!split->contains(e.source)) continue;
      s = to_string(split->at(e.source));
    }
    if (which == "all" || s == which) out.push_back(id);
  }
  return out;
}

inline std::vector<MelExample> load_examples(const FeatureStore& store, const std::vector<std::string>& ids,
                                             bool mel_only) {
  std::vector<MelExample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(mel_only ? mel_only_view(store.get(id)) : store.get(id));
  return out;
}

inline std::vector<float> read_precomputed(const fs::path& path, int mel_bands, Eigen::MatrixXf& mel) {
  if (path.extension() == ".f32") {
    const std::string raw = io::read_file(path);
    const std::size_t n = raw.size() / 4;
    require<DataError>(raw.size() % 4 == 0 && n % static_cast<std::size_t>(mel_bands) == 0 && n > 0,
                       "pre-computed matrix ", path.string(), " is not a whole ", mel_bands, "-row float32 matrix");
    std::vector<float> v(n);
    std::memcpy(v.data(), raw.data(), raw.size());
    mel = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        v.data(), mel_bands, static_cast<Eigen::Index>(n / mel_bands));
    return v;
  }
  std::istringstream in(io::read_file(path));
  std::vector<std::vector<float>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<float> r;
    float v;
    while (ls >> v) r.push_back(v);
    if (!r.empty()) rows.push_back(std::move(r));
  }
  require<DataError>(static_cast<int>(rows.size()) == mel_bands, "pre-computed matrix ", path.string(), " has ",
                     rows.size(), " rows, expected ", mel_bands);
  mel.resize(mel_bands, static_cast<Eigen::Index>(rows[0].size()));
  for (int m = 0; m < mel_bands; ++m) {
    require<DataError>(rows[m].size() == rows[0].size(), "ragged pre-computed matrix ", path.string());
    for (std::size_t t = 0; t < rows[m].size(); ++t) mel(m, static_cast<Eigen::Index>(t)) = rows[m][t];
  }
  return {};
}

inline std::vector<std::string> train_classes(const std::vector<MelExample>& train) {
  std::set<std::string> s;
  for (const auto& e : train) s.insert(e.label);
  return {s.begin(), s.end()};
}

inline void write_log(const TrainLog& log, const fs::path& path) {
  io::atomic_write(path, [&](std::ostream& os) { write_train_log(os, log); }, false);
}

}  // namespace detail

// Runs the command line and returns the process exit code: 0 on success, 1
// on usage errors, 2 on data errors.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  namespace fs = std::filesystem;
  CLI::App app{"Multiscale CNN deep metric learning toolkit for acoustic classification", "msdml"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 0;
  std::string config_path;
  bool mel_only = false;
  std::string cache_dir;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed");
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  auto* mel_only_opt = app.add_flag("--mel-only", mel_only, "Replace harmonic/percussive channels with the Mel channel");
  app.add_option("--cache-dir", cache_dir, "Directory for intermediate files (default: next to outputs)");

  // features
  auto* features = app.add_subcommand("features", "Feature extraction and store maintenance");
  std::string f_manifest, f_store;
  int f_jobs = 1;
  bool f_verify_flag = false;
  features->add_flag("--verify", f_verify_flag, "Check the store given by --store");
  features->add_option("--store", f_store, "Feature store directory");
  auto* f_extract = features->add_subcommand("extract", "Extract three-channel Mel features from a WAV manifest");
  f_extract->add_option("--manifest", f_manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  f_extract->add_option("--store", f_store, "Feature store directory")->required();
  f_extract->add_option("--jobs", f_jobs, "Parallel extraction workers")->check(CLI::PositiveNumber);
  auto* f_ingest = features->add_subcommand("ingest", "Ingest pre-computed 40xN Mel matrices (.f32 or text)");
  f_ingest->add_option("--manifest", f_manifest, "Manifest CSV whose audio_path points at matrices")->required()->check(CLI::ExistingFile);
  f_ingest->add_option("--store", f_store, "Feature store directory")->required();
  auto* f_verify = features->add_subcommand("verify", "Validate every store invariant");
  f_verify->add_option("--store", f_store, "Feature store directory")->required();

  // split
  auto* split = app.add_subcommand("split", "Stratified train/validation/test split");
  std::string s_manifest, s_out, s_store;
  split->add_option("--manifest", s_manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  split->add_option("--out", s_out, "Split CSV to write (default: split.csv beside the manifest)");
  split->add_option("--store", s_store, "Also record the split in this store's index");

  // train
  auto* train = app.add_subcommand("train", "Training");
  train->require_subcommand(1);
  std::string t_store, t_split, t_out, t_log, t_net, t_diag;
  int t_epochs = 0;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--store", t_store, "Feature store directory")->required();
    c->add_option("--split", t_split, "Split CSV (default: splits recorded in the store)");
    c->add_option("--out", t_out, "Output checkpoint")->required();
    c->add_option("--epochs", t_epochs, "Override the configured epoch count");
  };
  auto* t_metric = train->add_subcommand("metric", "Triplet training with the dynamic margin");
  add_common(t_metric);
  t_metric->add_option("--log", t_log, "Iteration log (iteration, mined, alpha, loss)");
  t_metric->add_option("--diagnostic", t_diag, "Checkpoint written if training aborts");
  auto* t_base = train->add_subcommand("baseline", "Cross-entropy baseline with a softmax head");
  add_common(t_base);
  t_base->add_option("--log", t_log, "Iteration log");
  t_base->add_option("--diagnostic", t_diag, "Checkpoint written if training aborts");
  auto* t_head = train->add_subcommand("head", "Train the embedding-space MLP classifier");
  add_common(t_head);
  t_head->add_option("--net", t_net, "Metric network checkpoint")->required()->check(CLI::ExistingFile);

  // openset
  auto* openset = app.add_subcommand("openset", "Open-set rejection");
  openset->require_subcommand(1);
  auto* o_fit = openset->add_subcommand("fit", "Fit per-class distance Gaussians");
  std::string o_store, o_split, o_net, o_out, o_likelihood;
  o_fit->add_option("--store", o_store, "Feature store directory")->required();
  o_fit->add_option("--split", o_split, "Split CSV");
  o_fit->add_option("--net", o_net, "Metric network checkpoint")->required()->check(CLI::ExistingFile);
  o_fit->add_option("--out", o_out, "Gaussian file to write")->required();
  o_fit->add_option("--likelihood", o_likelihood, "peak_normalized (default) | density");

  // classify
  auto* classify = app.add_subcommand("classify", "Classify examples or embeddings");
  std::string c_store, c_split, c_subset = "test", c_net, c_head, c_gauss, c_emb, c_out;
  bool c_reject = false;
  classify->add_option("--store", c_store, "Feature store directory");
  classify->add_option("--split", c_split, "Split CSV");
  classify->add_option("--subset", c_subset, "train | val | test | all");
  classify->add_option("--net", c_net, "Metric network checkpoint");
  classify->add_option("--embeddings", c_emb, "Classify embeddings from an exported TSV instead of features");
  classify->add_option("--head", c_head, "MLP checkpoint")->required()->check(CLI::ExistingFile);
  classify->add_flag("--reject", c_reject, "Apply open-set rejection");
  classify->add_option("--gaussians", c_gauss, "Gaussian file (required with --reject)");
  classify->add_option("--out", c_out, "Output TSV (default: standard output)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate on the test split");
  std::string e_store, e_split, e_net, e_head, e_gauss, e_outliers, e_report, e_confusion, e_baseline;
  eval->add_option("--store", e_store, "Feature store directory")->required();
  eval->add_option("--split", e_split, "Split CSV");
  eval->add_option("--net", e_net, "Metric network checkpoint");
  eval->add_option("--head", e_head, "MLP checkpoint");
  eval->add_option("--baseline", e_baseline, "Evaluate a softmax-head checkpoint instead of net + head");
  eval->add_option("--gaussians", e_gauss, "Gaussian file: enables rejection");
  eval->add_option("--outliers-store", e_outliers, "Store whose examples are all outliers");
  eval->add_option("--report", e_report, "Report file (JSON)")->required();
  eval->add_option("--confusion", e_confusion, "Confusion matrix CSV");

  // embed
  auto* embed = app.add_subcommand("embed", "Export embeddings as TSV");
  std::string m_store, m_split, m_subset = "all", m_net, m_out;
  embed->add_option("--store", m_store, "Feature store directory")->required();
  embed->add_option("--split", m_split, "Split CSV");
  embed->add_option("--subset", m_subset, "train | val | test | all");
  embed->add_option("--net", m_net, "Metric network checkpoint")->required()->check(CLI::ExistingFile);
  embed->add_option("--out", m_out, "Output TSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config_file(config_path);
    if (seed_opt->count() > 0) cfg.seed = seed;
    if (mel_only_opt->count() > 0) cfg.mel_only = mel_only;
    if (t_epochs > 0) {
      cfg.metric.epochs = t_epochs;
      cfg.baseline.epochs = t_epochs;
      cfg.mlp.epochs = t_epochs;
    }
    if (!o_likelihood.empty()) cfg.likelihood = likelihood_from_string(o_likelihood);
    cfg.metric.seed = derive_seed(cfg.seed, 1);
    cfg.baseline.seed = derive_seed(cfg.seed, 2);
    cfg.mlp.seed = derive_seed(cfg.seed, 3);

    auto load_split = [](const std::string& p) -> std::optional<SplitAssignment> {
      if (p.empty()) return std::nullopt;
      return read_split(p);
    };

    if (features->parsed()) {
      if (f_extract->parsed() || f_ingest->parsed()) {
        const Manifest manifest = read_manifest(f_manifest);
        FeatureStore store = FeatureStore::open(f_store, true);
        std::size_t count = 0;
        if (f_extract->parsed()) {
          auto work = [&](const ManifestRow& row) {
            std::vector<MelExample> exs;
            const auto segs = load_wav_segments(row.audio_path, row.example_id, row.class_label);
            for (std::size_t k = 0; k < segs.size(); ++k) {
              MelExample ex = mel_three_channel(segs[k], cfg.mel_only, cfg.features);
              ex.example_id = segs.size() == 1 ? row.example_id : row.example_id + "#" + std::to_string(k);
              exs.push_back(std::move(ex));
            }
            return exs;
          };
          std::vector<std::vector<MelExample>> results(manifest.rows.size());
          const std::size_t jobs = static_cast<std::size_t>(std::max(1, f_jobs));
          for (std::size_t start = 0; start < manifest.rows.size(); start += jobs) {
            std::vector<std::future<std::vector<MelExample>>> pending;
            for (std::size_t i = start; i < std::min(manifest.rows.size(), start + jobs); ++i)
              pending.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred, work,
                                           std::cref(manifest.rows[i])));
            for (std::size_t i = 0; i < pending.size(); ++i) results[start + i] = pending[i].get();
          }
          for (std::size_t i = 0; i < manifest.rows.size(); ++i)
            for (const auto& ex : results[i]) {
              store.put(ex, manifest.rows[i].split.value_or(""), manifest.rows[i].example_id);
              ++count;
            }
        } else {
          for (const auto& row : manifest.rows) {
            Eigen::MatrixXf mel;
            detail::read_precomputed(row.audio_path, cfg.features.mel_bands, mel);
            store.put(from_precomputed_mel(mel, row.example_id, row.class_label, cfg.features.frames),
                      row.split.value_or(""), row.example_id);
            ++count;
          }
        }
        store.commit();
        out << "stored " << count << " examples from " << manifest.rows.size() << " recordings in " << f_store << "\n";
        return kExitOk;
      }
      if (f_verify->parsed() || f_verify_flag) {
        if (f_store.empty()) fail<UsageError>("--store is required");
        const FeatureStore store = FeatureStore::open(f_store);
        const StoreCheck check = store.verify();
        auto list = [&](const char* what, const std::vector<std::string>& ids) {
          for (const auto& id : ids) out << what << "\t" << id << "\n";
        };
        list("missing_file", check.missing_files);
        list("size_mismatch", check.size_mismatches);
        list("bad_shape", check.bad_shapes);
        list("non_finite", check.non_finite);
        out << (check.ok() ? "ok" : "FAILED") << "\t" << store.size() << " entries\n";
        return check.ok() ? kExitOk : kExitData;
      }
      fail<UsageError>("features needs a subcommand (extract, ingest, verify) or --verify");
    }

    if (split->parsed()) {
      const Manifest manifest = read_manifest(s_manifest);
      std::vector<LabeledId> rows;
      for (const auto& r : manifest.rows) rows.push_back({r.example_id, r.class_label});
      const SplitAssignment assignment = stratified_split(rows, cfg.split, cfg.seed);
      write_split(assignment, s_out.empty() ? std::filesystem::path(s_manifest).parent_path() / "split.csv" : std::filesystem::path(s_out));
      if (!s_store.empty()) {
        FeatureStore store = FeatureStore::open(s_store);
        for (const auto& [id, e] : store.entries())
          if (assignment.contains(e.source)) store.set_split(id, to_string(assignment.at(e.source)));
        store.commit();
      }
      std::map<Split, int> counts;
      for (const auto& [id, s] : assignment.assignment) ++counts[s];
      out << "train " << counts[Split::train] << "\tval " << counts[Split::val] << "\ttest " << counts[Split::test] << "\n";
      return kExitOk;
    }

    if (train->parsed()) {
      const FeatureStore store = FeatureStore::open(t_store);
      const auto assignment = load_split(t_split);
      auto train_set = detail::load_examples(store, detail::select_ids(store, assignment, "train"), cfg.mel_only);
      require<DataError>(!train_set.empty(), "no training examples in ", t_store);
      cfg.metric.progress = &err;
      cfg.baseline.progress = &err;

      if (t_metric->parsed()) {
        NetworkConfig nc = cfg.network;
        nc.head = HeadKind::metric;
        nc.num_classes = 0;
        auto net = build_network(nc, derive_seed(cfg.seed, 0));
        cfg.metric.diagnostic_checkpoint = t_diag;
        const TrainLog log = train_metric(net, Dataset::from_examples(std::move(train_set)), cfg.metric);
        save_network(net, t_out);
        if (!t_log.empty()) detail::write_log(log, t_log);
        out << "trained metric network: " << log.records.size() << " iterations, final alpha "
            << (log.records.empty() ? cfg.metric.alpha_init : log.records.back().alpha)
            << (log.converged ? ", converged" : "") << "\n";
        return kExitOk;
      }
      if (t_base->parsed()) {
        auto val_set = detail::load_examples(store, detail::select_ids(store, assignment, "val"), cfg.mel_only);
        const auto classes = detail::train_classes(train_set);
        NetworkConfig nc = cfg.network;
        nc.head = HeadKind::softmax;
        nc.num_classes = static_cast<int>(classes.size());
        auto net = build_network(nc, derive_seed(cfg.seed, 0));
        cfg.baseline.diagnostic_checkpoint = t_diag;
        const TrainLog log = train_baseline(net, Dataset::with_classes(std::move(train_set), classes),
                                            Dataset::with_classes(std::move(val_set), classes), cfg.baseline);
        save_network(net, t_out);
        // Class names travel next to the checkpoint.
        io::atomic_write(fs::path(t_out).concat(".classes"), [&](std::ostream& os) {
          for (const auto& c : classes) os << c << '\n';
        }, false);
        if (!t_log.empty()) detail::write_log(log, t_log);
        out << "trained baseline: selected epoch " << log.selected_epoch << "\n";
        return kExitOk;
      }
      if (t_head->parsed()) {
        const auto net = load_network(t_net);
        const auto emb = embed_forward(net, train_set);
        const MLPModel mlp = train_mlp(emb, cfg.mlp);
        mlp.save(t_out);
        out << "trained MLP head on " << emb.size() << " embeddings, " << mlp.classes().size() << " classes\n";
        return kExitOk;
      }
    }

    if (o_fit->parsed()) {
      const FeatureStore store = FeatureStore::open(o_store);
      const auto assignment = load_split(o_split);
      const auto net = load_network(o_net);
      const auto tr = embed_forward(net, detail::load_examples(store, detail::select_ids(store, assignment, "train"), cfg.mel_only));
      const auto va = embed_forward(net, detail::load_examples(store, detail::select_ids(store, assignment, "val"), cfg.mel_only));
      const GaussianSet g = fit_class_gaussians(tr, va, cfg.likelihood);
      save_gaussians(g, o_out);
      out << "fitted " << g.classes.size() << " class Gaussians\n";
      return kExitOk;
    }

    if (classify->parsed()) {
      const MLPModel mlp = MLPModel::load(c_head);
      std::optional<GaussianSet> gaussians;
      if (c_reject) {
        if (c_gauss.empty()) fail<UsageError>("--reject needs --gaussians");
        gaussians = load_gaussians(c_gauss);
      }
      std::vector<Embedding> emb;
      if (!c_emb.empty()) {
        emb = read_embeddings(c_emb);
      } else {
        if (c_store.empty() || c_net.empty()) fail<UsageError>("classify needs --embeddings or --store with --net");
        const FeatureStore store = FeatureStore::open(c_store);
        const auto net = load_network(c_net);
        emb = embed_forward(net, detail::load_examples(store, detail::select_ids(store, load_split(c_split), c_subset), cfg.mel_only));
      }
      std::ostringstream table;
      table << "example_id\tlabel\tpredicted" << (gaussians ? "\tdistance\tlikelihood" : "") << "\n";
      table << std::setprecision(9);
      for (const auto& e : emb) {
        const Prediction p = mlp.predict(e.values);
        if (gaussians) {
          const RejectResult r = reject_decision(e.values, p.label, *gaussians);
          table << e.example_id << '\t' << e.label << '\t' << (r.decision == Decision::reject ? kRejectedLabel : p.label)
                << '\t' << r.distance << '\t' << r.likelihood << '\n';
        } else {
          table << e.example_id << '\t' << e.label << '\t' << p.label << '\n';
        }
      }
      if (c_out.empty())
        out << table.str();
      else
        io::atomic_write(c_out, [&](std::ostream& os) { os << table.str(); }, false);
      return kExitOk;
    }

    if (eval->parsed()) {
      const FeatureStore store = FeatureStore::open(e_store);
      const auto assignment = load_split(e_split);
      const auto test = detail::load_examples(store, detail::select_ids(store, assignment, "test"), cfg.mel_only);
      require<DataError>(!test.empty(), "no test examples in ", e_store);
      EvalReport report;
      if (!e_baseline.empty()) {
        const auto net = load_network(e_baseline);
        std::vector<std::string> classes;
        std::istringstream cls(io::read_file(fs::path(e_baseline).concat(".classes")));
        for (std::string line; std::getline(cls, line);)
          if (!line.empty()) classes.push_back(line);
        report = evaluate_softmax(net, classes, test);
      } else {
        if (e_net.empty() || e_head.empty()) fail<UsageError>("eval needs --net and --head (or --baseline)");
        const auto net = load_network(e_net);
        const MLPModel mlp = MLPModel::load(e_head);
        std::optional<GaussianSet> gaussians;
        if (!e_gauss.empty()) gaussians = load_gaussians(e_gauss);
        std::vector<MelExample> outliers;
        if (!e_outliers.empty()) {
          if (!gaussians) fail<UsageError>("--outliers-store needs --gaussians");
          const FeatureStore ostore = FeatureStore::open(e_outliers);
          outliers = detail::load_examples(ostore, ostore.ids(), cfg.mel_only);
        }
        report = evaluate(net, mlp, gaussians ? &*gaussians : nullptr, test, outliers);
      }
      report.config["run"] = config_to_json(cfg);
      write_report(report, e_report);
      if (!e_confusion.empty()) write_confusion_csv(report.scores, e_confusion);
      out << "macro_f1\t" << report.scores.macro_f1 << "\n";
      if (report.scores_with_rejection) out << "macro_f1_with_rejection\t" << report.scores_with_rejection->macro_f1 << "\n";
      if (report.rejection_accuracy) out << "rejection_accuracy\t" << *report.rejection_accuracy << "\n";
      return kExitOk;
    }

    if (embed->parsed()) {
      const FeatureStore store = FeatureStore::open(m_store);
      const auto net = load_network(m_net);
      const auto ex = detail::load_examples(store, detail::select_ids(store, load_split(m_split), m_subset), cfg.mel_only);
      require<DataError>(!ex.empty(), "no examples selected");
      export_embeddings(net, ex, m_out);
      out << "wrote " << ex.size() << " embeddings to " << m_out << "\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingAborted& e) {
    err << "training aborted: " << e.what() << "\n";
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace msdml::cli
