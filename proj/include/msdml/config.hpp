#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "msdml/error.hpp"
#include "msdml/eval.hpp"
#include "msdml/features.hpp"
#include "msdml/head.hpp"
#include "msdml/io.hpp"
#include "msdml/msnet.hpp"
#include "msdml/openset.hpp"
#include "msdml/trainer.hpp"

namespace msdml {

// Everything a pipeline run depends on. Built from defaults, then a JSON
// config file, then command-line flags; the result is echoed into reports.
struct RunConfig {
  std::uint64_t seed = 0;
  bool mel_only = false;
  FeatureConfig features;
  NetworkConfig network;
  MetricTrainConfig metric;
  BaselineTrainConfig baseline;
  MLPConfig mlp;
  SplitRatios split;
  Likelihood likelihood = Likelihood::peak_normalized;
};

namespace detail {

template <typename V>
void take(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace detail

inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  using detail::take;
  try {
    take(j, "seed", c.seed);
    take(j, "mel_only", c.mel_only);
    if (j.contains("features")) {
      const auto& f = j["features"];
      take(f, "frame_ms", c.features.frame_ms);
      take(f, "overlap", c.features.overlap);
      take(f, "fft_size", c.features.fft_size);
      take(f, "mel_bands", c.features.mel_bands);
      take(f, "frames", c.features.frames);
      take(f, "harmonic_kernel", c.features.harmonic_kernel);
      take(f, "percussive_kernel", c.features.percussive_kernel);
      take(f, "mask_power", c.features.mask_power);
      take(f, "floor_db", c.features.floor_db);
      take(f, "fmin", c.features.fmin);
      take(f, "fmax", c.features.fmax);
    }
    if (j.contains("network")) {
      nlohmann::json merged = nlohmann::json(c.network);
      merged.update(j["network"]);
      c.network = merged.get<NetworkConfig>();
    }
    if (j.contains("train_metric")) {
      const auto& m = j["train_metric"];
      take(m, "epochs", c.metric.epochs);
      take(m, "minibatches_per_epoch", c.metric.minibatches_per_epoch);
      take(m, "triplet_batch_cap", c.metric.triplet_batch_cap);
      take(m, "per_class", c.metric.per_class);
      take(m, "learning_rate", c.metric.learning_rate);
      take(m, "alpha_init", c.metric.alpha_init);
      take(m, "alpha_step", c.metric.alpha_step);
      take(m, "alpha_cap", c.metric.alpha_cap);
      take(m, "thresh", c.metric.thresh);
      if (m.contains("optimizer")) c.metric.optimizer = optimizer_from_string(m["optimizer"].get<std::string>());
    }
    if (j.contains("train_baseline")) {
      const auto& b = j["train_baseline"];
      take(b, "epochs", c.baseline.epochs);
      take(b, "batch_size", c.baseline.batch_size);
      take(b, "learning_rate", c.baseline.learning_rate);
      if (b.contains("optimizer")) c.baseline.optimizer = optimizer_from_string(b["optimizer"].get<std::string>());
    }
    if (j.contains("mlp")) {
      const auto& m = j["mlp"];
      take(m, "hidden", c.mlp.hidden);
      take(m, "learning_rate", c.mlp.learning_rate);
      take(m, "l2", c.mlp.l2);
      take(m, "epochs", c.mlp.epochs);
      take(m, "batch_size", c.mlp.batch_size);
    }
    if (j.contains("split")) {
      take(j["split"], "train", c.split.train);
      take(j["split"], "val", c.split.val);
      c.split.test = 1.0 - c.split.train - c.split.val;
    }
    if (j.contains("openset") && j["openset"].contains("likelihood"))
      c.likelihood = likelihood_from_string(j["openset"]["likelihood"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    fail<UsageError>("invalid configuration: ", e.what());
  }
}

inline RunConfig load_config_file(const std::filesystem::path& path, RunConfig base = {}) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail<UsageError>("config file ", path.string(), " is not valid JSON: ", e.what());
  } catch (const DataError& e) {
    fail<UsageError>(e.what());
  }
  apply_config_json(base, j);
  return base;
}

inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["mel_only"] = c.mel_only;
  j["features"] = {{"frame_ms", c.features.frame_ms},
                   {"overlap", c.features.overlap},
                   {"fft_size", c.features.fft_size},
                   {"mel_bands", c.features.mel_bands},
                   {"frames", c.features.frames},
                   {"harmonic_kernel", c.features.harmonic_kernel},
                   {"percussive_kernel", c.features.percussive_kernel},
                   {"mask_power", c.features.mask_power},
                   {"floor_db", c.features.floor_db},
                   {"fmin", c.features.fmin},
                   {"fmax", c.features.fmax}};
  j["network"] = nlohmann::json(c.network);
  j["train_metric"] = {{"epochs", c.metric.epochs},
                       {"minibatches_per_epoch", c.metric.minibatches_per_epoch},
                       {"triplet_batch_cap", c.metric.triplet_batch_cap},
                       {"per_class", c.metric.per_class},
                       {"optimizer", to_string(c.metric.optimizer)},
                       {"learning_rate", c.metric.learning_rate},
                       {"alpha_init", c.metric.alpha_init},
                       {"alpha_step", c.metric.alpha_step},
                       {"alpha_cap", c.metric.alpha_cap},
                       {"thresh", c.metric.thresh}};
  j["train_baseline"] = {{"epochs", c.baseline.epochs},
                         {"batch_size", c.baseline.batch_size},
                         {"optimizer", to_string(c.baseline.optimizer)},
                         {"learning_rate", c.baseline.learning_rate}};
  j["mlp"] = {{"hidden", c.mlp.hidden},
              {"learning_rate", c.mlp.learning_rate},
              {"l2", c.mlp.l2},
              {"epochs", c.mlp.epochs},
              {"batch_size", c.mlp.batch_size}};
  j["split"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  j["openset"] = {{"likelihood", to_string(c.likelihood)}, {"threshold", kRejectThreshold}};
  return j;
}

// Independent, reproducible seeds for the stages of one run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stage + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace msdml
