#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include <json.hpp>

#include "msdml/checkpoint.hpp"
#include "msdml/dataset.hpp"
#include "msdml/error.hpp"
#include "msdml/metric.hpp"
#include "msdml/msnet.hpp"
#include "msdml/optim.hpp"

namespace msdml {

// Non-finite loss during training. A diagnostic checkpoint has been written
// when `checkpoint` is non-empty.
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, std::filesystem::path checkpoint)
      : Error(what), checkpoint(std::move(checkpoint)) {}
  std::filesystem::path checkpoint;
};

struct MetricTrainConfig {
  int epochs = 150;
  int minibatches_per_epoch = 1000;  // cap
  int triplet_batch_cap = 50;
  int per_class = 5;
  OptimizerKind optimizer = OptimizerKind::adagrad;
  double learning_rate = 0.001;
  double alpha_init = 0.2;
  double alpha_step = 0.05;
  double alpha_cap = 0.6;
  int thresh = 15;
  std::uint64_t seed = 0;
  std::filesystem::path diagnostic_checkpoint;  // written on abort when set
  std::ostream* progress = nullptr;

  void validate() const {
    require<UsageError>(epochs >= 1, "epochs must be at least 1");
    require<UsageError>(minibatches_per_epoch >= 1 && triplet_batch_cap >= 1 && per_class >= 1, "caps must be at least 1");
  }
};

struct BaselineTrainConfig {
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 0.001;
  int epochs = 200;
  std::uint64_t seed = 0;
  std::filesystem::path diagnostic_checkpoint;
  std::ostream* progress = nullptr;

  void validate() const {
    require<UsageError>(batch_size >= 1, "batch size must be at least 1");
    require<UsageError>(epochs >= 1, "epochs must be at least 1");
  }
};

struct IterationRecord {
  long iteration = 0;
  int epoch = 0;
  long mined = 0;     // semi-hard triplets mined (metric) or batch size (baseline)
  double alpha = 0;   // margin in force for this iteration's loss (metric only)
  double loss = 0;
};

struct EpochSummary {
  int epoch = 0;
  long iterations = 0;
  long mined_total = 0;
  double loss_mean = 0;
  double alpha = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();  // baseline only
  bool converged = false;
};

struct TrainLog {
  std::vector<IterationRecord> records;
  std::vector<EpochSummary> epochs;
  double wall_seconds = 0;
  bool converged = false;
  int selected_epoch = -1;  // baseline: epoch whose checkpoint was returned
};

// Line-delimited records: a header line, one tab-separated line per
// iteration, and "# epoch" summary lines. Wall-clock time is not written so
// that logs of identical runs compare equal.
inline void write_train_log(std::ostream& os, const TrainLog& log) {
  os << "iteration\tepoch\tmined\talpha\tloss\n";
  std::size_t next_epoch = 0;
  auto flush_epochs = [&](int upto) {
    while (next_epoch < log.epochs.size() && log.epochs[next_epoch].epoch <= upto) {
      const auto& e = log.epochs[next_epoch++];
      os << "# epoch " << e.epoch << " iterations=" << e.iterations << " mined=" << e.mined_total
         << " loss_mean=" << e.loss_mean << " alpha=" << e.alpha;
      if (!std::isnan(e.val_loss)) os << " val_loss=" << e.val_loss;
      os << " converged=" << (e.converged ? 1 : 0) << '\n';
    }
  };
  os << std::setprecision(17);
  for (const auto& r : log.records) {
    flush_epochs(r.epoch - 1);
    os << r.iteration << '\t' << r.epoch << '\t' << r.mined << '\t' << r.alpha << '\t' << r.loss << '\n';
  }
  flush_epochs(std::numeric_limits<int>::max());
  if (log.selected_epoch >= 0) os << "# selected_epoch " << log.selected_epoch << '\n';
}

namespace detail {

template <typename T>
[[noreturn]] void abort_training(const MultiscaleNet<T>& net, const std::filesystem::path& diag, const std::string& why) {
  if (!diag.empty()) {
    try {
      save_network(net, diag);
    } catch (const Error&) {
    }
  }
  throw TrainingAborted(why + (diag.empty() ? std::string() : " (diagnostic checkpoint: " + diag.string() + ")"), diag);
}

inline long iterations_per_epoch(std::size_t examples, int classes, int per_class, int cap) {
  const long batch = static_cast<long>(classes) * per_class;
  const long available = std::max<long>(1, (static_cast<long>(examples) + batch - 1) / batch);
  return std::min<long>(available, cap);
}

}  // namespace detail

// Metric training with online semi-hard mining and the dynamic margin. Each
// iteration mines on inference-mode embeddings of a class-balanced batch,
// updates the margin from the mined count, then feeds the triplets in groups
// of at most triplet_batch_cap; every group with positive loss is one
// optimizer step.
template <typename T>
TrainLog train_metric(MultiscaleNet<T>& net, const Dataset& data, const MetricTrainConfig& cfg) {
  cfg.validate();
  require<UsageError>(net.config().head == HeadKind::metric, "wrong head: metric training needs a metric-head network");
  require<DataError>(data.size() > 0, "empty training set");
  std::map<int, int> per_class;
  for (int l : data.labels) {
    require<DataError>(l >= 0, "training example with unknown class");
    ++per_class[l];
  }
  require<DataError>(per_class.size() >= 2, "metric training needs at least 2 classes, got ", per_class.size());

  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  Optimizer<T> opt(cfg.optimizer, cfg.learning_rate);
  MarginState margin = MarginState::initial(cfg.alpha_init, cfg.alpha_step, cfg.alpha_cap, cfg.thresh);
  const long per_epoch = detail::iterations_per_epoch(data.size(), static_cast<int>(per_class.size()), cfg.per_class,
                                                      cfg.minibatches_per_epoch);
  const int dim = net.config().embedding_dim();

  TrainLog log;
  long iteration = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochSummary summary;
    summary.epoch = epoch;
    double loss_sum = 0;
    for (long it = 0; it < per_epoch; ++it) {
      const std::vector<int> idx = build_minibatch(data.labels, rng, cfg.per_class).indices();
      std::vector<int> batch_labels;
      Matrix emb(static_cast<Eigen::Index>(idx.size()), dim);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        batch_labels.push_back(data.labels[idx[k]]);
        emb.row(static_cast<Eigen::Index>(k)) = net.forward(net.input_map(data.examples[idx[k]])).value.transpose();
      }
      const std::vector<Triplet> triplets = mine_semi_hard(emb, batch_labels, margin.alpha, rng);
      margin = scheduler_update(std::move(margin), static_cast<long>(triplets.size()));

      double iter_loss = 0;
      for (const auto& group : group_triplets(triplets, static_cast<std::size_t>(cfg.triplet_batch_cap))) {
        // Local indexing over the batch positions this group touches.
        std::map<int, int> local;
        std::vector<int> positions;
        auto slot = [&](int pos) {
          auto [itr, inserted] = local.emplace(pos, static_cast<int>(positions.size()));
          if (inserted) positions.push_back(pos);
          return itr->second;
        };
        std::vector<Triplet> remapped = group;
        for (auto& t : remapped) {
          t.anchor = slot(t.anchor);
          t.positive = slot(t.positive);
          t.negative = slot(t.negative);
        }
        std::vector<std::uint64_t> drop_seeds(positions.size());
        for (auto& s : drop_seeds) s = rng();

        std::vector<typename MultiscaleNet<T>::Trace> traces;
        traces.reserve(positions.size());
        Matrix train_emb(static_cast<Eigen::Index>(positions.size()), dim);
        for (std::size_t k = 0; k < positions.size(); ++k) {
          const auto& ex = data.examples[idx[positions[k]]];
          traces.push_back(net.forward_trace(net.input_map(ex), Mode::train, drop_seeds[k]));
          train_emb.row(static_cast<Eigen::Index>(k)) = traces.back().out.value.transpose();
        }
        Matrix d_emb;
        const T loss = triplet_loss<T>(train_emb, remapped, margin.alpha, &d_emb);
        if (!std::isfinite(static_cast<double>(loss)))
          detail::abort_training(net, cfg.diagnostic_checkpoint,
                                 "non-finite triplet loss at iteration " + std::to_string(iteration + 1));
        iter_loss += static_cast<double>(loss);
        if (loss <= T(0)) continue;

        auto grads = net.zero_gradients();
        for (std::size_t k = 0; k < positions.size(); ++k)
          net.backward_embedding(traces[k], d_emb.row(static_cast<Eigen::Index>(k)).transpose(), grads);
        net.add_weight_decay(grads);
        opt.step(net.params(), grads);
      }

      ++iteration;
      log.records.push_back({iteration, epoch, static_cast<long>(triplets.size()), margin.alpha, iter_loss});
      summary.mined_total += static_cast<long>(triplets.size());
      loss_sum += iter_loss;
      ++summary.iterations;
    }
    summary.loss_mean = loss_sum / static_cast<double>(summary.iterations);
    summary.alpha = margin.alpha;
    summary.converged = margin.at_cap() && summary.mined_total == 0;
    log.converged = log.converged || summary.converged;
    log.epochs.push_back(summary);
    if (cfg.progress != nullptr)
      *cfg.progress << "epoch " << epoch << "/" << cfg.epochs << " mined=" << summary.mined_total
                    << " loss=" << summary.loss_mean << " alpha=" << summary.alpha
                    << (summary.converged ? " converged" : "") << std::endl;
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

// Mean cross-entropy of a softmax-head network, inference mode.
template <typename T>
double cross_entropy(const MultiscaleNet<T>& net, const Dataset& data) {
  require<DataError>(data.size() > 0, "empty evaluation set");
  double total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto p = net.forward(net.input_map(data.examples[i])).value;
    total -= std::log(std::max(static_cast<double>(p(data.labels[i])), 1e-30));
  }
  return total / static_cast<double>(data.size());
}

// Cross-entropy baseline. After every epoch the validation loss is measured;
// the network returned carries the weights of the epoch with the least
// validation loss (earliest on ties).
template <typename T>
TrainLog train_baseline(MultiscaleNet<T>& net, const Dataset& train, const Dataset& val, const BaselineTrainConfig& cfg) {
  cfg.validate();
  require<UsageError>(net.config().head == HeadKind::softmax, "wrong head: baseline training needs a softmax-head network");
  require<DataError>(train.size() > 0, "empty training set");
  require<DataError>(val.size() > 0, "empty validation set");
  for (int l : train.labels) require<DataError>(l >= 0 && l < net.config().num_classes, "training label out of range");
  for (int l : val.labels) require<DataError>(l >= 0 && l < net.config().num_classes, "validation label out of range");

  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(cfg.seed);
  Optimizer<T> opt(cfg.optimizer, cfg.learning_rate);
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  TrainLog log;
  double best = std::numeric_limits<double>::infinity();
  auto best_params = net.params().values;
  long iteration = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochSummary summary;
    summary.epoch = epoch;
    double loss_sum = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      auto grads = net.zero_gradients();
      double batch_loss = 0;
      for (std::size_t k = b; k < end; ++k) {
        const int i = order[k];
        const auto trace = net.forward_trace(net.input_map(train.examples[i]), Mode::train, rng());
        typename MultiscaleNet<T>::Vec dz = trace.out.value;
        batch_loss -= std::log(std::max(static_cast<double>(dz(train.labels[i])), 1e-30));
        dz(train.labels[i]) -= T(1);
        net.backward_logits(trace, dz, grads);
      }
      const T inv = T(1) / static_cast<T>(end - b);
      for (auto& g : grads) g *= inv;
      batch_loss /= static_cast<double>(end - b);
      if (!std::isfinite(batch_loss))
        detail::abort_training(net, cfg.diagnostic_checkpoint,
                               "non-finite cross-entropy at iteration " + std::to_string(iteration + 1));
      net.add_weight_decay(grads);
      opt.step(net.params(), grads);
      ++iteration;
      log.records.push_back({iteration, epoch, static_cast<long>(end - b), 0.0, batch_loss});
      loss_sum += batch_loss;
      ++summary.iterations;
      summary.mined_total += static_cast<long>(end - b);
    }
    summary.loss_mean = loss_sum / static_cast<double>(summary.iterations);
    summary.val_loss = cross_entropy(net, val);
    if (summary.val_loss < best) {
      best = summary.val_loss;
      best_params = net.params().values;
      log.selected_epoch = epoch;
    }
    log.epochs.push_back(summary);
    if (cfg.progress != nullptr)
      *cfg.progress << "epoch " << epoch << "/" << cfg.epochs << " loss=" << summary.loss_mean
                    << " val_loss=" << summary.val_loss << std::endl;
  }
  net.params().values = std::move(best_params);
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

}  // namespace msdml
