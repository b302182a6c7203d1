#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "msdml/checkpoint.hpp"
#include "msdml/error.hpp"
#include "msdml/msnet.hpp"
#include "msdml/nn.hpp"
#include "msdml/optim.hpp"

namespace msdml {

struct MLPConfig {
  int hidden = 256;
  double learning_rate = 0.001;
  double l2 = 1e-4;
  int epochs = 200;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct Prediction {
  std::string label;
  int index = -1;
  Eigen::VectorXf probabilities;
};

// Embedding-space classifier: input -> hidden (ReLU) -> C (softmax).
class MLPModel {
 public:
  MLPModel() = default;

  MLPModel(int input_dim, std::vector<std::string> classes, const MLPConfig& cfg)
      : classes_(std::move(classes)), cfg_(cfg), input_dim_(input_dim) {
    require<UsageError>(input_dim > 0 && cfg.hidden > 0, "MLP widths must be positive");
    require<DataError>(classes_.size() >= 2, "MLP needs at least 2 classes");
    hidden_ = {input_dim, cfg.hidden, true};
    out_ = {cfg.hidden, static_cast<int>(classes_.size()), false};
    hidden_.declare(params_, "hidden");
    out_.declare(params_, "output");
    std::mt19937_64 rng(cfg.seed);
    nn::init_uniform(params_.values[hidden_.weight], input_dim, rng);
    nn::init_uniform(params_.values[out_.weight], cfg.hidden, rng);
  }

  const std::vector<std::string>& classes() const { return classes_; }
  int input_dim() const { return input_dim_; }
  const MLPConfig& config() const { return cfg_; }
  nn::ParamStore<double>& params() { return params_; }
  const nn::ParamStore<double>& params() const { return params_; }

  int class_index(const std::string& label) const {
    auto it = std::find(classes_.begin(), classes_.end(), label);
    require<DataError>(it != classes_.end(), "unknown class '", label, "'");
    return static_cast<int>(it - classes_.begin());
  }

  Eigen::VectorXd probabilities(const Eigen::VectorXd& x) const {
    require<ShapeError>(x.size() == input_dim_, "MLP expects ", input_dim_, "-D input, got ", x.size());
    return nn::softmax<double>(out_.forward(params_, hidden_.forward(params_, x)));
  }

  Prediction predict(const Eigen::VectorXf& embedding) const {
    const Eigen::VectorXd p = probabilities(embedding.cast<double>());
    Eigen::Index best = 0;
    p.maxCoeff(&best);
    return {classes_[static_cast<std::size_t>(best)], static_cast<int>(best), p.cast<float>()};
  }

  // One pass of mini-batch training; returns mean cross-entropy.
  double train_epoch(const std::vector<Eigen::VectorXd>& xs, std::span<const int> ys, std::vector<int>& order,
                     Optimizer<double>& opt, std::mt19937_64& rng) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg_.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg_.batch_size));
      auto grads = params_.zeros_like();
      for (std::size_t k = b; k < end; ++k) {
        const auto& x = xs[static_cast<std::size_t>(order[k])];
        const int y = ys[static_cast<std::size_t>(order[k])];
        const Eigen::VectorXd h = hidden_.forward(params_, x);
        Eigen::VectorXd dz = nn::softmax<double>(out_.forward(params_, h));
        total -= std::log(std::max(dz(y), 1e-300));
        dz(y) -= 1.0;
        const Eigen::VectorXd dh = out_.backward(params_, h, Eigen::VectorXd(), dz, grads);
        hidden_.backward(params_, x, h, dh, grads);
      }
      const double inv = 1.0 / static_cast<double>(end - b);
      for (std::size_t i = 0; i < grads.size(); ++i) {
        grads[i] *= inv;
        if (params_.info[i].decay) grads[i] += 2.0 * cfg_.l2 * params_.values[i];
      }
      opt.step(params_, grads);
    }
    return total / static_cast<double>(order.size());
  }

  void save(const std::filesystem::path& path) const {
    Container c;
    c.header = {{"kind", "mlp"},
                {"input_dim", input_dim_},
                {"classes", classes_},
                {"config",
                 {{"hidden", cfg_.hidden},
                  {"learning_rate", cfg_.learning_rate},
                  {"l2", cfg_.l2},
                  {"epochs", cfg_.epochs},
                  {"batch_size", cfg_.batch_size},
                  {"seed", cfg_.seed}}}};
    store_params(c, params_);
    write_container(path, c);
  }

  static MLPModel load(const std::filesystem::path& path) {
    const Container c = read_container(path);
    require<DataError>(c.header.value("kind", "") == "mlp", path.string(), " is not an MLP checkpoint");
    MLPConfig cfg;
    const auto& j = c.header.at("config");
    cfg.hidden = j.at("hidden").get<int>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.l2 = j.at("l2").get<double>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    MLPModel m(c.header.at("input_dim").get<int>(), c.header.at("classes").get<std::vector<std::string>>(), cfg);
    load_params(c, m.params_, path.string());
    return m;
  }

 private:
  std::vector<std::string> classes_;
  MLPConfig cfg_;
  int input_dim_ = 0;
  nn::Dense hidden_, out_;
  nn::ParamStore<double> params_;
};

// Trains the classifier on labelled embeddings (Adam, L2 penalty).
inline MLPModel train_mlp(std::span<const Embedding> train, const MLPConfig& cfg = {}) {
  require<DataError>(!train.empty(), "empty training set for the MLP");
  std::vector<std::string> classes;
  for (const auto& e : train) classes.push_back(e.label);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  require<DataError>(classes.size() >= 2, "MLP training needs at least 2 classes");
  const int dim = static_cast<int>(train.front().values.size());

  MLPModel model(dim, classes, cfg);
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> ys;
  for (const auto& e : train) {
    require<ShapeError>(e.values.size() == dim, "embeddings differ in dimension");
    xs.push_back(e.values.cast<double>());
    ys.push_back(model.class_index(e.label));
  }
  std::vector<int> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  Optimizer<double> opt(OptimizerKind::adam, cfg.learning_rate);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) model.train_epoch(xs, ys, order, opt, rng);
  return model;
}

inline Prediction predict(const MLPModel& model, const Eigen::VectorXf& embedding) { return model.predict(embedding); }

}  // namespace msdml
