#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "msdml/error.hpp"
#include "msdml/io.hpp"
#include "msdml/msnet.hpp"

namespace msdml {

inline constexpr double kSigma2Floor = 1e-8;
inline constexpr double kRejectThreshold = 0.5;
inline constexpr const char* kRejectedLabel = "REJECED_OUTLIER";

// How the 0.5 threshold is applied to the distance Gaussian.
enum class Likelihood {
  peak_normalized,  // exp(-(d - mu)^2 / (2 sigma^2)), in (0, 1]
  density,          // N(d; mu, sigma^2), the raw probability density
};

inline const char* to_string(Likelihood l) { return l == Likelihood::density ? "density" : "peak_normalized"; }
inline Likelihood likelihood_from_string(const std::string& s) {
  if (s == "density") return Likelihood::density;
  if (s == "peak_normalized") return Likelihood::peak_normalized;
  fail<UsageError>("unknown likelihood mode '", s, "'");
}

struct ClassGaussian {
  std::string label;
  Eigen::VectorXd mean_embedding;
  double mu = 0;
  double sigma2 = kSigma2Floor;
};

struct GaussianSet {
  Likelihood likelihood = Likelihood::peak_normalized;
  std::map<std::string, ClassGaussian> classes;

  const ClassGaussian& at(const std::string& label) const {
    auto it = classes.find(label);
    require<DataError>(it != classes.end(), "unknown class '", label, "'");
    return it->second;
  }
};

// Per class: mean of the training embeddings, then a maximum-likelihood
// Gaussian (variance divides by n, floored) over the distances of that
// class's validation embeddings from the mean.
inline GaussianSet fit_class_gaussians(std::span<const Embedding> train, std::span<const Embedding> val,
                                       Likelihood likelihood = Likelihood::peak_normalized) {
  require<DataError>(!train.empty(), "no training embeddings");
  std::map<std::string, std::pair<Eigen::VectorXd, long>> sums;
  for (const auto& e : train) {
    auto& [sum, n] = sums[e.label];
    if (n == 0) sum = Eigen::VectorXd::Zero(e.values.size());
    require<ShapeError>(sum.size() == e.values.size(), "embeddings differ in dimension");
    sum += e.values.cast<double>();
    ++n;
  }
  std::map<std::string, std::vector<double>> dists;
  for (const auto& [label, s] : sums) dists[label];
  for (const auto& e : val) {
    auto it = sums.find(e.label);
    require<DataError>(it != sums.end(), "validation class '", e.label, "' has no training embeddings");
    const Eigen::VectorXd mean = it->second.first / static_cast<double>(it->second.second);
    dists[e.label].push_back((e.values.cast<double>() - mean).norm());
  }
  std::string short_classes;
  for (const auto& [label, d] : dists)
    if (d.size() < 2) short_classes += (short_classes.empty() ? "" : ", ") + label;
  require<DataError>(short_classes.empty(), "classes with fewer than 2 validation embeddings: ", short_classes);

  GaussianSet out;
  out.likelihood = likelihood;
  for (const auto& [label, d] : dists) {
    ClassGaussian g;
    g.label = label;
    g.mean_embedding = sums[label].first / static_cast<double>(sums[label].second);
    double mu = 0;
    for (double x : d) mu += x;
    mu /= static_cast<double>(d.size());
    double var = 0;
    for (double x : d) var += (x - mu) * (x - mu);
    var /= static_cast<double>(d.size());
    g.mu = mu;
    g.sigma2 = std::max(var, kSigma2Floor);
    out.classes.emplace(label, std::move(g));
  }
  return out;
}

inline double distance_likelihood(double d, const ClassGaussian& g, Likelihood mode) {
  const double z2 = (d - g.mu) * (d - g.mu) / (2.0 * g.sigma2);
  const double peak = std::exp(-z2);
  return mode == Likelihood::peak_normalized ? peak : peak / std::sqrt(2.0 * std::numbers::pi * g.sigma2);
}

enum class Decision { accept, reject };

struct RejectResult {
  Decision decision = Decision::accept;
  double distance = 0;
  double likelihood = 0;
};

// Rejects when the likelihood of the distance to the predicted class mean is
// below 0.5; exactly 0.5 is accepted.
inline RejectResult reject_decision(const Eigen::VectorXf& embedding, const std::string& predicted_label,
                                    const GaussianSet& gaussians) {
  const ClassGaussian& g = gaussians.at(predicted_label);
  require<ShapeError>(g.mean_embedding.size() == embedding.size(), "embedding has ", embedding.size(),
                      " dimensions, class mean has ", g.mean_embedding.size());
  RejectResult r;
  r.distance = (embedding.cast<double>() - g.mean_embedding).norm();
  r.likelihood = distance_likelihood(r.distance, g, gaussians.likelihood);
  r.decision = r.likelihood < kRejectThreshold ? Decision::reject : Decision::accept;
  return r;
}

inline nlohmann::ordered_json gaussians_to_json(const GaussianSet& set) {
  nlohmann::ordered_json j;
  j["likelihood"] = to_string(set.likelihood);
  j["threshold"] = kRejectThreshold;
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& [label, g] : set.classes) {
    nlohmann::ordered_json c;
    c["label"] = label;
    c["mu"] = g.mu;
    c["sigma2"] = g.sigma2;
    c["mean"] = std::vector<double>(g.mean_embedding.data(), g.mean_embedding.data() + g.mean_embedding.size());
    j["classes"].push_back(std::move(c));
  }
  return j;
}

inline void save_gaussians(const GaussianSet& set, const std::filesystem::path& path) {
  const std::string text = gaussians_to_json(set).dump(2) + "\n";
  io::atomic_write(path, [&](std::ostream& os) { os << text; }, false);
}

inline GaussianSet load_gaussians(const std::filesystem::path& path) {
  GaussianSet set;
  try {
    const auto j = nlohmann::json::parse(io::read_file(path));
    set.likelihood = likelihood_from_string(j.value("likelihood", std::string("peak_normalized")));
    for (const auto& c : j.at("classes")) {
      ClassGaussian g;
      g.label = c.at("label").get<std::string>();
      g.mu = c.at("mu").get<double>();
      g.sigma2 = std::max(c.at("sigma2").get<double>(), kSigma2Floor);
      const auto mean = c.at("mean").get<std::vector<double>>();
      g.mean_embedding = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
      set.classes.emplace(g.label, std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    fail<DataError>("malformed Gaussian file ", path.string(), ": ", e.what());
  }
  return set;
}

}  // namespace msdml
