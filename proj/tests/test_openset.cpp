#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "msdml/openset.hpp"

using namespace msdml;

namespace {

Embedding emb(const std::string& label, std::initializer_list<float> v) {
  Embedding e;
  e.label = label;
  e.values = Eigen::VectorXf(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (float x : v) e.values(i++) = x;
  return e;
}

}  // namespace

TEST(OpenSet, FitsDistanceGaussian) {
  const std::vector<Embedding> train = {emb("a", {1, 0}), emb("a", {-1, 0}), emb("b", {5, 5})};
  const std::vector<Embedding> val = {emb("a", {0.2f, 0}), emb("a", {0, 0.4f}), emb("b", {5, 5}), emb("b", {5, 5})};
  const auto set = fit_class_gaussians(train, val, Likelihood::peak_normalized);
  const auto& a = set.at("a");
  EXPECT_NEAR(a.mean_embedding.norm(), 0.0, 1e-12);
  EXPECT_NEAR(a.mu, 0.3, 1e-7);
  EXPECT_NEAR(a.sigma2, 0.01, 1e-7);
  EXPECT_EQ(set.at("b").sigma2, kSigma2Floor);
  EXPECT_EQ(set.at("b").mu, 0.0);
}

TEST(OpenSet, LikelihoodModes) {
  ClassGaussian g;
  g.mu = 0.3;
  g.sigma2 = 0.01;
  EXPECT_DOUBLE_EQ(distance_likelihood(0.3, g, Likelihood::peak_normalized), 1.0);
  EXPECT_NEAR(distance_likelihood(0.3, g, Likelihood::density), 1.0 / std::sqrt(2 * std::numbers::pi * 0.01), 1e-12);
  EXPECT_NEAR(distance_likelihood(0.4, g, Likelihood::peak_normalized), std::exp(-0.5), 1e-12);
}

TEST(OpenSet, ThresholdBoundaryIsInclusive) {
  GaussianSet set;
  set.likelihood = Likelihood::peak_normalized;
  ClassGaussian g;
  g.label = "a";
  g.mean_embedding = Eigen::VectorXd::Zero(1);
  g.mu = 0;
  g.sigma2 = 1.0;
  set.classes.emplace("a", g);
  // exp(-d^2 / 2) == 0.5 at d = sqrt(2 ln 2).
  const double edge = std::sqrt(2.0 * std::log(2.0));
  Eigen::VectorXf x(1);
  x(0) = static_cast<float>(edge) * 0.999f;
  EXPECT_EQ(reject_decision(x, "a", set).decision, Decision::accept);
  x(0) = static_cast<float>(edge) * 1.001f;
  EXPECT_EQ(reject_decision(x, "a", set).decision, Decision::reject);
  x(0) = 1e3f;
  const auto far = reject_decision(x, "a", set);
  EXPECT_EQ(far.decision, Decision::reject);
  EXPECT_EQ(far.likelihood, 0.0);
  EXPECT_NEAR(far.distance, 1e3, 1e-9);

  set.classes["a"].sigma2 = 1.0 / (2.0 * std::log(2.0));
  set.classes["a"].mu = 0;
  x(0) = 1.0f;
  EXPECT_DOUBLE_EQ(reject_decision(x, "a", set).likelihood, 0.5);
  EXPECT_EQ(reject_decision(x, "a", set).decision, Decision::accept);
}

TEST(OpenSet, Errors) {
  const std::vector<Embedding> train = {emb("a", {0, 0}), emb("b", {1, 1})};
  const std::vector<Embedding> val = {emb("a", {0, 1}), emb("a", {1, 0}), emb("b", {1, 1})};
  try {
    fit_class_gaussians(train, val);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  const std::vector<Embedding> stray = {emb("a", {0, 0}), emb("a", {0, 0}), emb("z", {0, 0})};
  EXPECT_THROW(fit_class_gaussians(train, stray), DataError);
  EXPECT_THROW(fit_class_gaussians({}, val), DataError);
  const std::vector<Embedding> ok_val = {emb("a", {0, 1}), emb("a", {1, 0}), emb("b", {1, 1}), emb("b", {1, 2})};
  const auto set = fit_class_gaussians(train, ok_val);
  EXPECT_THROW(reject_decision(Eigen::VectorXf::Zero(3), "a", set), ShapeError);
  EXPECT_THROW(reject_decision(Eigen::VectorXf::Zero(2), "q", set), DataError);
  EXPECT_THROW(likelihood_from_string("gauss"), UsageError);
}

TEST(OpenSet, JsonRoundTrip) {
  const std::vector<Embedding> train = {emb("a", {0.5f, 0.25f}), emb("b", {1, 1})};
  const std::vector<Embedding> val = {emb("a", {0, 1}), emb("a", {1, 0}), emb("b", {1, 1.5f}), emb("b", {1, 2})};
  const auto set = fit_class_gaussians(train, val, Likelihood::peak_normalized);
  const auto path = std::filesystem::temp_directory_path() / "msdml_gauss.json";
  save_gaussians(set, path);
  const auto r = load_gaussians(path);
  EXPECT_EQ(r.likelihood, Likelihood::peak_normalized);
  ASSERT_EQ(r.classes.size(), 2u);
  for (const auto& [label, g] : set.classes) {
    EXPECT_EQ(r.at(label).mu, g.mu);
    EXPECT_EQ(r.at(label).sigma2, g.sigma2);
    EXPECT_EQ(r.at(label).mean_embedding, g.mean_embedding);
  }
  std::filesystem::remove(path);
}

TEST(OpenSet, AcceptsAboutThreeQuartersOfValidation) {
  // Validation points at Gaussian-distributed radii around a fixed mean.
  std::mt19937_64 rng(8);
  std::normal_distribution<float> radius(0.5f, 0.05f);
  std::vector<Embedding> train = {emb("a", {0, 0}), emb("b", {10, 10}), emb("b", {10, 10})};
  std::vector<Embedding> val = {emb("b", {10, 10.1f}), emb("b", {10, 10.2f})};
  std::uniform_real_distribution<float> angle(0.0f, 6.2831853f);
  for (int i = 0; i < 400; ++i) {
    const float r = radius(rng), t = angle(rng);
    val.push_back(emb("a", {r * std::cos(t), r * std::sin(t)}));
  }
  const auto set = fit_class_gaussians(train, val);
  int accepted = 0, n = 0;
  for (const auto& e : val)
    if (e.label == "a") {
      accepted += reject_decision(e.values, "a", set).decision == Decision::accept;
      ++n;
    }
  EXPECT_NEAR(static_cast<double>(accepted) / n, 0.76, 0.10);
}

TEST(OpenSet, RejectionIsSymmetricAndMonotone) {
  ClassGaussian g;
  g.mu = 0.5;
  g.sigma2 = 0.04;
  for (double off = 0.0; off < 1.0; off += 0.01) {
    EXPECT_NEAR(distance_likelihood(0.5 + off, g, Likelihood::peak_normalized),
                distance_likelihood(0.5 - off, g, Likelihood::peak_normalized), 1e-14);
    EXPECT_GE(distance_likelihood(0.5 + off, g, Likelihood::peak_normalized),
              distance_likelihood(0.5 + off + 0.01, g, Likelihood::peak_normalized));
  }
}
