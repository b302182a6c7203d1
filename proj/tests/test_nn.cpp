#include <gtest/gtest.h>

#include <random>

#include "msdml/nn.hpp"

using namespace msdml;
using namespace msdml::nn;

namespace {

FeatureMap<double> random_map(int c, int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  FeatureMap<double> m;
  m.height = h;
  m.width = w;
  m.data = Mat<double>::NullaryExpr(c, h * w, [&] { return g(rng); });
  return m;
}

// Direct nested-loop convolution with TensorFlow "same" padding.
FeatureMap<double> conv_oracle(const Conv2d& conv, const ParamStore<double>& p, const FeatureMap<double>& in) {
  const int k = conv.kernel, s = conv.stride_h;
  const int ho = (in.height + s - 1) / s;
  const int pad_h = std::max((ho - 1) * s + k - in.height, 0) / 2;
  const int pad_w = std::max(k - 1, 0) / 2;
  FeatureMap<double> out;
  out.height = ho;
  out.width = in.width;
  out.data = Mat<double>::Zero(conv.out_channels, ho * in.width);
  const auto& W = p.values[static_cast<std::size_t>(conv.weight)];
  const auto& b = p.values[static_cast<std::size_t>(conv.bias)];
  for (int o = 0; o < conv.out_channels; ++o)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < in.width; ++x) {
        double acc = b(o, 0);
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j)
            for (int c = 0; c < conv.in_channels; ++c) {
              const int iy = y * s - pad_h + i, ix = x - pad_w + j;
              if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
              acc += W(o, (i * k + j) * conv.in_channels + c) * in.data(c, iy * in.width + ix);
            }
        out.data(o, y * in.width + x) = conv.relu ? std::max(acc, 0.0) : acc;
      }
  return out;
}

Conv2d make_conv(int cin, int cout, int k, int stride, bool relu, ParamStore<double>& p, std::mt19937_64& rng) {
  Conv2d c;
  c.in_channels = cin;
  c.out_channels = cout;
  c.kernel = k;
  c.stride_h = stride;
  c.relu = relu;
  c.declare(p, "c");
  init_uniform(p.values[static_cast<std::size_t>(c.weight)], c.fan_in(), rng);
  init_uniform(p.values[static_cast<std::size_t>(c.bias)], 4, rng);
  return c;
}

}  // namespace

TEST(Conv2d, MatchesNestedLoops) {
  std::mt19937_64 rng(1);
  for (int k : {1, 3, 5}) {
    for (int stride : {1, 2, 5}) {
      for (int h : {5, 7, 10}) {
        ParamStore<double> p;
        const auto conv = make_conv(3, 4, k, stride, stride == 2, p, rng);
        const auto in = random_map(3, h, 6, rng);
        const auto got = conv.forward(p, in);
        const auto want = conv_oracle(conv, p, in);
        ASSERT_EQ(got.height, want.height);
        EXPECT_LT((got.data - want.data).cwiseAbs().maxCoeff(), 1e-12) << "k=" << k << " stride=" << stride;
      }
    }
  }
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  ParamStore<double> p;
  const auto conv = make_conv(2, 3, 3, 2, false, p, rng);
  const auto in = random_map(2, 6, 4, rng);
  const auto out = conv.forward(p, in);
  const Mat<double> r = Mat<double>::Random(out.data.rows(), out.data.cols());
  auto grads = p.zeros_like();
  const auto din = conv.backward(p, in, out, r, grads);
  auto loss = [&](const ParamStore<double>& q, const FeatureMap<double>& x) { return conv.forward(q, x).data.cwiseProduct(r).sum(); };
  const double eps = 1e-6;
  for (std::size_t t = 0; t < p.values.size(); ++t)
    for (Eigen::Index i = 0; i < p.values[t].size(); ++i) {
      auto q = p;
      q.values[t](i) += eps;
      const double up = loss(q, in);
      q.values[t](i) -= 2 * eps;
      EXPECT_NEAR(grads[t](i), (up - loss(q, in)) / (2 * eps), 1e-6);
    }
  for (Eigen::Index i = 0; i < in.data.size(); ++i) {
    auto x = in;
    x.data(i) += eps;
    const double up = loss(p, x);
    x.data(i) -= 2 * eps;
    EXPECT_NEAR(din.data(i), (up - loss(p, x)) / (2 * eps), 1e-6);
  }
}

TEST(Conv2d, WrongChannels) {
  std::mt19937_64 rng(3);
  ParamStore<double> p;
  const auto conv = make_conv(2, 3, 3, 1, true, p, rng);
  EXPECT_THROW(conv.forward(p, random_map(3, 4, 4, rng)), ShapeError);
}

TEST(Dense, ForwardBackward) {
  ParamStore<double> p;
  Dense d;
  d.in_features = 3;
  d.out_features = 2;
  d.relu = true;
  d.declare(p, "d");
  p.values[static_cast<std::size_t>(d.weight)] << 1, 2, 3, -1, -1, -1;
  p.values[static_cast<std::size_t>(d.bias)] << 0.5, 0.0;
  Vec<double> x(3);
  x << 1, 1, 1;
  const auto y = d.forward(p, x);
  EXPECT_DOUBLE_EQ(y(0), 6.5);
  EXPECT_DOUBLE_EQ(y(1), 0.0);
  auto grads = p.zeros_like();
  Vec<double> dy(2);
  dy << 1, 1;
  const auto dx = d.backward(p, x, y, dy, grads);
  EXPECT_EQ(dx, (Vec<double>(3) << 1, 2, 3).finished());
  EXPECT_EQ(grads[static_cast<std::size_t>(d.bias)](1, 0), 0.0);
  EXPECT_THROW(d.forward(p, Vec<double>(Vec<double>::Zero(4))), ShapeError);
}

TEST(Dropout, InvertedScalingAndRate) {
  std::mt19937_64 rng(4);
  const auto m = dropout_mask<double>(100000, 0.5, rng);
  const double kept = (m.array() > 0).cast<double>().mean();
  EXPECT_NEAR(kept, 0.5, 0.01);
  EXPECT_NEAR(m.mean(), 1.0, 0.02);
  for (Eigen::Index i = 0; i < m.size(); ++i) ASSERT_TRUE(m(i) == 0.0 || m(i) == 2.0);
  EXPECT_EQ(dropout_mask<double>(10, 0.0, rng), Vec<double>::Ones(10));
}

TEST(Pooling, GlobalAverage) {
  FeatureMap<double> m;
  m.height = 2;
  m.width = 2;
  m.data = Mat<double>(2, 4);
  m.data << 1, 2, 3, 4, 0, 0, 0, 8;
  const auto g = global_average_pool(m);
  EXPECT_DOUBLE_EQ(g(0), 2.5);
  EXPECT_DOUBLE_EQ(g(1), 2.0);
}

TEST(Softmax, StableAndNormalized) {
  Vec<double> z(3);
  z << 1000, 1000, 1000;
  const auto s = softmax(z);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(s(i), 1.0 / 3.0, 1e-15);
}

TEST(L2Normalize, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  Vec<double> z = Vec<double>::NullaryExpr(6, [&] { return g(rng); });
  Vec<double> r = Vec<double>::NullaryExpr(6, [&] { return g(rng); });
  Vec<double> e;
  const double n = l2_normalize(z, e);
  EXPECT_NEAR(e.norm(), 1.0, 1e-15);
  const auto dz = l2_normalize_backward(e, n, r);
  for (int i = 0; i < 6; ++i) {
    Vec<double> zp = z, zm = z, ep, em;
    zp(i) += 1e-6;
    zm(i) -= 1e-6;
    l2_normalize(zp, ep);
    l2_normalize(zm, em);
    EXPECT_NEAR(dz(i), (ep.dot(r) - em.dot(r)) / 2e-6, 1e-8);
  }
}
