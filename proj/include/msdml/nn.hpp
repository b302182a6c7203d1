#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msdml/error.hpp"

namespace msdml::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Feature maps are stored channels x (height * width), column index
// h * width + w, so every pixel's channel vector is contiguous.
template <typename T>
struct FeatureMap {
  Mat<T> data;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.rows()); }
};

struct ParamInfo {
  std::string name;
  bool decay = true;  // weights take the L2 penalty, biases do not
};

// Flat named parameter store shared by networks and optimizers.
template <typename T>
struct ParamStore {
  std::vector<ParamInfo> info;
  std::vector<Mat<T>> values;

  int add(std::string name, Eigen::Index rows, Eigen::Index cols, bool decay) {
    info.push_back({std::move(name), decay});
    values.push_back(Mat<T>::Zero(rows, cols));
    return static_cast<int>(values.size() - 1);
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += static_cast<std::size_t>(v.size());
    return n;
  }

  std::vector<Mat<T>> zeros_like() const {
    std::vector<Mat<T>> g;
    g.reserve(values.size());
    for (const auto& v : values) g.push_back(Mat<T>::Zero(v.rows(), v.cols()));
    return g;
  }
};

template <typename T>
using Gradients = std::vector<Mat<T>>;

template <typename T>
void add_into(Gradients<T>& acc, const Gradients<T>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

// Fan-in scaled uniform initialisation for weights, zero biases.
template <typename T>
void init_uniform(Mat<T>& w, int fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / std::max(fan_in, 1));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = static_cast<T>(dist(rng));
}

// 2-D convolution with "same" padding (TensorFlow convention), stride along
// the height (Mel) axis only, ReLU optional.
struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride_h = 1;
  bool relu = true;
  int weight = -1;  // index into ParamStore, shape out x (kernel*kernel*in)
  int bias = -1;    // out x 1

  int out_height(int h) const { return (h + stride_h - 1) / stride_h; }
  int pad_top(int h) const {
    const int total = std::max((out_height(h) - 1) * stride_h + kernel - h, 0);
    return total / 2;
  }
  int pad_left() const { return (kernel - 1) / 2; }
  bool pointwise() const { return kernel == 1 && stride_h == 1; }

  template <typename T>
  Mat<T> im2col(const FeatureMap<T>& in) const {
    const int ho = out_height(in.height);
    const int w = in.width;
    const int top = pad_top(in.height), left = pad_left();
    const int cin = in_channels;
    Mat<T> cols = Mat<T>::Zero(static_cast<Eigen::Index>(kernel) * kernel * cin, static_cast<Eigen::Index>(ho) * w);
    for (int oh = 0; oh < ho; ++oh) {
      for (int i = 0; i < kernel; ++i) {
        const int ih = oh * stride_h - top + i;
        if (ih < 0 || ih >= in.height) continue;
        for (int ow = 0; ow < w; ++ow) {
          const Eigen::Index col = static_cast<Eigen::Index>(oh) * w + ow;
          for (int j = 0; j < kernel; ++j) {
            const int iw = ow - left + j;
            if (iw < 0 || iw >= w) continue;
            cols.col(col).segment(static_cast<Eigen::Index>(i * kernel + j) * cin, cin) =
                in.data.col(static_cast<Eigen::Index>(ih) * w + iw);
          }
        }
      }
    }
    return cols;
  }

  template <typename T>
  void col2im(const Mat<T>& dcols, FeatureMap<T>& din) const {
    const int ho = out_height(din.height);
    const int w = din.width;
    const int top = pad_top(din.height), left = pad_left();
    const int cin = in_channels;
    for (int oh = 0; oh < ho; ++oh) {
      for (int i = 0; i < kernel; ++i) {
        const int ih = oh * stride_h - top + i;
        if (ih < 0 || ih >= din.height) continue;
        for (int ow = 0; ow < w; ++ow) {
          const Eigen::Index col = static_cast<Eigen::Index>(oh) * w + ow;
          for (int j = 0; j < kernel; ++j) {
            const int iw = ow - left + j;
            if (iw < 0 || iw >= w) continue;
            din.data.col(static_cast<Eigen::Index>(ih) * w + iw) +=
                dcols.col(col).segment(static_cast<Eigen::Index>(i * kernel + j) * cin, cin);
          }
        }
      }
    }
  }

  template <typename T>
  FeatureMap<T> forward(const ParamStore<T>& p, const FeatureMap<T>& in) const {
    if (in.channels() != in_channels)
      fail<ShapeError>("conv expects ", in_channels, " input channels, got ", in.channels());
    FeatureMap<T> out;
    out.height = out_height(in.height);
    out.width = in.width;
    if (pointwise())
      out.data.noalias() = p.values[weight] * in.data;
    else
      out.data.noalias() = p.values[weight] * im2col(in);
    out.data.colwise() += p.values[bias].col(0);
    if (relu) out.data = out.data.cwiseMax(T(0));
    return out;
  }

  // Given the layer input, its output and dL/d(output), accumulates parameter
  // gradients and returns dL/d(input).
  template <typename T>
  FeatureMap<T> backward(const ParamStore<T>& p, const FeatureMap<T>& in, const FeatureMap<T>& out,
                         Mat<T> dout, Gradients<T>& grads) const {
    if (relu) dout = (out.data.array() > T(0)).select(dout, T(0));
    grads[bias].col(0) += dout.rowwise().sum();
    FeatureMap<T> din;
    din.height = in.height;
    din.width = in.width;
    if (pointwise()) {
      grads[weight].noalias() += dout * in.data.transpose();
      din.data.noalias() = p.values[weight].transpose() * dout;
    } else {
      const Mat<T> cols = im2col(in);
      grads[weight].noalias() += dout * cols.transpose();
      const Mat<T> dcols = p.values[weight].transpose() * dout;
      din.data = Mat<T>::Zero(in.data.rows(), in.data.cols());
      col2im(dcols, din);
    }
    return din;
  }

  template <typename T>
  void declare(ParamStore<T>& p, const std::string& name) {
    weight = p.add(name + ".weight", out_channels, static_cast<Eigen::Index>(kernel) * kernel * in_channels, true);
    bias = p.add(name + ".bias", out_channels, 1, false);
  }
  int fan_in() const { return kernel * kernel * in_channels; }
};

struct Dense {
  int in_features = 0;
  int out_features = 0;
  bool relu = true;
  int weight = -1;  // out x in
  int bias = -1;

  template <typename T>
  Vec<T> forward(const ParamStore<T>& p, const Vec<T>& x) const {
    if (x.size() != in_features) fail<ShapeError>("dense expects ", in_features, " inputs, got ", x.size());
    Vec<T> z = p.values[weight] * x + p.values[bias].col(0);
    if (relu) z = z.cwiseMax(T(0));
    return z;
  }

  template <typename T>
  Vec<T> backward(const ParamStore<T>& p, const Vec<T>& x, const Vec<T>& out, Vec<T> dout,
                  Gradients<T>& grads) const {
    if (relu) dout = (out.array() > T(0)).select(dout, T(0));
    grads[weight].noalias() += dout * x.transpose();
    grads[bias].col(0) += dout;
    return p.values[weight].transpose() * dout;
  }

  template <typename T>
  void declare(ParamStore<T>& p, const std::string& name) {
    weight = p.add(name + ".weight", out_features, in_features, true);
    bias = p.add(name + ".bias", out_features, 1, false);
  }
};

// Inverted dropout mask: kept units are scaled by 1/(1-rate).
template <typename T>
Vec<T> dropout_mask(Eigen::Index n, double rate, std::mt19937_64& rng) {
  Vec<T> mask = Vec<T>::Ones(n);
  if (rate <= 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < n; ++i) mask(i) = keep(rng) ? scale : T(0);
  return mask;
}

template <typename T>
Vec<T> global_average_pool(const FeatureMap<T>& x) {
  return x.data.rowwise().mean();
}

template <typename T>
Vec<T> softmax(const Vec<T>& z) {
  const T m = z.maxCoeff();
  Vec<T> e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

// Scales z to unit norm; returns the norm used.
template <typename T>
T l2_normalize(const Vec<T>& z, Vec<T>& out) {
  const T n = std::max(z.norm(), static_cast<T>(1e-12));
  out = z / n;
  return n;
}

// Backward of e = z / |z|.
template <typename T>
Vec<T> l2_normalize_backward(const Vec<T>& e, T norm, const Vec<T>& de) {
  return (de - e * e.dot(de)) / norm;
}

}  // namespace msdml::nn
