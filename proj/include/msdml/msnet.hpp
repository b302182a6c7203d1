#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "msdml/error.hpp"
#include "msdml/features.hpp"
#include "msdml/nn.hpp"

namespace msdml {

enum class HeadKind { metric, softmax };

inline const char* to_string(HeadKind h) { return h == HeadKind::metric ? "metric" : "softmax"; }
inline HeadKind head_from_string(const std::string& s) {
  if (s == "metric") return HeadKind::metric;
  if (s == "softmax") return HeadKind::softmax;
  fail<UsageError>("unknown head kind '", s, "'");
}

struct NetworkConfig {
  int mel_bands = 40;
  int frames = 200;
  int in_channels = 3;
  int conv_filters = 64;
  int mam_1x1 = 64;
  int mam_reduce = 32;
  int mam_3x3 = 64;
  int mam_5x5 = 64;
  int mam_7x7 = 64;
  std::array<int, 4> mel_strides{2, 2, 2, 5};  // CONV2..CONV5
  std::vector<int> dense_units{256, 128, 128};
  double dropout = 0.5;
  double weight_decay = 1e-4;
  HeadKind head = HeadKind::metric;
  int num_classes = 0;  // softmax head only

  int mam_width() const { return mam_1x1 + mam_3x3 + mam_5x5 + mam_7x7; }
  int embedding_dim() const { return dense_units.back(); }

  // Output widths of the dense stack, with the last layer replaced by C
  // units for the softmax head.
  std::vector<int> dense_widths() const {
    std::vector<int> w = dense_units;
    if (head == HeadKind::softmax) w.back() = num_classes;
    return w;
  }

  // Mel-axis sizes after CONV1..CONV5.
  std::vector<int> mel_chain() const {
    std::vector<int> chain{mel_bands};
    for (int s : mel_strides) chain.push_back((chain.back() + s - 1) / s);
    return chain;
  }

  void validate() const {
    require<ShapeError>(mel_bands > 0 && frames > 0 && in_channels > 0, "input shape must be positive");
    require<ShapeError>(conv_filters > 0 && mam_1x1 > 0 && mam_reduce > 0 && mam_3x3 > 0 && mam_5x5 > 0 &&
                            mam_7x7 > 0,
                        "layer widths must be positive");
    require<ShapeError>(dense_units.size() == 3, "dense stack must have three layers");
    for (int u : dense_units) require<ShapeError>(u > 0, "dense widths must be positive");
    require<ShapeError>(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
    int m = mel_bands;
    for (int s : mel_strides) {
      require<ShapeError>(s >= 1 && m % s == 0, "mel axis of ", mel_bands,
                          " bands is not reducible by strides (", mel_strides[0], ",", mel_strides[1], ",",
                          mel_strides[2], ",", mel_strides[3], ") to 1");
      m /= s;
    }
    require<ShapeError>(m == 1, "mel axis of ", mel_bands, " bands does not reduce to 1 (ends at ", m, ")");
    if (head == HeadKind::softmax) require<ShapeError>(num_classes >= 2, "softmax head requires at least 2 classes");
  }
};

inline void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::ordered_json{{"mel_bands", c.mel_bands},       {"frames", c.frames},
                             {"in_channels", c.in_channels},   {"conv_filters", c.conv_filters},
                             {"mam_1x1", c.mam_1x1},           {"mam_reduce", c.mam_reduce},
                             {"mam_3x3", c.mam_3x3},           {"mam_5x5", c.mam_5x5},
                             {"mam_7x7", c.mam_7x7},           {"mel_strides", c.mel_strides},
                             {"dense_units", c.dense_units},   {"dropout", c.dropout},
                             {"weight_decay", c.weight_decay}, {"head", to_string(c.head)},
                             {"num_classes", c.num_classes}};
}

inline void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.mel_bands = j.value("mel_bands", d.mel_bands);
  c.frames = j.value("frames", d.frames);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.conv_filters = j.value("conv_filters", d.conv_filters);
  c.mam_1x1 = j.value("mam_1x1", d.mam_1x1);
  c.mam_reduce = j.value("mam_reduce", d.mam_reduce);
  c.mam_3x3 = j.value("mam_3x3", d.mam_3x3);
  c.mam_5x5 = j.value("mam_5x5", d.mam_5x5);
  c.mam_7x7 = j.value("mam_7x7", d.mam_7x7);
  c.mel_strides = j.value("mel_strides", d.mel_strides);
  c.dense_units = j.value("dense_units", d.dense_units);
  c.dropout = j.value("dropout", d.dropout);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.head = head_from_string(j.value("head", std::string("metric")));
  c.num_classes = j.value("num_classes", d.num_classes);
}

inline bool operator==(const NetworkConfig& a, const NetworkConfig& b) {
  return nlohmann::json(a) == nlohmann::json(b);
}

enum class Mode { inference, train };

// Multiscale CNN: CONV1 -> (MAM -> strided CONV) x 4 -> GAP -> three dense
// layers -> unit-norm embedding (metric head) or softmax (classification head).
template <typename T = float>
class MultiscaleNet {
 public:
  using Mat = nn::Mat<T>;
  using Vec = nn::Vec<T>;
  using Map = nn::FeatureMap<T>;

  static constexpr int kModules = 4;
  static constexpr int kConvsPerStage = 8;  // seven MAM convs + the bottleneck after it

  struct Output {
    Vec logits;  // last dense layer, before normalisation / softmax
    Vec value;   // unit-norm embedding or class probabilities
    T norm = T(1);
  };

  // Everything backward() needs from one forward pass.
  struct Trace {
    std::vector<Map> conv_in, conv_out;  // indexed by conv id
    Vec gap;
    std::vector<Vec> dense_in, dense_out, masks;
    Output out;
  };

  MultiscaleNet() = default;

  MultiscaleNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    wire();
    std::mt19937_64 rng(seed);
    for (auto& c : convs_) nn::init_uniform(params_.values[c.weight], c.fan_in(), rng);
    for (auto& d : dense_) nn::init_uniform(params_.values[d.weight], d.in_features, rng);
  }

  const NetworkConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t param_count() const { return params_.scalar_count(); }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  // Interprets a [mel][frame][channel] tensor as a channels x pixels map.
  Map input_map(std::span<const float> tensor) const {
    const auto pixels = static_cast<Eigen::Index>(cfg_.mel_bands) * cfg_.frames;
    require<ShapeError>(static_cast<Eigen::Index>(tensor.size()) == pixels * cfg_.in_channels, "input has ",
                        tensor.size(), " values, network expects ", pixels * cfg_.in_channels);
    for (float v : tensor) require<DataError>(std::isfinite(v), "non-finite value in network input");
    Map m;
    m.height = cfg_.mel_bands;
    m.width = cfg_.frames;
    m.data = Eigen::Map<const Eigen::MatrixXf>(tensor.data(), cfg_.in_channels, pixels).template cast<T>();
    return m;
  }

  Map input_map(const MelExample& ex) const { return input_map(std::span<const float>(ex.tensor)); }

  Output forward(const Map& input, Mode mode = Mode::inference, std::uint64_t dropout_seed = 0) const {
    Trace tr;
    run(input, mode, dropout_seed, tr, false);
    return std::move(tr.out);
  }

  Trace forward_trace(const Map& input, Mode mode = Mode::inference, std::uint64_t dropout_seed = 0) const {
    Trace tr;
    run(input, mode, dropout_seed, tr, true);
    return tr;
  }

  // Output of one multiscale module; exposed for inspection.
  Map mam_forward(int module, const Map& maps) const {
    require<ShapeError>(module >= 0 && module < kModules, "module index out of range");
    Trace tr;
    tr.conv_in.resize(convs_.size());
    tr.conv_out.resize(convs_.size());
    return mam(module, maps, tr, false);
  }

  // Backward from dL/d(embedding) on a metric-head trace.
  void backward_embedding(const Trace& tr, const Vec& d_embedding, nn::Gradients<T>& grads) const {
    require<UsageError>(cfg_.head == HeadKind::metric, "wrong head: embedding gradient on a softmax network");
    backward_logits(tr, nn::l2_normalize_backward(tr.out.value, tr.out.norm, d_embedding), grads);
  }

  // Backward from dL/d(logits), i.e. the last dense output before the head.
  void backward_logits(const Trace& tr, const Vec& d_logits, nn::Gradients<T>& grads) const {
    Vec d = d_logits;
    for (int l = static_cast<int>(dense_.size()) - 1; l >= 0; --l) {
      d = dense_[l].backward(params_, tr.dense_in[l], tr.dense_out[l], d, grads);
      d = d.cwiseProduct(tr.masks[l]);
    }
    // GAP backward: spread evenly over pixels.
    const Map& last = tr.conv_out.back();
    Mat dmap = d.replicate(1, last.data.cols()) / static_cast<T>(last.data.cols());
    for (int stage = kModules - 1; stage >= 0; --stage) {
      const int base = 1 + stage * kConvsPerStage;
      dmap = conv_back(base + 7, tr, std::move(dmap), grads);
      dmap = mam_backward(stage, tr, dmap, grads);
    }
    conv_back(0, tr, std::move(dmap), grads);
  }

  // Adds the L2 penalty gradient 2 * decay * w to every weight matrix and
  // returns the penalty value decay * sum(w^2).
  T add_weight_decay(nn::Gradients<T>& grads) const {
    T penalty = 0;
    if (cfg_.weight_decay <= 0.0) return penalty;
    const T wd = static_cast<T>(cfg_.weight_decay);
    for (std::size_t i = 0; i < params_.values.size(); ++i) {
      if (!params_.info[i].decay) continue;
      grads[i] += (2 * wd) * params_.values[i];
      penalty += wd * params_.values[i].squaredNorm();
    }
    return penalty;
  }

  nn::Gradients<T> zero_gradients() const { return params_.zeros_like(); }

  const nn::Dense& last_dense() const { return dense_.back(); }
  const nn::Conv2d& conv(int id) const { return convs_.at(id); }
  std::size_t conv_count() const { return convs_.size(); }

 private:
  void wire() {
    const int f = cfg_.conv_filters;
    auto add_conv = [&](int in, int out, int k, int stride, const std::string& name) {
      nn::Conv2d c;
      c.in_channels = in;
      c.out_channels = out;
      c.kernel = k;
      c.stride_h = stride;
      c.declare(params_, name);
      convs_.push_back(c);
    };
    add_conv(cfg_.in_channels, f, 3, 1, "conv1");
    for (int m = 0; m < kModules; ++m) {
      const std::string p = "mam" + std::to_string(m + 1);
      add_conv(f, cfg_.mam_1x1, 1, 1, p + ".strand1_1x1");
      add_conv(f, cfg_.mam_reduce, 1, 1, p + ".strand2_reduce");
      add_conv(cfg_.mam_reduce, cfg_.mam_3x3, 3, 1, p + ".strand2_3x3");
      add_conv(f, cfg_.mam_reduce, 1, 1, p + ".strand3_reduce");
      add_conv(cfg_.mam_reduce, cfg_.mam_5x5, 5, 1, p + ".strand3_5x5");
      add_conv(f, cfg_.mam_reduce, 1, 1, p + ".strand4_reduce");
      add_conv(cfg_.mam_reduce, cfg_.mam_7x7, 7, 1, p + ".strand4_7x7");
      add_conv(cfg_.mam_width(), f, 3, cfg_.mel_strides[m], "conv" + std::to_string(m + 2));
    }
    int in = f;
    const auto widths = cfg_.dense_widths();
    for (std::size_t l = 0; l < widths.size(); ++l) {
      nn::Dense d;
      d.in_features = in;
      d.out_features = widths[l];
      d.relu = l + 1 < widths.size();
      d.declare(params_, "dense" + std::to_string(l + 1));
      dense_.push_back(d);
      in = widths[l];
    }
  }

  Map conv_fwd(int id, const Map& in, Trace& tr, bool keep) const {
    Map out = convs_[id].forward(params_, in);
    if (keep) {
      tr.conv_in[id] = in;
      tr.conv_out[id] = out;
    }
    return out;
  }

  Mat conv_back(int id, const Trace& tr, Mat dout, nn::Gradients<T>& grads) const {
    return convs_[id].backward(params_, tr.conv_in[id], tr.conv_out[id], std::move(dout), grads).data;
  }

  Map mam(int module, const Map& x, Trace& tr, bool keep) const {
    const int base = 1 + module * kConvsPerStage;
    const Map s1 = conv_fwd(base + 0, x, tr, keep);
    const Map s2 = conv_fwd(base + 2, conv_fwd(base + 1, x, tr, keep), tr, keep);
    const Map s3 = conv_fwd(base + 4, conv_fwd(base + 3, x, tr, keep), tr, keep);
    const Map s4 = conv_fwd(base + 6, conv_fwd(base + 5, x, tr, keep), tr, keep);
    Map out;
    out.height = x.height;
    out.width = x.width;
    out.data.resize(cfg_.mam_width(), x.data.cols());
    out.data << s1.data, s2.data, s3.data, s4.data;
    return out;
  }

  Mat mam_backward(int module, const Trace& tr, const Mat& dout, nn::Gradients<T>& grads) const {
    const int base = 1 + module * kConvsPerStage;
    Eigen::Index row = 0;
    auto slice = [&](int rows) {
      Mat s = dout.middleRows(row, rows);
      row += rows;
      return s;
    };
    Mat d1 = slice(cfg_.mam_1x1), d2 = slice(cfg_.mam_3x3), d3 = slice(cfg_.mam_5x5), d4 = slice(cfg_.mam_7x7);
    Mat dx = conv_back(base + 0, tr, std::move(d1), grads);
    dx += conv_back(base + 1, tr, conv_back(base + 2, tr, std::move(d2), grads), grads);
    dx += conv_back(base + 3, tr, conv_back(base + 4, tr, std::move(d3), grads), grads);
    dx += conv_back(base + 5, tr, conv_back(base + 6, tr, std::move(d4), grads), grads);
    return dx;
  }

  void run(const Map& input, Mode mode, std::uint64_t dropout_seed, Trace& tr, bool keep) const {
    require<ShapeError>(input.channels() == cfg_.in_channels && input.height == cfg_.mel_bands &&
                            input.width == cfg_.frames,
                        "input map shape mismatch");
    tr.conv_in.resize(convs_.size());
    tr.conv_out.resize(convs_.size());
    Map x = conv_fwd(0, input, tr, keep);
    for (int m = 0; m < kModules; ++m) {
      x = mam(m, x, tr, keep);
      x = conv_fwd(1 + m * kConvsPerStage + 7, x, tr, keep);
    }
    tr.gap = nn::global_average_pool(x);
    std::mt19937_64 rng(dropout_seed);
    Vec h = tr.gap;
    for (const auto& d : dense_) {
      Vec mask = mode == Mode::train ? nn::dropout_mask<T>(h.size(), cfg_.dropout, rng) : Vec::Ones(h.size());
      Vec hin = h.cwiseProduct(mask);
      h = d.forward(params_, hin);
      if (keep) {
        tr.masks.push_back(std::move(mask));
        tr.dense_in.push_back(std::move(hin));
        tr.dense_out.push_back(h);
      }
    }
    tr.out.logits = h;
    if (cfg_.head == HeadKind::metric)
      tr.out.norm = nn::l2_normalize(h, tr.out.value);
    else
      tr.out.value = nn::softmax(h);
  }

  NetworkConfig cfg_;
  std::uint64_t seed_ = 0;
  nn::ParamStore<T> params_;
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::Dense> dense_;
};

using Network = MultiscaleNet<float>;

// Builds a seeded network; identical (config, seed) gives identical weights.
template <typename T = float>
MultiscaleNet<T> build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  return MultiscaleNet<T>(cfg, seed);
}

struct Embedding {
  Eigen::VectorXf values;
  std::string label;
  std::string example_id;
};

// Inference-mode embeddings of a batch of examples.
template <typename T>
std::vector<Embedding> embed_forward(const MultiscaleNet<T>& net, std::span<const MelExample> batch) {
  require<UsageError>(net.config().head == HeadKind::metric, "wrong head: embeddings need a metric-head network");
  require<UsageError>(!batch.empty(), "empty batch");
  std::vector<Embedding> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) {
    auto o = net.forward(net.input_map(ex));
    out.push_back({o.value.template cast<float>(), ex.label, ex.example_id});
  }
  return out;
}

// Inference-mode class probabilities of a softmax-head network.
template <typename T>
std::vector<Eigen::VectorXf> softmax_forward(const MultiscaleNet<T>& net, std::span<const MelExample> batch) {
  require<UsageError>(net.config().head == HeadKind::softmax, "wrong head: probabilities need a softmax-head network");
  require<UsageError>(!batch.empty(), "empty batch");
  std::vector<Eigen::VectorXf> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) out.push_back(net.forward(net.input_map(ex)).value.template cast<float>());
  return out;
}

}  // namespace msdml
