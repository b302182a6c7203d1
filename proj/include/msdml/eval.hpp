#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "msdml/dataset.hpp"
#include "msdml/error.hpp"
#include "msdml/head.hpp"
#include "msdml/io.hpp"
#include "msdml/msnet.hpp"
#include "msdml/openset.hpp"

namespace msdml {

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail<DataError>("unknown split '", s, "'");
}

struct SplitRatios {
  double train = 0.50;
  double val = 0.15;
  double test = 0.35;
};

struct LabeledId {
  std::string example_id;
  std::string label;
};

struct SplitAssignment {
  std::vector<LabeledId> order;           // input order
  std::map<std::string, Split> assignment;
  SplitRatios ratios;
  std::uint64_t seed = 0;

  Split at(const std::string& id) const {
    auto it = assignment.find(id);
    require<DataError>(it != assignment.end(), "example '", id, "' is not in the split");
    return it->second;
  }
  bool contains(const std::string& id) const { return assignment.count(id) != 0; }
};

// Per class: shuffle with the seeded generator, then the first round(0.5 n)
// go to train, the next round(0.15 n) to validation and the rest to test.
inline SplitAssignment stratified_split(std::span<const LabeledId> rows, const SplitRatios& ratios = {},
                                        std::uint64_t seed = 0) {
  require<UsageError>(ratios.train >= 0 && ratios.val >= 0 && ratios.train + ratios.val <= 1.0, "invalid split ratios");
  std::map<std::string, std::vector<std::string>> by_class;
  std::set<std::string> seen;
  for (const auto& r : rows) {
    require<DataError>(seen.insert(r.example_id).second, "duplicate example id '", r.example_id, "'");
    by_class[r.label].push_back(r.example_id);
  }
  SplitAssignment out;
  out.order.assign(rows.begin(), rows.end());
  out.ratios = ratios;
  out.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& [label, ids] : by_class) {
    require<DataError>(ids.size() >= 3, "class '", label, "' has ", ids.size(), " examples; at least 3 are needed");
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n = static_cast<double>(ids.size());
    const auto n_train = static_cast<std::size_t>(std::lround(ratios.train * n));
    const auto n_val = std::min(ids.size() - n_train, static_cast<std::size_t>(std::lround(ratios.val * n)));
    for (std::size_t i = 0; i < ids.size(); ++i)
      out.assignment[ids[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  }
  return out;
}

inline void write_split(const SplitAssignment& s, const std::filesystem::path& path) {
  io::atomic_write(path, [&](std::ostream& os) {
    os << "example_id,class_label,split\n";
    for (const auto& r : s.order) os << r.example_id << ',' << r.label << ',' << to_string(s.at(r.example_id)) << '\n';
  }, false);
}

inline SplitAssignment read_split(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  require<DataError>(static_cast<bool>(std::getline(in, line)), "empty split file ", path.string());
  SplitAssignment s;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    require<DataError>(a != std::string::npos && b != a, path.string(), ":", line_no, ": expected 3 fields");
    LabeledId r{line.substr(0, a), line.substr(a + 1, b - a - 1)};
    s.assignment[r.example_id] = split_from_string(line.substr(b + 1));
    s.order.push_back(std::move(r));
  }
  return s;
}

struct ClassScore {
  std::string label;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  long support = 0;
};

struct ClassificationScores {
  std::vector<ClassScore> per_class;          // truth classes, sorted
  std::vector<std::string> predicted_labels;  // confusion columns
  std::vector<std::vector<long>> confusion;   // [truth][predicted]
  double macro_f1 = 0;
  double accuracy = 0;
};

// Macro F1 over the classes present in `truth`. A class with no true
// positives scores 0. Predicted labels outside the truth classes (for example
// the rejection sentinel) only ever count as errors.
inline ClassificationScores macro_f1_report(std::span<const std::string> predictions, std::span<const std::string> truth) {
  require<UsageError>(predictions.size() == truth.size(), "predictions and truth differ in length");
  require<UsageError>(!truth.empty(), "macro F1 of an empty set");
  std::set<std::string> classes(truth.begin(), truth.end());
  std::set<std::string> columns = classes;
  columns.insert(predictions.begin(), predictions.end());

  ClassificationScores s;
  s.predicted_labels.assign(columns.begin(), columns.end());
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < s.predicted_labels.size(); ++i) col[s.predicted_labels[i]] = i;
  std::map<std::string, std::size_t> row;
  for (const auto& c : classes) {
    row[c] = row.size();
    s.per_class.push_back({c});
  }
  s.confusion.assign(classes.size(), std::vector<long>(columns.size(), 0));
  long correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++s.confusion[row[truth[i]]][col[predictions[i]]];
    correct += predictions[i] == truth[i];
  }
  double sum = 0;
  for (auto& c : s.per_class) {
    const std::size_t r = row[c.label];
    const long tp = s.confusion[r][col[c.label]];
    long fn = 0, fp = 0;
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (j != col[c.label]) fn += s.confusion[r][j];
    for (const auto& [other, rr] : row)
      if (rr != r) fp += s.confusion[rr][col[c.label]];
    c.support = tp + fn;
    c.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    c.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    c.f1 = tp > 0 ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
    sum += c.f1;
  }
  s.macro_f1 = sum / static_cast<double>(s.per_class.size());
  s.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  return s;
}

inline double macro_f1(std::span<const std::string> predictions, std::span<const std::string> truth) {
  return macro_f1_report(predictions, truth).macro_f1;
}

struct EvalReport {
  ClassificationScores scores;
  std::optional<ClassificationScores> scores_with_rejection;
  std::optional<double> inset_acceptance;     // in-set test examples accepted
  std::optional<double> rejection_accuracy;   // outliers rejected
  long test_examples = 0;
  long outlier_examples = 0;
  nlohmann::ordered_json config;

  double macro_f1() const { return scores.macro_f1; }
};

namespace detail {

inline nlohmann::ordered_json scores_json(const ClassificationScores& s) {
  nlohmann::ordered_json j;
  j["macro_f1"] = s.macro_f1;
  j["accuracy"] = s.accuracy;
  j["per_class"] = nlohmann::ordered_json::array();
  for (const auto& c : s.per_class)
    j["per_class"].push_back({{"label", c.label}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1},
                              {"support", c.support}});
  j["confusion"] = {{"columns", s.predicted_labels}, {"rows", s.confusion}};
  return j;
}

}  // namespace detail

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["macro_f1"] = r.scores.macro_f1;
  j["test_examples"] = r.test_examples;
  j["classification"] = detail::scores_json(r.scores);
  if (r.scores_with_rejection) {
    j["macro_f1_with_rejection"] = r.scores_with_rejection->macro_f1;
    j["inset_acceptance"] = *r.inset_acceptance;
    j["classification_with_rejection"] = detail::scores_json(*r.scores_with_rejection);
  }
  if (r.rejection_accuracy) {
    j["outlier_examples"] = r.outlier_examples;
    j["rejection_accuracy"] = *r.rejection_accuracy;
  }
  j["config"] = r.config;
  return j;
}

inline void write_report(const EvalReport& r, const std::filesystem::path& path) {
  const std::string text = report_to_json(r).dump(2) + "\n";
  io::atomic_write(path, [&](std::ostream& os) { os << text; }, false);
}

inline void write_confusion_csv(const ClassificationScores& s, const std::filesystem::path& path) {
  io::atomic_write(path, [&](std::ostream& os) {
    os << "truth";
    for (const auto& c : s.predicted_labels) os << ',' << c;
    os << '\n';
    for (std::size_t r = 0; r < s.per_class.size(); ++r) {
      os << s.per_class[r].label;
      for (long v : s.confusion[r]) os << ',' << v;
      os << '\n';
    }
  }, false);
}

// Classifies embeddings with the MLP and, when Gaussians are supplied, applies
// open-set rejection. Rejection never changes a predicted label; rejected
// examples are reported with the sentinel label in the "with rejection"
// scores. Outlier embeddings only contribute to rejection_accuracy.
inline EvalReport evaluate_embeddings(const MLPModel& mlp, const GaussianSet* gaussians,
                                      std::span<const Embedding> test, std::span<const Embedding> outliers = {}) {
  require<DataError>(!test.empty(), "no test examples");
  EvalReport r;
  r.test_examples = static_cast<long>(test.size());
  std::vector<std::string> truth, pred, pred_rej;
  long accepted = 0;
  for (const auto& e : test) {
    const auto p = mlp.predict(e.values);
    truth.push_back(e.label);
    pred.push_back(p.label);
    if (gaussians != nullptr) {
      const bool ok = reject_decision(e.values, p.label, *gaussians).decision == Decision::accept;
      accepted += ok;
      pred_rej.push_back(ok ? p.label : kRejectedLabel);
    }
  }
  r.scores = macro_f1_report(pred, truth);
  if (gaussians != nullptr) {
    r.scores_with_rejection = macro_f1_report(pred_rej, truth);
    r.inset_acceptance = static_cast<double>(accepted) / static_cast<double>(test.size());
    if (!outliers.empty()) {
      long rejected = 0;
      for (const auto& e : outliers)
        rejected += reject_decision(e.values, mlp.predict(e.values).label, *gaussians).decision == Decision::reject;
      r.outlier_examples = static_cast<long>(outliers.size());
      r.rejection_accuracy = static_cast<double>(rejected) / static_cast<double>(outliers.size());
    }
  } else {
    require<UsageError>(outliers.empty(), "outlier evaluation needs class Gaussians");
  }
  return r;
}

// Full pipeline: embed with the network, then evaluate_embeddings.
template <typename T>
EvalReport evaluate(const MultiscaleNet<T>& net, const MLPModel& mlp, const GaussianSet* gaussians,
                    std::span<const MelExample> test, std::span<const MelExample> outliers = {}) {
  const auto te = embed_forward(net, test);
  std::vector<Embedding> oe;
  if (!outliers.empty()) oe = embed_forward(net, outliers);
  EvalReport r = evaluate_embeddings(mlp, gaussians, te, oe);
  r.config["network"] = nlohmann::json(net.config());
  r.config["network_seed"] = net.seed();
  if (gaussians != nullptr) r.config["likelihood"] = to_string(gaussians->likelihood);
  return r;
}

// Scores a softmax-head (cross-entropy baseline) network directly.
template <typename T>
EvalReport evaluate_softmax(const MultiscaleNet<T>& net, const std::vector<std::string>& classes,
                            std::span<const MelExample> test) {
  require<UsageError>(static_cast<int>(classes.size()) == net.config().num_classes, "class list does not match the network head");
  const auto probs = softmax_forward(net, test);
  std::vector<std::string> truth, pred;
  for (std::size_t i = 0; i < test.size(); ++i) {
    Eigen::Index best = 0;
    probs[i].maxCoeff(&best);
    pred.push_back(classes[static_cast<std::size_t>(best)]);
    truth.push_back(test[i].label);
  }
  EvalReport r;
  r.test_examples = static_cast<long>(test.size());
  r.scores = macro_f1_report(pred, truth);
  r.config["network"] = nlohmann::json(net.config());
  r.config["network_seed"] = net.seed();
  return r;
}

// Tab-separated embedding export: header, then example_id, label and the
// embedding values at full (round-trip) float precision.
inline void write_embeddings(std::span<const Embedding> embeddings, const std::filesystem::path& path) {
  io::atomic_write(path, [&](std::ostream& os) {
    const Eigen::Index dim = embeddings.empty() ? 0 : embeddings.front().values.size();
    os << "example_id\tlabel";
    for (Eigen::Index k = 0; k < dim; ++k) os << "\te" << k;
    os << '\n' << std::setprecision(9);
    for (const auto& e : embeddings) {
      require<ShapeError>(e.values.size() == dim, "embeddings differ in dimension");
      os << e.example_id << '\t' << e.label;
      for (Eigen::Index k = 0; k < dim; ++k) os << '\t' << e.values(k);
      os << '\n';
    }
  }, false);
}

inline std::vector<Embedding> read_embeddings(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  require<DataError>(static_cast<bool>(std::getline(in, line)), "empty embedding file ", path.string());
  const long dim = static_cast<long>(std::count(line.begin(), line.end(), '\t')) - 1;
  require<DataError>(dim >= 1, "embedding file ", path.string(), " has no value columns");
  std::vector<Embedding> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    require<DataError>(static_cast<long>(fields.size()) == dim + 2, path.string(), ":", line_no, ": expected ", dim + 2,
                       " fields, found ", fields.size());
    Embedding e;
    e.example_id = fields[0];
    e.label = fields[1];
    e.values.resize(dim);
    for (long k = 0; k < dim; ++k) {
      try {
        e.values(k) = std::stof(fields[static_cast<std::size_t>(k) + 2]);
      } catch (const std::exception&) {
        fail<DataError>(path.string(), ":", line_no, ": bad value '", fields[static_cast<std::size_t>(k) + 2], "'");
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
std::vector<Embedding> export_embeddings(const MultiscaleNet<T>& net, std::span<const MelExample> examples,
                                         const std::filesystem::path& path) {
  auto emb = embed_forward(net, examples);
  write_embeddings(emb, path);
  return emb;
}

}  // namespace msdml
