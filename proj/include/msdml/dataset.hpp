#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "msdml/error.hpp"
#include "msdml/features.hpp"

namespace msdml {

// Examples with labels mapped to dense class indices. Examples whose label is
// not in `classes` carry index -1 (outliers).
struct Dataset {
  std::vector<MelExample> examples;
  std::vector<std::string> classes;  // sorted
  std::vector<int> labels;

  std::size_t size() const { return examples.size(); }
  int num_classes() const { return static_cast<int>(classes.size()); }

  int class_index(const std::string& label) const {
    auto it = std::lower_bound(classes.begin(), classes.end(), label);
    return it != classes.end() && *it == label ? static_cast<int>(it - classes.begin()) : -1;
  }

  // Class list taken from the examples themselves.
  static Dataset from_examples(std::vector<MelExample> examples) {
    std::set<std::string> names;
    for (const auto& e : examples) names.insert(e.label);
    return with_classes(std::move(examples), {names.begin(), names.end()});
  }

  static Dataset with_classes(std::vector<MelExample> examples, std::vector<std::string> classes) {
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    Dataset d;
    d.examples = std::move(examples);
    d.classes = std::move(classes);
    d.labels.reserve(d.examples.size());
    for (const auto& e : d.examples) d.labels.push_back(d.class_index(e.label));
    return d;
  }
};

}  // namespace msdml
