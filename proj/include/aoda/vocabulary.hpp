#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace aoda {

/// Ordered class labels with the open-domain subset (classes whose sketches
/// are withheld from training). Indices follow the listed order.
class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  ClassVocabulary(std::vector<std::string> names, std::set<int64_t> open_domain);

  /// Builds the vocabulary from names; every entry of `open_names` must be one of `names`.
  static ClassVocabulary from_names(std::vector<std::string> names,
                                    const std::vector<std::string>& open_names);

  int64_t size() const { return static_cast<int64_t>(names_.size()); }
  bool empty() const { return names_.empty(); }
  const std::string& name(int64_t index) const;
  const std::vector<std::string>& names() const { return names_; }
  std::optional<int64_t> index_of(const std::string& name) const;

  bool is_open(int64_t index) const { return open_domain_.count(index) > 0; }
  const std::set<int64_t>& open_domain() const { return open_domain_; }
  std::vector<int64_t> in_domain_indices() const;
  int64_t open_count() const { return static_cast<int64_t>(open_domain_.size()); }
  int64_t in_domain_count() const { return size() - open_count(); }

  /// Throws ConfigError unless at least one class keeps its sketches.
  void require_trainable() const;

  nlohmann::json to_json() const;
  static ClassVocabulary from_json(const nlohmann::json& j);

  bool operator==(const ClassVocabulary&) const = default;

 private:
  std::vector<std::string> names_;
  std::set<int64_t> open_domain_;
};

}  // namespace aoda
