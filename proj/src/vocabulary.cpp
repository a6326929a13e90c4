#include "aoda/vocabulary.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "aoda/errors.hpp"

namespace aoda {

ClassVocabulary::ClassVocabulary(std::vector<std::string> names, std::set<int64_t> open_domain)
    : names_(std::move(names)), open_domain_(std::move(open_domain)) {
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ConfigError("class names must be non-empty");
    if (!seen.insert(n).second) throw ConfigError("duplicate class name '" + n + "'");
  }
  for (int64_t idx : open_domain_) {
    if (idx < 0 || idx >= size()) {
      throw ConfigError("open-domain index " + std::to_string(idx) + " outside vocabulary of size " +
                        std::to_string(size()));
    }
  }
}

ClassVocabulary ClassVocabulary::from_names(std::vector<std::string> names,
                                            const std::vector<std::string>& open_names) {
  std::set<int64_t> open;
  for (const auto& o : open_names) {
    auto it = std::find(names.begin(), names.end(), o);
    if (it == names.end()) throw ConfigError("open-domain class '" + o + "' is not in the class list");
    open.insert(it - names.begin());
  }
  return ClassVocabulary(std::move(names), std::move(open));
}

const std::string& ClassVocabulary::name(int64_t index) const {
  if (index < 0 || index >= size()) {
    throw std::invalid_argument("class index " + std::to_string(index) + " out of range");
  }
  return names_[static_cast<size_t>(index)];
}

std::optional<int64_t> ClassVocabulary::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return it - names_.begin();
}

std::vector<int64_t> ClassVocabulary::in_domain_indices() const {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < size(); ++i) {
    if (!is_open(i)) out.push_back(i);
  }
  return out;
}

void ClassVocabulary::require_trainable() const {
  if (empty()) throw ConfigError("class vocabulary is empty");
  if (in_domain_count() == 0) {
    throw ConfigError("every class is open-domain; at least one class needs training sketches");
  }
}

nlohmann::json ClassVocabulary::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (int64_t i = 0; i < size(); ++i) {
    classes.push_back({{"index", i}, {"name", names_[static_cast<size_t>(i)]}, {"open_domain", is_open(i)}});
  }
  return {{"classes", classes}};
}

ClassVocabulary ClassVocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::string> names;
  std::set<int64_t> open;
  for (const auto& c : j.at("classes")) {
    names.push_back(c.at("name").get<std::string>());
    if (c.at("open_domain").get<bool>()) open.insert(static_cast<int64_t>(names.size()) - 1);
  }
  return ClassVocabulary(std::move(names), std::move(open));
}

}  // namespace aoda
