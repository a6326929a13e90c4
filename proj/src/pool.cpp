#include "aoda/pool.hpp"

#include <sstream>
#include <stdexcept>

#include "aoda/errors.hpp"

namespace aoda {

namespace {

SketchLabelBatch detached_copy(const SketchLabelBatch& b) {
  return {b.sketches.detach().clone(), b.labels.detach().clone()};
}

}  // namespace

SketchPool::SketchPool(size_t capacity, double swap_likelihood, uint64_t seed)
    : capacity_(capacity), swap_likelihood_(swap_likelihood), rng_(seed) {
  if (capacity == 0) throw std::invalid_argument("pool capacity must be positive");
  if (!(swap_likelihood >= 0.0 && swap_likelihood <= 1.0)) {
    throw std::invalid_argument("swap likelihood must lie in [0,1]");
  }
  entries_.reserve(capacity);
}

SketchLabelBatch SketchPool::query(const SketchLabelBatch& fresh) {
  if (!fresh.sketches.defined() || !fresh.labels.defined() || fresh.sketches.size(0) != fresh.labels.size(0)) {
    throw std::invalid_argument("pool query needs a sketch batch and one label per sketch");
  }
  auto copy = detached_copy(fresh);
  if (entries_.size() < capacity_) {
    entries_.push_back(copy);
    return copy;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng_) < swap_likelihood_) {
    std::uniform_int_distribution<size_t> pick(0, entries_.size() - 1);
    const size_t slot = pick(rng_);
    SketchLabelBatch stored = std::move(entries_[slot]);
    entries_[slot] = std::move(copy);
    return stored;
  }
  return copy;
}

std::string SketchPool::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void SketchPool::set_rng_state(const std::string& state) {
  std::istringstream is(state);
  is >> rng_;
  if (!is) throw IntegrityError("invalid pool rng state");
}

void SketchPool::restore(std::vector<SketchLabelBatch> entries) {
  if (entries.size() > capacity_) throw IntegrityError("stored pool exceeds its capacity");
  entries_ = std::move(entries);
}

bool should_substitute(const MixPolicy& policy, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  return policy.threshold < u;
}

double default_threshold(const ClassVocabulary& vocabulary) {
  if (vocabulary.size() < 1) throw std::invalid_argument("default_threshold needs at least one class");
  return static_cast<double>(vocabulary.in_domain_count()) / static_cast<double>(vocabulary.size());
}

}  // namespace aoda
