#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "aoda/vocabulary.hpp"

namespace aoda {

/// A (sketch minibatch, label minibatch) pair. Never split.
struct SketchLabelBatch {
  torch::Tensor sketches;  // [B,3,H,W]
  torch::Tensor labels;    // [B]
};

/// Bounded history of synthesized sketch minibatches with their photo labels.
///
/// query() stores fresh batches until the pool is full. Once full, each query returns a
/// uniformly chosen stored pair with probability `swap_likelihood` (and puts the fresh pair in
/// its slot); otherwise it returns the fresh pair and leaves the pool untouched. Stored
/// tensors are detached deep copies, so the pool holds data rather than graph nodes.
class SketchPool {
 public:
  explicit SketchPool(size_t capacity = 50, double swap_likelihood = 0.5, uint64_t seed = 0);

  SketchLabelBatch query(const SketchLabelBatch& fresh);

  size_t size() const { return entries_.size(); }
  size_t capacity() const { return capacity_; }
  double swap_likelihood() const { return swap_likelihood_; }
  bool full() const { return entries_.size() >= capacity_; }
  const std::vector<SketchLabelBatch>& entries() const { return entries_; }

  std::string rng_state() const;
  void set_rng_state(const std::string& state);
  /// Replaces the contents (checkpoint restore). Entries beyond capacity are rejected.
  void restore(std::vector<SketchLabelBatch> entries);

 private:
  size_t capacity_;
  double swap_likelihood_;
  std::mt19937_64 rng_;
  std::vector<SketchLabelBatch> entries_;
};

/// Substitution threshold t of the random-mixed rule.
struct MixPolicy {
  double threshold = 1.0;
};

/// Draws u ~ U(0,1) and returns t < u, i.e. true with probability 1 - t.
bool should_substitute(const MixPolicy& policy, std::mt19937_64& rng);

/// n_in_domain / n_total, so substitutions happen at the open-domain share of photo classes.
double default_threshold(const ClassVocabulary& vocabulary);

}  // namespace aoda
