// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace permrl {

/// A bijection on image positions. Position j of the permuted sequence receives
/// original image `mapping()[j]`. Indices are zero-based in code and one-based
/// in every external format.
class Permutation {
 public:
  Permutation() = default;

  /// Throws StructuralError unless `mapping` is a bijection on {0..n-1}, or if
  /// `applied` is false for a non-identity mapping.
  explicit Permutation(std::vector<std::size_t> mapping, bool applied = true);

  /// Identity of length n with applied=false (the coin flip chose not to swap).
  static Permutation identity(std::size_t n);
  static Permutation from_one_based(const std::vector<int>& one_based, bool applied = true);

  std::size_t size() const noexcept { return mapping_.size(); }
  std::size_t operator[](std::size_t j) const { return mapping_.at(j); }
  const std::vector<std::size_t>& mapping() const noexcept { return mapping_; }
  bool applied() const noexcept { return applied_; }
  bool is_identity() const noexcept;

  Permutation inverse() const;
  std::vector<int> one_based() const;
  /// "2-1-3" style rendering used in instance ids.
  std::string to_string() const;

  friend bool operator==(const Permutation& a, const Permutation& b) {
    return a.mapping_ == b.mapping_ && a.applied_ == b.applied_;
  }

 private:
  std::vector<std::size_t> mapping_;
  bool applied_ = false;
};

/// (p o q)(j) = p(q(j)). Throws StructuralError on length mismatch. The result is
/// marked applied unless it is the identity.
Permutation compose(const Permutation& p, const Permutation& q);

/// Every permutation of {0..n-1} in lexicographic order (n! entries).
std::vector<Permutation> all_permutations(std::size_t n);

}  // namespace permrl
