// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/permutation.hpp"

#include <algorithm>
#include <numeric>

#include "permrl/errors.hpp"

namespace permrl {

Permutation::Permutation(std::vector<std::size_t> mapping, bool applied)
    : mapping_(std::move(mapping)), applied_(applied) {
  std::vector<bool> seen(mapping_.size(), false);
  for (std::size_t v : mapping_) {
    if (v >= mapping_.size() || seen[v]) {
      throw StructuralError("permutation is not a bijection on {1.." + std::to_string(mapping_.size()) + "}");
    }
    seen[v] = true;
  }
  if (!applied_ && !is_identity()) {
    throw StructuralError("a non-applied permutation must be the identity");
  }
}

Permutation Permutation::identity(std::size_t n) {
  std::vector<std::size_t> m(n);
  std::iota(m.begin(), m.end(), std::size_t{0});
  return Permutation(std::move(m), false);
}

Permutation Permutation::from_one_based(const std::vector<int>& one_based, bool applied) {
  std::vector<std::size_t> m;
  m.reserve(one_based.size());
  for (int v : one_based) {
    if (v < 1) throw StructuralError("permutation entries are one-based");
    m.push_back(static_cast<std::size_t>(v - 1));
  }
  return Permutation(std::move(m), applied);
}

bool Permutation::is_identity() const noexcept {
  for (std::size_t j = 0; j < mapping_.size(); ++j) {
    if (mapping_[j] != j) return false;
  }
  return true;
}

Permutation Permutation::inverse() const {
  std::vector<std::size_t> inv(mapping_.size());
  for (std::size_t j = 0; j < mapping_.size(); ++j) inv[mapping_[j]] = j;
  return Permutation(std::move(inv), applied_);
}

std::vector<int> Permutation::one_based() const {
  std::vector<int> out;
  out.reserve(mapping_.size());
  for (std::size_t v : mapping_) out.push_back(static_cast<int>(v) + 1);
  return out;
}

std::string Permutation::to_string() const {
  std::string s;
  for (std::size_t j = 0; j < mapping_.size(); ++j) {
    if (j) s += '-';
    s += std::to_string(mapping_[j] + 1);
  }
  return s;
}

Permutation compose(const Permutation& p, const Permutation& q) {
  if (p.size() != q.size()) {
    throw StructuralError("cannot compose permutations of length " + std::to_string(p.size()) + " and " +
                          std::to_string(q.size()));
  }
  std::vector<std::size_t> m(p.size());
  for (std::size_t j = 0; j < m.size(); ++j) m[j] = p[q[j]];
  const bool identity = std::is_sorted(m.begin(), m.end());
  return Permutation(std::move(m), !identity);
}

std::vector<Permutation> all_permutations(std::size_t n) {
  std::vector<std::size_t> m(n);
  std::iota(m.begin(), m.end(), std::size_t{0});
  std::vector<Permutation> out;
  do {
    const bool identity = std::is_sorted(m.begin(), m.end());
    out.emplace_back(m, !identity);
  } while (std::next_permutation(m.begin(), m.end()));
  return out;
}

}  // namespace permrl
