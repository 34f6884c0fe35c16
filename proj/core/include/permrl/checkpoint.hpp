// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "permrl/policy.hpp"

namespace permrl {

/// Training state needed for a bit-identical continuation. Every random stream
/// is derived from (seed, step, ...), so the seed and step counter are the
/// complete generator state.
struct Checkpoint {
  std::uint64_t run_hash = 0;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  PolicyParams current;
  PolicyParams reference;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace permrl
