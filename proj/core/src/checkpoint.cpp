// Copyright (c) 2026, The permrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "permrl/checkpoint.hpp"

#include <fstream>

#include "binary_io.hpp"

namespace permrl {
namespace {

constexpr char kCheckpointMagic[9] = "PRMLCKP1";
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  using namespace detail;
  put_magic(out, kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, c.run_hash);
  put<std::uint64_t>(out, c.seed);
  put<std::int64_t>(out, c.step);
  write_params(out, c.current);
  write_params(out, c.reference);
}

Checkpoint read_checkpoint(std::istream& in) {
  using namespace detail;
  expect_magic(in, kCheckpointMagic, "checkpoint");
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
  Checkpoint c;
  c.run_hash = get<std::uint64_t>(in);
  c.seed = get<std::uint64_t>(in);
  c.step = get<std::int64_t>(in);
  c.current = read_params(in);
  c.reference = read_params(in);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Written to a sibling temporary and renamed into place.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    write_checkpoint(out, ckpt);
    if (!out.flush()) throw IoError("failed writing checkpoint at step " + std::to_string(ckpt.step));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace permrl
