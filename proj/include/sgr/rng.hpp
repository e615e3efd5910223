// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace sgr {

using Rng = std::mt19937_64;

/// Independent stream derived from (seed, stream id, purpose tag). Used for
/// per-sample randomness so results do not depend on batching or threading.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t purpose = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return Rng(seq);
}

// Purpose tags for derive_rng.
inline constexpr std::uint64_t kStreamAugment = 1;
inline constexpr std::uint64_t kStreamRandNoise = 2;
inline constexpr std::uint64_t kStreamPgdStart = 3;
inline constexpr std::uint64_t kStreamLrc = 4;
inline constexpr std::uint64_t kStreamShuffle = 5;

}  // namespace sgr
