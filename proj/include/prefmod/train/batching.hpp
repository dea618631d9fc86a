#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace prefmod::train {

using Batch = std::vector<std::size_t>;  // indices into the caller's item list

// One epoch of batches over items whose user ids are given: a seeded shuffle
// cut into batch_size chunks. A trailing single item joins the previous batch.
// With require_distinct_users every batch holds at least two ids, repaired by
// swapping items between batches. Each item appears exactly once.
// Throws ConfigError when the constraint cannot be met.
std::vector<Batch> make_batches(std::span<const std::uint64_t> user_ids, std::size_t batch_size,
                                bool require_distinct_users, std::uint64_t seed, std::uint64_t epoch);

// The batch used at a global step: epoch = step / batches per epoch.
Batch batch_for_step(std::span<const std::uint64_t> user_ids, std::size_t batch_size, bool require_distinct_users,
                     std::uint64_t seed, std::uint64_t step);

}  // namespace prefmod::train
