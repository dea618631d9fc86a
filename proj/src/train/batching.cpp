#include "prefmod/train/batching.hpp"

#include <algorithm>
#include <set>

#include "prefmod/core/error.hpp"
#include "prefmod/core/rng.hpp"

namespace prefmod::train {

namespace {

bool has_two_ids(const Batch& b, std::span<const std::uint64_t> ids) {
    for (std::size_t i = 1; i < b.size(); ++i) {
        if (ids[b[i]] != ids[b[0]]) return true;
    }
    return false;
}

}  // namespace

std::vector<Batch> make_batches(std::span<const std::uint64_t> user_ids, std::size_t batch_size,
                                bool require_distinct_users, std::uint64_t seed, std::uint64_t epoch) {
    const std::size_t n = user_ids.size();
    if (n == 0) throw DataError("cannot batch an empty item list");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (require_distinct_users) {
        if (batch_size < 2) throw ConfigError("batches need at least two items to hold two distinct users");
        if (std::set<std::uint64_t>(user_ids.begin(), user_ids.end()).size() < 2) {
            throw ConfigError("every batch must hold two distinct users but the data has only one user");
        }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed({seed, 0xBA7C4, epoch}));
    std::shuffle(order.begin(), order.end(), rng.engine());

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        batches.emplace_back(order.begin() + start, order.begin() + std::min(n, start + batch_size));
    }
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back()[0]);
        batches.pop_back();
    }
    if (!require_distinct_users) return batches;

    for (std::size_t i = 0; i < batches.size(); ++i) {
        if (has_two_ids(batches[i], user_ids)) continue;
        const std::uint64_t u = user_ids[batches[i][0]];
        bool repaired = false;
        for (std::size_t j = 0; j < batches.size() && !repaired; ++j) {
            if (j == i) continue;
            for (std::size_t k = 0; k < batches[j].size() && !repaired; ++k) {
                if (user_ids[batches[j][k]] == u) continue;
                // After the swap j loses item k and gains a u item; it stays valid
                // if some remaining item of j is not u.
                bool j_ok = false;
                for (std::size_t m = 0; m < batches[j].size(); ++m) {
                    if (m != k && user_ids[batches[j][m]] != u) j_ok = true;
                }
                if (!j_ok) continue;
                std::swap(batches[i][0], batches[j][k]);
                repaired = true;
            }
        }
        if (!repaired) {
            throw ConfigError("cannot form batches with two distinct users (one user dominates the data); "
                              "use a larger batch size or more balanced data");
        }
    }
    return batches;
}

Batch batch_for_step(std::span<const std::uint64_t> user_ids, std::size_t batch_size, bool require_distinct_users,
                     std::uint64_t seed, std::uint64_t step) {
    // The batch count per epoch is independent of the shuffle.
    const std::size_t n = user_ids.size();
    std::size_t per_epoch = (n + batch_size - 1) / std::max<std::size_t>(batch_size, 1);
    if (per_epoch > 1 && n % batch_size == 1) --per_epoch;
    const auto batches = make_batches(user_ids, batch_size, require_distinct_users, seed, step / per_epoch);
    return batches[step % per_epoch];
}

}  // namespace prefmod::train
