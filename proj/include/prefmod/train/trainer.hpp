#pragma once

#include <functional>
#include <optional>
#include <span>

#include "prefmod/core/error.hpp"
#include "prefmod/synth/dataset.hpp"
#include "prefmod/train/checkpoint.hpp"
#include "prefmod/train/config.hpp"

namespace prefmod::train {

struct TrainOptions {
    const Checkpoint* resume = nullptr;  // continue from this state
    std::optional<std::uint64_t> stop_at;  // stop after this many total steps
    std::function<void(const MetricRecord&)> on_step;
};

// Thrown when a loss or activation turns non-finite; carries the last finite state.
class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, Checkpoint last) : NumericalError(what), last_finite(std::move(last)) {}
    Checkpoint last_finite;
};

// Parameter groups: "bb." backbone and prompt encoder, "ad." adapters,
// "user.bank" training-user embeddings.
inline constexpr const char* kBankName = "user.bank";

// Stage 0: flow matching on the training users' samples mixed with renders
// of random styles, no user conditioning.
Checkpoint pretrain_backbone(const synth::Dataset& data, const PipelineConfig& cfg, const TrainOptions& opts = {});

// Fresh stage-1 state on top of a stage-0 checkpoint: zero-initialised
// adapter heads and a small random bank. Stage 1 starts from this.
Checkpoint init_stage1(const synth::Dataset& data, const Checkpoint& base, const PipelineConfig& cfg);

// Stage 1: adapters and bank trained with flow + dispersion, backbone frozen.
Checkpoint train_stage1(const synth::Dataset& data, const Checkpoint& base, const PipelineConfig& cfg,
                        const TrainOptions& opts = {});

struct FittedUser {
    Tensor embedding;             // M x D_u
    std::optional<Tensor> alpha;  // 1 x K in linear-combination mode
    std::vector<MetricRecord> history;
};

// Stage 2: fits one new user from their samples with everything else frozen.
FittedUser train_new_user(std::span<const synth::Sample> history, const Checkpoint& stage1, const PipelineConfig& cfg,
                          FitMode mode, std::uint64_t seed);

// Row block of the bank holding a training user.
std::size_t bank_index(const Checkpoint& ckpt, std::uint64_t user_id);
Tensor bank_embedding(const Checkpoint& ckpt, const model::AdapterConfig& cfg, std::uint64_t user_id);

// Stacks 3 x S x S images into one B x 3 x S x S tensor.
Tensor stack_images(std::span<const Tensor> images);

}  // namespace prefmod::train
