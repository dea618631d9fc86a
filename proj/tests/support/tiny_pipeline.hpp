#pragma once

#include "prefmod/train/config.hpp"
#include "tiny_model.hpp"

namespace prefmod::testing {

// A pipeline small enough to train end to end in well under a second.
inline train::PipelineConfig tiny_pipeline(std::uint64_t seed = 3) {
    train::PipelineConfig c;
    c.seed = seed;
    c.data.n_train = 3;
    c.data.n_heldout = 2;
    c.data.per_user = 6;
    c.data.image_size = 8;
    c.data.master_seed = seed;
    c.model.backbone = tiny_backbone();
    c.model.adapters = tiny_adapters();
    c.stage0.steps = 4;
    c.stage0.batch_size = 4;
    c.stage1.steps = 4;
    c.stage1.batch_size = 4;
    c.stage2.steps = 3;
    c.sampler.steps = 3;
    c.eval.n_prompts = 2;
    c.eval.n_seeds = 2;
    c.eval.max_batch = 8;
    c.sweep.lengths = {2, 4};
    c.sweep.n_users = 2;
    c.sweep.n_seeds = 1;
    return c;
}

}  // namespace prefmod::testing
