#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "smskd/data.hpp"
#include "smskd/losses.hpp"
#include "smskd/models.hpp"

namespace smskd {

// One stage of the schedule. Stage 1 must use reference_mode none; lambda_r
// is ignored there.
struct StagePlan {
    MethodConfig method;
    int epochs = 1;
    double lambda_r = 0.0;
    RefMode reference_mode = RefMode::none;
};

struct TrainConfig {
    uint64_t seed = 1;
    int64_t batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> decay_epochs{15, 18, 21};
    double decay_factor = 0.1;
    // Stages >= 3 restart the learning rate (Fig. 5 protocol). Zero means
    // "derive": restart_lr = 100x the global schedule's floor, restart_every
    // = stage epochs / 3.
    double restart_lr = 0.0;
    int restart_every = 0;
    bool reset_momentum_per_stage = true;
    bool augment_flip = false;
    int64_t pad_crop = 0;
    std::vector<StagePlan> stages;

    int total_epochs() const {
        int n = 0;
        for (const StagePlan& s : stages) {
            n += s.epochs;
        }
        return n;
    }

    void validate() const;
};

// Piecewise-constant learning rate. Stages 1-2 follow one continuous decay
// schedule; stages >= 3 restart at stage start and decay by the same factor
// every restart interval, ending the stage back at the pre-restart floor.
double lr_at(int epoch, const TrainConfig& config);

struct EpochStat {
    int epoch = 0;
    int stage = 0;  // 1-based
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_distill = 0.0;
    double loss_cls = 0.0;
    double loss_ref = 0.0;
    double test_accuracy = 0.0;
};

struct RunRecord {
    std::vector<EpochStat> epochs;
    std::vector<int> stage_start_epochs;          // one per stage
    std::vector<uint32_t> student_at_stage_start;  // checksum, one per stage
    std::vector<uint32_t> ref_at_stage_start;      // 0 for stage 1
    std::vector<uint32_t> ref_at_stage_end;        // 0 for stage 1
    uint32_t final_student_checksum = 0;
    uint32_t teacher_checksum = 0;
    double final_accuracy = 0.0;
};

// Test instrumentation: called after each batch's loss is computed, before
// the optimizer step.
struct BatchEvent {
    int stage_index = 0;  // 1-based
    int epoch = 0;
    int batch_index = 0;
    const DistillBatchOutputs<float>* outputs = nullptr;
    const MethodConfig* method = nullptr;
    double lambda_r = 0.0;
    RefMode ref_mode = RefMode::none;
    const AuxHeads<float>* heads = nullptr;
    double loss_total = 0.0;
};
using BatchHook = std::function<void(const BatchEvent&)>;

struct TrainResult {
    RunRecord record;
    // Frozen student copies taken at each stage end; stage_snapshots[0] is
    // the reference anchoring stage 2.
    std::vector<Model<float>> stage_snapshots;
};

// Cross-entropy training with the same optimizer protocol; freezes the model
// on return. `config.stages` supplies only the epoch budget; the method is
// forced to CE.
RunRecord pretrain_teacher(Model<float>& model, const Dataset& train, const Dataset& test,
                           const TrainConfig& config);

// Algorithm 1: sequential stages, each anchored by a frozen snapshot of the
// student taken at the previous stage's end.
TrainResult run_smskd(const Model<float>& teacher, Model<float>& student, const Dataset& train,
                      const Dataset& test, const TrainConfig& config,
                      const BatchHook& hook = nullptr);

// Direct loss aggregation baseline: both distillation losses summed in a
// single stage over the full epoch budget.
TrainResult run_dla(const Model<float>& teacher, Model<float>& student, const Dataset& train,
                    const Dataset& test, const MethodConfig& method_a,
                    const MethodConfig& method_b, const TrainConfig& config,
                    const BatchHook& hook = nullptr);

}  // namespace smskd
