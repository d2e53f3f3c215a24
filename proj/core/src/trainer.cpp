#include "smskd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "smskd/errors.hpp"
#include "smskd/hashing.hpp"
#include "smskd/metrics.hpp"
#include "smskd/optimizer.hpp"
#include "smskd/rng.hpp"

namespace smskd {

void TrainConfig::validate() const {
    if (batch_size < 2) {
        throw ConfigError("train config: batch size must be >= 2 (relation losses need pairs)");
    }
    if (!(lr > 0)) {
        throw ConfigError("train config: learning rate must be positive");
    }
    if (momentum < 0 || momentum >= 1) {
        throw ConfigError("train config: momentum must be in [0, 1)");
    }
    if (weight_decay < 0) {
        throw ConfigError("train config: weight decay must be nonnegative");
    }
    if (!(decay_factor > 0) || decay_factor > 1) {
        throw ConfigError("train config: decay factor must be in (0, 1]");
    }
    for (size_t i = 1; i < decay_epochs.size(); ++i) {
        if (decay_epochs[i] <= decay_epochs[i - 1]) {
            throw ConfigError("train config: decay epochs must be strictly increasing");
        }
    }
    if (stages.empty()) {
        throw ConfigError("train config: schedule must contain at least one stage");
    }
    for (size_t m = 0; m < stages.size(); ++m) {
        const StagePlan& plan = stages[m];
        if (plan.epochs < 1) {
            throw ConfigError("train config: stage " + std::to_string(m + 1) +
                              " must run at least one epoch");
        }
        if (plan.lambda_r < 0) {
            throw ConfigError("train config: stage " + std::to_string(m + 1) +
                              " lambda_r must be nonnegative");
        }
        if (m == 0 && plan.reference_mode != RefMode::none) {
            throw ConfigError("train config: stage 1 cannot use a reference model");
        }
        plan.method.validate();
    }
}

double lr_at(int epoch, const TrainConfig& config) {
    const int total = config.total_epochs();
    if (epoch < 0 || epoch >= total) {
        throw ParameterError("lr_at: epoch " + std::to_string(epoch) +
                             " outside the training budget of " + std::to_string(total));
    }
    size_t stage = 0;
    int stage_start = 0;
    for (size_t m = 0; m < config.stages.size(); ++m) {
        if (epoch < stage_start + config.stages[m].epochs) {
            stage = m;
            break;
        }
        stage_start += config.stages[m].epochs;
    }
    if (stage < 2) {
        int decays = 0;
        for (int d : config.decay_epochs) {
            if (d <= epoch) {
                ++decays;
            }
        }
        return config.lr * std::pow(config.decay_factor, decays);
    }
    const double floor_lr =
        config.lr * std::pow(config.decay_factor, static_cast<int>(config.decay_epochs.size()));
    const double restart = config.restart_lr > 0 ? config.restart_lr : floor_lr * 100.0;
    const int every = config.restart_every > 0
                          ? config.restart_every
                          : std::max(1, config.stages[stage].epochs / 3);
    const int k = (epoch - stage_start) / every;
    return restart * std::pow(config.decay_factor, k);
}

namespace {

Tensor<float> gather_rows(const Dataset& data, const std::vector<int64_t>& order, int64_t begin,
                          int64_t end) {
    const int64_t n = end - begin;
    const int64_t feat = data.inputs.numel() / data.size();
    Shape shape = data.inputs.shape();
    shape[0] = n;
    Tensor<float> x = Tensor<float>::zeros(shape);
    for (int64_t i = 0; i < n; ++i) {
        std::copy_n(data.inputs.values().begin() + order[static_cast<size_t>(begin + i)] * feat,
                    feat, x.values().begin() + i * feat);
    }
    return x;
}

std::vector<int64_t> gather_labels_rows(const Dataset& data, const std::vector<int64_t>& order,
                                        int64_t begin, int64_t end) {
    std::vector<int64_t> y(static_cast<size_t>(end - begin));
    for (int64_t i = begin; i < end; ++i) {
        y[static_cast<size_t>(i - begin)] = data.labels[static_cast<size_t>(
            order[static_cast<size_t>(i)])];
    }
    return y;
}

// Shared engine behind pretraining, SMSKD and DLA. When `dla_b` is set the
// whole (single-stage) schedule optimizes dla_loss(stage.method, *dla_b).
TrainResult train_schedule(const Model<float>* teacher, Model<float>& student,
                           const Dataset& train, const Dataset& test, const TrainConfig& cfg,
                           const BatchHook& hook, const MethodConfig* dla_b) {
    cfg.validate();
    train.validate();
    test.validate();
    if (teacher != nullptr && teacher->trainable()) {
        throw ContractError("train: teacher must be frozen");
    }
    student.set_trainable(true);

    TrainResult result;
    Model<float> reference;
    bool have_ref = false;
    SgdState<float> student_state;
    int epoch = 0;

    for (size_t m0 = 0; m0 < cfg.stages.size(); ++m0) {
        const int stage_index = static_cast<int>(m0) + 1;
        const StagePlan& plan = cfg.stages[m0];
        const bool needs_teacher = plan.method.method != Method::CE || dla_b != nullptr;
        if (needs_teacher && teacher == nullptr) {
            throw ContractError("train: method " + std::string(method_name(plan.method.method)) +
                                " requires a teacher");
        }

        AuxHeads<float> heads;
        AuxHeads<float> heads_b;
        if (method_needs_heads(plan.method.method)) {
            heads = make_aux_heads<float>(
                plan.method, teacher->tap_feature_shapes(), student.tap_feature_shapes(),
                DetRng::derive(cfg.seed, 5000 + static_cast<uint64_t>(stage_index)));
        }
        if (dla_b != nullptr && method_needs_heads(dla_b->method)) {
            heads_b = make_aux_heads<float>(*dla_b, teacher->tap_feature_shapes(),
                                            student.tap_feature_shapes(),
                                            DetRng::derive(cfg.seed, 6002));
        }
        auto head_params = heads.parameters();
        auto head_params_b = heads_b.parameters();
        SgdState<float> head_state;
        SgdState<float> head_state_b;
        if (cfg.reset_momentum_per_stage) {
            student_state.velocity.clear();
        }

        result.record.stage_start_epochs.push_back(epoch);
        result.record.student_at_stage_start.push_back(parameter_checksum(student));
        result.record.ref_at_stage_start.push_back(have_ref ? parameter_checksum(reference) : 0);

        const bool use_ref = stage_index > 1 && plan.reference_mode != RefMode::none &&
                             plan.lambda_r > 0;
        if (use_ref && !have_ref) {
            throw ContractError("train: stage " + std::to_string(stage_index) +
                                " needs a reference but no prior stage produced one");
        }

        for (int t = 0; t < plan.epochs; ++t, ++epoch) {
            const double lr = lr_at(epoch, cfg);
            std::vector<int64_t> order(static_cast<size_t>(train.size()));
            std::iota(order.begin(), order.end(), int64_t{0});
            DetRng shuffle_rng(DetRng::derive(cfg.seed, 100000 + static_cast<uint64_t>(epoch)));
            shuffle(order, shuffle_rng);

            double sum_total = 0, sum_distill = 0, sum_cls = 0, sum_ref = 0;
            int batches = 0;
            for (int64_t begin = 0; begin < train.size(); begin += cfg.batch_size) {
                const int64_t end = std::min(begin + cfg.batch_size, train.size());
                if (end - begin < 2) {
                    continue;  // relation losses need at least a pair
                }
                Tensor<float> x = gather_rows(train, order, begin, end);
                if (x.rank() == 4) {
                    const uint64_t aug_seed = DetRng::derive(
                        DetRng::derive(cfg.seed, 300000 + static_cast<uint64_t>(epoch)),
                        static_cast<uint64_t>(batches));
                    if (cfg.pad_crop > 0) {
                        x = augment_pad_crop(x, cfg.pad_crop, aug_seed);
                    }
                    if (cfg.augment_flip) {
                        x = augment_flip(x, DetRng::derive(aug_seed, 1));
                    }
                }

                GradTape<float> tape;
                DistillBatchOutputs<float> outputs;
                outputs.labels = gather_labels_rows(train, order, begin, end);
                outputs.tau = static_cast<float>(plan.method.tau);
                if (teacher != nullptr) {
                    ForwardResult<float> tf = teacher->forward(tape, x);
                    outputs.teacher_logits = tf.logits;
                    outputs.teacher_taps = std::move(tf.taps);
                }
                ForwardResult<float> sf = student.forward(tape, x);
                outputs.student_logits = sf.logits;
                outputs.student_taps = std::move(sf.taps);
                if (use_ref) {
                    outputs.reference_logits = reference.forward(tape, x).logits;
                }

                StageLossParts<float> parts =
                    dla_b != nullptr
                        ? dla_loss(tape, outputs, plan.method, *dla_b,
                                   heads.heads.empty() ? nullptr : &heads,
                                   heads_b.heads.empty() ? nullptr : &heads_b)
                        : stage_loss(tape, outputs, plan.method, stage_index,
                                     static_cast<float>(plan.lambda_r), plan.reference_mode,
                                     heads.heads.empty() ? nullptr : &heads);

                const double loss_value = parts.total.item();
                if (!std::isfinite(loss_value)) {
                    throw NumericError("train: loss diverged to " + std::to_string(loss_value) +
                                       " at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batches));
                }

                for (auto& [name, p] : student.parameters()) {
                    p.zero_grad();
                }
                for (auto& [name, p] : head_params) {
                    p.zero_grad();
                }
                for (auto& [name, p] : head_params_b) {
                    p.zero_grad();
                }
                tape.backward(parts.total);
                sgd_step(student.parameters(), student_state, static_cast<float>(lr),
                         static_cast<float>(cfg.momentum), static_cast<float>(cfg.weight_decay));
                if (!head_params.empty()) {
                    sgd_step(head_params, head_state, static_cast<float>(lr),
                             static_cast<float>(cfg.momentum),
                             static_cast<float>(cfg.weight_decay));
                }
                if (!head_params_b.empty()) {
                    sgd_step(head_params_b, head_state_b, static_cast<float>(lr),
                             static_cast<float>(cfg.momentum),
                             static_cast<float>(cfg.weight_decay));
                }

                if (hook) {
                    BatchEvent ev;
                    ev.stage_index = stage_index;
                    ev.epoch = epoch;
                    ev.batch_index = batches;
                    ev.outputs = &outputs;
                    ev.method = &plan.method;
                    ev.lambda_r = plan.lambda_r;
                    ev.ref_mode = plan.reference_mode;
                    ev.heads = heads.heads.empty() ? nullptr : &heads;
                    ev.loss_total = loss_value;
                    hook(ev);
                }

                sum_total += loss_value;
                sum_distill += parts.distill.defined() ? parts.distill.item() : 0.0;
                sum_cls += parts.cls.defined() ? parts.cls.item() : 0.0;
                sum_ref += parts.ref.defined() ? parts.ref.item() : 0.0;
                ++batches;
            }

            EpochStat stat;
            stat.epoch = epoch;
            stat.stage = stage_index;
            stat.lr = lr;
            if (batches > 0) {
                stat.loss_total = sum_total / batches;
                stat.loss_distill = sum_distill / batches;
                stat.loss_cls = sum_cls / batches;
                stat.loss_ref = sum_ref / batches;
            }
            stat.test_accuracy = evaluate(student, test).accuracy;
            result.record.epochs.push_back(stat);
        }

        result.record.ref_at_stage_end.push_back(have_ref ? parameter_checksum(reference) : 0);
        reference = student.snapshot();
        have_ref = true;
        result.stage_snapshots.push_back(student.snapshot());
    }

    result.record.final_student_checksum = parameter_checksum(student);
    result.record.teacher_checksum = teacher != nullptr ? parameter_checksum(*teacher) : 0;
    result.record.final_accuracy =
        result.record.epochs.empty() ? 0.0 : result.record.epochs.back().test_accuracy;
    return result;
}

}  // namespace

RunRecord pretrain_teacher(Model<float>& model, const Dataset& train, const Dataset& test,
                           const TrainConfig& config) {
    const int epochs = config.total_epochs();
    if (epochs == 0) {
        model.set_trainable(false);
        RunRecord empty;
        empty.final_student_checksum = parameter_checksum(model);
        return empty;
    }
    TrainConfig ce_cfg = config;
    StagePlan stage;
    stage.method = MethodConfig::defaults(Method::CE);
    stage.epochs = epochs;
    ce_cfg.stages = {stage};
    TrainResult result = train_schedule(nullptr, model, train, test, ce_cfg, nullptr, nullptr);
    model.set_trainable(false);
    return result.record;
}

TrainResult run_smskd(const Model<float>& teacher, Model<float>& student, const Dataset& train,
                      const Dataset& test, const TrainConfig& config, const BatchHook& hook) {
    return train_schedule(&teacher, student, train, test, config, hook, nullptr);
}

TrainResult run_dla(const Model<float>& teacher, Model<float>& student, const Dataset& train,
                    const Dataset& test, const MethodConfig& method_a,
                    const MethodConfig& method_b, const TrainConfig& config,
                    const BatchHook& hook) {
    TrainConfig dla_cfg = config;
    StagePlan stage;
    stage.method = method_a;
    stage.epochs = config.total_epochs();
    dla_cfg.stages = {stage};
    return train_schedule(&teacher, student, train, test, dla_cfg, hook, &method_b);
}

}  // namespace smskd
