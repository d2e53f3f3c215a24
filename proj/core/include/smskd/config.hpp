#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smskd/data.hpp"
#include "smskd/trainer.hpp"

namespace smskd {

struct DataConfig {
    std::string kind = "patterned_images";  // blobs | spirals | patterned_images | cifar
    int64_t k = 10;
    int64_t per_class = 150;
    int64_t dim = 2;        // blobs
    double spread = 0.15;   // blobs
    double noise = 0.25;    // spirals, patterned_images
    int64_t channels = 1;   // patterned_images
    int64_t side = 8;       // patterned_images
    std::string path;       // cifar
    std::string variant = "cifar10";
    int64_t take = 0;  // cifar: keep only the first N records (0 = all)
    uint64_t seed = 7;
    double test_fraction = 1.0 / 3.0;
    std::string normalize = "standardize";  // standardize | channel_mean | none
    bool augment_flip = false;
    int64_t pad_crop = 0;
};

struct ArchConfig {
    std::string type = "tinyconv";  // mlp | tinyconv
    std::vector<int64_t> hidden;
    std::vector<int64_t> conv_channels;
};

struct PretrainConfig {
    int epochs = 24;
    double lr = 0.05;
    std::vector<int> decay_epochs{15, 18, 21};
};

struct StageConfigEntry {
    std::string method = "KD";
    int epochs = 1;
    double lambda_r = 0.5;
    std::string reference_mode;  // empty: none for stage 1, adaptive after
    // optional method overrides; NaN means "use the method default"
    double lambda_c = -1;
    double tau = -1;
    double distill_scale = -1;
    double alpha = -1;
    double beta = -1;
    double w_d = -1;
    double w_a = -1;
    double at_power = -1;
    double tau_ref = -1;
    bool all_tap_pairs = false;
    bool tcp_from_teacher = false;
};

struct OptimizerConfig {
    int64_t batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> decay_epochs{15, 18, 21};
    double decay_factor = 0.1;
    double restart_lr = 0.0;
    int restart_every = 0;
    bool reset_momentum_per_stage = true;
};

struct ExperimentConfig {
    DataConfig data;
    ArchConfig teacher_arch;
    PretrainConfig pretrain;
    std::string teacher_checkpoint;  // skip pretraining when set
    ArchConfig student_arch;
    std::vector<StageConfigEntry> schedule;
    OptimizerConfig optimizer;
    std::vector<uint64_t> seeds{1};
    std::string output_dir = "runs/out";
};

// Parses and fully validates the JSON text; unknown keys are rejected with
// the path to the offending key. `source` names the document in errors.
ExperimentConfig parse_config(const std::string& text, const std::string& source = "<config>");

ExperimentConfig load_config_file(const std::string& path);

// Canonical serialization: every field explicit, so parse -> serialize ->
// parse is a fixpoint.
std::string serialize_config(const ExperimentConfig& config);

// Realizes the training schedule for one seed.
TrainConfig to_train_config(const ExperimentConfig& config, uint64_t seed);

// Teacher pretraining protocol as a TrainConfig (CE stage budget only).
TrainConfig to_pretrain_config(const ExperimentConfig& config, uint64_t seed);

// Generates or reads the configured dataset, splits it and applies the
// configured normalization.
std::pair<Dataset, Dataset> load_datasets(const DataConfig& config);

// Builds an architecture; for mlp the input dimension and class count come
// from the dataset.
Model<float> build_model(const ArchConfig& arch, const Shape& input_shape, int64_t num_classes);

}  // namespace smskd
