#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "smskd/data.hpp"
#include "smskd/models.hpp"

namespace smskd {

// Per-sample correctness over one dataset split, tied to the dataset
// fingerprint so cross-model comparisons cannot silently misalign.
struct CorrectnessVector {
    std::string model_id;
    std::string split_tag;
    uint64_t fingerprint = 0;
    std::vector<uint8_t> bits;

    int64_t count() const {
        int64_t n = 0;
        for (uint8_t b : bits) {
            n += b;
        }
        return n;
    }
};

struct EvalResult {
    double accuracy = 0.0;
    CorrectnessVector correct;
};

// Argmax evaluation; ties break toward the lowest class index.
EvalResult evaluate(const Model<float>& model, const Dataset& data,
                    const std::string& model_id = "model");

// |A intersect B| / |A union B| * 100; defined as 100 when both sets are empty.
double iou(const CorrectnessVector& a, const CorrectnessVector& b);

struct VennCounts {
    int64_t forgotten = 0;  // |A \ B|
    int64_t acquired = 0;   // |B \ A|
    int64_t retained = 0;   // |A intersect B|
    double forgotten_pct_of_a = 0.0;
};

VennCounts venn(const CorrectnessVector& a, const CorrectnessVector& b);

struct TcpStats {
    std::array<int64_t, 10> histogram{};  // bins over [0,1]; 1.0 lands in the top bin
    double mean = 0.0;
    int64_t n = 0;
};

// Distribution of the reference model's true-class probability.
TcpStats tcp_stats(const Model<float>& reference, const Dataset& data);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct ComparisonReport {
    std::vector<std::string> run_ids;
    std::vector<double> accuracies;
    std::vector<double> deltas;  // accuracy minus the baseline run's accuracy
    int baseline_index = 0;
    int anchor_index = 0;
    std::vector<std::vector<double>> iou_matrix;
    std::vector<VennCounts> venn_vs_anchor;
};

// Tabulates accuracies, deltas against a baseline run, the pairwise IoU
// matrix and Venn triples against an anchor run.
ComparisonReport compare_runs(const std::vector<std::string>& run_ids,
                              const std::vector<double>& accuracies,
                              const std::vector<CorrectnessVector>& correctness,
                              int baseline_index = 0, int anchor_index = 0);

}  // namespace smskd
