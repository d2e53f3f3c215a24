#pragma once

#include <string>
#include <vector>

#include "smskd/metrics.hpp"
#include "smskd/trainer.hpp"

namespace smskd {

// Everything one training run leaves behind for later comparison.
struct RunSummary {
    std::string run_id;
    uint64_t seed = 0;
    double final_accuracy = 0.0;
    RunRecord record;
    CorrectnessVector correctness;  // final model on the test split
    bool has_stage1 = false;
    CorrectnessVector stage1_correctness;  // stage-1 snapshot, SMSKD runs only
};

void write_run_summary(const RunSummary& summary, const std::string& path);
RunSummary read_run_summary(const std::string& path);

// One row per epoch: epoch, stage, lr, loss components, test accuracy.
void write_curves_csv(const RunRecord& record, const std::string& path);

// Machine-readable report.json plus per-run curve CSVs and the IoU/Venn
// tables. Re-emission over the same inputs is byte-identical.
void emit_report(const ComparisonReport& report, const std::vector<RunSummary>& runs,
                 const std::string& dir);

// Accuracy matrix over the lambda_r x transition-epoch grid, rows indexed by
// lambda_r.
void write_grid_csv(const std::vector<double>& lambda_values,
                    const std::vector<int>& transition_values,
                    const std::vector<std::vector<double>>& accuracy, const std::string& path);

}  // namespace smskd
