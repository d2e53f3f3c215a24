#include "smskd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "smskd/errors.hpp"
#include "smskd/ops.hpp"

namespace smskd {

namespace {

constexpr int64_t kEvalBatch = 256;

void check_aligned(const char* op, const CorrectnessVector& a, const CorrectnessVector& b) {
    if (a.fingerprint != b.fingerprint) {
        throw ContractError(std::string(op) + ": dataset fingerprints differ (" +
                            a.model_id + " vs " + b.model_id +
                            "), correctness vectors are not comparable");
    }
    if (a.bits.size() != b.bits.size()) {
        throw ContractError(std::string(op) + ": correctness lengths differ");
    }
}

// Forward pass over a batch slice; returns argmax predictions.
std::vector<int64_t> predict_batch(const Model<float>& model, const Dataset& data, int64_t begin,
                                   int64_t end) {
    const int64_t n = end - begin;
    const int64_t feat = data.inputs.numel() / data.size();
    Shape shape = data.inputs.shape();
    shape[0] = n;
    Tensor<float> x = Tensor<float>::zeros(shape);
    std::copy_n(data.inputs.values().begin() + begin * feat, n * feat, x.values().begin());
    GradTape<float> tape;
    ForwardResult<float> fwd = model.forward(tape, x);
    const int64_t k = fwd.logits.dim(1);
    std::vector<int64_t> pred(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const float* row = fwd.logits.values().data() + i * k;
        int64_t best = 0;
        for (int64_t j = 1; j < k; ++j) {
            if (row[j] > row[best]) {
                best = j;
            }
        }
        pred[static_cast<size_t>(i)] = best;
    }
    return pred;
}

}  // namespace

EvalResult evaluate(const Model<float>& model, const Dataset& data,
                    const std::string& model_id) {
    data.validate();
    if (model.num_classes() != data.num_classes) {
        throw ContractError("evaluate: model has " + std::to_string(model.num_classes()) +
                            " classes, dataset has " + std::to_string(data.num_classes));
    }
    EvalResult result;
    result.correct.model_id = model_id;
    result.correct.split_tag = data.split_tag;
    result.correct.fingerprint = data.fingerprint();
    const int64_t n = data.size();
    result.correct.bits.resize(static_cast<size_t>(n));
    int64_t hits = 0;
    for (int64_t begin = 0; begin < n; begin += kEvalBatch) {
        const int64_t end = std::min(begin + kEvalBatch, n);
        const std::vector<int64_t> pred = predict_batch(model, data, begin, end);
        for (int64_t i = begin; i < end; ++i) {
            const bool ok = pred[static_cast<size_t>(i - begin)] ==
                            data.labels[static_cast<size_t>(i)];
            result.correct.bits[static_cast<size_t>(i)] = ok ? 1 : 0;
            hits += ok;
        }
    }
    result.accuracy = n > 0 ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
    return result;
}

double iou(const CorrectnessVector& a, const CorrectnessVector& b) {
    check_aligned("iou", a, b);
    int64_t inter = 0;
    int64_t uni = 0;
    for (size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] & b.bits[i];
        uni += a.bits[i] | b.bits[i];
    }
    if (uni == 0) {
        return 100.0;
    }
    return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

VennCounts venn(const CorrectnessVector& a, const CorrectnessVector& b) {
    check_aligned("venn", a, b);
    VennCounts out;
    for (size_t i = 0; i < a.bits.size(); ++i) {
        out.forgotten += a.bits[i] & ~b.bits[i] & 1;
        out.acquired += ~a.bits[i] & b.bits[i] & 1;
        out.retained += a.bits[i] & b.bits[i];
    }
    const int64_t size_a = out.forgotten + out.retained;
    out.forgotten_pct_of_a =
        size_a > 0 ? 100.0 * static_cast<double>(out.forgotten) / static_cast<double>(size_a)
                   : 0.0;
    return out;
}

TcpStats tcp_stats(const Model<float>& reference, const Dataset& data) {
    data.validate();
    TcpStats stats;
    const int64_t n = data.size();
    stats.n = n;
    const int64_t feat = n > 0 ? data.inputs.numel() / n : 0;
    for (int64_t begin = 0; begin < n; begin += kEvalBatch) {
        const int64_t end = std::min(begin + kEvalBatch, n);
        Shape shape = data.inputs.shape();
        shape[0] = end - begin;
        Tensor<float> x = Tensor<float>::zeros(shape);
        std::copy_n(data.inputs.values().begin() + begin * feat, (end - begin) * feat,
                    x.values().begin());
        GradTape<float> tape;
        Tensor<float> probs = softmax_tau(tape, reference.forward(tape, x).logits, 1.0f);
        const int64_t k = probs.dim(1);
        for (int64_t i = begin; i < end; ++i) {
            const double p = probs.values()[(i - begin) * k +
                                            data.labels[static_cast<size_t>(i)]];
            stats.mean += p;
            const int bin = std::min(static_cast<int>(p * 10.0), 9);
            stats.histogram[static_cast<size_t>(std::max(bin, 0))] += 1;
        }
    }
    if (n > 0) {
        stats.mean /= static_cast<double>(n);
    }
    return stats;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) {
            ++j;
        }
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank, 1-based
        for (size_t t = i; t <= j; ++t) {
            r[order[t]] = avg;
        }
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw ContractError("spearman: needs two equally sized series of length >= 2");
    }
    const std::vector<double> ra = ranks(a);
    const std::vector<double> rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0 || vb == 0) {
        return 0.0;
    }
    return cov / std::sqrt(va * vb);
}

ComparisonReport compare_runs(const std::vector<std::string>& run_ids,
                              const std::vector<double>& accuracies,
                              const std::vector<CorrectnessVector>& correctness,
                              int baseline_index, int anchor_index) {
    const size_t n = run_ids.size();
    if (accuracies.size() != n || correctness.size() != n || n == 0) {
        throw ContractError("compare_runs: inconsistent run lists");
    }
    if (baseline_index < 0 || static_cast<size_t>(baseline_index) >= n || anchor_index < 0 ||
        static_cast<size_t>(anchor_index) >= n) {
        throw ContractError("compare_runs: baseline/anchor index out of range");
    }
    ComparisonReport report;
    report.run_ids = run_ids;
    report.accuracies = accuracies;
    report.baseline_index = baseline_index;
    report.anchor_index = anchor_index;
    for (double acc : accuracies) {
        report.deltas.push_back(acc - accuracies[static_cast<size_t>(baseline_index)]);
    }
    report.iou_matrix.assign(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) {
            report.iou_matrix[i][j] = iou(correctness[i], correctness[j]);
        }
    }
    for (size_t i = 0; i < n; ++i) {
        report.venn_vs_anchor.push_back(
            venn(correctness[static_cast<size_t>(anchor_index)], correctness[i]));
    }
    return report;
}

}  // namespace smskd
