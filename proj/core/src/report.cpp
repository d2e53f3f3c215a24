#include "smskd/report.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "smskd/errors.hpp"

namespace smskd {

namespace {

using nlohmann::json;

std::string bits_to_string(const std::vector<uint8_t>& bits) {
    std::string s(bits.size(), '0');
    for (size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) {
            s[i] = '1';
        }
    }
    return s;
}

std::vector<uint8_t> bits_from_string(const std::string& s) {
    std::vector<uint8_t> bits(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        bits[i] = s[i] == '1' ? 1 : 0;
    }
    return bits;
}

json correctness_to_json(const CorrectnessVector& c) {
    return json{{"model_id", c.model_id},
                {"split_tag", c.split_tag},
                {"fingerprint", std::to_string(c.fingerprint)},
                {"bits", bits_to_string(c.bits)}};
}

CorrectnessVector correctness_from_json(const json& j) {
    CorrectnessVector c;
    c.model_id = j.at("model_id").get<std::string>();
    c.split_tag = j.at("split_tag").get<std::string>();
    c.fingerprint = std::stoull(j.at("fingerprint").get<std::string>());
    c.bits = bits_from_string(j.at("bits").get<std::string>());
    return c;
}

json record_to_json(const RunRecord& r) {
    json epochs = json::array();
    for (const EpochStat& e : r.epochs) {
        epochs.push_back(json{{"epoch", e.epoch},
                              {"stage", e.stage},
                              {"lr", e.lr},
                              {"loss_total", e.loss_total},
                              {"loss_distill", e.loss_distill},
                              {"loss_cls", e.loss_cls},
                              {"loss_ref", e.loss_ref},
                              {"test_accuracy", e.test_accuracy}});
    }
    return json{{"epochs", epochs},
                {"stage_start_epochs", r.stage_start_epochs},
                {"student_at_stage_start", r.student_at_stage_start},
                {"ref_at_stage_start", r.ref_at_stage_start},
                {"ref_at_stage_end", r.ref_at_stage_end},
                {"final_student_checksum", r.final_student_checksum},
                {"teacher_checksum", r.teacher_checksum},
                {"final_accuracy", r.final_accuracy}};
}

RunRecord record_from_json(const json& j) {
    RunRecord r;
    for (const json& e : j.at("epochs")) {
        EpochStat s;
        s.epoch = e.at("epoch").get<int>();
        s.stage = e.at("stage").get<int>();
        s.lr = e.at("lr").get<double>();
        s.loss_total = e.at("loss_total").get<double>();
        s.loss_distill = e.at("loss_distill").get<double>();
        s.loss_cls = e.at("loss_cls").get<double>();
        s.loss_ref = e.at("loss_ref").get<double>();
        s.test_accuracy = e.at("test_accuracy").get<double>();
        r.epochs.push_back(s);
    }
    r.stage_start_epochs = j.at("stage_start_epochs").get<std::vector<int>>();
    r.student_at_stage_start = j.at("student_at_stage_start").get<std::vector<uint32_t>>();
    r.ref_at_stage_start = j.at("ref_at_stage_start").get<std::vector<uint32_t>>();
    r.ref_at_stage_end = j.at("ref_at_stage_end").get<std::vector<uint32_t>>();
    r.final_student_checksum = j.at("final_student_checksum").get<uint32_t>();
    r.teacher_checksum = j.at("teacher_checksum").get<uint32_t>();
    r.final_accuracy = j.at("final_accuracy").get<double>();
    return r;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataFormatError("report: cannot open '" + path + "' for writing");
    }
    out << text;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(12) << v;
    return s.str();
}

std::string sanitize(const std::string& id) {
    std::string out = id;
    for (char& c : out) {
        if (c == '/' || c == ' ') {
            c = '_';
        }
    }
    return out;
}

}  // namespace

void write_run_summary(const RunSummary& summary, const std::string& path) {
    json j{{"run_id", summary.run_id},
           {"seed", summary.seed},
           {"final_accuracy", summary.final_accuracy},
           {"record", record_to_json(summary.record)},
           {"correctness", correctness_to_json(summary.correctness)}};
    if (summary.has_stage1) {
        j["stage1_correctness"] = correctness_to_json(summary.stage1_correctness);
    }
    write_text(path, j.dump(2) + "\n");
}

RunSummary read_run_summary(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataFormatError("report: cannot open run summary '" + path + "'");
    }
    json j;
    try {
        in >> j;
        RunSummary s;
        s.run_id = j.at("run_id").get<std::string>();
        s.seed = j.at("seed").get<uint64_t>();
        s.final_accuracy = j.at("final_accuracy").get<double>();
        s.record = record_from_json(j.at("record"));
        s.correctness = correctness_from_json(j.at("correctness"));
        if (j.contains("stage1_correctness")) {
            s.has_stage1 = true;
            s.stage1_correctness = correctness_from_json(j.at("stage1_correctness"));
        }
        return s;
    } catch (const json::exception& e) {
        throw DataFormatError("report: malformed run summary '" + path + "': " + e.what());
    }
}

void write_curves_csv(const RunRecord& record, const std::string& path) {
    std::ostringstream out;
    out << "epoch,stage,lr,loss_total,loss_distill,loss_cls,loss_ref,test_accuracy\n";
    for (const EpochStat& e : record.epochs) {
        out << e.epoch << ',' << e.stage << ',' << fmt(e.lr) << ',' << fmt(e.loss_total) << ','
            << fmt(e.loss_distill) << ',' << fmt(e.loss_cls) << ',' << fmt(e.loss_ref) << ','
            << fmt(e.test_accuracy) << '\n';
    }
    write_text(path, out.str());
}

void emit_report(const ComparisonReport& report, const std::vector<RunSummary>& runs,
                 const std::string& dir) {
    std::filesystem::create_directories(dir);

    json venn = json::array();
    for (size_t i = 0; i < report.venn_vs_anchor.size(); ++i) {
        const VennCounts& v = report.venn_vs_anchor[i];
        venn.push_back(json{{"run", report.run_ids[i]},
                            {"forgotten", v.forgotten},
                            {"acquired", v.acquired},
                            {"retained", v.retained},
                            {"forgotten_pct_of_anchor", v.forgotten_pct_of_a}});
    }
    json j{{"run_ids", report.run_ids},
           {"accuracies", report.accuracies},
           {"deltas_vs_baseline", report.deltas},
           {"baseline", report.run_ids[static_cast<size_t>(report.baseline_index)]},
           {"anchor", report.run_ids[static_cast<size_t>(report.anchor_index)]},
           {"iou_matrix", report.iou_matrix},
           {"venn_vs_anchor", venn}};
    write_text(dir + "/report.json", j.dump(2) + "\n");

    std::ostringstream iou_csv;
    iou_csv << "run";
    for (const std::string& id : report.run_ids) {
        iou_csv << ',' << id;
    }
    iou_csv << '\n';
    for (size_t i = 0; i < report.run_ids.size(); ++i) {
        iou_csv << report.run_ids[i];
        for (double v : report.iou_matrix[i]) {
            iou_csv << ',' << fmt(v);
        }
        iou_csv << '\n';
    }
    write_text(dir + "/iou_matrix.csv", iou_csv.str());

    std::ostringstream venn_csv;
    venn_csv << "run,forgotten,acquired,retained,forgotten_pct_of_anchor\n";
    for (size_t i = 0; i < report.venn_vs_anchor.size(); ++i) {
        const VennCounts& v = report.venn_vs_anchor[i];
        venn_csv << report.run_ids[i] << ',' << v.forgotten << ',' << v.acquired << ','
                 << v.retained << ',' << std::fixed << std::setprecision(1)
                 << v.forgotten_pct_of_a << '\n';
        venn_csv.unsetf(std::ios::fixed);
    }
    write_text(dir + "/venn.csv", venn_csv.str());

    for (const RunSummary& run : runs) {
        write_curves_csv(run.record, dir + "/curves_" + sanitize(run.run_id) + ".csv");
    }
}

void write_grid_csv(const std::vector<double>& lambda_values,
                    const std::vector<int>& transition_values,
                    const std::vector<std::vector<double>>& accuracy, const std::string& path) {
    if (accuracy.size() != lambda_values.size()) {
        throw ContractError("grid: row count must equal the number of lambda_r values");
    }
    std::ostringstream out;
    out << "lambda_r";
    for (int t : transition_values) {
        out << ",transition_" << t;
    }
    out << '\n';
    for (size_t i = 0; i < lambda_values.size(); ++i) {
        if (accuracy[i].size() != transition_values.size()) {
            throw ContractError("grid: column count must equal the number of transitions");
        }
        out << fmt(lambda_values[i]);
        for (double v : accuracy[i]) {
            out << ',' << fmt(v);
        }
        out << '\n';
    }
    write_text(path, out.str());
}

}  // namespace smskd
