// Command-line front end: teacher pretraining, SMSKD distillation runs,
// single-method and DLA baselines, the lambda_r x transition grid, the
// multi-stage harness, report generation and the loss-gradient suite.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "smskd/checkpoint.hpp"
#include "smskd/config.hpp"
#include "smskd/errors.hpp"
#include "smskd/gradcheck_suite.hpp"
#include "smskd/hashing.hpp"
#include "smskd/metrics.hpp"
#include "smskd/report.hpp"
#include "smskd/rng.hpp"
#include "smskd/trainer.hpp"

namespace fs = std::filesystem;
using namespace smskd;

namespace {

std::string output_dir(const ExperimentConfig& cfg) {
    if (const char* env = std::getenv("SMSKD_OUTPUT_DIR"); env != nullptr && env[0] != '\0') {
        return env;
    }
    return cfg.output_dir;
}

std::string seed_dir(const std::string& base, const std::string& label, uint64_t seed) {
    fs::path dir = fs::path(base) / label / ("seed" + std::to_string(seed));
    fs::create_directories(dir);
    return dir.string();
}

struct Workbench {
    ExperimentConfig cfg;
    Dataset train;
    Dataset test;

    explicit Workbench(const std::string& config_path) : cfg(load_config_file(config_path)) {
        auto [tr, te] = load_datasets(cfg.data);
        train = std::move(tr);
        test = std::move(te);
    }

    Shape input_shape() const {
        return Shape(train.inputs.shape().begin() + 1, train.inputs.shape().end());
    }

    // Loads the configured teacher checkpoint or pretrains one; either way
    // the returned model is frozen.
    Model<float> make_teacher(uint64_t seed, const std::string& run_dir) const {
        Model<float> teacher = build_model(cfg.teacher_arch, input_shape(), train.num_classes);
        if (!cfg.teacher_checkpoint.empty()) {
            load_model_checkpoint(teacher, nullptr, cfg.teacher_checkpoint);
            teacher.set_trainable(false);
        } else {
            teacher.init_parameters(DetRng::derive(seed, 11));
            pretrain_teacher(teacher, train, test, to_pretrain_config(cfg, seed));
        }
        if (!run_dir.empty()) {
            save_model_checkpoint(teacher, nullptr, run_dir + "/teacher.ckpt");
        }
        return teacher;
    }

    Model<float> make_student(uint64_t seed) const {
        Model<float> student = build_model(cfg.student_arch, input_shape(), train.num_classes);
        student.init_parameters(DetRng::derive(seed, 22));
        return student;
    }
};

// Persists one finished run: checkpoints, curves, summary, config copy.
RunSummary persist_run(const Workbench& bench, const std::string& run_dir,
                       const std::string& run_id, uint64_t seed, Model<float>& student,
                       const TrainResult& result) {
    RunSummary summary;
    summary.run_id = run_id;
    summary.seed = seed;
    summary.record = result.record;
    EvalResult eval = evaluate(student, bench.test, run_id);
    summary.final_accuracy = eval.accuracy;
    summary.correctness = eval.correct;
    if (result.stage_snapshots.size() > 1) {
        summary.has_stage1 = true;
        summary.stage1_correctness =
            evaluate(result.stage_snapshots.front(), bench.test, run_id + "/stage1").correct;
        save_model_checkpoint(result.stage_snapshots.front(), nullptr,
                              run_dir + "/student_stage1.ckpt");
    }
    save_model_checkpoint(student, nullptr, run_dir + "/student_final.ckpt");
    write_curves_csv(result.record, run_dir + "/curves.csv");
    write_run_summary(summary, run_dir + "/summary.json");
    std::ofstream cfg_out(run_dir + "/config.json", std::ios::binary | std::ios::trunc);
    cfg_out << serialize_config(bench.cfg);
    return summary;
}

void print_accuracy(const std::string& label, uint64_t seed, double acc) {
    std::printf("%-28s seed=%llu  accuracy=%.4f\n", label.c_str(),
                static_cast<unsigned long long>(seed), acc);
}

int cmd_train_teacher(const std::string& config_path) {
    Workbench bench(config_path);
    const std::string base = output_dir(bench.cfg);
    for (uint64_t seed : bench.cfg.seeds) {
        const std::string dir = seed_dir(base, "train-teacher", seed);
        Model<float> teacher =
            build_model(bench.cfg.teacher_arch, bench.input_shape(), bench.train.num_classes);
        teacher.init_parameters(DetRng::derive(seed, 11));
        RunRecord record =
            pretrain_teacher(teacher, bench.train, bench.test, to_pretrain_config(bench.cfg, seed));
        save_model_checkpoint(teacher, nullptr, dir + "/teacher.ckpt");
        write_curves_csv(record, dir + "/curves.csv");
        RunSummary summary;
        summary.run_id = "teacher";
        summary.seed = seed;
        summary.record = record;
        EvalResult eval = evaluate(teacher, bench.test, "teacher");
        summary.final_accuracy = eval.accuracy;
        summary.correctness = eval.correct;
        write_run_summary(summary, dir + "/summary.json");
        print_accuracy("train-teacher", seed, eval.accuracy);
    }
    return 0;
}

int cmd_distill(const std::string& config_path) {
    Workbench bench(config_path);
    const std::string base = output_dir(bench.cfg);
    double mean = 0;
    for (uint64_t seed : bench.cfg.seeds) {
        const std::string dir = seed_dir(base, "distill", seed);
        Model<float> teacher = bench.make_teacher(seed, dir);
        Model<float> student = bench.make_student(seed);
        TrainResult result = run_smskd(teacher, student, bench.train, bench.test,
                                       to_train_config(bench.cfg, seed));
        RunSummary s = persist_run(bench, dir, "distill", seed, student, result);
        print_accuracy("distill", seed, s.final_accuracy);
        mean += s.final_accuracy;
    }
    std::printf("distill: mean accuracy over %zu seed(s) = %.4f\n", bench.cfg.seeds.size(),
                mean / static_cast<double>(bench.cfg.seeds.size()));
    return 0;
}

// Method overrides for a baseline come from the first schedule stage using
// the same method, so baselines and SMSKD stages share hyperparameters.
MethodConfig baseline_method(const ExperimentConfig& cfg, const std::string& name,
                             uint64_t seed) {
    const Method m = parse_method(name);
    for (size_t i = 0; i < cfg.schedule.size(); ++i) {
        if (parse_method(cfg.schedule[i].method) == m) {
            return to_train_config(cfg, seed).stages[i].method;
        }
    }
    return MethodConfig::defaults(m);
}

int cmd_baseline(const std::string& config_path, const std::string& method_name) {
    Workbench bench(config_path);
    const std::string base = output_dir(bench.cfg);
    const std::string label = "baseline-" + method_name;
    for (uint64_t seed : bench.cfg.seeds) {
        const std::string dir = seed_dir(base, label, seed);
        TrainConfig tc = to_train_config(bench.cfg, seed);
        const int total = tc.total_epochs();
        Model<float> student = bench.make_student(seed);
        if (parse_method(method_name) == Method::CE) {
            TrainConfig ce = tc;
            StagePlan plan;
            plan.method = MethodConfig::defaults(Method::CE);
            plan.epochs = total;
            ce.stages = {plan};
            Model<float> dummy_teacher;  // CE trains without a teacher
            RunRecord record = pretrain_teacher(student, bench.train, bench.test, ce);
            TrainResult result;
            result.record = record;
            RunSummary s = persist_run(bench, dir, label, seed, student, result);
            print_accuracy(label, seed, s.final_accuracy);
            continue;
        }
        Model<float> teacher = bench.make_teacher(seed, dir);
        StagePlan plan;
        plan.method = baseline_method(bench.cfg, method_name, seed);
        plan.epochs = total;
        tc.stages = {plan};
        TrainResult result = run_smskd(teacher, student, bench.train, bench.test, tc);
        RunSummary s = persist_run(bench, dir, label, seed, student, result);
        print_accuracy(label, seed, s.final_accuracy);
    }
    return 0;
}

int cmd_dla(const std::string& config_path, const std::string& methods) {
    const auto comma = methods.find(',');
    if (comma == std::string::npos) {
        throw ConfigError("dla: --methods expects two comma-separated names, e.g. AT,KD");
    }
    const std::string name_a = methods.substr(0, comma);
    const std::string name_b = methods.substr(comma + 1);
    Workbench bench(config_path);
    const std::string base = output_dir(bench.cfg);
    const std::string label = "dla-" + name_a + "-" + name_b;
    for (uint64_t seed : bench.cfg.seeds) {
        const std::string dir = seed_dir(base, label, seed);
        Model<float> teacher = bench.make_teacher(seed, dir);
        Model<float> student = bench.make_student(seed);
        TrainResult result =
            run_dla(teacher, student, bench.train, bench.test,
                    baseline_method(bench.cfg, name_a, seed),
                    baseline_method(bench.cfg, name_b, seed), to_train_config(bench.cfg, seed));
        RunSummary s = persist_run(bench, dir, label, seed, student, result);
        print_accuracy(label, seed, s.final_accuracy);
    }
    return 0;
}

int cmd_grid(const std::string& config_path, const std::vector<double>& lambdas,
             const std::vector<int>& transitions) {
    Workbench bench(config_path);
    if (bench.cfg.schedule.size() < 2) {
        throw ConfigError("grid: needs a schedule with at least two stages");
    }
    const std::string base = output_dir(bench.cfg);
    fs::create_directories(fs::path(base) / "grid");

    std::vector<std::vector<double>> acc(lambdas.size(),
                                         std::vector<double>(transitions.size(), 0.0));
    for (uint64_t seed : bench.cfg.seeds) {
        Model<float> teacher = bench.make_teacher(seed, "");
        TrainConfig tc = to_train_config(bench.cfg, seed);
        const int total = tc.total_epochs();
        for (size_t li = 0; li < lambdas.size(); ++li) {
            for (size_t ti = 0; ti < transitions.size(); ++ti) {
                const int t = transitions[ti];
                if (t < 1 || t >= total) {
                    throw ConfigError("grid: transition epoch " + std::to_string(t) +
                                      " outside (0, " + std::to_string(total) + ")");
                }
                TrainConfig cell = tc;
                cell.stages[0].epochs = t;
                cell.stages[1].epochs = total - t;
                cell.stages[1].lambda_r = lambdas[li];
                cell.stages.resize(2);
                if (lambdas[li] == 0) {
                    cell.stages[1].reference_mode = RefMode::none;
                }
                Model<float> student = bench.make_student(seed);
                TrainResult result =
                    run_smskd(teacher, student, bench.train, bench.test, cell);
                acc[li][ti] += result.record.final_accuracy;
                std::printf("grid: seed=%llu lambda_r=%.2f transition=%d accuracy=%.4f\n",
                            static_cast<unsigned long long>(seed), lambdas[li], t,
                            result.record.final_accuracy);
            }
        }
    }
    for (auto& row : acc) {
        for (double& v : row) {
            v /= static_cast<double>(bench.cfg.seeds.size());
        }
    }
    write_grid_csv(lambdas, transitions, acc, (fs::path(base) / "grid" / "grid.csv").string());
    std::printf("grid: wrote %s\n", (fs::path(base) / "grid" / "grid.csv").string().c_str());
    return 0;
}

int cmd_stages(const std::string& config_path, int count) {
    if (count < 1) {
        throw ConfigError("stages: --count must be >= 1");
    }
    Workbench bench(config_path);
    const std::string base = output_dir(bench.cfg);
    const std::string label = "stages-" + std::to_string(count);
    for (uint64_t seed : bench.cfg.seeds) {
        const std::string dir = seed_dir(base, label, seed);
        Model<float> teacher = bench.make_teacher(seed, dir);
        Model<float> student = bench.make_student(seed);
        TrainConfig tc = to_train_config(bench.cfg, seed);
        // Stages beyond the configured schedule repeat the configured methods
        // cyclically with the last stage's duration and reference settings.
        while (static_cast<int>(tc.stages.size()) > count) {
            tc.stages.pop_back();
        }
        const size_t configured = tc.stages.size();
        while (static_cast<int>(tc.stages.size()) < count) {
            StagePlan plan = tc.stages.back();
            plan.method = tc.stages[tc.stages.size() % configured].method;
            plan.reference_mode = RefMode::adaptive;
            tc.stages.push_back(plan);
        }
        TrainResult result = run_smskd(teacher, student, bench.train, bench.test, tc);
        RunSummary s = persist_run(bench, dir, label, seed, student, result);

        std::ofstream csv(dir + "/stages.csv", std::ios::binary | std::ios::trunc);
        csv << "stage,end_epoch,lr_at_start,accuracy\n";
        for (size_t m = 0; m < result.stage_snapshots.size(); ++m) {
            const int start = result.record.stage_start_epochs[m];
            const int end = (m + 1 < result.record.stage_start_epochs.size()
                                 ? result.record.stage_start_epochs[m + 1]
                                 : static_cast<int>(result.record.epochs.size())) -
                            1;
            const double acc =
                evaluate(result.stage_snapshots[m], bench.test, "stage").accuracy;
            csv << (m + 1) << ',' << end << ',' << lr_at(start, tc) << ',' << acc << '\n';
            std::printf("stages: seed=%llu stage=%zu end_epoch=%d accuracy=%.4f\n",
                        static_cast<unsigned long long>(seed), m + 1, end, acc);
        }
        print_accuracy(label, seed, s.final_accuracy);
    }
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out) {
    std::vector<RunSummary> runs;
    for (const std::string& dir : run_dirs) {
        runs.push_back(read_run_summary((fs::path(dir) / "summary.json").string()));
        runs.back().run_id += "@" + fs::path(dir).filename().string();
    }
    std::vector<std::string> ids;
    std::vector<double> accs;
    std::vector<CorrectnessVector> bits;
    for (const RunSummary& r : runs) {
        ids.push_back(r.run_id);
        accs.push_back(r.final_accuracy);
        bits.push_back(r.correctness);
    }
    ComparisonReport report = compare_runs(ids, accs, bits, 0, 0);
    const char* env = std::getenv("SMSKD_OUTPUT_DIR");
    const std::string dir = env != nullptr && env[0] != '\0' ? env : out;
    emit_report(report, runs, dir);
    for (size_t i = 0; i < ids.size(); ++i) {
        std::printf("%-40s accuracy=%.4f delta=%+.4f\n", ids[i].c_str(), accs[i],
                    report.deltas[i]);
    }
    std::printf("report: wrote %s/report.json\n", dir.c_str());
    return 0;
}

int cmd_gradcheck() {
    const std::vector<GradCheckResult> results = run_loss_gradient_suite(10, 1e-5);
    bool ok = true;
    for (const GradCheckResult& r : results) {
        std::printf("%-14s max relative error = %.3e\n", r.name.c_str(), r.max_rel_err);
        ok = ok && r.max_rel_err <= 1e-4;
    }
    if (!ok) {
        std::fprintf(stderr, "gradcheck: FAILED (threshold 1e-4)\n");
        return 4;
    }
    std::printf("gradcheck: all losses within 1e-4\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential multi-stage knowledge distillation laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string method_name = "KD";
    std::string methods = "AT,KD";
    std::vector<double> lambdas{0.0, 0.1, 0.3, 0.5, 0.8};
    std::vector<int> transitions{15};
    std::vector<std::string> run_dirs;
    std::string report_out = "report";
    int stage_count = 3;

    CLI::App* train_teacher = app.add_subcommand("train-teacher", "Pretrain the teacher");
    train_teacher->add_option("--config", config_path, "Experiment config")->required();

    CLI::App* distill = app.add_subcommand("distill", "Run the staged distillation schedule");
    distill->add_option("--config", config_path, "Experiment config")->required();

    CLI::App* baseline = app.add_subcommand("baseline", "Single-method baseline run");
    baseline->add_option("--method", method_name, "CE, KD, DKD, FitNets, AT, VID, RKD, PKT, CC")
        ->required();
    baseline->add_option("--config", config_path, "Experiment config")->required();

    CLI::App* dla = app.add_subcommand("dla", "Direct loss aggregation baseline");
    dla->add_option("--methods", methods, "Two methods, e.g. AT,KD")->required();
    dla->add_option("--config", config_path, "Experiment config")->required();

    CLI::App* grid = app.add_subcommand("grid", "lambda_r x transition-epoch sweep");
    grid->add_option("--lambda-r", lambdas, "Reference weights")->delimiter(',');
    grid->add_option("--transition", transitions, "Stage-1 durations")->delimiter(',');
    grid->add_option("--config", config_path, "Experiment config")->required();

    CLI::App* stages = app.add_subcommand("stages", "Multi-stage scaling harness");
    stages->add_option("--count", stage_count, "Number of stages")->required();
    stages->add_option("--config", config_path, "Experiment config")->required();

    CLI::App* report = app.add_subcommand("report", "Compare finished runs");
    report->add_option("--runs", run_dirs, "Run directories")->required()->expected(-1);
    report->add_option("--out", report_out, "Report output directory");

    app.add_subcommand("gradcheck", "Run the loss-gradient verification suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_teacher->parsed()) {
            return cmd_train_teacher(config_path);
        }
        if (distill->parsed()) {
            return cmd_distill(config_path);
        }
        if (baseline->parsed()) {
            return cmd_baseline(config_path, method_name);
        }
        if (dla->parsed()) {
            return cmd_dla(config_path, methods);
        }
        if (grid->parsed()) {
            return cmd_grid(config_path, lambdas, transitions);
        }
        if (stages->parsed()) {
            return cmd_stages(config_path, stage_count);
        }
        if (report->parsed()) {
            return cmd_report(run_dirs, report_out);
        }
        return cmd_gradcheck();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataFormatError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const ParameterError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
