#include "smskd/config.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>

#include "smskd/errors.hpp"
#include "smskd/rng.hpp"

namespace smskd {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& source, const std::string& path,
                       const std::string& what) {
    throw ConfigError(source + ": " + path + ": " + what);
}

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& source, const std::string& path) {
    for (const auto& [key, value] : obj.items()) {
        if (allowed.find(key) == allowed.end()) {
            fail(source, path + "." + key, "unknown key");
        }
    }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& source,
         const std::string& path) {
    if (!obj.contains(key)) {
        return fallback;
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(source, path + "." + key, e.what());
    }
}

DataConfig parse_data(const json& j, const std::string& source, const std::string& path) {
    check_keys(j,
               {"kind", "k", "per_class", "dim", "spread", "noise", "channels", "side", "path",
                "variant", "take", "seed", "test_fraction", "normalize", "augment_flip",
                "pad_crop"},
               source, path);
    DataConfig d;
    d.kind = get_or<std::string>(j, "kind", d.kind, source, path);
    if (d.kind != "blobs" && d.kind != "spirals" && d.kind != "patterned_images" &&
        d.kind != "cifar") {
        fail(source, path + ".kind", "expected blobs, spirals, patterned_images or cifar");
    }
    d.k = get_or<int64_t>(j, "k", d.k, source, path);
    d.per_class = get_or<int64_t>(j, "per_class", d.per_class, source, path);
    d.dim = get_or<int64_t>(j, "dim", d.dim, source, path);
    d.spread = get_or<double>(j, "spread", d.spread, source, path);
    d.noise = get_or<double>(j, "noise", d.noise, source, path);
    d.channels = get_or<int64_t>(j, "channels", d.channels, source, path);
    d.side = get_or<int64_t>(j, "side", d.side, source, path);
    d.path = get_or<std::string>(j, "path", d.path, source, path);
    d.variant = get_or<std::string>(j, "variant", d.variant, source, path);
    if (d.variant != "cifar10" && d.variant != "cifar100") {
        fail(source, path + ".variant", "expected cifar10 or cifar100");
    }
    d.take = get_or<int64_t>(j, "take", d.take, source, path);
    d.seed = get_or<uint64_t>(j, "seed", d.seed, source, path);
    d.test_fraction = get_or<double>(j, "test_fraction", d.test_fraction, source, path);
    if (!(d.test_fraction >= 0.0) || d.test_fraction >= 1.0) {
        fail(source, path + ".test_fraction", "must be in [0, 1)");
    }
    d.normalize = get_or<std::string>(j, "normalize", d.normalize, source, path);
    if (d.normalize != "standardize" && d.normalize != "channel_mean" && d.normalize != "none") {
        fail(source, path + ".normalize", "expected standardize, channel_mean or none");
    }
    d.augment_flip = get_or<bool>(j, "augment_flip", d.augment_flip, source, path);
    d.pad_crop = get_or<int64_t>(j, "pad_crop", d.pad_crop, source, path);
    if (d.kind == "cifar" && d.path.empty()) {
        fail(source, path + ".path", "cifar data needs a file path");
    }
    return d;
}

ArchConfig parse_arch(const json& j, const std::string& source, const std::string& path) {
    check_keys(j, {"type", "hidden", "conv_channels"}, source, path);
    ArchConfig a;
    a.type = get_or<std::string>(j, "type", a.type, source, path);
    if (a.type != "mlp" && a.type != "tinyconv") {
        fail(source, path + ".type", "expected mlp or tinyconv");
    }
    a.hidden = get_or<std::vector<int64_t>>(j, "hidden", a.hidden, source, path);
    a.conv_channels =
        get_or<std::vector<int64_t>>(j, "conv_channels", a.conv_channels, source, path);
    if (a.type == "tinyconv" && a.conv_channels.empty()) {
        fail(source, path + ".conv_channels", "tinyconv needs at least one conv layer");
    }
    return a;
}

StageConfigEntry parse_stage(const json& j, size_t index, const std::string& source,
                             const std::string& path) {
    check_keys(j,
               {"method", "epochs", "lambda_r", "reference_mode", "lambda_c", "tau",
                "distill_scale", "alpha", "beta", "w_d", "w_a", "at_power", "tau_ref",
                "all_tap_pairs", "tcp_from_teacher"},
               source, path);
    StageConfigEntry s;
    s.method = get_or<std::string>(j, "method", s.method, source, path);
    parse_method(s.method);  // throws ParameterError on junk
    s.epochs = get_or<int>(j, "epochs", s.epochs, source, path);
    if (s.epochs < 1) {
        fail(source, path + ".epochs", "must be >= 1");
    }
    s.lambda_r = get_or<double>(j, "lambda_r", s.lambda_r, source, path);
    if (s.lambda_r < 0) {
        fail(source, path + ".lambda_r", "must be nonnegative");
    }
    s.reference_mode = get_or<std::string>(j, "reference_mode", s.reference_mode, source, path);
    if (!s.reference_mode.empty() && s.reference_mode != "none" &&
        s.reference_mode != "plain" && s.reference_mode != "adaptive") {
        fail(source, path + ".reference_mode", "expected none, plain or adaptive");
    }
    if (index == 0 && !s.reference_mode.empty() && s.reference_mode != "none") {
        fail(source, path + ".reference_mode", "stage 1 cannot use a reference model");
    }
    s.lambda_c = get_or<double>(j, "lambda_c", s.lambda_c, source, path);
    s.tau = get_or<double>(j, "tau", s.tau, source, path);
    s.distill_scale = get_or<double>(j, "distill_scale", s.distill_scale, source, path);
    s.alpha = get_or<double>(j, "alpha", s.alpha, source, path);
    s.beta = get_or<double>(j, "beta", s.beta, source, path);
    s.w_d = get_or<double>(j, "w_d", s.w_d, source, path);
    s.w_a = get_or<double>(j, "w_a", s.w_a, source, path);
    s.at_power = get_or<double>(j, "at_power", s.at_power, source, path);
    s.tau_ref = get_or<double>(j, "tau_ref", s.tau_ref, source, path);
    s.all_tap_pairs = get_or<bool>(j, "all_tap_pairs", s.all_tap_pairs, source, path);
    s.tcp_from_teacher = get_or<bool>(j, "tcp_from_teacher", s.tcp_from_teacher, source, path);
    return s;
}

OptimizerConfig parse_optimizer(const json& j, const std::string& source,
                                const std::string& path) {
    check_keys(j,
               {"batch_size", "lr", "momentum", "weight_decay", "decay_epochs", "decay_factor",
                "restart_lr", "restart_every", "reset_momentum_per_stage"},
               source, path);
    OptimizerConfig o;
    o.batch_size = get_or<int64_t>(j, "batch_size", o.batch_size, source, path);
    o.lr = get_or<double>(j, "lr", o.lr, source, path);
    o.momentum = get_or<double>(j, "momentum", o.momentum, source, path);
    o.weight_decay = get_or<double>(j, "weight_decay", o.weight_decay, source, path);
    o.decay_epochs = get_or<std::vector<int>>(j, "decay_epochs", o.decay_epochs, source, path);
    o.decay_factor = get_or<double>(j, "decay_factor", o.decay_factor, source, path);
    o.restart_lr = get_or<double>(j, "restart_lr", o.restart_lr, source, path);
    o.restart_every = get_or<int>(j, "restart_every", o.restart_every, source, path);
    o.reset_momentum_per_stage =
        get_or<bool>(j, "reset_momentum_per_stage", o.reset_momentum_per_stage, source, path);
    return o;
}

json arch_to_json(const ArchConfig& a) {
    return json{{"type", a.type}, {"hidden", a.hidden}, {"conv_channels", a.conv_channels}};
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(source + ": " + e.what());
    }
    if (!j.is_object()) {
        throw ConfigError(source + ": top level must be an object");
    }
    check_keys(j, {"data", "teacher", "student", "schedule", "optimizer", "seeds", "output_dir"},
               source, "config");

    ExperimentConfig cfg;
    if (j.contains("data")) {
        cfg.data = parse_data(j.at("data"), source, "data");
    }
    if (j.contains("teacher")) {
        const json& t = j.at("teacher");
        check_keys(t, {"arch", "pretrain", "checkpoint"}, source, "teacher");
        if (t.contains("arch")) {
            cfg.teacher_arch = parse_arch(t.at("arch"), source, "teacher.arch");
        }
        if (t.contains("pretrain")) {
            const json& p = t.at("pretrain");
            check_keys(p, {"epochs", "lr", "decay_epochs"}, source, "teacher.pretrain");
            cfg.pretrain.epochs =
                get_or<int>(p, "epochs", cfg.pretrain.epochs, source, "teacher.pretrain");
            if (cfg.pretrain.epochs < 0) {
                fail(source, "teacher.pretrain.epochs", "must be >= 0");
            }
            cfg.pretrain.lr = get_or<double>(p, "lr", cfg.pretrain.lr, source, "teacher.pretrain");
            cfg.pretrain.decay_epochs = get_or<std::vector<int>>(
                p, "decay_epochs", cfg.pretrain.decay_epochs, source, "teacher.pretrain");
        }
        cfg.teacher_checkpoint =
            get_or<std::string>(t, "checkpoint", cfg.teacher_checkpoint, source, "teacher");
    }
    if (j.contains("student")) {
        const json& s = j.at("student");
        check_keys(s, {"arch"}, source, "student");
        if (s.contains("arch")) {
            cfg.student_arch = parse_arch(s.at("arch"), source, "student.arch");
        }
    }
    if (j.contains("schedule")) {
        const json& sched = j.at("schedule");
        if (!sched.is_array() || sched.empty()) {
            fail(source, "schedule", "must be a nonempty array of stages");
        }
        for (size_t i = 0; i < sched.size(); ++i) {
            cfg.schedule.push_back(parse_stage(sched.at(i), i, source,
                                               "schedule[" + std::to_string(i) + "]"));
        }
    } else {
        fail(source, "schedule", "required");
    }
    if (j.contains("optimizer")) {
        cfg.optimizer = parse_optimizer(j.at("optimizer"), source, "optimizer");
    }
    if (j.contains("seeds")) {
        cfg.seeds = j.at("seeds").get<std::vector<uint64_t>>();
        if (cfg.seeds.empty()) {
            fail(source, "seeds", "must list at least one seed");
        }
    }
    cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir, source, "config");

    // Cross-field validation happens on the realized TrainConfig too, but
    // config errors should surface with config paths.
    try {
        to_train_config(cfg, cfg.seeds.front()).validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file '" + path + "'");
    }
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), path);
}

std::string serialize_config(const ExperimentConfig& c) {
    json stages = json::array();
    for (const StageConfigEntry& s : c.schedule) {
        json e{{"method", s.method},
               {"epochs", s.epochs},
               {"lambda_r", s.lambda_r},
               {"all_tap_pairs", s.all_tap_pairs},
               {"tcp_from_teacher", s.tcp_from_teacher}};
        if (!s.reference_mode.empty()) {
            e["reference_mode"] = s.reference_mode;
        }
        auto put_opt = [&e](const char* key, double v) {
            if (v >= 0) {
                e[key] = v;
            }
        };
        put_opt("lambda_c", s.lambda_c);
        put_opt("tau", s.tau);
        put_opt("distill_scale", s.distill_scale);
        put_opt("alpha", s.alpha);
        put_opt("beta", s.beta);
        put_opt("w_d", s.w_d);
        put_opt("w_a", s.w_a);
        put_opt("at_power", s.at_power);
        put_opt("tau_ref", s.tau_ref);
        stages.push_back(e);
    }
    json j{{"data",
            {{"kind", c.data.kind},
             {"k", c.data.k},
             {"per_class", c.data.per_class},
             {"dim", c.data.dim},
             {"spread", c.data.spread},
             {"noise", c.data.noise},
             {"channels", c.data.channels},
             {"side", c.data.side},
             {"path", c.data.path},
             {"variant", c.data.variant},
             {"take", c.data.take},
             {"seed", c.data.seed},
             {"test_fraction", c.data.test_fraction},
             {"normalize", c.data.normalize},
             {"augment_flip", c.data.augment_flip},
             {"pad_crop", c.data.pad_crop}}},
           {"teacher",
            {{"arch", arch_to_json(c.teacher_arch)},
             {"pretrain",
              {{"epochs", c.pretrain.epochs},
               {"lr", c.pretrain.lr},
               {"decay_epochs", c.pretrain.decay_epochs}}},
             {"checkpoint", c.teacher_checkpoint}}},
           {"student", {{"arch", arch_to_json(c.student_arch)}}},
           {"schedule", stages},
           {"optimizer",
            {{"batch_size", c.optimizer.batch_size},
             {"lr", c.optimizer.lr},
             {"momentum", c.optimizer.momentum},
             {"weight_decay", c.optimizer.weight_decay},
             {"decay_epochs", c.optimizer.decay_epochs},
             {"decay_factor", c.optimizer.decay_factor},
             {"restart_lr", c.optimizer.restart_lr},
             {"restart_every", c.optimizer.restart_every},
             {"reset_momentum_per_stage", c.optimizer.reset_momentum_per_stage}}},
           {"seeds", c.seeds},
           {"output_dir", c.output_dir}};
    return j.dump(2) + "\n";
}

TrainConfig to_train_config(const ExperimentConfig& config, uint64_t seed) {
    TrainConfig t;
    t.seed = seed;
    t.batch_size = config.optimizer.batch_size;
    t.lr = config.optimizer.lr;
    t.momentum = config.optimizer.momentum;
    t.weight_decay = config.optimizer.weight_decay;
    t.decay_epochs = config.optimizer.decay_epochs;
    t.decay_factor = config.optimizer.decay_factor;
    t.restart_lr = config.optimizer.restart_lr;
    t.restart_every = config.optimizer.restart_every;
    t.reset_momentum_per_stage = config.optimizer.reset_momentum_per_stage;
    t.augment_flip = config.data.augment_flip;
    t.pad_crop = config.data.pad_crop;
    for (size_t i = 0; i < config.schedule.size(); ++i) {
        const StageConfigEntry& s = config.schedule[i];
        StagePlan plan;
        plan.method = MethodConfig::defaults(parse_method(s.method));
        auto opt = [](double v, double fallback) { return v >= 0 ? v : fallback; };
        plan.method.lambda_c = opt(s.lambda_c, plan.method.lambda_c);
        plan.method.tau = opt(s.tau, plan.method.tau);
        plan.method.distill_scale = opt(s.distill_scale, plan.method.distill_scale);
        plan.method.alpha = opt(s.alpha, plan.method.alpha);
        plan.method.beta = opt(s.beta, plan.method.beta);
        plan.method.w_d = opt(s.w_d, plan.method.w_d);
        plan.method.w_a = opt(s.w_a, plan.method.w_a);
        plan.method.at_power = opt(s.at_power, plan.method.at_power);
        plan.method.tau_ref = opt(s.tau_ref, plan.method.tau_ref);
        plan.method.all_tap_pairs = s.all_tap_pairs;
        plan.method.tcp_from_teacher = s.tcp_from_teacher;
        plan.epochs = s.epochs;
        plan.lambda_r = s.lambda_r;
        if (s.reference_mode.empty()) {
            plan.reference_mode = i == 0 ? RefMode::none : RefMode::adaptive;
        } else if (s.reference_mode == "none") {
            plan.reference_mode = RefMode::none;
        } else if (s.reference_mode == "plain") {
            plan.reference_mode = RefMode::plain;
        } else {
            plan.reference_mode = RefMode::adaptive;
        }
        t.stages.push_back(plan);
    }
    return t;
}

TrainConfig to_pretrain_config(const ExperimentConfig& config, uint64_t seed) {
    TrainConfig t;
    t.seed = DetRng::derive(seed, 33);
    t.batch_size = config.optimizer.batch_size;
    t.lr = config.pretrain.lr;
    t.momentum = config.optimizer.momentum;
    t.weight_decay = config.optimizer.weight_decay;
    t.decay_epochs = config.pretrain.decay_epochs;
    t.decay_factor = config.optimizer.decay_factor;
    t.augment_flip = config.data.augment_flip;
    t.pad_crop = config.data.pad_crop;
    StagePlan stage;
    stage.method = MethodConfig::defaults(Method::CE);
    stage.epochs = config.pretrain.epochs;
    t.stages = {stage};
    return t;
}

std::pair<Dataset, Dataset> load_datasets(const DataConfig& config) {
    Dataset full;
    if (config.kind == "blobs") {
        full = gen_blobs(config.k, config.per_class, config.dim, config.spread, config.seed);
    } else if (config.kind == "spirals") {
        full = gen_spirals(config.k, config.per_class, config.noise, config.seed);
    } else if (config.kind == "patterned_images") {
        full = gen_patterned_images(config.k, config.per_class, config.channels, config.side,
                                    config.noise, config.seed);
    } else if (config.kind == "cifar") {
        full = read_cifar_binary(config.path, config.variant == "cifar10"
                                                  ? CifarVariant::cifar10
                                                  : CifarVariant::cifar100);
        if (config.take > 0 && config.take < full.size()) {
            const int64_t feat = full.inputs.numel() / full.size();
            Shape shape = full.inputs.shape();
            shape[0] = config.take;
            Dataset subset;
            subset.num_classes = full.num_classes;
            subset.inputs = Tensor<float>::zeros(shape);
            std::copy_n(full.inputs.values().begin(), config.take * feat,
                        subset.inputs.values().begin());
            subset.labels.assign(full.labels.begin(), full.labels.begin() + config.take);
            full = std::move(subset);
        }
    } else {
        throw ConfigError("unknown data kind '" + config.kind + "'");
    }
    auto [train, test] = split_train_test(full, config.test_fraction,
                                          DetRng::derive(config.seed, 77));
    if (config.normalize == "standardize") {
        FeatureStats stats = standardize_fit(train);
        standardize_apply(train, stats);
        standardize_apply(test, stats);
    } else if (config.normalize == "channel_mean") {
        const std::vector<float> means = channel_means(train);
        subtract_channel_means(train, means);
        subtract_channel_means(test, means);
    }
    return {std::move(train), std::move(test)};
}

Model<float> build_model(const ArchConfig& arch, const Shape& input_shape, int64_t num_classes) {
    if (arch.type == "mlp") {
        if (input_shape.size() != 1) {
            throw ConfigError("mlp architecture needs flat inputs, dataset provides " +
                              shape_str(input_shape));
        }
        return build_mlp<float>(input_shape[0], arch.hidden, num_classes);
    }
    if (input_shape.size() != 3) {
        throw ConfigError("tinyconv architecture needs [C,H,W] inputs, dataset provides " +
                          shape_str(input_shape));
    }
    return build_tinyconv<float>(input_shape[0], input_shape[1], input_shape[2],
                                 arch.conv_channels, num_classes);
}

}  // namespace smskd
