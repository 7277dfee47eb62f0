#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsenn/arch.hpp"
#include "sparsenn/data.hpp"
#include "sparsenn/sim.hpp"
#include "sparsenn/train.hpp"

namespace sparsenn {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                                const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError("config: unknown key '" + where + "." + item.key() + "'");
        }
    }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

} // namespace detail

struct DatasetConfig {
    std::string kind = "synth"; // synth | idx | amat
    std::string train_images, train_labels, test_images, test_labels; // idx
    std::string train_path, test_path;                                // amat
    std::size_t synth_train = 2000;
    std::size_t synth_test = 500;
    std::size_t synth_dim = 64;
    int synth_classes = 4;
    double synth_sigma = 0.25;
    std::uint64_t synth_seed = 7;

    std::pair<Dataset, Dataset> load() const {
        if (kind == "synth") {
            return synth_split(synth_seed, synth_train, synth_test, synth_dim, synth_classes,
                               synth_sigma);
        }
        if (kind == "idx") {
            Dataset train = load_idx(train_images, train_labels);
            Dataset test = load_idx(test_images, test_labels);
            train.split = "train";
            test.split = "test";
            int classes = std::max(train.classes, test.classes);
            train.classes = test.classes = classes;
            return {std::move(train), std::move(test)};
        }
        if (kind == "amat") {
            Dataset train = load_amat(train_path);
            Dataset test = load_amat(test_path);
            train.split = "train";
            test.split = "test";
            int classes = std::max(train.classes, test.classes);
            train.classes = test.classes = classes;
            return {std::move(train), std::move(test)};
        }
        throw ConfigError("config: dataset.kind must be synth, idx or amat");
    }
};

struct SimRunConfig {
    std::string mode = "both"; // uv_on | uv_off | both
    std::size_t samples = 4;
    SimOptions options;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/out";
    DatasetConfig dataset;
    NetworkSpec network;
    HyperParams hyper;
    std::size_t calibration_samples = 64;
    ArchConfig arch;
    EnergyConfig energy;
    SimRunConfig sim;
    json raw; // canonical parsed config, for the manifest hash

    void validate() const {
        network.validate();
        hyper.validate();
        arch.validate();
        energy.validate();
        if (sim.mode != "both" && sim.mode != "uv_on" && sim.mode != "uv_off") {
            throw ConfigError("config: sim.mode must be uv_on, uv_off or both");
        }
        if (sim.samples < 1) throw ConfigError("config: sim.samples must be >= 1");
        if (calibration_samples < 1) {
            throw ConfigError("config: train.calibration_samples must be >= 1");
        }
    }
};

inline PredictorMode parse_predictor_mode(const std::string& s) {
    if (s == "end_to_end") return PredictorMode::EndToEnd;
    if (s == "svd_static") return PredictorMode::SvdStatic;
    if (s == "none") return PredictorMode::None;
    throw ConfigError("config: predictor_mode must be end_to_end, svd_static or none");
}

inline std::string predictor_mode_name(PredictorMode m) {
    switch (m) {
    case PredictorMode::EndToEnd: return "end_to_end";
    case PredictorMode::SvdStatic: return "svd_static";
    default: return "none";
    }
}

inline ExperimentConfig parse_config(const json& j) {
    detail::reject_unknown_keys(
        j, {"seed", "out", "dataset", "network", "train", "arch", "energy", "sim"}, "<root>");

    ExperimentConfig cfg;
    cfg.raw = j;
    cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 1);
    cfg.out_dir = detail::get_or<std::string>(j, "out", "runs/out");

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        detail::reject_unknown_keys(d,
                                    {"kind", "train_images", "train_labels", "test_images",
                                     "test_labels", "train_path", "test_path", "synth"},
                                    "dataset");
        cfg.dataset.kind = detail::get_or<std::string>(d, "kind", "synth");
        cfg.dataset.train_images = detail::get_or<std::string>(d, "train_images", "");
        cfg.dataset.train_labels = detail::get_or<std::string>(d, "train_labels", "");
        cfg.dataset.test_images = detail::get_or<std::string>(d, "test_images", "");
        cfg.dataset.test_labels = detail::get_or<std::string>(d, "test_labels", "");
        cfg.dataset.train_path = detail::get_or<std::string>(d, "train_path", "");
        cfg.dataset.test_path = detail::get_or<std::string>(d, "test_path", "");
        if (d.contains("synth")) {
            const json& s = d.at("synth");
            detail::reject_unknown_keys(
                s, {"train_samples", "test_samples", "dim", "classes", "sigma", "seed"},
                "dataset.synth");
            cfg.dataset.synth_train = detail::get_or<std::size_t>(s, "train_samples", 2000);
            cfg.dataset.synth_test = detail::get_or<std::size_t>(s, "test_samples", 500);
            cfg.dataset.synth_dim = detail::get_or<std::size_t>(s, "dim", 64);
            cfg.dataset.synth_classes = detail::get_or<int>(s, "classes", 4);
            cfg.dataset.synth_sigma = detail::get_or<double>(s, "sigma", 0.25);
            cfg.dataset.synth_seed = detail::get_or<std::uint64_t>(s, "seed", 7);
        }
    }

    if (!j.contains("network")) throw ConfigError("config: missing 'network' section");
    {
        const json& n = j.at("network");
        detail::reject_unknown_keys(n, {"layer_sizes", "rank", "predictor_layers"}, "network");
        if (!n.contains("layer_sizes")) throw ConfigError("config: missing network.layer_sizes");
        cfg.network.layer_sizes = n.at("layer_sizes").get<std::vector<std::size_t>>();
        cfg.network.rank = detail::get_or<std::size_t>(n, "rank", 0);
        if (n.contains("predictor_layers")) {
            cfg.network.predictor_layers = n.at("predictor_layers").get<std::vector<std::size_t>>();
        } else if (cfg.network.rank > 0) {
            for (std::size_t l = 0; l + 2 < cfg.network.layer_sizes.size(); ++l) {
                cfg.network.predictor_layers.push_back(l);
            }
        }
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        detail::reject_unknown_keys(t,
                                    {"learning_rate", "l1_lambda", "epochs", "batch_size",
                                     "predictor_mode", "l1_mode", "delta_full_path",
                                     "calibration_samples"},
                                    "train");
        cfg.hyper.learning_rate = detail::get_or<double>(t, "learning_rate", 0.1);
        cfg.hyper.l1_lambda = detail::get_or<double>(t, "l1_lambda", 0.0);
        cfg.hyper.epochs = detail::get_or<std::size_t>(t, "epochs", 10);
        cfg.hyper.batch_size = detail::get_or<std::size_t>(t, "batch_size", 100);
        cfg.hyper.predictor_mode =
            parse_predictor_mode(detail::get_or<std::string>(t, "predictor_mode", "end_to_end"));
        std::string l1_mode = detail::get_or<std::string>(t, "l1_mode", "all");
        if (l1_mode == "all") {
            cfg.hyper.l1_mode = L1Mode::PenalizeAll;
        } else if (l1_mode == "active_only") {
            cfg.hyper.l1_mode = L1Mode::PenalizeActive;
        } else {
            throw ConfigError("config: train.l1_mode must be all or active_only");
        }
        cfg.hyper.delta_full_path = detail::get_or<bool>(t, "delta_full_path", false);
        cfg.calibration_samples = detail::get_or<std::size_t>(t, "calibration_samples", 64);
    }
    cfg.hyper.seed = cfg.seed;

    if (j.contains("arch")) {
        const json& a = j.at("arch");
        detail::reject_unknown_keys(a,
                                    {"num_pes", "router_buffer_depth", "credits_per_link",
                                     "act_queue_depth", "activation_regs_per_pe",
                                     "pe_pipeline_depth", "router_pipeline_depth",
                                     "clock_period_ns", "w_mem_kb", "u_mem_kb", "v_mem_kb"},
                                    "arch");
        cfg.arch.num_pes = detail::get_or<std::size_t>(a, "num_pes", 64);
        cfg.arch.router_buffer_depth = detail::get_or<std::size_t>(a, "router_buffer_depth", 4);
        cfg.arch.credits_per_link =
            detail::get_or<std::size_t>(a, "credits_per_link", cfg.arch.router_buffer_depth);
        cfg.arch.act_queue_depth = detail::get_or<std::size_t>(a, "act_queue_depth", 64);
        cfg.arch.activation_regs_per_pe =
            detail::get_or<std::size_t>(a, "activation_regs_per_pe", 64);
        cfg.arch.pe_pipeline_depth = detail::get_or<std::size_t>(a, "pe_pipeline_depth", 5);
        cfg.arch.router_pipeline_depth = detail::get_or<std::size_t>(a, "router_pipeline_depth", 4);
        cfg.arch.clock_period_ns = detail::get_or<double>(a, "clock_period_ns", 2.0);
        cfg.arch.w_mem_bytes = detail::get_or<std::size_t>(a, "w_mem_kb", 128) * 1024;
        cfg.arch.u_mem_bytes = detail::get_or<std::size_t>(a, "u_mem_kb", 8) * 1024;
        cfg.arch.v_mem_bytes = detail::get_or<std::size_t>(a, "v_mem_kb", 8) * 1024;
    }

    if (j.contains("energy")) {
        const json& e = j.at("energy");
        detail::reject_unknown_keys(e,
                                    {"w_mem_read", "u_mem_read", "v_mem_read", "mac", "regfile_op",
                                     "router_hop", "queue_op", "clock_period_ns"},
                                    "energy");
        cfg.energy.w_mem_read = detail::get_or<double>(e, "w_mem_read", cfg.energy.w_mem_read);
        cfg.energy.u_mem_read = detail::get_or<double>(e, "u_mem_read", cfg.energy.u_mem_read);
        cfg.energy.v_mem_read = detail::get_or<double>(e, "v_mem_read", cfg.energy.v_mem_read);
        cfg.energy.mac = detail::get_or<double>(e, "mac", cfg.energy.mac);
        cfg.energy.regfile_op = detail::get_or<double>(e, "regfile_op", cfg.energy.regfile_op);
        cfg.energy.router_hop = detail::get_or<double>(e, "router_hop", cfg.energy.router_hop);
        cfg.energy.queue_op = detail::get_or<double>(e, "queue_op", cfg.energy.queue_op);
        cfg.energy.clock_period_ns =
            detail::get_or<double>(e, "clock_period_ns", cfg.arch.clock_period_ns);
    } else {
        cfg.energy.clock_period_ns = cfg.arch.clock_period_ns;
    }

    if (j.contains("sim")) {
        const json& s = j.at("sim");
        detail::reject_unknown_keys(s,
                                    {"mode", "samples", "tie_break", "injection_order",
                                     "v_schedule", "cycle_cap"},
                                    "sim");
        cfg.sim.mode = detail::get_or<std::string>(s, "mode", "both");
        cfg.sim.samples = detail::get_or<std::size_t>(s, "samples", 4);
        std::string tie = detail::get_or<std::string>(s, "tie_break", "low_port");
        if (tie == "low_port") {
            cfg.sim.options.tie_break = TieBreak::LowPort;
        } else if (tie == "high_port") {
            cfg.sim.options.tie_break = TieBreak::HighPort;
        } else {
            throw ConfigError("config: sim.tie_break must be low_port or high_port");
        }
        std::string order = detail::get_or<std::string>(s, "injection_order", "ascending");
        if (order == "ascending") {
            cfg.sim.options.inject_order = InjectOrder::Ascending;
        } else if (order == "descending") {
            cfg.sim.options.inject_order = InjectOrder::Descending;
        } else {
            throw ConfigError("config: sim.injection_order must be ascending or descending");
        }
        std::string sched = detail::get_or<std::string>(s, "v_schedule", "column");
        if (sched == "column") {
            cfg.sim.options.v_schedule = VSchedule::Column;
        } else if (sched == "row") {
            cfg.sim.options.v_schedule = VSchedule::Row;
        } else {
            throw ConfigError("config: sim.v_schedule must be column or row");
        }
        cfg.sim.options.cycle_cap =
            detail::get_or<std::uint64_t>(s, "cycle_cap", cfg.sim.options.cycle_cap);
    }

    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config '" + path + "': cannot open");
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return parse_config(j);
}

} // namespace sparsenn
