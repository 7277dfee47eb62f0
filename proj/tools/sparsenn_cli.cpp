// Experiment harness: train networks with the output-sparsity predictor,
// evaluate them, and measure cycle/energy effects on the PE-array model.

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sparsenn/sparsenn.hpp"

namespace fs = std::filesystem;
using namespace sparsenn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitCapacity = 4;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string mode;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

ExperimentConfig load_experiment(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args.config_path);
    if (args.seed_set) {
        cfg.seed = args.seed;
        cfg.hyper.seed = args.seed;
        cfg.raw["seed"] = args.seed;
    }
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

void apply_mode_override(ExperimentConfig& cfg, const std::string& mode) {
    if (mode.empty()) return;
    if (mode == "uv_on" || mode == "uv_off" || mode == "both") {
        cfg.sim.mode = mode;
    } else {
        cfg.hyper.predictor_mode = parse_predictor_mode(mode);
    }
}

QuantFormats calibrated_formats(const NetworkParams& params, const Dataset& data,
                                std::size_t samples) {
    std::vector<Vector> calib;
    for (std::size_t i = 0; i < std::min(samples, data.size()); ++i) calib.push_back(data.sample(i));
    return quantize_network(params, calib).formats();
}

int cmd_train(const CommonArgs& args) {
    ExperimentConfig cfg = load_experiment(args);
    apply_mode_override(cfg, args.mode);
    auto [train_set, test_set] = cfg.dataset.load();

    Rng rng(cfg.seed);
    NetworkParams params = NetworkParams::init(cfg.network, rng);
    TrainReport report = train(params, train_set, test_set, cfg.hyper);

    fs::create_directories(cfg.out_dir);
    if (report.diverged) {
        std::ofstream(cfg.out_dir + "/train_report.json")
            << train_report_json(report).dump(2) << "\n";
        write_manifest(cfg.out_dir, cfg.raw, cfg.seed, "train");
        std::cerr << "training diverged (non-finite loss); partial report written\n";
        return kExitRuntime;
    }
    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.formats = calibrated_formats(params, train_set, cfg.calibration_samples);
    ckpt.metadata = {{"predictor_mode", predictor_mode_name(cfg.hyper.predictor_mode)},
                     {"seed", cfg.seed},
                     {"epochs", cfg.hyper.epochs},
                     {"learning_rate", cfg.hyper.learning_rate},
                     {"l1_lambda", cfg.hyper.l1_lambda},
                     {"final_ter", report.final_ter},
                     {"diverged", report.diverged}};
    save_checkpoint(cfg.out_dir + "/checkpoint.bin", ckpt);

    std::ofstream(cfg.out_dir + "/train_report.json") << train_report_json(report).dump(2) << "\n";
    write_train_csv(cfg.out_dir + "/train_curve.csv", report, cfg.network);
    write_manifest(cfg.out_dir, cfg.raw, cfg.seed, "train");

    std::cout << "final TER " << report.final_ter << "%";
    if (!report.final_rho.empty()) {
        std::cout << ", rho";
        for (double r : report.final_rho) std::cout << ' ' << r;
    }
    std::cout << "\nwrote " << cfg.out_dir << "/checkpoint.bin\n";
    return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path) {
    ExperimentConfig cfg = load_experiment(args);
    apply_mode_override(cfg, args.mode);
    auto [train_set, test_set] = cfg.dataset.load();
    Checkpoint ckpt = load_checkpoint(checkpoint_path);

    EvalResult res = evaluate(ckpt.params, test_set, cfg.hyper.predictor_mode);
    nlohmann::json j = {{"ter", res.ter},
                        {"rho", res.rho},
                        {"mode", predictor_mode_name(cfg.hyper.predictor_mode)},
                        {"samples", test_set.size()}};
    fs::create_directories(cfg.out_dir);
    std::ofstream(cfg.out_dir + "/eval.json") << j.dump(2) << "\n";
    write_manifest(cfg.out_dir, cfg.raw, cfg.seed, "eval");
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

SimReport accumulate_runs(SimEngine& engine, const FxNetwork& net, const Dataset& data,
                          std::size_t samples, UvMode mode) {
    SimReport total;
    SatCounter sat = 0;
    for (std::size_t s = 0; s < std::min(samples, data.size()); ++s) {
        FxVector x = quantize_vector(data.sample(s), net.act_format[0], &sat);
        SimReport rep = engine.run(x.codes, mode);
        if (total.layers.empty()) {
            total = std::move(rep);
            continue;
        }
        total.total_cycles += rep.total_cycles;
        total.total_events += rep.total_events;
        for (std::size_t l = 0; l < rep.layers.size(); ++l) {
            LayerSimReport& acc = total.layers[l];
            const LayerSimReport& cur = rep.layers[l];
            acc.input_nonzeros += cur.input_nonzeros;
            for (std::size_t p = 0; p < cur.phases.size(); ++p) {
                acc.phases[p].cycles += cur.phases[p].cycles;
                acc.phases[p].delivered_packets += cur.phases[p].delivered_packets;
                acc.phases[p].events += cur.phases[p].events;
                for (std::size_t pe = 0; pe < cur.phases[p].busy.size(); ++pe) {
                    acc.phases[p].busy[pe] += cur.phases[p].busy[pe];
                }
            }
        }
    }
    return total;
}

int cmd_simulate(const CommonArgs& args, const std::string& checkpoint_path) {
    ExperimentConfig cfg = load_experiment(args);
    apply_mode_override(cfg, args.mode);
    auto [train_set, test_set] = cfg.dataset.load();
    Checkpoint ckpt = load_checkpoint(checkpoint_path);

    if (ckpt.params.spec.layer_sizes[0] != test_set.dim()) {
        throw ConfigError("simulate: checkpoint input width " +
                          std::to_string(ckpt.params.spec.layer_sizes[0]) +
                          " does not match dataset dim " + std::to_string(test_set.dim()));
    }
    QuantFormats formats = ckpt.formats ? *ckpt.formats
                                        : calibrated_formats(ckpt.params, test_set,
                                                             cfg.calibration_samples);
    FxNetwork net = quantize_network(ckpt.params, formats);

    fs::create_directories(cfg.out_dir);
    SimEngine engine(net, cfg.arch, cfg.sim.options);
    bool run_on = cfg.sim.mode != "uv_off";
    bool run_off = cfg.sim.mode != "uv_on";
    SimReport on, off;
    bool first_csv = true;
    if (run_on) {
        on = accumulate_runs(engine, net, test_set, cfg.sim.samples, UvMode::On);
        std::ofstream(cfg.out_dir + "/sim_uv_on.json")
            << sim_report_json(on, cfg.energy).dump(2) << "\n";
        write_sim_csv(cfg.out_dir + "/sim_layers.csv", on, cfg.energy, !first_csv);
        first_csv = false;
    }
    if (run_off) {
        off = accumulate_runs(engine, net, test_set, cfg.sim.samples, UvMode::Off);
        std::ofstream(cfg.out_dir + "/sim_uv_off.json")
            << sim_report_json(off, cfg.energy).dump(2) << "\n";
        write_sim_csv(cfg.out_dir + "/sim_layers.csv", off, cfg.energy, !first_csv);
    }
    if (run_on && run_off) {
        write_compare_csv(cfg.out_dir + "/sim_compare.csv", on, off, cfg.energy);
        EnergyReport er_on = energy_report(on, cfg.energy);
        EnergyReport er_off = energy_report(off, cfg.energy);
        double cyc_red = off.total_cycles > 0
                             ? 1.0 - double(on.total_cycles) / double(off.total_cycles)
                             : 0.0;
        double pow_ratio = er_off.avg_power_mw > 0 ? er_on.avg_power_mw / er_off.avg_power_mw : 0.0;
        std::cout << "uv_on " << on.total_cycles << " cycles, uv_off " << off.total_cycles
                  << " cycles, reduction " << cyc_red * 100.0 << "%\n"
                  << "power ratio (uv_on/uv_off) " << pow_ratio << "\n";
    }
    write_manifest(cfg.out_dir, cfg.raw, cfg.seed, "simulate");
    return kExitOk;
}

json json_value_from_token(const std::string& tok) {
    try {
        return json::parse(tok);
    } catch (const json::exception&) {
        return json(tok); // bare string
    }
}

int cmd_sweep(const CommonArgs& args, const std::string& param,
              const std::vector<std::string>& values) {
    ExperimentConfig base = load_experiment(args);
    if (param.empty() || values.empty()) {
        throw ConfigError("sweep: --param and --values are required");
    }
    fs::create_directories(base.out_dir);

    // Fan the runs out concurrently; each run is fully isolated.
    std::vector<std::future<std::pair<double, std::vector<double>>>> futures;
    for (std::size_t i = 0; i < values.size(); ++i) {
        json cfg_json = base.raw;
        json* node = &cfg_json;
        std::string key = param;
        for (std::size_t dot = key.find('.'); dot != std::string::npos; dot = key.find('.')) {
            node = &(*node)[key.substr(0, dot)];
            key = key.substr(dot + 1);
        }
        (*node)[key] = json_value_from_token(values[i]);
        std::string run_dir = base.out_dir + "/run" + std::to_string(i);
        cfg_json["out"] = run_dir;
        futures.push_back(std::async(std::launch::async, [cfg_json, run_dir]() {
            ExperimentConfig cfg = parse_config(cfg_json);
            auto [train_set, test_set] = cfg.dataset.load();
            Rng rng(cfg.seed);
            NetworkParams params = NetworkParams::init(cfg.network, rng);
            TrainReport report = train(params, train_set, test_set, cfg.hyper);
            fs::create_directories(run_dir);
            std::ofstream(run_dir + "/train_report.json")
                << train_report_json(report).dump(2) << "\n";
            write_train_csv(run_dir + "/train_curve.csv", report, cfg.network);
            write_manifest(run_dir, cfg_json, cfg.seed, "sweep");
            return std::make_pair(report.final_ter, report.final_rho);
        }));
    }

    std::ofstream summary(base.out_dir + "/sweep_summary.csv");
    summary << "value,ter";
    for (std::size_t l : base.network.predictor_layers) summary << ",rho_l" << l;
    summary << "\n";
    for (std::size_t i = 0; i < futures.size(); ++i) {
        auto [ter, rho] = futures[i].get();
        summary << values[i] << ',' << ter;
        for (double r : rho) summary << ',' << r;
        summary << "\n";
        std::cout << param << "=" << values[i] << " -> TER " << ter << "%\n";
    }
    return kExitOk;
}

int cmd_report(const std::string& dir) {
    bool found = false;
    for (const char* name : {"train_report.json", "eval.json", "sim_uv_on.json", "sim_uv_off.json"}) {
        fs::path p = fs::path(dir) / name;
        std::ifstream in(p);
        if (!in) continue;
        found = true;
        json j = json::parse(in);
        std::cout << "== " << name << " ==\n";
        if (j.contains("epochs")) {
            std::cout << "epochs " << j["epochs"].size() << ", final TER " << j["final_ter"]
                      << "%, rho " << j["final_rho"].dump() << "\n";
        } else if (j.contains("total_cycles")) {
            std::cout << "mode " << j["mode"] << ": " << j["total_cycles"] << " cycles, "
                      << j["energy_uj"] << " uJ, " << j["avg_power_mw"] << " mW\n";
        } else {
            std::cout << j.dump(2) << "\n";
        }
    }
    if (!found) {
        std::cerr << "no reports found in '" << dir << "'\n";
        return kExitConfig;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SparseNN: sparsity-predictor training and PE-array performance model"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string checkpoint_path, sweep_param, report_dir;
    std::vector<std::string> sweep_values;

    auto add_common = [&](CLI::App* cmd, bool need_config) {
        auto* opt = cmd->add_option("--config", args.config_path, "experiment config (JSON)");
        if (need_config) opt->required();
        cmd->add_option("--out", args.out_dir, "output directory override");
        cmd->add_option("--mode", args.mode, "mode override");
        cmd->add_option("--seed", args.seed, "seed override")
            ->each([&](const std::string&) { args.seed_set = true; });
    };

    CLI::App* c_train = app.add_subcommand("train", "train a network, write checkpoint + reports");
    add_common(c_train, true);

    CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(c_eval, true);
    c_eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    CLI::App* c_sim = app.add_subcommand("simulate", "run the cycle-level model on a checkpoint");
    add_common(c_sim, true);
    c_sim->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    CLI::App* c_sweep = app.add_subcommand("sweep", "train over a list of config values");
    add_common(c_sweep, true);
    c_sweep->add_option("--param", sweep_param, "dotted config key, e.g. train.l1_lambda")
        ->required();
    c_sweep->add_option("--values", sweep_values, "values for the swept key")
        ->required()
        ->delimiter(',');

    CLI::App* c_report = app.add_subcommand("report", "print a summary of a run directory");
    c_report->add_option("--dir", report_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (c_train->parsed()) return cmd_train(args);
        if (c_eval->parsed()) return cmd_eval(args, checkpoint_path);
        if (c_sim->parsed()) return cmd_simulate(args, checkpoint_path);
        if (c_sweep->parsed()) return cmd_sweep(args, sweep_param, sweep_values);
        if (c_report->parsed()) return cmd_report(report_dir);
    } catch (const CapacityError& e) {
        std::cerr << "capacity error: " << e.what() << "\n";
        return kExitCapacity;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
