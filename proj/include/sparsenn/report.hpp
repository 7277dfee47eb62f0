#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <json.hpp>

#include "sparsenn/sim.hpp"
#include "sparsenn/train.hpp"

namespace sparsenn {

inline constexpr const char* kToolVersion = "sparsenn 0.1.0";

// Training curve CSV, one row per epoch:
//   epoch,loss,ter,rho_l<idx>...
inline constexpr const char* kTrainCsvHeaderPrefix = "epoch,loss,ter";

// Per-layer simulation CSV:
inline constexpr const char* kSimCsvHeader =
    "mode,layer,phase,cycles,busy_max,utilization,delivered_packets,w_mem_reads,uv_mem_reads,"
    "macs,regfile_ops,router_hops,queue_ops,saturations,energy_uj,power_mw";

// uv_on vs uv_off comparison CSV:
inline constexpr const char* kCompareCsvHeader =
    "layer,uv_on_cycles,uv_off_cycles,cycle_reduction,uv_on_energy_uj,uv_off_energy_uj,"
    "uv_on_power_mw,uv_off_power_mw,power_ratio";

inline nlohmann::json train_report_json(const TrainReport& report) {
    nlohmann::json j;
    j["diverged"] = report.diverged;
    j["final_ter"] = report.final_ter;
    j["final_rho"] = report.final_rho;
    nlohmann::json epochs = nlohmann::json::array();
    for (const EpochStats& e : report.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"loss", e.mean_loss},
                          {"ter", e.ter},
                          {"rho", e.rho}});
    }
    j["epochs"] = std::move(epochs);
    return j;
}

inline void write_train_csv(const std::string& path, const TrainReport& report,
                            const NetworkSpec& spec) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << kTrainCsvHeaderPrefix;
    for (std::size_t l : spec.predictor_layers) out << ",rho_l" << l;
    out << "\n";
    out << std::setprecision(10);
    for (const EpochStats& e : report.epochs) {
        out << e.epoch << ',' << e.mean_loss << ',' << e.ter;
        for (double r : e.rho) out << ',' << r;
        out << "\n";
    }
}

inline nlohmann::json events_json(const EventCounters& c) {
    return {{"w_mem_reads", c.w_mem_reads}, {"uv_mem_reads", c.uv_mem_reads},
            {"macs", c.macs},               {"regfile_ops", c.regfile_ops},
            {"router_hops", c.router_hops}, {"queue_ops", c.queue_ops},
            {"saturations", c.saturations}};
}

inline nlohmann::json sim_report_json(const SimReport& sim, const EnergyConfig& energy) {
    EnergyReport er = energy_report(sim, energy);
    nlohmann::json j;
    j["mode"] = sim.mode == UvMode::On ? "uv_on" : "uv_off";
    j["total_cycles"] = sim.total_cycles;
    j["total_events"] = events_json(sim.total_events);
    j["energy_uj"] = er.total_uj;
    j["avg_power_mw"] = er.avg_power_mw;
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t li = 0; li < sim.layers.size(); ++li) {
        const LayerSimReport& lr = sim.layers[li];
        nlohmann::json phases = nlohmann::json::array();
        for (std::size_t pi = 0; pi < lr.phases.size(); ++pi) {
            const PhaseResult& p = lr.phases[pi];
            phases.push_back({{"phase", p.phase},
                              {"cycles", p.cycles},
                              {"busy_max", p.max_busy()},
                              {"utilization", p.utilization()},
                              {"delivered_packets", p.delivered_packets},
                              {"events", events_json(p.events)},
                              {"energy_uj", er.phase_energy_uj[li][pi]}});
        }
        layers.push_back({{"layer", lr.layer},
                          {"cycles", lr.total_cycles()},
                          {"input_nonzeros", lr.input_nonzeros},
                          {"phases", std::move(phases)}});
    }
    j["layers"] = std::move(layers);
    return j;
}

inline void write_sim_csv(const std::string& path, const SimReport& sim,
                          const EnergyConfig& energy, bool append = false) {
    std::ofstream out(path, append ? std::ios::app : std::ios::out);
    if (!out) throw Error("cannot write '" + path + "'");
    if (!append) out << kSimCsvHeader << "\n";
    EnergyReport er = energy_report(sim, energy);
    const char* mode = sim.mode == UvMode::On ? "uv_on" : "uv_off";
    out << std::setprecision(8);
    for (std::size_t li = 0; li < sim.layers.size(); ++li) {
        const LayerSimReport& lr = sim.layers[li];
        for (std::size_t pi = 0; pi < lr.phases.size(); ++pi) {
            const PhaseResult& p = lr.phases[pi];
            double e_uj = er.phase_energy_uj[li][pi];
            double ns = static_cast<double>(p.cycles) * energy.clock_period_ns;
            double power = ns > 0 ? e_uj * 1e6 / ns : 0.0;
            out << mode << ',' << lr.layer << ',' << p.phase << ',' << p.cycles << ','
                << p.max_busy() << ',' << p.utilization() << ',' << p.delivered_packets << ','
                << p.events.w_mem_reads << ',' << p.events.uv_mem_reads << ',' << p.events.macs
                << ',' << p.events.regfile_ops << ',' << p.events.router_hops << ','
                << p.events.queue_ops << ',' << p.events.saturations << ',' << e_uj << ','
                << power << "\n";
        }
    }
}

// Per-layer uv_on vs uv_off comparison; both reports must describe the same
// network.
inline void write_compare_csv(const std::string& path, const SimReport& on, const SimReport& off,
                              const EnergyConfig& energy) {
    if (on.layers.size() != off.layers.size()) {
        throw ShapeError("write_compare_csv: layer count mismatch");
    }
    EnergyReport er_on = energy_report(on, energy);
    EnergyReport er_off = energy_report(off, energy);
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path + "'");
    out << kCompareCsvHeader << "\n" << std::setprecision(8);
    for (std::size_t li = 0; li < on.layers.size(); ++li) {
        std::uint64_t c_on = on.layers[li].total_cycles();
        std::uint64_t c_off = off.layers[li].total_cycles();
        double e_on = 0.0, e_off = 0.0;
        for (double e : er_on.phase_energy_uj[li]) e_on += e;
        for (double e : er_off.phase_energy_uj[li]) e_off += e;
        double p_on = c_on > 0 ? e_on * 1e6 / (static_cast<double>(c_on) * energy.clock_period_ns) : 0.0;
        double p_off = c_off > 0 ? e_off * 1e6 / (static_cast<double>(c_off) * energy.clock_period_ns) : 0.0;
        double reduction = c_off > 0 ? 1.0 - static_cast<double>(c_on) / static_cast<double>(c_off) : 0.0;
        double ratio = p_off > 0 ? p_on / p_off : 0.0;
        out << li << ',' << c_on << ',' << c_off << ',' << reduction << ',' << e_on << ','
            << e_off << ',' << p_on << ',' << p_off << ',' << ratio << "\n";
    }
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Every run writes a manifest sufficient to reproduce it byte-exactly:
// the full config, its hash, the effective seed and the tool version.
inline void write_manifest(const std::string& dir, const nlohmann::json& config,
                           std::uint64_t seed, const std::string& command) {
    nlohmann::json m;
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(config.dump());
    m["config"] = config;
    m["config_fnv1a64"] = hash.str();
    m["seed"] = seed;
    m["command"] = command;
    m["version"] = kToolVersion;
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw Error("cannot write manifest in '" + dir + "'");
    out << m.dump(2) << "\n";
}

} // namespace sparsenn
