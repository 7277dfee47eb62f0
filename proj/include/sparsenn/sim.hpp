#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sparsenn/arch.hpp"
#include "sparsenn/fx_network.hpp"

namespace sparsenn {

struct EventCounters {
    std::uint64_t w_mem_reads = 0;
    std::uint64_t uv_mem_reads = 0;
    std::uint64_t macs = 0;
    std::uint64_t regfile_ops = 0;
    std::uint64_t router_hops = 0;
    std::uint64_t queue_ops = 0;
    std::uint64_t saturations = 0;

    EventCounters& operator+=(const EventCounters& o) {
        w_mem_reads += o.w_mem_reads;
        uv_mem_reads += o.uv_mem_reads;
        macs += o.macs;
        regfile_ops += o.regfile_ops;
        router_hops += o.router_hops;
        queue_ops += o.queue_ops;
        saturations += o.saturations;
        return *this;
    }
};

struct PhaseResult {
    std::string phase; // "V", "U" or "W"
    std::uint64_t cycles = 0;
    std::vector<std::uint64_t> busy; // MAC-issue cycles per PE
    std::uint64_t delivered_packets = 0;
    EventCounters events;
    std::vector<std::vector<std::uint32_t>> delivered_indices; // per PE, only when recorded

    double utilization() const {
        if (cycles == 0 || busy.empty()) return 0.0;
        double total = 0.0;
        for (std::uint64_t b : busy) total += static_cast<double>(b);
        return total / (static_cast<double>(cycles) * static_cast<double>(busy.size()));
    }
    std::uint64_t max_busy() const {
        std::uint64_t m = 0;
        for (std::uint64_t b : busy) m = std::max(m, b);
        return m;
    }
};

struct LayerSimReport {
    std::size_t layer = 0;
    std::vector<PhaseResult> phases;
    std::vector<std::int16_t> outputs;        // a^(l+1) codes
    std::vector<std::int16_t> z_codes;        // V-phase results (uv_on predicted layers)
    std::vector<std::uint8_t> mask_bits;      // predictor bank, concatenated by global row
    std::uint64_t input_nonzeros = 0;
    std::vector<std::size_t> rows_per_pe;     // output rows owned per PE
    std::vector<std::size_t> active_rows_per_pe;

    std::uint64_t total_cycles() const {
        std::uint64_t c = 0;
        for (const PhaseResult& p : phases) c += p.cycles;
        return c;
    }
    const PhaseResult* phase(const std::string& name) const {
        for (const PhaseResult& p : phases) {
            if (p.phase == name) return &p;
        }
        return nullptr;
    }
};

struct SimReport {
    UvMode mode = UvMode::Off;
    std::vector<LayerSimReport> layers;
    std::uint64_t total_cycles = 0;
    EventCounters total_events;
    std::vector<std::int16_t> logits;
};

enum class VSchedule { Column, Row };
enum class InjectOrder { Ascending, Descending };

struct SimOptions {
    TieBreak tie_break = TieBreak::LowPort;
    InjectOrder inject_order = InjectOrder::Ascending;
    VSchedule v_schedule = VSchedule::Column;
    std::uint64_t cycle_cap = 200'000'000;
    bool check_invariants = false;
    bool record_deliveries = false;
};

// Per-event energies in pJ. Shipped defaults are illustrative; results are
// meaningful as ratios and event counts.
struct EnergyConfig {
    double w_mem_read = 20.0;
    double u_mem_read = 1.5;
    double v_mem_read = 1.5;
    double mac = 0.5;
    double regfile_op = 0.2;
    double router_hop = 0.3;
    double queue_op = 0.1;
    double clock_period_ns = 2.0;

    void validate() const {
        for (double v : {w_mem_read, u_mem_read, v_mem_read, mac, regfile_op, router_hop, queue_op}) {
            if (v < 0.0) throw ConfigError("EnergyConfig: energies must be >= 0");
        }
        if (!(clock_period_ns > 0.0)) throw ConfigError("EnergyConfig: clock period must be > 0");
    }
};

inline double phase_energy_pj(const PhaseResult& p, const EnergyConfig& e) {
    const EventCounters& c = p.events;
    double uv_energy = p.phase == "U" ? e.u_mem_read : e.v_mem_read;
    return static_cast<double>(c.w_mem_reads) * e.w_mem_read +
           static_cast<double>(c.uv_mem_reads) * uv_energy +
           static_cast<double>(c.macs) * e.mac +
           static_cast<double>(c.regfile_ops) * e.regfile_op +
           static_cast<double>(c.router_hops) * e.router_hop +
           static_cast<double>(c.queue_ops) * e.queue_op;
}

struct EnergyReport {
    double total_uj = 0.0;
    double avg_power_mw = 0.0;
    std::vector<std::vector<double>> phase_energy_uj; // [layer][phase]
};

// energy = sum(events * per-event energy); power = energy / (cycles * period).
// 1 pJ/ns == 1 mW.
inline EnergyReport energy_report(const SimReport& sim, const EnergyConfig& cfg) {
    cfg.validate();
    EnergyReport rep;
    double total_pj = 0.0;
    for (const LayerSimReport& layer : sim.layers) {
        std::vector<double> per_phase;
        for (const PhaseResult& p : layer.phases) {
            double pj = phase_energy_pj(p, cfg);
            per_phase.push_back(pj * 1e-6);
            total_pj += pj;
        }
        rep.phase_energy_uj.push_back(std::move(per_phase));
    }
    rep.total_uj = total_pj * 1e-6;
    double total_ns = static_cast<double>(sim.total_cycles) * cfg.clock_period_ns;
    rep.avg_power_mw = total_ns > 0.0 ? total_pj / total_ns : 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Cycle-stepped engine. One simulation is strictly single threaded and
// deterministic: every cycle applies credit returns, moves arrived packets,
// steps routers top-down, steps the downstream broadcast, then steps PEs in
// index order. The PE datapath is issue-limited (one MAC per cycle) with a
// fixed pipeline-drain constant added at the end of each compute phase.
// ---------------------------------------------------------------------------
class SimEngine {
public:
    SimEngine(const FxNetwork& net, const ArchConfig& arch, const SimOptions& opt)
        : net_(net), arch_(arch), opt_(opt), levels_(arch.tree_levels()) {
        arch_.validate();
        arch_.validate_capacity(net_);
    }

    SimReport run(const std::vector<std::int16_t>& input, UvMode mode) {
        if (input.size() != net_.spec.layer_sizes[0]) {
            throw ShapeError("run_network: input length mismatch");
        }
        SimReport report;
        report.mode = mode;
        std::vector<std::int16_t> acts = input;
        const std::size_t num_layers = net_.num_weight_layers();
        for (std::size_t l = 0; l < num_layers; ++l) {
            report.layers.push_back(run_layer(l, acts, mode));
            acts = report.layers.back().outputs;
        }
        report.logits = acts;
        for (const LayerSimReport& lr : report.layers) {
            report.total_cycles += lr.total_cycles();
            for (const PhaseResult& p : lr.phases) report.total_events += p.events;
        }
        return report;
    }

    // Single-layer entry points used by tests that need matched inputs.
    LayerSimReport run_layer(std::size_t layer, const std::vector<std::int16_t>& acts,
                             UvMode mode) {
        const bool final_layer = (layer + 1 == net_.num_weight_layers());
        const bool predict = mode == UvMode::On && net_.spec.has_predictor(layer) && !final_layer;
        const std::size_t m = net_.spec.layer_sizes[layer + 1];

        LayerSimReport lr;
        lr.layer = layer;
        lr.input_nonzeros = 0;
        for (std::int16_t c : acts) lr.input_nonzeros += (c != 0);

        std::vector<std::uint8_t> bits(m, 1);
        if (predict) {
            PhaseResult v = opt_.v_schedule == VSchedule::Column
                                ? run_v_phase_column(layer, acts, lr.z_codes)
                                : run_v_phase_row(layer, acts, lr.z_codes);
            PhaseResult u = run_u_phase(layer, bits);
            lr.phases.push_back(std::move(v));
            lr.phases.push_back(std::move(u));
            lr.mask_bits = bits;
        }
        PhaseResult w = run_w_phase(layer, acts, bits, /*relu=*/!final_layer, lr.outputs);
        lr.rows_per_pe.assign(arch_.num_pes, 0);
        lr.active_rows_per_pe.assign(arch_.num_pes, 0);
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t pe = map_row(i, arch_.num_pes);
            ++lr.rows_per_pe[pe];
            if (bits[i]) ++lr.active_rows_per_pe[pe];
        }
        lr.phases.push_back(std::move(w));
        return lr;
    }

    // W-only phase on explicit inputs and predictor bits (matched-input law checks).
    PhaseResult run_w_phase(std::size_t layer, const std::vector<std::int16_t>& acts,
                            const std::vector<std::uint8_t>& bits, bool relu,
                            std::vector<std::int16_t>& outputs) {
        const FxMatrix& wmat = net_.w[layer];
        const std::size_t n = net_.spec.layer_sizes[layer];
        const std::size_t m = net_.spec.layer_sizes[layer + 1];
        if (acts.size() != n || bits.size() != m) throw ShapeError("run_w_phase: shape mismatch");

        reset_network();
        std::vector<PeRun> pes(arch_.num_pes);
        for (std::size_t p = 0; p < arch_.num_pes; ++p) {
            PeRun& pe = pes[p];
            for (std::size_t j = p; j < n; j += arch_.num_pes) {
                if (acts[j] != 0) {
                    pe.inject.push_back(Packet{PacketKind::ActBroadcast, acts[j],
                                               static_cast<std::uint32_t>(j),
                                               static_cast<std::uint32_t>(p)});
                }
            }
            if (opt_.inject_order == InjectOrder::Descending) {
                std::reverse(pe.inject.begin(), pe.inject.end());
            }
            for (std::size_t i = p; i < m; i += arch_.num_pes) {
                pe.rows.push_back(static_cast<std::uint32_t>(i));
                pe.row_bits.push_back(bits[i]);
            }
            pe.acc.assign(pe.rows.size(), 0);
            pe.active_count = 0;
            for (auto b : pe.row_bits) pe.active_count += b;
        }

        PhaseResult res;
        res.phase = "W";
        res.busy.assign(arch_.num_pes, 0);
        if (opt_.record_deliveries) res.delivered_indices.assign(arch_.num_pes, {});

        const int scale = wmat.format.frac_bits + net_.act_format[layer].frac_bits;
        run_broadcast_loop(pes, res, /*consume=*/true,
                           [&](PeRun& pe, std::size_t p, const Packet& pkt, std::size_t row_slot) {
                               pe.acc[row_slot] += static_cast<std::int64_t>(
                                                       wmat(pe.rows[row_slot], pkt.index)) *
                                                   pkt.payload;
                               ++res.events.w_mem_reads;
                               ++res.events.macs;
                               ++res.busy[p];
                           });
        res.cycles += arch_.pe_pipeline_depth; // datapath drain

        // Writeback: ReLU on the exact accumulator, mask, one requantize per
        // computed output, then the register files swap roles.
        outputs.assign(m, 0);
        for (std::size_t p = 0; p < arch_.num_pes; ++p) {
            PeRun& pe = pes[p];
            for (std::size_t s = 0; s < pe.rows.size(); ++s) {
                if (!pe.row_bits[s]) continue;
                WideAccumulator acc{pe.acc[s], scale};
                if (relu && acc.acc <= 0) {
                    ++res.events.regfile_ops;
                    continue;
                }
                outputs[pe.rows[s]] =
                    requantize(acc, net_.act_format[layer + 1], &res.events.saturations).code;
                ++res.events.regfile_ops;
            }
        }
        return res;
    }

    PhaseResult run_v_phase_column(std::size_t layer, const std::vector<std::int16_t>& acts,
                                   std::vector<std::int16_t>& z_out) {
        const FxMatrix& vmat = net_.v[layer];
        const std::size_t n = net_.spec.layer_sizes[layer];
        const std::size_t r = net_.spec.rank;
        if (acts.size() != n) throw ShapeError("run_v_phase: input length mismatch");

        reset_network();
        root_merge_format_ = net_.z_format[layer];
        root_merge_acc_bits_ = vmat.format.frac_bits + net_.act_format[layer].frac_bits;
        merging_ = true;

        struct VPe {
            std::vector<std::uint32_t> nz; // local nonzero activation indices
            std::size_t row = 0;           // current predictor row
            std::size_t pos = 0;           // cursor into nz
            std::int64_t partial = 0;
            std::deque<std::pair<Packet, std::uint64_t>> outbox; // packet, ready cycle
            bool done_macs = false;
        };
        std::vector<VPe> vpes(arch_.num_pes);
        std::vector<PeRun> pes(arch_.num_pes); // queue + credits machinery
        for (std::size_t p = 0; p < arch_.num_pes; ++p) {
            for (std::size_t j = p; j < n; j += arch_.num_pes) {
                if (acts[j] != 0) vpes[p].nz.push_back(static_cast<std::uint32_t>(j));
            }
            if (vpes[p].nz.empty()) {
                // no local work: r zero partials still ascend so that every
                // reduction node sees exactly four contributions per row
                for (std::size_t k = 0; k < r; ++k) {
                    vpes[p].outbox.emplace_back(
                        Packet{PacketKind::PartialSum, 0, static_cast<std::uint32_t>(k),
                               static_cast<std::uint32_t>(p)},
                        0);
                }
                vpes[p].done_macs = true;
            }
        }

        PhaseResult res;
        res.phase = "V";
        res.busy.assign(arch_.num_pes, 0);

        std::uint64_t expected_deliveries = static_cast<std::uint64_t>(r) * arch_.num_pes;
        std::uint64_t delivered = 0;
        std::uint64_t cycle = 0;
        while (true) {
            begin_cycle(cycle);
            step_routers(cycle, res.events);
            delivered += step_broadcast(pes, res, cycle);

            bool all_done = delivered == expected_deliveries && network_drained();
            for (std::size_t p = 0; p < arch_.num_pes && all_done; ++p) {
                all_done = vpes[p].done_macs && vpes[p].outbox.empty();
            }
            if (all_done) break;

            for (std::size_t p = 0; p < arch_.num_pes; ++p) {
                VPe& vp = vpes[p];
                if (!vp.done_macs) {
                    // one MAC per cycle against the locally stored V column
                    std::uint32_t j = vp.nz[vp.pos];
                    vp.partial += static_cast<std::int64_t>(vmat(vp.row, j)) *
                                  static_cast<std::int64_t>(acts[j]);
                    ++res.busy[p];
                    ++res.events.macs;
                    ++res.events.uv_mem_reads;
                    ++res.events.regfile_ops;
                    if (++vp.pos == vp.nz.size()) {
                        vp.outbox.emplace_back(
                            Packet{PacketKind::PartialSum, vp.partial,
                                   static_cast<std::uint32_t>(vp.row),
                                   static_cast<std::uint32_t>(p)},
                            cycle + arch_.pe_pipeline_depth);
                        vp.partial = 0;
                        vp.pos = 0;
                        if (++vp.row == r) vp.done_macs = true;
                    }
                }
                if (!vp.outbox.empty() && vp.outbox.front().second <= cycle &&
                    pe_credits_[p] > 0) {
                    --pe_credits_[p];
                    in_flight_.push_back(InFlight{vp.outbox.front().first, 0, p / 4,
                                                  static_cast<int>(p % 4), cycle + 1});
                    vp.outbox.pop_front();
                }
            }
            advance_cycle(cycle, res);
        }
        res.cycles = cycle;
        res.delivered_packets = delivered;

        // Deliveries landed in pes[].queue; keep them for the U phase.
        z_out.assign(r, 0);
        for (const Packet& pkt : pes[0].queue) z_out[pkt.index] = static_cast<std::int16_t>(pkt.payload);
        carry_queues_.assign(arch_.num_pes, {});
        for (std::size_t p = 0; p < arch_.num_pes; ++p) carry_queues_[p] = pes[p].queue;
        merging_ = false;
        return res;
    }

    // Comparison mode: V rows interleaved like W rows, inputs broadcast
    // through the tree, then the computed scores redistributed to every PE.
    PhaseResult run_v_phase_row(std::size_t layer, const std::vector<std::int16_t>& acts,
                                std::vector<std::int16_t>& z_out) {
        const FxMatrix& vmat = net_.v[layer];
        const std::size_t n = net_.spec.layer_sizes[layer];
        const std::size_t r = net_.spec.rank;
        if (acts.size() != n) throw ShapeError("run_v_phase: input length mismatch");

        reset_network();
        std::vector<PeRun> pes(arch_.num_pes);
        for (std::size_t p = 0; p < arch_.num_pes; ++p) {
            PeRun& pe = pes[p];
            for (std::size_t j = p; j < n; j += arch_.num_pes) {
                if (acts[j] != 0) {
                    pe.inject.push_back(Packet{PacketKind::ActBroadcast, acts[j],
                                               static_cast<std::uint32_t>(j),
                                               static_cast<std::uint32_t>(p)});
                }
            }
            if (opt_.inject_order == InjectOrder::Descending) {
                std::reverse(pe.inject.begin(), pe.inject.end());
            }
            for (std::size_t k = p; k < r; k += arch_.num_pes) {
                pe.rows.push_back(static_cast<std::uint32_t>(k));
                pe.row_bits.push_back(1);
            }
            pe.acc.assign(pe.rows.size(), 0);
            pe.active_count = pe.rows.size();
        }

        PhaseResult res;
        res.phase = "V";
        res.busy.assign(arch_.num_pes, 0);
        run_broadcast_loop(pes, res, /*consume=*/true,
                           [&](PeRun& pe, std::size_t p, const Packet& pkt, std::size_t row_slot) {
                               pe.acc[row_slot] += static_cast<std::int64_t>(
                                                       vmat(pe.rows[row_slot], pkt.index)) *
                                                   pkt.payload;
                               ++res.events.uv_mem_reads;
                               ++res.events.macs;
                               ++res.busy[p];
                           });
        res.cycles += arch_.pe_pipeline_depth;

        const int scale = vmat.format.frac_bits + net_.act_format[layer].frac_bits;
        z_out.assign(r, 0);
        std::vector<PeRun> dist(arch_.num_pes);
        for (std::size_t p = 0; p < arch_.num_pes; ++p) {
            for (std::size_t s = 0; s < pes[p].rows.size(); ++s) {
                WideAccumulator acc{pes[p].acc[s], scale};
                std::int16_t code = requantize(acc, net_.z_format[layer], &res.events.saturations).code;
                z_out[pes[p].rows[s]] = code;
                dist[p].inject.push_back(Packet{PacketKind::VResult, code, pes[p].rows[s],
                                                static_cast<std::uint32_t>(p)});
            }
        }

        // Redistribution sub-phase: owners broadcast score codes to all PEs.
        reset_network();
        PhaseResult redist;
        redist.phase = "V.dist";
        redist.busy.assign(arch_.num_pes, 0);
        run_broadcast_loop(dist, redist, /*consume=*/false, {});
        res.cycles += redist.cycles;
        res.events += redist.events;
        res.delivered_packets += redist.delivered_packets;

        carry_queues_.assign(arch_.num_pes, {});
        for (std::size_t p = 0; p < arch_.num_pes; ++p) carry_queues_[p] = dist[p].queue;
        return res;
    }

    // Row-scheduled U computation, local to each PE: one activation-queue
    // entry consumed at a time, one MAC per locally mapped U row per cycle.
    // The sign of the exact accumulator lands in the 1-bit predictor bank.
    PhaseResult run_u_phase(std::size_t layer, std::vector<std::uint8_t>& bits_out) {
        const FxMatrix& umat = net_.u[layer];
        const std::size_t m = net_.spec.layer_sizes[layer + 1];

        struct UPe {
            std::deque<Packet> queue;
            std::vector<std::uint32_t> rows;
            std::vector<std::int64_t> acc;
            Packet current;
            std::size_t macs_left = 0;
            std::size_t slot = 0;
        };
        std::vector<UPe> pes(arch_.num_pes);
        for (std::size_t p = 0; p < arch_.num_pes; ++p) {
            pes[p].queue = carry_queues_.empty() ? std::deque<Packet>{} : carry_queues_[p];
            for (std::size_t i = p; i < m; i += arch_.num_pes) {
                pes[p].rows.push_back(static_cast<std::uint32_t>(i));
            }
            pes[p].acc.assign(pes[p].rows.size(), 0);
        }

        PhaseResult res;
        res.phase = "U";
        res.busy.assign(arch_.num_pes, 0);

        std::uint64_t cycle = 0;
        while (true) {
            bool all_done = true;
            for (std::size_t p = 0; p < arch_.num_pes; ++p) {
                UPe& pe = pes[p];
                if (pe.macs_left == 0 && !pe.queue.empty()) {
                    pe.current = pe.queue.front();
                    pe.queue.pop_front();
                    ++res.events.queue_ops;
                    pe.macs_left = pe.rows.size(); // dense: no skipping over r inputs
                    pe.slot = 0;
                }
                if (pe.macs_left > 0) {
                    pe.acc[pe.slot] += static_cast<std::int64_t>(
                                           umat(pe.rows[pe.slot], pe.current.index)) *
                                       pe.current.payload;
                    ++pe.slot;
                    --pe.macs_left;
                    ++res.busy[p];
                    ++res.events.macs;
                    ++res.events.uv_mem_reads;
                }
                if (pe.macs_left != 0 || !pe.queue.empty()) all_done = false;
            }
            ++cycle;
            if (all_done) break;
            if (cycle > opt_.cycle_cap) throw DeadlockError("U phase exceeded cycle cap");
        }
        res.cycles = cycle + arch_.pe_pipeline_depth;

        bits_out.assign(m, 0);
        for (std::size_t p = 0; p < arch_.num_pes; ++p) {
            for (std::size_t s = 0; s < pes[p].rows.size(); ++s) {
                bits_out[pes[p].rows[s]] = pes[p].acc[s] > 0 ? 1 : 0;
                ++res.events.regfile_ops; // predictor bank write
            }
        }
        carry_queues_.clear();
        return res;
    }

private:
    struct ChildFifo {
        std::deque<Packet> q;
    };
    struct Router {
        std::array<ChildFifo, 4> in;
        std::size_t credits_up = 0;           // toward parent fifo
        std::vector<std::int64_t> acc_slots;  // reduction accumulators (V phase)
        std::vector<int> acc_counts;
        std::deque<Packet> pending_out;       // merged rows awaiting an upstream credit
    };
    struct InFlight {
        Packet pkt;
        std::size_t dest_level = 0;
        std::size_t dest_idx = 0;
        int dest_port = 0;
        std::uint64_t arrive = 0;
    };
    struct MergeInFlight {
        Packet pkt;
        std::size_t level = 0;
        std::size_t idx = 0;
        std::uint64_t merge_at = 0;
    };
    struct CreditReturn {
        int level = 0; // -1: PE credit
        std::size_t idx = 0;
        std::uint64_t at = 0;
    };
    struct PeRun {
        std::vector<Packet> inject;
        std::size_t inject_pos = 0;
        std::deque<Packet> queue;
        std::vector<std::uint32_t> rows;
        std::vector<std::uint8_t> row_bits;
        std::vector<std::int64_t> acc;
        std::size_t active_count = 0;
        std::size_t macs_left = 0;
        std::size_t bit_cursor = 0;
        Packet current;
    };

    const FxNetwork& net_;
    ArchConfig arch_;
    SimOptions opt_;
    std::size_t levels_;

    std::vector<std::vector<Router>> routers_; // [level][idx]; level 0 = leaves
    std::vector<std::size_t> pe_credits_;
    std::vector<InFlight> in_flight_;
    std::vector<MergeInFlight> merge_in_flight_;
    std::vector<CreditReturn> credit_returns_;
    std::deque<Packet> root_out_;
    std::vector<std::optional<Packet>> down_stages_;
    bool merging_ = false;
    QFormat root_merge_format_;
    int root_merge_acc_bits_ = 0;
    std::vector<std::deque<Packet>> carry_queues_; // act queues carried V -> U

    void reset_network() {
        routers_.assign(levels_, {});
        std::size_t count = arch_.num_pes / 4;
        for (std::size_t lvl = 0; lvl < levels_; ++lvl) {
            routers_[lvl].resize(count);
            for (Router& r : routers_[lvl]) {
                r.credits_up = arch_.credits_per_link;
                r.acc_slots.assign(net_.spec.rank, 0);
                r.acc_counts.assign(net_.spec.rank, 0);
                r.pending_out.clear();
            }
            count /= 4;
        }
        pe_credits_.assign(arch_.num_pes, arch_.credits_per_link);
        in_flight_.clear();
        merge_in_flight_.clear();
        credit_returns_.clear();
        root_out_.clear();
        down_stages_.assign(levels_, std::nullopt);
        merging_ = false;
    }

    bool network_drained() const {
        if (!in_flight_.empty() || !merge_in_flight_.empty() || !root_out_.empty()) return false;
        for (const auto& stage : down_stages_) {
            if (stage.has_value()) return false;
        }
        for (const auto& level : routers_) {
            for (const Router& r : level) {
                if (!r.pending_out.empty()) return false;
                for (const ChildFifo& f : r.in) {
                    if (!f.q.empty()) return false;
                }
                for (int c : r.acc_counts) {
                    if (c != 0) return false; // partial reduction pending
                }
            }
        }
        return true;
    }

    // Step 1: apply credit returns and packet arrivals scheduled for `cycle`.
    void begin_cycle(std::uint64_t cycle) {
        std::size_t w = 0;
        for (std::size_t i = 0; i < credit_returns_.size(); ++i) {
            const CreditReturn& cr = credit_returns_[i];
            if (cr.at <= cycle) {
                if (cr.level < 0) {
                    ++pe_credits_[cr.idx];
                } else {
                    ++routers_[static_cast<std::size_t>(cr.level)][cr.idx].credits_up;
                }
            } else {
                credit_returns_[w++] = credit_returns_[i];
            }
        }
        credit_returns_.resize(w);

        w = 0;
        for (std::size_t i = 0; i < in_flight_.size(); ++i) {
            InFlight& f = in_flight_[i];
            if (f.arrive <= cycle) {
                auto& fifo = routers_[f.dest_level][f.dest_idx].in[static_cast<std::size_t>(f.dest_port)].q;
                if (opt_.check_invariants && fifo.size() >= arch_.router_buffer_depth) {
                    throw Error("sim invariant: router fifo overflow");
                }
                fifo.push_back(f.pkt);
            } else {
                in_flight_[w++] = in_flight_[i];
            }
        }
        in_flight_.resize(w);
    }

    // Step 2: routers, root level first. Arbitration picks the smallest
    // packet index among the four child fifo heads; the winner either enters
    // the reduction pipeline (V phase) or advances toward the parent.
    void step_routers(std::uint64_t cycle, EventCounters& ev) {
        if (merging_) {
            std::size_t w = 0;
            for (std::size_t i = 0; i < merge_in_flight_.size(); ++i) {
                MergeInFlight& mf = merge_in_flight_[i];
                if (mf.merge_at <= cycle) {
                    Router& r = routers_[mf.level][mf.idx];
                    std::size_t k = mf.pkt.index;
                    r.acc_slots[k] += mf.pkt.payload;
                    if (++r.acc_counts[k] == 4) {
                        if (mf.level + 1 == levels_) {
                            // root: requantize the exact sum, broadcast the code
                            WideAccumulator acc{r.acc_slots[k], root_merge_acc_bits_};
                            std::int16_t code = requantize(acc, root_merge_format_, &ev.saturations).code;
                            root_out_.push_back(Packet{PacketKind::VResult, code,
                                                       static_cast<std::uint32_t>(k), 0});
                        } else {
                            r.pending_out.push_back(Packet{PacketKind::PartialSum, r.acc_slots[k],
                                                           static_cast<std::uint32_t>(k), 0});
                        }
                        r.acc_counts[k] = 0;
                        r.acc_slots[k] = 0;
                    }
                } else {
                    merge_in_flight_[w++] = merge_in_flight_[i];
                }
            }
            merge_in_flight_.resize(w);
        }

        for (std::size_t lvl = levels_; lvl-- > 0;) {
            for (std::size_t idx = 0; idx < routers_[lvl].size(); ++idx) {
                Router& r = routers_[lvl][idx];
                const bool is_root = (lvl + 1 == levels_);

                // merged partials waiting for an upstream credit
                if (merging_ && !is_root && !r.pending_out.empty() && r.credits_up > 0) {
                    --r.credits_up;
                    in_flight_.push_back(InFlight{r.pending_out.front(), lvl + 1, idx / 4,
                                                  static_cast<int>(idx % 4), cycle + 1});
                    r.pending_out.pop_front();
                    ++ev.router_hops;
                }

                std::array<ArbCandidate, 4> cand;
                std::size_t ncand = 0;
                for (int port = 0; port < 4; ++port) {
                    const auto& q = r.in[static_cast<std::size_t>(port)].q;
                    if (!q.empty()) cand[ncand++] = ArbCandidate{q.front().index, port};
                }
                if (ncand == 0) continue;

                if (merging_) {
                    // winner enters the reduction pipeline; ACC is the extra
                    // stage before link traversal
                    int port = arbitrate({cand.data(), ncand}, opt_.tie_break);
                    Packet pkt = r.in[static_cast<std::size_t>(port)].q.front();
                    r.in[static_cast<std::size_t>(port)].q.pop_front();
                    return_credit(lvl, idx, port, cycle);
                    merge_in_flight_.push_back(
                        MergeInFlight{pkt, lvl, idx, cycle + arch_.router_pipeline_depth});
                    ++ev.router_hops;
                } else if (is_root) {
                    if (root_out_.size() >= arch_.router_buffer_depth) continue; // backpressure
                    int port = arbitrate({cand.data(), ncand}, opt_.tie_break);
                    root_out_.push_back(r.in[static_cast<std::size_t>(port)].q.front());
                    r.in[static_cast<std::size_t>(port)].q.pop_front();
                    return_credit(lvl, idx, port, cycle);
                    ++ev.router_hops;
                } else {
                    if (r.credits_up == 0) continue;
                    int port = arbitrate({cand.data(), ncand}, opt_.tie_break);
                    Packet pkt = r.in[static_cast<std::size_t>(port)].q.front();
                    r.in[static_cast<std::size_t>(port)].q.pop_front();
                    --r.credits_up;
                    return_credit(lvl, idx, port, cycle);
                    // the last pipeline stage is the downstream buffer write,
                    // so the credit round trip fits the per-link credit count
                    // and a single stream sustains one packet per cycle
                    std::uint64_t latency =
                        arch_.router_pipeline_depth > 1 ? arch_.router_pipeline_depth - 1 : 1;
                    in_flight_.push_back(InFlight{pkt, lvl + 1, idx / 4, static_cast<int>(idx % 4),
                                                  cycle + latency});
                    ++ev.router_hops;
                }
            }
        }
    }

    // Step 3: downstream broadcast, one packet per cycle, one stage per tree
    // level, no arbitration. The pipeline stalls as a whole while any PE
    // activation queue is full.
    std::uint64_t step_broadcast(std::vector<PeRun>& pes, PhaseResult& res, std::uint64_t cycle) {
        (void)cycle;
        std::uint64_t delivered = 0;
        bool can_deliver = true;
        if (down_stages_.back().has_value()) {
            for (const PeRun& pe : pes) {
                if (pe.queue.size() >= arch_.act_queue_depth) {
                    can_deliver = false;
                    break;
                }
            }
        }
        if (!can_deliver) return 0;

        if (down_stages_.back().has_value()) {
            const Packet& pkt = *down_stages_.back();
            if (opt_.record_deliveries && res.delivered_indices.size() != pes.size()) {
                res.delivered_indices.assign(pes.size(), {});
            }
            for (std::size_t p = 0; p < pes.size(); ++p) {
                pes[p].queue.push_back(pkt);
                ++res.events.queue_ops;
                if (opt_.record_deliveries) res.delivered_indices[p].push_back(pkt.index);
            }
            delivered += pes.size();
            res.delivered_packets += pes.size();
            down_stages_.back().reset();
        }
        for (std::size_t s = down_stages_.size(); s-- > 1;) {
            if (!down_stages_[s].has_value() && down_stages_[s - 1].has_value()) {
                down_stages_[s] = down_stages_[s - 1];
                down_stages_[s - 1].reset();
                ++res.events.router_hops;
            }
        }
        if (!down_stages_[0].has_value() && !root_out_.empty()) {
            down_stages_[0] = root_out_.front();
            root_out_.pop_front();
            ++res.events.router_hops;
        }
        return delivered;
    }

    void return_credit(std::size_t lvl, std::size_t idx, int port, std::uint64_t cycle) {
        if (lvl == 0) {
            credit_returns_.push_back(CreditReturn{-1, idx * 4 + static_cast<std::size_t>(port),
                                                   cycle + 1});
        } else {
            credit_returns_.push_back(
                CreditReturn{static_cast<int>(lvl - 1), idx * 4 + static_cast<std::size_t>(port),
                             cycle + 1});
        }
    }

    void advance_cycle(std::uint64_t& cycle, const PhaseResult& res) {
        ++cycle;
        if (cycle > opt_.cycle_cap) {
            throw DeadlockError("cycle cap exceeded in phase " + res.phase + "\n" + dump_state());
        }
        if (opt_.check_invariants) check_credit_conservation();
    }

    // Generic broadcast phase: PEs inject their lists, packets ascend with
    // smallest-index arbitration, the root broadcasts them to every PE, and
    // (when consuming) each PE issues one MAC per active local row per packet.
    void run_broadcast_loop(
        std::vector<PeRun>& pes, PhaseResult& res, bool consume,
        const std::function<void(PeRun&, std::size_t, const Packet&, std::size_t)>& mac) {
        std::uint64_t expected = 0;
        for (const PeRun& pe : pes) expected += pe.inject.size();
        expected *= arch_.num_pes;

        std::uint64_t delivered = 0;
        std::uint64_t cycle = 0;
        while (true) {
            begin_cycle(cycle);
            step_routers(cycle, res.events);
            delivered += step_broadcast(pes, res, cycle);

            bool all_done = delivered == expected && network_drained();
            if (all_done) {
                for (const PeRun& pe : pes) {
                    if (pe.inject_pos != pe.inject.size() || pe.macs_left != 0 ||
                        (consume && !pe.queue.empty())) {
                        all_done = false;
                        break;
                    }
                }
            }
            if (all_done) break;

            for (std::size_t p = 0; p < pes.size(); ++p) {
                PeRun& pe = pes[p];
                if (consume) {
                    if (pe.macs_left == 0 && !pe.queue.empty()) {
                        pe.current = pe.queue.front();
                        pe.queue.pop_front();
                        ++res.events.queue_ops;
                        pe.macs_left = pe.active_count;
                        pe.bit_cursor = 0;
                    }
                    if (pe.macs_left > 0) {
                        auto slot = lnzd(std::span<const std::uint8_t>(pe.row_bits), pe.bit_cursor);
                        mac(pe, p, pe.current, *slot);
                        pe.bit_cursor = *slot + 1;
                        --pe.macs_left;
                    }
                }
                if (pe.inject_pos < pe.inject.size() && pe_credits_[p] > 0) {
                    --pe_credits_[p];
                    in_flight_.push_back(InFlight{pe.inject[pe.inject_pos], 0, p / 4,
                                                  static_cast<int>(p % 4), cycle + 1});
                    ++pe.inject_pos;
                    ++res.events.regfile_ops; // source register scan
                }
            }
            advance_cycle(cycle, res);
        }
        res.cycles += cycle;
    }

    void check_credit_conservation() const {
        // tokens: credits held by the sender + occupied fifo slots + packets
        // in flight toward the fifo + credit returns on their way back
        auto tokens_for = [&](std::size_t lvl, std::size_t idx, int port) {
            std::size_t t = routers_[lvl][idx].in[static_cast<std::size_t>(port)].q.size();
            for (const InFlight& f : in_flight_) {
                if (f.dest_level == lvl && f.dest_idx == idx && f.dest_port == port) ++t;
            }
            return t;
        };
        for (std::size_t p = 0; p < arch_.num_pes; ++p) {
            std::size_t t = pe_credits_[p] + tokens_for(0, p / 4, static_cast<int>(p % 4));
            for (const CreditReturn& cr : credit_returns_) {
                if (cr.level == -1 && cr.idx == p) ++t;
            }
            if (t != arch_.credits_per_link) {
                throw Error("sim invariant: credit conservation violated at PE link " +
                            std::to_string(p));
            }
        }
        for (std::size_t lvl = 0; lvl + 1 < levels_; ++lvl) {
            for (std::size_t idx = 0; idx < routers_[lvl].size(); ++idx) {
                std::size_t t = routers_[lvl][idx].credits_up +
                                tokens_for(lvl + 1, idx / 4, static_cast<int>(idx % 4));
                for (const CreditReturn& cr : credit_returns_) {
                    if (cr.level == static_cast<int>(lvl) && cr.idx == idx) ++t;
                }
                if (t != arch_.credits_per_link) {
                    throw Error("sim invariant: credit conservation violated at router link");
                }
            }
        }
    }

    std::string dump_state() const {
        std::ostringstream os;
        os << "router state dump:\n";
        for (std::size_t lvl = 0; lvl < levels_; ++lvl) {
            for (std::size_t idx = 0; idx < routers_[lvl].size(); ++idx) {
                const Router& r = routers_[lvl][idx];
                os << "  level " << lvl << " router " << idx << ": credits_up=" << r.credits_up
                   << " fifos=[";
                for (int port = 0; port < 4; ++port) {
                    os << r.in[static_cast<std::size_t>(port)].q.size()
                       << (port == 3 ? "]" : ",");
                }
                os << " pending_out=" << r.pending_out.size() << "\n";
            }
        }
        os << "  root_out=" << root_out_.size() << " in_flight=" << in_flight_.size() << "\n";
        return os.str();
    }
};

// Convenience wrapper matching the operation-level interface.
inline SimReport run_network(const FxNetwork& net, const std::vector<std::int16_t>& input,
                             const ArchConfig& arch, UvMode mode, const SimOptions& opt = {}) {
    SimEngine engine(net, arch, opt);
    return engine.run(input, mode);
}

} // namespace sparsenn
