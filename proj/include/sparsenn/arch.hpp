#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparsenn/errors.hpp"
#include "sparsenn/fx_network.hpp"

namespace sparsenn {

// Structural description of the PE array and its radix-4 reduction/broadcast
// tree. Defaults model the 64-PE configuration: 16 leaf routers, 4 internal,
// 1 root, 2ns clock, 128KB/8KB/8KB W/U/V memory per PE.
struct ArchConfig {
    std::size_t num_pes = 64;             // must be a power of 4
    std::size_t router_buffer_depth = 4;  // flits per child input buffer
    std::size_t credits_per_link = 4;     // == buffer depth by default
    std::size_t act_queue_depth = 64;
    std::size_t activation_regs_per_pe = 64;
    std::size_t pe_pipeline_depth = 5;    // addr, mem, mul, add, writeback
    std::size_t router_pipeline_depth = 4; // RC, SA, ST, LT (plus ACC when reducing)
    double clock_period_ns = 2.0;
    std::size_t w_mem_bytes = 128 * 1024;
    std::size_t u_mem_bytes = 8 * 1024;
    std::size_t v_mem_bytes = 8 * 1024;
    int total_bits = 16;

    std::size_t tree_levels() const {
        std::size_t levels = 0, p = num_pes;
        while (p > 1) {
            p /= 4;
            ++levels;
        }
        return levels;
    }

    void validate() const {
        std::size_t p = num_pes;
        if (p < 4) throw ConfigError("ArchConfig: num_pes must be >= 4");
        while (p > 1) {
            if (p % 4 != 0) throw ConfigError("ArchConfig: num_pes must be a power of 4");
            p /= 4;
        }
        if (router_buffer_depth < 1 || credits_per_link < 1) {
            throw ConfigError("ArchConfig: buffer depth and credits must be >= 1");
        }
        if (credits_per_link > router_buffer_depth) {
            throw ConfigError("ArchConfig: credits_per_link cannot exceed router_buffer_depth");
        }
        if (act_queue_depth < 1 || activation_regs_per_pe < 1) {
            throw ConfigError("ArchConfig: queue and register depths must be >= 1");
        }
        if (pe_pipeline_depth < 1 || router_pipeline_depth < 1) {
            throw ConfigError("ArchConfig: pipeline depths must be >= 1");
        }
        if (!(clock_period_ns > 0.0)) throw ConfigError("ArchConfig: clock period must be > 0");
        if (total_bits != 16) throw ConfigError("ArchConfig: only 16-bit datapaths are modeled");
    }

    // Hard capacity checks for a quantized network; throws CapacityError
    // naming the violated limit.
    void validate_capacity(const FxNetwork& net) const {
        const std::size_t bytes_per_word = 2;
        for (std::size_t l = 0; l < net.num_weight_layers(); ++l) {
            std::size_t m = net.spec.layer_sizes[l + 1];
            std::size_t n = net.spec.layer_sizes[l];
            if (n > activation_regs_per_pe * num_pes || m > activation_regs_per_pe * num_pes) {
                throw CapacityError("layer " + std::to_string(l) + ": width exceeds activation register capacity " +
                                    std::to_string(activation_regs_per_pe * num_pes));
            }
            std::size_t rows_per_pe = (m + num_pes - 1) / num_pes;
            if (rows_per_pe * n * bytes_per_word > w_mem_bytes) {
                throw CapacityError("layer " + std::to_string(l) + ": W slice exceeds per-PE W memory (" +
                                    std::to_string(w_mem_bytes) + " bytes)");
            }
            if (!net.u[l].empty()) {
                std::size_t r = net.spec.rank;
                if (r > act_queue_depth) {
                    throw CapacityError("layer " + std::to_string(l) +
                                        ": rank exceeds activation queue depth " +
                                        std::to_string(act_queue_depth));
                }
                if (rows_per_pe * r * bytes_per_word > u_mem_bytes) {
                    throw CapacityError("layer " + std::to_string(l) + ": U slice exceeds per-PE U memory");
                }
                std::size_t cols_per_pe = (n + num_pes - 1) / num_pes;
                if (cols_per_pe * r * bytes_per_word > v_mem_bytes) {
                    throw CapacityError("layer " + std::to_string(l) + ": V slice exceeds per-PE V memory");
                }
            }
        }
    }
};

// Modular interleaving: row j of W (and U), activation j, and output j all
// live on PE j mod P.
inline std::size_t map_row(std::size_t j, std::size_t num_pes) { return j % num_pes; }

// Columns of V use the same modular rule, so column j of V co-resides with
// activation a_j and the V phase needs no input broadcast.
inline std::size_t map_col(std::size_t j, std::size_t num_pes) { return j % num_pes; }

// Leading nonzero detector: smallest index >= start with a nonzero element.
inline std::optional<std::size_t> lnzd(std::span<const std::int16_t> values, std::size_t start) {
    for (std::size_t i = start; i < values.size(); ++i) {
        if (values[i] != 0) return i;
    }
    return std::nullopt;
}

inline std::optional<std::size_t> lnzd(std::span<const std::uint8_t> bits, std::size_t start) {
    for (std::size_t i = start; i < bits.size(); ++i) {
        if (bits[i]) return i;
    }
    return std::nullopt;
}

enum class PacketKind : std::uint8_t {
    ActBroadcast, // (activation code, activation index)
    PartialSum,   // (wide partial sum, predictor row index)
    VResult       // (score code, predictor row index)
};

struct Packet {
    PacketKind kind = PacketKind::ActBroadcast;
    std::int64_t payload = 0; // activation/score code or wide partial sum
    std::uint32_t index = 0;  // activation index or predictor row index
    std::uint32_t source_pe = 0;
};

enum class TieBreak { LowPort, HighPort };

struct ArbCandidate {
    std::uint32_t index = 0;
    int port = 0;
};

// Smallest activation index wins; ties go to the lowest (or, when flipped,
// highest) port number.
inline int arbitrate(std::span<const ArbCandidate> candidates, TieBreak tie = TieBreak::LowPort) {
    if (candidates.empty()) throw Error("arbitrate: no candidates");
    int best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i) {
        const ArbCandidate& c = candidates[i];
        const ArbCandidate& b = candidates[static_cast<std::size_t>(best)];
        if (c.index < b.index) {
            best = static_cast<int>(i);
        } else if (c.index == b.index) {
            bool take = tie == TieBreak::LowPort ? c.port < b.port : c.port > b.port;
            if (take) best = static_cast<int>(i);
        }
    }
    return candidates[static_cast<std::size_t>(best)].port;
}

} // namespace sparsenn
