#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsenn/fx_network.hpp"
#include "sparsenn/network.hpp"

namespace sparsenn {

// Binary checkpoint container, little-endian:
//   u32 magic 'SNNC', u32 version, u32 layer count, u32 rank, u32 flags
//   per layer: u32 m, u32 n, u8 has_uv
//   if flags & 1 (quantization formats present):
//     per layer: u8 w_frac, u8 u_frac, u8 v_frac, u8 z_frac (0xFF = absent)
//     per activation vector a^(0..L): u8 act_frac
//   per layer: f64 W row-major, then f64 U and f64 V when has_uv
// A JSON sidecar at <path>.json carries the NetworkSpec and run metadata.
inline constexpr std::uint32_t kCheckpointMagic = 0x434E4E53u; // "SNNC"
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    NetworkParams params;
    std::optional<QuantFormats> formats;
    nlohmann::json metadata;
};

namespace detail {

template <class T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
    T v;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw ParseError("checkpoint '" + path + "': truncated");
    }
    return v;
}

inline void write_matrix(std::ostream& out, const Matrix& m) {
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

inline Matrix read_matrix(std::istream& in, std::size_t rows, std::size_t cols,
                          const std::string& path) {
    Matrix m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data.data()),
                 static_cast<std::streamsize>(m.data.size() * sizeof(double)))) {
        throw ParseError("checkpoint '" + path + "': truncated parameter blob");
    }
    return m;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ckpt.params.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("checkpoint '" + path + "': cannot write");

    const NetworkSpec& spec = ckpt.params.spec;
    const std::uint32_t num_layers = static_cast<std::uint32_t>(spec.num_weight_layers());
    std::uint32_t flags = ckpt.formats ? 1u : 0u;
    detail::write_pod(out, kCheckpointMagic);
    detail::write_pod(out, kCheckpointVersion);
    detail::write_pod(out, num_layers);
    detail::write_pod(out, static_cast<std::uint32_t>(spec.rank));
    detail::write_pod(out, flags);
    for (std::uint32_t l = 0; l < num_layers; ++l) {
        detail::write_pod(out, static_cast<std::uint32_t>(spec.layer_sizes[l + 1]));
        detail::write_pod(out, static_cast<std::uint32_t>(spec.layer_sizes[l]));
        detail::write_pod(out, static_cast<std::uint8_t>(spec.has_predictor(l) ? 1 : 0));
    }
    if (ckpt.formats) {
        const QuantFormats& f = *ckpt.formats;
        for (std::uint32_t l = 0; l < num_layers; ++l) {
            bool uv = f.has_predictor[l];
            detail::write_pod(out, static_cast<std::uint8_t>(f.w[l].frac_bits));
            detail::write_pod(out, static_cast<std::uint8_t>(uv ? f.u[l].frac_bits : 0xFF));
            detail::write_pod(out, static_cast<std::uint8_t>(uv ? f.v[l].frac_bits : 0xFF));
            detail::write_pod(out, static_cast<std::uint8_t>(uv ? f.z[l].frac_bits : 0xFF));
        }
        for (std::uint32_t l = 0; l <= num_layers; ++l) {
            detail::write_pod(out, static_cast<std::uint8_t>(f.act[l].frac_bits));
        }
    }
    for (std::uint32_t l = 0; l < num_layers; ++l) {
        detail::write_matrix(out, ckpt.params.layers[l].w);
        if (spec.has_predictor(l)) {
            detail::write_matrix(out, *ckpt.params.layers[l].u);
            detail::write_matrix(out, *ckpt.params.layers[l].v);
        }
    }
    if (!out) throw Error("checkpoint '" + path + "': write failed");
    out.close();

    nlohmann::json sidecar;
    sidecar["layer_sizes"] = spec.layer_sizes;
    sidecar["rank"] = spec.rank;
    sidecar["predictor_layers"] = spec.predictor_layers;
    sidecar["metadata"] = ckpt.metadata;
    std::ofstream side(path + ".json");
    if (!side) throw Error("checkpoint sidecar '" + path + ".json': cannot write");
    side << sidecar.dump(2) << "\n";
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("checkpoint '" + path + "': cannot open");
    if (detail::read_pod<std::uint32_t>(in, path) != kCheckpointMagic) {
        throw ParseError("checkpoint '" + path + "': bad magic");
    }
    std::uint32_t version = detail::read_pod<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw ParseError("checkpoint '" + path + "': unsupported version " +
                         std::to_string(version));
    }
    std::uint32_t num_layers = detail::read_pod<std::uint32_t>(in, path);
    std::uint32_t rank = detail::read_pod<std::uint32_t>(in, path);
    std::uint32_t flags = detail::read_pod<std::uint32_t>(in, path);

    Checkpoint ckpt;
    NetworkSpec spec;
    spec.rank = rank;
    std::vector<std::uint8_t> has_uv(num_layers);
    std::vector<std::size_t> ms(num_layers), ns(num_layers);
    for (std::uint32_t l = 0; l < num_layers; ++l) {
        ms[l] = detail::read_pod<std::uint32_t>(in, path);
        ns[l] = detail::read_pod<std::uint32_t>(in, path);
        has_uv[l] = detail::read_pod<std::uint8_t>(in, path);
        if (has_uv[l]) spec.predictor_layers.push_back(l);
    }
    spec.layer_sizes.push_back(ns.empty() ? 0 : ns[0]);
    for (std::uint32_t l = 0; l < num_layers; ++l) spec.layer_sizes.push_back(ms[l]);

    if (flags & 1u) {
        QuantFormats f;
        for (std::uint32_t l = 0; l < num_layers; ++l) {
            auto wf = detail::read_pod<std::uint8_t>(in, path);
            auto uf = detail::read_pod<std::uint8_t>(in, path);
            auto vf = detail::read_pod<std::uint8_t>(in, path);
            auto zf = detail::read_pod<std::uint8_t>(in, path);
            f.w.push_back(QFormat(wf));
            f.u.push_back(uf == 0xFF ? QFormat(0) : QFormat(uf));
            f.v.push_back(vf == 0xFF ? QFormat(0) : QFormat(vf));
            f.z.push_back(zf == 0xFF ? QFormat(0) : QFormat(zf));
            f.has_predictor.push_back(has_uv[l]);
        }
        for (std::uint32_t l = 0; l <= num_layers; ++l) {
            f.act.push_back(QFormat(detail::read_pod<std::uint8_t>(in, path)));
        }
        ckpt.formats = std::move(f);
    }

    ckpt.params.spec = spec;
    for (std::uint32_t l = 0; l < num_layers; ++l) {
        LayerParams lp;
        lp.w = detail::read_matrix(in, ms[l], ns[l], path);
        if (has_uv[l]) {
            lp.u = detail::read_matrix(in, ms[l], rank, path);
            lp.v = detail::read_matrix(in, rank, ns[l], path);
        }
        ckpt.params.layers.push_back(std::move(lp));
    }
    ckpt.params.validate();

    std::ifstream side(path + ".json");
    if (side) {
        try {
            nlohmann::json sidecar = nlohmann::json::parse(side);
            if (sidecar.contains("metadata")) ckpt.metadata = sidecar["metadata"];
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("checkpoint sidecar '" + path + ".json': " + e.what());
        }
    }
    return ckpt;
}

} // namespace sparsenn
