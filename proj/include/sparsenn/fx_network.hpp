#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sparsenn/fixed.hpp"
#include "sparsenn/network.hpp"

namespace sparsenn {

enum class UvMode { On, Off };

// Quantized matrix: 16-bit codes, row-major, one format for the whole tensor.
struct FxMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int16_t> codes;
    QFormat format;

    std::int16_t operator()(std::size_t i, std::size_t j) const { return codes[i * cols + j]; }
    std::span<const std::int16_t> row(std::size_t i) const {
        return {codes.data() + i * cols, cols};
    }
    bool empty() const { return codes.empty(); }
};

// Per-tensor calibrated quantization formats for one network.
struct QuantFormats {
    std::vector<QFormat> w;                 // per weight layer
    std::vector<QFormat> u;                 // per weight layer (unused slots ignored)
    std::vector<QFormat> v;                 // per weight layer
    std::vector<QFormat> act;               // a^(0..L)
    std::vector<QFormat> z;                 // predictor scores per layer
    std::vector<std::uint8_t> has_predictor; // per weight layer
};

// The fixed-point twin of a NetworkParams: what the hardware model executes.
struct FxNetwork {
    NetworkSpec spec;
    std::vector<FxMatrix> w;
    std::vector<FxMatrix> u;
    std::vector<FxMatrix> v;
    std::vector<QFormat> act_format; // a^(0..L)
    std::vector<QFormat> z_format;   // per weight layer
    SatCounter quantize_saturations = 0;

    std::size_t num_weight_layers() const { return w.size(); }

    QuantFormats formats() const {
        QuantFormats f;
        for (std::size_t l = 0; l < w.size(); ++l) {
            f.w.push_back(w[l].format);
            f.u.push_back(u[l].empty() ? QFormat(0) : u[l].format);
            f.v.push_back(v[l].empty() ? QFormat(0) : v[l].format);
            f.has_predictor.push_back(u[l].empty() ? 0 : 1);
        }
        f.act = act_format;
        f.z = z_format;
        return f;
    }
};

namespace detail {

inline FxMatrix quantize_matrix(const Matrix& m, QFormat fmt, SatCounter* sat) {
    FxMatrix out;
    out.rows = m.rows;
    out.cols = m.cols;
    out.format = fmt;
    out.codes.reserve(m.data.size());
    for (double x : m.data) out.codes.push_back(quantize(x, fmt, sat).code);
    return out;
}

} // namespace detail

// Quantize a trained network with explicitly chosen per-tensor formats.
inline FxNetwork quantize_network(const NetworkParams& params, const QuantFormats& formats) {
    params.validate();
    const std::size_t num_layers = params.spec.num_weight_layers();
    if (formats.w.size() != num_layers || formats.u.size() != num_layers ||
        formats.v.size() != num_layers || formats.act.size() != num_layers + 1 ||
        formats.z.size() != num_layers) {
        throw ShapeError("quantize_network: format table size mismatch");
    }
    FxNetwork net;
    net.spec = params.spec;
    net.act_format = formats.act;
    net.z_format = formats.z;
    for (std::size_t l = 0; l < num_layers; ++l) {
        net.w.push_back(detail::quantize_matrix(params.layers[l].w, formats.w[l],
                                                &net.quantize_saturations));
        if (params.spec.has_predictor(l)) {
            net.u.push_back(detail::quantize_matrix(*params.layers[l].u, formats.u[l],
                                                    &net.quantize_saturations));
            net.v.push_back(detail::quantize_matrix(*params.layers[l].v, formats.v[l],
                                                    &net.quantize_saturations));
        } else {
            net.u.emplace_back();
            net.v.emplace_back();
        }
    }
    return net;
}

// Calibrate per-tensor formats from float forward passes over a set of
// representative inputs, then quantize. Activation ranges are taken from the
// pre-gate values so the formats cover both the gated and ungated paths.
inline FxNetwork quantize_network(const NetworkParams& params,
                                  std::span<const Vector> calibration_inputs) {
    params.validate();
    if (calibration_inputs.empty()) {
        throw Error("quantize_network: need at least one calibration input");
    }
    const std::size_t num_layers = params.spec.num_weight_layers();
    QuantFormats formats;
    formats.act.resize(num_layers + 1);
    formats.z.resize(num_layers, QFormat(0));

    std::vector<double> act_max(num_layers + 1, 0.0);
    std::vector<double> z_max(num_layers, 0.0);
    for (const Vector& x : calibration_inputs) {
        for (double v : x) act_max[0] = std::max(act_max[0], std::fabs(v));
        // The dense pass sees the larger (ungated) deep-layer ranges; the
        // gated pass supplies the predictor score ranges.
        ForwardCache gated = forward_gated(params, x);
        ForwardCache dense = forward_dense(params, x);
        for (std::size_t l = 0; l < num_layers; ++l) {
            for (double v : gated.pre_gate[l]) act_max[l + 1] = std::max(act_max[l + 1], std::fabs(v));
            for (double v : dense.pre_gate[l]) act_max[l + 1] = std::max(act_max[l + 1], std::fabs(v));
            for (double v : gated.scores[l]) z_max[l] = std::max(z_max[l], std::fabs(v));
        }
    }
    for (std::size_t l = 0; l <= num_layers; ++l) {
        formats.act[l] = calibrate_format(std::span<const double>(&act_max[l], 1));
    }
    for (std::size_t l = 0; l < num_layers; ++l) {
        formats.w.push_back(calibrate_format(params.layers[l].w.data));
        if (params.spec.has_predictor(l)) {
            formats.u.push_back(calibrate_format(params.layers[l].u->data));
            formats.v.push_back(calibrate_format(params.layers[l].v->data));
            formats.z[l] = calibrate_format(std::span<const double>(&z_max[l], 1));
        } else {
            formats.u.push_back(QFormat(0));
            formats.v.push_back(QFormat(0));
        }
    }
    return quantize_network(params, formats);
}

inline FxVector quantize_input(const FxNetwork& net, const Vector& x, SatCounter* sat = nullptr) {
    if (x.size() != net.spec.layer_sizes[0]) throw ShapeError("quantize_input: length mismatch");
    return quantize_vector(x, net.act_format[0], sat);
}

// Result of the bit-exact fixed-point reference pass.
struct FxForward {
    std::vector<std::vector<std::int16_t>> acts; // a^(1..L) codes, index l holds a^(l+1)
    std::vector<std::vector<std::int16_t>> z;    // predictor score codes per layer
    std::vector<PredictorMask> masks;            // per layer; empty bits when no predictor
    SatCounter saturations = 0;

    const std::vector<std::int16_t>& logits() const { return acts.back(); }
};

// Deterministic fixed-point reference: every output neuron is one exact
// wide-accumulator dot product followed by a single requantize. The
// predictor bit is the sign of the exact U-phase accumulator. This defines
// bit-exact correct output for the cycle-level simulator.
inline FxForward forward_fx_golden(const FxNetwork& net, const std::vector<std::int16_t>& x_codes,
                                   UvMode mode) {
    const std::size_t num_layers = net.num_weight_layers();
    if (x_codes.size() != net.spec.layer_sizes[0]) {
        throw ShapeError("forward_fx_golden: input length mismatch");
    }
    FxForward out;
    out.acts.resize(num_layers);
    out.z.resize(num_layers);
    out.masks.resize(num_layers);

    std::vector<std::int16_t> a = x_codes;
    for (std::size_t l = 0; l < num_layers; ++l) {
        const bool final_layer = (l + 1 == num_layers);
        const std::size_t m = net.spec.layer_sizes[l + 1];
        const bool predict = mode == UvMode::On && net.spec.has_predictor(l) && !final_layer;

        PredictorMask mask;
        if (predict) {
            const FxMatrix& vmat = net.v[l];
            const FxMatrix& umat = net.u[l];
            const int z_scale = vmat.format.frac_bits + net.act_format[l].frac_bits;
            std::vector<std::int16_t> zc(net.spec.rank);
            for (std::size_t k = 0; k < net.spec.rank; ++k) {
                WideAccumulator acc{dot_codes(vmat.row(k), a), z_scale};
                zc[k] = requantize(acc, net.z_format[l], &out.saturations).code;
            }
            const int u_scale = umat.format.frac_bits + net.z_format[l].frac_bits;
            mask.bits.resize(m);
            for (std::size_t i = 0; i < m; ++i) {
                WideAccumulator acc{dot_codes(umat.row(i), zc), u_scale};
                mask.bits[i] = acc.acc > 0 ? 1 : 0;
            }
            out.z[l] = std::move(zc);
        }

        const FxMatrix& wmat = net.w[l];
        const int w_scale = wmat.format.frac_bits + net.act_format[l].frac_bits;
        std::vector<std::int16_t> next(m, 0);
        for (std::size_t i = 0; i < m; ++i) {
            if (predict && mask.bits[i] == 0) continue; // bypassed neuron
            WideAccumulator acc{dot_codes(wmat.row(i), a), w_scale};
            if (!final_layer && acc.acc <= 0) continue; // ReLU on the exact sum
            next[i] = requantize(acc, net.act_format[l + 1], &out.saturations).code;
        }
        out.masks[l] = std::move(mask);
        out.acts[l] = next;
        a = std::move(next);
    }
    return out;
}

} // namespace sparsenn
