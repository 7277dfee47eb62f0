#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "sparsenn/matrix.hpp"
#include "sparsenn/rng.hpp"
#include "sparsenn/svd.hpp"

namespace sparsenn {

// Layer l maps a^(l) (length layer_sizes[l]) to a^(l+1) through W^(l).
// Layers listed in predictor_layers additionally carry a rank-r pair
// (U^(l), V^(l)) whose score sign forecasts which outputs are nonzero.
// The final classification layer never carries a predictor and emits raw
// logits (no ReLU).
struct NetworkSpec {
    std::vector<std::size_t> layer_sizes; // n_0 .. n_L
    std::size_t rank = 0;
    std::vector<std::size_t> predictor_layers;

    std::size_t num_weight_layers() const { return layer_sizes.size() - 1; }

    bool has_predictor(std::size_t layer) const {
        return std::find(predictor_layers.begin(), predictor_layers.end(), layer) !=
               predictor_layers.end();
    }

    // Predictor on every hidden layer, none on the final one.
    static NetworkSpec mlp(std::vector<std::size_t> sizes, std::size_t rank) {
        NetworkSpec spec;
        spec.layer_sizes = std::move(sizes);
        spec.rank = rank;
        if (rank > 0 && spec.layer_sizes.size() > 2) {
            for (std::size_t l = 0; l + 2 < spec.layer_sizes.size(); ++l) {
                spec.predictor_layers.push_back(l);
            }
        }
        return spec;
    }

    void validate() const {
        if (layer_sizes.size() < 2) throw ShapeError("NetworkSpec: need at least one layer");
        for (std::size_t n : layer_sizes) {
            if (n == 0) throw ShapeError("NetworkSpec: zero-width layer");
        }
        for (std::size_t l : predictor_layers) {
            if (l + 1 >= layer_sizes.size()) {
                throw ShapeError("NetworkSpec: predictor layer index out of range");
            }
            if (l + 2 == layer_sizes.size()) {
                throw ShapeError("NetworkSpec: the final layer cannot carry a predictor");
            }
            std::size_t m = layer_sizes[l + 1], n = layer_sizes[l];
            if (rank == 0 || rank >= std::min(m, n)) {
                throw ShapeError("NetworkSpec: rank must satisfy 0 < r < min(m,n)");
            }
        }
    }
};

struct LayerParams {
    Matrix w;                // m x n
    std::optional<Matrix> u; // m x r
    std::optional<Matrix> v; // r x n
};

struct NetworkParams {
    NetworkSpec spec;
    std::vector<LayerParams> layers;

    void validate() const {
        spec.validate();
        if (layers.size() != spec.num_weight_layers()) {
            throw ShapeError("NetworkParams: layer count mismatch");
        }
        for (std::size_t l = 0; l < layers.size(); ++l) {
            std::size_t m = spec.layer_sizes[l + 1], n = spec.layer_sizes[l];
            check_shape(layers[l].w, m, n, "NetworkParams W");
            if (spec.has_predictor(l)) {
                if (!layers[l].u || !layers[l].v) {
                    throw ShapeError("NetworkParams: missing U/V on a predictor layer");
                }
                check_shape(*layers[l].u, m, spec.rank, "NetworkParams U");
                check_shape(*layers[l].v, spec.rank, n, "NetworkParams V");
            }
        }
    }

    // Glorot-uniform W; U,V seeded from the truncated SVD of the initial W so
    // the predictor starts from the same point the static-SVD baseline uses.
    static NetworkParams init(const NetworkSpec& spec, Rng& rng) {
        spec.validate();
        NetworkParams params;
        params.spec = spec;
        for (std::size_t l = 0; l < spec.num_weight_layers(); ++l) {
            std::size_t m = spec.layer_sizes[l + 1], n = spec.layer_sizes[l];
            LayerParams lp;
            lp.w = Matrix(m, n);
            double bound = std::sqrt(6.0 / static_cast<double>(m + n));
            for (double& x : lp.w.data) x = rng.uniform(-bound, bound);
            if (spec.has_predictor(l)) {
                TruncatedSvd f = truncated_svd(lp.w, spec.rank);
                lp.u = std::move(f.U);
                lp.v = std::move(f.V);
            }
            params.layers.push_back(std::move(lp));
        }
        return params;
    }
};

// Per-layer bit vector over output neurons; bit j = 1 means neuron j is
// predicted active and will be computed.
struct PredictorMask {
    std::vector<std::uint8_t> bits;

    std::size_t popcount() const {
        std::size_t c = 0;
        for (auto b : bits) c += b;
        return c;
    }
    // predicted output sparsity rho: fraction of zero bits
    double zeros_fraction() const {
        if (bits.empty()) return 0.0;
        return 1.0 - static_cast<double>(popcount()) / static_cast<double>(bits.size());
    }
};

// Everything the backward pass needs from one forward evaluation.
// mask[l] holds the gate value applied to each output of layer l: {0,1} in
// binary mode, clip(z,-1,1) in relaxed mode, all-ones when no predictor.
struct ForwardCache {
    std::vector<Vector> acts;     // a^(0..L), post-gate
    std::vector<Vector> pre_gate; // ReLU(W a) per hidden layer; logits for the final layer
    std::vector<Vector> scores;   // z = U V a per layer (empty when no predictor)
    std::vector<Vector> mask;     // gate values per layer (empty when no predictor)

    const Vector& logits() const { return acts.back(); }
};

enum class MaskKind {
    Binary, // gate = 1 iff z > 0 (zero score predicts inactive)
    Relaxed // gate = clip(z, -1, 1); differentiable surrogate used by the gradient oracle
};

// z = U (V a), computed as two matrix-vector products: O(r(m+n)).
inline Vector predictor_scores(const Matrix& u, const Matrix& v, const Vector& a) {
    if (u.cols != v.rows) throw ShapeError("predictor_scores: U cols != V rows");
    return matvec(u, matvec(v, a));
}

inline PredictorMask predict_mask(const Vector& z) {
    check_finite(z, "predict_mask");
    PredictorMask m;
    m.bits.reserve(z.size());
    for (double s : z) m.bits.push_back(s > 0.0 ? 1 : 0);
    return m;
}

namespace detail {

inline Vector relu(Vector v) {
    for (double& x : v) x = std::max(0.0, x);
    return v;
}

enum class ForwardFlavor { Dense, Gated };

inline ForwardCache forward_impl(const NetworkParams& params, const Vector& x,
                                 ForwardFlavor flavor, MaskKind kind,
                                 const std::vector<Vector>* forced_mask) {
    const NetworkSpec& spec = params.spec;
    if (x.size() != spec.layer_sizes[0]) {
        throw ShapeError("forward: input length " + std::to_string(x.size()) +
                         " != n_0 = " + std::to_string(spec.layer_sizes[0]));
    }
    check_finite(x, "forward input");

    const std::size_t num_layers = spec.num_weight_layers();
    ForwardCache cache;
    cache.acts.resize(num_layers + 1);
    cache.pre_gate.resize(num_layers);
    cache.scores.resize(num_layers);
    cache.mask.resize(num_layers);
    cache.acts[0] = x;

    for (std::size_t l = 0; l < num_layers; ++l) {
        const bool final_layer = (l + 1 == num_layers);
        Vector pre = matvec(params.layers[l].w, cache.acts[l]);
        if (final_layer) {
            cache.pre_gate[l] = pre;
            cache.acts[l + 1] = std::move(pre);
            continue;
        }
        Vector ori = relu(std::move(pre));
        cache.pre_gate[l] = ori;
        bool gate = flavor == ForwardFlavor::Gated &&
                    (spec.has_predictor(l) || (forced_mask && !(*forced_mask)[l].empty()));
        if (!gate) {
            cache.acts[l + 1] = std::move(ori);
            continue;
        }
        Vector gates;
        if (forced_mask && !(*forced_mask)[l].empty()) {
            gates = (*forced_mask)[l];
        } else {
            Vector z = predictor_scores(*params.layers[l].u, *params.layers[l].v, cache.acts[l]);
            gates.resize(z.size());
            if (kind == MaskKind::Binary) {
                for (std::size_t j = 0; j < z.size(); ++j) gates[j] = z[j] > 0.0 ? 1.0 : 0.0;
            } else {
                for (std::size_t j = 0; j < z.size(); ++j) gates[j] = std::clamp(z[j], -1.0, 1.0);
            }
            cache.scores[l] = std::move(z);
        }
        if (gates.size() != ori.size()) throw ShapeError("forward: mask length mismatch");
        Vector out(ori.size());
        for (std::size_t j = 0; j < ori.size(); ++j) out[j] = gates[j] * ori[j];
        cache.mask[l] = std::move(gates);
        cache.acts[l + 1] = std::move(out);
    }
    return cache;
}

} // namespace detail

// a^(l+1) = ReLU(W^(l) a^(l)) on hidden layers; raw logits on the last.
inline ForwardCache forward_dense(const NetworkParams& params, const Vector& x) {
    return detail::forward_impl(params, x, detail::ForwardFlavor::Dense, MaskKind::Binary,
                                nullptr);
}

// Predictor-gated pass: a^(l+1) = gate(z) o ReLU(W^(l) a^(l)) on predicted
// layers. forced_mask, when supplied, bypasses the predictor on layers whose
// entry is non-empty (used to pin gates in tests).
inline ForwardCache forward_gated(const NetworkParams& params, const Vector& x,
                                  MaskKind kind = MaskKind::Binary,
                                  const std::vector<Vector>* forced_mask = nullptr) {
    return detail::forward_impl(params, x, detail::ForwardFlavor::Gated, kind, forced_mask);
}

} // namespace sparsenn
