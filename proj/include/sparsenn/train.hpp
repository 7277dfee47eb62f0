#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "sparsenn/data.hpp"
#include "sparsenn/network.hpp"
#include "sparsenn/rng.hpp"
#include "sparsenn/svd.hpp"

namespace sparsenn {

enum class PredictorMode { EndToEnd, SvdStatic, None };

// How the l1 pressure on the predictor output is distributed in binary-mask
// mode: against every unit inside the estimator window, or only against
// units currently predicted active.
enum class L1Mode { PenalizeAll, PenalizeActive };

struct HyperParams {
    double learning_rate = 0.1;
    double l1_lambda = 0.0;
    std::size_t epochs = 10;
    std::size_t batch_size = 100;
    std::uint64_t seed = 1;
    PredictorMode predictor_mode = PredictorMode::EndToEnd;
    L1Mode l1_mode = L1Mode::PenalizeAll;
    // Propagate the predictor-path term V^T U^T theta into delta^(l). The
    // default keeps the W-path-only recurrence.
    bool delta_full_path = false;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("HyperParams: learning_rate must be > 0");
        if (l1_lambda < 0.0) throw ConfigError("HyperParams: l1_lambda must be >= 0");
        if (batch_size < 1) throw ConfigError("HyperParams: batch_size must be >= 1");
    }
};

struct Gradients {
    std::vector<Matrix> dw;
    std::vector<Matrix> du; // empty matrix on layers without a predictor
    std::vector<Matrix> dv;

    static Gradients zeros_like(const NetworkParams& params) {
        Gradients g;
        for (const LayerParams& lp : params.layers) {
            g.dw.emplace_back(lp.w.rows, lp.w.cols);
            g.du.emplace_back(lp.u ? lp.u->rows : 0, lp.u ? lp.u->cols : 0);
            g.dv.emplace_back(lp.v ? lp.v->rows : 0, lp.v ? lp.v->cols : 0);
        }
        return g;
    }

    void accumulate(const Gradients& other) {
        for (std::size_t l = 0; l < dw.size(); ++l) {
            for (std::size_t i = 0; i < dw[l].data.size(); ++i) dw[l].data[i] += other.dw[l].data[i];
            for (std::size_t i = 0; i < du[l].data.size(); ++i) du[l].data[i] += other.du[l].data[i];
            for (std::size_t i = 0; i < dv[l].data.size(); ++i) dv[l].data[i] += other.dv[l].data[i];
        }
    }

    void scale(double s) {
        for (std::size_t l = 0; l < dw.size(); ++l) {
            for (double& x : dw[l].data) x *= s;
            for (double& x : du[l].data) x *= s;
            for (double& x : dv[l].data) x *= s;
        }
    }
};

// Softmax cross-entropy: loss = -log softmax(logits)[label],
// delta = softmax(logits) - onehot(label).
inline std::pair<double, Vector> loss_and_delta(const Vector& logits, std::size_t label) {
    if (label >= logits.size()) throw ShapeError("loss_and_delta: label out of range");
    check_finite(logits, "loss_and_delta logits");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    Vector delta(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        delta[i] = std::exp(logits[i] - mx);
        sum += delta[i];
    }
    double loss = std::log(sum) - (logits[label] - mx);
    for (double& v : delta) v /= sum;
    delta[label] -= 1.0;
    return {loss, delta};
}

struct BackwardOptions {
    double l1_lambda = 0.0;
    L1Mode l1_mode = L1Mode::PenalizeAll;
    bool delta_full_path = false;
    MaskKind mask_kind = MaskKind::Binary;
    bool train_predictor = true; // false: theta path skipped (static U,V)
};

// Backpropagation over the gated forward pass. Per predicted layer:
//   dL/dp     = delta o a_ori (+ l1 term)
//   dL/da_ori = delta o p
//   theta     = dL/dp o 1{|z|<1}          (straight-through window)
//   gamma     = dL/da_ori o 1{W a > 0}
//   delta^(l) = W^T gamma (+ V^T U^T theta when delta_full_path)
//   dU = theta (V a)^T,  dV = U^T theta a^T,  dW = gamma a^T
inline Gradients backward(const NetworkParams& params, const ForwardCache& cache,
                          const Vector& delta_out, const BackwardOptions& opts = {}) {
    const NetworkSpec& spec = params.spec;
    const std::size_t num_layers = spec.num_weight_layers();
    if (cache.acts.size() != num_layers + 1 || delta_out.size() != spec.layer_sizes.back()) {
        throw ShapeError("backward: cache does not match network shapes");
    }
    for (std::size_t l = 0; l < num_layers; ++l) {
        if (cache.acts[l].size() != spec.layer_sizes[l] ||
            cache.pre_gate[l].size() != spec.layer_sizes[l + 1]) {
            throw ShapeError("backward: stale cache (shape drift at layer " + std::to_string(l) +
                             ")");
        }
    }

    Gradients grads = Gradients::zeros_like(params);
    Vector delta = delta_out;

    // Final layer: raw logits, no gate, no ReLU.
    {
        std::size_t l = num_layers - 1;
        add_outer(grads.dw[l], delta, cache.acts[l]);
        delta = matvec_t(params.layers[l].w, delta);
    }

    for (std::size_t li = num_layers - 1; li-- > 0;) {
        const LayerParams& lp = params.layers[li];
        const Vector& a = cache.acts[li];
        const Vector& ori = cache.pre_gate[li];
        const bool predicted = !cache.mask[li].empty();

        Vector gamma(ori.size());
        Vector theta;
        if (predicted) {
            const Vector& gate = cache.mask[li];
            const Vector& z = cache.scores[li];
            Vector dl_dp(ori.size());
            for (std::size_t j = 0; j < ori.size(); ++j) {
                dl_dp[j] = delta[j] * ori[j];
                gamma[j] = (delta[j] * gate[j]) * (ori[j] > 0.0 ? 1.0 : 0.0);
            }
            if (opts.l1_lambda != 0.0) {
                if (opts.mask_kind == MaskKind::Relaxed) {
                    // exact subgradient of lambda * |clip(z)|
                    for (std::size_t j = 0; j < ori.size(); ++j) {
                        double s = gate[j] > 0.0 ? 1.0 : (gate[j] < 0.0 ? -1.0 : 0.0);
                        dl_dp[j] += opts.l1_lambda * s;
                    }
                } else if (opts.l1_mode == L1Mode::PenalizeAll) {
                    for (std::size_t j = 0; j < ori.size(); ++j) dl_dp[j] += opts.l1_lambda;
                } else {
                    for (std::size_t j = 0; j < ori.size(); ++j) dl_dp[j] += opts.l1_lambda * gate[j];
                }
            }
            if (!z.empty() && opts.train_predictor) {
                theta.resize(ori.size());
                for (std::size_t j = 0; j < ori.size(); ++j) {
                    theta[j] = std::fabs(z[j]) < 1.0 ? dl_dp[j] : 0.0;
                }
                Vector va = matvec(*lp.v, a);
                add_outer(grads.du[li], theta, va);
                Vector ut_theta = matvec_t(*lp.u, theta);
                add_outer(grads.dv[li], ut_theta, a);
            }
        } else {
            for (std::size_t j = 0; j < ori.size(); ++j) {
                gamma[j] = delta[j] * (ori[j] > 0.0 ? 1.0 : 0.0);
            }
        }

        add_outer(grads.dw[li], gamma, a);
        Vector next_delta = matvec_t(lp.w, gamma);
        if (predicted && !theta.empty() && opts.delta_full_path) {
            Vector ut_theta = matvec_t(*lp.u, theta);
            Vector pred_path = matvec_t(*lp.v, ut_theta);
            for (std::size_t j = 0; j < next_delta.size(); ++j) next_delta[j] += pred_path[j];
        }
        delta = std::move(next_delta);
    }
    return grads;
}

inline void sgd_step(NetworkParams& params, const Gradients& grads, double eta) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        LayerParams& lp = params.layers[l];
        if (grads.dw[l].data.size() != lp.w.data.size()) throw ShapeError("sgd_step: dW shape");
        for (std::size_t i = 0; i < lp.w.data.size(); ++i) lp.w.data[i] -= eta * grads.dw[l].data[i];
        if (lp.u && !grads.du[l].empty()) {
            for (std::size_t i = 0; i < lp.u->data.size(); ++i)
                lp.u->data[i] -= eta * grads.du[l].data[i];
            for (std::size_t i = 0; i < lp.v->data.size(); ++i)
                lp.v->data[i] -= eta * grads.dv[l].data[i];
        }
    }
}

struct EvalResult {
    double ter = 0.0;        // percent misclassified
    std::vector<double> rho; // mean predicted output sparsity per predicted layer; empty for mode None
};

// TER over the dataset, and for predictor modes the mean fraction of zero
// mask bits per predicted layer.
inline EvalResult evaluate(const NetworkParams& params, const Dataset& data, PredictorMode mode) {
    const std::size_t num_layers = params.spec.num_weight_layers();
    EvalResult res;
    std::vector<double> rho_sum(num_layers, 0.0);
    std::size_t wrong = 0;
    for (std::size_t s = 0; s < data.size(); ++s) {
        Vector x = data.sample(s);
        ForwardCache cache = mode == PredictorMode::None ? forward_dense(params, x)
                                                         : forward_gated(params, x);
        const Vector& logits = cache.logits();
        std::size_t arg = 0;
        for (std::size_t i = 1; i < logits.size(); ++i) {
            if (logits[i] > logits[arg]) arg = i;
        }
        if (static_cast<int>(arg) != data.labels[s]) ++wrong;
        if (mode != PredictorMode::None) {
            for (std::size_t l = 0; l < num_layers; ++l) {
                if (cache.mask[l].empty()) continue;
                std::size_t zeros = 0;
                for (double g : cache.mask[l]) zeros += (g == 0.0);
                rho_sum[l] += static_cast<double>(zeros) / static_cast<double>(cache.mask[l].size());
            }
        }
    }
    res.ter = 100.0 * static_cast<double>(wrong) / static_cast<double>(data.size());
    if (mode != PredictorMode::None) {
        for (std::size_t l = 0; l < num_layers; ++l) {
            if (params.spec.has_predictor(l)) {
                res.rho.push_back(rho_sum[l] / static_cast<double>(data.size()));
            }
        }
    }
    return res;
}

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double ter = 0.0;
    std::vector<double> rho;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    bool diverged = false;
    double final_ter = 0.0;
    std::vector<double> final_rho;
};

// Refresh U,V from the truncated SVD of the current W on every predictor layer.
inline void refresh_svd_predictor(NetworkParams& params) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        if (!params.spec.has_predictor(l)) continue;
        TruncatedSvd f = truncated_svd(params.layers[l].w, params.spec.rank);
        params.layers[l].u = std::move(f.U);
        params.layers[l].v = std::move(f.V);
    }
}

// Minibatch SGD, deterministic for a fixed seed. Gradients are averaged over
// the batch. Mode SvdStatic re-derives U,V from the SVD of W once per epoch
// and never backpropagates into them; mode None trains a plain dense net.
inline TrainReport train(NetworkParams& params, const Dataset& train_set, const Dataset& test_set,
                         const HyperParams& hyper) {
    hyper.validate();
    params.validate();
    if (train_set.size() == 0) throw ConfigError("train: empty training set");

    const PredictorMode mode = hyper.predictor_mode;
    BackwardOptions opts;
    opts.l1_lambda = hyper.l1_lambda;
    opts.l1_mode = hyper.l1_mode;
    opts.delta_full_path = hyper.delta_full_path;
    opts.train_predictor = mode == PredictorMode::EndToEnd;

    Rng rng(hyper.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    TrainReport report;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        if (mode == PredictorMode::SvdStatic) refresh_svd_predictor(params);
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            std::size_t end = std::min(order.size(), start + hyper.batch_size);
            Gradients batch = Gradients::zeros_like(params);
            for (std::size_t k = start; k < end; ++k) {
                Vector x = train_set.sample(order[k]);
                ForwardCache cache = mode == PredictorMode::None ? forward_dense(params, x)
                                                                 : forward_gated(params, x);
                bool finite = true;
                for (double v : cache.logits()) finite = finite && std::isfinite(v);
                if (!finite) {
                    report.diverged = true;
                    return report;
                }
                auto [loss, delta] = loss_and_delta(cache.logits(),
                                                    static_cast<std::size_t>(train_set.labels[order[k]]));
                if (!std::isfinite(loss)) {
                    report.diverged = true;
                    return report;
                }
                loss_sum += loss;
                ++seen;
                batch.accumulate(backward(params, cache, delta, opts));
            }
            batch.scale(1.0 / static_cast<double>(end - start));
            sgd_step(params, batch, hyper.learning_rate);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_loss = loss_sum / static_cast<double>(seen);
        EvalResult ev = evaluate(params, test_set, mode);
        stats.ter = ev.ter;
        stats.rho = ev.rho;
        report.epochs.push_back(std::move(stats));
    }
    if (!report.epochs.empty()) {
        report.final_ter = report.epochs.back().ter;
        report.final_rho = report.epochs.back().rho;
    }
    return report;
}

} // namespace sparsenn
