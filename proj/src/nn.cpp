#include "geosem/nn.hpp"

#include <cmath>

namespace geosem {

Matrix relu(const Matrix& x) {
    return x.cwiseMax(0.0);
}

Matrix relu_mask(const Matrix& pre) {
    return (pre.array() > 0.0).cast<double>();
}

Vector logsumexp_rows(const Matrix& logits) {
    Vector shift = logits.rowwise().maxCoeff();
    Vector out(logits.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        out[i] = shift[i] +
                 std::log((logits.row(i).array() - shift[i]).exp().sum());
    }
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Vector lse = logsumexp_rows(logits);
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        out.row(i) = (logits.row(i).array() - lse[i]).exp();
    }
    return out;
}

Matrix l2_normalize_rows(const Matrix& rows, Vector* norms_out,
                         const char* context) {
    Vector norms = rows.rowwise().norm();
    for (Eigen::Index i = 0; i < norms.size(); ++i) {
        if (!(norms[i] > 1e-12)) {
            throw std::runtime_error(std::string(context) + ": zero-norm row " +
                                     std::to_string(i));
        }
    }
    Matrix out = norms.cwiseInverse().asDiagonal() * rows;
    if (norms_out) *norms_out = std::move(norms);
    return out;
}

Matrix l2_normalize_backward(const Matrix& normalized, const Vector& norms,
                             const Matrix& upstream) {
    // y = u/|u|  =>  du = (g - (g.y) y) / |u|
    Vector dots = (upstream.array() * normalized.array()).rowwise().sum();
    Matrix out = upstream - dots.asDiagonal() * normalized;
    return norms.cwiseInverse().asDiagonal() * out;
}

LinearLayer init_linear(int in_dim, int out_dim, Rng& rng) {
    LinearLayer layer;
    layer.weight.resize(in_dim, out_dim);
    layer.bias = Vector::Zero(out_dim);
    const double bound = std::sqrt(3.0 / static_cast<double>(in_dim));
    for (int r = 0; r < in_dim; ++r) {
        for (int c = 0; c < out_dim; ++c) {
            layer.weight(r, c) = rng.uniform(-bound, bound);
        }
    }
    return layer;
}

Matrix linear_forward(const LinearLayer& layer, const Matrix& x) {
    if (x.cols() != layer.weight.rows()) {
        throw std::runtime_error("linear_forward: shape mismatch, input has " +
                                 std::to_string(x.cols()) + " columns, layer expects " +
                                 std::to_string(layer.weight.rows()));
    }
    return (x * layer.weight).rowwise() + layer.bias.transpose();
}

Matrix linear_backward(const LinearLayer& layer, const Matrix& x,
                       const Matrix& upstream, LinearLayer& grad) {
    grad.weight.noalias() += x.transpose() * upstream;
    grad.bias.noalias() += upstream.colwise().sum().transpose();
    return upstream * layer.weight.transpose();
}

LinearLayer zeros_like(const LinearLayer& layer) {
    LinearLayer out;
    out.weight = Matrix::Zero(layer.weight.rows(), layer.weight.cols());
    out.bias = Vector::Zero(layer.bias.size());
    return out;
}

void append_refs(ParamRefs& refs, LinearLayer& layer, const std::string& prefix) {
    refs.push_back({prefix + ".weight", layer.weight.data(),
                    static_cast<std::size_t>(layer.weight.size())});
    refs.push_back({prefix + ".bias", layer.bias.data(),
                    static_cast<std::size_t>(layer.bias.size())});
}

std::size_t total_size(const ParamRefs& refs) {
    std::size_t n = 0;
    for (const auto& r : refs) n += r.size;
    return n;
}

Vector flatten(const ParamRefs& refs) {
    Vector out(static_cast<Eigen::Index>(total_size(refs)));
    Eigen::Index offset = 0;
    for (const auto& r : refs) {
        for (std::size_t i = 0; i < r.size; ++i) out[offset++] = r.data[i];
    }
    return out;
}

void unflatten(const ParamRefs& refs, const Vector& values) {
    if (static_cast<std::size_t>(values.size()) != total_size(refs)) {
        throw std::runtime_error("unflatten: size mismatch");
    }
    Eigen::Index offset = 0;
    for (const auto& r : refs) {
        for (std::size_t i = 0; i < r.size; ++i) r.data[i] = values[offset++];
    }
}

void AdamState::init(const ParamRefs& params) {
    step = 0;
    first_moment.clear();
    second_moment.clear();
    for (const auto& p : params) {
        first_moment.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size)));
        second_moment.push_back(Vector::Zero(static_cast<Eigen::Index>(p.size)));
    }
}

void adam_step(const ParamRefs& params, const ParamRefs& grads, AdamState& state) {
    if (!state.initialized()) state.init(params);
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw std::runtime_error("adam_step: parameter/gradient layout mismatch");
    }

    double clip_scale = 1.0;
    if (state.config.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& g : grads) {
            for (std::size_t i = 0; i < g.size; ++i) sq += g.data[i] * g.data[i];
        }
        const double norm = std::sqrt(sq);
        if (norm > state.config.grad_clip) clip_scale = state.config.grad_clip / norm;
    }

    state.step += 1;
    const double b1 = state.config.beta1;
    const double b2 = state.config.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        const auto& g = grads[k];
        if (p.size != g.size) {
            throw std::runtime_error("adam_step: shape mismatch for " + p.name);
        }
        Vector& m = state.first_moment[k];
        Vector& v = state.second_moment[k];
        for (std::size_t i = 0; i < p.size; ++i) {
            double gi = g.data[i] * clip_scale;
            if (!std::isfinite(gi)) {
                throw std::runtime_error("adam_step: non-finite gradient in " + p.name +
                                         " at component " + std::to_string(i));
            }
            if (state.config.weight_decay > 0.0) {
                gi += state.config.weight_decay * p.data[i];
            }
            const Eigen::Index ei = static_cast<Eigen::Index>(i);
            m[ei] = b1 * m[ei] + (1.0 - b1) * gi;
            v[ei] = b2 * v[ei] + (1.0 - b2) * gi * gi;
            const double m_hat = m[ei] / bc1;
            const double v_hat = v[ei] / bc2;
            p.data[i] -= state.config.learning_rate * m_hat /
                         (std::sqrt(v_hat) + state.config.epsilon);
        }
    }
}

FiniteDiffReport finite_diff_check(
    const std::function<double(const Vector&)>& loss, const Vector& at,
    const Vector& analytic_grad, double step_size,
    const std::vector<std::size_t>* coords) {
    if (analytic_grad.size() != at.size()) {
        throw std::runtime_error("finite_diff_check: gradient size mismatch");
    }
    std::vector<std::size_t> all;
    if (!coords) {
        all.resize(static_cast<std::size_t>(at.size()));
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        coords = &all;
    }

    FiniteDiffReport report;
    Vector probe = at;
    for (std::size_t idx : *coords) {
        const Eigen::Index i = static_cast<Eigen::Index>(idx);
        const double saved = probe[i];
        probe[i] = saved + step_size;
        const double up = loss(probe);
        probe[i] = saved - step_size;
        const double down = loss(probe);
        probe[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw std::runtime_error("finite_diff_check: non-finite loss at coordinate " +
                                     std::to_string(idx));
        }
        const double numeric = (up - down) / (2.0 * step_size);
        const double analytic = analytic_grad[i];
        const double denom = std::max(std::abs(analytic), std::abs(numeric));
        const double rel = denom < 1e-7 ? 0.0 : std::abs(analytic - numeric) / denom;
        if (rel >= report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = idx;
            report.analytic_at_worst = analytic;
            report.numeric_at_worst = numeric;
        }
        ++report.checked;
    }
    return report;
}

}  // namespace geosem
