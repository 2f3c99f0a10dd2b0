#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "geosem/common.hpp"

namespace geosem {

// All training arithmetic is 64-bit, row-major semantics: one sample per row.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

Matrix relu(const Matrix& x);
// 1.0 where the pre-activation is strictly positive, else 0.0.
Matrix relu_mask(const Matrix& pre);

// Row-wise log-sum-exp with max shift, safe for entries like +1000.
Vector logsumexp_rows(const Matrix& logits);
// Rows sum to 1 within 1e-12 even for extreme inputs.
Matrix softmax_rows(const Matrix& logits);

// Scales every row to unit L2 norm; reports pre-normalization norms.
// Rows with norm below 1e-12 raise (the caller names the context).
Matrix l2_normalize_rows(const Matrix& rows, Vector* norms_out,
                         const char* context);
// Backward through y = u / |u| given upstream d/dy.
Matrix l2_normalize_backward(const Matrix& normalized, const Vector& norms,
                             const Matrix& upstream);

// y = x * W + b, with W of shape in x out.
struct LinearLayer {
    Matrix weight;
    Vector bias;

    int in_dim() const { return static_cast<int>(weight.rows()); }
    int out_dim() const { return static_cast<int>(weight.cols()); }
};

// Uniform init in [-sqrt(3/fan_in), sqrt(3/fan_in)], zero bias.
LinearLayer init_linear(int in_dim, int out_dim, Rng& rng);

Matrix linear_forward(const LinearLayer& layer, const Matrix& x);
// Accumulates parameter gradients into `grad`, returns d/dx.
Matrix linear_backward(const LinearLayer& layer, const Matrix& x,
                       const Matrix& upstream, LinearLayer& grad);
LinearLayer zeros_like(const LinearLayer& layer);

// Named view over a parameter (or gradient) block. The optimizer, the
// finite-difference checker and the checkpoint writer all address
// parameters through these flat spans.
struct ParamRef {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
};
using ParamRefs = std::vector<ParamRef>;

void append_refs(ParamRefs& refs, LinearLayer& layer, const std::string& prefix);
std::size_t total_size(const ParamRefs& refs);
Vector flatten(const ParamRefs& refs);
void unflatten(const ParamRefs& refs, const Vector& values);

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;  // 0 disables
    double grad_clip = 0.0;     // global-norm clip, 0 disables
};

struct AdamState {
    AdamConfig config;
    long long step = 0;
    std::vector<Vector> first_moment;
    std::vector<Vector> second_moment;

    void init(const ParamRefs& params);
    bool initialized() const { return !first_moment.empty(); }
};

// Standard Adam with bias correction. Throws on non-finite gradient
// components, naming the parameter block.
void adam_step(const ParamRefs& params, const ParamRefs& grads, AdamState& state);

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::size_t checked = 0;
};

// Central differences of `loss` against `analytic_grad`, coordinate by
// coordinate (or over `coords` when given). Relative error uses
// |a - n| / max(|a|, |n|); components where both sides are below 1e-7
// count as exact.
FiniteDiffReport finite_diff_check(
    const std::function<double(const Vector&)>& loss, const Vector& at,
    const Vector& analytic_grad, double step_size,
    const std::vector<std::size_t>* coords = nullptr);

}  // namespace geosem
