#include "geosem/encoder.hpp"

#include <cmath>
#include <string>

namespace geosem {

void GridEncodingConfig::validate() const {
    if (num_scales < 1) {
        throw ValidationError("grid encoding needs at least one scale, got " +
                              std::to_string(num_scales));
    }
    if (!(lambda_min > 0.0) || !(lambda_min < lambda_max)) {
        throw ValidationError("grid encoding requires 0 < lambda_min < lambda_max");
    }
}

double grid_wavelength(const GridEncodingConfig& cfg, int s) {
    if (cfg.num_scales == 1) return cfg.lambda_min;
    double t = static_cast<double>(s) / static_cast<double>(cfg.num_scales - 1);
    return cfg.lambda_min * std::pow(cfg.lambda_max / cfg.lambda_min, t);
}

Vector grid_encode(NormalizedCoord coord, const GridEncodingConfig& cfg) {
    cfg.validate();
    Vector out(cfg.output_dim());
    for (int s = 0; s < cfg.num_scales; ++s) {
        double lambda = grid_wavelength(cfg, s);
        out[4 * s + 0] = std::sin(coord.x / lambda);
        out[4 * s + 1] = std::cos(coord.x / lambda);
        out[4 * s + 2] = std::sin(coord.y / lambda);
        out[4 * s + 3] = std::cos(coord.y / lambda);
    }
    return out;
}

Matrix grid_encode_batch(std::span<const NormalizedCoord> coords,
                         const GridEncodingConfig& cfg) {
    cfg.validate();
    Matrix out(static_cast<Eigen::Index>(coords.size()), cfg.output_dim());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = grid_encode(coords[i], cfg).transpose();
    }
    return out;
}

ParamRefs LocationEncoderParams::param_refs() {
    ParamRefs refs;
    append_refs(refs, input, "encoder.input");
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        std::string prefix = "encoder.block" + std::to_string(k);
        append_refs(refs, blocks[k].first, prefix + ".first");
        append_refs(refs, blocks[k].second, prefix + ".second");
    }
    append_refs(refs, output, "encoder.output");
    return refs;
}

ParamRefs EncoderGrads::param_refs() {
    ParamRefs refs;
    append_refs(refs, input, "encoder.input");
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        std::string prefix = "encoder.block" + std::to_string(k);
        append_refs(refs, blocks[k].first, prefix + ".first");
        append_refs(refs, blocks[k].second, prefix + ".second");
    }
    append_refs(refs, output, "encoder.output");
    return refs;
}

LocationEncoderParams init_location_encoder(const GridEncodingConfig& grid,
                                            int hidden_dim,
                                            int num_residual_blocks,
                                            int output_dim, Rng& rng) {
    grid.validate();
    if (hidden_dim < 1 || output_dim < 1 || num_residual_blocks < 0) {
        throw ValidationError("invalid encoder dimensions");
    }
    LocationEncoderParams params;
    params.grid = grid;
    params.hidden_dim = hidden_dim;
    params.output_dim = output_dim;
    params.input = init_linear(grid.output_dim(), hidden_dim, rng);
    params.blocks.resize(static_cast<std::size_t>(num_residual_blocks));
    for (auto& block : params.blocks) {
        block.first = init_linear(hidden_dim, hidden_dim, rng);
        block.second = init_linear(hidden_dim, hidden_dim, rng);
    }
    params.output = init_linear(hidden_dim, output_dim, rng);
    return params;
}

Matrix encoder_forward(const LocationEncoderParams& params,
                       const Matrix& encodings, EncoderTrace* trace) {
    if (encodings.rows() == 0) {
        throw ValidationError("encoder forward on an empty batch");
    }
    if (encodings.cols() != params.input_dim()) {
        throw ValidationError("encoder input has " +
                              std::to_string(encodings.cols()) +
                              " columns, expected " +
                              std::to_string(params.input_dim()));
    }

    Matrix stem_pre = linear_forward(params.input, encodings);
    Matrix act = relu(stem_pre);

    EncoderTrace local;
    EncoderTrace& t = trace ? *trace : local;
    if (trace) {
        t.input = encodings;
        t.stem_pre = stem_pre;
        t.blocks.clear();
        t.blocks.reserve(params.blocks.size());
    }

    for (const auto& block : params.blocks) {
        Matrix first_pre = linear_forward(block.first, act);
        Matrix first_act = relu(first_pre);
        Matrix sum_pre = act + linear_forward(block.second, first_act);
        if (trace) {
            t.blocks.push_back({act, std::move(first_pre), first_act, sum_pre});
        }
        act = relu(sum_pre);
    }

    Matrix out_pre = linear_forward(params.output, act);
    Vector norms;
    Matrix output = l2_normalize_rows(out_pre, &norms, "location embedding");
    if (trace) {
        t.trunk_out = std::move(act);
        t.out_pre = std::move(out_pre);
        t.norms = std::move(norms);
        t.output = output;
    }
    return output;
}

EncoderGrads zero_encoder_grads(const LocationEncoderParams& params) {
    EncoderGrads grads;
    grads.input = zeros_like(params.input);
    grads.blocks.resize(params.blocks.size());
    for (std::size_t k = 0; k < params.blocks.size(); ++k) {
        grads.blocks[k].first = zeros_like(params.blocks[k].first);
        grads.blocks[k].second = zeros_like(params.blocks[k].second);
    }
    grads.output = zeros_like(params.output);
    return grads;
}

Matrix encoder_backward(const LocationEncoderParams& params,
                        const EncoderTrace& trace, const Matrix& upstream,
                        EncoderGrads& grads) {
    if (trace.output.rows() == 0) {
        throw ValidationError("encoder backward without forward intermediates");
    }
    if (upstream.rows() != trace.output.rows() ||
        upstream.cols() != trace.output.cols()) {
        throw ValidationError("encoder upstream gradient shape mismatch");
    }

    Matrix d_out_pre = l2_normalize_backward(trace.output, trace.norms, upstream);
    Matrix d_act = linear_backward(params.output, trace.trunk_out, d_out_pre,
                                   grads.output);

    for (std::size_t k = params.blocks.size(); k-- > 0;) {
        const auto& block = params.blocks[k];
        const auto& bt = trace.blocks[k];
        Matrix d_sum = d_act.cwiseProduct(relu_mask(bt.sum_pre));
        Matrix d_first_act = linear_backward(block.second, bt.first_act, d_sum,
                                             grads.blocks[k].second);
        Matrix d_first_pre = d_first_act.cwiseProduct(relu_mask(bt.first_pre));
        d_act = d_sum + linear_backward(block.first, bt.block_in, d_first_pre,
                                        grads.blocks[k].first);
    }

    Matrix d_stem_pre = d_act.cwiseProduct(relu_mask(trace.stem_pre));
    return linear_backward(params.input, trace.input, d_stem_pre, grads.input);
}

}  // namespace geosem
