#pragma once

#include <span>
#include <vector>

#include "geosem/nn.hpp"
#include "geosem/poi.hpp"

namespace geosem {

// Multi-scale sinusoidal grid encoding over normalized coordinates.
// Wavelengths run geometrically from lambda_min to lambda_max.
struct GridEncodingConfig {
    int num_scales = 16;
    double lambda_min = 1e-3;
    double lambda_max = 2.0;

    int output_dim() const { return 4 * num_scales; }
    void validate() const;
};

// Wavelength of scale s; lambda_min when there is a single scale.
double grid_wavelength(const GridEncodingConfig& cfg, int s);

// Per scale s, ascending: [sin(x/l_s), cos(x/l_s), sin(y/l_s), cos(y/l_s)].
// Coordinates must already be normalized into [-1, 1].
Vector grid_encode(NormalizedCoord coord, const GridEncodingConfig& cfg);
Matrix grid_encode_batch(std::span<const NormalizedCoord> coords,
                         const GridEncodingConfig& cfg);

struct ResidualBlockParams {
    LinearLayer first;
    LinearLayer second;
};

// Residual FC network: input linear, relu, then blocks of
// (linear, relu, linear) added to the block input and rectified again,
// an output linear map, and row L2 normalization.
struct LocationEncoderParams {
    GridEncodingConfig grid;
    int hidden_dim = 256;
    int output_dim = 128;
    LinearLayer input;
    std::vector<ResidualBlockParams> blocks;
    LinearLayer output;

    int input_dim() const { return grid.output_dim(); }
    int num_residual_blocks() const { return static_cast<int>(blocks.size()); }
    // The optimizer and checkpoint writer address parameters through
    // this fixed order: input, block k first/second, output.
    ParamRefs param_refs();
};

LocationEncoderParams init_location_encoder(const GridEncodingConfig& grid,
                                            int hidden_dim,
                                            int num_residual_blocks,
                                            int output_dim, Rng& rng);

// Forward intermediates needed by the exact backward pass.
struct EncoderTrace {
    Matrix input;
    Matrix stem_pre;
    struct BlockTrace {
        Matrix block_in;
        Matrix first_pre;
        Matrix first_act;
        Matrix sum_pre;  // block_in + second linear output, before relu
    };
    std::vector<BlockTrace> blocks;
    Matrix trunk_out;  // activation feeding the output linear map
    Matrix out_pre;    // pre-normalization embeddings
    Vector norms;
    Matrix output;     // unit rows
};

// Rows of `encodings` are grid-encoded coordinates. Output rows are unit
// L2 norm; a zero-norm pre-normalization row raises.
Matrix encoder_forward(const LocationEncoderParams& params,
                       const Matrix& encodings, EncoderTrace* trace = nullptr);

struct EncoderGrads {
    LinearLayer input;
    std::vector<ResidualBlockParams> blocks;
    LinearLayer output;

    ParamRefs param_refs();
};

EncoderGrads zero_encoder_grads(const LocationEncoderParams& params);

// Accumulates parameter gradients into `grads`, returns gradients with
// respect to the grid encodings.
Matrix encoder_backward(const LocationEncoderParams& params,
                        const EncoderTrace& trace, const Matrix& upstream,
                        EncoderGrads& grads);

}  // namespace geosem
