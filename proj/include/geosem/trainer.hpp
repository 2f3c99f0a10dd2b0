#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "geosem/embedding.hpp"
#include "geosem/encoder.hpp"
#include "geosem/nn.hpp"
#include "geosem/poi.hpp"

namespace geosem {

// Bias-free linear map followed by row L2 normalization. Used for the
// text branch, and for the optional spatial branch when enabled.
struct ProjectionParams {
    Matrix weight;  // in_dim x out_dim

    int in_dim() const { return static_cast<int>(weight.rows()); }
    int out_dim() const { return static_cast<int>(weight.cols()); }
};

ProjectionParams init_projection(int in_dim, int out_dim, Rng& rng);

struct ProjectionTrace {
    Matrix input;
    Vector norms;
    Matrix output;
};

Matrix project_rows(const ProjectionParams& proj, const Matrix& rows,
                    ProjectionTrace* trace = nullptr);
// Accumulates into weight_grad, returns gradients w.r.t. the input rows.
Matrix project_rows_backward(const ProjectionParams& proj,
                             const ProjectionTrace& trace,
                             const Matrix& upstream, Matrix& weight_grad);

struct InfoNceResult {
    double loss = 0.0;
    Matrix grad_zs;
    Matrix grad_zp;
};

// Symmetric batch-softmax alignment loss over S = Z_s * Z_p^T. Both
// matrices must have unit-norm rows (checked to 1e-4); temperature > 0.
InfoNceResult infonce_loss(const Matrix& zs, const Matrix& zp, double temperature);

struct TrainConfig {
    int batch_size = 128;
    double learning_rate = 1e-4;
    double temperature = 0.07;
    int max_epochs = 100;
    int early_stop_patience = 10;
    double val_fraction = 0.1;
    std::uint64_t seed = 0;
    DescriptionVariant description_variant = DescriptionVariant::NameAndType;
    GridEncodingConfig grid;
    int hidden_dim = 256;
    int num_residual_blocks = 2;
    int output_dim = 128;
    // The model maps text into the location embedding space; these
    // switches cover the reverse composition and pre-projection
    // normalization without changing the default behavior.
    bool use_spatial_projection = false;
    bool normalize_text_before_projection = false;
    double weight_decay = 0.0;
    double grad_clip = 0.0;

    void validate() const;
};

TrainConfig train_config_from_json_text(const std::string& text);
std::string train_config_to_json_text(const TrainConfig& config);
TrainConfig load_train_config(const std::string& path);

// FNV-1a over the canonical JSON form, hex encoded; stable across runs.
std::string config_hash(const TrainConfig& config);

struct Checkpoint {
    TrainConfig config;
    std::string hash;
    CoordNormalizer normalizer;
    LocationEncoderParams encoder;
    ProjectionParams text_projection;
    std::optional<ProjectionParams> spatial_projection;
    AdamState optimizer;
    int epoch = 0;
    double best_val_loss = 0.0;
};

// Binary file: magic GCKP, version u32 = 1, header length u32, JSON
// header, then the named float64 blocks raw little-endian. Reload is
// bit-identical.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

void write_training_log(const std::string& path, const std::vector<EpochLog>& log);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
    DatasetSplit split;
};

// Epoch loop with seeded shuffling, full batches only, Adam updates and
// best-validation early stopping. Every record id must have a text
// embedding in the store.
TrainResult train(const std::vector<PoiRecord>& records,
                  const EmbeddingStore& store, const TrainConfig& config);

// Embeds raw lon/lat through the stored normalizer and encoder.
// Coordinates outside the fitted bounding box extrapolate smoothly.
Matrix encode_locations(const Checkpoint& checkpoint,
                        std::span<const LonLat> coords);

}  // namespace geosem
