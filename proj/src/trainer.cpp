#include "geosem/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace geosem {

namespace {

using nlohmann::json;

void write_u32_le(std::ostream& out, std::uint32_t value) {
    unsigned char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t read_u32_le(std::istream& in, const std::string& path) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (in.gcount() != 4) throw ValidationError(path + ": truncated header");
    std::uint32_t value = 0;
    for (int i = 0; i < 4; ++i) value |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
    return value;
}

void write_f64_le(std::ostream& out, double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, 8);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_f64_le(std::istream& in, const std::string& path) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (in.gcount() != 8) throw ValidationError(path + ": truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    double value;
    std::memcpy(&value, &bits, 8);
    return value;
}

void check_known_keys(const json& object, const std::vector<std::string>& known,
                      const std::string& context) {
    for (const auto& item : object.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
            throw ValidationError("unknown " + context + " key '" + item.key() + "'");
        }
    }
}

json grid_to_json(const GridEncodingConfig& grid) {
    return json{{"num_scales", grid.num_scales},
                {"lambda_min", grid.lambda_min},
                {"lambda_max", grid.lambda_max}};
}

GridEncodingConfig grid_from_json(const json& object) {
    check_known_keys(object, {"num_scales", "lambda_min", "lambda_max"}, "grid config");
    GridEncodingConfig grid;
    if (object.contains("num_scales")) grid.num_scales = object.at("num_scales").get<int>();
    if (object.contains("lambda_min")) grid.lambda_min = object.at("lambda_min").get<double>();
    if (object.contains("lambda_max")) grid.lambda_max = object.at("lambda_max").get<double>();
    return grid;
}

json config_to_json(const TrainConfig& config) {
    return json{{"batch_size", config.batch_size},
                {"learning_rate", config.learning_rate},
                {"temperature", config.temperature},
                {"max_epochs", config.max_epochs},
                {"early_stop_patience", config.early_stop_patience},
                {"val_fraction", config.val_fraction},
                {"seed", config.seed},
                {"description_variant", variant_name(config.description_variant)},
                {"grid", grid_to_json(config.grid)},
                {"hidden_dim", config.hidden_dim},
                {"num_residual_blocks", config.num_residual_blocks},
                {"output_dim", config.output_dim},
                {"use_spatial_projection", config.use_spatial_projection},
                {"normalize_text_before_projection", config.normalize_text_before_projection},
                {"weight_decay", config.weight_decay},
                {"grad_clip", config.grad_clip}};
}

TrainConfig config_from_json(const json& object) {
    check_known_keys(object,
                     {"batch_size", "learning_rate", "temperature", "max_epochs",
                      "early_stop_patience", "val_fraction", "seed",
                      "description_variant", "grid", "hidden_dim",
                      "num_residual_blocks", "output_dim", "use_spatial_projection",
                      "normalize_text_before_projection", "weight_decay", "grad_clip"},
                     "train config");
    TrainConfig config;
    if (object.contains("batch_size")) config.batch_size = object.at("batch_size").get<int>();
    if (object.contains("learning_rate")) config.learning_rate = object.at("learning_rate").get<double>();
    if (object.contains("temperature")) config.temperature = object.at("temperature").get<double>();
    if (object.contains("max_epochs")) config.max_epochs = object.at("max_epochs").get<int>();
    if (object.contains("early_stop_patience")) config.early_stop_patience = object.at("early_stop_patience").get<int>();
    if (object.contains("val_fraction")) config.val_fraction = object.at("val_fraction").get<double>();
    if (object.contains("seed")) config.seed = object.at("seed").get<std::uint64_t>();
    if (object.contains("description_variant")) {
        config.description_variant = parse_variant(object.at("description_variant").get<std::string>());
    }
    if (object.contains("grid")) config.grid = grid_from_json(object.at("grid"));
    if (object.contains("hidden_dim")) config.hidden_dim = object.at("hidden_dim").get<int>();
    if (object.contains("num_residual_blocks")) config.num_residual_blocks = object.at("num_residual_blocks").get<int>();
    if (object.contains("output_dim")) config.output_dim = object.at("output_dim").get<int>();
    if (object.contains("use_spatial_projection")) config.use_spatial_projection = object.at("use_spatial_projection").get<bool>();
    if (object.contains("normalize_text_before_projection")) {
        config.normalize_text_before_projection = object.at("normalize_text_before_projection").get<bool>();
    }
    if (object.contains("weight_decay")) config.weight_decay = object.at("weight_decay").get<double>();
    if (object.contains("grad_clip")) config.grad_clip = object.at("grad_clip").get<double>();
    return config;
}

LocationEncoderParams encoder_skeleton(const TrainConfig& config) {
    LocationEncoderParams params;
    params.grid = config.grid;
    params.hidden_dim = config.hidden_dim;
    params.output_dim = config.output_dim;
    params.input.weight = Matrix::Zero(config.grid.output_dim(), config.hidden_dim);
    params.input.bias = Vector::Zero(config.hidden_dim);
    params.blocks.resize(static_cast<std::size_t>(config.num_residual_blocks));
    for (auto& block : params.blocks) {
        block.first.weight = Matrix::Zero(config.hidden_dim, config.hidden_dim);
        block.first.bias = Vector::Zero(config.hidden_dim);
        block.second.weight = Matrix::Zero(config.hidden_dim, config.hidden_dim);
        block.second.bias = Vector::Zero(config.hidden_dim);
    }
    params.output.weight = Matrix::Zero(config.hidden_dim, config.output_dim);
    params.output.bias = Vector::Zero(config.output_dim);
    return params;
}

// Canonical parameter order: encoder blocks, text projection, optional
// spatial projection. The optimizer and the checkpoint payload both
// follow it.
ParamRefs checkpoint_param_refs(Checkpoint& checkpoint, int text_dim) {
    ParamRefs refs = checkpoint.encoder.param_refs();
    if (checkpoint.text_projection.weight.size() !=
        static_cast<Eigen::Index>(text_dim) * checkpoint.config.output_dim) {
        throw ValidationError("text projection shape mismatch");
    }
    refs.push_back({"projection.text.weight", checkpoint.text_projection.weight.data(),
                    static_cast<std::size_t>(checkpoint.text_projection.weight.size())});
    if (checkpoint.spatial_projection) {
        refs.push_back({"projection.spatial.weight",
                        checkpoint.spatial_projection->weight.data(),
                        static_cast<std::size_t>(checkpoint.spatial_projection->weight.size())});
    }
    return refs;
}

}  // namespace

ProjectionParams init_projection(int in_dim, int out_dim, Rng& rng) {
    return ProjectionParams{init_linear(in_dim, out_dim, rng).weight};
}

Matrix project_rows(const ProjectionParams& proj, const Matrix& rows,
                    ProjectionTrace* trace) {
    if (rows.cols() != proj.weight.rows()) {
        throw ValidationError("projection input has " + std::to_string(rows.cols()) +
                              " columns, expected " + std::to_string(proj.weight.rows()));
    }
    Matrix pre = rows * proj.weight;
    Vector norms;
    Matrix output = l2_normalize_rows(pre, &norms, "projected embedding");
    if (trace) {
        trace->input = rows;
        trace->norms = std::move(norms);
        trace->output = output;
    }
    return output;
}

Matrix project_rows_backward(const ProjectionParams& proj,
                             const ProjectionTrace& trace,
                             const Matrix& upstream, Matrix& weight_grad) {
    if (weight_grad.size() == 0) {
        weight_grad = Matrix::Zero(proj.weight.rows(), proj.weight.cols());
    }
    Matrix d_pre = l2_normalize_backward(trace.output, trace.norms, upstream);
    weight_grad.noalias() += trace.input.transpose() * d_pre;
    return d_pre * proj.weight.transpose();
}

InfoNceResult infonce_loss(const Matrix& zs, const Matrix& zp, double temperature) {
    if (!(temperature > 0.0)) {
        throw ValidationError("temperature must be positive");
    }
    if (zs.rows() != zp.rows() || zs.cols() != zp.cols()) {
        throw ValidationError("contrastive batch shape mismatch");
    }
    const Eigen::Index n = zs.rows();
    if (n < 1) {
        throw ValidationError("contrastive loss needs at least one pair");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(zs.row(i).norm() - 1.0) > 1e-4 ||
            std::abs(zp.row(i).norm() - 1.0) > 1e-4) {
            throw ValidationError("contrastive inputs must have unit-norm rows (row " +
                                  std::to_string(i) + ")");
        }
    }

    Matrix logits = (zs * zp.transpose()) / temperature;
    Vector row_lse = logsumexp_rows(logits);
    Vector col_lse = logsumexp_rows(logits.transpose());

    InfoNceResult result;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        total += (row_lse[i] - logits(i, i)) + (col_lse[i] - logits(i, i));
    }
    result.loss = total / (2.0 * static_cast<double>(n));

    Matrix row_probs = softmax_rows(logits);
    Matrix col_probs = softmax_rows(logits.transpose()).transpose();
    Matrix d_logits = row_probs + col_probs;
    d_logits.diagonal().array() -= 2.0;
    d_logits *= 1.0 / (2.0 * static_cast<double>(n) * temperature);

    result.grad_zs = d_logits * zp;
    result.grad_zp = d_logits.transpose() * zs;
    return result;
}

void TrainConfig::validate() const {
    // Collects every violation so a bad config is reported in one pass.
    std::vector<std::string> issues;
    if (batch_size < 2) issues.push_back("batch_size must be at least 2");
    if (!(learning_rate > 0.0)) issues.push_back("learning_rate must be positive");
    if (!(temperature > 0.0)) issues.push_back("temperature must be positive");
    if (max_epochs < 1) issues.push_back("max_epochs must be at least 1");
    if (early_stop_patience < 1) issues.push_back("early_stop_patience must be at least 1");
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0)) {
        issues.push_back("val_fraction must lie in (0, 1)");
    }
    try {
        grid.validate();
    } catch (const ValidationError& e) {
        issues.push_back(e.what());
    }
    if (hidden_dim < 1) issues.push_back("hidden_dim must be positive");
    if (num_residual_blocks < 0) issues.push_back("num_residual_blocks must be non-negative");
    if (output_dim < 1) issues.push_back("output_dim must be positive");
    if (weight_decay < 0.0) issues.push_back("weight_decay must be non-negative");
    if (grad_clip < 0.0) issues.push_back("grad_clip must be non-negative");
    if (issues.empty()) return;
    std::string joined = issues.front();
    for (std::size_t i = 1; i < issues.size(); ++i) joined += "; " + issues[i];
    throw ValidationError(joined);
}

TrainConfig train_config_from_json_text(const std::string& text) {
    json object;
    try {
        object = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    if (!object.is_object()) {
        throw ValidationError("config root must be a JSON object");
    }
    TrainConfig config;
    try {
        config = config_from_json(object);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config field error: ") + e.what());
    }
    config.validate();
    return config;
}

std::string train_config_to_json_text(const TrainConfig& config) {
    return config_to_json(config).dump(2) + "\n";
}

TrainConfig load_train_config(const std::string& path) {
    return train_config_from_json_text(read_text_file(path));
}

std::string config_hash(const TrainConfig& config) {
    std::string canonical = config_to_json(config).dump();
    return hex64(fnv1a64(canonical));
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    // Refs are used read-only here.
    auto& mutable_cp = const_cast<Checkpoint&>(checkpoint);
    ParamRefs params = checkpoint_param_refs(
        mutable_cp, checkpoint.text_projection.in_dim());

    AdamState optimizer = checkpoint.optimizer;
    if (!optimizer.initialized()) optimizer.init(params);
    if (optimizer.first_moment.size() != params.size()) {
        throw ValidationError("optimizer state does not match parameter layout");
    }

    json blocks = json::array();
    std::size_t payload_count = 0;
    for (const auto& ref : params) {
        blocks.push_back({{"name", ref.name}, {"size", ref.size}});
        payload_count += ref.size;
    }
    for (const auto& ref : params) {
        blocks.push_back({{"name", "adam.m." + ref.name}, {"size", ref.size}});
        payload_count += ref.size;
    }
    for (const auto& ref : params) {
        blocks.push_back({{"name", "adam.v." + ref.name}, {"size", ref.size}});
        payload_count += ref.size;
    }

    json header{{"config", config_to_json(checkpoint.config)},
                {"config_hash", checkpoint.hash},
                {"epoch", checkpoint.epoch},
                {"best_val_loss", checkpoint.best_val_loss},
                {"text_dim", checkpoint.text_projection.in_dim()},
                {"normalizer",
                 {{"lon_min", checkpoint.normalizer.lon_min},
                  {"lon_max", checkpoint.normalizer.lon_max},
                  {"lat_min", checkpoint.normalizer.lat_min},
                  {"lat_max", checkpoint.normalizer.lat_max}}},
                {"optimizer",
                 {{"step", optimizer.step},
                  {"learning_rate", optimizer.config.learning_rate},
                  {"beta1", optimizer.config.beta1},
                  {"beta2", optimizer.config.beta2},
                  {"epsilon", optimizer.config.epsilon},
                  {"weight_decay", optimizer.config.weight_decay},
                  {"grad_clip", optimizer.config.grad_clip}}},
                {"blocks", blocks},
                {"payload_count", payload_count}};
    std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open '" + path + "' for writing");
    out.write("GCKP", 4);
    write_u32_le(out, 1);
    write_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    auto write_block = [&](const double* data, std::size_t size) {
        for (std::size_t i = 0; i < size; ++i) write_f64_le(out, data[i]);
    };
    for (const auto& ref : params) write_block(ref.data, ref.size);
    for (std::size_t i = 0; i < params.size(); ++i) {
        write_block(optimizer.first_moment[i].data(), params[i].size);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        write_block(optimizer.second_moment[i].data(), params[i].size);
    }
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "GCKP", 4) != 0) {
        throw ValidationError(path + ": magic mismatch, not a checkpoint file");
    }
    std::uint32_t version = read_u32_le(in, path);
    if (version != 1) {
        throw ValidationError(path + ": unsupported checkpoint version " +
                              std::to_string(version));
    }
    std::uint32_t header_len = read_u32_le(in, path);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    if (static_cast<std::uint32_t>(in.gcount()) != header_len) {
        throw ValidationError(path + ": truncated header");
    }

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw ValidationError(path + ": header parse error: " + e.what());
    }

    Checkpoint checkpoint;
    try {
        checkpoint.config = config_from_json(header.at("config"));
        checkpoint.config.validate();
        checkpoint.hash = header.at("config_hash").get<std::string>();
        checkpoint.epoch = header.at("epoch").get<int>();
        checkpoint.best_val_loss = header.at("best_val_loss").get<double>();
        const json& norm = header.at("normalizer");
        checkpoint.normalizer.lon_min = norm.at("lon_min").get<double>();
        checkpoint.normalizer.lon_max = norm.at("lon_max").get<double>();
        checkpoint.normalizer.lat_min = norm.at("lat_min").get<double>();
        checkpoint.normalizer.lat_max = norm.at("lat_max").get<double>();

        int text_dim = header.at("text_dim").get<int>();
        checkpoint.encoder = encoder_skeleton(checkpoint.config);
        checkpoint.text_projection.weight =
            Matrix::Zero(text_dim, checkpoint.config.output_dim);
        if (checkpoint.config.use_spatial_projection) {
            checkpoint.spatial_projection = ProjectionParams{Matrix::Zero(
                checkpoint.config.output_dim, checkpoint.config.output_dim)};
        }

        ParamRefs params = checkpoint_param_refs(checkpoint, text_dim);
        checkpoint.optimizer.config.learning_rate =
            header.at("optimizer").at("learning_rate").get<double>();
        checkpoint.optimizer.config.beta1 = header.at("optimizer").at("beta1").get<double>();
        checkpoint.optimizer.config.beta2 = header.at("optimizer").at("beta2").get<double>();
        checkpoint.optimizer.config.epsilon = header.at("optimizer").at("epsilon").get<double>();
        checkpoint.optimizer.config.weight_decay =
            header.at("optimizer").at("weight_decay").get<double>();
        checkpoint.optimizer.config.grad_clip =
            header.at("optimizer").at("grad_clip").get<double>();
        checkpoint.optimizer.init(params);
        checkpoint.optimizer.step = header.at("optimizer").at("step").get<long long>();

        const json& blocks = header.at("blocks");
        std::size_t expected_blocks = params.size() * 3;
        if (blocks.size() != expected_blocks) {
            throw ValidationError(path + ": checkpoint declares " +
                                  std::to_string(blocks.size()) + " blocks, expected " +
                                  std::to_string(expected_blocks));
        }
        auto check_block = [&](const json& block, const std::string& name,
                               std::size_t size) {
            if (block.at("name").get<std::string>() != name ||
                block.at("size").get<std::size_t>() != size) {
                throw ValidationError(path + ": checkpoint block mismatch for '" +
                                      name + "'");
            }
        };
        for (std::size_t i = 0; i < params.size(); ++i) {
            check_block(blocks[i], params[i].name, params[i].size);
            check_block(blocks[params.size() + i], "adam.m." + params[i].name,
                        params[i].size);
            check_block(blocks[2 * params.size() + i], "adam.v." + params[i].name,
                        params[i].size);
        }

        for (const auto& ref : params) {
            for (std::size_t i = 0; i < ref.size; ++i) ref.data[i] = read_f64_le(in, path);
        }
        for (std::size_t b = 0; b < params.size(); ++b) {
            for (std::size_t i = 0; i < params[b].size; ++i) {
                checkpoint.optimizer.first_moment[b][static_cast<Eigen::Index>(i)] =
                    read_f64_le(in, path);
            }
        }
        for (std::size_t b = 0; b < params.size(); ++b) {
            for (std::size_t i = 0; i < params[b].size; ++i) {
                checkpoint.optimizer.second_moment[b][static_cast<Eigen::Index>(i)] =
                    read_f64_le(in, path);
            }
        }
    } catch (const json::exception& e) {
        throw ValidationError(path + ": header field error: " + e.what());
    }

    if (config_hash(checkpoint.config) != checkpoint.hash) {
        throw ValidationError(path + ": config hash mismatch");
    }
    return checkpoint;
}

void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out << "epoch,train_loss,val_loss\n";
    for (const auto& entry : log) {
        out << entry.epoch << ',' << format_double(entry.train_loss) << ','
            << format_double(entry.val_loss) << '\n';
    }
    write_text_file(path, out.str());
}

TrainResult train(const std::vector<PoiRecord>& records,
                  const EmbeddingStore& store, const TrainConfig& config) {
    config.validate();

    TrainResult result;
    result.split = split_dataset(records, config.val_fraction, config.seed);
    if (result.split.val_ids.empty()) {
        throw ValidationError("validation split is empty; raise val_fraction");
    }
    if (static_cast<int>(result.split.train_ids.size()) < config.batch_size) {
        throw ValidationError("batch_size " + std::to_string(config.batch_size) +
                              " exceeds train split size " +
                              std::to_string(result.split.train_ids.size()));
    }

    CoordNormalizer normalizer = fit_normalizer(records);

    std::unordered_map<std::string, std::size_t> row_of;
    row_of.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) row_of.emplace(records[i].id, i);

    const int text_dim = store.dim();
    std::vector<NormalizedCoord> coords(records.size());
    Matrix all_text(static_cast<Eigen::Index>(records.size()), text_dim);
    for (std::size_t i = 0; i < records.size(); ++i) {
        coords[i] = normalizer.normalize(records[i].lon, records[i].lat);
        auto vec = store.vector(records[i].id);
        for (int j = 0; j < text_dim; ++j) {
            all_text(static_cast<Eigen::Index>(i), j) =
                static_cast<double>(vec[static_cast<std::size_t>(j)]);
        }
    }
    Matrix all_enc = grid_encode_batch(coords, config.grid);
    if (config.normalize_text_before_projection) {
        all_text = l2_normalize_rows(all_text, nullptr, "text embedding");
    }

    Rng rng(config.seed);
    Checkpoint work;
    work.config = config;
    work.hash = config_hash(config);
    work.normalizer = normalizer;
    work.encoder = init_location_encoder(config.grid, config.hidden_dim,
                                         config.num_residual_blocks,
                                         config.output_dim, rng);
    work.text_projection = init_projection(text_dim, config.output_dim, rng);
    if (config.use_spatial_projection) {
        work.spatial_projection =
            init_projection(config.output_dim, config.output_dim, rng);
    }

    ParamRefs params = checkpoint_param_refs(work, text_dim);
    work.optimizer.config.learning_rate = config.learning_rate;
    work.optimizer.config.weight_decay = config.weight_decay;
    work.optimizer.config.grad_clip = config.grad_clip;
    work.optimizer.init(params);

    auto rows_for = [&](const std::vector<std::string>& ids) {
        std::vector<std::size_t> rows;
        rows.reserve(ids.size());
        for (const auto& id : ids) rows.push_back(row_of.at(id));
        return rows;
    };
    std::vector<std::size_t> train_rows = rows_for(result.split.train_ids);
    std::vector<std::size_t> val_rows = rows_for(result.split.val_ids);

    auto gather = [&](const Matrix& source, std::span<const std::size_t> rows) {
        Matrix out(static_cast<Eigen::Index>(rows.size()), source.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.row(static_cast<Eigen::Index>(i)) =
                source.row(static_cast<Eigen::Index>(rows[i]));
        }
        return out;
    };

    auto batch_loss = [&](std::span<const std::size_t> rows, bool update,
                          int epoch) -> double {
        Matrix enc_batch = gather(all_enc, rows);
        Matrix text_batch = gather(all_text, rows);

        EncoderTrace enc_trace;
        Matrix enc_out = encoder_forward(work.encoder, enc_batch,
                                         update ? &enc_trace : nullptr);
        ProjectionTrace spatial_trace;
        Matrix zs = work.spatial_projection
                        ? project_rows(*work.spatial_projection, enc_out,
                                       update ? &spatial_trace : nullptr)
                        : enc_out;
        ProjectionTrace text_trace;
        Matrix zp = project_rows(work.text_projection, text_batch,
                                 update ? &text_trace : nullptr);

        InfoNceResult loss = infonce_loss(zs, zp, config.temperature);
        if (!std::isfinite(loss.loss)) {
            throw std::runtime_error("non-finite loss at epoch " +
                                     std::to_string(epoch) + " (" +
                                     (update ? "train" : "validation") + " batch)");
        }
        if (!update) return loss.loss;

        EncoderGrads enc_grads = zero_encoder_grads(work.encoder);
        Matrix text_proj_grad;
        Matrix spatial_proj_grad;
        Matrix d_enc_out =
            work.spatial_projection
                ? project_rows_backward(*work.spatial_projection, spatial_trace,
                                        loss.grad_zs, spatial_proj_grad)
                : loss.grad_zs;
        encoder_backward(work.encoder, enc_trace, d_enc_out, enc_grads);
        project_rows_backward(work.text_projection, text_trace, loss.grad_zp,
                              text_proj_grad);

        ParamRefs grad_refs = enc_grads.param_refs();
        grad_refs.push_back({"projection.text.weight", text_proj_grad.data(),
                             static_cast<std::size_t>(text_proj_grad.size())});
        if (work.spatial_projection) {
            grad_refs.push_back({"projection.spatial.weight", spatial_proj_grad.data(),
                                 static_cast<std::size_t>(spatial_proj_grad.size())});
        }
        adam_step(params, grad_refs, work.optimizer);
        return loss.loss;
    };

    const std::size_t batch = static_cast<std::size_t>(config.batch_size);
    Checkpoint best;
    double best_val = std::numeric_limits<double>::infinity();
    int epochs_since_best = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        rng.shuffle(train_rows);
        double train_total = 0.0;
        std::size_t train_batches = 0;
        for (std::size_t start = 0; start + batch <= train_rows.size(); start += batch) {
            train_total += batch_loss(
                std::span<const std::size_t>(train_rows).subspan(start, batch), true,
                epoch);
            ++train_batches;
        }

        double val_total = 0.0;
        std::size_t val_batches = 0;
        if (val_rows.size() < batch) {
            // Too few samples for a full batch; score them as one batch.
            val_total = batch_loss(val_rows, false, epoch);
            val_batches = 1;
        } else {
            for (std::size_t start = 0; start + batch <= val_rows.size(); start += batch) {
                val_total += batch_loss(
                    std::span<const std::size_t>(val_rows).subspan(start, batch), false,
                    epoch);
                ++val_batches;
            }
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = train_total / static_cast<double>(train_batches);
        entry.val_loss = val_total / static_cast<double>(val_batches);
        result.log.push_back(entry);

        if (entry.val_loss < best_val) {
            best_val = entry.val_loss;
            best = work;
            best.epoch = epoch;
            best.best_val_loss = entry.val_loss;
            epochs_since_best = 0;
        } else if (++epochs_since_best >= config.early_stop_patience) {
            break;
        }
    }

    result.checkpoint = std::move(best);
    return result;
}

Matrix encode_locations(const Checkpoint& checkpoint,
                        std::span<const LonLat> coords) {
    if (coords.empty()) {
        return Matrix(0, checkpoint.config.output_dim);
    }
    std::vector<NormalizedCoord> normalized(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) {
        normalized[i] =
            checkpoint.normalizer.normalize(coords[i].lon, coords[i].lat);
    }
    Matrix encodings = grid_encode_batch(normalized, checkpoint.config.grid);
    Matrix output = encoder_forward(checkpoint.encoder, encodings);
    if (checkpoint.spatial_projection) {
        output = project_rows(*checkpoint.spatial_projection, output);
    }
    return output;
}

}  // namespace geosem
