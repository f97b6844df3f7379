#pragma once

#include "vpkit/geometry.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace vpkit {

struct EncoderConfig {
    int num_frequencies = 64; // m; positional encoding has 2m entries
    int hidden_dim = 256;     // d_vp
    int llm_dim = 512;        // d_llm
    int capacity = 16;        // fixed number of prompt slots
    double fourier_sigma = 1.0;
    std::uint64_t seed = 0;

    int pe_dim() const { return 2 * num_frequencies; }
    int output_rows() const { return capacity + 2; }
};

void validate(const EncoderConfig& cfg);

/// Learnable tensors of the prompt encoder plus the frozen Fourier matrix.
/// The same struct doubles as the container for gradients.
struct EncoderParams {
    Eigen::MatrixXd freq; // m x 2, frozen Gaussian frequencies

    Eigen::VectorXd corner_center; // added to the encoding of a point
    Eigen::VectorXd corner_tl;     // ... of a box's top-left corner
    Eigen::VectorXd corner_br;     // ... of a box's bottom-right corner

    Eigen::MatrixXd point_w; // d_vp x pe_dim
    Eigen::VectorXd point_b;
    Eigen::MatrixXd box_w; // d_vp x 2 pe_dim
    Eigen::VectorXd box_b;
    Eigen::MatrixXd unify_w; // d_vp x d_vp
    Eigen::VectorXd unify_b;

    Eigen::VectorXd valid_token;
    Eigen::VectorXd invalid_token;
    Eigen::VectorXd start_token;
    Eigen::VectorXd end_token;

    // projector: d_vp -> d_llm, GELU, d_llm -> d_llm
    Eigen::MatrixXd proj_w1;
    Eigen::VectorXd proj_b1;
    Eigen::MatrixXd proj_w2;
    Eigen::VectorXd proj_b2;

    bool operator==(const EncoderParams& other) const;
};

/// Named view over one tensor. Elements are addressed in row-major order
/// (which is also the order used by the parameter file).
struct TensorRef {
    const char* name;
    double* data; // column-major storage, rows x cols
    Eigen::Index rows;
    Eigen::Index cols;
    bool learnable;

    Eigen::Index size() const { return rows * cols; }
    double& at(Eigen::Index row_major_index) const {
        return data[(row_major_index % cols) * rows + row_major_index / cols];
    }
};

std::vector<TensorRef> tensors(EncoderParams& p);
std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> tensor_layout(const EncoderConfig& cfg);

/// Gaussian init from the pinned RNG. Every value is representable in 32-bit
/// float so that the parameter file round-trips bit-exactly.
EncoderParams init_params(const EncoderConfig& cfg);
EncoderParams zeros_like(const EncoderConfig& cfg);

/// gamma(v) = [cos(2 pi B v), sin(2 pi B v)]
Eigen::VectorXd fourier_encode(Point2 coord, const Eigen::MatrixXd& freq);

struct PromptEmbeddingBatch {
    Eigen::MatrixXd tokens;   // (C+2) x d_llm: start, C slots, end
    std::vector<bool> validity; // C entries, true for the leading N slots
};

/// Free-form prompts are reduced to their enclosing box first.
PromptEmbeddingBatch embed_prompts(std::span<const VisualPrompt> prompts, const EncoderParams& params,
                                   const EncoderConfig& cfg);

/// Gradients of sum(upstream .* tokens) w.r.t. every tensor; freq gets zeros.
EncoderParams encoder_backward(std::span<const VisualPrompt> prompts, const EncoderParams& params,
                               const EncoderConfig& cfg, const Eigen::MatrixXd& upstream);

struct GradCheckOptions {
    double epsilon = 1e-4;
    // Tensors larger than this are checked on a seeded random subset of entries.
    std::size_t max_entries_per_tensor = 48;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_tensor;
    std::size_t entries_checked = 0;
    double max_frozen_gradient = 0.0; // |grad| over the Fourier matrix, expected 0
};

/// Random params + random mixed point/box prompt set, loss = sum(tokens^2),
/// analytic gradient vs central finite differences.
GradCheckResult grad_check(const EncoderConfig& cfg, std::uint64_t seed, const GradCheckOptions& opts = {});

/// Relative error used by grad_check.
double relative_error(double analytic, double numeric);

void save_params(const EncoderParams& params, const EncoderConfig& cfg, const std::filesystem::path& path);

struct LoadedEncoder {
    EncoderConfig config;
    EncoderParams params;
};

LoadedEncoder load_params(const std::filesystem::path& path);
/// Throws BadParamsFile when the file's dimensions differ from `expected`.
EncoderParams load_params(const std::filesystem::path& path, const EncoderConfig& expected);

} // namespace vpkit
