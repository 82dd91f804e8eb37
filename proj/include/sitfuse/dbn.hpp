#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sitfuse/rng.hpp"

namespace sitfuse::dbn {

class DbnError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class RbmKind { GaussianBernoulli, BernoulliBernoulli };

using Matrix = Eigen::MatrixXf;
using Vector = Eigen::VectorXf;

// One RBM layer. For the Gaussian-Bernoulli kind the visible units carry a
// per-unit log standard deviation (sigma_i = exp(log_sigma_i)); hidden units
// are always Bernoulli. Batches are row-major: one sample per row.
struct RbmLayer {
    RbmKind kind = RbmKind::BernoulliBernoulli;
    Matrix weights;       // V x H
    Vector visible_bias;  // V
    Vector hidden_bias;   // H
    Vector log_sigma;     // V (GB only; ignored for BB)

    int visible_units() const { return static_cast<int>(weights.rows()); }
    int hidden_units() const { return static_cast<int>(weights.cols()); }
    Eigen::ArrayXf sigma() const { return log_sigma.array().exp(); }
    void validate() const;
};

struct TrainConfig {
    float learning_rate = 1e-3f;
    float momentum = 0.5f;
    float weight_decay = 1e-4f;
    int cd_k = 1;
    int epochs = 10;
    int batch_size = 128;
    uint64_t seed = 0;
    bool learn_sigma = false;

    void validate() const;
};

// Greedily stacked layers: layer 0 Gaussian-Bernoulli, the rest Bernoulli.
struct DbnModel {
    std::vector<RbmLayer> layers;

    int input_dim() const { return layers.empty() ? 0 : layers.front().visible_units(); }
    int latent_dim() const { return layers.empty() ? 0 : layers.back().hidden_units(); }
    void validate() const;
};

RbmLayer init_layer(RbmKind kind, int visible, int hidden, uint64_t seed);

// p(h=1|v), one row per sample. Logistic arguments are clamped at +-500.
Matrix hidden_probs(const RbmLayer& layer, const Matrix& visible);

enum class ReconMode { Mean, Sample };

// Visible reconstruction from hidden activations. Mean mode is
// deterministic; Sample draws Bernoulli (BB) or Normal(mean, sigma^2) (GB).
Matrix visible_reconstruct(const RbmLayer& layer, const Matrix& hidden, ReconMode mode,
                           SplitMix64& rng);

// CD-k gradient estimate (the ascent direction on the log-likelihood) for a
// batch, before momentum/weight-decay shaping. Exposed so the estimate can
// be validated against exact enumeration on small models.
struct CdGradient {
    Matrix weights;
    Vector visible_bias;
    Vector hidden_bias;
    Vector log_sigma;
};
CdGradient cd_gradient(const RbmLayer& layer, const Matrix& batch, int cd_k, SplitMix64& rng);

struct CdVelocity {
    Matrix weights;
    Vector visible_bias;
    Vector hidden_bias;
    Vector log_sigma;

    static CdVelocity zeros(const RbmLayer& layer);
};

// One CD-k parameter update in place; returns the mean squared error of the
// one-step mean-field reconstruction of the batch.
double cd_step(RbmLayer& layer, const Matrix& batch, const TrainConfig& cfg, SplitMix64& rng,
               CdVelocity& velocity);

// Mini-batch training over shuffled epochs; returns the per-epoch mean
// reconstruction error trace.
std::vector<double> train_layer(RbmLayer& layer, const Matrix& samples, const TrainConfig& cfg);

// Greedy layer-wise stack: hidden probabilities (mean-field, not samples)
// feed the next layer. layer_dims = {V, H1, H2, ...}, at most 3 hidden dims.
// When `traces` is given it receives one reconstruction-error trace per layer.
DbnModel train_dbn(const Matrix& samples, const std::vector<int>& layer_dims,
                   const std::vector<TrainConfig>& configs,
                   std::vector<std::vector<double>>* traces = nullptr);

// Deterministic mean-field encoding through all layers.
Matrix encode(const DbnModel& model, const Matrix& samples);

long parameter_count(const DbnModel& model);

// Checkpoint: manifest.json plus one raw little-endian binary32 file per
// tensor, row-major, named layer<i>_{W,b,c,z}.bin.
void save_dbn(const DbnModel& model, const std::filesystem::path& dir);
DbnModel load_dbn(const std::filesystem::path& dir);

}  // namespace sitfuse::dbn
