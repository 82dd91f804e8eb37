#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sitfuse/rng.hpp"

// Hierarchical tree of invariant-information-clustering heads over frozen
// encoder features. The root head is trained on all samples; children are
// trained only on the subset hard-assigned to their parent cluster. Head math
// runs in double precision (the analytic gradient is validated against
// central finite differences, which float cannot support at the required
// tolerance); checkpoints store binary32.
namespace sitfuse::iic {

class IicError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using MatrixXd = Eigen::MatrixXd;
using VectorXd = Eigen::VectorXd;

// One linear-softmax clustering head.
struct ClusterHead {
    MatrixXd A;       // latent_dim x k
    VectorXd bias;    // k
    std::string node_id;
    int k = 0;

    int latent_dim() const { return static_cast<int>(A.rows()); }
    void validate() const;
};

struct HeadConfig {
    double sigma = 0.05;            // pair-perturbation noise stddev
    double marginal_weight = 1.0;   // lambda; 1.0 recovers -I(P)
    double learning_rate = 10.0;    // plain GD; loss is bounded so large steps are safe
    int epochs = 60;
    int batch_size = 1024;
    int n_subheads = 1;             // independently seeded restarts, best kept
    uint64_t seed = 0;

    void validate() const;
};

struct TreeConfig {
    int k = 5;
    int max_depth = 2;
    long min_node_samples = 500;
    HeadConfig head;

    void validate() const;
};

struct TreeNode {
    ClusterHead head;
    long subset_size = 0;
    std::map<int, std::unique_ptr<TreeNode>> children;  // cluster index -> child
};

struct ClusterTree {
    std::unique_ptr<TreeNode> root;
    int k = 0;
    int max_depth = 0;
    long min_node_samples = 0;

    // Deepest realized level (>=1 when the root exists).
    int depth() const;
    void validate() const;
};

// Per-pixel hierarchical assignment. Pixels without a sample carry the
// sentinel leaf label and an empty path. Leaf labels use the encoding
// label = sum_level path[level] * k^(depth-1-level) with depth = the tree's
// realized depth; a node either has a child for a cluster or it does not, so
// the encoding is injective over realized paths.
struct HierarchicalLabelMap {
    static constexpr int64_t kNoSample = -1;

    int width = 0;
    int height = 0;
    int k = 0;
    int depth = 0;
    std::vector<int64_t> labels;          // width*height, row-major
    std::vector<std::vector<int>> paths;  // per pixel; empty = no sample

    int64_t at(int row, int col) const {
        return labels[static_cast<size_t>(row) * width + col];
    }
};

int64_t encode_path(const std::vector<int>& path, int k, int depth);

// features + elementwise Normal(0, sigma^2) noise, clamped to [0,1].
MatrixXd perturb(const MatrixXd& features, double sigma, SplitMix64& rng);

// Row-wise softmax(features*A + bias); rows on the simplex.
MatrixXd head_forward(const ClusterHead& head, const MatrixXd& features);

// P = (1/N) z^T z', symmetrized and renormalized to sum 1.
MatrixXd joint_distribution(const MatrixXd& z, const MatrixXd& z_pair);

// sum_ij P_ij (lambda*ln(P_i P_j) - ln P_ij); entries below 1e-12 are clamped
// before the logs. lambda=1 gives -I(P) in [-ln k, 0].
double iic_loss(const MatrixXd& joint, double marginal_weight);

struct HeadGradient {
    MatrixXd A;
    VectorXd bias;
};

// Loss of a head on an (original, perturbed) feature pair; the unit the
// finite-difference oracle probes.
double head_pair_loss(const ClusterHead& head, const MatrixXd& features,
                      const MatrixXd& features_pair, double marginal_weight);

// Analytic gradient of head_pair_loss wrt A and bias.
HeadGradient head_gradient(const ClusterHead& head, const MatrixXd& features,
                           const MatrixXd& features_pair, double marginal_weight,
                           double* loss_out = nullptr);

ClusterHead init_head(int latent_dim, int k, uint64_t seed, std::string node_id = "0");

struct TrainResult {
    ClusterHead head;
    std::vector<double> trace;  // per-epoch mean batch loss
    bool collapsed = false;     // all samples in one cluster after training
};

// Minimizes the IIC loss with mini-batch gradient descent. Subhead 0 starts
// from `head`; additional subheads restart from fresh seeded inits and the
// lowest final loss wins (ties toward the lower subhead index).
TrainResult train_head(const ClusterHead& head, const MatrixXd& features, const HeadConfig& cfg);

// Argmax per row; ties break toward the lowest cluster index.
Eigen::VectorXi hard_assign(const ClusterHead& head, const MatrixXd& features);

ClusterTree build_tree(const MatrixXd& features, const TreeConfig& cfg);

HierarchicalLabelMap assign_labels(const ClusterTree& tree, const MatrixXd& features,
                                   const std::vector<std::pair<int, int>>& coords, int width,
                                   int height);

// Checkpoint: tree_manifest.json + per-node node_<id>_{A,bias}.bin (binary32).
void save_tree(const ClusterTree& tree, const std::filesystem::path& dir);
ClusterTree load_tree(const std::filesystem::path& dir);

}  // namespace sitfuse::iic
