#include "sitfuse/iic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "sitfuse/hash.hpp"

namespace sitfuse::iic {

namespace {

using nlohmann::json;

constexpr double kLogFloor = 1e-12;

double safe_log(double x) { return std::log(std::max(x, kLogFloor)); }

// Summing in sorted order makes the result independent of the input
// ordering, so simultaneous row/column permutation of the joint leaves the
// loss bit-identical rather than merely close.
double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double total = 0.0;
    for (const double t : terms) total += t;
    return total;
}

MatrixXd softmax_rows(MatrixXd logits) {
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        Eigen::ArrayXd e = (logits.row(r).array() - m).exp();
        logits.row(r) = (e / e.sum()).matrix();
    }
    return logits;
}

void check_features(const ClusterHead& head, const MatrixXd& features) {
    if (features.cols() != head.A.rows())
        throw IicError("feature dim " + std::to_string(features.cols()) +
                       " does not match head latent dim " + std::to_string(head.A.rows()));
    if (features.rows() == 0) throw IicError("empty feature batch");
}

// dL/dP for loss = sum P_ab (lambda*ln(p_a q_b) - ln P_ab).
MatrixXd loss_gradient_wrt_joint(const MatrixXd& joint, double lambda) {
    const VectorXd row_marg = joint.rowwise().sum();
    const VectorXd col_marg = joint.colwise().sum().transpose();
    MatrixXd grad(joint.rows(), joint.cols());
    for (Eigen::Index a = 0; a < joint.rows(); ++a)
        for (Eigen::Index b = 0; b < joint.cols(); ++b)
            grad(a, b) = lambda * (safe_log(row_marg(a)) + safe_log(col_marg(b))) -
                         safe_log(joint(a, b)) + 2.0 * lambda - 1.0;
    return grad;
}

// Softmax Jacobian applied per row: dLogits = z .* (g - rowdot(g,z)).
MatrixXd softmax_backward(const MatrixXd& z, const MatrixXd& grad_z) {
    const VectorXd dots = (z.array() * grad_z.array()).rowwise().sum();
    return (z.array() * (grad_z.colwise() - dots).array()).matrix();
}

void write_floats(const std::filesystem::path& path, const MatrixXd& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IicError("cannot write " + path.string());
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const float v = static_cast<float>(m(r, c));
            f.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    if (!f.flush()) throw IicError("failed writing " + path.string());
}

MatrixXd read_floats(const std::filesystem::path& path, int rows, int cols) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IicError("missing checkpoint tensor " + path.string());
    MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            float v = 0.0f;
            f.read(reinterpret_cast<char*>(&v), sizeof(v));
            if (!f) throw IicError("checkpoint tensor " + path.string() + " has wrong size");
            m(r, c) = static_cast<double>(v);
        }
    return m;
}

}  // namespace

void ClusterHead::validate() const {
    if (k < 2) throw IicError("cluster head needs k >= 2");
    if (A.cols() != k || bias.size() != k) throw IicError("head shapes inconsistent with k");
    if (A.rows() < 1) throw IicError("head latent dim must be >= 1");
    if (!A.allFinite() || !bias.allFinite()) throw IicError("head parameters must be finite");
}

void HeadConfig::validate() const {
    if (sigma < 0.0) throw IicError("sigma must be >= 0");
    if (marginal_weight < 1.0) throw IicError("marginal weight must be >= 1");
    if (learning_rate < 0.0) throw IicError("learning rate must be >= 0");
    if (epochs < 0) throw IicError("epochs must be >= 0");
    if (batch_size < 1) throw IicError("batch size must be >= 1");
    if (n_subheads < 1) throw IicError("n_subheads must be >= 1");
}

void TreeConfig::validate() const {
    if (k < 2) throw IicError("tree k must be >= 2");
    if (max_depth < 1) throw IicError("max_depth must be >= 1");
    if (min_node_samples < 1) throw IicError("min_node_samples must be >= 1");
    head.validate();
}

int ClusterTree::depth() const {
    if (!root) return 0;
    struct Walker {
        static int walk(const TreeNode& node) {
            int d = 1;
            for (const auto& [idx, child] : node.children) d = std::max(d, 1 + walk(*child));
            return d;
        }
    };
    return Walker::walk(*root);
}

void ClusterTree::validate() const {
    if (!root) throw IicError("tree has no root");
    if (k < 2 || max_depth < 1) throw IicError("tree config invalid");
    if (depth() > max_depth) throw IicError("tree deeper than max_depth");
    struct Walker {
        long min_node_samples;
        int k;
        void walk(const TreeNode& node) const {
            node.head.validate();
            if (node.head.k != k) throw IicError("node branching differs from tree k");
            for (const auto& [idx, child] : node.children) {
                if (idx < 0 || idx >= k) throw IicError("child slot out of range");
                if (node.subset_size < min_node_samples)
                    throw IicError("node with children below min_node_samples");
                if (child->subset_size > node.subset_size)
                    throw IicError("child subset larger than parent subset");
                walk(*child);
            }
        }
    };
    Walker{min_node_samples, k}.walk(*root);
}

int64_t encode_path(const std::vector<int>& path, int k, int depth) {
    if (static_cast<int>(path.size()) > depth) throw IicError("path longer than tree depth");
    int64_t label = 0;
    for (size_t level = 0; level < path.size(); ++level) {
        int64_t scale = 1;
        for (int p = 0; p < depth - 1 - static_cast<int>(level); ++p) scale *= k;
        label += static_cast<int64_t>(path[level]) * scale;
    }
    return label;
}

MatrixXd perturb(const MatrixXd& features, double sigma, SplitMix64& rng) {
    if (sigma < 0.0) throw IicError("sigma must be >= 0");
    MatrixXd out(features.rows(), features.cols());
    for (Eigen::Index r = 0; r < features.rows(); ++r)
        for (Eigen::Index c = 0; c < features.cols(); ++c)
            out(r, c) = std::clamp(features(r, c) + rng.next_normal(0.0, sigma), 0.0, 1.0);
    return out;
}

MatrixXd head_forward(const ClusterHead& head, const MatrixXd& features) {
    head.validate();
    check_features(head, features);
    MatrixXd logits = features * head.A;
    logits.rowwise() += head.bias.transpose();
    return softmax_rows(std::move(logits));
}

MatrixXd joint_distribution(const MatrixXd& z, const MatrixXd& z_pair) {
    if (z.rows() == 0) throw IicError("joint distribution needs at least one sample");
    if (z.rows() != z_pair.rows() || z.cols() != z_pair.cols())
        throw IicError("paired assignment shapes differ");
    MatrixXd joint = (z.transpose() * z_pair) / static_cast<double>(z.rows());
    joint = ((joint + joint.transpose()) * 0.5).eval();
    const double total = joint.sum();
    if (!(total > 0.0)) throw IicError("degenerate joint distribution");
    return joint / total;
}

double iic_loss(const MatrixXd& joint, double marginal_weight) {
    if (joint.rows() != joint.cols() || joint.rows() < 2) throw IicError("joint must be k x k, k >= 2");
    if (joint.minCoeff() < -1e-9 || std::abs(joint.sum() - 1.0) > 1e-6)
        throw IicError("joint must be nonnegative and sum to 1");
    const Eigen::Index k = joint.rows();
    VectorXd row_marg(k), col_marg(k);
    std::vector<double> entries(static_cast<size_t>(k));
    for (Eigen::Index a = 0; a < k; ++a) {
        for (Eigen::Index b = 0; b < k; ++b) entries[static_cast<size_t>(b)] = joint(a, b);
        row_marg(a) = sorted_sum(entries);
    }
    for (Eigen::Index b = 0; b < k; ++b) {
        for (Eigen::Index a = 0; a < k; ++a) entries[static_cast<size_t>(a)] = joint(a, b);
        col_marg(b) = sorted_sum(entries);
    }
    std::vector<double> terms;
    terms.reserve(static_cast<size_t>(k * k));
    for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < k; ++b)
            terms.push_back(joint(a, b) *
                            (marginal_weight * (safe_log(row_marg(a)) + safe_log(col_marg(b))) -
                             safe_log(joint(a, b))));
    return sorted_sum(terms);
}

double head_pair_loss(const ClusterHead& head, const MatrixXd& features,
                      const MatrixXd& features_pair, double marginal_weight) {
    const MatrixXd z = head_forward(head, features);
    const MatrixXd z_pair = head_forward(head, features_pair);
    return iic_loss(joint_distribution(z, z_pair), marginal_weight);
}

HeadGradient head_gradient(const ClusterHead& head, const MatrixXd& features,
                           const MatrixXd& features_pair, double marginal_weight,
                           double* loss_out) {
    check_features(head, features_pair);
    const MatrixXd z = head_forward(head, features);
    const MatrixXd z_pair = head_forward(head, features_pair);
    const double n = static_cast<double>(z.rows());

    MatrixXd raw = (z.transpose() * z_pair) / n;
    MatrixXd sym = ((raw + raw.transpose()) * 0.5).eval();
    const double total = sym.sum();
    if (!(total > 0.0)) throw IicError("degenerate joint distribution");
    const MatrixXd joint = sym / total;
    if (loss_out) *loss_out = iic_loss(joint, marginal_weight);

    // Chain: loss -> normalized joint -> symmetrized -> raw -> assignments.
    const MatrixXd g_joint = loss_gradient_wrt_joint(joint, marginal_weight);
    const double trace = (g_joint.array() * joint.array()).sum();
    const MatrixXd g_sym = (g_joint.array() - trace).matrix() / total;
    const MatrixXd g_raw = ((g_sym + g_sym.transpose()) * 0.5).eval();

    const MatrixXd g_z = (z_pair * g_raw.transpose()) / n;
    const MatrixXd g_z_pair = (z * g_raw) / n;
    const MatrixXd g_logits = softmax_backward(z, g_z);
    const MatrixXd g_logits_pair = softmax_backward(z_pair, g_z_pair);

    HeadGradient grad;
    grad.A = features.transpose() * g_logits + features_pair.transpose() * g_logits_pair;
    grad.bias = (g_logits.colwise().sum() + g_logits_pair.colwise().sum()).transpose();
    return grad;
}

ClusterHead init_head(int latent_dim, int k, uint64_t seed, std::string node_id) {
    if (latent_dim < 1 || k < 2) throw IicError("invalid head dimensions");
    SplitMix64 rng(seed);
    ClusterHead head;
    head.node_id = std::move(node_id);
    head.k = k;
    head.A = MatrixXd(latent_dim, k);
    // Wide enough that softmax outputs start well away from the uniform
    // saddle (where the information gradient vanishes).
    for (int r = 0; r < latent_dim; ++r)
        for (int c = 0; c < k; ++c) head.A(r, c) = rng.next_normal(0.0, 0.5);
    head.bias = VectorXd::Zero(k);
    return head;
}

namespace {

struct SubheadRun {
    ClusterHead head;
    std::vector<double> trace;
    double final_loss = std::numeric_limits<double>::infinity();
};

SubheadRun train_one(ClusterHead head, const MatrixXd& features, const HeadConfig& cfg,
                     uint64_t stream_seed) {
    SplitMix64 rng(stream_seed);
    const long n = features.rows();
    std::vector<long> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0L);

    SubheadRun run;
    run.trace.reserve(static_cast<size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (long i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[rng.next_below(static_cast<uint64_t>(i) + 1)]);
        double loss_sum = 0.0;
        long batches = 0;
        for (long start = 0; start < n; start += cfg.batch_size) {
            const long count = std::min<long>(cfg.batch_size, n - start);
            MatrixXd batch(count, features.cols());
            for (long i = 0; i < count; ++i)
                batch.row(i) = features.row(order[static_cast<size_t>(start + i)]);
            const MatrixXd pair = perturb(batch, cfg.sigma, rng);
            double loss = 0.0;
            const HeadGradient grad = head_gradient(head, batch, pair, cfg.marginal_weight, &loss);
            if (!grad.A.allFinite() || !grad.bias.allFinite())
                throw IicError("non-finite IIC gradient: training diverged");
            head.A -= cfg.learning_rate * grad.A;
            head.bias -= cfg.learning_rate * grad.bias;
            loss_sum += loss;
            ++batches;
        }
        run.trace.push_back(loss_sum / static_cast<double>(std::max(1L, batches)));
    }
    if (!run.trace.empty()) run.final_loss = run.trace.back();
    run.head = std::move(head);
    return run;
}

}  // namespace

TrainResult train_head(const ClusterHead& head, const MatrixXd& features, const HeadConfig& cfg) {
    head.validate();
    cfg.validate();
    check_features(head, features);
    if (features.rows() < head.k) throw IicError("need at least k samples to train a head");

    SubheadRun best;
    bool have_best = false;
    for (int s = 0; s < cfg.n_subheads; ++s) {
        ClusterHead start =
            s == 0 ? head
                   : init_head(head.latent_dim(), head.k, derive_seed(cfg.seed, 0x20 + s),
                               head.node_id);
        SubheadRun run = train_one(std::move(start), features, cfg, derive_seed(cfg.seed, 0x40 + s));
        if (!have_best || run.final_loss < best.final_loss) {
            best = std::move(run);
            have_best = true;
        }
    }

    TrainResult result;
    result.head = std::move(best.head);
    result.trace = std::move(best.trace);
    const Eigen::VectorXi assign = hard_assign(result.head, features);
    result.collapsed = (assign.array() == assign(0)).all();
    return result;
}

Eigen::VectorXi hard_assign(const ClusterHead& head, const MatrixXd& features) {
    const MatrixXd z = head_forward(head, features);
    Eigen::VectorXi out(z.rows());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        int best = 0;
        for (int c = 1; c < z.cols(); ++c)
            if (z(r, c) > z(r, best)) best = c;  // ties keep the lowest index
        out(r) = best;
    }
    return out;
}

namespace {

std::unique_ptr<TreeNode> build_node(const MatrixXd& features, const std::vector<long>& subset,
                                     const TreeConfig& cfg, const std::string& node_id, int level) {
    MatrixXd sub(subset.size(), features.cols());
    for (size_t i = 0; i < subset.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = features.row(subset[i]);

    HeadConfig head_cfg = cfg.head;
    head_cfg.seed = derive_seed(cfg.head.seed, fnv1a64(node_id));
    const ClusterHead init =
        init_head(static_cast<int>(features.cols()), cfg.k, derive_seed(head_cfg.seed, 0x60), node_id);
    TrainResult trained = train_head(init, sub, head_cfg);

    auto node = std::make_unique<TreeNode>();
    node->head = std::move(trained.head);
    node->subset_size = static_cast<long>(subset.size());
    if (level >= cfg.max_depth) return node;

    const Eigen::VectorXi assign = hard_assign(node->head, sub);
    // A child also needs at least k samples to train, whatever min_node_samples says.
    const long threshold = std::max<long>(cfg.min_node_samples, cfg.k);
    for (int c = 0; c < cfg.k; ++c) {
        std::vector<long> child_subset;
        for (size_t i = 0; i < subset.size(); ++i)
            if (assign(static_cast<Eigen::Index>(i)) == c) child_subset.push_back(subset[i]);
        if (static_cast<long>(child_subset.size()) < threshold) continue;
        node->children[c] =
            build_node(features, child_subset, cfg, node_id + "." + std::to_string(c), level + 1);
    }
    return node;
}

}  // namespace

ClusterTree build_tree(const MatrixXd& features, const TreeConfig& cfg) {
    cfg.validate();
    if (features.rows() < cfg.k) throw IicError("need at least k samples to build a tree");
    std::vector<long> all(static_cast<size_t>(features.rows()));
    std::iota(all.begin(), all.end(), 0L);
    ClusterTree tree;
    tree.k = cfg.k;
    tree.max_depth = cfg.max_depth;
    tree.min_node_samples = cfg.min_node_samples;
    tree.root = build_node(features, all, cfg, "0", 1);
    tree.validate();
    return tree;
}

namespace {

void assign_subset(const TreeNode& node, const MatrixXd& features, const std::vector<long>& subset,
                   std::vector<std::vector<int>>& paths) {
    MatrixXd sub(subset.size(), features.cols());
    for (size_t i = 0; i < subset.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = features.row(subset[i]);
    const Eigen::VectorXi assign = hard_assign(node.head, sub);

    std::map<int, std::vector<long>> routed;
    for (size_t i = 0; i < subset.size(); ++i) {
        const int c = assign(static_cast<Eigen::Index>(i));
        paths[static_cast<size_t>(subset[i])].push_back(c);
        if (node.children.count(c)) routed[c].push_back(subset[i]);
    }
    for (const auto& [c, child_subset] : routed) assign_subset(*node.children.at(c), features, child_subset, paths);
}

}  // namespace

HierarchicalLabelMap assign_labels(const ClusterTree& tree, const MatrixXd& features,
                                   const std::vector<std::pair<int, int>>& coords, int width,
                                   int height) {
    tree.validate();
    if (features.rows() != static_cast<Eigen::Index>(coords.size()))
        throw IicError("features and coords disagree on sample count");
    if (width < 1 || height < 1) throw IicError("invalid label map dimensions");

    HierarchicalLabelMap map;
    map.width = width;
    map.height = height;
    map.k = tree.k;
    map.depth = tree.depth();
    map.labels.assign(static_cast<size_t>(width) * height, HierarchicalLabelMap::kNoSample);
    map.paths.assign(static_cast<size_t>(width) * height, {});

    if (features.rows() == 0) return map;
    std::vector<std::vector<int>> sample_paths(static_cast<size_t>(features.rows()));
    std::vector<long> all(static_cast<size_t>(features.rows()));
    std::iota(all.begin(), all.end(), 0L);
    assign_subset(*tree.root, features, all, sample_paths);

    for (size_t i = 0; i < coords.size(); ++i) {
        const auto [row, col] = coords[i];
        if (row < 0 || row >= height || col < 0 || col >= width)
            throw IicError("sample coordinate outside the label map");
        const size_t pix = static_cast<size_t>(row) * width + col;
        map.paths[pix] = sample_paths[i];
        map.labels[pix] = encode_path(sample_paths[i], map.k, map.depth);
    }
    return map;
}

namespace {

void collect_nodes(const TreeNode& node, std::vector<const TreeNode*>& out) {
    out.push_back(&node);
    for (const auto& [idx, child] : node.children) collect_nodes(*child, out);
}

}  // namespace

void save_tree(const ClusterTree& tree, const std::filesystem::path& dir) {
    tree.validate();
    std::filesystem::create_directories(dir);
    std::vector<const TreeNode*> nodes;
    collect_nodes(*tree.root, nodes);

    json manifest;
    manifest["format"] = "sitfuse-tree-v1";
    manifest["k"] = tree.k;
    manifest["max_depth"] = tree.max_depth;
    manifest["min_node_samples"] = tree.min_node_samples;
    manifest["latent_dim"] = tree.root->head.latent_dim();
    json node_list = json::array();
    for (const TreeNode* node : nodes) {
        json children = json::object();
        for (const auto& [idx, child] : node->children)
            children[std::to_string(idx)] = child->head.node_id;
        node_list.push_back({{"id", node->head.node_id},
                             {"subset_size", node->subset_size},
                             {"children", children}});
        const std::string stem = "node_" + node->head.node_id + "_";
        write_floats(dir / (stem + "A.bin"), node->head.A);
        write_floats(dir / (stem + "bias.bin"), node->head.bias);
    }
    manifest["nodes"] = node_list;
    std::ofstream f(dir / "tree_manifest.json");
    if (!f) throw IicError("cannot write tree manifest in " + dir.string());
    f << manifest.dump(2) << "\n";
}

ClusterTree load_tree(const std::filesystem::path& dir) {
    std::ifstream f(dir / "tree_manifest.json");
    if (!f) throw IicError("missing tree manifest " + (dir / "tree_manifest.json").string());
    json manifest;
    try {
        f >> manifest;
    } catch (const json::exception& e) {
        throw IicError(std::string("corrupt tree manifest: ") + e.what());
    }

    ClusterTree tree;
    tree.k = manifest.at("k").get<int>();
    tree.max_depth = manifest.at("max_depth").get<int>();
    tree.min_node_samples = manifest.at("min_node_samples").get<long>();
    const int latent_dim = manifest.at("latent_dim").get<int>();

    std::map<std::string, std::unique_ptr<TreeNode>> loaded;
    std::map<std::string, std::map<int, std::string>> child_ids;
    for (const auto& entry : manifest.at("nodes")) {
        auto node = std::make_unique<TreeNode>();
        const std::string id = entry.at("id").get<std::string>();
        node->head.node_id = id;
        node->head.k = tree.k;
        const std::string stem = "node_" + id + "_";
        node->head.A = read_floats(dir / (stem + "A.bin"), latent_dim, tree.k);
        node->head.bias = read_floats(dir / (stem + "bias.bin"), tree.k, 1);
        node->subset_size = entry.at("subset_size").get<long>();
        for (const auto& [slot, child_id] : entry.at("children").items())
            child_ids[id][std::stoi(slot)] = child_id.get<std::string>();
        loaded[id] = std::move(node);
    }
    // Attach children deepest-first (descendant ids sort after their
    // ancestors, so reverse id order moves grandchildren before parents).
    for (auto it = child_ids.rbegin(); it != child_ids.rend(); ++it)
        for (auto& [slot, child_id] : it->second) {
            auto child_it = loaded.find(child_id);
            if (child_it == loaded.end())
                throw IicError("tree manifest references missing node " + child_id);
            loaded.at(it->first)->children[slot] = std::move(child_it->second);
            loaded.erase(child_it);
        }
    auto root_it = loaded.find("0");
    if (root_it == loaded.end()) throw IicError("tree manifest lacks a root node");
    tree.root = std::move(root_it->second);
    tree.validate();
    return tree;
}

}  // namespace sitfuse::iic
