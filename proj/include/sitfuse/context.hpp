#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sitfuse/iic.hpp"
#include "sitfuse/mask.hpp"
#include "sitfuse/scene.hpp"

// Maps self-supervised leaf clusters to semantic classes using sparse
// polygon labels: overlap histograms -> per-target positive leaf sets ->
// binary masks and soft scores.
namespace sitfuse::context {

class ContextError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ClassCounts {
    std::array<long, 4> counts{};  // indexed by ClassCode
    long unlabeled = 0;

    long count(scene::ClassCode c) const { return counts[static_cast<size_t>(c)]; }
    long total() const { return counts[0] + counts[1] + counts[2] + counts[3] + unlabeled; }
};

struct ClusterClassHistogram {
    std::map<int64_t, ClassCounts> leaves;
};

// One positive leaf for a target class.
struct ContextEntry {
    int64_t leaf = 0;
    double purity = 0.0;
    long support = 0;
};

struct TargetContext {
    scene::ClassCode target = scene::ClassCode::Smoke;
    double purity_threshold = 0.5;
    long min_support = 20;
    std::map<int64_t, ContextEntry> positives;

    bool is_positive(int64_t leaf) const { return positives.count(leaf) != 0; }
};

struct ContextMap {
    std::map<std::string, TargetContext> targets;  // keyed by class_name(target)

    const TargetContext& for_target(scene::ClassCode target) const;
};

// Counts overlapping labeled pixels per class for every leaf. A pixel whose
// label bits cover several classes contributes to each of them; bit-free
// pixels count as unlabeled.
ClusterClassHistogram build_histogram(const iic::HierarchicalLabelMap& label_map,
                                      const scene::LabelRaster& label_raster);

// A leaf is positive for the target iff, over its pixels labeled with the
// target or the target's paired background class, support >= min_support and
// purity = target/(target+background) >= purity_threshold.
TargetContext assign_context(const ClusterClassHistogram& hist, scene::ClassCode target,
                             double purity_threshold, long min_support);

BinaryMask apply_context(const iic::HierarchicalLabelMap& label_map, const TargetContext& context);

// Per-pixel purity of the pixel's leaf (0 for negative leaves and pixels
// without a sample); range [0,1].
std::vector<float> soft_scores(const iic::HierarchicalLabelMap& label_map,
                               const TargetContext& context);

void save_context(const ContextMap& map, const std::filesystem::path& path);
ContextMap load_context(const std::filesystem::path& path);

}  // namespace sitfuse::context
