#include "sitfuse/context.hpp"

#include <fstream>

#include <json.hpp>

namespace sitfuse::context {

namespace {

using nlohmann::json;

scene::ClassCode background_of(scene::ClassCode target) {
    switch (target) {
        case scene::ClassCode::Smoke: return scene::ClassCode::SmokeBg;
        case scene::ClassCode::Fire: return scene::ClassCode::FireBg;
        default: throw ContextError("context targets are smoke and fire only");
    }
}

}  // namespace

const TargetContext& ContextMap::for_target(scene::ClassCode target) const {
    const auto it = targets.find(scene::class_name(target));
    if (it == targets.end())
        throw ContextError(std::string("context map has no entry for target ") +
                           scene::class_name(target));
    return it->second;
}

ClusterClassHistogram build_histogram(const iic::HierarchicalLabelMap& label_map,
                                      const scene::LabelRaster& label_raster) {
    if (label_map.width != label_raster.width || label_map.height != label_raster.height)
        throw ContextError("label map and label raster dimensions differ");
    ClusterClassHistogram hist;
    for (int row = 0; row < label_map.height; ++row)
        for (int col = 0; col < label_map.width; ++col) {
            const int64_t leaf = label_map.at(row, col);
            if (leaf == iic::HierarchicalLabelMap::kNoSample) continue;
            ClassCounts& counts = hist.leaves[leaf];
            const uint8_t bits = label_raster.at(row, col);
            if (bits == 0) {
                ++counts.unlabeled;
                continue;
            }
            for (int c = 0; c < 4; ++c)
                if (bits & scene::class_bit(static_cast<scene::ClassCode>(c)))
                    ++counts.counts[static_cast<size_t>(c)];
        }
    return hist;
}

TargetContext assign_context(const ClusterClassHistogram& hist, scene::ClassCode target,
                             double purity_threshold, long min_support) {
    if (!(purity_threshold > 0.0) || purity_threshold > 1.0)
        throw ContextError("purity threshold must be in (0,1]");
    if (min_support < 1) throw ContextError("min_support must be >= 1");

    TargetContext ctx;
    ctx.target = target;
    ctx.purity_threshold = purity_threshold;
    ctx.min_support = min_support;
    const scene::ClassCode bg = background_of(target);
    for (const auto& [leaf, counts] : hist.leaves) {
        const long pos = counts.count(target);
        const long neg = counts.count(bg);
        const long support = pos + neg;
        if (support < min_support) continue;
        const double purity = static_cast<double>(pos) / static_cast<double>(support);
        if (purity < purity_threshold) continue;
        ctx.positives[leaf] = ContextEntry{leaf, purity, support};
    }
    return ctx;
}

BinaryMask apply_context(const iic::HierarchicalLabelMap& label_map, const TargetContext& context) {
    BinaryMask mask;
    mask.width = label_map.width;
    mask.height = label_map.height;
    mask.target = context.target;
    const size_t n = static_cast<size_t>(label_map.width) * label_map.height;
    mask.values.assign(n, 0);
    mask.valid.assign(n, 0);
    for (size_t i = 0; i < n; ++i) {
        const int64_t leaf = label_map.labels[i];
        if (leaf == iic::HierarchicalLabelMap::kNoSample) continue;
        mask.valid[i] = 1;
        mask.values[i] = context.is_positive(leaf) ? 1 : 0;
    }
    return mask;
}

std::vector<float> soft_scores(const iic::HierarchicalLabelMap& label_map,
                               const TargetContext& context) {
    const size_t n = static_cast<size_t>(label_map.width) * label_map.height;
    std::vector<float> scores(n, 0.0f);
    for (size_t i = 0; i < n; ++i) {
        const int64_t leaf = label_map.labels[i];
        if (leaf == iic::HierarchicalLabelMap::kNoSample) continue;
        const auto it = context.positives.find(leaf);
        if (it != context.positives.end()) scores[i] = static_cast<float>(it->second.purity);
    }
    return scores;
}

void save_context(const ContextMap& map, const std::filesystem::path& path) {
    json doc;
    doc["format"] = "sitfuse-context-v1";
    json targets = json::object();
    for (const auto& [name, ctx] : map.targets) {
        json positives = json::array();
        for (const auto& [leaf, entry] : ctx.positives)
            positives.push_back(
                {{"leaf", entry.leaf}, {"purity", entry.purity}, {"support", entry.support}});
        targets[name] = {{"purity_threshold", ctx.purity_threshold},
                         {"min_support", ctx.min_support},
                         {"positives", positives}};
    }
    doc["targets"] = targets;
    std::ofstream f(path);
    if (!f) throw ContextError("cannot write context map " + path.string());
    f << doc.dump(2) << "\n";
}

ContextMap load_context(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ContextError("missing context map " + path.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw ContextError(std::string("corrupt context map: ") + e.what());
    }
    ContextMap map;
    for (const auto& [name, body] : doc.at("targets").items()) {
        TargetContext ctx;
        ctx.target = scene::class_from_name(name);
        ctx.purity_threshold = body.at("purity_threshold").get<double>();
        ctx.min_support = body.at("min_support").get<long>();
        for (const auto& entry : body.at("positives")) {
            ContextEntry e;
            e.leaf = entry.at("leaf").get<int64_t>();
            e.purity = entry.at("purity").get<double>();
            e.support = entry.at("support").get<long>();
            ctx.positives[e.leaf] = e;
        }
        map.targets[name] = std::move(ctx);
    }
    return map;
}

}  // namespace sitfuse::context
