#include "sitfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sitfuse/hash.hpp"
#include "sitfuse/scene.hpp"

namespace sitfuse::fusion {

namespace {

uint64_t content_digest(const StreamMask& s) {
    uint64_t h = fnv1a64(s.mask.values.data(), s.mask.values.size());
    h = fnv1a64(s.mask.valid.data(), s.mask.valid.size(), h);
    if (!s.scores.empty()) h = fnv1a64(s.scores.data(), s.scores.size() * sizeof(float), h);
    return h;
}

}  // namespace

void StreamMask::validate() const {
    mask.validate();
    if (mask.width != geometry.width || mask.height != geometry.height)
        throw FusionError("stream mask dimensions differ from its geometry");
    if (!(weight > 0.0)) throw FusionError("stream weight must be > 0");
    if (!scores.empty()) {
        if (scores.size() != mask.values.size())
            throw FusionError("stream score grid size differs from its mask");
        for (const float q : scores)
            if (!(q >= 0.0f && q <= 1.0f)) throw FusionError("stream scores must lie in [0,1]");
    }
    if (!geometry.transform.invertible()) throw FusionError("stream geometry not invertible");
}

long CertaintyMask::covered_pixels() const {
    long n = 0;
    for (const uint8_t v : valid) n += v != 0;
    return n;
}

CertaintyMask fuse(const std::vector<StreamMask>& streams, const GridGeometry& target,
                   double target_timestamp, double time_window) {
    if (streams.empty()) throw FusionError("fuse needs at least one stream");
    if (target.width < 1 || target.height < 1) throw FusionError("empty target geometry");
    if (time_window < 0.0) throw FusionError("time window must be >= 0");
    for (const auto& s : streams) s.validate();

    // Canonical order makes the accumulation independent of caller order.
    std::vector<const StreamMask*> gated;
    for (const auto& s : streams)
        if (std::abs(s.timestamp - target_timestamp) <= time_window) gated.push_back(&s);
    std::sort(gated.begin(), gated.end(), [](const StreamMask* a, const StreamMask* b) {
        if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
        if (a->sensor_id != b->sensor_id) return a->sensor_id < b->sensor_id;
        if (a->weight != b->weight) return a->weight < b->weight;
        return content_digest(*a) < content_digest(*b);
    });

    const size_t n = static_cast<size_t>(target.width) * target.height;
    CertaintyMask out;
    out.geometry = target;
    out.timestamp = target_timestamp;
    out.certainty.assign(n, 0.0f);
    out.contributors.assign(n, 0);
    out.valid.assign(n, 0);

    std::vector<double> num(n, 0.0), den(n, 0.0);
    std::vector<float> lo(n, std::numeric_limits<float>::infinity());
    std::vector<float> hi(n, -std::numeric_limits<float>::infinity());
    for (const StreamMask* s : gated) {
        const std::vector<int64_t> src_index = scene::collocate_grid(s->geometry, s->mask.valid, target);
        for (size_t p = 0; p < n; ++p) {
            const int64_t idx = src_index[p];
            if (idx < 0) continue;
            const float q = s->scores.empty() ? static_cast<float>(s->mask.values[static_cast<size_t>(idx)])
                                              : s->scores[static_cast<size_t>(idx)];
            num[p] += s->weight * static_cast<double>(q);
            den[p] += s->weight;
            lo[p] = std::min(lo[p], q);
            hi[p] = std::max(hi[p], q);
            ++out.contributors[p];
        }
    }
    for (size_t p = 0; p < n; ++p) {
        if (out.contributors[p] == 0) continue;
        out.valid[p] = 1;
        // Clamp to the covering streams' score range: keeps the convex-
        // combination bound exact despite floating-point rounding.
        out.certainty[p] = std::clamp(static_cast<float>(num[p] / den[p]), lo[p], hi[p]);
    }
    return out;
}

BinaryMask binarize(const CertaintyMask& cert, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw FusionError("threshold must be in [0,1]");
    BinaryMask mask;
    mask.width = cert.geometry.width;
    mask.height = cert.geometry.height;
    mask.timestamp = cert.timestamp;
    mask.valid = cert.valid;
    mask.values.assign(cert.certainty.size(), 0);
    for (size_t i = 0; i < cert.certainty.size(); ++i)
        if (cert.valid[i] && cert.certainty[i] >= static_cast<float>(threshold)) mask.values[i] = 1;
    return mask;
}

void RetrievalGrid::validate() const {
    if (geometry.width < 1 || geometry.height < 1) throw FusionError("empty retrieval grid");
    const auto n = static_cast<size_t>(geometry.width) * geometry.height;
    if (values.size() != n || cloud_fraction.size() != n || valid.size() != n)
        throw FusionError("retrieval grid payload sizes differ from its geometry");
    for (size_t i = 0; i < n; ++i)
        if (valid[i] && !(cloud_fraction[i] >= 0.0f && cloud_fraction[i] <= 1.0f))
            throw FusionError("cloud fraction must lie in [0,1] at valid pixels");
}

RetrievalGrid restore_retrievals(const RetrievalGrid& ret, const BinaryMask& smoke,
                                 double cf_threshold) {
    ret.validate();
    smoke.validate();
    if (smoke.width != ret.geometry.width || smoke.height != ret.geometry.height)
        throw FusionError("smoke mask and retrieval grid dimensions differ");

    RetrievalGrid out = ret;  // values pass through bit-exact
    for (size_t i = 0; i < out.valid.size(); ++i) {
        if (!ret.valid[i]) continue;
        const bool keep = ret.cloud_fraction[i] <= static_cast<float>(cf_threshold) ||
                          smoke.values[i] == 1;
        out.valid[i] = keep ? 1 : 0;
    }
    return out;
}

}  // namespace sitfuse::fusion
