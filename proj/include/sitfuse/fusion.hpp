#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "sitfuse/geo.hpp"
#include "sitfuse/mask.hpp"

// Combines collocated per-stream masks/soft scores into one certainty grid
// in [0,1] and restores cloud-filtered retrieval values under the smoke mask.
namespace sitfuse::fusion {

class FusionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StreamMask {
    GridGeometry geometry;
    BinaryMask mask;
    std::vector<float> scores;  // optional; empty falls back to the binary mask
    double weight = 1.0;
    double timestamp = 0.0;
    std::string sensor_id;

    void validate() const;
};

struct CertaintyMask {
    GridGeometry geometry;
    std::vector<float> certainty;
    std::vector<int32_t> contributors;
    std::vector<uint8_t> valid;  // contributors > 0
    double timestamp = 0.0;

    long covered_pixels() const;
};

struct RetrievalGrid {
    GridGeometry geometry;
    std::vector<float> values;
    std::vector<float> cloud_fraction;
    std::vector<uint8_t> valid;

    void validate() const;
};

// Weighted arithmetic mean of per-stream soft scores over the streams that
// cover each target pixel (after nearest-neighbor collocation and temporal
// gating by |t_s - t| <= time_window). Streams are put in a canonical order
// and the mean is clamped to [min q, max q], so the result is exactly
// permutation-invariant and idempotent under stream duplication. Pixels no
// stream covers are invalid; an empty input list is an error.
CertaintyMask fuse(const std::vector<StreamMask>& streams, const GridGeometry& target,
                   double target_timestamp, double time_window);

// 1 iff certainty >= threshold; invalid pixels stay invalid.
BinaryMask binarize(const CertaintyMask& cert, double threshold);

// Keeps a retrieval pixel iff cloud_fraction <= cf_threshold or the smoke
// mask is 1 there; values pass through bit-exact, and pixels invalid in the
// input stay invalid.
RetrievalGrid restore_retrievals(const RetrievalGrid& ret, const BinaryMask& smoke,
                                 double cf_threshold = 0.2);

}  // namespace sitfuse::fusion
