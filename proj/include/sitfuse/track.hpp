#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "sitfuse/mask.hpp"

// Connected-component instance extraction, shape descriptors, and greedy
// IoU association across a time sequence.
namespace sitfuse::track {

class TrackError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Maximal run of 1-pixels within one row.
struct PixelRun {
    int row = 0;
    int col_start = 0;
    int length = 0;
};

struct ShapeDescriptors {
    double centroid_row = 0.0;
    double centroid_col = 0.0;
    // Second central moments normalized by area.
    double mu20 = 0.0;
    double mu02 = 0.0;
    double mu11 = 0.0;
    // sqrt(1 - lambda_min/lambda_max) of the moment matrix; 0 when
    // lambda_max = 0 (single pixel), 1 when only lambda_min vanishes
    // (collinear pixels).
    double eccentricity = 0.0;
};

struct Instance {
    int instance_id = 0;
    std::vector<PixelRun> runs;  // sorted by (row, col_start)
    long area = 0;
    ShapeDescriptors shape;
    int bbox_min_row = 0;
    int bbox_min_col = 0;
    int bbox_max_row = 0;
    int bbox_max_col = 0;
    double timestamp = 0.0;
};

ShapeDescriptors shape_descriptors(const std::vector<PixelRun>& runs);

// Instances in deterministic scan order (top-left pixel first), ids 0..n-1.
std::vector<Instance> connected_components(const BinaryMask& mask, int connectivity = 8);

double instance_iou(const Instance& a, const Instance& b);

struct MatchResult {
    std::vector<std::pair<int, int>> matches;  // (prev id, curr id)
    std::vector<int> unmatched_prev;
    std::vector<int> unmatched_curr;
};

// Greedy on the globally highest IoU >= iou_min; ties break by smaller prev
// id, then smaller curr id.
MatchResult match_instances(const std::vector<Instance>& prev, const std::vector<Instance>& curr,
                            double iou_min);

struct TrackEntry {
    double timestamp = 0.0;
    int instance_id = 0;
    long area = 0;
    double centroid_row = 0.0;
    double centroid_col = 0.0;
    double eccentricity = 0.0;
};

struct Track {
    int track_id = 0;
    std::vector<TrackEntry> entries;  // timestamps strictly increasing
    bool terminated = false;
};

// Frame-by-frame association over a time-ordered mask sequence. Matched
// instances extend tracks, unmatched current instances start tracks,
// unmatched previous tracks terminate.
std::vector<Track> track_sequence(const std::vector<BinaryMask>& masks, double iou_min = 0.2,
                                  int connectivity = 8);

// CSV: track_id, timestamp, instance_id, area, centroid_row, centroid_col,
// eccentricity.
void save_tracks_csv(const std::vector<Track>& tracks, const std::filesystem::path& path);

}  // namespace sitfuse::track
