#include "sitfuse/track.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace sitfuse::track {

namespace {

struct Pixel {
    int row;
    int col;
};

std::vector<PixelRun> pixels_to_runs(std::vector<Pixel>& pixels) {
    std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::vector<PixelRun> runs;
    for (const Pixel& p : pixels) {
        if (!runs.empty() && runs.back().row == p.row &&
            runs.back().col_start + runs.back().length == p.col) {
            ++runs.back().length;
        } else {
            runs.push_back(PixelRun{p.row, p.col, 1});
        }
    }
    return runs;
}

}  // namespace

ShapeDescriptors shape_descriptors(const std::vector<PixelRun>& runs) {
    long area = 0;
    double sum_r = 0.0, sum_c = 0.0;
    for (const PixelRun& run : runs) {
        area += run.length;
        sum_r += static_cast<double>(run.row) * run.length;
        for (int i = 0; i < run.length; ++i) sum_c += run.col_start + i;
    }
    if (area < 1) throw TrackError("shape descriptors need at least one pixel");

    ShapeDescriptors d;
    d.centroid_row = sum_r / static_cast<double>(area);
    d.centroid_col = sum_c / static_cast<double>(area);
    for (const PixelRun& run : runs) {
        const double dr = run.row - d.centroid_row;
        for (int i = 0; i < run.length; ++i) {
            const double dc = run.col_start + i - d.centroid_col;
            d.mu20 += dr * dr;
            d.mu02 += dc * dc;
            d.mu11 += dr * dc;
        }
    }
    d.mu20 /= static_cast<double>(area);
    d.mu02 /= static_cast<double>(area);
    d.mu11 /= static_cast<double>(area);

    const double tr = d.mu20 + d.mu02;
    const double gap = std::sqrt((d.mu20 - d.mu02) * (d.mu20 - d.mu02) + 4.0 * d.mu11 * d.mu11);
    const double lambda_max = (tr + gap) / 2.0;
    const double lambda_min = std::max(0.0, (tr - gap) / 2.0);
    d.eccentricity = lambda_max > 0.0 ? std::sqrt(1.0 - lambda_min / lambda_max) : 0.0;
    return d;
}

std::vector<Instance> connected_components(const BinaryMask& mask, int connectivity) {
    mask.validate();
    if (connectivity != 4 && connectivity != 8) throw TrackError("connectivity must be 4 or 8");

    const int w = mask.width;
    const int h = mask.height;
    std::vector<uint8_t> seen(static_cast<size_t>(w) * h, 0);
    std::vector<Instance> instances;
    std::vector<Pixel> stack;
    std::vector<Pixel> component;

    for (int row = 0; row < h; ++row)
        for (int col = 0; col < w; ++col) {
            const size_t idx = static_cast<size_t>(row) * w + col;
            if (mask.values[idx] != 1 || seen[idx]) continue;
            component.clear();
            stack.assign(1, Pixel{row, col});
            seen[idx] = 1;
            while (!stack.empty()) {
                const Pixel p = stack.back();
                stack.pop_back();
                component.push_back(p);
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        if (dr == 0 && dc == 0) continue;
                        if (connectivity == 4 && dr != 0 && dc != 0) continue;
                        const int nr = p.row + dr;
                        const int nc = p.col + dc;
                        if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                        const size_t nidx = static_cast<size_t>(nr) * w + nc;
                        if (mask.values[nidx] != 1 || seen[nidx]) continue;
                        seen[nidx] = 1;
                        stack.push_back(Pixel{nr, nc});
                    }
            }
            Instance inst;
            inst.instance_id = static_cast<int>(instances.size());
            inst.runs = pixels_to_runs(component);
            inst.area = static_cast<long>(component.size());
            inst.shape = shape_descriptors(inst.runs);
            inst.bbox_min_row = inst.bbox_max_row = component.front().row;
            inst.bbox_min_col = inst.bbox_max_col = component.front().col;
            for (const Pixel& p : component) {
                inst.bbox_min_row = std::min(inst.bbox_min_row, p.row);
                inst.bbox_max_row = std::max(inst.bbox_max_row, p.row);
                inst.bbox_min_col = std::min(inst.bbox_min_col, p.col);
                inst.bbox_max_col = std::max(inst.bbox_max_col, p.col);
            }
            inst.timestamp = mask.timestamp;
            instances.push_back(std::move(inst));
        }
    return instances;
}

double instance_iou(const Instance& a, const Instance& b) {
    long inter = 0;
    size_t i = 0, j = 0;
    while (i < a.runs.size() && j < b.runs.size()) {
        const PixelRun& ra = a.runs[i];
        const PixelRun& rb = b.runs[j];
        if (ra.row < rb.row) { ++i; continue; }
        if (rb.row < ra.row) { ++j; continue; }
        const int end_a = ra.col_start + ra.length;
        const int end_b = rb.col_start + rb.length;
        inter += std::max(0, std::min(end_a, end_b) - std::max(ra.col_start, rb.col_start));
        if (end_a < end_b) ++i; else ++j;
    }
    const long uni = a.area + b.area - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

MatchResult match_instances(const std::vector<Instance>& prev, const std::vector<Instance>& curr,
                            double iou_min) {
    if (!(iou_min > 0.0 && iou_min <= 1.0)) throw TrackError("iou_min must be in (0,1]");

    struct Candidate {
        double iou;
        int prev_id;
        int curr_id;
    };
    std::vector<Candidate> candidates;
    for (const Instance& p : prev)
        for (const Instance& c : curr) {
            const double iou = instance_iou(p, c);
            if (iou >= iou_min) candidates.push_back({iou, p.instance_id, c.instance_id});
        }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.prev_id != b.prev_id) return a.prev_id < b.prev_id;
        return a.curr_id < b.curr_id;
    });

    MatchResult result;
    std::map<int, bool> prev_taken, curr_taken;
    for (const Candidate& c : candidates) {
        if (prev_taken[c.prev_id] || curr_taken[c.curr_id]) continue;
        prev_taken[c.prev_id] = true;
        curr_taken[c.curr_id] = true;
        result.matches.emplace_back(c.prev_id, c.curr_id);
    }
    for (const Instance& p : prev)
        if (!prev_taken[p.instance_id]) result.unmatched_prev.push_back(p.instance_id);
    for (const Instance& c : curr)
        if (!curr_taken[c.instance_id]) result.unmatched_curr.push_back(c.instance_id);
    return result;
}

namespace {

TrackEntry entry_from(const Instance& inst) {
    return TrackEntry{inst.timestamp,        inst.instance_id,       inst.area,
                      inst.shape.centroid_row, inst.shape.centroid_col, inst.shape.eccentricity};
}

}  // namespace

std::vector<Track> track_sequence(const std::vector<BinaryMask>& masks, double iou_min,
                                  int connectivity) {
    for (size_t i = 1; i < masks.size(); ++i)
        if (!(masks[i].timestamp > masks[i - 1].timestamp))
            throw TrackError("mask timestamps must be strictly increasing");

    std::vector<Track> tracks;
    std::vector<Instance> prev;
    std::map<int, size_t> active;  // prev instance id -> track index
    for (const BinaryMask& mask : masks) {
        std::vector<Instance> curr = connected_components(mask, connectivity);
        std::map<int, size_t> next_active;
        if (prev.empty()) {
            for (const Instance& inst : curr) {
                next_active[inst.instance_id] = tracks.size();
                tracks.push_back(Track{static_cast<int>(tracks.size()), {entry_from(inst)}, false});
            }
        } else {
            const MatchResult match = match_instances(prev, curr, iou_min);
            for (const auto& [pid, cid] : match.matches) {
                const size_t t = active.at(pid);
                tracks[t].entries.push_back(entry_from(curr[static_cast<size_t>(cid)]));
                next_active[cid] = t;
            }
            for (const int pid : match.unmatched_prev) tracks[active.at(pid)].terminated = true;
            for (const int cid : match.unmatched_curr) {
                next_active[cid] = tracks.size();
                tracks.push_back(Track{static_cast<int>(tracks.size()),
                                       {entry_from(curr[static_cast<size_t>(cid)])}, false});
            }
        }
        active = std::move(next_active);
        prev = std::move(curr);
    }
    return tracks;
}

void save_tracks_csv(const std::vector<Track>& tracks, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw TrackError("cannot write tracks " + path.string());
    f << "track_id,timestamp,instance_id,area,centroid_row,centroid_col,eccentricity\n";
    for (const Track& track : tracks)
        for (const TrackEntry& e : track.entries) {
            std::ostringstream row;
            row << track.track_id << ',' << std::setprecision(12) << e.timestamp << ','
                << e.instance_id << ',' << e.area << ',' << e.centroid_row << ',' << e.centroid_col
                << ',' << e.eccentricity;
            f << row.str() << "\n";
        }
    if (!f.flush()) throw TrackError("failed writing tracks " + path.string());
}

}  // namespace sitfuse::track
