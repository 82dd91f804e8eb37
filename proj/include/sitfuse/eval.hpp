#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sitfuse/mask.hpp"

// Mask-vs-reference scoring: SSIM over float grids plus the usual confusion
// metrics. All window math runs in double precision.
namespace sitfuse::eval {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SsimParams {
    int window = 11;
    double gaussian_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;  // L; masks are scored as 0/1 floats

    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
    void validate() const;
};

// Normalized Gaussian window weights, row-major window x window.
std::vector<double> gaussian_window(int window, double sigma);

// Mean local SSIM over all full-window positions (no padding). Values are
// expected in [0, L]; callers fill invalid pixels with 0 beforehand.
double ssim(const std::vector<float>& a, const std::vector<float>& b, int width, int height,
            const SsimParams& params);

struct EvalReport {
    std::string scene_id;
    std::string target;
    std::string reference_id;
    double ssim = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double iou = 0.0;
    long tp = 0;
    long fp = 0;
    long fn = 0;
    long tn = 0;
    long n_valid = 0;
};

// Counts restricted to pixels valid in both grids. Empty-denominator
// conventions: precision = 1 when tp+fp = 0 and fn = 0, else 0; recall
// symmetric with fp; iou = 1 when tp+fp+fn = 0; f1 = 0 when p+r = 0.
EvalReport confusion(const BinaryMask& mask, const BinaryMask& reference);

// Confusion plus SSIM on the 0/1-as-float grids (invalid pixels scored as 0).
EvalReport evaluate_pair(const BinaryMask& mask, const BinaryMask& reference,
                         const SsimParams& params);

std::string report_to_json(const EvalReport& report);
std::string report_csv_header();
std::string report_csv_row(const EvalReport& report);
void save_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path);

}  // namespace sitfuse::eval
