#include "sitfuse/eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace sitfuse::eval {

namespace {

using nlohmann::json;

std::vector<double> gaussian_1d(int window, double sigma) {
    std::vector<double> g(static_cast<size_t>(window));
    const double half = (window - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        g[static_cast<size_t>(i)] = std::exp(-((i - half) * (i - half)) / (2.0 * sigma * sigma));
        sum += g[static_cast<size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Valid-mode separable Gaussian filter; output is (h-w+1) x (w-w+1).
std::vector<double> smooth_valid(const std::vector<double>& grid, int width, int height,
                                 const std::vector<double>& kernel) {
    const int w = static_cast<int>(kernel.size());
    const int out_w = width - w + 1;
    const int out_h = height - w + 1;
    std::vector<double> tmp(static_cast<size_t>(height) * out_w, 0.0);
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < out_w; ++c) {
            double acc = 0.0;
            for (int i = 0; i < w; ++i) acc += kernel[static_cast<size_t>(i)] * grid[static_cast<size_t>(r) * width + c + i];
            tmp[static_cast<size_t>(r) * out_w + c] = acc;
        }
    std::vector<double> out(static_cast<size_t>(out_h) * out_w, 0.0);
    for (int r = 0; r < out_h; ++r)
        for (int c = 0; c < out_w; ++c) {
            double acc = 0.0;
            for (int j = 0; j < w; ++j) acc += kernel[static_cast<size_t>(j)] * tmp[static_cast<size_t>(r + j) * out_w + c];
            out[static_cast<size_t>(r) * out_w + c] = acc;
        }
    return out;
}

std::vector<float> mask_as_grid(const BinaryMask& mask) {
    std::vector<float> grid(mask.values.size(), 0.0f);
    for (size_t i = 0; i < mask.values.size(); ++i)
        grid[i] = mask.valid[i] ? static_cast<float>(mask.values[i]) : 0.0f;
    return grid;
}

std::string format_double(double v) {
    std::ostringstream out;
    out << std::setprecision(12) << v;
    return out.str();
}

}  // namespace

void SsimParams::validate() const {
    if (window < 3 || window % 2 == 0) throw EvalError("SSIM window must be odd and >= 3");
    if (!(gaussian_sigma > 0.0)) throw EvalError("SSIM sigma must be > 0");
    if (!(dynamic_range > 0.0)) throw EvalError("SSIM dynamic range must be > 0");
}

std::vector<double> gaussian_window(int window, double sigma) {
    if (window < 1) throw EvalError("window must be >= 1");
    if (!(sigma > 0.0)) throw EvalError("sigma must be > 0");
    const std::vector<double> g = gaussian_1d(window, sigma);
    std::vector<double> w(static_cast<size_t>(window) * window);
    for (int r = 0; r < window; ++r)
        for (int c = 0; c < window; ++c)
            w[static_cast<size_t>(r) * window + c] = g[static_cast<size_t>(r)] * g[static_cast<size_t>(c)];
    return w;
}

double ssim(const std::vector<float>& a, const std::vector<float>& b, int width, int height,
            const SsimParams& params) {
    params.validate();
    const auto n = static_cast<size_t>(width) * height;
    if (a.size() != n || b.size() != n) throw EvalError("SSIM grids do not match the given dims");
    if (width < params.window || height < params.window)
        throw EvalError("grid smaller than the SSIM window");

    std::vector<double> da(n), db(n), daa(n), dbb(n), dab(n);
    for (size_t i = 0; i < n; ++i) {
        da[i] = static_cast<double>(a[i]);
        db[i] = static_cast<double>(b[i]);
        daa[i] = da[i] * da[i];
        dbb[i] = db[i] * db[i];
        dab[i] = da[i] * db[i];
    }
    const std::vector<double> kernel = gaussian_1d(params.window, params.gaussian_sigma);
    const std::vector<double> mu_a = smooth_valid(da, width, height, kernel);
    const std::vector<double> mu_b = smooth_valid(db, width, height, kernel);
    const std::vector<double> e_aa = smooth_valid(daa, width, height, kernel);
    const std::vector<double> e_bb = smooth_valid(dbb, width, height, kernel);
    const std::vector<double> e_ab = smooth_valid(dab, width, height, kernel);

    const double c1 = params.c1();
    const double c2 = params.c2();
    double total = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i];
        const double mb = mu_b[i];
        const double var_a = e_aa[i] - ma * ma;
        const double var_b = e_bb[i] - mb * mb;
        const double cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

EvalReport confusion(const BinaryMask& mask, const BinaryMask& reference) {
    mask.validate();
    reference.validate();
    if (mask.width != reference.width || mask.height != reference.height)
        throw EvalError("mask and reference dimensions differ");

    EvalReport report;
    report.scene_id = mask.scene_id;
    report.target = scene::class_name(mask.target);
    report.reference_id = reference.scene_id;
    for (size_t i = 0; i < mask.values.size(); ++i) {
        if (!mask.valid[i] || !reference.valid[i]) continue;
        ++report.n_valid;
        const bool m = mask.values[i] != 0;
        const bool r = reference.values[i] != 0;
        if (m && r) ++report.tp;
        else if (m && !r) ++report.fp;
        else if (!m && r) ++report.fn;
        else ++report.tn;
    }

    report.precision = report.tp + report.fp > 0
                           ? static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fp)
                           : (report.fn == 0 ? 1.0 : 0.0);
    report.recall = report.tp + report.fn > 0
                        ? static_cast<double>(report.tp) / static_cast<double>(report.tp + report.fn)
                        : (report.fp == 0 ? 1.0 : 0.0);
    report.f1 = report.precision + report.recall > 0.0
                    ? 2.0 * report.precision * report.recall / (report.precision + report.recall)
                    : 0.0;
    report.iou = report.tp + report.fp + report.fn > 0
                     ? static_cast<double>(report.tp) /
                           static_cast<double>(report.tp + report.fp + report.fn)
                     : 1.0;
    return report;
}

EvalReport evaluate_pair(const BinaryMask& mask, const BinaryMask& reference,
                         const SsimParams& params) {
    EvalReport report = confusion(mask, reference);
    report.ssim = ssim(mask_as_grid(mask), mask_as_grid(reference), mask.width, mask.height, params);
    return report;
}

std::string report_to_json(const EvalReport& report) {
    json doc = {{"scene_id", report.scene_id}, {"target", report.target},
                {"reference_id", report.reference_id}, {"ssim", report.ssim},
                {"precision", report.precision}, {"recall", report.recall},
                {"f1", report.f1}, {"iou", report.iou},
                {"tp", report.tp}, {"fp", report.fp},
                {"fn", report.fn}, {"tn", report.tn},
                {"n_valid", report.n_valid}};
    return doc.dump(2);
}

std::string report_csv_header() {
    return "scene_id,target,reference_id,ssim,precision,recall,f1,iou,tp,fp,fn,tn,n_valid";
}

std::string report_csv_row(const EvalReport& r) {
    std::ostringstream out;
    out << r.scene_id << ',' << r.target << ',' << r.reference_id << ',' << format_double(r.ssim)
        << ',' << format_double(r.precision) << ',' << format_double(r.recall) << ','
        << format_double(r.f1) << ',' << format_double(r.iou) << ',' << r.tp << ',' << r.fp << ','
        << r.fn << ',' << r.tn << ',' << r.n_valid;
    return out.str();
}

void save_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path) {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(json::parse(report_to_json(r)));
    std::ofstream jf(json_path);
    if (!jf) throw EvalError("cannot write report " + json_path.string());
    jf << arr.dump(2) << "\n";

    std::ofstream cf(csv_path);
    if (!cf) throw EvalError("cannot write report " + csv_path.string());
    cf << report_csv_header() << "\n";
    for (const auto& r : reports) cf << report_csv_row(r) << "\n";
}

}  // namespace sitfuse::eval
