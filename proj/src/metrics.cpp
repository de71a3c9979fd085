#include "sliceterp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace sliceterp {

double psnr(const std::vector<double>& pred, const std::vector<double>& target,
            double max_val) {
    if (pred.size() != target.size())
        throw ShapeError("psnr: element counts differ, " + std::to_string(pred.size()) +
                         " vs " + std::to_string(target.size()));
    if (pred.empty()) throw std::invalid_argument("psnr: empty input");
    if (max_val <= 0) throw std::invalid_argument("psnr: max_val must be positive");
    double mse = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - target[i];
        mse += d * d;
    }
    mse /= static_cast<double>(pred.size());
    if (mse == 0.0) return kPsnrSentinelDb;
    return 10.0 * std::log10(max_val * max_val / mse);
}

double psnr(const Slice& pred, const Slice& target, double max_val) {
    if (pred.height != target.height || pred.width != target.width)
        throw ShapeError("psnr: slice extents differ");
    std::vector<double> a(pred.data.begin(), pred.data.end());
    std::vector<double> b(target.data.begin(), target.data.end());
    return psnr(a, b, max_val);
}

namespace {

// Reflect (symmetric, edge included) index into [0, n).
inline int reflect(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

std::vector<double> gaussian_kernel(int window, double sigma) {
    std::vector<double> k(static_cast<size_t>(window));
    int r = window / 2;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        double d = i - r;
        k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable Gaussian filter with reflected borders, double precision.
std::vector<double> gauss_filter(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& kernel) {
    int r = static_cast<int>(kernel.size()) / 2;
    std::vector<double> tmp(img.size()), out(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -r; t <= r; ++t)
                acc += kernel[static_cast<size_t>(t + r)] * img[static_cast<size_t>(y) * w + reflect(x + t, w)];
            tmp[static_cast<size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -r; t <= r; ++t)
                acc += kernel[static_cast<size_t>(t + r)] * tmp[static_cast<size_t>(reflect(y + t, h)) * w + x];
            out[static_cast<size_t>(y) * w + x] = acc;
        }
    return out;
}

std::vector<double> ssim_map_full(const Slice& a, const Slice& b, const SsimParams& p) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("ssim: slice extents differ");
    int h = a.height, w = a.width;
    size_t n = static_cast<size_t>(h) * w;
    std::vector<double> da(n), db(n), daa(n), dbb(n), dab(n);
    for (size_t i = 0; i < n; ++i) {
        da[i] = a.data[i];
        db[i] = b.data[i];
        daa[i] = da[i] * da[i];
        dbb[i] = db[i] * db[i];
        dab[i] = da[i] * db[i];
    }
    auto kernel = gaussian_kernel(p.window, p.sigma);
    auto mu_a = gauss_filter(da, h, w, kernel);
    auto mu_b = gauss_filter(db, h, w, kernel);
    auto m_aa = gauss_filter(daa, h, w, kernel);
    auto m_bb = gauss_filter(dbb, h, w, kernel);
    auto m_ab = gauss_filter(dab, h, w, kernel);

    double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
    std::vector<double> map(n);
    for (size_t i = 0; i < n; ++i) {
        double va = m_aa[i] - mu_a[i] * mu_a[i];
        double vb = m_bb[i] - mu_b[i] * mu_b[i];
        double vab = m_ab[i] - mu_a[i] * mu_b[i];
        map[i] = ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * vab + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return map;
}

}  // namespace

double ssim(const Slice& pred, const Slice& target, const SsimParams& p) {
    if (pred.height < p.window || pred.width < p.window)
        throw std::invalid_argument("ssim: image " + std::to_string(pred.height) + "x" +
                                    std::to_string(pred.width) + " smaller than window " +
                                    std::to_string(p.window));
    auto map = ssim_map_full(pred, target, p);
    int r = p.window / 2, h = pred.height, w = pred.width;
    double total = 0.0;
    int64_t count = 0;
    for (int y = r; y < h - r; ++y)
        for (int x = r; x < w - r; ++x) {
            total += map[static_cast<size_t>(y) * w + x];
            ++count;
        }
    return total / static_cast<double>(count);
}

Slice ssim_map(const Slice& pred, const Slice& target, const SsimParams& p) {
    if (pred.height < p.window || pred.width < p.window)
        throw std::invalid_argument("ssim_map: image smaller than window");
    auto map = ssim_map_full(pred, target, p);
    Slice out;
    out.height = pred.height;
    out.width = pred.width;
    out.data.assign(map.begin(), map.end());
    return out;
}

Aggregate aggregate(const std::vector<double>& samples) {
    if (samples.empty()) throw std::invalid_argument("aggregate: empty input");
    Aggregate a;
    for (double v : samples) a.mean += v;
    a.mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (double v : samples) var += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(var / static_cast<double>(samples.size()));
    return a;
}

void MetricsReport::finalize() {
    std::vector<double> ps, ss;
    ps.reserve(samples.size());
    ss.reserve(samples.size());
    for (const auto& s : samples) {
        ps.push_back(s.psnr_db);
        ss.push_back(s.ssim);
    }
    psnr_agg = aggregate(ps);
    ssim_agg = aggregate(ss);
    n_samples = static_cast<int>(samples.size());
}

std::string format_g6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string MetricsReport::summary_line() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s k=%d PSNR %.2f±%.2f SSIM %.4f±%.4f", method.c_str(), k,
                  psnr_agg.mean, psnr_agg.stddev, ssim_agg.mean, ssim_agg.stddev);
    return buf;
}

void MetricsReport::write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_csv: cannot open '" + path + "'");
    f << "method,k,patient_id,slice_index,psnr_db,ssim\n";
    for (const auto& s : samples)
        f << method << "," << k << "," << s.patient_id << "," << s.slice_index << ","
          << format_g6(s.psnr_db) << "," << format_g6(s.ssim) << "\n";
}

void write_pgm(const Slice& map, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_pgm: cannot open '" + path + "'");
    f << "P5\n" << map.width << " " << map.height << "\n255\n";
    for (float v : map.data) {
        double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
        unsigned char byte = static_cast<unsigned char>(std::lround(255.0 * c));
        f.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

void write_map_csv(const Slice& map, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("write_map_csv: cannot open '" + path + "'");
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            if (x) f << ",";
            f << format_g6(map.at(y, x));
        }
        f << "\n";
    }
}

}  // namespace sliceterp
