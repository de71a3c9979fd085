#pragma once

// PSNR, Gaussian-windowed SSIM (scalar + local map), and aggregate
// statistics in the mean +- std reporting format.

#include <string>
#include <vector>

#include "sliceterp/volume.hpp"

namespace sliceterp {

inline constexpr double kPsnrSentinelDb = 100.0;  // reported when MSE == 0

// 10*log10(max_val^2 / MSE), computed in double.
double psnr(const std::vector<double>& pred, const std::vector<double>& target,
            double max_val = 1.0);
double psnr(const Slice& pred, const Slice& target, double max_val = 1.0);

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

// Scalar SSIM: mean of the local map over the valid region (windows fully
// inside the image). Requires extents >= window.
double ssim(const Slice& pred, const Slice& target, const SsimParams& params = {});

// Per-pixel local SSIM with the same extents as the input; borders are
// handled by reflection.
Slice ssim_map(const Slice& pred, const Slice& target, const SsimParams& params = {});

struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;  // population (divide by n)
};

Aggregate aggregate(const std::vector<double>& samples);

struct SampleMetrics {
    std::string patient_id;
    int slice_index = 0;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct MetricsReport {
    std::string method;
    int k = 1;
    std::vector<SampleMetrics> samples;
    Aggregate psnr_agg;
    Aggregate ssim_agg;
    int n_samples = 0;

    // Recomputes aggregates from the per-sample records.
    void finalize();
    // e.g. "unet k=1 PSNR 30.08±3.33 SSIM 0.8978±0.0542"
    std::string summary_line() const;
    void write_csv(const std::string& path) const;
};

// P5 graymap, 8-bit, values round(255*clamp(v,0,1)).
void write_pgm(const Slice& map, const std::string& path);
// Raw float CSV of a map, one row per image row.
void write_map_csv(const Slice& map, const std::string& path);

// Shared CSV float formatting (6 significant digits).
std::string format_g6(double v);

}  // namespace sliceterp
