#pragma once

// Volume data model and preprocessing: min-max normalization, bilinear
// resize, synthetic phantom generation, triplet extraction at gap k,
// patient-level splits, and the "svol v1" on-disk format.

#include <cstdint>
#include <string>
#include <vector>

#include "sliceterp/common.hpp"

namespace sliceterp {

struct Slice {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // row-major

    float at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
};

struct Volume {
    std::string patient_id;
    int height = 0;
    int width = 0;
    int n_slices = 0;
    float in_plane_mm = 0.5f;
    float slice_mm = 1.5f;
    std::vector<float> voxels;  // [slice][row][col]

    float at(int s, int y, int x) const {
        return voxels[(static_cast<size_t>(s) * height + y) * width + x];
    }
    float& at(int s, int y, int x) {
        return voxels[(static_cast<size_t>(s) * height + y) * width + x];
    }
    Slice slice(int s) const;
};

// One supervised interpolation unit: predict target = S_i from
// lower = S_{i-k} and upper = S_{i+k}. Physical gap is 2k * slice_mm.
struct TripletSample {
    Slice lower;
    Slice upper;
    Slice target;
    int k = 1;
    std::string patient_id;
    int slice_index = 0;
};

struct SplitRatios {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
};

struct SplitManifest {
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
    SplitRatios ratios;
    uint64_t seed = 0;
};

struct PhantomParams {
    int height = 64;
    int width = 64;
    int n_slices = 40;
    int n_blobs = 6;
    double z_frequency = 3.0;  // cycles of through-plane drift over the stack
    double noise_sigma = 0.01;
    uint64_t seed = 7;
};

// Per-volume min-max rescale to [0,1], in place. A constant volume maps to
// all zeros with a warning.
void normalize_minmax(Volume& v);

// Bilinear resize, align-corners-false (pixel centers at (j+0.5)/N).
Slice resize_bilinear(const Slice& src, int out_h, int out_w);

// Sum of smooth ellipsoidal bumps whose centers and radii drift sinusoidally
// along z, plus seeded Gaussian noise, then min-max normalized. Bit-identical
// output for a fixed seed.
Volume generate_phantom(const PhantomParams& params, const std::string& patient_id);

// One sample per target index i in [k, n_slices-1-k].
std::vector<TripletSample> extract_triplets(const Volume& v, int k);

// Seeded patient shuffle, then contiguous partition: train and val take the
// floor of their ratio, test takes the remainder.
SplitManifest make_splits(const std::vector<std::string>& patient_ids, SplitRatios ratios,
                          uint64_t seed);

// svol v1: header line `SVOL1 {json}` + newline + little-endian f32 voxels,
// slice-major then row-major. Whole-file atomic write, bit-exact round-trip.
void save_volume(const Volume& v, const std::string& path);
Volume load_volume(const std::string& path);

struct DatasetSplits {
    std::vector<TripletSample> train;
    std::vector<TripletSample> val;
    std::vector<TripletSample> test;
    SplitManifest manifest;
    int n_volumes_loaded = 0;
    int n_volumes_skipped = 0;  // quality-control exclusions (too few slices)
};

// Loads every *.svol under dir (sorted by filename), drops volumes with
// fewer than min_slices slices, splits at patient level, extracts triplets.
DatasetSplits build_dataset(const std::string& dir, int k, SplitRatios ratios, uint64_t seed,
                            int min_slices = 20);

}  // namespace sliceterp
