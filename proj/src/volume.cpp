#include "sliceterp/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "sliceterp/rng.hpp"

namespace fs = std::filesystem;

namespace sliceterp {

Slice Volume::slice(int s) const {
    Slice out;
    out.height = height;
    out.width = width;
    auto begin = voxels.begin() + static_cast<int64_t>(s) * height * width;
    out.data.assign(begin, begin + static_cast<int64_t>(height) * width);
    return out;
}

void normalize_minmax(Volume& v) {
    if (v.voxels.empty()) throw std::invalid_argument("normalize_minmax: empty volume");
    float lo = v.voxels[0], hi = v.voxels[0];
    for (float x : v.voxels) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (lo == hi) {
        warn("normalize_minmax: constant volume for patient '" + v.patient_id +
             "', mapping to all zeros");
        std::fill(v.voxels.begin(), v.voxels.end(), 0.0f);
        return;
    }
    float range = hi - lo;
    for (float& x : v.voxels) x = (x - lo) / range;
}

Slice resize_bilinear(const Slice& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0)
        throw std::invalid_argument("resize_bilinear: target extents must be positive");
    if (src.height < 2 || src.width < 2)
        throw std::invalid_argument("resize_bilinear: source extents must be >= 2");
    Slice out;
    out.height = out_h;
    out.width = out_w;
    out.data.resize(static_cast<size_t>(out_h) * out_w);
    double sy_scale = static_cast<double>(src.height) / out_h;
    double sx_scale = static_cast<double>(src.width) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double sy = (oy + 0.5) * sy_scale - 0.5;
        sy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
        int y0 = static_cast<int>(sy);
        int y1 = std::min(y0 + 1, src.height - 1);
        double wy = sy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double sx = (ox + 0.5) * sx_scale - 0.5;
            sx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
            int x0 = static_cast<int>(sx);
            int x1 = std::min(x0 + 1, src.width - 1);
            double wx = sx - x0;
            double top = (1.0 - wx) * src.at(y0, x0) + wx * src.at(y0, x1);
            double bot = (1.0 - wx) * src.at(y1, x0) + wx * src.at(y1, x1);
            out.data[static_cast<size_t>(oy) * out_w + ox] =
                static_cast<float>((1.0 - wy) * top + wy * bot);
        }
    }
    return out;
}

Volume generate_phantom(const PhantomParams& p, const std::string& patient_id) {
    if (p.height <= 0 || p.width <= 0 || p.n_slices <= 0)
        throw std::invalid_argument("generate_phantom: extents must be positive");
    if (p.n_blobs < 0 || p.z_frequency < 0 || p.noise_sigma < 0)
        throw std::invalid_argument("generate_phantom: invalid parameters");

    Volume v;
    v.patient_id = patient_id;
    v.height = p.height;
    v.width = p.width;
    v.n_slices = p.n_slices;
    v.voxels.assign(static_cast<size_t>(p.n_slices) * p.height * p.width, 0.0f);

    struct Blob {
        double amp, cx0, cy0, ax, ay, rx0, ry0, cz, rz, phx, phy, phr;
    };
    Rng brng(derive_seed(p.seed, "phantom-blobs"));
    std::vector<Blob> blobs;
    for (int b = 0; b < p.n_blobs; ++b) {
        Blob bl;
        bl.amp = brng.uniform(0.5, 1.0);
        bl.cx0 = brng.uniform(0.25, 0.75) * p.width;
        bl.cy0 = brng.uniform(0.25, 0.75) * p.height;
        bl.ax = brng.uniform(0.04, 0.10) * p.width;   // drift amplitude, px
        bl.ay = brng.uniform(0.04, 0.10) * p.height;
        bl.rx0 = brng.uniform(0.08, 0.20) * p.width;
        bl.ry0 = brng.uniform(0.08, 0.20) * p.height;
        bl.cz = brng.uniform(0.15, 0.85) * p.n_slices;
        bl.rz = brng.uniform(0.50, 0.90) * p.n_slices;
        bl.phx = brng.uniform(0.0, 6.283185307179586);
        bl.phy = brng.uniform(0.0, 6.283185307179586);
        bl.phr = brng.uniform(0.0, 6.283185307179586);
        blobs.push_back(bl);
    }

    Rng nrng(derive_seed(p.seed, "phantom-noise"));
    size_t idx = 0;
    for (int z = 0; z < p.n_slices; ++z) {
        double phase = 6.283185307179586 * p.z_frequency * z / p.n_slices;
        for (int y = 0; y < p.height; ++y)
            for (int x = 0; x < p.width; ++x, ++idx) {
                double acc = 0.0;
                for (const Blob& bl : blobs) {
                    double cx = bl.cx0 + bl.ax * std::sin(phase + bl.phx);
                    double cy = bl.cy0 + bl.ay * std::sin(phase + bl.phy);
                    double rx = bl.rx0 * (1.0 + 0.3 * std::sin(phase + bl.phr));
                    double ry = bl.ry0 * (1.0 + 0.3 * std::sin(phase + bl.phr + 1.0));
                    double dx = (x - cx) / rx;
                    double dy = (y - cy) / ry;
                    double dz = (z - bl.cz) / bl.rz;
                    acc += bl.amp * std::exp(-(dx * dx + dy * dy + dz * dz));
                }
                if (p.noise_sigma > 0) acc += p.noise_sigma * nrng.gaussian();
                v.voxels[idx] = static_cast<float>(acc);
            }
    }
    normalize_minmax(v);
    return v;
}

std::vector<TripletSample> extract_triplets(const Volume& v, int k) {
    if (k < 1) throw std::invalid_argument("extract_triplets: k must be >= 1");
    std::vector<TripletSample> out;
    if (v.n_slices < 2 * k + 1) {
        warn("extract_triplets: volume '" + v.patient_id + "' has " +
             std::to_string(v.n_slices) + " slices, need >= " + std::to_string(2 * k + 1) +
             " for k=" + std::to_string(k));
        return out;
    }
    out.reserve(static_cast<size_t>(v.n_slices - 2 * k));
    for (int i = k; i <= v.n_slices - 1 - k; ++i) {
        TripletSample s;
        s.lower = v.slice(i - k);
        s.upper = v.slice(i + k);
        s.target = v.slice(i);
        s.k = k;
        s.patient_id = v.patient_id;
        s.slice_index = i;
        out.push_back(std::move(s));
    }
    return out;
}

SplitManifest make_splits(const std::vector<std::string>& patient_ids, SplitRatios ratios,
                          uint64_t seed) {
    double total = ratios.train + ratios.val + ratios.test;
    if (std::abs(total - 1.0) > 1e-9)
        throw std::invalid_argument("make_splits: ratios must sum to 1");
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0)
        throw std::invalid_argument("make_splits: ratios must be non-negative");
    if (patient_ids.size() < 3)
        throw std::invalid_argument("make_splits: need at least 3 patients, got " +
                                    std::to_string(patient_ids.size()));

    std::vector<std::string> shuffled = patient_ids;
    Rng rng(derive_seed(seed, "patient-splits"));
    rng.shuffle(shuffled);

    size_t n = shuffled.size();
    size_t n_train = static_cast<size_t>(std::floor(ratios.train * static_cast<double>(n)));
    size_t n_val = static_cast<size_t>(std::floor(ratios.val * static_cast<double>(n)));

    SplitManifest m;
    m.ratios = ratios;
    m.seed = seed;
    m.train.assign(shuffled.begin(), shuffled.begin() + static_cast<int64_t>(n_train));
    m.val.assign(shuffled.begin() + static_cast<int64_t>(n_train),
                 shuffled.begin() + static_cast<int64_t>(n_train + n_val));
    m.test.assign(shuffled.begin() + static_cast<int64_t>(n_train + n_val), shuffled.end());
    return m;
}

namespace {

constexpr const char* kMagic = "SVOL1 ";
constexpr int64_t kMaxVoxels = int64_t(1) << 31;

}  // namespace

void save_volume(const Volume& v, const std::string& path) {
    nlohmann::ordered_json hdr;
    hdr["patient_id"] = v.patient_id;
    hdr["height"] = v.height;
    hdr["width"] = v.width;
    hdr["slices"] = v.n_slices;
    hdr["in_plane_mm"] = static_cast<double>(v.in_plane_mm);
    hdr["slice_mm"] = static_cast<double>(v.slice_mm);
    std::string header = std::string(kMagic) + hdr.dump() + "\n";

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw DataError("save_volume: cannot open '" + tmp + "' for writing");
        f.write(header.data(), static_cast<std::streamsize>(header.size()));
        f.write(reinterpret_cast<const char*>(v.voxels.data()),
                static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
        if (!f) throw DataError("save_volume: write failed on '" + tmp + "'");
    }
    fs::rename(tmp, path);
}

Volume load_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_volume: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(f, line))
        throw TruncatedPayloadError("load_volume: '" + path + "' missing header line");
    if (line.rfind(kMagic, 0) != 0) {
        size_t off = 0;
        while (off < line.size() && off < 6 && line[off] == kMagic[off]) ++off;
        throw BadMagicError("load_volume: '" + path + "' bad magic at offset " +
                            std::to_string(off) + ", expected 'SVOL1 '");
    }

    nlohmann::json hdr;
    try {
        hdr = nlohmann::json::parse(line.substr(6));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_volume: '" + path + "' malformed header json: " + e.what());
    }

    Volume v;
    try {
        v.patient_id = hdr.at("patient_id").get<std::string>();
        v.height = hdr.at("height").get<int>();
        v.width = hdr.at("width").get<int>();
        v.n_slices = hdr.at("slices").get<int>();
        v.in_plane_mm = hdr.at("in_plane_mm").get<float>();
        v.slice_mm = hdr.at("slice_mm").get<float>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("load_volume: '" + path + "' header field error: " + e.what());
    }
    if (v.height <= 0 || v.width <= 0 || v.n_slices <= 0)
        throw ExtentOverflowError("load_volume: '" + path + "' non-positive extents " +
                                  std::to_string(v.n_slices) + "x" + std::to_string(v.height) +
                                  "x" + std::to_string(v.width));
    int64_t count = static_cast<int64_t>(v.height) * v.width * v.n_slices;
    if (v.height > kMaxVoxels / v.width ||
        static_cast<int64_t>(v.height) * v.width > kMaxVoxels / v.n_slices)
        throw ExtentOverflowError("load_volume: '" + path + "' extents overflow voxel budget");

    auto header_bytes = static_cast<int64_t>(line.size()) + 1;
    f.seekg(0, std::ios::end);
    int64_t payload = static_cast<int64_t>(f.tellg()) - header_bytes;
    if (payload != count * static_cast<int64_t>(sizeof(float)))
        throw TruncatedPayloadError(
            "load_volume: '" + path + "' payload is " + std::to_string(payload) +
            " bytes, header implies " + std::to_string(count * sizeof(float)));
    f.seekg(header_bytes, std::ios::beg);
    v.voxels.resize(static_cast<size_t>(count));
    f.read(reinterpret_cast<char*>(v.voxels.data()),
           static_cast<std::streamsize>(count * sizeof(float)));
    if (!f) throw TruncatedPayloadError("load_volume: '" + path + "' short read");
    return v;
}

DatasetSplits build_dataset(const std::string& dir, int k, SplitRatios ratios, uint64_t seed,
                            int min_slices) {
    std::vector<std::string> paths;
    if (!fs::is_directory(dir)) throw DataError("build_dataset: '" + dir + "' is not a directory");
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".svol")
            paths.push_back(e.path().string());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw DataError("build_dataset: no .svol files under '" + dir + "'");

    DatasetSplits ds;
    std::vector<Volume> volumes;
    for (const auto& p : paths) {
        Volume v = load_volume(p);
        if (v.n_slices < min_slices) {
            warn("build_dataset: excluding '" + v.patient_id + "' (" +
                 std::to_string(v.n_slices) + " slices < " + std::to_string(min_slices) + ")");
            ++ds.n_volumes_skipped;
            continue;
        }
        volumes.push_back(std::move(v));
    }
    if (volumes.empty()) throw DataError("build_dataset: all volumes excluded by quality control");
    ds.n_volumes_loaded = static_cast<int>(volumes.size());

    std::vector<std::string> ids;
    ids.reserve(volumes.size());
    for (const auto& v : volumes) ids.push_back(v.patient_id);
    ds.manifest = make_splits(ids, ratios, seed);

    auto in = [](const std::vector<std::string>& set, const std::string& id) {
        return std::find(set.begin(), set.end(), id) != set.end();
    };
    for (const auto& v : volumes) {
        auto triplets = extract_triplets(v, k);
        auto* dst = in(ds.manifest.train, v.patient_id) ? &ds.train
                    : in(ds.manifest.val, v.patient_id) ? &ds.val
                                                        : &ds.test;
        for (auto& t : triplets) dst->push_back(std::move(t));
    }
    return ds;
}

}  // namespace sliceterp
