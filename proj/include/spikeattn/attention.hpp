#pragma once

// Spike-firing-rate attention maps over V and V-hat: mean over spike-time and
// channel axes per token, unfolded to the temporal x spatial grid, with
// threshold truncation, inside/outside region statistics, and pulse-peak
// alignment. Exports: one 8-bit PGM per frame plus a raw-value CSV.

#include <fstream>
#include <iomanip>
#include <sstream>

#include "spikeattn/metrics.hpp"
#include "spikeattn/model.hpp"

namespace spikeattn {

enum class MapSource { V, VHat };

struct SfrMap {
    std::vector<double> values;  // row-major [T', H'*W'], entries in [0,1]
    TokenOrigin origin;
    MapSource source = MapSource::V;
    int block_index = 0;

    double at(int t, int cell) const { return values[static_cast<int64_t>(t) * origin.h * origin.w + cell]; }
};

// spikes: [T_s, N, D] with N = T'*H'*W'.
inline SfrMap sfr_map(const Tensor& spikes, const TokenOrigin& origin, MapSource source = MapSource::V,
                      int block_index = 0) {
    if (spikes.shape.size() != 3) throw DimensionError("sfr_map: expected [T_s,N,D] spikes");
    const int ts = spikes.shape[0], n = spikes.shape[1], d = spikes.shape[2];
    if (n != origin.tokens())
        throw DimensionError("sfr_map: token count " + std::to_string(n) + " does not match origin " +
                             std::to_string(origin.tokens()));
    SfrMap map;
    map.origin = origin;
    map.source = source;
    map.block_index = block_index;
    map.values.assign(n, 0.0);
    const auto& sv = spikes.values();
    for (int t = 0; t < ts; ++t)
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) map.values[i] += sv[(static_cast<int64_t>(t) * n + i) * d + c];
    for (double& v : map.values) v /= static_cast<double>(ts) * d;
    return map;
}

// Closed rule: 1 where value >= thr.
inline std::vector<int> threshold_map(const SfrMap& map, double thr) {
    if (thr < 0.0 || thr > 1.0) throw ArgumentError("threshold_map: threshold must lie in [0,1]");
    std::vector<int> out(map.values.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = map.values[i] >= thr ? 1 : 0;
    return out;
}

struct RegionStats {
    double inside_mean = 0.0;
    double outside_mean = 0.0;
    double ratio = 0.0;  // inside / outside
};

// box given in token-grid coordinates, half-open [x0,x1) x [y0,y1).
inline RegionStats region_stats(const SfrMap& map, int x0, int y0, int x1, int y1) {
    const int gh = map.origin.h, gw = map.origin.w, gt = map.origin.t;
    if (x0 < 0 || y0 < 0 || x1 > gw || y1 > gh || x0 >= x1 || y0 >= y1)
        throw ArgumentError("region_stats: box outside the token grid");
    int64_t inside_n = 0, outside_n = 0;
    double inside = 0.0, outside = 0.0;
    for (int t = 0; t < gt; ++t)
        for (int y = 0; y < gh; ++y)
            for (int x = 0; x < gw; ++x) {
                double v = map.at(t, y * gw + x);
                if (x >= x0 && x < x1 && y >= y0 && y < y1) {
                    inside += v;
                    inside_n++;
                } else {
                    outside += v;
                    outside_n++;
                }
            }
    if (inside_n == 0 || outside_n == 0) throw ArgumentError("region_stats: empty inside or outside region");
    RegionStats rs;
    rs.inside_mean = inside / inside_n;
    rs.outside_mean = outside / outside_n;
    rs.ratio = rs.outside_mean > 0.0 ? rs.inside_mean / rs.outside_mean
                                     : (rs.inside_mean > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
    return rs;
}

// Pearson correlation between the per-frame mean SFR and the wave mean-pooled
// by the PE temporal stride (x4).
inline double peak_alignment(const SfrMap& map, const PulseWave& wave) {
    const int gt = map.origin.t;
    const int cells = map.origin.h * map.origin.w;
    if (static_cast<int>(wave.samples.size()) < 4 * gt)
        throw DimensionError("peak_alignment: wave shorter than 4x the map's temporal extent");
    std::vector<double> frame_mean(gt, 0.0), pooled(gt, 0.0);
    for (int t = 0; t < gt; ++t) {
        for (int c = 0; c < cells; ++c) frame_mean[t] += map.at(t, c);
        frame_mean[t] /= cells;
        for (int j = 0; j < 4; ++j) pooled[t] += wave.samples[4 * t + j];
        pooled[t] /= 4.0;
    }
    return pearson_plain(frame_mean, pooled);  // throws SignalError on constant series
}

// ---------------------------------------------------------------------------
// export

inline void write_pgm(const std::string& path, const std::vector<double>& values, int h, int w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ArgumentError("cannot write " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    for (int i = 0; i < h * w; ++i) {
        double v = std::clamp(values[i], 0.0, 1.0);
        unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
        f.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

inline void export_map(const SfrMap& map, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const int gt = map.origin.t, gh = map.origin.h, gw = map.origin.w;
    for (int t = 0; t < gt; ++t) {
        std::vector<double> frame(map.values.begin() + static_cast<int64_t>(t) * gh * gw,
                                  map.values.begin() + static_cast<int64_t>(t + 1) * gh * gw);
        std::ostringstream name;
        name << dir << "/map_" << std::setw(3) << std::setfill('0') << t << ".pgm";
        write_pgm(name.str(), frame, gh, gw);
    }
    std::ofstream csv(dir + "/map.csv");
    csv << std::setprecision(10);
    for (int t = 0; t < gt; ++t) {
        for (int c = 0; c < gh * gw; ++c) csv << (c ? "," : "") << map.at(t, c);
        csv << "\n";
    }
}

}  // namespace spikeattn
