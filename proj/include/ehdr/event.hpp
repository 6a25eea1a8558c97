#pragma once

// Event stream data model, fixed-duration chunking and voxel-grid
// rasterization with a bilinear temporal kernel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ehdr {

struct EventError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Event {
    uint64_t t = 0;  // microseconds
    uint16_t x = 0;
    uint16_t y = 0;
    int8_t p = 1;  // polarity, +1 or -1
};

struct EventStream {
    uint16_t width = 0;
    uint16_t height = 0;
    std::vector<Event> events;  // non-decreasing timestamps
};

struct EventChunk {
    uint64_t t_start = 0;
    uint64_t tau = 0;  // chunk duration, microseconds
    std::vector<Event> events;
};

constexpr int kVoxelBins = 5;

struct VoxelGrid {
    int bins = kVoxelBins;
    int width = 0;
    int height = 0;
    std::vector<float> data;  // bins * height * width

    VoxelGrid() = default;
    VoxelGrid(int b, int w, int h) : bins(b), width(w), height(h), data(size_t(b) * w * h, 0.0f) {}
    float& at(int b, int x, int y) { return data[(size_t(b) * height + y) * width + x]; }
    float at(int b, int x, int y) const { return data[(size_t(b) * height + y) * width + x]; }
    float total_mass() const {
        double s = 0.0;
        for (float v : data) s += v;
        return float(s);
    }
};

enum class ChunkDirection { Forward, Backward };

// Split [t0, t1) (forward) or (t1, t0] (backward) into consecutive chunks of
// duration tau. Backward windows are returned on a reversed clock: event time
// becomes t0 - t and polarities are negated, so downstream consumers see a
// plain forward stream that walks from the reference toward the earlier
// bracket.
inline std::vector<EventChunk> chunk_stream(const EventStream& stream, uint64_t t0, uint64_t t1,
                                            uint64_t tau, ChunkDirection direction) {
    if (t0 == t1) throw EventError("chunk_stream: empty window");
    if (tau == 0) throw EventError("chunk_stream: zero chunk duration");
    const uint64_t lo = std::min(t0, t1), hi = std::max(t0, t1);
    const uint64_t span = hi - lo;
    const size_t n_chunks = size_t((span + tau - 1) / tau);

    std::vector<EventChunk> chunks(n_chunks);
    for (size_t i = 0; i < n_chunks; ++i) {
        chunks[i].t_start = uint64_t(i) * tau;
        chunks[i].tau = std::min(tau, span - uint64_t(i) * tau);
    }

    if (direction == ChunkDirection::Forward) {
        for (const Event& e : stream.events) {
            if (e.t < lo || e.t >= hi) continue;
            const uint64_t rel = e.t - lo;
            Event ev = e;
            ev.t = rel;
            chunks[size_t(rel / tau)].events.push_back(ev);
        }
    } else {
        // events in (t1, t0], reversed clock r = t0 - t, polarity negated
        for (auto it = stream.events.rbegin(); it != stream.events.rend(); ++it) {
            const Event& e = *it;
            if (e.t <= lo || e.t > hi) continue;
            const uint64_t rel = hi - e.t;
            Event ev = e;
            ev.t = rel;
            ev.p = int8_t(-e.p);
            chunks[size_t(rel / tau)].events.push_back(ev);
        }
    }
    return chunks;
}

// Bilinear-in-time deposit: bin b receives p * max(0, 1 - |b - t*|) with
// t* = (t - t_start)/tau * (B-1). Total signed mass equals the signed event
// count of the chunk.
inline VoxelGrid voxelize(const EventChunk& chunk, int width, int height,
                          int bins = kVoxelBins) {
    VoxelGrid grid(bins, width, height);
    if (chunk.tau == 0) return grid;
    const double scale = double(bins - 1) / double(chunk.tau);
    for (const Event& e : chunk.events) {
        const double ts = double(e.t - chunk.t_start) * scale;
        const int b0 = int(std::floor(ts));
        const double f = ts - b0;
        const float p = float(e.p);
        if (b0 >= 0 && b0 < bins) grid.at(b0, e.x, e.y) += p * float(1.0 - f);
        if (b0 + 1 < bins && f > 0.0) grid.at(b0 + 1, e.x, e.y) += p * float(f);
    }
    return grid;
}

// Events per frame interval inside [t0, t1).
inline double event_rate(const EventStream& stream, uint64_t t0, uint64_t t1,
                         uint64_t frame_interval_us) {
    if (t1 <= t0) throw EventError("event_rate: empty window");
    if (frame_interval_us == 0) throw EventError("event_rate: zero frame interval");
    size_t count = 0;
    for (const Event& e : stream.events)
        if (e.t >= t0 && e.t < t1) ++count;
    const double intervals = double(t1 - t0) / double(frame_interval_us);
    return double(count) / intervals;
}

}  // namespace ehdr
