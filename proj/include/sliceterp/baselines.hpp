#pragma once

// Non-learned interpolators anchoring all comparisons.

#include "sliceterp/common.hpp"
#include "sliceterp/volume.hpp"

namespace sliceterp {

enum class NearestPolicy { Lower, Upper };

inline void check_extents(const Slice& a, const Slice& b, const char* op) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(op) + ": slice extents differ, " +
                         std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                         std::to_string(b.height) + "x" + std::to_string(b.width));
}

// Elementwise midpoint; the target sits equidistant from both inputs.
inline Slice interpolate_linear(const Slice& lower, const Slice& upper) {
    check_extents(lower, upper, "interpolate_linear");
    Slice out = lower;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = 0.5f * (lower.data[i] + upper.data[i]);
    return out;
}

// The target is equidistant from both inputs, so "nearest" needs a policy;
// the preceding (lower) slice is the default.
inline Slice interpolate_nearest(const Slice& lower, const Slice& upper,
                                 NearestPolicy policy = NearestPolicy::Lower) {
    check_extents(lower, upper, "interpolate_nearest");
    return policy == NearestPolicy::Lower ? lower : upper;
}

}  // namespace sliceterp
