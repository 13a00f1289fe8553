#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "poselift/error.hpp"

namespace poselift::ad {

// Dense (batch, channel, time) array, row-major with time innermost.
struct Tensor3 {
    int batch = 0;
    int channels = 0;
    int time = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int b, int c, int t)
        : batch(b), channels(c), time(t),
          data(static_cast<std::size_t>(b) * c * t, 0.0) {
        if (b <= 0 || c <= 0 || t <= 0)
            raise(ErrorKind::dimension, "Tensor3 dims must be positive: (" + std::to_string(b) +
                                            "," + std::to_string(c) + "," + std::to_string(t) + ")");
    }

    std::size_t size() const { return data.size(); }

    double& at(int b, int c, int t) {
        return data[(static_cast<std::size_t>(b) * channels + c) * time + t];
    }
    double at(int b, int c, int t) const {
        return data[(static_cast<std::size_t>(b) * channels + c) * time + t];
    }

    // Pointer to the start of one (batch, channel) row; time is contiguous.
    double* row(int b, int c) {
        return data.data() + (static_cast<std::size_t>(b) * channels + c) * time;
    }
    const double* row(int b, int c) const {
        return data.data() + (static_cast<std::size_t>(b) * channels + c) * time;
    }

    bool same_shape(const Tensor3& o) const {
        return batch == o.batch && channels == o.channels && time == o.time;
    }

    std::string shape_str() const {
        return "(" + std::to_string(batch) + "," + std::to_string(channels) + "," +
               std::to_string(time) + ")";
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline void require_same_shape(const Tensor3& a, const Tensor3& b, const char* op) {
    if (!a.same_shape(b))
        raise(ErrorKind::dimension,
              std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace poselift::ad
