#pragma once

#include <cstddef>
#include <vector>

namespace qpnet {

struct FrameRecord {
    double f0 = 0.0;  // Hz, 0 when unvoiced
    bool voiced = false;
    std::vector<double> mcep;
    double log_energy = 0.0;
};

// Frame-rate acoustic features. Frame i owns samples [i*hop, (i+1)*hop) and
// is analysed with a window centred on i*hop + hop/2.
struct FrameTrack {
    int frame_hop = 0;
    int sample_rate = 0;
    std::vector<FrameRecord> frames;

    std::size_t size() const { return frames.size(); }
    std::size_t voiced_count() const {
        std::size_t n = 0;
        for (const auto& f : frames) n += f.voiced ? 1 : 0;
        return n;
    }
    // Throws std::invalid_argument on a broken voiced/f0 pairing.
    void validate() const;
};

inline std::size_t frame_count_for(std::size_t samples, int hop) {
    return (samples + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop);
}

inline double frame_center(std::size_t frame, int hop) {
    return static_cast<double>(frame) * hop + 0.5 * hop;
}

}  // namespace qpnet
