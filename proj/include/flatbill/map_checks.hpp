#pragma once

#include <cstdint>

#include "flatbill/billiard_map.hpp"

namespace flatbill {

// Identity checks on mu-random steps of the map selected by mode. Steps that
// graze (cos phi1 below 1e-6) or whose finite-difference stencil straddles a
// singularity are skipped and counted.
struct DeterminantReport {
    std::int64_t samples = 0, skipped = 0, fd_skipped = 0;
    double max_det_error = 0.0;  // |det D - cos phi / cos phi1| relative
    double max_fd_error = 0.0;   // max entry error over max |entry|
};
DeterminantReport determinant_check(const Table& t, Mode mode, std::int64_t samples,
                                    std::uint64_t seed, double fd_step = 1e-7);

struct ReversibilityReport {
    std::int64_t samples = 0, skipped = 0;
    double max_error = 0.0;  // position distance plus |delta phi|
};
ReversibilityReport reversibility_check(const Table& t, Mode mode, std::int64_t samples,
                                        std::uint64_t seed);

// Random unstable-cone vectors at mu-random scatterer points pushed one step
// by the torus differential and checked against
//   K1 + cos phi1 / (tau + cos phi / (2K)) <= V1 <= K1 + cos phi1 / tau.
struct ConeReport {
    std::int64_t vectors = 0, violations = 0, excluded = 0;
    double worst_excess = 0.0;  // largest relative overshoot of a bound
    double excluded_fraction() const {
        return vectors > 0 ? static_cast<double>(excluded) / static_cast<double>(vectors) : 0.0;
    }
};
ConeReport cone_invariance_check(const Table& t, std::int64_t vectors, std::uint64_t seed);

}  // namespace flatbill
