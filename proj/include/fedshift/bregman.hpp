#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fedshift {

// Named divergence variants with their explicit per-variant loss forms. The
// PU losses use the same constant C that multiplies the test-side sum in the
// matching objective.
enum class BregmanVariant { LSIF, UKL, LR, PU };

inline std::string to_string(BregmanVariant v) {
    switch (v) {
        case BregmanVariant::LSIF: return "lsif";
        case BregmanVariant::UKL: return "ukl";
        case BregmanVariant::LR: return "lr";
        case BregmanVariant::PU: return "pu";
    }
    return "?";
}

// Upper end of the admissible model output range; finite only for PU.
inline double admissible_upper(BregmanVariant v) {
    return v == BregmanVariant::PU ? 1.0 : std::numeric_limits<double>::infinity();
}

inline bool in_domain(BregmanVariant v, double z) {
    switch (v) {
        case BregmanVariant::LSIF: return z >= 0;
        case BregmanVariant::UKL:
        case BregmanVariant::LR: return z > 0;
        case BregmanVariant::PU: return z > 0 && z < 1;
    }
    return false;
}

inline void require_domain(BregmanVariant v, double z) {
    if (!in_domain(v, z))
        throw std::domain_error("value " + std::to_string(z) + " outside admissible range of " +
                                to_string(v));
}

// C is used only by the PU variant.
inline double ell1(BregmanVariant v, double z, double C = 0) {
    require_domain(v, z);
    switch (v) {
        case BregmanVariant::LSIF: return 0.5 * z * z;
        case BregmanVariant::UKL: return z;
        case BregmanVariant::LR: return std::log1p(z);
        case BregmanVariant::PU: return -C * std::log1p(-z);
    }
    return 0;
}

inline double ell1_deriv(BregmanVariant v, double z, double C = 0) {
    require_domain(v, z);
    switch (v) {
        case BregmanVariant::LSIF: return z;
        case BregmanVariant::UKL: return 1.0;
        case BregmanVariant::LR: return 1.0 / (z + 1.0);
        case BregmanVariant::PU: return C / (1.0 - z);
    }
    return 0;
}

inline double ell2(BregmanVariant v, double z, double C) {
    require_domain(v, z);
    switch (v) {
        case BregmanVariant::LSIF: return 0.5 * C * z * z - z;
        case BregmanVariant::UKL: return C * z - std::log(z);
        case BregmanVariant::LR: return C * std::log1p(z) - std::log(z / (z + 1.0));
        case BregmanVariant::PU: return -C * std::log(z) + (C - C * C) * std::log1p(-z);
    }
    return 0;
}

inline double ell2_deriv(BregmanVariant v, double z, double C) {
    require_domain(v, z);
    switch (v) {
        case BregmanVariant::LSIF: return C * z - 1.0;
        case BregmanVariant::UKL: return C - 1.0 / z;
        case BregmanVariant::LR: return (C + 1.0) / (z + 1.0) - 1.0 / z;
        case BregmanVariant::PU: return -C / z - (C - C * C) / (1.0 - z);
    }
    return 0;
}

}  // namespace fedshift
