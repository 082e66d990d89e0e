#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace nrssb {

using cpx = std::complex<double>;
using cvec = std::vector<cpx>;

// Thrown for malformed user input (files, CLI values, out-of-range ids).
// Everything else escaping the library is a plain logic/runtime error.
struct input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Power quantities are reported in dB relative to full scale (|x| = 1.0).
// Zero/denormal powers clamp to the floor instead of producing -inf.
inline constexpr double db_floor = -160.0;

inline double pow_to_db(double p_lin) {
    if (!(p_lin > 0.0))
        return db_floor;
    return std::max(db_floor, 10.0 * std::log10(p_lin));
}

inline double db_to_pow(double db) { return std::pow(10.0, db / 10.0); }

// One contiguous complex baseband recording plus the sidecar facts needed
// to interpret it. start_time_utc is seconds since the Unix epoch.
struct IqCapture {
    cvec samples;
    double sample_rate_hz = 0.0;
    double center_freq_hz = 0.0;
    double start_time_utc = 0.0;
    std::string source_id;
};

inline void validate(const IqCapture& cap) {
    if (cap.samples.empty())
        throw input_error("capture has no samples");
    if (!(cap.sample_rate_hz > 0.0))
        throw input_error("capture sample_rate_hz must be positive");
    if (!std::isfinite(cap.center_freq_hz))
        throw input_error("capture center_freq_hz must be finite");
    for (const cpx& s : cap.samples)
        if (!std::isfinite(s.real()) || !std::isfinite(s.imag()))
            throw input_error("capture contains non-finite samples");
}

}  // namespace nrssb
