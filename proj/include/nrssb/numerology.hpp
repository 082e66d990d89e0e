#pragma once

#include <stdexcept>

#include "nrssb/types.hpp"

namespace nrssb {

// Sampling/OFDM geometry for an SSB processed at a small FFT that spans just
// the burst's 240 subcarriers. CP length scales with the FFT the same way the
// standard's 2048-point reference numerology does (144 samples @ 2048), so the
// CP/symbol-duration ratio is preserved at any processing rate.
struct SsbNumerology {
    double scs_hz = 30e3;
    int fft_size = 256;

    double sample_rate_hz() const { return scs_hz * fft_size; }
    int cp_len() const { return 144 * fft_size / 2048; }
    int symbol_len() const { return fft_size + cp_len(); }
    int ssb_len() const { return symbols_per_ssb * symbol_len(); }

    static constexpr int symbols_per_ssb = 4;
    static constexpr int sc_per_ssb = 240;

    void check() const {
        if (!(scs_hz > 0.0))
            throw input_error("scs_hz must be positive");
        if (fft_size < sc_per_ssb || (144 * fft_size) % 2048 != 0)
            throw input_error("fft_size must be >= 240 and a multiple of 128");
    }
};

}  // namespace nrssb
