#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "nrssb/fft.hpp"
#include "nrssb/numerology.hpp"
#include "nrssb/types.hpp"

namespace nrssb {

inline constexpr int num_pci = 1008;

// PCI = 3 * N_ID1 + N_ID2, N_ID1 in 0..335, N_ID2 in 0..2.
struct CellIdentity {
    int n_id_1 = 0;
    int n_id_2 = 0;

    int pci() const { return 3 * n_id_1 + n_id_2; }

    static CellIdentity from_pci(int pci) {
        if (pci < 0 || pci >= num_pci)
            throw input_error("pci out of range 0..1007");
        return {pci / 3, pci % 3};
    }
};

namespace detail {

// Binary m-sequence over GF(2), degree 7: x(i+7) = x(i+tap) + x(i).
// Returns the first 127 chips of the steady-state sequence.
inline std::array<uint8_t, 127> mseq127(int tap, const std::array<uint8_t, 7>& init) {
    std::array<uint8_t, 127 + 7> x{};
    for (int i = 0; i < 7; ++i)
        x[i] = init[i];
    for (int i = 0; i + 7 < static_cast<int>(x.size()); ++i)
        x[i + 7] = static_cast<uint8_t>((x[i + tap] + x[i]) & 1);
    std::array<uint8_t, 127> out{};
    for (int i = 0; i < 127; ++i)
        out[i] = x[i];
    return out;
}

// Length-31 Gold sequence c(n) with the fixed 1600-chip fast-forward.
inline std::vector<uint8_t> gold_c(uint32_t c_init, int length) {
    constexpr int nc = 1600;
    std::vector<uint8_t> x1(nc + length + 31), x2(nc + length + 31);
    x1[0] = 1;
    for (int i = 0; i < 31; ++i)
        x2[i] = static_cast<uint8_t>((c_init >> i) & 1);
    for (int i = 0; i + 31 < static_cast<int>(x1.size()); ++i) {
        x1[i + 31] = static_cast<uint8_t>((x1[i + 3] + x1[i]) & 1);
        x2[i + 31] = static_cast<uint8_t>((x2[i + 3] + x2[i + 2] + x2[i + 1] + x2[i]) & 1);
    }
    std::vector<uint8_t> c(length);
    for (int n = 0; n < length; ++n)
        c[n] = static_cast<uint8_t>((x1[n + nc] + x2[n + nc]) & 1);
    return c;
}

inline void check_pci(int pci) {
    if (pci < 0 || pci >= num_pci)
        throw input_error("pci out of range 0..1007");
}

}  // namespace detail

// PSS: BPSK m-sequence, cyclic shift 43 * N_ID2.
inline std::array<int, 127> gen_pss(int n_id_2) {
    if (n_id_2 < 0 || n_id_2 > 2)
        throw input_error("n_id_2 out of range 0..2");
    static const std::array<uint8_t, 127> x =
        detail::mseq127(4, {0, 1, 1, 0, 1, 1, 1});
    std::array<int, 127> d{};
    for (int n = 0; n < 127; ++n)
        d[n] = 1 - 2 * x[(n + 43 * n_id_2) % 127];
    return d;
}

// SSS: product of two shifted m-sequences; shifts carry (N_ID1, N_ID2).
inline std::array<int, 127> gen_sss(int n_id_1, int n_id_2) {
    if (n_id_1 < 0 || n_id_1 > 335)
        throw input_error("n_id_1 out of range 0..335");
    if (n_id_2 < 0 || n_id_2 > 2)
        throw input_error("n_id_2 out of range 0..2");
    static const std::array<uint8_t, 127> x0 =
        detail::mseq127(4, {1, 0, 0, 0, 0, 0, 0});
    static const std::array<uint8_t, 127> x1 =
        detail::mseq127(1, {1, 0, 0, 0, 0, 0, 0});
    const int m0 = 15 * (n_id_1 / 112) + 5 * n_id_2;
    const int m1 = n_id_1 % 112;
    std::array<int, 127> d{};
    for (int n = 0; n < 127; ++n)
        d[n] = (1 - 2 * x0[(n + m0) % 127]) * (1 - 2 * x1[(n + m1) % 127]);
    return d;
}

// PBCH DMRS: 144 QPSK symbols from the Gold sequence seeded by PCI and the
// SSB index hypothesis i_ssb_bar (0..7 for the 8-beam case).
inline cvec gen_pbch_dmrs(int pci, int i_ssb_bar) {
    detail::check_pci(pci);
    if (i_ssb_bar < 0 || i_ssb_bar > 7)
        throw input_error("i_ssb_bar out of range 0..7");
    const uint32_t c_init = (1u << 11) * static_cast<uint32_t>(i_ssb_bar + 1) *
                                static_cast<uint32_t>(pci / 4 + 1) +
                            (1u << 6) * static_cast<uint32_t>(i_ssb_bar + 1) +
                            static_cast<uint32_t>(pci % 4);
    const std::vector<uint8_t> c = detail::gold_c(c_init, 2 * 144);
    cvec r(144);
    const double a = 1.0 / std::sqrt(2.0);
    for (int m = 0; m < 144; ++m)
        r[m] = cpx(a * (1 - 2 * c[2 * m]), a * (1 - 2 * c[2 * m + 1]));
    return r;
}

// SSB resource layout on the 240-subcarrier x 4-symbol burst grid.
// Positions are (symbol, subcarrier) pairs in sequence-mapping order
// (ascending subcarrier within a symbol, symbols 1, 2, 3).
namespace ssb {

inline constexpr int pss_symbol = 0;
inline constexpr int sss_symbol = 2;
inline constexpr int sync_sc_begin = 56;  // PSS/SSS occupy subcarriers 56..182
inline constexpr int sync_sc_len = 127;

inline int dmrs_shift(int pci) { return pci % 4; }

inline bool is_pbch_re(int symbol, int sc) {
    if (symbol == 1 || symbol == 3)
        return true;
    return symbol == 2 && (sc < 48 || sc >= 192);
}

inline std::vector<std::pair<int, int>> dmrs_positions(int pci) {
    detail::check_pci(pci);
    const int v = dmrs_shift(pci);
    std::vector<std::pair<int, int>> pos;
    pos.reserve(144);
    for (int symbol : {1, 2, 3})
        for (int sc = v; sc < 240; sc += 4)
            if (is_pbch_re(symbol, sc))
                pos.emplace_back(symbol, sc);
    return pos;
}

inline std::vector<std::pair<int, int>> pbch_data_positions(int pci) {
    detail::check_pci(pci);
    const int v = dmrs_shift(pci);
    std::vector<std::pair<int, int>> pos;
    pos.reserve(432);
    for (int symbol : {1, 2, 3})
        for (int sc = 0; sc < 240; ++sc)
            if (is_pbch_re(symbol, sc) && sc % 4 != v)
                pos.emplace_back(symbol, sc);
    return pos;
}

}  // namespace ssb

// The demodulated (or to-be-modulated) burst: 240 subcarriers x 4 symbols,
// lowest subcarrier first.
struct SsbGrid {
    std::array<std::array<cpx, SsbNumerology::symbols_per_ssb>,
               SsbNumerology::sc_per_ssb>
        re{};

    cpx& at(int sc, int symbol) { return re[static_cast<size_t>(sc)][static_cast<size_t>(symbol)]; }
    const cpx& at(int sc, int symbol) const {
        return re[static_cast<size_t>(sc)][static_cast<size_t>(symbol)];
    }
};

// Time-domain matched-filter template for one PSS symbol (CP included),
// normalized to unit energy. Subcarrier k of the burst sits at FFT bin
// (k - 120) mod fft_size, i.e. the grid is centered on the capture's DC.
inline cvec pss_time_template(int n_id_2, const SsbNumerology& num = {}) {
    num.check();
    const int nfft = num.fft_size;
    const std::array<int, 127> d = gen_pss(n_id_2);
    cvec freq(static_cast<size_t>(nfft), cpx(0.0, 0.0));
    for (int i = 0; i < ssb::sync_sc_len; ++i) {
        const int k = ssb::sync_sc_begin + i;
        freq[static_cast<size_t>((k - 120 + nfft) % nfft)] = cpx(d[i], 0.0);
    }
    cvec sym = fft(std::move(freq), true);
    cvec t(static_cast<size_t>(num.symbol_len()));
    const int cp = num.cp_len();
    for (int i = 0; i < cp; ++i)
        t[i] = sym[static_cast<size_t>(nfft - cp + i)];
    std::copy(sym.begin(), sym.end(), t.begin() + cp);
    double energy = 0.0;
    for (const cpx& s : t)
        energy += std::norm(s);
    const double scale = 1.0 / std::sqrt(energy);
    for (cpx& s : t)
        s *= scale;
    return t;
}

}  // namespace nrssb
