#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "nrssb/nrseq.hpp"
#include "nrssb/numerology.hpp"
#include "nrssb/types.hpp"

namespace nrssb {

enum class ChannelModel { awgn_only, single_tap_phase, two_tap };

inline ChannelModel parse_channel_model(const std::string& s) {
    if (s == "awgn-only")
        return ChannelModel::awgn_only;
    if (s == "single-tap-phase")
        return ChannelModel::single_tap_phase;
    if (s == "two-tap")
        return ChannelModel::two_tap;
    throw input_error("unknown channel model: " + s);
}

struct CellSpec {
    int pci = 0;
    int i_ssb_bar = 0;
    double amplitude = 1.0;  // per resource element, linear full-scale units
    double cfo_hz = 0.0;
    long delay_samples = 0;
    ChannelModel channel = ChannelModel::awgn_only;
    double tap_phase_rad = 0.0;    // single-tap-phase
    long tap2_delay_samples = 1;   // two-tap: echo delay
    cpx tap2_gain = {0.0, 0.0};    // two-tap: echo gain
};

namespace detail {

// splitmix64 step; used to fold identifiers into substream seeds so every
// cell (and the noise pass) draws from an independent deterministic stream.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline uint64_t substream_seed(uint64_t seed, uint64_t a, uint64_t b) {
    uint64_t s = seed;
    uint64_t h = splitmix64(s);
    s ^= a * 0xff51afd7ed558ccdULL;
    h ^= splitmix64(s);
    s ^= b * 0xc4ceb9fe1a85ec53ULL;
    h ^= splitmix64(s);
    return h;
}

// Standard complex normal (E|z|^2 = 1) via Box-Muller; avoids the
// implementation-defined std::normal_distribution so output is portable.
inline cpx complex_gauss(std::mt19937_64& g) {
    const double u1 = std::max((g() >> 11) * 0x1.0p-53, 0x1.0p-53);
    const double u2 = (g() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-std::log(u1));  // Rayleigh with E[r^2] = 1
    const double th = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(th), r * std::sin(th)};
}

inline cpx random_qpsk(std::mt19937_64& g) {
    const uint64_t bits = g();
    const double a = 1.0 / std::sqrt(2.0);
    return {a * (1.0 - 2.0 * static_cast<double>(bits & 1)),
            a * (1.0 - 2.0 * static_cast<double>((bits >> 1) & 1))};
}

}  // namespace detail

// Unit-amplitude SSB grid: PSS/SSS BPSK, PBCH-DMRS QPSK, and PBCH data REs
// filled with random QPSK placeholders drawn from rng (payload encoding is
// out of scope, but the REs must carry power for RSSI realism).
inline SsbGrid build_ssb_grid(int pci, int i_ssb_bar, std::mt19937_64& rng) {
    const CellIdentity id = CellIdentity::from_pci(pci);
    SsbGrid grid;
    const auto pss = gen_pss(id.n_id_2);
    const auto sss = gen_sss(id.n_id_1, id.n_id_2);
    for (int i = 0; i < ssb::sync_sc_len; ++i) {
        grid.at(ssb::sync_sc_begin + i, ssb::pss_symbol) = cpx(pss[static_cast<size_t>(i)], 0.0);
        grid.at(ssb::sync_sc_begin + i, ssb::sss_symbol) = cpx(sss[static_cast<size_t>(i)], 0.0);
    }
    const cvec dmrs = gen_pbch_dmrs(pci, i_ssb_bar);
    const auto dmrs_pos = ssb::dmrs_positions(pci);
    for (size_t m = 0; m < dmrs_pos.size(); ++m)
        grid.at(dmrs_pos[m].second, dmrs_pos[m].first) = dmrs[m];
    for (const auto& [symbol, sc] : ssb::pbch_data_positions(pci))
        grid.at(sc, symbol) = detail::random_qpsk(rng);
    return grid;
}

// OFDM-modulate the burst with cyclic prefixes. The 1/256 amplitude scale is
// fixed regardless of fft_size so that a resource element of amplitude A
// demodulates to A after any rate conversion down to the 256-bin analysis FFT.
inline cvec ofdm_modulate(const SsbGrid& grid, const SsbNumerology& num = {}) {
    num.check();
    const int nfft = num.fft_size;
    const int cp = num.cp_len();
    const double scale = 1.0 / 256.0;
    cvec out(static_cast<size_t>(num.ssb_len()));
    cvec freq(static_cast<size_t>(nfft));
    for (int sym = 0; sym < SsbNumerology::symbols_per_ssb; ++sym) {
        std::fill(freq.begin(), freq.end(), cpx(0.0, 0.0));
        for (int sc = 0; sc < SsbNumerology::sc_per_ssb; ++sc)
            freq[static_cast<size_t>((sc - 120 + nfft) % nfft)] = grid.at(sc, sym);
        fft_inplace(freq.data(), nfft, true);
        cpx* dst = out.data() + sym * num.symbol_len();
        for (int i = 0; i < cp; ++i)
            dst[i] = scale * freq[static_cast<size_t>(nfft - cp + i)];
        for (int i = 0; i < nfft; ++i)
            dst[cp + i] = scale * freq[static_cast<size_t>(i)];
    }
    return out;
}

namespace detail {

inline void check_spec(const CellSpec& spec, const SsbNumerology& num, long capture_len) {
    CellIdentity::from_pci(spec.pci);
    if (spec.i_ssb_bar < 0 || spec.i_ssb_bar > 7)
        throw input_error("i_ssb_bar out of range 0..7");
    if (!(spec.amplitude > 0.0))
        throw input_error("amplitude must be positive");
    if (spec.delay_samples < 0)
        throw input_error("delay_samples must be >= 0");
    long tail = spec.delay_samples + num.ssb_len();
    if (spec.channel == ChannelModel::two_tap) {
        if (spec.tap2_delay_samples < 0)
            throw input_error("tap2_delay_samples must be >= 0");
        tail += spec.tap2_delay_samples;
    }
    if (tail > capture_len)
        throw input_error("delay_samples + SSB length exceeds capture length");
}

}  // namespace detail

// Superposition of per-spec SSB waveforms plus one shared complex white noise
// realization of per-sample power noise_power_db (dBFS). Bit-deterministic
// given (specs, seed); each cell's placeholder bits depend only on
// (seed, pci, i_ssb_bar), so superposition commutes with synthesis.
inline IqCapture synth_multi_cell(const std::vector<CellSpec>& specs,
                                  const SsbNumerology& num, long capture_len,
                                  double noise_power_db, uint64_t seed,
                                  double center_freq_hz = 3.73e9,
                                  double start_time_utc = 0.0,
                                  const std::string& source_id = "synth") {
    num.check();
    if (specs.empty())
        throw input_error("at least one cell spec required");
    if (capture_len < num.ssb_len())
        throw input_error("capture_len shorter than one SSB");
    for (const CellSpec& spec : specs)
        detail::check_spec(spec, num, capture_len);

    IqCapture cap;
    cap.sample_rate_hz = num.sample_rate_hz();
    cap.center_freq_hz = center_freq_hz;
    cap.start_time_utc = start_time_utc;
    cap.source_id = source_id;
    cap.samples.assign(static_cast<size_t>(capture_len), cpx(0.0, 0.0));

    for (const CellSpec& spec : specs) {
        std::mt19937_64 rng(detail::substream_seed(seed, static_cast<uint64_t>(spec.pci),
                                                   static_cast<uint64_t>(spec.i_ssb_bar)));
        cvec wave = ofdm_modulate(build_ssb_grid(spec.pci, spec.i_ssb_bar, rng), num);
        for (cpx& s : wave)
            s *= spec.amplitude;
        if (spec.channel == ChannelModel::single_tap_phase) {
            const cpx tap = std::polar(1.0, spec.tap_phase_rad);
            for (cpx& s : wave)
                s *= tap;
        }
        const double step = 2.0 * std::numbers::pi * spec.cfo_hz / cap.sample_rate_hz;
        auto place = [&](const cvec& w, long at, cpx gain) {
            for (size_t i = 0; i < w.size(); ++i) {
                const long n = at + static_cast<long>(i);
                // CFO rotation referenced to absolute capture time
                cap.samples[static_cast<size_t>(n)] +=
                    gain * w[i] * std::polar(1.0, step * static_cast<double>(n));
            }
        };
        place(wave, spec.delay_samples, cpx(1.0, 0.0));
        if (spec.channel == ChannelModel::two_tap)
            place(wave, spec.delay_samples + spec.tap2_delay_samples, spec.tap2_gain);
    }

    std::mt19937_64 noise_rng(detail::substream_seed(seed, 0x6e6f697365ULL, 0));
    const double sigma = std::sqrt(db_to_pow(noise_power_db));
    for (cpx& s : cap.samples)
        s += sigma * detail::complex_gauss(noise_rng);
    return cap;
}

inline IqCapture synth_ssb(const CellSpec& spec, const SsbNumerology& num,
                           long capture_len, double noise_power_db, uint64_t seed,
                           double center_freq_hz = 3.73e9, double start_time_utc = 0.0,
                           const std::string& source_id = "synth") {
    return synth_multi_cell({spec}, num, capture_len, noise_power_db, seed,
                            center_freq_hz, start_time_utc, source_id);
}

}  // namespace nrssb
