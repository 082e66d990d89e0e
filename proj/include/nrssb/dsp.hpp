#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrssb/fft.hpp"
#include "nrssb/types.hpp"

namespace nrssb {

// Digital frequency translation: content at +shift_hz lands at 0 Hz, and the
// capture's center_freq_hz metadata moves up by shift_hz to compensate.
inline IqCapture mix(const IqCapture& iq, double shift_hz) {
    validate(iq);
    if (!(std::abs(shift_hz) < iq.sample_rate_hz / 2.0))
        throw input_error("mix shift must satisfy |shift| < sample_rate/2");
    IqCapture out = iq;
    out.center_freq_hz += shift_hz;
    const double step = -2.0 * std::numbers::pi * shift_hz / iq.sample_rate_hz;
    double phase = 0.0;
    for (cpx& s : out.samples) {
        s *= std::polar(1.0, phase);
        phase += step;
        if (phase > std::numbers::pi)
            phase -= 2.0 * std::numbers::pi;
        else if (phase < -std::numbers::pi)
            phase += 2.0 * std::numbers::pi;
    }
    return out;
}

struct Rational {
    long num = 1;
    long den = 1;
};

// Smallest-denominator rational p/q matching target/source, both terms <= 64.
inline Rational resample_ratio(double source_rate, double target_rate, long max_term = 64) {
    if (!(source_rate > 0.0) || !(target_rate > 0.0))
        throw input_error("resample rates must be positive");
    const double r = target_rate / source_rate;
    for (long q = 1; q <= max_term; ++q) {
        const long p = std::lround(r * static_cast<double>(q));
        if (p < 1 || p > max_term)
            continue;
        if (std::abs(r - static_cast<double>(p) / static_cast<double>(q)) <= 1e-9 * r)
            return {p, q};
    }
    throw input_error("resample ratio not expressible as p/q with p,q <= 64");
}

namespace detail {

inline double sinc(double x) {
    if (x == 0.0)
        return 1.0;
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

// Kaiser-windowed lowpass prototype; cutoff in cycles/sample at the
// upsampled rate, odd length so the group delay is an integer.
inline std::vector<double> kaiser_lowpass(int ntaps, double cutoff, double beta) {
    std::vector<double> h(static_cast<size_t>(ntaps));
    const double m = ntaps - 1;
    const double i0b = std::cyl_bessel_i(0.0, beta);
    for (int n = 0; n < ntaps; ++n) {
        const double t = 2.0 * n / m - 1.0;  // -1..1
        const double w = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - t * t))) / i0b;
        h[static_cast<size_t>(n)] = 2.0 * cutoff * sinc(2.0 * cutoff * (n - m / 2.0)) * w;
    }
    return h;
}

}  // namespace detail

// Polyphase rational resampler. The anti-alias prototype is designed for
// <= 0.1 dB ripple up to 0.4x and >= 60 dB rejection beyond 0.5x of the
// smaller rate (Kaiser design at 70 dB for margin). Group delay is
// compensated, so output sample m sits at input time m*q/p.
inline IqCapture resample(const IqCapture& iq, double target_rate_hz) {
    validate(iq);
    const Rational r = resample_ratio(iq.sample_rate_hz, target_rate_hz);
    IqCapture out;
    out.center_freq_hz = iq.center_freq_hz;
    out.start_time_utc = iq.start_time_utc;
    out.source_id = iq.source_id;
    out.sample_rate_hz = iq.sample_rate_hz * static_cast<double>(r.num) / static_cast<double>(r.den);
    if (r.num == r.den) {
        out.samples = iq.samples;
        return out;
    }
    const double up_rate = iq.sample_rate_hz * static_cast<double>(r.num);
    const double min_rate = std::min(iq.sample_rate_hz, out.sample_rate_hz);
    const double trans_norm = 0.1 * min_rate / up_rate;  // 0.4x..0.5x transition band
    const double atten_db = 70.0;
    int ntaps = static_cast<int>(std::ceil((atten_db - 7.95) / (14.36 * trans_norm))) + 1;
    if (ntaps % 2 == 0)
        ++ntaps;
    const double beta = 0.1102 * (atten_db - 8.7);
    std::vector<double> h = detail::kaiser_lowpass(ntaps, 0.45 * min_rate / up_rate, beta);
    for (double& v : h)
        v *= static_cast<double>(r.num);  // restore passband gain after zero-stuffing

    const long n_in = static_cast<long>(iq.samples.size());
    const long n_out = (n_in * r.num + r.den - 1) / r.den;
    const long delay = (ntaps - 1) / 2;
    out.samples.resize(static_cast<size_t>(n_out));
    for (long m = 0; m < n_out; ++m) {
        const long pos = m * r.den + delay;  // index into the zero-stuffed stream
        cpx acc = 0.0;
        long k = pos % r.num;  // first tap hitting a real (non-stuffed) sample
        long idx = (pos - k) / r.num;
        for (; k < ntaps && idx >= 0; k += r.num, --idx) {
            if (idx < n_in)
                acc += h[static_cast<size_t>(k)] * iq.samples[static_cast<size_t>(idx)];
        }
        out.samples[static_cast<size_t>(m)] = acc;
    }
    return out;
}

enum class Window { hann, rect };

inline Window parse_window(const std::string& s) {
    if (s == "hann")
        return Window::hann;
    if (s == "rect")
        return Window::rect;
    throw input_error("unknown window: " + s);
}

struct Spectrogram {
    std::vector<std::vector<double>> power_db;  // [frame][bin], DC-centered bins
    double bin_spacing_hz = 0.0;
    double frame_step_s = 0.0;
    double center_freq_hz = 0.0;
    int nfft = 0;
};

// Power spectrogram in dB re full scale. Normalization is (sum of window)^2,
// so a full-scale DC input reads 0 dB and, for the rect window, the linear
// bin sum of a frame equals that frame's time-domain mean-square power.
inline Spectrogram stft_spectrogram(const IqCapture& iq, int nfft = 1024,
                                    double overlap_frac = 0.5,
                                    Window window = Window::hann) {
    validate(iq);
    if (nfft < 2 || (nfft & (nfft - 1)) != 0)
        throw input_error("nfft must be a power of two");
    if (!(overlap_frac >= 0.0) || !(overlap_frac < 1.0))
        throw input_error("overlap_frac must be in [0, 1)");
    const long n = static_cast<long>(iq.samples.size());
    if (n < nfft)
        throw input_error("capture shorter than nfft");
    long hop = std::lround(nfft * (1.0 - overlap_frac));
    hop = std::clamp(hop, 1L, static_cast<long>(nfft));
    const long frames = (n - nfft) / hop + 1;

    std::vector<double> w(static_cast<size_t>(nfft), 1.0);
    if (window == Window::hann)
        for (int i = 0; i < nfft; ++i)
            w[static_cast<size_t>(i)] =
                0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / nfft));
    double sumw = 0.0;
    for (double v : w)
        sumw += v;
    const double norm = 1.0 / (sumw * sumw);

    Spectrogram sg;
    sg.nfft = nfft;
    sg.bin_spacing_hz = iq.sample_rate_hz / nfft;
    sg.frame_step_s = static_cast<double>(hop) / iq.sample_rate_hz;
    sg.center_freq_hz = iq.center_freq_hz;
    sg.power_db.assign(static_cast<size_t>(frames),
                       std::vector<double>(static_cast<size_t>(nfft)));
    cvec buf(static_cast<size_t>(nfft));
    for (long fr = 0; fr < frames; ++fr) {
        const cpx* src = iq.samples.data() + fr * hop;
        for (int i = 0; i < nfft; ++i)
            buf[static_cast<size_t>(i)] = src[i] * w[static_cast<size_t>(i)];
        fft_inplace(buf.data(), nfft);
        auto& row = sg.power_db[static_cast<size_t>(fr)];
        for (int j = 0; j < nfft; ++j) {
            const int k = (j + nfft / 2) % nfft;  // DC-centered axis
            row[static_cast<size_t>(j)] = pow_to_db(std::norm(buf[static_cast<size_t>(k)]) * norm);
        }
    }
    return sg;
}

inline nlohmann::json spectrogram_axes_json(const Spectrogram& sg) {
    return {{"nfft", sg.nfft},
            {"num_frames", sg.power_db.size()},
            {"bin_spacing_hz", sg.bin_spacing_hz},
            {"frame_step_s", sg.frame_step_s},
            {"center_freq_hz", sg.center_freq_hz},
            {"freq_start_hz", -sg.bin_spacing_hz * sg.nfft / 2.0},
            {"power_unit", "dBFS"}};
}

// One CSV row per frame, bins left to right from -rate/2.
inline void write_spectrogram_csv(const Spectrogram& sg, std::ostream& os) {
    os.precision(4);
    os << std::fixed;
    for (const auto& row : sg.power_db) {
        for (size_t j = 0; j < row.size(); ++j)
            os << (j ? "," : "") << row[j];
        os << "\n";
    }
}

}  // namespace nrssb
