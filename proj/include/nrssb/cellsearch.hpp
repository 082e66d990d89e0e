#pragma once

#include <algorithm>
#include <map>
#include <numbers>
#include <numeric>
#include <vector>

#include "nrssb/dsp.hpp"
#include "nrssb/fft.hpp"
#include "nrssb/nrseq.hpp"
#include "nrssb/numerology.hpp"
#include "nrssb/types.hpp"

namespace nrssb {

struct PssDetection {
    int n_id_2 = 0;
    double coarse_cfo_hz = 0.0;
    long timing_offset_samples = 0;
    double peak_metric = 0.0;          // normalized correlation, in [0, 1]
    double peak_to_median_ratio = 0.0; // peak vs. median of its own (cfo, n_id_2) slice
};

struct SearchConfig {
    double cfo_grid_step_hz = 3750.0;   // SCS/8
    double cfo_grid_span_hz = 90000.0;  // grid covers +-span
    double detection_threshold = 8.0;   // on peak_to_median_ratio
    // A PSS peak only becomes a cell once some SSS candidate confirms it;
    // this floor rejects cross-template PSS leakage (|cross-corr| <= 0.3,
    // which otherwise clears the ratio threshold at high SNR) while a true
    // SSS at 0 dB per-RE SNR still scores ~0.7.
    double sss_min_metric = 0.5;
    int max_cells = 8;
    SsbNumerology numerology{};

    void check() const {
        numerology.check();
        if (!(cfo_grid_step_hz > 0.0))
            throw input_error("cfo_grid_step_hz must be positive");
        if (!(cfo_grid_span_hz >= cfo_grid_step_hz))
            throw input_error("cfo_grid_span_hz must be >= cfo_grid_step_hz");
        if (!(detection_threshold > 0.0))
            throw input_error("detection_threshold must be positive");
        if (!(sss_min_metric >= 0.0) || !(sss_min_metric < 1.0))
            throw input_error("sss_min_metric must be in [0, 1)");
        if (max_cells < 1)
            throw input_error("max_cells must be >= 1");
    }

    std::vector<double> cfo_grid() const {
        const int k_max = static_cast<int>(cfo_grid_span_hz / cfo_grid_step_hz);
        std::vector<double> grid;
        grid.reserve(static_cast<size_t>(2 * k_max + 1));
        for (int k = -k_max; k <= k_max; ++k)
            grid.push_back(k * cfo_grid_step_hz);
        return grid;
    }
};

namespace detail {

inline void check_rate(const IqCapture& iq, const SsbNumerology& num) {
    if (std::abs(iq.sample_rate_hz - num.sample_rate_hz()) > 1e-6 * num.sample_rate_hz())
        throw input_error("capture rate does not match the SSB numerology rate");
}

// Overlap-save machinery for correlating one short template against the
// whole capture: block FFTs of the signal are computed once and reused for
// every (cfo, n_id_2) hypothesis.
struct CorrEngine {
    static constexpr int block = 4096;
    long n = 0;       // capture length
    int m = 0;        // template length
    long stride = 0;  // valid lags per block
    long max_lag = 0; // last lag of interest (inclusive)
    std::vector<cvec> sig_ffts;

    CorrEngine(const cvec& x, int template_len, long max_lag_incl)
        : n(static_cast<long>(x.size())), m(template_len),
          stride(block - template_len + 1), max_lag(max_lag_incl) {
        const long nblocks = max_lag / stride + 1;
        sig_ffts.reserve(static_cast<size_t>(nblocks));
        for (long b = 0; b < nblocks; ++b) {
            cvec chunk(block, cpx(0.0, 0.0));
            const long start = b * stride;
            const long take = std::min<long>(block, n - start);
            std::copy(x.begin() + start, x.begin() + start + take, chunk.begin());
            fft_inplace(chunk.data(), block);
            sig_ffts.push_back(std::move(chunk));
        }
    }

    // out[l] = |sum_m x[l+m] * conj(tmpl_rot[m])| for l in [0, max_lag]
    void correlate_mag(const cvec& tmpl_rot, std::vector<double>& out) const {
        out.assign(static_cast<size_t>(max_lag + 1), 0.0);
        cvec tf(block, cpx(0.0, 0.0));
        std::copy(tmpl_rot.begin(), tmpl_rot.end(), tf.begin());
        fft_inplace(tf.data(), block);
        cvec buf(block);
        for (size_t b = 0; b < sig_ffts.size(); ++b) {
            const cvec& xf = sig_ffts[b];
            for (int k = 0; k < block; ++k)
                buf[static_cast<size_t>(k)] = xf[static_cast<size_t>(k)] * std::conj(tf[static_cast<size_t>(k)]);
            fft_inplace(buf.data(), block, true);
            const long base = static_cast<long>(b) * stride;
            const long last = std::min<long>(stride - 1, max_lag - base);
            for (long j = 0; j <= last; ++j)
                out[static_cast<size_t>(base + j)] =
                    std::abs(buf[static_cast<size_t>(j)]) / block;
        }
    }
};

inline double median_of(std::vector<double> v) {
    if (v.empty())
        return 0.0;
    const size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
    return v[mid];
}

}  // namespace detail

// Stage 1: joint coarse-CFO / PSS hypothesis search. For each point of the
// CFO grid and each n_id_2, the capture is correlated against the PSS
// template rotated to that offset (equivalent to derotating the capture);
// the metric is normalized by the local window energy so it lives in [0, 1].
// Returns, per n_id_2 branch, the non-maximum-suppressed peaks of the
// max-over-CFO metric: the branch best always, plus any further peaks whose
// peak_to_median_ratio clears the detection threshold, ranked by metric.
// Ties break toward the lowest CFO, then n_id_2, then lag.
inline std::vector<PssDetection> coarse_search(const IqCapture& iq, const SearchConfig& cfg) {
    validate(iq);
    cfg.check();
    detail::check_rate(iq, cfg.numerology);
    const SsbNumerology& num = cfg.numerology;
    const long n = static_cast<long>(iq.samples.size());
    const int m = num.symbol_len();
    const long max_lag = n - num.ssb_len();
    if (max_lag < 0)
        throw input_error("capture shorter than one SSB");
    const std::vector<double> cfos = cfg.cfo_grid();
    const double fs = num.sample_rate_hz();

    // local window energy for metric normalization
    std::vector<double> denom(static_cast<size_t>(max_lag + 1));
    {
        std::vector<double> prefix(static_cast<size_t>(n + 1), 0.0);
        for (long i = 0; i < n; ++i)
            prefix[static_cast<size_t>(i + 1)] =
                prefix[static_cast<size_t>(i)] + std::norm(iq.samples[static_cast<size_t>(i)]);
        for (long l = 0; l <= max_lag; ++l) {
            const double e = prefix[static_cast<size_t>(l + m)] - prefix[static_cast<size_t>(l)];
            denom[static_cast<size_t>(l)] = e > 0.0 ? std::sqrt(e) : 0.0;
        }
    }

    const detail::CorrEngine engine(iq.samples, m, max_lag);

    std::array<cvec, 3> templates;
    for (int n2 = 0; n2 < 3; ++n2)
        templates[static_cast<size_t>(n2)] = pss_time_template(n2, num);

    auto rotated = [&](int n2, size_t cfo_idx) {
        cvec t = templates[static_cast<size_t>(n2)];
        const double step = 2.0 * std::numbers::pi * cfos[cfo_idx] / fs;
        for (size_t i = 0; i < t.size(); ++i)
            t[i] *= std::polar(1.0, step * static_cast<double>(i));
        return t;
    };

    auto slice_metrics = [&](int n2, size_t cfo_idx, std::vector<double>& out) {
        engine.correlate_mag(rotated(n2, cfo_idx), out);
        for (long l = 0; l <= max_lag; ++l) {
            const double d = denom[static_cast<size_t>(l)];
            out[static_cast<size_t>(l)] = d > 0.0 ? out[static_cast<size_t>(l)] / d : 0.0;
        }
    };

    struct Peak {
        int n2;
        size_t cfo_idx;
        long lag;
        double metric;
        double ratio = 0.0;
    };
    std::vector<Peak> peaks;
    std::map<std::pair<int, size_t>, double> median_cache;
    std::vector<double> metrics;

    for (int n2 = 0; n2 < 3; ++n2) {
        std::vector<double> best(static_cast<size_t>(max_lag + 1), -1.0);
        std::vector<size_t> best_cfo(static_cast<size_t>(max_lag + 1), 0);
        for (size_t ci = 0; ci < cfos.size(); ++ci) {
            slice_metrics(n2, ci, metrics);
            for (long l = 0; l <= max_lag; ++l) {
                if (metrics[static_cast<size_t>(l)] > best[static_cast<size_t>(l)]) {
                    best[static_cast<size_t>(l)] = metrics[static_cast<size_t>(l)];
                    best_cfo[static_cast<size_t>(l)] = ci;
                }
            }
        }
        // non-maximum suppression over +- half an SSB
        const long half = num.ssb_len() / 2;
        std::vector<long> order(static_cast<size_t>(max_lag + 1));
        std::iota(order.begin(), order.end(), 0L);
        std::sort(order.begin(), order.end(), [&](long a, long b) {
            if (best[static_cast<size_t>(a)] != best[static_cast<size_t>(b)])
                return best[static_cast<size_t>(a)] > best[static_cast<size_t>(b)];
            return a < b;
        });
        std::vector<long> kept;
        const size_t keep_limit = static_cast<size_t>(cfg.max_cells) + 2;
        for (long lag : order) {
            if (kept.size() >= keep_limit)
                break;
            bool clear = true;
            for (long k : kept)
                if (std::abs(k - lag) <= half) {
                    clear = false;
                    break;
                }
            if (clear)
                kept.push_back(lag);
        }
        for (long lag : kept)
            peaks.push_back({n2, best_cfo[static_cast<size_t>(lag)], lag,
                             best[static_cast<size_t>(lag)]});
    }

    // Ratio of each peak against the median of its own winning-CFO slice
    // (the max-over-CFO trace has an inflated median and would bias this).
    std::vector<PssDetection> out;
    std::array<bool, 3> branch_reported{false, false, false};
    std::sort(peaks.begin(), peaks.end(), [&](const Peak& a, const Peak& b) {
        if (a.metric != b.metric)
            return a.metric > b.metric;
        if (cfos[a.cfo_idx] != cfos[b.cfo_idx])
            return cfos[a.cfo_idx] < cfos[b.cfo_idx];
        if (a.n2 != b.n2)
            return a.n2 < b.n2;
        return a.lag < b.lag;
    });
    for (Peak& p : peaks) {
        const auto key = std::make_pair(p.n2, p.cfo_idx);
        auto it = median_cache.find(key);
        if (it == median_cache.end()) {
            slice_metrics(p.n2, p.cfo_idx, metrics);
            it = median_cache.emplace(key, detail::median_of(metrics)).first;
        }
        p.ratio = p.metric / std::max(it->second, 1e-12);
        const bool first_of_branch = !branch_reported[static_cast<size_t>(p.n2)];
        if (first_of_branch || p.ratio >= cfg.detection_threshold) {
            branch_reported[static_cast<size_t>(p.n2)] = true;
            out.push_back({p.n2, cfos[p.cfo_idx], p.lag, p.metric, p.ratio});
        }
    }
    return out;
}

// Stage 2a: residual CFO from cyclic-prefix correlation across the four SSB
// symbols. Unambiguous over +-SCS/2 (+-15 kHz at 30 kHz spacing).
inline double fine_cfo(const IqCapture& iq, long timing, const SsbNumerology& num = {}) {
    validate(iq);
    num.check();
    detail::check_rate(iq, num);
    if (timing < 0 || timing + num.ssb_len() > static_cast<long>(iq.samples.size()))
        throw input_error("SSB window out of capture bounds");
    const int cp = num.cp_len();
    const int nfft = num.fft_size;
    cpx z = 0.0;
    for (int sym = 0; sym < SsbNumerology::symbols_per_ssb; ++sym) {
        const long a = timing + static_cast<long>(sym) * num.symbol_len();
        for (int i = 0; i < cp; ++i)
            z += std::conj(iq.samples[static_cast<size_t>(a + i)]) *
                 iq.samples[static_cast<size_t>(a + i + nfft)];
    }
    return std::arg(z) * num.sample_rate_hz() / (2.0 * std::numbers::pi * nfft);
}

// Stage 2b: CP-drop + FFT demodulation of the 4-symbol burst, derotated by
// -cfo_hz (phase referenced to the window start). Subcarrier k of the burst
// is FFT bin (k - 120) mod fft_size.
inline SsbGrid demodulate_ssb(const IqCapture& iq, long timing, double cfo_hz,
                              const SsbNumerology& num = {}) {
    validate(iq);
    num.check();
    detail::check_rate(iq, num);
    if (timing < 0 || timing + num.ssb_len() > static_cast<long>(iq.samples.size()))
        throw input_error("SSB window out of capture bounds");
    const int cp = num.cp_len();
    const int nfft = num.fft_size;
    const double step = -2.0 * std::numbers::pi * cfo_hz / num.sample_rate_hz();
    SsbGrid grid;
    cvec buf(static_cast<size_t>(nfft));
    for (int sym = 0; sym < SsbNumerology::symbols_per_ssb; ++sym) {
        const long w = timing + static_cast<long>(sym) * num.symbol_len() + cp;
        for (int i = 0; i < nfft; ++i)
            buf[static_cast<size_t>(i)] =
                iq.samples[static_cast<size_t>(w + i)] *
                std::polar(1.0, step * static_cast<double>(w + i - timing));
        fft_inplace(buf.data(), nfft);
        for (int sc = 0; sc < SsbNumerology::sc_per_ssb; ++sc)
            grid.at(sc, sym) = buf[static_cast<size_t>((sc - 120 + nfft) % nfft)];
    }
    return grid;
}

struct SssDetection {
    int n_id_1 = -1;
    double metric = 0.0;
    bool detected = false;
    std::vector<double> metrics;  // all 336 candidates, index = n_id_1
};

// Coherent SSS correlation over all 336 candidates for the given n_id_2.
// Metric is |<y, s>| / (|y| * |s|), so a zero grid yields all zeros and is
// flagged undetected.
inline SssDetection detect_sss(const SsbGrid& grid, int n_id_2) {
    if (n_id_2 < 0 || n_id_2 > 2)
        throw input_error("n_id_2 out of range 0..2");
    std::array<cpx, 127> y{};
    double energy = 0.0;
    for (int i = 0; i < ssb::sync_sc_len; ++i) {
        y[static_cast<size_t>(i)] = grid.at(ssb::sync_sc_begin + i, ssb::sss_symbol);
        energy += std::norm(y[static_cast<size_t>(i)]);
    }
    SssDetection det;
    det.metrics.assign(336, 0.0);
    if (energy <= 0.0)
        return det;
    const double scale = 1.0 / (std::sqrt(energy) * std::sqrt(127.0));
    for (int n1 = 0; n1 < 336; ++n1) {
        const auto s = gen_sss(n1, n_id_2);
        cpx acc = 0.0;
        for (int i = 0; i < 127; ++i)
            acc += y[static_cast<size_t>(i)] * static_cast<double>(s[static_cast<size_t>(i)]);
        const double metric = std::abs(acc) * scale;
        det.metrics[static_cast<size_t>(n1)] = metric;
        if (metric > det.metric) {
            det.metric = metric;
            det.n_id_1 = n1;
        }
    }
    det.detected = det.metric > 0.0;
    return det;
}

struct CellDetection {
    CellIdentity identity;
    double cfo_hz_total = 0.0;
    long timing_offset_samples = 0;
    PssDetection pss;
    double sss_metric = 0.0;
    SsbGrid ssb_grid;
    std::vector<double> sss_metrics;
};

// Full two-stage search: every coarse peak clearing the threshold is taken
// through fine CFO, demodulation, and SSS identification. Detections are
// sorted by descending SSS-region power (strongest cell first), capped at
// cfg.max_cells.
inline std::vector<CellDetection> search_all_cells(const IqCapture& iq, const SearchConfig& cfg) {
    const std::vector<PssDetection> peaks = coarse_search(iq, cfg);
    std::vector<std::pair<double, CellDetection>> ranked;  // (-sss power, det)
    for (const PssDetection& peak : peaks) {
        if (peak.peak_to_median_ratio < cfg.detection_threshold)
            continue;
        const IqCapture derot = mix(iq, peak.coarse_cfo_hz);
        const double fine = fine_cfo(derot, peak.timing_offset_samples, cfg.numerology);
        SsbGrid grid = demodulate_ssb(derot, peak.timing_offset_samples, fine, cfg.numerology);
        SssDetection sss = detect_sss(grid, peak.n_id_2);
        if (!sss.detected || sss.metric < cfg.sss_min_metric)
            continue;
        double p = 0.0;
        for (int i = 0; i < ssb::sync_sc_len; ++i)
            p += std::norm(grid.at(ssb::sync_sc_begin + i, ssb::sss_symbol));
        CellDetection det;
        det.identity = CellIdentity{sss.n_id_1, peak.n_id_2};
        det.cfo_hz_total = peak.coarse_cfo_hz + fine;
        det.timing_offset_samples = peak.timing_offset_samples;
        det.pss = peak;
        det.sss_metric = sss.metric;
        det.ssb_grid = grid;
        det.sss_metrics = std::move(sss.metrics);
        ranked.emplace_back(-p, std::move(det));
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first)
            return a.first < b.first;
        if (a.second.identity.pci() != b.second.identity.pci())
            return a.second.identity.pci() < b.second.identity.pci();
        return a.second.timing_offset_samples < b.second.timing_offset_samples;
    });
    std::vector<CellDetection> out;
    for (auto& [key, det] : ranked) {
        if (static_cast<int>(out.size()) >= cfg.max_cells)
            break;
        out.push_back(std::move(det));
    }
    return out;
}

}  // namespace nrssb
