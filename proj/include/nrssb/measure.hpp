#pragma once

#include <algorithm>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nrssb/cellsearch.hpp"
#include "nrssb/iqio.hpp"
#include "nrssb/nrseq.hpp"
#include "nrssb/types.hpp"

namespace nrssb {

enum class RsrpMode { sss_only, sss_dmrs };

inline RsrpMode parse_rsrp_mode(const std::string& s) {
    if (s == "sss")
        return RsrpMode::sss_only;
    if (s == "sss+dmrs")
        return RsrpMode::sss_dmrs;
    throw input_error("unknown rsrp mode: " + s + " (expected sss or sss+dmrs)");
}

namespace detail {

inline double sss_power_lin(const SsbGrid& grid) {
    double p = 0.0;
    for (int i = 0; i < ssb::sync_sc_len; ++i)
        p += std::norm(grid.at(ssb::sync_sc_begin + i, ssb::sss_symbol));
    return p / ssb::sync_sc_len;
}

struct DmrsHypothesis {
    int i_ssb_bar = -1;
    double ratio = 0.0;
    bool confirmed = false;
};

// Correlate the 144 DMRS REs against the 8 i_ssb_bar scrambling hypotheses.
// Confirmation requires the (chosen or hinted) hypothesis to beat the median
// of the other seven by the given ratio.
inline DmrsHypothesis dmrs_hypothesis(const SsbGrid& grid, const CellIdentity& id,
                                      int hint, double min_ratio) {
    const auto pos = ssb::dmrs_positions(id.pci());
    std::array<double, 8> corr{};
    for (int h = 0; h < 8; ++h) {
        const cvec r = gen_pbch_dmrs(id.pci(), h);
        cpx acc = 0.0;
        for (size_t m = 0; m < pos.size(); ++m)
            acc += grid.at(pos[m].second, pos[m].first) * std::conj(r[m]);
        corr[static_cast<size_t>(h)] = std::abs(acc);
    }
    DmrsHypothesis out;
    if (hint >= 0) {
        if (hint > 7)
            throw input_error("i_ssb_bar out of range 0..7");
        out.i_ssb_bar = hint;
    } else {
        out.i_ssb_bar = static_cast<int>(std::max_element(corr.begin(), corr.end()) - corr.begin());
    }
    std::vector<double> others;
    others.reserve(7);
    for (int h = 0; h < 8; ++h)
        if (h != out.i_ssb_bar)
            others.push_back(corr[static_cast<size_t>(h)]);
    const double med = median_of(std::move(others));
    out.ratio = corr[static_cast<size_t>(out.i_ssb_bar)] / std::max(med, 1e-30);
    out.confirmed = out.ratio >= min_ratio;
    return out;
}

}  // namespace detail

struct RsrpResult {
    double rsrp_db = db_floor;
    double rsrp_lin = 0.0;
    int i_ssb_bar = -1;    // -1: undetected / not evaluated
    bool dmrs_used = false;
    double dmrs_ratio = 0.0;
};

inline constexpr double dmrs_confirm_ratio = 4.0;

// SS-RSRP: mean power of the 127 SSS REs; in sss+dmrs mode the 144 PBCH-DMRS
// RE powers join the average once the scrambling hypothesis is confirmed
// (auto picks the best of the 8 hypotheses; a hint pins it).
inline RsrpResult ss_rsrp(const SsbGrid& grid, const CellIdentity& id,
                          RsrpMode mode = RsrpMode::sss_only, int i_ssb_bar = -1) {
    RsrpResult out;
    double sum = detail::sss_power_lin(grid) * ssb::sync_sc_len;
    int count = ssb::sync_sc_len;
    const detail::DmrsHypothesis hyp =
        detail::dmrs_hypothesis(grid, id, i_ssb_bar, dmrs_confirm_ratio);
    out.dmrs_ratio = hyp.ratio;
    if (hyp.confirmed)
        out.i_ssb_bar = hyp.i_ssb_bar;
    if (mode == RsrpMode::sss_dmrs && hyp.confirmed) {
        const auto pos = ssb::dmrs_positions(id.pci());
        for (const auto& [symbol, sc] : pos)
            sum += std::norm(grid.at(sc, symbol));
        count += static_cast<int>(pos.size());
        out.dmrs_used = true;
    }
    out.rsrp_lin = sum / count;
    out.rsrp_db = pow_to_db(out.rsrp_lin);
    return out;
}

// RSSI over the SSS-bearing symbol: total power across all 240 subcarriers
// (the 20-RB SSB measurement bandwidth).
inline double ssb_rssi_lin(const SsbGrid& grid) {
    double p = 0.0;
    for (int sc = 0; sc < SsbNumerology::sc_per_ssb; ++sc)
        p += std::norm(grid.at(sc, ssb::sss_symbol));
    return p;
}

inline double ssb_rssi(const SsbGrid& grid) { return pow_to_db(ssb_rssi_lin(grid)); }

inline double ss_rsrq(double rsrp_lin, double rssi_lin) {
    if (!(rssi_lin > 0.0))
        throw input_error("rssi must be positive");
    return 10.0 * std::log10(20.0 * rsrp_lin / rssi_lin);
}

struct CellMeasurement {
    int pci = 0;
    double timestamp_utc = 0.0;
    double ss_rsrp_db = db_floor;
    double ss_rsrq_db = db_floor;
    double rssi_db = db_floor;
    double cfo_hz = 0.0;
    long timing = 0;
    double pss_peak = 0.0;
    double pss_ratio = 0.0;
    double sss_metric = 0.0;
    int i_ssb_bar = -1;  // -1: undetected
};

struct MeasureConfig {
    SearchConfig search{};
    RsrpMode rsrp_mode = RsrpMode::sss_only;
    std::vector<int> target_pcis;  // empty: report every detection
    double offset_db = 0.0;        // external calibration shift for RSRP/RSSI
};

struct MeasureReport {
    std::vector<CellMeasurement> measurements;
    std::vector<int> undetected_pcis;  // requested targets that never appeared
    std::vector<CellDetection> detections;  // raw search output, unfiltered
};

// One capture -> per-cell measurements. Targeted mode runs the identical
// search and then filters, so a targeted measurement always equals the auto
// one; targets whose PCI never shows up are reported as undetected.
inline MeasureReport measure_capture(const IqCapture& iq, const MeasureConfig& cfg) {
    for (int pci : cfg.target_pcis)
        CellIdentity::from_pci(pci);
    MeasureReport report;
    report.detections = search_all_cells(iq, cfg.search);
    for (const CellDetection& det : report.detections) {
        const int pci = det.identity.pci();
        if (!cfg.target_pcis.empty() &&
            std::find(cfg.target_pcis.begin(), cfg.target_pcis.end(), pci) ==
                cfg.target_pcis.end())
            continue;
        const RsrpResult rsrp = ss_rsrp(det.ssb_grid, det.identity, cfg.rsrp_mode);
        const double rssi_lin = ssb_rssi_lin(det.ssb_grid);
        CellMeasurement m;
        m.pci = pci;
        m.timestamp_utc = iq.start_time_utc;
        m.ss_rsrp_db = rsrp.rsrp_db + cfg.offset_db;
        m.ss_rsrq_db = ss_rsrq(rsrp.rsrp_lin, rssi_lin);
        m.rssi_db = pow_to_db(rssi_lin) + cfg.offset_db;
        m.cfo_hz = det.cfo_hz_total;
        m.timing = det.timing_offset_samples;
        m.pss_peak = det.pss.peak_metric;
        m.pss_ratio = det.pss.peak_to_median_ratio;
        m.sss_metric = det.sss_metric;
        m.i_ssb_bar = rsrp.i_ssb_bar;
        report.measurements.push_back(m);
    }
    std::sort(report.measurements.begin(), report.measurements.end(),
              [](const CellMeasurement& a, const CellMeasurement& b) {
                  if (a.timestamp_utc != b.timestamp_utc)
                      return a.timestamp_utc < b.timestamp_utc;
                  if (a.pci != b.pci)
                      return a.pci < b.pci;
                  return a.timing < b.timing;
              });
    for (int pci : cfg.target_pcis) {
        const bool found = std::any_of(report.measurements.begin(), report.measurements.end(),
                                       [pci](const CellMeasurement& m) { return m.pci == pci; });
        if (!found && std::find(report.undetected_pcis.begin(), report.undetected_pcis.end(),
                                pci) == report.undetected_pcis.end())
            report.undetected_pcis.push_back(pci);
    }
    std::sort(report.undetected_pcis.begin(), report.undetected_pcis.end());
    return report;
}

inline Annotated<CellMeasurement> annotate_measurements(
    const std::vector<CellMeasurement>& measurements, const GpsTrack& track,
    double max_skew_s) {
    return annotate_with_track(measurements, track, max_skew_s,
                               [](const CellMeasurement& m) { return m.timestamp_utc; });
}

inline nlohmann::json measurement_to_json(const CellMeasurement& m) {
    nlohmann::json j{{"timestamp_utc", m.timestamp_utc},
                     {"pci", m.pci},
                     {"rsrp_db", m.ss_rsrp_db},
                     {"rsrq_db", m.ss_rsrq_db},
                     {"rssi_db", m.rssi_db},
                     {"cfo_hz", m.cfo_hz},
                     {"timing", m.timing},
                     {"pss_peak", m.pss_peak},
                     {"pss_ratio", m.pss_ratio},
                     {"sss_metric", m.sss_metric}};
    if (m.i_ssb_bar >= 0)
        j["i_ssb_bar"] = m.i_ssb_bar;
    return j;
}

inline constexpr const char* measurement_csv_header =
    "timestamp_utc,pci,rsrp_db,rsrq_db,rssi_db,cfo_hz,timing,altitude_m";

// altitude_m: pass nullptr for "no fix" (empty field)
inline void write_measurement_csv_row(std::ostream& os, const CellMeasurement& m,
                                      const double* altitude_m) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.3f,%d,%.3f,%.3f,%.3f,%.1f,%ld,",
                  m.timestamp_utc, m.pci, m.ss_rsrp_db, m.ss_rsrq_db, m.rssi_db,
                  m.cfo_hz, m.timing);
    os << buf;
    if (altitude_m) {
        std::snprintf(buf, sizeof buf, "%.1f", *altitude_m);
        os << buf;
    }
    os << "\n";
}

}  // namespace nrssb
