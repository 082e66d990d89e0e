#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "nrssb/cellsearch.hpp"
#include "nrssb/dsp.hpp"
#include "nrssb/iqio.hpp"
#include "nrssb/measure.hpp"
#include "nrssb/nrseq.hpp"
#include "nrssb/synth.hpp"
#include "nrssb/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nrssb;

namespace {

// ---------------------------------------------------------------- logging

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3 };

LogLevel log_threshold() {
    static const LogLevel level = [] {
        const char* env = std::getenv("NRSCAN_LOG");
        const std::string s = env ? env : "warn";
        if (s == "debug")
            return LogLevel::debug;
        if (s == "info")
            return LogLevel::info;
        if (s == "error")
            return LogLevel::error;
        return LogLevel::warn;
    }();
    return level;
}

void logmsg(LogLevel level, const std::string& msg) {
    if (level < log_threshold())
        return;
    static std::mutex mu;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::lock_guard<std::mutex> lock(mu);
    std::cerr << "nrscan " << names[static_cast<int>(level)] << ": " << msg << "\n";
}

// ---------------------------------------------------------------- shared

// Bring the SSB to baseband and the rate to the analysis rate (7.68 MHz).
IqCapture condition_for_search(IqCapture iq, double ssb_offset_hz) {
    if (ssb_offset_hz != 0.0) {
        logmsg(LogLevel::info, "mixing SSB offset of " + std::to_string(ssb_offset_hz) + " Hz to baseband");
        iq = mix(iq, ssb_offset_hz);
    }
    const double target = SsbNumerology{}.sample_rate_hz();
    if (std::abs(iq.sample_rate_hz - target) > 1e-6 * target) {
        logmsg(LogLevel::info, "resampling " + std::to_string(iq.sample_rate_hz) + " Hz to " +
                                   std::to_string(target) + " Hz");
        iq = resample(iq, target);
    }
    return iq;
}

struct SearchFlags {
    double cfo_step_hz = SearchConfig{}.cfo_grid_step_hz;
    double cfo_span_hz = SearchConfig{}.cfo_grid_span_hz;
    double threshold = SearchConfig{}.detection_threshold;
    double sss_min_metric = SearchConfig{}.sss_min_metric;
    int max_cells = SearchConfig{}.max_cells;
    std::string rsrp_mode = "sss";
    std::vector<int> target_pcis;
    double ssb_offset_hz = 0.0;

    void add_to(CLI::App* sub) {
        sub->add_option("--cfo-step-hz", cfo_step_hz, "coarse CFO grid step [Hz]")
            ->capture_default_str();
        sub->add_option("--cfo-span-hz", cfo_span_hz, "coarse CFO grid half-span [Hz]")
            ->capture_default_str();
        sub->add_option("--threshold", threshold, "PSS peak-to-median detection threshold")
            ->capture_default_str();
        sub->add_option("--sss-min-metric", sss_min_metric,
                        "minimum SSS correlation metric to confirm a cell")
            ->capture_default_str();
        sub->add_option("--max-cells", max_cells, "report at most this many cells")
            ->capture_default_str();
        sub->add_option("--rsrp-mode", rsrp_mode, "RSRP averaging set")
            ->check(CLI::IsMember({"sss", "sss+dmrs"}))
            ->capture_default_str();
        sub->add_option("--target-pci", target_pcis,
                        "only report these PCIs; repeatable, absent ones are flagged");
        sub->add_option("--ssb-offset-hz", ssb_offset_hz,
                        "SSB center offset from the capture center [Hz]")
            ->capture_default_str();
    }

    MeasureConfig measure_config() const {
        MeasureConfig cfg;
        cfg.search.cfo_grid_step_hz = cfo_step_hz;
        cfg.search.cfo_grid_span_hz = cfo_span_hz;
        cfg.search.detection_threshold = threshold;
        cfg.search.sss_min_metric = sss_min_metric;
        cfg.search.max_cells = max_cells;
        cfg.rsrp_mode = parse_rsrp_mode(rsrp_mode);
        cfg.target_pcis = target_pcis;
        return cfg;
    }

    json to_json() const {
        return {{"cfo_step_hz", cfo_step_hz},     {"cfo_span_hz", cfo_span_hz},
                {"threshold", threshold},         {"sss_min_metric", sss_min_metric},
                {"max_cells", max_cells},         {"rsrp_mode", rsrp_mode},
                {"ssb_offset_hz", ssb_offset_hz}};
    }
};

void write_text_output(const std::string& out_path, const std::string& body) {
    if (out_path.empty()) {
        std::cout << body;
        return;
    }
    std::ofstream f(out_path);
    if (!f)
        throw input_error("cannot write output file: " + out_path);
    f << body;
    if (!f)
        throw input_error("write failed: " + out_path);
    logmsg(LogLevel::info, "wrote " + out_path);
}

// Nearest GPS fix within the skew bound; ties resolve to the earlier fix.
const GpsFix* nearest_fix(const GpsTrack& track, double t, double max_skew_s) {
    auto next = std::lower_bound(track.fixes.begin(), track.fixes.end(), t,
                                 [](const GpsFix& f, double v) { return f.time_utc < v; });
    const GpsFix* best = nullptr;
    if (next != track.fixes.begin())
        best = &*std::prev(next);
    if (next != track.fixes.end() && (!best || (next->time_utc - t) < (t - best->time_utc)))
        best = &*next;
    if (best && std::abs(best->time_utc - t) <= max_skew_s)
        return best;
    return nullptr;
}

// ---------------------------------------------------------------- spectrogram

struct SpectrogramArgs {
    std::string capture, meta, out;
    std::string window = "hann";
    std::string format = "csv";
    int nfft = 1024;
    double overlap = 0.5;
};

void cmd_spectrogram(const SpectrogramArgs& a) {
    const IqCapture iq = load_capture(a.capture, a.meta);
    logmsg(LogLevel::info, "loaded " + std::to_string(iq.samples.size()) + " samples at " +
                               std::to_string(iq.sample_rate_hz) + " Hz");
    const Spectrogram sg = stft_spectrogram(iq, a.nfft, a.overlap, parse_window(a.window));
    const json axes = spectrogram_axes_json(sg);
    if (a.format == "json") {
        json doc = axes;
        doc["power_db"] = sg.power_db;
        write_text_output(a.out, doc.dump(2) + "\n");
        return;
    }
    std::ostringstream csv;
    write_spectrogram_csv(sg, csv);
    write_text_output(a.out, csv.str());
    // axes ride along on the stream not holding the CSV
    (a.out.empty() ? std::cerr : std::cout) << axes.dump() << "\n";
}

// ---------------------------------------------------------------- scan

struct ScanArgs {
    std::string capture, meta, out;
    std::string format = "json";
    SearchFlags search;
    bool dump_sss_metrics = false;
};

json scan_report(const IqCapture& conditioned, const ScanArgs& a, const MeasureReport& report) {
    json detections = json::array();
    for (const CellMeasurement& m : report.measurements) {
        json row = measurement_to_json(m);
        if (a.dump_sss_metrics) {
            for (const CellDetection& det : report.detections)
                if (det.identity.pci() == m.pci && det.timing_offset_samples == m.timing) {
                    row["sss_metrics"] = det.sss_metrics;
                    break;
                }
        }
        detections.push_back(std::move(row));
    }
    json targets = json::array();
    std::vector<int> seen;
    for (int pci : a.search.target_pcis) {
        if (std::find(seen.begin(), seen.end(), pci) != seen.end())
            continue;
        seen.push_back(pci);
        const bool missing =
            std::find(report.undetected_pcis.begin(), report.undetected_pcis.end(), pci) !=
            report.undetected_pcis.end();
        targets.push_back({{"pci", pci}, {"status", missing ? "not detected" : "detected"}});
    }
    return {{"capture", a.capture},
            {"sample_rate_hz", conditioned.sample_rate_hz},
            {"center_freq_hz", conditioned.center_freq_hz},
            {"start_time_utc", conditioned.start_time_utc},
            {"config", a.search.to_json()},
            {"detections", std::move(detections)},
            {"targets", std::move(targets)}};
}

void cmd_scan(const ScanArgs& a) {
    const IqCapture iq = load_capture(a.capture, a.meta);
    logmsg(LogLevel::info, "loaded " + std::to_string(iq.samples.size()) + " samples at " +
                               std::to_string(iq.sample_rate_hz) + " Hz");
    const IqCapture conditioned = condition_for_search(iq, a.search.ssb_offset_hz);
    const MeasureReport report = measure_capture(conditioned, a.search.measure_config());
    logmsg(LogLevel::info, std::to_string(report.measurements.size()) + " cell(s) reported");
    if (a.format == "csv") {
        std::ostringstream csv;
        csv << measurement_csv_header << "\n";
        for (const CellMeasurement& m : report.measurements)
            write_measurement_csv_row(csv, m, nullptr);
        write_text_output(a.out, csv.str());
        return;
    }
    write_text_output(a.out, scan_report(conditioned, a, report).dump(2) + "\n");
}

// ---------------------------------------------------------------- survey

struct SurveyArgs {
    std::string dir, gps, out;
    std::string format = "csv";
    SearchFlags search;
    double max_skew_s = 10.0;
    int jobs = 1;
};

std::vector<std::string> find_captures(const std::string& dir) {
    if (!fs::is_directory(dir))
        throw input_error("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file())
            continue;
        const std::string p = entry.path().string();
        if (p.size() >= 5 && p.substr(p.size() - 5) == ".json")
            continue;
        if (fs::exists(p + ".json"))
            files.push_back(p);
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        throw input_error("no captures (data file + .json sidecar) found in " + dir);
    return files;
}

void cmd_survey(const SurveyArgs& a) {
    const GpsTrack track = load_gps_track(a.gps);
    const std::vector<std::string> files = find_captures(a.dir);
    logmsg(LogLevel::info, "surveying " + std::to_string(files.size()) + " capture(s) with " +
                               std::to_string(track.fixes.size()) + " GPS fix(es)");
    const MeasureConfig mcfg = a.search.measure_config();

    std::vector<CellMeasurement> rows;
    std::atomic<size_t> next{0};
    std::atomic<size_t> failed{0};
    std::mutex mu;
    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= files.size())
                return;
            try {
                const IqCapture iq = load_capture(files[i]);
                const IqCapture conditioned = condition_for_search(iq, a.search.ssb_offset_hz);
                MeasureReport rep = measure_capture(conditioned, mcfg);
                std::lock_guard<std::mutex> lock(mu);
                rows.insert(rows.end(), rep.measurements.begin(), rep.measurements.end());
            } catch (const std::exception& e) {
                failed.fetch_add(1);
                logmsg(LogLevel::warn, "skipping " + files[i] + ": " + e.what());
            }
        }
    };
    const int jobs = std::clamp(a.jobs, 1, 64);
    std::vector<std::thread> pool;
    for (int t = 1; t < jobs; ++t)
        pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool)
        t.join();

    std::sort(rows.begin(), rows.end(), [](const CellMeasurement& x, const CellMeasurement& y) {
        if (x.timestamp_utc != y.timestamp_utc)
            return x.timestamp_utc < y.timestamp_utc;
        if (x.pci != y.pci)
            return x.pci < y.pci;
        return x.timing < y.timing;
    });

    size_t without_fix = 0;
    std::vector<const GpsFix*> fixes(rows.size(), nullptr);
    for (size_t i = 0; i < rows.size(); ++i) {
        fixes[i] = nearest_fix(track, rows[i].timestamp_utc, a.max_skew_s);
        if (!fixes[i])
            ++without_fix;
    }
    const json summary{{"captures", files.size()},
                       {"captures_failed", failed.load()},
                       {"rows", rows.size()},
                       {"rows_without_fix", without_fix}};

    if (a.format == "json") {
        json jrows = json::array();
        for (size_t i = 0; i < rows.size(); ++i) {
            json row = measurement_to_json(rows[i]);
            if (fixes[i]) {
                row["altitude_m"] = fixes[i]->alt_m;
                row["lat_deg"] = fixes[i]->lat_deg;
                row["lon_deg"] = fixes[i]->lon_deg;
            }
            jrows.push_back(std::move(row));
        }
        write_text_output(a.out, json{{"rows", std::move(jrows)}, {"summary", summary}}.dump(2) + "\n");
        return;
    }
    std::ostringstream csv;
    csv << measurement_csv_header << "\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        double alt = 0.0;
        const double* alt_ptr = nullptr;
        if (fixes[i]) {
            alt = fixes[i]->alt_m;
            alt_ptr = &alt;
        }
        write_measurement_csv_row(csv, rows[i], alt_ptr);
    }
    write_text_output(a.out, csv.str());
    // summary rides along on the stream not holding the CSV
    (a.out.empty() ? std::cerr : std::cout) << summary.dump() << "\n";
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::string scenario, out;
    uint64_t seed = 0;
    bool seed_given = false;
};

const json& require_field(const json& j, const std::string& path, const char* key) {
    if (!j.contains(key))
        throw input_error("scenario: missing required field " + path + key);
    return j.at(key);
}

double field_num(const json& j, const std::string& path, const char* key, double fallback,
                 bool required = false) {
    if (!j.contains(key)) {
        if (required)
            throw input_error("scenario: missing required field " + path + key);
        return fallback;
    }
    if (!j.at(key).is_number())
        throw input_error("scenario: " + path + key + " must be a number");
    return j.at(key).get<double>();
}

long field_int(const json& j, const std::string& path, const char* key, long fallback,
               bool required = false) {
    if (!j.contains(key)) {
        if (required)
            throw input_error("scenario: missing required field " + path + key);
        return fallback;
    }
    if (!j.at(key).is_number_integer())
        throw input_error("scenario: " + path + key + " must be an integer");
    return j.at(key).get<long>();
}

std::string field_str(const json& j, const std::string& path, const char* key,
                      const std::string& fallback) {
    if (!j.contains(key))
        return fallback;
    if (!j.at(key).is_string())
        throw input_error("scenario: " + path + key + " must be a string");
    return j.at(key).get<std::string>();
}

CellSpec parse_cell(const json& j, const std::string& path) {
    if (!j.is_object())
        throw input_error("scenario: " + path + " must be an object");
    CellSpec c;
    c.pci = static_cast<int>(field_int(j, path + ".", "pci", 0, true));
    if (c.pci < 0 || c.pci >= num_pci)
        throw input_error("scenario: " + path + ".pci out of range 0..1007");
    c.i_ssb_bar = static_cast<int>(field_int(j, path + ".", "i_ssb_bar", 0));
    if (c.i_ssb_bar < 0 || c.i_ssb_bar > 7)
        throw input_error("scenario: " + path + ".i_ssb_bar out of range 0..7");
    c.amplitude = field_num(j, path + ".", "amplitude", 1.0);
    if (!(c.amplitude > 0.0))
        throw input_error("scenario: " + path + ".amplitude must be positive");
    c.cfo_hz = field_num(j, path + ".", "cfo_hz", 0.0);
    c.delay_samples = field_int(j, path + ".", "delay_samples", 0);
    if (c.delay_samples < 0)
        throw input_error("scenario: " + path + ".delay_samples must be >= 0");
    const std::string channel = field_str(j, path + ".", "channel", "awgn-only");
    try {
        c.channel = parse_channel_model(channel);
    } catch (const input_error&) {
        throw input_error("scenario: " + path + ".channel must be one of awgn-only, single-tap-phase, two-tap");
    }
    c.tap_phase_rad = field_num(j, path + ".", "tap_phase_rad", 0.0);
    c.tap2_delay_samples = field_int(j, path + ".", "tap2_delay_samples", 1);
    c.tap2_gain = cpx(field_num(j, path + ".", "tap2_gain_re", 0.0),
                      field_num(j, path + ".", "tap2_gain_im", 0.0));
    return c;
}

void cmd_synth(const SynthArgs& a) {
    std::ifstream f(a.scenario);
    if (!f)
        throw input_error("cannot open scenario: " + a.scenario);
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw input_error("scenario " + a.scenario + ": " + e.what());
    }
    if (!doc.is_object())
        throw input_error("scenario: top level must be an object");

    const double rate = field_num(doc, "", "sample_rate_hz", 7.68e6);
    const double fft_f = rate / 30000.0;
    SsbNumerology num;
    num.fft_size = static_cast<int>(std::lround(fft_f));
    if (!(rate > 0.0) || std::abs(fft_f - num.fft_size) > 1e-6)
        throw input_error("scenario: sample_rate_hz must be an integer multiple of 30 kHz");
    try {
        num.check();
    } catch (const input_error& e) {
        throw input_error(std::string("scenario: sample_rate_hz unsupported: ") + e.what());
    }

    const long capture_len = field_int(doc, "", "capture_len", 0, true);
    const double noise_db = field_num(doc, "", "noise_power_db", 0.0, true);
    uint64_t seed = static_cast<uint64_t>(field_int(doc, "", "seed", 1));
    if (a.seed_given)
        seed = a.seed;
    const double center = field_num(doc, "", "center_freq_hz", 3.73e9);
    double start_time = 0.0;
    if (doc.contains("start_time_utc"))
        start_time = detail::meta_time(doc.at("start_time_utc"));
    const std::string source = field_str(doc, "", "source_id", "synth");
    const SampleFormat fmt = parse_sample_format(
        field_str(doc, "", "format", "complex-float32-interleaved"));

    const json& jcells = require_field(doc, "", "cells");
    if (!jcells.is_array() || jcells.empty())
        throw input_error("scenario: cells must be a non-empty array");
    std::vector<CellSpec> cells;
    for (size_t i = 0; i < jcells.size(); ++i)
        cells.push_back(parse_cell(jcells[i], "cells[" + std::to_string(i) + "]"));

    const IqCapture cap =
        synth_multi_cell(cells, num, capture_len, noise_db, seed, center, start_time, source);
    write_capture(cap, a.out, fmt);
    logmsg(LogLevel::info, "wrote " + a.out + " (" + std::to_string(cap.samples.size()) +
                               " samples) and sidecar " + default_meta_path(a.out));
}

// ---------------------------------------------------------------- dump-seq

struct DumpArgs {
    std::string type, out;
    int n_id_1 = 0;
    int n_id_2 = 0;
    int pci = 0;
    int i_ssb_bar = 0;
};

void cmd_dump_seq(const DumpArgs& a) {
    std::ostringstream csv;
    if (a.type == "pss") {
        const auto seq = gen_pss(a.n_id_2);
        csv << "index,value\n";
        for (size_t i = 0; i < seq.size(); ++i)
            csv << i << "," << seq[i] << "\n";
    } else if (a.type == "sss") {
        const auto seq = gen_sss(a.n_id_1, a.n_id_2);
        csv << "index,value\n";
        for (size_t i = 0; i < seq.size(); ++i)
            csv << i << "," << seq[i] << "\n";
    } else {
        const cvec seq = gen_pbch_dmrs(a.pci, a.i_ssb_bar);
        csv << "index,re,im\n";
        csv.precision(17);
        for (size_t i = 0; i < seq.size(); ++i)
            csv << i << "," << seq[i].real() << "," << seq[i].imag() << "\n";
    }
    write_text_output(a.out, csv.str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"offline 5G NR SSB analysis: spectrograms, cell search, SSB measurements"};
    app.set_version_flag("--version", "nrscan 1.0.0");
    app.require_subcommand(1);

    SpectrogramArgs sg;
    CLI::App* sub_sg = app.add_subcommand("spectrogram", "STFT power spectrogram of a capture");
    sub_sg->add_option("capture", sg.capture, "I/Q capture file")->required();
    sub_sg->add_option("--meta", sg.meta, "sidecar path (default: <capture>.json)");
    sub_sg->add_option("--nfft", sg.nfft, "FFT size (power of two)")->capture_default_str();
    sub_sg->add_option("--overlap", sg.overlap, "frame overlap fraction in [0,1)")
        ->capture_default_str();
    sub_sg->add_option("--window", sg.window, "analysis window")
        ->check(CLI::IsMember({"hann", "rect"}))
        ->capture_default_str();
    sub_sg->add_option("--format", sg.format, "output format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
    sub_sg->add_option("--out", sg.out, "output path (default: stdout)");
    sub_sg->callback([&] { cmd_spectrogram(sg); });

    ScanArgs sc;
    CLI::App* sub_sc = app.add_subcommand("scan", "two-stage PSS/SSS cell search + measurements");
    sub_sc->add_option("capture", sc.capture, "I/Q capture file")->required();
    sub_sc->add_option("--meta", sc.meta, "sidecar path (default: <capture>.json)");
    sc.search.add_to(sub_sc);
    sub_sc->add_flag("--dump-sss-metrics", sc.dump_sss_metrics,
                     "include the full 336-point SSS metric vector per detection");
    sub_sc->add_option("--format", sc.format, "output format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
    sub_sc->add_option("--out", sc.out, "output path (default: stdout)");
    sub_sc->callback([&] { cmd_scan(sc); });

    SurveyArgs sv;
    CLI::App* sub_sv = app.add_subcommand("survey", "measure every capture in a directory and join GPS altitude");
    sub_sv->add_option("dir", sv.dir, "directory of captures + sidecars")->required();
    sub_sv->add_option("--gps", sv.gps, "GPS track CSV (time_utc,lat_deg,lon_deg,alt_m)")
        ->required();
    sv.search.add_to(sub_sv);
    sub_sv->add_option("--max-skew-s", sv.max_skew_s,
                       "max |capture time - fix time| for an altitude match [s]")
        ->capture_default_str();
    sub_sv->add_option("--jobs", sv.jobs, "parallel capture workers")->capture_default_str();
    sub_sv->add_option("--format", sv.format, "output format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
    sub_sv->add_option("--out", sv.out, "output path (default: stdout)");
    sub_sv->callback([&] { cmd_survey(sv); });

    SynthArgs sy;
    CLI::App* sub_sy = app.add_subcommand("synth", "generate a capture from a JSON scenario");
    sub_sy->add_option("scenario", sy.scenario, "scenario JSON file")->required();
    sub_sy->add_option("--out", sy.out, "output capture path")->required();
    CLI::Option* seed_opt = sub_sy->add_option("--seed", sy.seed, "override the scenario seed");
    sub_sy->callback([&] {
        sy.seed_given = seed_opt->count() > 0;
        cmd_synth(sy);
    });

    DumpArgs dp;
    CLI::App* sub_dp = app.add_subcommand("dump-seq", "dump reference sequences as CSV");
    sub_dp->add_option("--type", dp.type, "sequence family")
        ->check(CLI::IsMember({"pss", "sss", "dmrs"}))
        ->required();
    sub_dp->add_option("--n-id-1", dp.n_id_1, "SSS group id (0..335)");
    sub_dp->add_option("--n-id-2", dp.n_id_2, "PSS id (0..2)");
    sub_dp->add_option("--pci", dp.pci, "physical cell id (0..1007)");
    sub_dp->add_option("--i-ssb-bar", dp.i_ssb_bar, "SSB index LSBs (0..7)");
    sub_dp->add_option("--out", dp.out, "output path (default: stdout)");
    sub_dp->callback([&] { cmd_dump_seq(dp); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const input_error& e) {
        logmsg(LogLevel::error, e.what());
        return 2;
    } catch (const std::exception& e) {
        logmsg(LogLevel::error, std::string("internal error: ") + e.what());
        return 3;
    }
    return 0;
}
