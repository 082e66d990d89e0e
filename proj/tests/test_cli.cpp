// End-to-end checks of the nrscan binary (path injected via NRSCAN_BIN).
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "golden/golden_vectors.hpp"
#include "nrssb/dsp.hpp"
#include "nrssb/iqio.hpp"
#include "nrssb/measure.hpp"
#include "nrssb/synth.hpp"

using nlohmann::json;
using namespace nrssb;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

#define CHECK(cond)                                                                    \
    do {                                                                               \
        if (!(cond)) {                                                                 \
            ++g_failures;                                                              \
            std::cerr << "CHECK failed at " << __FILE__ << ":" << __LINE__ << ": "     \
                      << #cond << "\n";                                                \
        }                                                                              \
    } while (0)

#define CHECK_MSG(cond, msg)                                                           \
    do {                                                                               \
        if (!(cond)) {                                                                 \
            ++g_failures;                                                              \
            std::cerr << "CHECK failed at " << __FILE__ << ":" << __LINE__ << ": "     \
                      << #cond << " -- " << msg << "\n";                               \
        }                                                                              \
    } while (0)

fs::path g_dir;

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& body) {
    std::ofstream f(p, std::ios::binary);
    f << body;
}

struct RunResult {
    int exit_code = -1;
    std::string out, err;
};

RunResult run(const std::string& args) {
    static int counter = 0;
    const fs::path out = g_dir / ("stdout." + std::to_string(counter));
    const fs::path err = g_dir / ("stderr." + std::to_string(counter));
    ++counter;
    const std::string cmd = std::string("\"") + NRSCAN_BIN + "\" " + args + " > \"" +
                            out.string() + "\" 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

// per-resource-element SNR -> sample noise level (256-bin analysis FFT)
double noise_db_for(double amp, double snr_db) {
    return 20.0 * std::log10(amp) - 10.0 * std::log10(256.0) - snr_db;
}

void test_synth_scan_roundtrip() {
    const fs::path scen = g_dir / "single.json";
    spit(scen, R"({
        "seed": 7, "capture_len": 30000, "noise_power_db": )" +
                  std::to_string(noise_db_for(0.1, 10.0)) + R"(,
        "start_time_utc": 100.0,
        "cells": [{"pci": 421, "amplitude": 0.1, "cfo_hz": 86250.0, "delay_samples": 5000}]
    })");
    const fs::path cap = g_dir / "single.iq";
    RunResult r = run("synth \"" + scen.string() + "\" --out \"" + cap.string() + "\"");
    CHECK_MSG(r.exit_code == 0, r.err);
    CHECK(fs::exists(cap));
    CHECK(fs::exists(cap.string() + ".json"));

    // same scenario, same seed: byte-identical capture
    const fs::path cap2 = g_dir / "single2.iq";
    r = run("synth \"" + scen.string() + "\" --out \"" + cap2.string() + "\"");
    CHECK_MSG(r.exit_code == 0, r.err);
    CHECK(slurp(cap) == slurp(cap2));

    // a different --seed changes the bytes
    const fs::path cap3 = g_dir / "single3.iq";
    r = run("synth \"" + scen.string() + "\" --out \"" + cap3.string() + "\" --seed 8");
    CHECK_MSG(r.exit_code == 0, r.err);
    CHECK(slurp(cap) != slurp(cap3));

    // scan recovers the injected cell
    r = run("scan \"" + cap.string() + "\"");
    CHECK_MSG(r.exit_code == 0, r.err);
    const json rep = json::parse(r.out);
    CHECK(rep["detections"].size() == 1);
    CHECK(rep["detections"][0]["pci"] == 421);
    CHECK(rep["detections"][0]["timing"] == 5000);
    CHECK(std::abs(rep["detections"][0]["cfo_hz"].get<double>() - 86250.0) < 1000.0);
    CHECK(std::abs(rep["detections"][0]["rsrp_db"].get<double>() + 20.0) < 1.0);
    CHECK(rep["detections"][0]["timestamp_utc"] == 100.0);

    // targeted scan: detected + not detected entries
    r = run("scan \"" + cap.string() + "\" --target-pci 421 --target-pci 999");
    CHECK_MSG(r.exit_code == 0, r.err);
    const json rep2 = json::parse(r.out);
    CHECK(rep2["detections"].size() == 1);
    bool saw_detected = false, saw_missing = false;
    for (const auto& t : rep2["targets"]) {
        if (t["pci"] == 421 && t["status"] == "detected")
            saw_detected = true;
        if (t["pci"] == 999 && t["status"] == "not detected")
            saw_missing = true;
    }
    CHECK(saw_detected);
    CHECK(saw_missing);

    // --dump-sss-metrics attaches the 336-point vector
    r = run("scan \"" + cap.string() + "\" --dump-sss-metrics");
    CHECK_MSG(r.exit_code == 0, r.err);
    const json rep3 = json::parse(r.out);
    CHECK(rep3["detections"][0]["sss_metrics"].size() == 336);

    // csv output: header + one row
    r = run("scan \"" + cap.string() + "\" --format csv");
    CHECK_MSG(r.exit_code == 0, r.err);
    CHECK(contains(r.out, "timestamp_utc,pci,rsrp_db"));
    CHECK(contains(r.out, ",421,"));
}

void test_scan_high_rate_offset() {
    // synthesize at 30.72 MHz, shift the SSB 1 MHz off center, then let the
    // CLI mix it back and resample 4:1 before searching
    CellSpec c;
    c.pci = 300;
    c.amplitude = 0.1;
    c.delay_samples = 20000;
    SsbNumerology num;
    num.fft_size = 1024;  // 30.72 MHz
    IqCapture cap = synth_multi_cell({c}, num, 120000, -300.0, 5);
    cap = mix(cap, -1.0e6);  // content moves up to +1 MHz
    const fs::path path = g_dir / "offset.iq";
    write_capture(cap, path.string(), SampleFormat::float32);

    RunResult r = run("scan \"" + path.string() + "\" --ssb-offset-hz 1e6 --cfo-span-hz 7500");
    CHECK_MSG(r.exit_code == 0, r.err);
    const json rep = json::parse(r.out);
    CHECK_MSG(rep["detections"].size() == 1, r.out);
    if (!rep["detections"].empty()) {
        CHECK(rep["detections"][0]["pci"] == 300);
        CHECK(rep["detections"][0]["timing"] == 5000);  // 20000 / 4
        CHECK(std::abs(rep["detections"][0]["rsrp_db"].get<double>() + 20.0) < 0.5);
    }
    CHECK(rep["sample_rate_hz"].get<double>() == 7.68e6);
}

void test_scan_noise_only() {
    IqCapture cap;
    cap.sample_rate_hz = 7.68e6;
    cap.center_freq_hz = 3.73e9;
    std::mt19937_64 rng(3);
    cap.samples.resize(20000);
    for (cpx& s : cap.samples) {
        const auto g = nrssb::detail::complex_gauss(rng);
        s = 0.01 * g;
    }
    const fs::path path = g_dir / "noise.iq";
    write_capture(cap, path.string(), SampleFormat::float32);
    const RunResult r = run("scan \"" + path.string() + "\" --cfo-span-hz 7500");
    CHECK_MSG(r.exit_code == 0, r.err);  // zero detections is still success
    const json rep = json::parse(r.out);
    CHECK(rep["detections"].empty());
}

void test_spectrogram() {
    IqCapture tone;
    tone.sample_rate_hz = 7.68e6;
    tone.center_freq_hz = 3.73e9;
    tone.samples.resize(4096);
    for (size_t i = 0; i < tone.samples.size(); ++i)
        tone.samples[i] = std::polar(0.5, 2.0 * std::numbers::pi * (7.68e6 / 4.0) *
                                              static_cast<double>(i) / 7.68e6);
    const fs::path path = g_dir / "tone.iq";
    write_capture(tone, path.string(), SampleFormat::float32);

    const fs::path csv_path = g_dir / "tone.csv";
    RunResult r = run("spectrogram \"" + path.string() + "\" --nfft 256 --overlap 0 " +
                      "--window rect --out \"" + csv_path.string() + "\"");
    CHECK_MSG(r.exit_code == 0, r.err);
    // axes JSON lands on stdout when the CSV goes to a file
    const json axes = json::parse(r.out);
    CHECK(axes["nfft"] == 256);
    CHECK(axes["num_frames"] == 16);
    CHECK(axes["bin_spacing_hz"].get<double>() == 30000.0);

    std::ifstream csv(csv_path);
    std::string line;
    int frames = 0;
    while (std::getline(csv, line)) {
        std::stringstream ss(line);
        std::string field;
        std::vector<double> row;
        while (std::getline(ss, field, ','))
            row.push_back(std::stod(field));
        CHECK(row.size() == 256);
        const auto it = std::max_element(row.begin(), row.end());
        CHECK(it - row.begin() == 192);  // +rate/4 bin on the DC-centered axis
        ++frames;
    }
    CHECK(frames == 16);

    // json single-document output
    r = run("spectrogram \"" + path.string() + "\" --nfft 256 --overlap 0 --format json");
    CHECK_MSG(r.exit_code == 0, r.err);
    const json doc = json::parse(r.out);
    CHECK(doc["power_db"].size() == 16);

    // missing sidecar: exit 2 and a diagnostic naming the sidecar
    const fs::path bare = g_dir / "bare.iq";
    spit(bare, std::string(800, '\0'));
    r = run("spectrogram \"" + bare.string() + "\"");
    CHECK(r.exit_code == 2);
    CHECK_MSG(contains(r.err, "sidecar"), r.err);
}

void test_survey() {
    const fs::path dir = g_dir / "flight";
    fs::create_directories(dir);
    // amplitude (hence RSRP) ramps with time; altitude ramps with time too
    const double amps[3] = {0.02, 0.05, 0.1};
    for (int i = 0; i < 3; ++i) {
        CellSpec c;
        c.pci = 421;
        c.amplitude = amps[i];
        c.delay_samples = 500;
        IqCapture cap = synth_multi_cell({c}, {}, 5000, -300.0, 11);
        cap.start_time_utc = 100.0 + 10.0 * i;
        write_capture(cap, (dir / ("cap" + std::to_string(i) + ".iq")).string(),
                      SampleFormat::float32);
    }
    // one unreadable capture: valid sidecar, truncated payload -> skipped
    spit(dir / "broken.iq", "abc");
    spit(dir / "broken.iq.json",
         R"({"sample_rate_hz": 7.68e6, "center_freq_hz": 3.73e9,
             "format": "float32", "start_time_utc": 0})");
    // a stray json without data is not a capture
    spit(dir / "stray.json", "{}");

    const fs::path gps = g_dir / "track.csv";
    spit(gps,
         "time_utc,lat_deg,lon_deg,alt_m\n"
         "100,37.0,127.0,50\n110,37.0,127.0,100\n120,37.0,127.0,150\n");

    const fs::path out_csv = g_dir / "survey.csv";
    RunResult r = run("survey \"" + dir.string() + "\" --gps \"" + gps.string() +
                      "\" --cfo-span-hz 7500 --jobs 3 --out \"" + out_csv.string() + "\"");
    CHECK_MSG(r.exit_code == 0, r.err);
    const json summary = json::parse(r.out);  // footer JSON on stdout
    CHECK_MSG(summary["captures"] == 4, summary.dump());
    CHECK_MSG(summary["captures_failed"] == 1, summary.dump());
    CHECK(summary["rows"] == 3);
    CHECK(summary["rows_without_fix"] == 0);

    std::ifstream csv(out_csv);
    std::string line;
    CHECK(std::getline(csv, line));
    CHECK(line == std::string(measurement_csv_header));
    std::vector<double> rsrp, alt;
    while (std::getline(csv, line)) {
        std::stringstream ss(line);
        std::string f;
        std::vector<std::string> fields;
        while (std::getline(ss, f, ','))
            fields.push_back(f);
        CHECK(fields.size() == 8);
        if (fields.size() == 8) {
            CHECK(fields[1] == "421");
            rsrp.push_back(std::stod(fields[2]));
            alt.push_back(std::stod(fields[7]));
        }
    }
    CHECK(rsrp.size() == 3);
    for (size_t i = 1; i < rsrp.size(); ++i) {
        CHECK(rsrp[i] > rsrp[i - 1]);  // amplitude ramp shows up in RSRP
        CHECK(alt[i] > alt[i - 1]);    // joined against the climbing track
    }

    // empty directory is an input error
    const fs::path empty = g_dir / "empty";
    fs::create_directories(empty);
    r = run("survey \"" + empty.string() + "\" --gps \"" + gps.string() + "\"");
    CHECK(r.exit_code == 2);
}

void test_synth_schema_errors() {
    const fs::path bad_pci = g_dir / "bad_pci.json";
    spit(bad_pci, R"({"capture_len": 3000, "noise_power_db": -40,
                      "cells": [{"pci": 0}, {"pci": 1008}]})");
    RunResult r = run("synth \"" + bad_pci.string() + "\" --out \"" +
                      (g_dir / "never.iq").string() + "\"");
    CHECK(r.exit_code == 2);
    CHECK_MSG(contains(r.err, "cells[1].pci"), r.err);

    const fs::path no_cells = g_dir / "no_cells.json";
    spit(no_cells, R"({"capture_len": 3000, "noise_power_db": -40})");
    r = run("synth \"" + no_cells.string() + "\" --out \"" + (g_dir / "never.iq").string() + "\"");
    CHECK(r.exit_code == 2);
    CHECK_MSG(contains(r.err, "cells"), r.err);

    const fs::path no_len = g_dir / "no_len.json";
    spit(no_len, R"({"noise_power_db": -40, "cells": [{"pci": 1}]})");
    r = run("synth \"" + no_len.string() + "\" --out \"" + (g_dir / "never.iq").string() + "\"");
    CHECK(r.exit_code == 2);
    CHECK_MSG(contains(r.err, "capture_len"), r.err);

    const fs::path bad_rate = g_dir / "bad_rate.json";
    spit(bad_rate, R"({"capture_len": 3000, "noise_power_db": -40,
                       "sample_rate_hz": 5.0e6, "cells": [{"pci": 1}]})");
    r = run("synth \"" + bad_rate.string() + "\" --out \"" + (g_dir / "never.iq").string() + "\"");
    CHECK(r.exit_code == 2);
    CHECK_MSG(contains(r.err, "sample_rate_hz"), r.err);
}

void test_dump_seq() {
    RunResult r = run("dump-seq --type pss --n-id-2 0");
    CHECK_MSG(r.exit_code == 0, r.err);
    std::stringstream ss(r.out);
    std::string line;
    CHECK(std::getline(ss, line));
    CHECK(line == "index,value");
    int i = 0;
    while (std::getline(ss, line)) {
        const size_t comma = line.find(',');
        CHECK(comma != std::string::npos);
        CHECK(std::stoi(line.substr(0, comma)) == i);
        CHECK(std::stoi(line.substr(comma + 1)) == golden::pss_0[i]);
        ++i;
    }
    CHECK(i == 127);

    r = run("dump-seq --type sss --n-id-1 140 --n-id-2 1");
    CHECK_MSG(r.exit_code == 0, r.err);
    CHECK(contains(r.out, "index,value"));

    r = run("dump-seq --type dmrs --pci 421 --i-ssb-bar 0");
    CHECK_MSG(r.exit_code == 0, r.err);
    CHECK(contains(r.out, "index,re,im"));

    r = run("dump-seq --type pss --n-id-2 5");
    CHECK(r.exit_code == 2);  // range error from the generator
}

void test_cli_surface() {
    CHECK(run("--help").exit_code == 0);
    CHECK(run("scan --help").exit_code == 0);
    CHECK(run("--version").exit_code == 0);
    CHECK(run("scan").exit_code == 2);                    // missing capture arg
    CHECK(run("scan x.iq --no-such-flag").exit_code == 2);
    CHECK(run("frobnicate").exit_code == 2);              // unknown subcommand
    CHECK(run("").exit_code == 2);                        // subcommand required
    CHECK(run("scan \"" + (g_dir / "absent.iq").string() + "\"").exit_code == 2);
}

}  // namespace

int main() {
    g_dir = fs::temp_directory_path() / ("nrssb_cli_" + std::to_string(::getpid()));
    fs::create_directories(g_dir);

    test_synth_scan_roundtrip();
    test_scan_high_rate_offset();
    test_scan_noise_only();
    test_spectrogram();
    test_survey();
    test_synth_schema_errors();
    test_dump_seq();
    test_cli_surface();

    fs::remove_all(g_dir);
    if (g_failures) {
        std::cerr << g_failures << " CLI check(s) failed\n";
        return 1;
    }
    std::cout << "all CLI checks passed\n";
    return 0;
}
