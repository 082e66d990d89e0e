#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "nrssb/dsp.hpp"
#include "nrssb/fft.hpp"

using namespace nrssb;

namespace {

IqCapture make_tone(size_t n, double rate_hz, double freq_hz, double amp = 1.0) {
    IqCapture iq;
    iq.sample_rate_hz = rate_hz;
    iq.center_freq_hz = 3.73e9;
    iq.samples.resize(n);
    for (size_t i = 0; i < n; ++i)
        iq.samples[i] = std::polar(amp, 2.0 * std::numbers::pi * freq_hz *
                                            static_cast<double>(i) / rate_hz);
    return iq;
}

double rms(const cvec& v, size_t begin, size_t end) {
    double acc = 0.0;
    for (size_t i = begin; i < end; ++i)
        acc += std::norm(v[i]);
    return std::sqrt(acc / static_cast<double>(end - begin));
}

}  // namespace

TEST_CASE("mix derotates a tone to DC") {
    const IqCapture iq = make_tone(7680, 7.68e6, 1000.0);
    const IqCapture out = mix(iq, 1000.0);
    cpx mean = 0.0;
    for (const cpx& s : out.samples)
        mean += s;
    mean /= static_cast<double>(out.samples.size());
    REQUIRE(std::abs(mean) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("mix updates center frequency") {
    IqCapture iq = make_tone(64, 7.68e6, 0.0);
    iq.center_freq_hz = 3728.8e6;
    REQUIRE(mix(iq, 1.2e6).center_freq_hz == Catch::Approx(3730.0e6));
    REQUIRE(mix(iq, -1.2e6).center_freq_hz == Catch::Approx(3727.6e6));
}

TEST_CASE("mix preserves magnitudes and inverts exactly") {
    IqCapture iq = make_tone(4096, 7.68e6, 123456.7, 0.5);
    const IqCapture fwd = mix(iq, 98765.4);
    for (size_t i = 0; i < iq.samples.size(); ++i)
        REQUIRE(std::abs(fwd.samples[i]) == Catch::Approx(0.5).margin(1e-12));
    const IqCapture back = mix(fwd, -98765.4);
    double worst = 0.0;
    for (size_t i = 0; i < iq.samples.size(); ++i)
        worst = std::max(worst, std::abs(back.samples[i] - iq.samples[i]));
    REQUIRE(worst < 1e-12);
    REQUIRE(back.center_freq_hz == Catch::Approx(iq.center_freq_hz));
}

TEST_CASE("mix shift of zero is the identity") {
    const IqCapture iq = make_tone(256, 7.68e6, 31000.0, 0.3);
    const IqCapture out = mix(iq, 0.0);
    for (size_t i = 0; i < iq.samples.size(); ++i)
        REQUIRE(out.samples[i] == iq.samples[i]);
}

TEST_CASE("mix rejects shifts at or beyond Nyquist") {
    const IqCapture iq = make_tone(64, 1e6, 0.0);
    REQUIRE_THROWS_AS(mix(iq, 0.5e6), input_error);
    REQUIRE_THROWS_AS(mix(iq, -0.5e6), input_error);
    REQUIRE_NOTHROW(mix(iq, 0.4999e6));
}

TEST_CASE("resample_ratio reduces to lowest terms") {
    Rational r = resample_ratio(30.72e6, 7.68e6);
    REQUIRE(r.num == 1);
    REQUIRE(r.den == 4);
    r = resample_ratio(30.72e6, 15.36e6);
    REQUIRE(r.num == 1);
    REQUIRE(r.den == 2);
    r = resample_ratio(7.68e6, 30.72e6);
    REQUIRE(r.num == 4);
    REQUIRE(r.den == 1);
    r = resample_ratio(23.04e6, 7.68e6);
    REQUIRE(r.num == 1);
    REQUIRE(r.den == 3);
}

TEST_CASE("resample_ratio rejects inexpressible ratios") {
    REQUIRE_THROWS_AS(resample_ratio(30.72e6, 7.69e6), input_error);
    REQUIRE_THROWS_AS(resample_ratio(30.72e6, 30.72e6 * std::numbers::pi / 4.0), input_error);
    REQUIRE_THROWS_AS(resample_ratio(-1.0, 7.68e6), input_error);
}

TEST_CASE("resample at the same rate is an exact copy") {
    const IqCapture iq = make_tone(1000, 7.68e6, 1.1e6, 0.7);
    const IqCapture out = resample(iq, 7.68e6);
    REQUIRE(out.samples == iq.samples);
    REQUIRE(out.sample_rate_hz == iq.sample_rate_hz);
}

TEST_CASE("resample 30.72 MHz to 7.68 MHz length and metadata") {
    IqCapture iq = make_tone(614400, 30.72e6, 0.0, 0.01);
    iq.source_id = "rx0";
    iq.start_time_utc = 42.0;
    const IqCapture out = resample(iq, 7.68e6);
    REQUIRE(out.samples.size() == 153600);
    REQUIRE(out.sample_rate_hz == Catch::Approx(7.68e6));
    REQUIRE(out.center_freq_hz == iq.center_freq_hz);
    REQUIRE(out.start_time_utc == 42.0);
    REQUIRE(out.source_id == "rx0");
}

TEST_CASE("resample passband tone survives within 0.1 dB") {
    const double amp = 0.5;
    const IqCapture iq = make_tone(61440, 30.72e6, 1.0e6, amp);
    const IqCapture out = resample(iq, 7.68e6);
    REQUIRE(out.samples.size() == 15360);
    const size_t a = 200, b = out.samples.size() - 200;
    const double level_db = 20.0 * std::log10(rms(out.samples, a, b) / amp);
    REQUIRE(std::abs(level_db) < 0.1);

    // group delay is compensated: output matches the ideal tone in phase too
    const IqCapture ideal = make_tone(out.samples.size(), 7.68e6, 1.0e6, amp);
    cpx corr = 0.0;
    double e1 = 0.0, e2 = 0.0;
    for (size_t i = a; i < b; ++i) {
        corr += out.samples[i] * std::conj(ideal.samples[i]);
        e1 += std::norm(out.samples[i]);
        e2 += std::norm(ideal.samples[i]);
    }
    REQUIRE(std::abs(corr) / std::sqrt(e1 * e2) > 0.999);
}

TEST_CASE("resample stopband tone is rejected by 60 dB") {
    const double amp = 0.5;
    const IqCapture iq = make_tone(61440, 30.72e6, 3.9e6, amp);
    const IqCapture out = resample(iq, 7.68e6);
    const size_t a = 200, b = out.samples.size() - 200;
    const double level_db = 20.0 * std::log10(rms(out.samples, a, b) / amp);
    REQUIRE(level_db < -60.0);
}

TEST_CASE("resample down then up round trip") {
    const size_t n = 40960;
    IqCapture iq = make_tone(n, 30.72e6, 1.0e6, 1.0);
    for (size_t i = 0; i < n; ++i)  // taper so filter edge transients vanish
        iq.samples[i] *= 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi *
                                                static_cast<double>(i) / n));
    const IqCapture down = resample(iq, 7.68e6);
    REQUIRE(down.samples.size() == n / 4);
    const IqCapture up = resample(down, 30.72e6);
    REQUIRE(up.samples.size() == n);
    double err = 0.0, sig = 0.0;
    for (size_t i = 0; i < n; ++i) {
        err += std::norm(up.samples[i] - iq.samples[i]);
        sig += std::norm(iq.samples[i]);
    }
    REQUIRE(10.0 * std::log10(err / sig) < -50.0);
}

TEST_CASE("spectrogram frame count follows the hop formula") {
    const IqCapture iq = make_tone(153600, 7.68e6, 0.0, 0.1);
    const Spectrogram sg = stft_spectrogram(iq, 256, 0.0, Window::rect);
    REQUIRE(sg.power_db.size() == 600);
    REQUIRE(sg.power_db[0].size() == 256);
    REQUIRE(sg.bin_spacing_hz == Catch::Approx(30000.0));
    REQUIRE(sg.frame_step_s == Catch::Approx(256.0 / 7.68e6));

    const Spectrogram half = stft_spectrogram(iq, 256, 0.5, Window::rect);
    REQUIRE(half.power_db.size() == (153600 - 256) / 128 + 1);
}

TEST_CASE("spectrogram localizes an on-grid tone in every frame") {
    const double rate = 7.68e6;
    const IqCapture iq = make_tone(16384, rate, rate / 4.0, 0.25);
    const int nfft = 256;
    const int want = (nfft / 4 + nfft / 2) % nfft;  // +rate/4 on the DC-centered axis
    for (Window w : {Window::rect, Window::hann}) {
        const Spectrogram sg = stft_spectrogram(iq, nfft, 0.5, w);
        for (const auto& row : sg.power_db) {
            const auto it = std::max_element(row.begin(), row.end());
            REQUIRE(static_cast<int>(it - row.begin()) == want);
        }
    }
    // rect window, on-grid tone: all the energy is in one bin
    const Spectrogram sg = stft_spectrogram(iq, nfft, 0.5, Window::rect);
    for (const auto& row : sg.power_db) {
        REQUIRE(row[static_cast<size_t>(want)] ==
                Catch::Approx(20.0 * std::log10(0.25)).margin(1e-6));
        REQUIRE(row[static_cast<size_t>(want)] - row[static_cast<size_t>(want - 2)] > 20.0);
    }
}

TEST_CASE("spectrogram of silence sits at the dB floor") {
    IqCapture iq;
    iq.sample_rate_hz = 7.68e6;
    iq.center_freq_hz = 3.73e9;
    iq.samples.assign(1024, cpx(0.0, 0.0));
    const Spectrogram sg = stft_spectrogram(iq, 256, 0.0, Window::hann);
    for (const auto& row : sg.power_db)
        for (double v : row)
            REQUIRE(v == db_floor);
}

TEST_CASE("spectrogram rect rows satisfy Parseval") {
    IqCapture iq;
    iq.sample_rate_hz = 7.68e6;
    iq.center_freq_hz = 3.73e9;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g(0.0, 0.1);
    iq.samples.resize(2048);
    for (cpx& s : iq.samples)
        s = cpx(g(rng), g(rng));
    const int nfft = 512;
    const Spectrogram sg = stft_spectrogram(iq, nfft, 0.0, Window::rect);
    for (size_t fr = 0; fr < sg.power_db.size(); ++fr) {
        double spec_sum = 0.0;
        for (double v : sg.power_db[fr])
            spec_sum += db_to_pow(v);
        double time_ms = 0.0;
        for (int i = 0; i < nfft; ++i)
            time_ms += std::norm(iq.samples[fr * nfft + static_cast<size_t>(i)]);
        time_ms /= nfft;
        REQUIRE(spec_sum == Catch::Approx(time_ms).epsilon(1e-6));
    }
}

TEST_CASE("spectrogram input validation") {
    const IqCapture iq = make_tone(1024, 7.68e6, 0.0);
    REQUIRE_THROWS_AS(stft_spectrogram(iq, 300), input_error);
    REQUIRE_THROWS_AS(stft_spectrogram(iq, 2048), input_error);
    REQUIRE_THROWS_AS(stft_spectrogram(iq, 256, 1.0), input_error);
    REQUIRE_THROWS_AS(stft_spectrogram(iq, 256, -0.1), input_error);
    REQUIRE_THROWS_AS(parse_window("hamming"), input_error);
}

TEST_CASE("spectrogram axes metadata") {
    const IqCapture iq = make_tone(4096, 7.68e6, 0.0, 0.1);
    const Spectrogram sg = stft_spectrogram(iq, 1024, 0.5, Window::hann);
    const nlohmann::json j = spectrogram_axes_json(sg);
    REQUIRE(j["nfft"] == 1024);
    REQUIRE(j["num_frames"] == sg.power_db.size());
    REQUIRE(j["bin_spacing_hz"].get<double>() == Catch::Approx(7500.0));
    REQUIRE(j["freq_start_hz"].get<double>() == Catch::Approx(-3.84e6));
    REQUIRE(j["center_freq_hz"].get<double>() == Catch::Approx(3.73e9));
}
