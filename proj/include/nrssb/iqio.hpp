#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nrssb/types.hpp"

static_assert(std::endian::native == std::endian::little,
              "capture files are little-endian; big-endian hosts unsupported");

namespace nrssb {

// Interleaved (I,Q) scalars, little-endian. int16 maps full scale to
// +-1.0 with a fixed divisor of 32768.
enum class SampleFormat { int16, float32 };

inline SampleFormat parse_sample_format(const std::string& s) {
    if (s == "int16" || s == "complex-int16-interleaved")
        return SampleFormat::int16;
    if (s == "float32" || s == "complex-float32-interleaved")
        return SampleFormat::float32;
    throw input_error("unknown sample format: " + s);
}

inline const char* sample_format_name(SampleFormat f) {
    return f == SampleFormat::int16 ? "complex-int16-interleaved"
                                    : "complex-float32-interleaved";
}

inline size_t bytes_per_complex(SampleFormat f) {
    return f == SampleFormat::int16 ? 4 : 8;
}

// Timestamps: epoch seconds (possibly fractional) or ISO-8601
// "YYYY-MM-DDThh:mm:ss[.frac][Z]". Both are accepted everywhere a time
// is read; writers emit epoch seconds.
inline double parse_time_utc(const std::string& raw) {
    std::string s = raw;
    while (!s.empty() && (s.back() == '\r' || s.back() == ' '))
        s.pop_back();
    size_t start = s.find_first_not_of(' ');
    if (start == std::string::npos)
        throw input_error("empty timestamp");
    s = s.substr(start);
    if (s.find('T') != std::string::npos) {
        std::tm tm{};
        double frac_sec = 0.0;
        int y, mo, d, h, mi;
        int consumed = 0;
        if (std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%lf%n", &y, &mo, &d, &h, &mi,
                        &frac_sec, &consumed) != 6)
            throw input_error("bad ISO-8601 timestamp: " + raw);
        std::string tail = s.substr(static_cast<size_t>(consumed));
        if (!tail.empty() && tail != "Z")
            throw input_error("bad ISO-8601 timestamp suffix: " + raw);
        tm.tm_year = y - 1900;
        tm.tm_mon = mo - 1;
        tm.tm_mday = d;
        tm.tm_hour = h;
        tm.tm_min = mi;
        tm.tm_sec = 0;
        const std::time_t base = timegm(&tm);
        return static_cast<double>(base) + frac_sec;
    }
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        throw input_error("bad timestamp: " + raw);
    return v;
}

inline std::string format_time_utc(double t) {
    const auto tt = static_cast<std::time_t>(t);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace detail {

inline std::vector<char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw input_error("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    const std::streamoff n = f.tellg();
    f.seekg(0);
    std::vector<char> bytes(static_cast<size_t>(n));
    if (n > 0)
        f.read(bytes.data(), n);
    if (!f)
        throw input_error("cannot read file: " + path);
    return bytes;
}

inline double meta_time(const nlohmann::json& v) {
    if (v.is_number())
        return v.get<double>();
    if (v.is_string())
        return parse_time_utc(v.get<std::string>());
    throw input_error("start_time_utc must be a number or timestamp string");
}

}  // namespace detail

struct CaptureMeta {
    double sample_rate_hz = 0.0;
    double center_freq_hz = 0.0;
    SampleFormat format = SampleFormat::float32;
    double start_time_utc = 0.0;
    std::string source_id;
};

inline std::string default_meta_path(const std::string& data_path) {
    return data_path + ".json";
}

inline CaptureMeta load_capture_meta(const std::string& meta_path) {
    std::ifstream f(meta_path);
    if (!f)
        throw input_error("cannot open sidecar: " + meta_path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw input_error("sidecar " + meta_path + ": " + e.what());
    }
    for (const char* key : {"sample_rate_hz", "center_freq_hz", "format", "start_time_utc"})
        if (!j.contains(key))
            throw input_error("sidecar " + meta_path + " missing required key: " + key);
    CaptureMeta m;
    try {
        m.sample_rate_hz = j["sample_rate_hz"].get<double>();
        m.center_freq_hz = j["center_freq_hz"].get<double>();
        m.format = parse_sample_format(j["format"].get<std::string>());
        m.start_time_utc = detail::meta_time(j["start_time_utc"]);
        m.source_id = j.value("source_id", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw input_error("sidecar " + meta_path + ": " + e.what());
    }
    return m;
}

inline IqCapture load_capture(const std::string& path, std::string meta_path = {}) {
    if (meta_path.empty())
        meta_path = default_meta_path(path);
    const CaptureMeta meta = load_capture_meta(meta_path);
    const std::vector<char> bytes = detail::read_file_bytes(path);
    const size_t stride = bytes_per_complex(meta.format);
    if (bytes.empty() || bytes.size() % stride != 0)
        throw input_error(path + ": size " + std::to_string(bytes.size()) +
                          " is not a whole number of " + sample_format_name(meta.format) +
                          " sample pairs");
    IqCapture cap;
    cap.sample_rate_hz = meta.sample_rate_hz;
    cap.center_freq_hz = meta.center_freq_hz;
    cap.start_time_utc = meta.start_time_utc;
    cap.source_id = meta.source_id;
    const size_t n = bytes.size() / stride;
    cap.samples.resize(n);
    if (meta.format == SampleFormat::int16) {
        const auto* p = reinterpret_cast<const int16_t*>(bytes.data());
        for (size_t i = 0; i < n; ++i)
            cap.samples[i] = cpx(p[2 * i] / 32768.0, p[2 * i + 1] / 32768.0);
    } else {
        const auto* p = reinterpret_cast<const float*>(bytes.data());
        for (size_t i = 0; i < n; ++i)
            cap.samples[i] = cpx(p[2 * i], p[2 * i + 1]);
    }
    validate(cap);
    return cap;
}

inline void write_capture(const IqCapture& cap, const std::string& path,
                          SampleFormat format, std::string meta_path = {}) {
    validate(cap);
    if (meta_path.empty())
        meta_path = default_meta_path(path);
    {
        std::ofstream f(path, std::ios::binary);
        if (!f)
            throw input_error("cannot write file: " + path);
        if (format == SampleFormat::int16) {
            std::vector<int16_t> buf(2 * cap.samples.size());
            auto quant = [](double v) {
                const double s = std::round(v * 32768.0);
                return static_cast<int16_t>(std::clamp(s, -32768.0, 32767.0));
            };
            for (size_t i = 0; i < cap.samples.size(); ++i) {
                buf[2 * i] = quant(cap.samples[i].real());
                buf[2 * i + 1] = quant(cap.samples[i].imag());
            }
            f.write(reinterpret_cast<const char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(int16_t)));
        } else {
            std::vector<float> buf(2 * cap.samples.size());
            for (size_t i = 0; i < cap.samples.size(); ++i) {
                buf[2 * i] = static_cast<float>(cap.samples[i].real());
                buf[2 * i + 1] = static_cast<float>(cap.samples[i].imag());
            }
            f.write(reinterpret_cast<const char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
        if (!f)
            throw input_error("write failed: " + path);
    }
    nlohmann::json j{{"sample_rate_hz", cap.sample_rate_hz},
                     {"center_freq_hz", cap.center_freq_hz},
                     {"format", sample_format_name(format)},
                     {"start_time_utc", cap.start_time_utc},
                     {"source_id", cap.source_id}};
    std::ofstream f(meta_path);
    if (!f)
        throw input_error("cannot write sidecar: " + meta_path);
    f << j.dump(2) << "\n";
}

struct GpsFix {
    double time_utc = 0.0;
    double lat_deg = 0.0;
    double lon_deg = 0.0;
    double alt_m = 0.0;
};

struct GpsTrack {
    std::vector<GpsFix> fixes;
};

inline GpsTrack load_gps_track(const std::string& path) {
    std::ifstream f(path);
    if (!f)
        throw input_error("cannot open GPS log: " + path);
    std::string line;
    if (!std::getline(f, line))
        throw input_error(path + ": empty GPS log");
    {
        std::string hdr = line;
        hdr.erase(std::remove_if(hdr.begin(), hdr.end(),
                                 [](char c) { return c == ' ' || c == '\r'; }),
                  hdr.end());
        if (hdr != "time_utc,lat_deg,lon_deg,alt_m")
            throw input_error(path + ": expected header time_utc,lat_deg,lon_deg,alt_m");
    }
    GpsTrack track;
    size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \r\t") == std::string::npos)
            continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ','))
            fields.push_back(field);
        const std::string where = path + " line " + std::to_string(lineno);
        if (fields.size() != 4)
            throw input_error(where + ": expected 4 fields, got " +
                              std::to_string(fields.size()));
        GpsFix fix;
        try {
            fix.time_utc = parse_time_utc(fields[0]);
            fix.lat_deg = std::stod(fields[1]);
            fix.lon_deg = std::stod(fields[2]);
            fix.alt_m = std::stod(fields[3]);
        } catch (const input_error& e) {
            throw input_error(where + ": " + e.what());
        } catch (const std::exception&) {
            throw input_error(where + ": unparseable number");
        }
        if (fix.lat_deg < -90.0 || fix.lat_deg > 90.0)
            throw input_error(where + ": latitude out of [-90, 90]");
        if (fix.lon_deg < -180.0 || fix.lon_deg > 180.0)
            throw input_error(where + ": longitude out of [-180, 180]");
        track.fixes.push_back(fix);
    }
    if (track.fixes.empty())
        throw input_error(path + ": no GPS fixes");
    std::stable_sort(track.fixes.begin(), track.fixes.end(),
                     [](const GpsFix& a, const GpsFix& b) { return a.time_utc < b.time_utc; });
    for (size_t i = 1; i < track.fixes.size(); ++i)
        if (track.fixes[i].time_utc == track.fixes[i - 1].time_utc)
            throw input_error(path + ": duplicate GPS timestamp " +
                              format_time_utc(track.fixes[i].time_utc));
    return track;
}

template <class T>
struct Annotated {
    std::vector<std::pair<T, GpsFix>> matched;
    size_t dropped = 0;
};

// Nearest-in-time join; equidistant fixes resolve to the earlier one;
// items farther than max_skew_s from every fix are dropped (and counted).
template <class T, class TimeFn>
Annotated<T> annotate_with_track(const std::vector<T>& items, const GpsTrack& track,
                                 double max_skew_s, TimeFn&& time_of) {
    if (track.fixes.empty())
        throw input_error("GPS track has no fixes");
    if (!(max_skew_s >= 0.0))
        throw input_error("max_skew_s must be >= 0");
    Annotated<T> out;
    for (const T& item : items) {
        const double t = time_of(item);
        auto next = std::lower_bound(
            track.fixes.begin(), track.fixes.end(), t,
            [](const GpsFix& f, double v) { return f.time_utc < v; });
        const GpsFix* best = nullptr;
        if (next != track.fixes.begin()) {
            best = &*std::prev(next);
        }
        if (next != track.fixes.end()) {
            if (!best || (next->time_utc - t) < (t - best->time_utc))
                best = &*next;
        }
        if (best && std::abs(best->time_utc - t) <= max_skew_s)
            out.matched.emplace_back(item, *best);
        else
            ++out.dropped;
    }
    return out;
}

}  // namespace nrssb
