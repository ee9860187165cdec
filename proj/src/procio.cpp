#include "ess/procio.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "ess/diagnostics.hpp"
#include "ess/modbus.hpp"

namespace ess::procio {

int64_t now_epoch_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

namespace {

int64_t steady_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Chunked sleep so a stop request is honored within ~10 ms.
void sleep_interruptible(int64_t duration_ms, std::stop_token stop) {
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(duration_ms);
    while (!stop.stop_requested()) {
        const auto now = std::chrono::steady_clock::now();
        if (now >= deadline) break;
        const auto remaining =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
        std::this_thread::sleep_for(std::min(remaining, std::chrono::milliseconds(10)));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Register decoding
// ---------------------------------------------------------------------------

int register_count_for(RegisterEncoding encoding) {
    switch (encoding) {
        case RegisterEncoding::u16:
        case RegisterEncoding::s16:
            return 1;
        case RegisterEncoding::u32_be:
        case RegisterEncoding::f32_be:
            return 2;
    }
    return 1;
}

std::optional<RegisterEncoding> parse_encoding(std::string_view name) {
    if (name == "u16") return RegisterEncoding::u16;
    if (name == "s16") return RegisterEncoding::s16;
    if (name == "u32_be") return RegisterEncoding::u32_be;
    if (name == "f32_be") return RegisterEncoding::f32_be;
    return std::nullopt;
}

std::string_view encoding_name(RegisterEncoding encoding) {
    switch (encoding) {
        case RegisterEncoding::u16: return "u16";
        case RegisterEncoding::s16: return "s16";
        case RegisterEncoding::u32_be: return "u32_be";
        case RegisterEncoding::f32_be: return "f32_be";
    }
    return "u16";
}

double decode_register(std::span<const uint16_t> words, RegisterEncoding encoding, double scale,
                       double offset) {
    if (words.size() != static_cast<size_t>(register_count_for(encoding))) {
        throw std::invalid_argument("register word count does not match encoding");
    }
    double raw = 0.0;
    switch (encoding) {
        case RegisterEncoding::u16:
            raw = static_cast<double>(words[0]);
            break;
        case RegisterEncoding::s16:
            raw = static_cast<double>(static_cast<int16_t>(words[0]));
            break;
        case RegisterEncoding::u32_be:
            raw = static_cast<double>((static_cast<uint32_t>(words[0]) << 16) | words[1]);
            break;
        case RegisterEncoding::f32_be: {
            const uint32_t bits = (static_cast<uint32_t>(words[0]) << 16) | words[1];
            raw = static_cast<double>(std::bit_cast<float>(bits));
            break;
        }
    }
    return raw * scale + offset;
}

// ---------------------------------------------------------------------------
// Timestamps and CSV
// ---------------------------------------------------------------------------

namespace {

// days since 1970-01-01 for a civil date (Howard Hinnant's algorithm)
int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return static_cast<int64_t>(era) * 146097 + static_cast<int64_t>(doe) - 719468;
}

bool all_digits(std::string_view s) {
    return !s.empty() &&
           std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

}  // namespace

std::optional<int64_t> parse_timestamp(std::string_view text) {
    if (all_digits(text)) {
        int64_t ms = 0;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), ms);
        if (ec == std::errc() && p == text.data() + text.size()) {
            return ms;
        }
        return std::nullopt;
    }
    // 2024-01-01T00:00:00Z or 2024-01-01T00:00:00.123Z
    if (text.size() < 20 || text.back() != 'Z' || text[4] != '-' || text[7] != '-' ||
        (text[10] != 'T' && text[10] != ' ') || text[13] != ':' || text[16] != ':') {
        return std::nullopt;
    }
    const auto field = [&](size_t pos, size_t len, int& out) {
        auto [p, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
        return ec == std::errc() && p == text.data() + pos + len;
    };
    int year, month, day, hour, minute, second;
    if (!field(0, 4, year) || !field(5, 2, month) || !field(8, 2, day) || !field(11, 2, hour) ||
        !field(14, 2, minute) || !field(17, 2, second)) {
        return std::nullopt;
    }
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 ||
        second > 60) {
        return std::nullopt;
    }
    int millis = 0;
    if (text[19] == '.') {
        const std::string_view frac = text.substr(20, text.size() - 21);
        if (frac.empty() || frac.size() > 3 || !all_digits(frac)) {
            return std::nullopt;
        }
        int value = 0;
        std::from_chars(frac.data(), frac.data() + frac.size(), value);
        millis = value;
        for (size_t i = frac.size(); i < 3; ++i) millis *= 10;
    } else if (text.size() != 20) {
        return std::nullopt;
    }
    const int64_t days = days_from_civil(year, static_cast<unsigned>(month),
                                         static_cast<unsigned>(day));
    return ((days * 24 + hour) * 60 + minute) * 60000 + static_cast<int64_t>(second) * 1000 +
           millis;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        // trim surrounding whitespace
        const auto begin = field.find_first_not_of(" \t\r");
        const auto end = field.find_last_not_of(" \t\r");
        fields.push_back(begin == std::string::npos ? std::string()
                                                    : field.substr(begin, end - begin + 1));
    }
    return fields;
}

struct CsvRow {
    int64_t ts_ms;
    std::string data_point;
    analytics::Sample sample;
};

std::optional<CsvRow> parse_csv_row(const std::string& line) {
    const auto fields = split_csv_line(line);
    if (fields.size() < 3 || fields.size() > 4) {
        return std::nullopt;
    }
    const auto ts = parse_timestamp(fields[0]);
    if (!ts || fields[1].empty()) {
        return std::nullopt;
    }
    double value = 0.0;
    auto [p, ec] = std::from_chars(fields[2].data(), fields[2].data() + fields[2].size(), value);
    if (ec != std::errc() || p != fields[2].data() + fields[2].size()) {
        return std::nullopt;
    }
    analytics::Quality quality = analytics::Quality::good;
    if (fields.size() == 4 && !fields[3].empty()) {
        if (fields[3] == "bad") {
            quality = analytics::Quality::bad;
        } else if (fields[3] != "good") {
            return std::nullopt;
        }
    }
    return CsvRow{*ts, fields[1], {*ts, value, quality}};
}

bool looks_like_header(const std::string& line) {
    return line.rfind("timestamp", 0) == 0;
}

}  // namespace

CsvLoadResult load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open data file: " + path);
    }
    CsvLoadResult result;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first && looks_like_header(line)) {
            first = false;
            continue;
        }
        first = false;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;  // blank line
        }
        ++result.rows;
        auto row = parse_csv_row(line);
        if (!row) {
            ++result.skipped_rows;
            continue;
        }
        auto& series = result.series[row->data_point];
        series.data_point = row->data_point;
        series.samples.push_back(row->sample);
    }
    for (auto& [dp, series] : result.series) {
        std::stable_sort(series.samples.begin(), series.samples.end(),
                         [](const analytics::Sample& a, const analytics::Sample& b) {
                             return a.ts_ms < b.ts_ms;
                         });
        // strict ordering: duplicate timestamps are skipped, first one wins
        std::vector<analytics::Sample> unique;
        unique.reserve(series.samples.size());
        for (const auto& s : series.samples) {
            if (!unique.empty() && unique.back().ts_ms == s.ts_ms) {
                ++result.skipped_rows;
                continue;
            }
            unique.push_back(s);
        }
        series.samples = std::move(unique);
    }
    return result;
}

ReplayStats run_replay(const std::string& data_point, const CsvReplay& source,
                       const SampleSink& sink, std::stop_token stop) {
    const CsvLoadResult loaded = load_csv(source.path);
    ReplayStats stats;
    stats.skipped_rows = loaded.skipped_rows;
    auto it = loaded.series.find(data_point);
    if (it == loaded.series.end()) {
        return stats;
    }
    const auto& samples = it->second.samples;
    for (size_t i = 0; i < samples.size(); ++i) {
        if (stop.stop_requested()) break;
        if (i > 0 && source.speed_factor > 0.0) {
            const auto gap_ms = static_cast<int64_t>(
                static_cast<double>(samples[i].ts_ms - samples[i - 1].ts_ms) /
                source.speed_factor);
            sleep_interruptible(gap_ms, stop);
            if (stop.stop_requested()) break;
        }
        sink({data_point, samples[i], now_epoch_ms()});
        ++stats.emitted;
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Window assembly
// ---------------------------------------------------------------------------

WindowAssembler::WindowAssembler(WindowSpec spec, std::vector<std::string> data_points)
    : spec_(spec) {
    for (auto& dp : data_points) {
        points_.emplace(std::move(dp), PerPoint{});
    }
}

void WindowAssembler::push(const std::string& data_point, const analytics::Sample& sample) {
    auto it = points_.find(data_point);
    if (it == points_.end()) {
        return;  // unbound data point, ignore
    }
    PerPoint& point = it->second;
    point.saw_first = true;
    if (current_start_ && sample.ts_ms < *current_start_) {
        ++dropped_late_;  // window already closed
        return;
    }
    if (!point.pending.empty() && sample.ts_ms <= point.pending.back().ts_ms) {
        ++dropped_late_;  // duplicate or regressing timestamp
        return;
    }
    point.pending.push_back(sample);
    point.high_water = sample.ts_ms;
}

void WindowAssembler::finish(const std::string& data_point) {
    auto it = points_.find(data_point);
    if (it != points_.end()) {
        it->second.finished = true;
    }
}

void WindowAssembler::try_fix_origin() {
    if (origin_known()) return;
    std::optional<int64_t> min_first;
    for (const auto& [dp, point] : points_) {
        if (!point.finished && !point.saw_first) {
            return;  // wait until every live data point has reported once
        }
        if (!point.pending.empty()) {
            const int64_t first = point.pending.front().ts_ms;
            min_first = min_first ? std::min(*min_first, first) : first;
        }
    }
    if (!min_first) return;
    const int64_t length_ms = spec_.length_s * 1000;
    origin_ = spec_.alignment == Alignment::epoch ? 0 : *min_first;
    current_start_ = *origin_ + ((*min_first - *origin_) / length_ms) * length_ms;
}

bool WindowAssembler::all_points_ready(int64_t end_ms) const {
    for (const auto& [dp, point] : points_) {
        if (point.finished) continue;
        if (!point.high_water || *point.high_water < end_ms) {
            return false;
        }
    }
    return true;
}

analytics::WindowSnapshot WindowAssembler::close_current() {
    const int64_t start = *current_start_;
    const int64_t end = start + spec_.length_s * 1000;
    std::map<std::string, analytics::TimeSeries> full;
    for (auto& [dp, point] : points_) {
        analytics::TimeSeries series;
        series.data_point = dp;
        if (point.last_good) {
            series.samples.push_back(*point.last_good);
        }
        size_t taken = 0;
        for (const auto& s : point.pending) {
            if (s.ts_ms >= end) break;
            series.samples.push_back(s);
            if (s.quality == analytics::Quality::good) {
                point.last_good = s;
            }
            ++taken;
        }
        point.pending.erase(point.pending.begin(),
                            point.pending.begin() + static_cast<ptrdiff_t>(taken));
        full[dp] = std::move(series);
    }
    current_start_ = end;
    return analytics::slice_window(full, start, end);
}

void WindowAssembler::collect_ready(std::vector<analytics::WindowSnapshot>& out) {
    try_fix_origin();
    if (!current_start_) return;
    for (;;) {
        const int64_t end = *current_start_ + spec_.length_s * 1000;
        if (!all_points_ready(end)) break;
        bool has_content = false;
        for (const auto& [dp, point] : points_) {
            if (!point.pending.empty() && point.pending.back().ts_ms >= *current_start_) {
                has_content = true;
                break;
            }
        }
        if (!has_content) break;  // nothing at or past this window: stream exhausted
        out.push_back(close_current());
    }
}

std::vector<analytics::WindowSnapshot> WindowAssembler::drain_ready() {
    std::vector<analytics::WindowSnapshot> out;
    collect_ready(out);
    return out;
}

std::vector<analytics::WindowSnapshot> WindowAssembler::poll_grace(int64_t now_ms,
                                                                   int64_t grace_ms) {
    std::vector<analytics::WindowSnapshot> out;
    collect_ready(out);
    if (!origin_known()) {
        // some data point never reported; give up waiting once the grace
        // passed since the earliest sample we did see
        std::optional<int64_t> min_first;
        for (const auto& [dp, point] : points_) {
            if (!point.pending.empty()) {
                const int64_t first = point.pending.front().ts_ms;
                min_first = min_first ? std::min(*min_first, first) : first;
            }
        }
        if (min_first && now_ms >= *min_first + grace_ms) {
            const int64_t length_ms = spec_.length_s * 1000;
            origin_ = spec_.alignment == Alignment::epoch ? 0 : *min_first;
            current_start_ = *origin_ + ((*min_first - *origin_) / length_ms) * length_ms;
        }
    }
    if (!current_start_) return out;
    while (now_ms >= *current_start_ + spec_.length_s * 1000 + grace_ms) {
        out.push_back(close_current());
    }
    return out;
}

std::vector<analytics::WindowSnapshot> WindowAssembler::flush() {
    std::vector<analytics::WindowSnapshot> out;
    collect_ready(out);
    if (!current_start_) return out;
    bool has_content = false;
    for (const auto& [dp, point] : points_) {
        if (!point.pending.empty() && point.pending.back().ts_ms >= *current_start_) {
            has_content = true;
            break;
        }
    }
    if (has_content) {
        auto snap = close_current();
        snap.partial = true;
        out.push_back(std::move(snap));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Modbus poller
// ---------------------------------------------------------------------------

void run_modbus_poller(const std::string& data_point, const ModbusSource& source,
                       const SampleSink& sink, std::stop_token stop, PollerStats* stats,
                       const PollerOptions& options) {
    modbus::TcpClient client;
    uint32_t consecutive_failures = 0;
    bool was_connected = false;

    const auto emit_event = [&](PollerEvent::Kind kind, int64_t backoff_ms = 0) {
        if (options.on_event) {
            options.on_event({kind, steady_ms(), backoff_ms});
        }
    };
    const auto emit_bad_sample = [&] {
        sink({data_point, {now_epoch_ms(), 0.0, analytics::Quality::bad}, now_epoch_ms()});
        if (stats) stats->bad.fetch_add(1);
    };
    const auto backoff = [&] {
        ++consecutive_failures;
        int64_t delay = options.backoff_base_ms;
        for (uint32_t i = 1; i < consecutive_failures && delay < options.backoff_cap_ms; ++i) {
            delay *= 2;
        }
        delay = std::min<int64_t>(delay, options.backoff_cap_ms);
        emit_event(PollerEvent::Kind::backoff, delay);
        sleep_interruptible(delay, stop);
    };

    while (!stop.stop_requested()) {
        if (!client.connected()) {
            emit_event(PollerEvent::Kind::connect_attempt);
            if (!client.connect(source.host, source.port, options.request_timeout_ms)) {
                backoff();
                continue;
            }
            emit_event(PollerEvent::Kind::connected);
            if (was_connected && stats) {
                stats->reconnects.fetch_add(1);
            }
            was_connected = true;
        }

        const auto result = client.read_holding(source.unit_id, source.address,
                                                source.register_count, options.request_timeout_ms);
        if (stop.stop_requested()) break;

        if (result.status == modbus::TcpClient::ReadResult::Status::ok) {
            const double value =
                decode_register(result.registers, source.encoding, source.scale, source.offset);
            sink({data_point, {now_epoch_ms(), value, analytics::Quality::good}, now_epoch_ms()});
            if (stats) stats->good.fetch_add(1);
            consecutive_failures = 0;
            emit_event(PollerEvent::Kind::read_ok);
            sleep_interruptible(source.poll_period_ms, stop);
            continue;
        }

        emit_event(PollerEvent::Kind::read_failed);
        if (result.status == modbus::TcpClient::ReadResult::Status::protocol_error && stats) {
            stats->protocol_errors.fetch_add(1);
        }
        emit_bad_sample();
        client.close();
        backoff();
    }
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

double waveform_value(const Waveform& waveform, double elapsed_s) {
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    const double span = waveform.high - waveform.low;
    switch (waveform.kind) {
        case Waveform::Kind::constant:
            return waveform.low;
        case Waveform::Kind::sine:
            return waveform.low +
                   span * (0.5 + 0.5 * std::sin(kTwoPi * elapsed_s / waveform.period_s));
        case Waveform::Kind::square:
            return std::fmod(elapsed_s, waveform.period_s) < waveform.period_s / 2.0
                       ? waveform.high
                       : waveform.low;
        case Waveform::Kind::counter:
            return waveform.low + span * (elapsed_s / waveform.period_s);
    }
    return waveform.low;
}

void run_simulator(const std::string& data_point, const SimulatorSource& source,
                   const SampleSink& sink, std::stop_token stop) {
    const int64_t start = steady_ms();
    while (!stop.stop_requested()) {
        const double elapsed_s = static_cast<double>(steady_ms() - start) / 1000.0;
        sink({data_point,
              {now_epoch_ms(), waveform_value(source.waveform, elapsed_s),
               analytics::Quality::good},
              now_epoch_ms()});
        sleep_interruptible(source.waveform.sample_period_ms, stop);
    }
}

}  // namespace ess::procio
