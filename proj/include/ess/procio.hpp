#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <variant>
#include <vector>

#include "ess/analytics.hpp"
#include "ess/diagnostics.hpp"

namespace ess::procio {

// ---------------------------------------------------------------------------
// Connector bindings (address assignment for data points)
// ---------------------------------------------------------------------------

enum class RegisterEncoding { u16, s16, u32_be, f32_be };

/// Words a register payload must span for the encoding (1 or 2).
int register_count_for(RegisterEncoding encoding);
std::optional<RegisterEncoding> parse_encoding(std::string_view name);
std::string_view encoding_name(RegisterEncoding encoding);

struct CsvReplay {
    std::string path;
    double speed_factor = 0.0;  // 0 = as fast as possible (batch mode)
};

struct ModbusSource {
    std::string host;
    uint16_t port = 502;
    uint8_t unit_id = 1;
    uint16_t address = 0;
    uint16_t register_count = 1;
    RegisterEncoding encoding = RegisterEncoding::u16;
    double scale = 1.0;
    double offset = 0.0;
    int poll_period_ms = 1000;  // >= 10
};

struct Waveform {
    enum class Kind { constant, sine, square, counter };
    Kind kind = Kind::constant;
    double low = 0.0;
    double high = 1.0;
    double period_s = 60.0;
    int sample_period_ms = 1000;
};

struct SimulatorSource {
    Waveform waveform;
};

struct ConnectorBinding {
    std::string data_point;
    std::variant<CsvReplay, ModbusSource, SimulatorSource> source;
};

struct SampleEnvelope {
    std::string data_point;
    analytics::Sample sample;  // value already in engineering units
    int64_t received_ms = 0;
};

using SampleSink = std::function<void(const SampleEnvelope&)>;

/// Decodes raw holding-register words into an engineering value:
/// decode(raw) * scale + offset. 32-bit encodings take the high word first.
/// Throws std::invalid_argument on a word-count mismatch.
double decode_register(std::span<const uint16_t> words, RegisterEncoding encoding, double scale,
                       double offset);

// ---------------------------------------------------------------------------
// CSV loading and replay
// ---------------------------------------------------------------------------

/// Accepts ISO-8601 UTC ("2024-01-01T00:00:00Z", optional fractional
/// seconds) or integer epoch milliseconds.
std::optional<int64_t> parse_timestamp(std::string_view text);

struct CsvLoadResult {
    std::map<std::string, analytics::TimeSeries> series;
    uint64_t rows = 0;
    uint64_t skipped_rows = 0;  // unparseable, counted not fatal
};

/// Batch-loads a measurement CSV (header: timestamp,data_point,value[,quality]).
/// Throws IoError when the file cannot be opened.
CsvLoadResult load_csv(const std::string& path);

struct ReplayStats {
    uint64_t emitted = 0;
    uint64_t skipped_rows = 0;
};

/// Streams one data point's rows from a CSV in timestamp order.
/// speed_factor 0 emits as fast as possible; k > 0 scales the recorded
/// inter-sample delays by 1/k. Throws IoError when the file is missing.
ReplayStats run_replay(const std::string& data_point, const CsvReplay& source,
                       const SampleSink& sink, std::stop_token stop = {});

// ---------------------------------------------------------------------------
// Tumbling windows
// ---------------------------------------------------------------------------

enum class Alignment { epoch, first_sample };

struct WindowSpec {
    int64_t length_s = 3600;  // > 0
    Alignment alignment = Alignment::epoch;
};

/// Turns per-data-point sample streams into complete, immutable
/// WindowSnapshots. Windows are half-open [start, start+length) aligned to
/// integer multiples of the length from the origin (epoch, or the earliest
/// first sample across data points). A window closes once every unfinished
/// data point has delivered a sample at or past its end; `poll_grace` closes
/// it on wall-clock expiry in live mode; late samples are counted as dropped.
/// Single-threaded consumer-side object: feed from one thread.
class WindowAssembler {
public:
    WindowAssembler(WindowSpec spec, std::vector<std::string> data_points);

    void push(const std::string& data_point, const analytics::Sample& sample);
    void finish(const std::string& data_point);

    /// Windows that closed since the last call, ordered by start.
    std::vector<analytics::WindowSnapshot> drain_ready();

    /// Force-closes windows whose end passed more than grace_ms ago
    /// (receipt-time clock, live mode only).
    std::vector<analytics::WindowSnapshot> poll_grace(int64_t now_ms, int64_t grace_ms);

    /// Closes the remaining open window (if any samples arrived at all);
    /// call after all inputs finished or on shutdown.
    std::vector<analytics::WindowSnapshot> flush();

    uint64_t dropped_late() const { return dropped_late_; }

private:
    struct PerPoint {
        std::vector<analytics::Sample> pending;       // ts >= current window start
        std::optional<analytics::Sample> last_good;   // held value before window start
        std::optional<int64_t> high_water;
        bool finished = false;
        bool saw_first = false;
    };

    bool origin_known() const { return origin_.has_value(); }
    void try_fix_origin();
    bool all_points_ready(int64_t end_ms) const;
    analytics::WindowSnapshot close_current();
    void collect_ready(std::vector<analytics::WindowSnapshot>& out);

    WindowSpec spec_;
    std::map<std::string, PerPoint> points_;
    std::optional<int64_t> origin_;
    std::optional<int64_t> current_start_;
    uint64_t dropped_late_ = 0;
};

// ---------------------------------------------------------------------------
// Live connectors
// ---------------------------------------------------------------------------

struct PollerStats {
    std::atomic<uint64_t> good{0};
    std::atomic<uint64_t> bad{0};
    std::atomic<uint64_t> protocol_errors{0};
    std::atomic<uint64_t> reconnects{0};
};

struct PollerEvent {
    enum class Kind { connect_attempt, connected, read_ok, read_failed, backoff };
    Kind kind;
    int64_t at_ms;       // steady-clock milliseconds
    int64_t backoff_ms;  // for Kind::backoff
};

struct PollerOptions {
    int request_timeout_ms = 1000;
    int backoff_base_ms = 500;
    int backoff_cap_ms = 30000;
    std::function<void(const PollerEvent&)> on_event;  // test instrumentation
};

/// Polls Read Holding Registers every poll_period_ms, emitting one decoded
/// good sample per successful read (timestamped at receipt). Exception
/// responses and timeouts emit a bad-quality sample followed by exponential
/// backoff (base 2, capped) and a reconnect. Runs until the stop token fires.
void run_modbus_poller(const std::string& data_point, const ModbusSource& source,
                       const SampleSink& sink, std::stop_token stop, PollerStats* stats = nullptr,
                       const PollerOptions& options = {});

/// Emits synthetic samples on the wall clock until stopped.
void run_simulator(const std::string& data_point, const SimulatorSource& source,
                   const SampleSink& sink, std::stop_token stop);

double waveform_value(const Waveform& waveform, double elapsed_s);

int64_t now_epoch_ms();

}  // namespace ess::procio
