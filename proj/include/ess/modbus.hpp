#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ess::modbus {

constexpr uint8_t kReadHoldingRegisters = 0x03;

/// 12-byte Read Holding Registers ADU: MBAP header (transaction id,
/// protocol 0, length 6, unit id) followed by the function 0x03 PDU.
std::array<uint8_t, 12> build_read_holding(uint16_t transaction_id, uint8_t unit_id,
                                           uint16_t address, uint16_t count);

struct Response {
    enum class Status { ok, exception, malformed };
    Status status = Status::malformed;
    uint16_t transaction_id = 0;
    uint8_t exception_code = 0;            // valid when status == exception
    std::vector<uint16_t> registers;       // valid when status == ok
    std::string error;                     // valid when status == malformed
};

/// Parses a complete response ADU (MBAP + PDU bytes).
Response parse_response(const uint8_t* data, size_t size);

/// Blocking Modbus/TCP client for function 0x03, one outstanding request at
/// a time. All calls time out rather than hang.
class TcpClient {
public:
    TcpClient() = default;
    ~TcpClient();
    TcpClient(const TcpClient&) = delete;
    TcpClient& operator=(const TcpClient&) = delete;

    bool connect(const std::string& host, uint16_t port, int timeout_ms);
    void close();
    bool connected() const { return fd_ >= 0; }

    struct ReadResult {
        enum class Status { ok, timeout, io_error, exception, protocol_error };
        Status status = Status::io_error;
        std::vector<uint16_t> registers;
        uint8_t exception_code = 0;
        std::string error;
    };

    /// Issues one Read Holding Registers transaction. Transaction ids
    /// increase monotonically (mod 2^16) across the client's lifetime.
    ReadResult read_holding(uint8_t unit_id, uint16_t address, uint16_t count, int timeout_ms);

private:
    int fd_ = -1;
    uint16_t next_transaction_ = 1;
};

}  // namespace ess::modbus
