#pragma once

// In-process Modbus/TCP server for poller and protocol tests. Serves a
// register map on a loopback ephemeral port; fault injection knobs cover
// exception responses, dropped connections and silence (client timeouts).

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <thread>

namespace testsupport {

class MockModbusServer {
public:
    enum class Mode {
        normal,       // answer from the register map
        exception,    // reply with the configured exception code
        silent,       // accept requests, never answer
        drop_after_n  // answer n reads per connection, then close it
    };

    MockModbusServer();
    ~MockModbusServer();

    /// Starts listening on 127.0.0.1 (ephemeral port unless one is given),
    /// returns the bound port.
    uint16_t start(uint16_t port = 0);
    void stop();

    void set_register(uint16_t address, uint16_t value);
    void set_mode(Mode mode);
    void set_exception_code(uint8_t code);
    void set_drop_after(int reads);

    uint64_t requests_served() const { return requests_.load(); }
    uint16_t port() const { return port_; }

private:
    void serve();
    void handle_connection(int client_fd);

    std::thread thread_;
    std::atomic<bool> running_{false};
    std::atomic<int> listen_fd_{-1};
    uint16_t port_ = 0;

    mutable std::mutex mutex_;
    std::map<uint16_t, uint16_t> registers_;
    Mode mode_ = Mode::normal;
    uint8_t exception_code_ = 0x02;
    int drop_after_ = 2;
    std::atomic<uint64_t> requests_{0};
};

}  // namespace testsupport
