#include "ess/modbus.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace ess::modbus {

std::array<uint8_t, 12> build_read_holding(uint16_t transaction_id, uint8_t unit_id,
                                           uint16_t address, uint16_t count) {
    std::array<uint8_t, 12> adu{};
    adu[0] = static_cast<uint8_t>(transaction_id >> 8);
    adu[1] = static_cast<uint8_t>(transaction_id & 0xFF);
    adu[2] = 0;  // protocol id
    adu[3] = 0;
    adu[4] = 0;  // length: unit id + PDU = 6
    adu[5] = 6;
    adu[6] = unit_id;
    adu[7] = kReadHoldingRegisters;
    adu[8] = static_cast<uint8_t>(address >> 8);
    adu[9] = static_cast<uint8_t>(address & 0xFF);
    adu[10] = static_cast<uint8_t>(count >> 8);
    adu[11] = static_cast<uint8_t>(count & 0xFF);
    return adu;
}

Response parse_response(const uint8_t* data, size_t size) {
    Response r;
    if (size < 9) {
        r.error = "response shorter than MBAP header + function code";
        return r;
    }
    r.transaction_id = static_cast<uint16_t>((data[0] << 8) | data[1]);
    const uint16_t protocol = static_cast<uint16_t>((data[2] << 8) | data[3]);
    const uint16_t length = static_cast<uint16_t>((data[4] << 8) | data[5]);
    if (protocol != 0) {
        r.error = "nonzero protocol id";
        return r;
    }
    if (size != static_cast<size_t>(length) + 6) {
        r.error = "MBAP length field does not match frame size";
        return r;
    }
    const uint8_t function = data[7];
    if (function == (kReadHoldingRegisters | 0x80)) {
        r.status = Response::Status::exception;
        r.exception_code = data[8];
        return r;
    }
    if (function != kReadHoldingRegisters) {
        r.error = "unexpected function code";
        return r;
    }
    const uint8_t byte_count = data[8];
    if (size != 9u + byte_count || byte_count % 2 != 0) {
        r.error = "register payload size mismatch";
        return r;
    }
    r.registers.reserve(byte_count / 2);
    for (size_t i = 0; i < byte_count; i += 2) {
        r.registers.push_back(static_cast<uint16_t>((data[9 + i] << 8) | data[10 + i]));
    }
    r.status = Response::Status::ok;
    return r;
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

namespace {

bool wait_fd(int fd, short events, int timeout_ms) {
    pollfd pfd{fd, events, 0};
    const int rc = ::poll(&pfd, 1, timeout_ms);
    return rc > 0 && (pfd.revents & events) != 0;
}

// Reads exactly n bytes or fails; returns 0 on success, -1 on error/close,
// -2 on timeout.
int read_exact(int fd, uint8_t* buf, size_t n, int timeout_ms) {
    size_t got = 0;
    while (got < n) {
        if (!wait_fd(fd, POLLIN, timeout_ms)) {
            return -2;
        }
        const ssize_t rc = ::recv(fd, buf + got, n - got, 0);
        if (rc < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
            continue;
        }
        if (rc <= 0) {
            return -1;
        }
        got += static_cast<size_t>(rc);
    }
    return 0;
}

}  // namespace

TcpClient::~TcpClient() { close(); }

void TcpClient::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

bool TcpClient::connect(const std::string& host, uint16_t port, int timeout_ms) {
    close();
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) {
        return false;
    }
    bool ok = false;
    for (addrinfo* ai = res; ai != nullptr && !ok; ai = ai->ai_next) {
        const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK, ai->ai_protocol);
        if (fd < 0) continue;
        const int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
        if (rc == 0 || (rc < 0 && errno == EINPROGRESS && wait_fd(fd, POLLOUT, timeout_ms))) {
            int err = 0;
            socklen_t len = sizeof(err);
            if (::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0) {
                const int flag = 1;
                ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &flag, sizeof(flag));
                fd_ = fd;
                ok = true;
                continue;
            }
        }
        ::close(fd);
    }
    ::freeaddrinfo(res);
    return ok;
}

TcpClient::ReadResult TcpClient::read_holding(uint8_t unit_id, uint16_t address, uint16_t count,
                                              int timeout_ms) {
    ReadResult result;
    if (fd_ < 0) {
        result.error = "not connected";
        return result;
    }
    const uint16_t txn = next_transaction_++;
    const auto request = build_read_holding(txn, unit_id, address, count);
    size_t sent = 0;
    while (sent < request.size()) {
        if (!wait_fd(fd_, POLLOUT, timeout_ms)) {
            result.status = ReadResult::Status::timeout;
            return result;
        }
        const ssize_t rc = ::send(fd_, request.data() + sent, request.size() - sent, MSG_NOSIGNAL);
        if (rc < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
            continue;
        }
        if (rc <= 0) {
            result.error = "send failed";
            return result;
        }
        sent += static_cast<size_t>(rc);
    }

    uint8_t header[9];
    int rc = read_exact(fd_, header, sizeof(header), timeout_ms);
    if (rc == -2) {
        result.status = ReadResult::Status::timeout;
        return result;
    }
    if (rc != 0) {
        result.error = "connection closed";
        return result;
    }
    const uint16_t length = static_cast<uint16_t>((header[4] << 8) | header[5]);
    if (length < 3 || length > 256) {
        result.status = ReadResult::Status::protocol_error;
        result.error = "implausible MBAP length";
        return result;
    }
    std::vector<uint8_t> frame(header, header + sizeof(header));
    frame.resize(static_cast<size_t>(length) + 6);
    if (frame.size() > sizeof(header)) {
        rc = read_exact(fd_, frame.data() + sizeof(header), frame.size() - sizeof(header),
                        timeout_ms);
        if (rc == -2) {
            result.status = ReadResult::Status::timeout;
            return result;
        }
        if (rc != 0) {
            result.error = "connection closed";
            return result;
        }
    }

    const Response resp = parse_response(frame.data(), frame.size());
    if (resp.status == Response::Status::malformed || resp.transaction_id != txn) {
        result.status = ReadResult::Status::protocol_error;
        result.error = resp.error.empty() ? "transaction id mismatch" : resp.error;
        return result;
    }
    if (resp.status == Response::Status::exception) {
        result.status = ReadResult::Status::exception;
        result.exception_code = resp.exception_code;
        return result;
    }
    if (resp.registers.size() != count) {
        result.status = ReadResult::Status::protocol_error;
        result.error = "register count mismatch";
        return result;
    }
    result.status = ReadResult::Status::ok;
    result.registers = resp.registers;
    return result;
}

}  // namespace ess::modbus
