#pragma once

// Two interchangeable transports behind one blocking duplex interface: an
// in-process channel pair for deterministic tests and a TCP stream socket
// carrying length-prefixed frames. Message payloads are identical on both.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <utility>

#include "bc3e/errors.hpp"
#include "bc3e/wire.hpp"

namespace bc3e {

class Transport {
public:
    virtual ~Transport() = default;
    virtual void send(const std::string& payload) = 0;
    // Blocks up to `timeout`; throws TransportTimeout or TransportClosed.
    virtual std::string recv(std::chrono::milliseconds timeout) = 0;
    virtual void close() = 0;
};

// -- in-process channel -------------------------------------------------------

namespace transport_detail {

struct MessageQueue {
    std::mutex mutex;
    std::condition_variable cv;
    std::deque<std::string> items;
    bool closed = false;

    void push(std::string payload) {
        {
            std::lock_guard lock(mutex);
            if (closed) throw TransportClosed("channel closed");
            items.push_back(std::move(payload));
        }
        cv.notify_one();
    }

    std::string pop(std::chrono::milliseconds timeout) {
        std::unique_lock lock(mutex);
        if (!cv.wait_for(lock, timeout, [&] { return !items.empty() || closed; }))
            throw TransportTimeout("channel recv timed out");
        if (items.empty()) throw TransportClosed("channel closed");
        std::string payload = std::move(items.front());
        items.pop_front();
        return payload;
    }

    void close() {
        {
            std::lock_guard lock(mutex);
            closed = true;
        }
        cv.notify_all();
    }
};

}  // namespace transport_detail

class ChannelTransport final : public Transport {
public:
    ChannelTransport(std::shared_ptr<transport_detail::MessageQueue> out,
                     std::shared_ptr<transport_detail::MessageQueue> in)
        : out_(std::move(out)), in_(std::move(in)) {}

    void send(const std::string& payload) override { out_->push(payload); }
    std::string recv(std::chrono::milliseconds timeout) override { return in_->pop(timeout); }
    void close() override {
        out_->close();
        in_->close();
    }

private:
    std::shared_ptr<transport_detail::MessageQueue> out_;
    std::shared_ptr<transport_detail::MessageQueue> in_;
};

using TransportPair = std::pair<std::unique_ptr<Transport>, std::unique_ptr<Transport>>;

inline TransportPair make_channel_pair() {
    auto a_to_b = std::make_shared<transport_detail::MessageQueue>();
    auto b_to_a = std::make_shared<transport_detail::MessageQueue>();
    return {std::make_unique<ChannelTransport>(a_to_b, b_to_a),
            std::make_unique<ChannelTransport>(b_to_a, a_to_b)};
}

// -- TCP sockets --------------------------------------------------------------

class SocketTransport final : public Transport {
public:
    explicit SocketTransport(int fd) : fd_(fd) {}
    SocketTransport(const SocketTransport&) = delete;
    SocketTransport& operator=(const SocketTransport&) = delete;
    ~SocketTransport() override { close(); }

    void send(const std::string& payload) override {
        const std::string frame = encode_frame(payload);
        std::size_t sent = 0;
        while (sent < frame.size()) {
            const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent,
                                     MSG_NOSIGNAL);
            if (n <= 0) throw TransportClosed("socket send failed");
            sent += static_cast<std::size_t>(n);
        }
    }

    std::string recv(std::chrono::milliseconds timeout) override {
        unsigned char header[4];
        read_exact(header, 4, timeout);
        const std::uint32_t len = decode_frame_length(header);
        std::string payload(len, '\0');
        if (len > 0) read_exact(reinterpret_cast<unsigned char*>(payload.data()), len, timeout);
        return payload;
    }

    void close() override {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    void read_exact(unsigned char* out, std::size_t len, std::chrono::milliseconds timeout) {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        std::size_t got = 0;
        while (got < len) {
            const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (remaining.count() <= 0) throw TransportTimeout("socket recv timed out");
            pollfd pfd{fd_, POLLIN, 0};
            const int ready = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
            if (ready == 0) throw TransportTimeout("socket recv timed out");
            if (ready < 0) {
                if (errno == EINTR) continue;
                throw TransportClosed("poll failed");
            }
            const ssize_t n = ::recv(fd_, out + got, len - got, 0);
            if (n == 0) throw TransportClosed("peer closed connection");
            if (n < 0) {
                if (errno == EINTR) continue;
                throw TransportClosed("socket recv failed");
            }
            got += static_cast<std::size_t>(n);
        }
    }

    int fd_ = -1;
};

class SocketListener {
public:
    explicit SocketListener(std::uint16_t port = 0) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw TransportClosed("socket() failed");
        const int one = 1;
        ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            ::close(fd_);
            throw TransportClosed("bind failed");
        }
        if (::listen(fd_, 64) != 0) {
            ::close(fd_);
            throw TransportClosed("listen failed");
        }
        socklen_t len = sizeof addr;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }

    SocketListener(const SocketListener&) = delete;
    SocketListener& operator=(const SocketListener&) = delete;
    ~SocketListener() {
        if (fd_ >= 0) ::close(fd_);
    }

    std::uint16_t port() const { return port_; }

    std::unique_ptr<Transport> accept(std::chrono::milliseconds timeout) {
        pollfd pfd{fd_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
        if (ready == 0) throw TransportTimeout("accept timed out");
        if (ready < 0) throw TransportClosed("poll failed");
        const int conn = ::accept(fd_, nullptr, nullptr);
        if (conn < 0) throw TransportClosed("accept failed");
        return std::make_unique<SocketTransport>(conn);
    }

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

inline std::unique_ptr<Transport> connect_socket(const std::string& host, std::uint16_t port,
                                                 std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd < 0) throw TransportClosed("socket() failed");
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(port);
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
            hostent* resolved = ::gethostbyname(host.c_str());
            if (resolved == nullptr || resolved->h_addrtype != AF_INET) {
                ::close(fd);
                throw TransportClosed("cannot resolve host: " + host);
            }
            std::memcpy(&addr.sin_addr, resolved->h_addr_list[0], sizeof addr.sin_addr);
        }
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0)
            return std::make_unique<SocketTransport>(fd);
        ::close(fd);
        if (std::chrono::steady_clock::now() >= deadline)
            throw TransportTimeout("connect timed out: " + host);
        ::usleep(20 * 1000);
    }
}

}  // namespace bc3e
