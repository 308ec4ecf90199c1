#pragma once
// Device bytes over TCP: a listener that plays a generator to each client,
// and a byte source that reads from such a listener.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include "semg/device.hpp"

namespace semg {

namespace detail {

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    ~Fd() { reset(); }
    Fd(Fd&& o) noexcept : fd_(o.release()) {}
    Fd& operator=(Fd&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = o.release();
        }
        return *this;
    }
    int get() const { return fd_; }
    int release() { return std::exchange(fd_, -1); }
    void reset() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }
    explicit operator bool() const { return fd_ >= 0; }

private:
    int fd_ = -1;
};

inline std::string errno_text(const std::string& what) { return what + ": " + std::strerror(errno); }

// Blocks until `fd` is readable or `timeout_ms` passes; false on timeout.
inline bool wait_readable(int fd, int timeout_ms) {
    pollfd p{fd, POLLIN, 0};
    const int r = ::poll(&p, 1, timeout_ms);
    return r > 0;
}

}  // namespace detail

// Reads frames from a device listener at host:port.
class TcpByteSource final : public ByteSource {
public:
    TcpByteSource(const std::string& host, int port, int connect_timeout_ms = 2000) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0)
            throw ArgumentError("cannot resolve " + host + ": " + gai_strerror(rc));
        std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
        std::string last = "no address";
        for (auto* a = res; a; a = a->ai_next) {
            detail::Fd s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
            if (!s) continue;
            if (connect_with_timeout(s.get(), a, connect_timeout_ms)) {
                fd_ = std::move(s);
                return;
            }
            last = std::strerror(errno);
        }
        throw ArgumentError("cannot connect to " + host + ":" + std::to_string(port) + ": " + last);
    }

    std::size_t read(std::span<std::uint8_t> out) override {
        if (eof_ || !fd_ || out.empty()) return 0;
        if (!detail::wait_readable(fd_.get(), 20)) return 0;
        const ssize_t n = ::recv(fd_.get(), out.data(), out.size(), 0);
        if (n > 0) return static_cast<std::size_t>(n);
        if (n < 0 && (errno == EAGAIN || errno == EINTR)) return 0;
        eof_ = true;
        return 0;
    }

    bool eof() const override { return eof_; }

    void close() override {
        eof_ = true;
        if (fd_) ::shutdown(fd_.get(), SHUT_RDWR);
    }

private:
    static bool connect_with_timeout(int fd, const addrinfo* a, int timeout_ms) {
        if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) return true;
        if (errno != EINPROGRESS && errno != EINTR) return false;
        pollfd p{fd, POLLOUT, 0};
        if (::poll(&p, 1, timeout_ms) <= 0) {
            errno = ETIMEDOUT;
            return false;
        }
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        errno = err;
        return err == 0;
    }

    detail::Fd fd_;
    std::atomic<bool> eof_{false};
};

using GeneratorFactory = std::function<std::shared_ptr<SampleGenerator>()>;

// Accepts clients on a port and streams a fresh generator to each one.
class DeviceServer {
public:
    DeviceServer(int port, GeneratorFactory factory, double rate_multiplier = 1.0,
                 const std::string& bind_host = "127.0.0.1")
        : factory_(std::move(factory)), rate_(rate_multiplier) {
        listen_ = detail::Fd(::socket(AF_INET, SOCK_STREAM, 0));
        if (!listen_) throw Error(detail::errno_text("socket"));
        int one = 1;
        ::setsockopt(listen_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1)
            throw ArgumentError("bad bind address " + bind_host);
        if (::bind(listen_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw Error(detail::errno_text("bind port " + std::to_string(port)));
        if (::listen(listen_.get(), 4) != 0) throw Error(detail::errno_text("listen"));
        socklen_t len = sizeof addr;
        ::getsockname(listen_.get(), reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        accept_thread_ = std::thread([this] { accept_loop(); });
    }
    ~DeviceServer() { stop(); }

    DeviceServer(const DeviceServer&) = delete;
    DeviceServer& operator=(const DeviceServer&) = delete;

    int port() const { return port_; }
    std::uint64_t clients_served() const { return served_; }

    void stop() {
        if (stop_.exchange(true)) return;
        if (accept_thread_.joinable()) accept_thread_.join();
        std::lock_guard lock(mu_);
        for (auto& t : clients_)
            if (t.joinable()) t.join();
        clients_.clear();
    }

private:
    void accept_loop() {
        while (!stop_) {
            if (!detail::wait_readable(listen_.get(), 50)) continue;
            detail::Fd c(::accept(listen_.get(), nullptr, nullptr));
            if (!c) continue;
            int one = 1;
            ::setsockopt(c.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            std::lock_guard lock(mu_);
            clients_.emplace_back([this, fd = c.release()] {
                try {
                    serve(detail::Fd(fd));
                } catch (const std::exception&) {
                }
            });
        }
    }

    void serve(detail::Fd client) {
        ++served_;
        DeviceStream stream(factory_(), rate_, OverflowPolicy::block);
        std::vector<std::uint8_t> buf(256 * protocol::kFrameSize);
        while (!stop_) {
            const std::size_t n = stream.read(buf);
            if (n == 0) {
                if (stream.eof()) break;
                continue;
            }
            std::size_t sent = 0;
            while (sent < n && !stop_) {
                const ssize_t k = ::send(client.get(), buf.data() + sent, n - sent, MSG_NOSIGNAL);
                if (k <= 0) return;
                sent += static_cast<std::size_t>(k);
            }
        }
        ::shutdown(client.get(), SHUT_WR);
    }

    GeneratorFactory factory_;
    double rate_;
    detail::Fd listen_;
    int port_ = 0;
    std::atomic<bool> stop_{false};
    std::atomic<std::uint64_t> served_{0};
    std::mutex mu_;
    std::list<std::thread> clients_;
    std::thread accept_thread_;
};

}  // namespace semg
