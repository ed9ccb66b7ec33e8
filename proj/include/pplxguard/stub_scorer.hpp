#pragma once

#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pplxguard/errors.hpp"
#include "pplxguard/external_scorer.hpp"

namespace pplxguard {

// Minimal wire-protocol server: answers every request with a constant
// logprob per scored position. The misbehaving modes exist to exercise the
// adapter's failure paths (and to let operators rehearse fail-closed
// handling end to end).
class StubScorerServer {
public:
    enum class Mode {
        Constant,        // well-formed reply, constant logprob
        Stall,           // accept, read, never reply
        RemoteError,     // {"v":1,"id":..,"error":"..."}
        ShortReply,      // one logprob too few
        PositiveLogprob, // first logprob is +0.5
        WrongVersion,    // v:2
    };

    explicit StubScorerServer(double logprob = std::log(0.5), Mode mode = Mode::Constant)
        : logprob_(logprob), mode_(mode) {}

    ~StubScorerServer() { stop(); }

    // Binds 127.0.0.1:port (0 picks a free port) and serves until stop().
    void start(int port = 0) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) raise(Errc::ConfigError, "stub: socket() failed");
        const int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
            raise(Errc::ConfigError, "stub: bind() failed: " + std::string(std::strerror(errno)));
        if (::listen(listen_fd_, 64) < 0)
            raise(Errc::ConfigError, "stub: listen() failed");

        socklen_t len = sizeof(addr);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);

        running_ = true;
        accept_thread_ = std::thread([this] { accept_loop(); });
    }

    void stop() {
        if (!running_.exchange(false)) return;
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
        if (accept_thread_.joinable()) accept_thread_.join();
        for (std::thread& t : workers_)
            if (t.joinable()) t.join();
        workers_.clear();
    }

    int port() const { return port_; }
    std::string endpoint() const { return "127.0.0.1:" + std::to_string(port_); }
    std::uint64_t requests_served() const { return served_.load(); }

private:
    void accept_loop() {
        while (running_) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) {
                if (!running_) break;
                continue;
            }
            workers_.emplace_back([this, fd] { serve_connection(fd); });
        }
    }

    void serve_connection(int fd) {
        timeval tv{0, 200 * 1000};  // poll running_ while idle
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
        std::string buf;
        char chunk[4096];
        while (running_) {
            const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
            if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) continue;
            if (n <= 0) break;
            buf.append(chunk, static_cast<std::size_t>(n));

            std::size_t nl;
            while ((nl = buf.find('\n')) != std::string::npos) {
                const std::string line = buf.substr(0, nl);
                buf.erase(0, nl + 1);
                if (!handle_request(fd, line)) {
                    ::close(fd);
                    return;
                }
            }
        }
        ::close(fd);
    }

    bool handle_request(int fd, const std::string& line) {
        const nlohmann::json req = nlohmann::json::parse(line, nullptr, false);
        if (req.is_discarded()) return false;
        const std::string id = req.value("id", "");
        const std::size_t tokens = req.contains("tokens") ? req["tokens"].size() : 0;
        served_.fetch_add(1);

        if (mode_ == Mode::Stall) {
            // Hold the connection open until shutdown.
            while (running_) std::this_thread::sleep_for(std::chrono::milliseconds(10));
            return false;
        }

        nlohmann::ordered_json reply;
        reply["v"] = mode_ == Mode::WrongVersion ? 2 : kWireProtocolVersion;
        reply["id"] = id;
        if (mode_ == Mode::RemoteError) {
            reply["error"] = "stub declines to score";
        } else {
            std::size_t count = tokens > 0 ? tokens - 1 : 0;
            if (mode_ == Mode::ShortReply && count > 0) --count;
            std::vector<double> lps(count, logprob_);
            if (mode_ == Mode::PositiveLogprob && !lps.empty()) lps[0] = 0.5;
            reply["logprobs"] = lps;
        }
        const std::string out = reply.dump() + "\n";
        return ::send(fd, out.data(), out.size(), MSG_NOSIGNAL) ==
               static_cast<ssize_t>(out.size());
    }

    double logprob_;
    Mode mode_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> running_{false};
    std::atomic<std::uint64_t> served_{0};
    std::thread accept_thread_;
    std::vector<std::thread> workers_;
};

}  // namespace pplxguard
