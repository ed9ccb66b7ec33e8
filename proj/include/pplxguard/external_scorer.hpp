#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <mutex>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pplxguard/errors.hpp"
#include "pplxguard/scorer.hpp"

namespace pplxguard {

inline constexpr int kWireProtocolVersion = 1;

namespace wire {

// Owning fd wrapper.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
    Socket& operator=(Socket&& o) noexcept {
        if (this != &o) {
            close();
            fd_ = o.fd_;
            o.fd_ = -1;
        }
        return *this;
    }
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;
    ~Socket() { close(); }

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    void close() {
        if (fd_ >= 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }

private:
    int fd_ = -1;
};

using Clock = std::chrono::steady_clock;

inline int remaining_ms(Clock::time_point deadline) {
    const auto left =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    return left.count() > 0 ? static_cast<int>(left.count()) : 0;
}

inline void wait_ready(int fd, short events, Clock::time_point deadline,
                       const std::string& what) {
    pollfd pfd{fd, events, 0};
    const int ms = remaining_ms(deadline);
    if (ms == 0) raise(Errc::Timeout, what + " timed out");
    const int rc = ::poll(&pfd, 1, ms);
    if (rc == 0) raise(Errc::Timeout, what + " timed out");
    if (rc < 0) raise(Errc::ExternalScorerUnavailable, what + " poll failed: " + std::strerror(errno));
}

// Connects to "host:port" (TCP) or "unix:/path" (local pipe) within the
// deadline. The socket is left in non-blocking mode.
inline Socket connect_endpoint(const std::string& endpoint, Clock::time_point deadline) {
    Socket sock;
    if (endpoint.rfind("unix:", 0) == 0) {
        const std::string path = endpoint.substr(5);
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        if (path.size() >= sizeof(addr.sun_path))
            raise(Errc::ConfigError, "unix socket path too long: " + path);
        std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);

        sock = Socket(::socket(AF_UNIX, SOCK_STREAM | SOCK_NONBLOCK, 0));
        if (!sock.valid())
            raise(Errc::ExternalScorerUnavailable, "socket(): " + std::string(std::strerror(errno)));
        if (::connect(sock.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 &&
            errno != EINPROGRESS)
            raise(Errc::ExternalScorerUnavailable,
                  "connect to " + endpoint + ": " + std::strerror(errno));
    } else {
        const std::size_t colon = endpoint.rfind(':');
        if (colon == std::string::npos)
            raise(Errc::ConfigError, "endpoint must be host:port or unix:/path: " + endpoint);
        const std::string host = endpoint.substr(0, colon);
        const std::string port = endpoint.substr(colon + 1);

        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
            raise(Errc::ExternalScorerUnavailable, "cannot resolve " + endpoint);

        sock = Socket(::socket(res->ai_family, res->ai_socktype | SOCK_NONBLOCK,
                               res->ai_protocol));
        if (!sock.valid()) {
            ::freeaddrinfo(res);
            raise(Errc::ExternalScorerUnavailable, "socket(): " + std::string(std::strerror(errno)));
        }
        const int rc = ::connect(sock.fd(), res->ai_addr, res->ai_addrlen);
        const int err = errno;
        ::freeaddrinfo(res);
        if (rc < 0 && err != EINPROGRESS)
            raise(Errc::ExternalScorerUnavailable,
                  "connect to " + endpoint + ": " + std::strerror(err));
    }

    wait_ready(sock.fd(), POLLOUT, deadline, "connect to " + endpoint);
    int soerr = 0;
    socklen_t len = sizeof(soerr);
    if (::getsockopt(sock.fd(), SOL_SOCKET, SO_ERROR, &soerr, &len) < 0 || soerr != 0)
        raise(Errc::ExternalScorerUnavailable,
              "connect to " + endpoint + ": " + std::strerror(soerr ? soerr : errno));
    return sock;
}

inline void send_all(Socket& sock, std::string_view data, Clock::time_point deadline) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(sock.fd(), data.data() + sent, data.size() - sent,
                                 MSG_NOSIGNAL);
        if (n > 0) {
            sent += static_cast<std::size_t>(n);
        } else if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
            wait_ready(sock.fd(), POLLOUT, deadline, "send");
        } else {
            raise(Errc::ExternalScorerUnavailable,
                  "send failed: " + std::string(std::strerror(errno)));
        }
    }
}

// One newline-terminated frame, newline stripped.
inline std::string recv_line(Socket& sock, Clock::time_point deadline) {
    std::string buf;
    char chunk[4096];
    for (;;) {
        const ssize_t n = ::recv(sock.fd(), chunk, sizeof(chunk), 0);
        if (n > 0) {
            buf.append(chunk, static_cast<std::size_t>(n));
            const std::size_t nl = buf.find('\n');
            if (nl != std::string::npos) return buf.substr(0, nl);
            if (buf.size() > (1u << 22))
                raise(Errc::ExternalScorerProtocol, "reply exceeds 4 MiB without newline");
        } else if (n == 0) {
            raise(Errc::ExternalScorerUnavailable, "peer closed connection mid-reply");
        } else if (errno == EAGAIN || errno == EWOULDBLOCK) {
            wait_ready(sock.fd(), POLLIN, deadline, "recv");
        } else {
            raise(Errc::ExternalScorerUnavailable,
                  "recv failed: " + std::string(std::strerror(errno)));
        }
    }
}

}  // namespace wire

// Adapter for an out-of-process causal-LM scorer speaking newline-delimited
// JSON over a byte stream:
//
//   -> {"v":1,"id":"r7","tokens":[17,4,99]}
//   <- {"v":1,"id":"r7","logprobs":[-2.3,-0.7]}     (t-1 entries, each <= 0)
//   <- {"v":1,"id":"r7","error":"..."}              (remote-side failure)
//
// Each request opens its own connection; there is no session state. A
// version other than 1 in the reply fails closed as scorer-unavailable.
// Concurrency is capped by spec.max_in_flight; requests that cannot get a
// slot within the timeout fail as unavailable rather than queueing forever.
class ExternalScorer final : public Scorer {
public:
    using TranscriptSink = std::function<void(char direction, std::string_view line)>;

    explicit ExternalScorer(ScorerSpec spec, TranscriptSink transcript = nullptr)
        : spec_(std::move(spec)), transcript_(std::move(transcript)),
          slots_(std::clamp(spec_.max_in_flight, 1, kMaxSlots)) {
        spec_.kind = ScorerKind::External;
        spec_.validate();
        if (spec_.max_in_flight > kMaxSlots)
            raise(Errc::ConfigError, "max_in_flight cannot exceed 1024");
    }

    const ScorerSpec& spec() const override { return spec_; }

    // Quick reachability probe for health reporting.
    bool reachable(double timeout_s = 0.5) const {
        try {
            const auto deadline =
                wire::Clock::now() + std::chrono::milliseconds(
                                         static_cast<long>(timeout_s * 1000.0));
            wire::Socket s = wire::connect_endpoint(spec_.endpoint, deadline);
            return s.valid();
        } catch (const Error&) {
            return false;
        }
    }

protected:
    std::vector<double> score_logprobs(const TokenSequence& seq) const override {
        const auto deadline =
            wire::Clock::now() +
            std::chrono::milliseconds(static_cast<long>(spec_.timeout_s * 1000.0));

        if (!slots_.try_acquire_for(deadline - wire::Clock::now()))
            raise(Errc::ExternalScorerUnavailable,
                  "scorer '" + spec_.name + "' is saturated (" +
                      std::to_string(spec_.max_in_flight) + " requests in flight)");
        struct SlotGuard {
            std::counting_semaphore<kMaxSlots>& sem;
            ~SlotGuard() { sem.release(); }
        } guard{slots_};

        const std::string id = "r" + std::to_string(next_id_.fetch_add(1));
        nlohmann::ordered_json req;
        req["v"] = kWireProtocolVersion;
        req["id"] = id;
        req["tokens"] = seq.tokens;
        const std::string request_line = req.dump();

        wire::Socket sock = wire::connect_endpoint(spec_.endpoint, deadline);
        log_transcript('>', request_line);
        wire::send_all(sock, request_line + "\n", deadline);
        const std::string reply_line = wire::recv_line(sock, deadline);
        log_transcript('<', reply_line);

        return parse_reply(reply_line, id, seq.size());
    }

private:
    static constexpr int kMaxSlots = 1024;

    std::vector<double> parse_reply(const std::string& line, const std::string& id,
                                    std::size_t token_count) const {
        const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            raise(Errc::ExternalScorerProtocol, "reply is not a JSON object: " + line);
        if (!j.contains("v") || !j["v"].is_number_integer() ||
            j["v"].get<int>() != kWireProtocolVersion)
            raise(Errc::ExternalScorerUnavailable,
                  "protocol version mismatch from '" + spec_.name + "'");
        if (!j.contains("id") || j["id"] != id)
            raise(Errc::ExternalScorerProtocol, "reply id does not match request id");
        if (j.contains("error"))
            raise(Errc::ExternalScorerUnavailable,
                  "remote error from '" + spec_.name + "': " +
                      j["error"].get<std::string>());
        if (!j.contains("logprobs") || !j["logprobs"].is_array())
            raise(Errc::ExternalScorerProtocol, "reply carries no logprobs array");

        const auto& arr = j["logprobs"];
        if (arr.size() != token_count - kScoredFrom)
            raise(Errc::ExternalScorerProtocol,
                  "expected " + std::to_string(token_count - kScoredFrom) +
                      " logprobs, got " + std::to_string(arr.size()));

        std::vector<double> out;
        out.reserve(arr.size());
        for (const auto& x : arr) {
            if (!x.is_number())
                raise(Errc::ExternalScorerProtocol, "non-numeric logprob in reply");
            const double lp = x.get<double>();
            if (!std::isfinite(lp))
                raise(Errc::ExternalScorerProtocol, "non-finite logprob in reply");
            if (lp > 0.0)
                raise(Errc::ExternalScorerProtocol,
                      "positive logprob in reply (p > 1 is impossible)");
            out.push_back(floor_logprob(lp));
        }
        return out;
    }

    void log_transcript(char direction, std::string_view line) const {
        if (!transcript_) return;
        std::scoped_lock lock(transcript_mu_);
        transcript_(direction, line);
    }

    ScorerSpec spec_;
    TranscriptSink transcript_;
    mutable std::counting_semaphore<kMaxSlots> slots_;
    mutable std::atomic<std::uint64_t> next_id_{1};
    mutable std::mutex transcript_mu_;
};

}  // namespace pplxguard
