#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pplxguard/detector.hpp"
#include "pplxguard/external_scorer.hpp"

namespace pplxguard {

using json = nlohmann::ordered_json;

inline json verdict_to_json(const Verdict& v) {
    json j;
    j["decision"] = to_string(v.decision);
    j["reasons"] = json::array();
    for (const Reason& r : v.reasons)
        j["reasons"].push_back({{"rule", r.rule}, {"detail", r.detail}});
    j["evidence"] = json::array();
    for (const PerplexityResult& e : v.evidence)
        j["evidence"].push_back({{"scorer", e.scorer},
                                 {"ppl", e.ppl},
                                 {"token_count", e.token_count},
                                 {"sum_logprob", e.sum_logprob}});
    if (v.matched_bang_run)
        j["matched_bang_run"] = *v.matched_bang_run;
    else
        j["matched_bang_run"] = nullptr;
    if (v.localization)
        j["localization"] = {{"begin", v.localization->begin}, {"end", v.localization->end}};
    else
        j["localization"] = nullptr;
    return j;
}

struct ServiceOptions {
    std::string audit_log_path;          // empty: no file audit log
    std::size_t max_prompt_bytes = 1 << 20;
    std::size_t max_request_id_bytes = 128;
    std::uint64_t redact_salt = 0;       // 0: draw a random salt at startup
    int http_threads = 32;
};

// HTTP front end over the detector. POST /v1/screen takes
// {"prompt":..,"policy":..,"request_id":..} and returns the verdict plus
// latency; GET /healthz reports per-scorer reachability. Every request
// leaves one JSON audit line; prompts of blocked requests are replaced by a
// salted hash so the log never accumulates working attack strings.
class ScreenService {
public:
    using AuditSink = std::function<void(const std::string& line)>;

    ScreenService(Detector detector, ServiceOptions options = {})
        : options_(std::move(options)) {
        detectors_.emplace("default", std::move(detector));
        init();
    }

    ScreenService(std::map<std::string, Detector> profiles, ServiceOptions options = {})
        : options_(std::move(options)), detectors_(std::move(profiles)) {
        if (!detectors_.contains("default"))
            raise(Errc::ConfigError, "service needs a 'default' policy profile");
        init();
    }

    ~ScreenService() { stop(); }

    void set_audit_sink(AuditSink sink) { audit_sink_ = std::move(sink); }

    // Handles one screen request body; returns (http status, response body).
    // The HTTP route delegates here, which keeps the logic callable from
    // tests without a socket.
    std::pair<int, std::string> handle_screen(std::string_view body) {
        const auto started = std::chrono::steady_clock::now();

        json req = json::parse(body, nullptr, false);
        if (req.is_discarded() || !req.is_object())
            return {400, error_body("request body is not a JSON object")};
        if (!req.contains("prompt") || !req["prompt"].is_string())
            return {400, error_body("missing string field 'prompt'")};
        const std::string prompt = req["prompt"].get<std::string>();
        if (prompt.empty())
            return {400, error_body("prompt must be non-empty")};
        if (prompt.size() > options_.max_prompt_bytes)
            return {400, error_body("prompt exceeds " +
                                    std::to_string(options_.max_prompt_bytes) + " bytes")};
        std::string request_id;
        if (req.contains("request_id")) {
            if (!req["request_id"].is_string())
                return {400, error_body("request_id must be a string")};
            request_id = req["request_id"].get<std::string>();
            if (request_id.size() > options_.max_request_id_bytes)
                return {400, error_body("request_id exceeds " +
                                        std::to_string(options_.max_request_id_bytes) +
                                        " bytes")};
        }
        std::string policy = "default";
        if (req.contains("policy") && req["policy"].is_string())
            policy = req["policy"].get<std::string>();
        const auto it = detectors_.find(policy);
        if (it == detectors_.end())
            return {400, error_body("unknown policy '" + policy + "'")};

        const Verdict verdict = it->second.classify(prompt);
        const double latency_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                      started)
                .count();

        json resp = verdict_to_json(verdict);
        resp["latency_ms"] = latency_ms;
        resp["request_id"] = request_id;

        audit(prompt, request_id, verdict, latency_ms);
        return {status_for(verdict), resp.dump()};
    }

    std::string handle_healthz() const {
        json j;
        j["status"] = "ok";
        j["scorers"] = json::array();
        for (const auto& s : detectors_.at("default").scorers()) {
            bool reachable = true;
            if (const auto* ext = dynamic_cast<const ExternalScorer*>(s.get()))
                reachable = ext->reachable();
            j["scorers"].push_back({{"name", s->name()},
                                    {"kind", to_string(s->spec().kind)},
                                    {"reachable", reachable}});
        }
        return j.dump();
    }

    // Binds and serves on a background thread; returns the bound port.
    // port 0 picks a free one.
    int start(const std::string& host = "127.0.0.1", int port = 0) {
        int bound = port;
        if (port == 0) {
            bound = server_.bind_to_any_port(host);
            if (bound <= 0) raise(Errc::ConfigError, "cannot bind " + host);
        } else if (!server_.bind_to_port(host, port)) {
            raise(Errc::ConfigError, "cannot bind " + host + ":" + std::to_string(port));
        }
        serve_thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        port_ = bound;
        return bound;
    }

    void stop() {
        if (serve_thread_.joinable()) {
            server_.stop();
            serve_thread_.join();
        }
        port_ = 0;
    }

    int port() const { return port_; }

private:
    void init() {
        if (options_.redact_salt == 0) {
            std::random_device rd;
            options_.redact_salt =
                (static_cast<std::uint64_t>(rd()) << 32) ^ rd() ^ 0x9e3779b97f4a7c15ull;
        }
        if (!options_.audit_log_path.empty()) {
            audit_file_.open(options_.audit_log_path, std::ios::app);
            if (!audit_file_)
                raise(Errc::FileNotFound,
                      "cannot open audit log: " + options_.audit_log_path);
        }

        server_.new_task_queue = [n = options_.http_threads] {
            return new httplib::ThreadPool(static_cast<std::size_t>(n));
        };
        server_.set_payload_max_length(8 * 1024 * 1024);

        server_.Post("/v1/screen", [this](const httplib::Request& req, httplib::Response& res) {
            const auto [status, body] = handle_screen(req.body);
            res.status = status;
            res.set_content(body, "application/json");
        });
        server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(handle_healthz(), "application/json");
        });
    }

    int status_for(const Verdict& v) const {
        const bool no_evidence = v.evidence.empty();
        bool all_too_short = !v.reasons.empty();
        bool any_unavailable = false;
        for (const Reason& r : v.reasons) {
            if (r.rule != "too-short") all_too_short = false;
            if (r.rule == "scorer-unavailable") any_unavailable = true;
        }
        if (no_evidence && all_too_short) return 422;
        // 503 is the fail-closed contract: every scorer down and the
        // request blocked for it. Fail-open passes keep a 200.
        if (no_evidence && any_unavailable && v.decision == Decision::Block) return 503;
        return 200;
    }

    static std::string error_body(const std::string& message) {
        json j;
        j["error"] = message;
        return j.dump();
    }

    static std::string hex64(std::uint64_t x) {
        static const char* digits = "0123456789abcdef";
        std::string out(16, '0');
        for (int i = 15; i >= 0; --i) {
            out[i] = digits[x & 0xF];
            x >>= 4;
        }
        return out;
    }

    std::string salted_hash(std::string_view prompt) const {
        std::uint64_t h = 1469598103934665603ull ^ options_.redact_salt;
        for (unsigned char c : prompt) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return hex64(h);
    }

    void audit(const std::string& prompt, const std::string& request_id,
               const Verdict& v, double latency_ms) {
        json line;
        line["request_id"] = request_id;
        line["decision"] = to_string(v.decision);
        line["rules"] = json::array();
        for (const Reason& r : v.reasons) line["rules"].push_back(r.rule);
        json ppls = json::object();
        for (const PerplexityResult& e : v.evidence) ppls[e.scorer] = e.ppl;
        line["ppl"] = ppls;
        if (v.matched_bang_run) line["bang_run"] = *v.matched_bang_run;
        line["latency_ms"] = latency_ms;
        if (v.decision == Decision::Block)
            line["prompt_hash"] = salted_hash(prompt);
        else
            line["prompt"] = prompt;

        const std::string out = line.dump();
        std::scoped_lock lock(audit_mu_);
        if (audit_file_.is_open()) audit_file_ << out << "\n" << std::flush;
        if (audit_sink_) audit_sink_(out);
    }

    ServiceOptions options_;
    std::map<std::string, Detector> detectors_;
    httplib::Server server_;
    std::thread serve_thread_;
    int port_ = 0;
    std::ofstream audit_file_;
    std::mutex audit_mu_;
    AuditSink audit_sink_;
};

}  // namespace pplxguard
