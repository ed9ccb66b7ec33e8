// pplxguard command line: batch scanning, histogram rendering, one-shot
// screening, the HTTP service, and a stub wire-protocol scorer for demos.

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pplxguard/pplxguard.hpp"

namespace {

using namespace pplxguard;

struct CommonFlags {
    std::string config_path;
    std::optional<double> threshold;
    std::optional<std::string> fail_mode;
    std::vector<std::string> scorer_names;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "detector config file");
    cmd->add_option("--threshold", flags.threshold, "override block threshold");
    cmd->add_option("--fail-mode", flags.fail_mode, "fail-open | fail-closed");
    cmd->add_option("--scorer", flags.scorer_names,
                    "restrict to configured scorer(s) by name (repeatable)");
}

// Precedence: CLI flags > environment > config file > built-in defaults.
DetectorConfig resolve_config(const CommonFlags& flags) {
    DetectorConfig cfg;
    if (!flags.config_path.empty()) cfg = load_config_file(flags.config_path);
    apply_env_overrides(cfg);
    if (flags.threshold) {
        cfg.block_threshold = *flags.threshold;
        if (cfg.flag_high > cfg.block_threshold) cfg.flag_high = cfg.block_threshold;
        if (cfg.flag_low >= cfg.flag_high) cfg.flag_low = cfg.flag_high / 2.0;
    }
    if (flags.fail_mode) cfg.fail_mode = detail::parse_fail_mode(*flags.fail_mode);
    if (!flags.scorer_names.empty()) {
        std::vector<ScorerSpec> picked;
        for (const std::string& want : flags.scorer_names) {
            bool found = false;
            for (const ScorerSpec& s : cfg.scorers)
                if (s.name == want) {
                    picked.push_back(s);
                    found = true;
                }
            if (!found) raise(Errc::ConfigError, "no configured scorer named '" + want + "'");
        }
        cfg.scorers = std::move(picked);
    }
    if (cfg.scorers.empty())
        raise(Errc::ConfigError,
              "no scorers configured; pass --config with at least one scorer.<name> group");
    return cfg;
}

std::vector<double> parse_edges(const std::string& text) {
    std::vector<double> edges;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) edges.push_back(std::stod(part));
    return edges;
}

int run_scan(const CommonFlags& flags, const std::string& input,
             const std::string& output, const std::string& edges_text,
             const std::string& sweep_spec, const std::string& format) {
    const DetectorConfig cfg = resolve_config(flags);
    std::cerr << "config: " << describe_config(cfg) << "\n";
    const Detector detector = make_detector(cfg);

    const std::vector<PromptRecord> records = load_prompt_file(input);
    if (records.empty()) {
        std::cerr << "error: no rows in " << input << "\n";
        return 2;
    }
    const ScanResult result = scan_records(records, detector);

    if (!output.empty()) {
        std::ofstream out(output, std::ios::binary);
        if (!out) {
            std::cerr << "error: cannot write " << output << "\n";
            return 1;
        }
        write_scan_csv(out, result);
    } else if (format == "csv") {
        write_scan_csv(std::cout, result);
    }

    if (!sweep_spec.empty()) {
        double lo = 0, hi = 0, step = 0;
        if (std::sscanf(sweep_spec.c_str(), "%lf:%lf:%lf", &lo, &hi, &step) != 3) {
            std::cerr << "error: --threshold-sweep wants lo:hi:step\n";
            return 1;
        }
        write_sweep_csv(std::cout, threshold_sweep(result, lo, hi, step, cfg.fail_mode));
        return result.failed > 0 ? 2 : 0;
    }

    const std::vector<double> ppls = result.ppls();
    if (!ppls.empty()) {
        const std::vector<double> edges = parse_edges(edges_text);
        if (format == "json") {
            json j;
            const PerplexitySummary s = summarize(ppls);
            j["summary"] = {{"count", s.count}, {"mean", s.mean}, {"std", s.std_dev},
                            {"min", s.min},     {"q25", s.q25},   {"q50", s.q50},
                            {"q75", s.q75},     {"max", s.max}};
            j["bands"] = band_counts(ppls, edges);
            std::size_t blocked = 0, flagged = 0;
            for (const ScanRow& r : result.rows) {
                blocked += r.decision == Decision::Block;
                flagged += r.decision == Decision::Flag;
            }
            j["rows"] = result.rows.size();
            j["blocked"] = blocked;
            j["flagged"] = flagged;
            j["failed"] = result.failed;
            std::cout << j.dump(2) << "\n";
        } else {
            std::cout << "\nperplexity summary (" << ppls.size() << " scored rows)\n"
                      << render_summary(summarize(ppls)) << "\nband counts\n"
                      << render_histogram(ppls, edges);
        }
    }
    if (result.failed > 0) {
        std::cerr << result.failed << " row(s) failed to score\n";
        return 2;
    }
    return 0;
}

int run_histogram(const std::string& input, const std::string& edges_text,
                  const std::string& format) {
    const std::vector<double> ppls = read_ppl_column(input);
    const std::vector<double> edges = parse_edges(edges_text);
    if (format == "csv")
        write_histogram_csv(std::cout, ppls, edges);
    else
        std::cout << render_histogram(ppls, edges);
    return 0;
}

int run_screen(const CommonFlags& flags, std::string prompt, const std::string& format) {
    const DetectorConfig cfg = resolve_config(flags);
    std::cerr << "config: " << describe_config(cfg) << "\n";
    const Detector detector = make_detector(cfg);

    if (prompt.empty()) {
        std::ostringstream buf;
        buf << std::cin.rdbuf();
        prompt = buf.str();
        while (!prompt.empty() && (prompt.back() == '\n' || prompt.back() == '\r'))
            prompt.pop_back();
    }
    if (prompt.empty()) {
        std::cerr << "error: empty prompt\n";
        return 1;
    }

    const Verdict v = detector.classify(prompt);
    if (format == "json") {
        std::cout << verdict_to_json(v).dump(2) << "\n";
    } else {
        std::cout << "decision: " << to_string(v.decision) << "\n";
        for (const Reason& r : v.reasons)
            std::cout << "  reason: " << r.rule << " (" << r.detail << ")\n";
        for (const PerplexityResult& e : v.evidence)
            std::cout << "  ppl[" << e.scorer << "]: " << e.ppl << "\n";
        if (v.matched_bang_run)
            std::cout << "  bang_run: " << *v.matched_bang_run << "\n";
        if (v.localization)
            std::cout << "  hotspot tokens: [" << v.localization->begin << ", "
                      << v.localization->end << ")\n";
    }
    switch (v.decision) {
        case Decision::Pass:  return 0;
        case Decision::Flag:  return 10;
        case Decision::Block: return 20;
    }
    return 1;
}

int run_serve(const CommonFlags& flags, const std::string& listen,
              const std::string& audit_log) {
    const DetectorConfig cfg = resolve_config(flags);
    std::cerr << "config: " << describe_config(cfg) << "\n";

    std::string host = "127.0.0.1";
    int port = 8080;
    const std::size_t colon = listen.rfind(':');
    if (colon != std::string::npos) {
        host = listen.substr(0, colon);
        port = std::stoi(listen.substr(colon + 1));
    }

    ServiceOptions opts;
    opts.audit_log_path = audit_log;
    ScreenService service(make_detector(cfg), opts);
    const int bound = service.start(host, port);
    std::cerr << "listening on " << host << ":" << bound << " (POST /v1/screen)\n";

    // Serve until interrupted.
    static ScreenService* active = &service;
    std::signal(SIGINT, [](int) { active->stop(); });
    std::signal(SIGTERM, [](int) { active->stop(); });
    for (;;) {
        std::this_thread::sleep_for(std::chrono::milliseconds(200));
        if (service.port() == 0) break;
    }
    return 0;
}

int run_stub(const std::string& listen, double logprob, const std::string& mode_name) {
    StubScorerServer::Mode mode = StubScorerServer::Mode::Constant;
    if (mode_name == "stall") mode = StubScorerServer::Mode::Stall;
    else if (mode_name == "error") mode = StubScorerServer::Mode::RemoteError;
    else if (mode_name != "const")
        throw CLI::ValidationError("--mode must be const, stall, or error");

    int port = 7070;
    const std::size_t colon = listen.rfind(':');
    if (colon != std::string::npos) port = std::stoi(listen.substr(colon + 1));

    StubScorerServer server(logprob, mode);
    server.start(port);
    std::cerr << "stub scorer on " << server.endpoint() << " (logprob " << logprob << ")\n";
    for (;;) std::this_thread::sleep_for(std::chrono::seconds(1));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"perplexity-based screening for adversarial suffix prompts"};
    app.require_subcommand(1);

    CommonFlags flags;

    // scan
    auto* scan = app.add_subcommand("scan", "score a prompt file and print summary stats");
    std::string scan_input, scan_output, scan_edges = "18,200,400", sweep_spec;
    std::string scan_format = "text";
    scan->add_option("--input", scan_input, "prompt file (.csv or .jsonl)")->required();
    scan->add_option("--output", scan_output, "write per-prompt verdict CSV here");
    scan->add_option("--edges", scan_edges, "histogram band edges (comma separated)");
    scan->add_option("--threshold-sweep", sweep_spec, "lo:hi:step blocked-count sweep");
    scan->add_option("--format", scan_format, "text | csv | json")
        ->check(CLI::IsMember({"text", "csv", "json"}));
    add_common_flags(scan, flags);

    // histogram
    auto* hist = app.add_subcommand("histogram", "render band counts from a perplexity CSV");
    std::string hist_input, hist_edges = "18,200,400", hist_format = "text";
    hist->add_option("--input", hist_input, "perplexity CSV")->required();
    hist->add_option("--edges", hist_edges, "band edges (comma separated)");
    hist->add_option("--format", hist_format, "text | csv")
        ->check(CLI::IsMember({"text", "csv"}));

    // screen
    auto* screen = app.add_subcommand("screen", "classify one prompt (arg or stdin)");
    std::string screen_prompt, screen_format = "text";
    screen->add_option("--prompt", screen_prompt, "prompt text; reads stdin if omitted");
    screen->add_option("--format", screen_format, "text | json")
        ->check(CLI::IsMember({"text", "json"}));
    add_common_flags(screen, flags);

    // serve
    auto* serve = app.add_subcommand("serve", "run the HTTP screening service");
    std::string listen = "127.0.0.1:8080", audit_log;
    serve->add_option("--listen", listen, "host:port (default 127.0.0.1:8080)");
    serve->add_option("--audit-log", audit_log, "JSON-lines audit log path");
    add_common_flags(serve, flags);

    // stub-scorer
    auto* stub = app.add_subcommand("stub-scorer", "serve the external-scorer wire protocol");
    std::string stub_listen = "127.0.0.1:7070", stub_mode = "const";
    double stub_logprob = -0.6931471805599453;
    stub->add_option("--listen", stub_listen, "host:port");
    stub->add_option("--logprob", stub_logprob, "constant logprob per token");
    stub->add_option("--mode", stub_mode, "const | stall | error");

    auto* version = app.add_subcommand("version", "print version");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*scan) return run_scan(flags, scan_input, scan_output, scan_edges, sweep_spec, scan_format);
        if (*hist) return run_histogram(hist_input, hist_edges, hist_format);
        if (*screen) return run_screen(flags, screen_prompt, screen_format);
        if (*serve) return run_serve(flags, listen, audit_log);
        if (*stub) return run_stub(stub_listen, stub_logprob, stub_mode);
        if (*version) {
            std::cout << "pplxguard " << pplxguard::kVersion << "\n";
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
