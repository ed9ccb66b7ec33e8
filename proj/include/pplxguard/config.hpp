#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pplxguard/detector.hpp"
#include "pplxguard/errors.hpp"
#include "pplxguard/external_scorer.hpp"
#include "pplxguard/ngram.hpp"
#include "pplxguard/scorer.hpp"

namespace pplxguard {

// Config file format: one "key = value" per line, '#' comments, blank lines
// ignored. Detector keys are flat; scorers are declared as
// scorer.<name>.<field> groups and keep their file order.
//
//   block_threshold  = 1000
//   flag_low         = 200
//   flag_high        = 1000
//   bang_min_repeats = 4
//   ensemble_rule    = max-ppl        # any-block | majority | max-ppl
//   fail_mode        = fail-closed    # fail-open | fail-closed
//   window           = 16
//   max_tokens       = 8192
//
//   scorer.ref.kind       = ngram
//   scorer.ref.order      = 3
//   scorer.ref.vocab_size = 65536
//   scorer.ref.add_k      = 1
//   scorer.ref.scheme     = ref-word-v1
//   scorer.ref.corpus     = corpora/english.txt
//
//   scorer.gpt.kind     = external
//   scorer.gpt.endpoint = 127.0.0.1:7070
//   scorer.gpt.timeout_s = 5

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

inline double to_double(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        raise(Errc::ConfigError, "bad numeric value for " + key + ": '" + v + "'");
    }
}

inline long to_long(const std::string& v, const std::string& key) {
    try {
        std::size_t used = 0;
        const long x = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        raise(Errc::ConfigError, "bad integer value for " + key + ": '" + v + "'");
    }
}

inline EnsembleRule parse_ensemble_rule(const std::string& v) {
    if (v == "any-block") return EnsembleRule::AnyBlock;
    if (v == "majority") return EnsembleRule::Majority;
    if (v == "max-ppl") return EnsembleRule::MaxPpl;
    raise(Errc::ConfigError, "unknown ensemble_rule '" + v + "'");
}

inline FailMode parse_fail_mode(const std::string& v) {
    if (v == "fail-open") return FailMode::FailOpen;
    if (v == "fail-closed") return FailMode::FailClosed;
    raise(Errc::ConfigError, "unknown fail_mode '" + v + "'");
}

inline ScorerKind parse_scorer_kind(const std::string& v) {
    if (v == "uniform") return ScorerKind::Uniform;
    if (v == "ngram") return ScorerKind::Ngram;
    if (v == "external") return ScorerKind::External;
    raise(Errc::ConfigError, "unknown scorer kind '" + v + "'");
}

}  // namespace detail

inline DetectorConfig parse_config(std::istream& in) {
    DetectorConfig cfg;
    std::vector<std::string> scorer_order;
    std::map<std::string, ScorerSpec> scorer_by_name;

    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        std::string line = raw;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;

        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            raise(Errc::ConfigError,
                  "line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            raise(Errc::ConfigError, "line " + std::to_string(lineno) + ": empty key or value");

        if (key.rfind("scorer.", 0) == 0) {
            const std::size_t dot = key.find('.', 7);
            if (dot == std::string::npos || dot + 1 >= key.size())
                raise(Errc::ConfigError, "bad scorer key '" + key + "'");
            const std::string name = key.substr(7, dot - 7);
            const std::string field = key.substr(dot + 1);
            auto it = scorer_by_name.find(name);
            if (it == scorer_by_name.end()) {
                ScorerSpec spec;
                spec.name = name;
                it = scorer_by_name.emplace(name, std::move(spec)).first;
                scorer_order.push_back(name);
            }
            ScorerSpec& spec = it->second;
            if (field == "kind") {
                spec.kind = detail::parse_scorer_kind(value);
                if (spec.kind == ScorerKind::External && spec.scheme_id == kRefWordScheme)
                    spec.scheme_id = "ext:" + name;
            } else if (field == "vocab_size") {
                spec.vocab_size = static_cast<std::uint32_t>(detail::to_long(value, key));
            } else if (field == "order") {
                spec.order = static_cast<std::uint32_t>(detail::to_long(value, key));
            } else if (field == "add_k") {
                spec.add_k = detail::to_double(value, key);
            } else if (field == "scheme") {
                spec.scheme_id = value;
            } else if (field == "corpus") {
                spec.corpus_path = value;
            } else if (field == "endpoint") {
                spec.endpoint = value;
            } else if (field == "timeout_s") {
                spec.timeout_s = detail::to_double(value, key);
            } else if (field == "max_in_flight") {
                spec.max_in_flight = static_cast<int>(detail::to_long(value, key));
            } else {
                raise(Errc::ConfigError, "unknown scorer field '" + field + "'");
            }
            continue;
        }

        if (key == "block_threshold") cfg.block_threshold = detail::to_double(value, key);
        else if (key == "flag_low") cfg.flag_low = detail::to_double(value, key);
        else if (key == "flag_high") cfg.flag_high = detail::to_double(value, key);
        else if (key == "bang_min_repeats") cfg.bang_min_repeats = static_cast<int>(detail::to_long(value, key));
        else if (key == "ensemble_rule") cfg.ensemble_rule = detail::parse_ensemble_rule(value);
        else if (key == "fail_mode") cfg.fail_mode = detail::parse_fail_mode(value);
        else if (key == "window") cfg.window = static_cast<std::size_t>(detail::to_long(value, key));
        else if (key == "max_tokens") cfg.max_tokens = static_cast<std::size_t>(detail::to_long(value, key));
        else raise(Errc::ConfigError, "unknown config key '" + key + "'");
    }

    for (const std::string& name : scorer_order)
        cfg.scorers.push_back(scorer_by_name.at(name));
    return cfg;
}

inline DetectorConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(Errc::FileNotFound, "cannot open config file: " + path);
    return parse_config(in);
}

// Environment overrides sit between config file and CLI flags:
// PPLXGUARD_THRESHOLD replaces block_threshold (and lifts flag_high to keep
// the band valid when the new threshold undercuts it); PPLXGUARD_FAIL_MODE
// replaces fail_mode.
inline void apply_env_overrides(DetectorConfig& cfg,
                                const char* (*get_env)(const char*) = nullptr) {
    const auto getter = [&](const char* name) -> const char* {
        return get_env ? get_env(name) : std::getenv(name);
    };
    if (const char* v = getter("PPLXGUARD_THRESHOLD")) {
        cfg.block_threshold = detail::to_double(v, "PPLXGUARD_THRESHOLD");
        if (cfg.flag_high > cfg.block_threshold) cfg.flag_high = cfg.block_threshold;
        if (cfg.flag_low >= cfg.flag_high) cfg.flag_low = cfg.flag_high / 2.0;
    }
    if (const char* v = getter("PPLXGUARD_FAIL_MODE"))
        cfg.fail_mode = detail::parse_fail_mode(v);
}

// Effective-config echo, printed at service/CLI startup.
inline std::string describe_config(const DetectorConfig& cfg) {
    std::ostringstream os;
    os << "block_threshold=" << cfg.block_threshold
       << " flag_band=[" << cfg.flag_low << "," << cfg.flag_high << ")"
       << " bang_min_repeats=" << cfg.bang_min_repeats
       << " ensemble_rule=" << to_string(cfg.ensemble_rule)
       << " fail_mode=" << to_string(cfg.fail_mode)
       << " window=" << cfg.window
       << " max_tokens=" << cfg.max_tokens
       << " scorers=[";
    for (std::size_t i = 0; i < cfg.scorers.size(); ++i) {
        const ScorerSpec& s = cfg.scorers[i];
        if (i) os << ",";
        os << s.name << ":" << to_string(s.kind);
    }
    os << "]";
    return os.str();
}

// Instantiates one scorer from its spec. Ngram scorers train from
// spec.corpus_path at build time; models are immutable afterwards.
inline std::shared_ptr<const Scorer> make_scorer(
    const ScorerSpec& spec, ExternalScorer::TranscriptSink transcript = nullptr) {
    spec.validate();
    switch (spec.kind) {
        case ScorerKind::Uniform:
            return std::make_shared<UniformScorer>(spec);
        case ScorerKind::Ngram: {
            if (spec.corpus_path.empty())
                raise(Errc::UntrainedModel,
                      "ngram scorer '" + spec.name + "' has no corpus to train from");
            return std::make_shared<NgramScorer>(train_ngram_file(spec.corpus_path, spec));
        }
        case ScorerKind::External:
            return std::make_shared<ExternalScorer>(spec, std::move(transcript));
    }
    raise(Errc::ConfigError, "unreachable scorer kind");
}

inline Detector make_detector(const DetectorConfig& cfg,
                              ExternalScorer::TranscriptSink transcript = nullptr) {
    cfg.validate();
    std::vector<std::shared_ptr<const Scorer>> scorers;
    scorers.reserve(cfg.scorers.size());
    for (const ScorerSpec& spec : cfg.scorers) scorers.push_back(make_scorer(spec, transcript));
    return Detector(cfg, std::move(scorers));
}

}  // namespace pplxguard
