#pragma once

#include <algorithm>
#include <cstdio>
#include <future>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pplxguard/errors.hpp"
#include "pplxguard/perplexity.hpp"
#include "pplxguard/scorer.hpp"
#include "pplxguard/tokenizer.hpp"

namespace pplxguard {

enum class Decision { Pass, Flag, Block };
enum class EnsembleRule { AnyBlock, Majority, MaxPpl };
enum class FailMode { FailOpen, FailClosed };

inline const char* to_string(Decision d) {
    switch (d) {
        case Decision::Pass:  return "pass";
        case Decision::Flag:  return "flag";
        case Decision::Block: return "block";
    }
    return "?";
}

inline const char* to_string(EnsembleRule r) {
    switch (r) {
        case EnsembleRule::AnyBlock: return "any-block";
        case EnsembleRule::Majority: return "majority";
        case EnsembleRule::MaxPpl:   return "max-ppl";
    }
    return "?";
}

inline const char* to_string(FailMode m) {
    return m == FailMode::FailOpen ? "fail-open" : "fail-closed";
}

struct DetectorConfig {
    double block_threshold = 1000.0;
    double flag_low = 200.0;
    double flag_high = 1000.0;
    int bang_min_repeats = 4;
    EnsembleRule ensemble_rule = EnsembleRule::MaxPpl;
    FailMode fail_mode = FailMode::FailClosed;
    std::size_t window = 16;        // localization window, tokens
    std::size_t max_tokens = 8192;  // tokenizer cap
    std::vector<ScorerSpec> scorers;

    void validate() const {
        if (!(block_threshold > 0.0))
            raise(Errc::ConfigError, "block_threshold must be positive");
        if (!(0.0 < flag_low && flag_low < flag_high && flag_high <= block_threshold))
            raise(Errc::ConfigError, "flag band must satisfy 0 < low < high <= block_threshold");
        if (bang_min_repeats < 1)
            raise(Errc::ConfigError, "bang_min_repeats must be positive");
        if (scorers.empty())
            raise(Errc::ConfigError, "at least one scorer must be configured");
        for (const ScorerSpec& s : scorers) s.validate();
    }
};

// Rule ids are stable strings: "bang-exact", "ppl-threshold", "ppl-band",
// "scorer-unavailable", "too-short", "length-cap".
struct Reason {
    std::string rule;
    std::string detail;
};

struct Verdict {
    Decision decision = Decision::Pass;
    std::vector<Reason> reasons;
    std::vector<PerplexityResult> evidence;
    std::optional<int> matched_bang_run;
    std::optional<WindowSpan> localization;
};

// Length of the maximal trailing run of '!' tokens (each '!' optionally
// followed by whitespace), if it reaches min_repeats. Interior runs never
// fire; the rule targets the suffix position only.
inline std::optional<int> bang_pattern_match(std::string_view text, int min_repeats) {
    const auto is_space = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
    };
    std::size_t i = text.size();
    while (i > 0 && is_space(text[i - 1])) --i;

    int run = 0;
    while (i > 0) {
        if (text[i - 1] == '!') {
            ++run;
            --i;
            while (i > 0 && is_space(text[i - 1])) --i;
        } else {
            break;
        }
    }
    if (run >= min_repeats) return run;
    return std::nullopt;
}

// Collapses per-scorer perplexities to the scalar compared against the
// thresholds. any-block and max-ppl both reduce to the maximum (a prompt
// blocks if any scorer finds it irregular enough); majority takes the
// median so a single outlier scorer cannot dominate either way.
inline double ensemble_perplexity(const std::vector<PerplexityResult>& results,
                                  EnsembleRule rule) {
    if (results.empty())
        throw std::invalid_argument("ensemble_perplexity: results must be non-empty");

    std::vector<double> ppls;
    ppls.reserve(results.size());
    for (const PerplexityResult& r : results) ppls.push_back(r.ppl);

    switch (rule) {
        case EnsembleRule::AnyBlock:
        case EnsembleRule::MaxPpl:
            return *std::max_element(ppls.begin(), ppls.end());
        case EnsembleRule::Majority: {
            std::sort(ppls.begin(), ppls.end());
            const std::size_t n = ppls.size();
            return n % 2 == 1 ? ppls[n / 2] : 0.5 * (ppls[n / 2 - 1] + ppls[n / 2]);
        }
    }
    return ppls.back();
}

class Detector {
public:
    Detector(DetectorConfig config, std::vector<std::shared_ptr<const Scorer>> scorers)
        : config_(std::move(config)), scorers_(std::move(scorers)) {
        if (scorers_.empty())
            raise(Errc::ConfigError, "detector needs at least one scorer instance");
        if (config_.scorers.empty())
            for (const auto& s : scorers_) config_.scorers.push_back(s->spec());
        config_.validate();
    }

    const DetectorConfig& config() const { return config_; }
    const std::vector<std::shared_ptr<const Scorer>>& scorers() const { return scorers_; }

    Verdict classify(std::string_view prompt) const {
        const std::optional<int> bang =
            bang_pattern_match(prompt, config_.bang_min_repeats);

        std::vector<ScoreOutcome> outcomes = score_all(prompt);

        Verdict v;
        v.matched_bang_run = bang;
        for (const ScoreOutcome& o : outcomes)
            if (o.ok) v.evidence.push_back(o.result);

        // Rule 1: exact match on a trailing "!" run blocks outright,
        // regardless of how low the scorers rate its perplexity.
        if (bang) {
            v.decision = Decision::Block;
            v.reasons.push_back({"bang-exact",
                                 "trailing run of " + std::to_string(*bang) + " '!' tokens"});
            append_failure_notes(v, outcomes);
            attach_localization(v, outcomes);
            return v;
        }

        // Rule 2: inputs over the token cap are themselves a signal; no
        // perplexity is computable for them.
        for (const ScoreOutcome& o : outcomes) {
            if (!o.ok && o.error_code == Errc::InputTooLong) {
                v.decision = Decision::Block;
                v.reasons.push_back({"length-cap", o.error_detail});
                append_failure_notes(v, outcomes, Errc::InputTooLong);
                return v;
            }
        }

        // Scorer failures resolve per fail mode before any threshold is
        // consulted: a crashed or unreachable scorer must not let a prompt
        // slip through under fail-closed.
        const bool any_failed =
            std::any_of(outcomes.begin(), outcomes.end(),
                        [](const ScoreOutcome& o) { return !o.ok; });
        if (any_failed) {
            const bool too_short = std::all_of(
                outcomes.begin(), outcomes.end(), [](const ScoreOutcome& o) {
                    return !o.ok && o.error_code == Errc::TooShort;
                });
            const char* rule = too_short ? "too-short" : "scorer-unavailable";
            if (config_.fail_mode == FailMode::FailClosed) {
                v.decision = Decision::Block;
                for (const ScoreOutcome& o : outcomes)
                    if (!o.ok) v.reasons.push_back({rule, o.scorer + ": " + o.error_detail});
                return v;
            }
            for (const ScoreOutcome& o : outcomes)
                if (!o.ok)
                    v.reasons.push_back({rule, "fail-open, ignoring " + o.scorer + ": " + o.error_detail});
            if (v.evidence.empty()) {
                v.decision = Decision::Pass;
                return v;
            }
        }

        // Rules 3 and 4: threshold, then flag band.
        const double ensemble = ensemble_perplexity(v.evidence, config_.ensemble_rule);
        if (ensemble >= config_.block_threshold) {
            v.decision = Decision::Block;
            v.reasons.push_back({"ppl-threshold",
                                 "ensemble perplexity " + format_ppl(ensemble) + " >= " +
                                     format_ppl(config_.block_threshold)});
            attach_localization(v, outcomes);
            return v;
        }
        if (ensemble >= config_.flag_low && ensemble < config_.flag_high) {
            v.decision = Decision::Flag;
            v.reasons.push_back({"ppl-band",
                                 "ensemble perplexity " + format_ppl(ensemble) + " in [" +
                                     format_ppl(config_.flag_low) + ", " +
                                     format_ppl(config_.flag_high) + ")"});
            attach_localization(v, outcomes);
            return v;
        }
        v.decision = Decision::Pass;
        return v;
    }

private:
    struct ScoreOutcome {
        std::string scorer;
        bool ok = false;
        PerplexityResult result;
        WindowSpan window;
        Errc error_code = Errc::ConfigError;
        std::string error_detail;
    };

    ScoreOutcome score_one(const Scorer& scorer, std::string_view prompt) const {
        ScoreOutcome out;
        out.scorer = scorer.name();
        try {
            TokenizerOptions topts;
            topts.max_tokens = config_.max_tokens;
            const TokenSequence seq = tokenize(prompt, scorer.scheme_id(), topts);
            if (seq.size() < 2)
                raise(Errc::TooShort, "prompt has fewer than 2 tokens");
            const ScoredSequence scored = scorer.score(seq);
            out.result = perplexity(scored);
            out.window = prefix_profile(scored, std::max<std::size_t>(config_.window, 2))
                             .argmax_window;
            out.ok = true;
        } catch (const Error& e) {
            out.error_code = e.code();
            out.error_detail = e.what();
        } catch (const std::exception& e) {
            out.error_code = Errc::ExternalScorerUnavailable;
            out.error_detail = e.what();
        }
        return out;
    }

    std::vector<ScoreOutcome> score_all(std::string_view prompt) const {
        std::vector<ScoreOutcome> outcomes(scorers_.size());
        if (scorers_.size() == 1) {
            outcomes[0] = score_one(*scorers_[0], prompt);
            return outcomes;
        }
        // Fan out and join; scorers are read-only shared state.
        std::vector<std::future<ScoreOutcome>> futures;
        futures.reserve(scorers_.size());
        for (const auto& s : scorers_)
            futures.push_back(std::async(std::launch::async, [&, sp = s.get()] {
                return score_one(*sp, prompt);
            }));
        for (std::size_t i = 0; i < futures.size(); ++i) outcomes[i] = futures[i].get();
        return outcomes;
    }

    void attach_localization(Verdict& v, const std::vector<ScoreOutcome>& outcomes) const {
        const ScoreOutcome* best = nullptr;
        for (const ScoreOutcome& o : outcomes)
            if (o.ok && (!best || o.result.ppl > best->result.ppl)) best = &o;
        if (best) v.localization = best->window;
    }

    void append_failure_notes(Verdict& v, const std::vector<ScoreOutcome>& outcomes,
                              std::optional<Errc> skip = std::nullopt) const {
        for (const ScoreOutcome& o : outcomes) {
            if (o.ok) continue;
            if (skip && o.error_code == *skip) continue;
            const char* rule = o.error_code == Errc::TooShort      ? "too-short"
                               : o.error_code == Errc::InputTooLong ? "length-cap"
                                                                     : "scorer-unavailable";
            v.reasons.push_back({rule, o.scorer + ": " + o.error_detail});
        }
    }

    static std::string format_ppl(double x) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6g", x);
        return buf;
    }

    DetectorConfig config_;
    std::vector<std::shared_ptr<const Scorer>> scorers_;
};

}  // namespace pplxguard
