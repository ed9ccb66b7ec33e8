#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pplxguard/errors.hpp"
#include "pplxguard/scorer.hpp"

namespace pplxguard {

// Neumaier-compensated running sum. Sequence logprob sums reach the tens of
// thousands of nats; naive accumulation would eat into the 1e-12 relative
// agreement the engine promises.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }

    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

struct PerplexityResult {
    double ppl = 0.0;          // exp(-sum_logprob / token_count)
    std::size_t token_count = 0;  // scored positions, the divisor
    double sum_logprob = 0.0;  // nats
    std::string scorer;
};

struct WindowSpan {
    std::size_t begin = 0;  // token indices, half-open
    std::size_t end = 0;

    friend bool operator==(const WindowSpan&, const WindowSpan&) = default;
};

struct PrefixProfile {
    // prefix_ppls[k] is the perplexity of the first k+2 tokens.
    std::vector<PerplexityResult> prefix_ppls;
    WindowSpan argmax_window;
};

namespace detail {

inline PerplexityResult make_result(double sum, std::size_t count, std::string_view scorer) {
    PerplexityResult r;
    r.sum_logprob = sum;
    r.token_count = count;
    r.scorer = std::string(scorer);
    r.ppl = std::exp(-sum / static_cast<double>(count));
    return r;
}

}  // namespace detail

// Entirely log-space: sum, divide, exponentiate. Raw probabilities are
// never multiplied together.
inline PerplexityResult perplexity(const ScoredSequence& scored) {
    if (scored.logprobs.empty())
        raise(Errc::TooShort, "no scored positions; need at least 2 tokens");
    CompensatedSum sum;
    for (double lp : scored.logprobs) sum.add(lp);
    return detail::make_result(sum.value(), scored.logprobs.size(), scored.scorer);
}

// One pass over the logprobs: a running compensated sum yields every prefix
// perplexity, and a sliding window sum yields the highest-perplexity window
// of the configured size (ties resolve to the earliest window). Cost is
// linear in sequence length.
inline PrefixProfile prefix_profile(const ScoredSequence& scored, std::size_t window = 16) {
    if (scored.logprobs.empty())
        raise(Errc::TooShort, "no scored positions; need at least 2 tokens");
    if (window < 2)
        throw std::invalid_argument("prefix_profile: window must be >= 2");

    const std::size_t t = scored.tokens.size();
    const std::size_t from = scored.scored_from;

    PrefixProfile profile;
    profile.prefix_ppls.reserve(scored.logprobs.size());
    CompensatedSum running;
    for (std::size_t i = 0; i < scored.logprobs.size(); ++i) {
        running.add(scored.logprobs[i]);
        profile.prefix_ppls.push_back(
            detail::make_result(running.value(), i + 1, scored.scorer));
    }

    // Window scan over token indices [s, s+w); scored positions inside the
    // window are max(s, scored_from) .. s+w-1.
    const std::size_t w = std::min(window, t);
    double best_mean = 0.0;
    bool have_best = false;
    double window_sum = 0.0;
    for (std::size_t s = 0; s + w <= t; ++s) {
        const std::size_t lo = std::max(s, from);      // first scored token index
        const std::size_t hi = s + w;                  // one past last
        if (s == 0) {
            for (std::size_t p = lo; p < hi; ++p) window_sum += scored.logprobs[p - from];
        } else {
            // Slide: drop token s-1 if it was scored, take in token hi-1.
            if (s - 1 >= from) window_sum -= scored.logprobs[s - 1 - from];
            if (hi - 1 >= from) window_sum += scored.logprobs[hi - 1 - from];
        }
        if (hi <= lo) continue;  // window holds no scored positions
        const std::size_t n = hi - lo;
        const double mean = window_sum / static_cast<double>(n);
        if (!have_best || mean < best_mean) {  // lower mean logprob = higher ppl
            best_mean = mean;
            profile.argmax_window = {s, hi};
            have_best = true;
        }
    }
    return profile;
}

struct SegmentPerplexities {
    PerplexityResult prompt;
    PerplexityResult suffix;
    PerplexityResult combined;
};

// Scores the harmful goal, the appended suffix, and their concatenation
// (joined by a single space, scored as one sequence so suffix tokens are
// conditioned on the full prompt context).
inline SegmentPerplexities segment_perplexities(std::string_view prompt_text,
                                                std::string_view suffix_text,
                                                const Scorer& scorer,
                                                const TokenizerOptions& opts = {}) {
    const auto tokenize_segment = [&](std::string_view text, const char* which) {
        try {
            TokenSequence seq = tokenize(text, scorer.scheme_id(), opts);
            if (seq.size() < 2)
                raise(Errc::TooShort, std::string(which) + " segment has fewer than 2 tokens");
            return seq;
        } catch (const Error& e) {
            if (e.code() == Errc::EmptyInput)
                raise(Errc::TooShort, std::string(which) + " segment is empty");
            throw;
        }
    };

    const TokenSequence prompt_seq = tokenize_segment(prompt_text, "prompt");
    const TokenSequence suffix_seq = tokenize_segment(suffix_text, "suffix");

    std::string combined_text;
    combined_text.reserve(prompt_text.size() + 1 + suffix_text.size());
    combined_text.append(prompt_text).append(" ").append(suffix_text);
    const TokenSequence combined_seq = tokenize(combined_text, scorer.scheme_id(), opts);

    SegmentPerplexities out;
    out.prompt = perplexity(scorer.score(prompt_seq));
    out.suffix = perplexity(scorer.score(suffix_seq));
    out.combined = perplexity(scorer.score(combined_seq));
    return out;
}

}  // namespace pplxguard
