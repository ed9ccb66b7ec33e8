#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pplxguard/errors.hpp"
#include "pplxguard/tokenizer.hpp"

namespace pplxguard {

enum class ScorerKind { Uniform, Ngram, External };

inline const char* to_string(ScorerKind k) {
    switch (k) {
        case ScorerKind::Uniform:  return "uniform";
        case ScorerKind::Ngram:    return "ngram";
        case ScorerKind::External: return "external";
    }
    return "?";
}

// Smallest probability any event may take before the log is applied. Keeps
// logprobs finite even when an external scorer reports a zero-probability
// event, and makes results reproducible across scorer backends.
inline constexpr double kProbFloor = 1e-12;

inline double floor_logprob(double lp) {
    const double lo = std::log(kProbFloor);
    if (lp < lo) return lo;
    if (lp > 0.0) return 0.0;
    return lp;
}

// The first token of a sequence is never scored: no BOS symbol is injected,
// so there is nothing to condition it on. Scored positions are 1..t-1 and
// the perplexity divisor is their count.
inline constexpr std::size_t kScoredFrom = 1;

struct ScorerSpec {
    std::string name;
    ScorerKind kind = ScorerKind::Uniform;
    std::uint32_t vocab_size = 0;         // uniform / ngram
    std::uint32_t order = 0;              // ngram
    std::string endpoint;                 // external: "host:port" or "unix:/path"
    std::string scheme_id = std::string(kRefWordScheme);

    double add_k = 1.0;                   // ngram smoothing constant
    std::string corpus_path;              // ngram: training corpus, one document per line
    double timeout_s = 5.0;               // external
    int max_in_flight = 8;                // external

    void validate() const {
        if (name.empty())
            raise(Errc::ConfigError, "scorer name must be non-empty");
        if (!scheme_known(scheme_id))
            raise(Errc::UnknownScheme, "scorer '" + name + "' names unknown scheme '" + scheme_id + "'");
        switch (kind) {
            case ScorerKind::Uniform:
                if (vocab_size < 2)
                    raise(Errc::ConfigError, "uniform scorer '" + name + "' needs vocab_size >= 2");
                break;
            case ScorerKind::Ngram:
                if (vocab_size < 2)
                    raise(Errc::ConfigError, "ngram scorer '" + name + "' needs vocab_size >= 2");
                if (order < 1 || order > 8)
                    raise(Errc::ConfigError, "ngram scorer '" + name + "' needs 1 <= order <= 8");
                if (!(add_k > 0.0))
                    raise(Errc::ConfigError, "ngram scorer '" + name + "' needs add_k > 0");
                break;
            case ScorerKind::External:
                if (endpoint.empty())
                    raise(Errc::ConfigError, "external scorer '" + name + "' needs an endpoint");
                if (!(timeout_s > 0.0))
                    raise(Errc::ConfigError, "external scorer '" + name + "' needs timeout_s > 0");
                if (max_in_flight < 1)
                    raise(Errc::ConfigError, "external scorer '" + name + "' needs max_in_flight >= 1");
                break;
        }
    }
};

// Per-token conditional log-probabilities, natural log, one per scored
// position. logprobs[i] is log p(x_{scored_from + i} | x_{<scored_from + i}).
struct ScoredSequence {
    TokenSequence tokens;
    std::vector<double> logprobs;
    std::size_t scored_from = kScoredFrom;
    std::string scorer;

    std::size_t scored_positions() const noexcept { return logprobs.size(); }
};

class Scorer {
public:
    virtual ~Scorer() = default;

    virtual const ScorerSpec& spec() const = 0;

    const std::string& name() const { return spec().name; }
    const std::string& scheme_id() const { return spec().scheme_id; }

    ScoredSequence score(const TokenSequence& seq) const {
        if (seq.empty())
            raise(Errc::EmptyInput, "cannot score an empty sequence");
        if (seq.scheme_id != scheme_id())
            raise(Errc::SchemeMismatch, "sequence scheme '" + seq.scheme_id +
                                            "' does not match scorer scheme '" + scheme_id() + "'");

        ScoredSequence out;
        out.tokens = seq;
        out.scored_from = kScoredFrom;
        out.scorer = name();
        out.logprobs = score_logprobs(seq);
        if (out.logprobs.size() != seq.size() - kScoredFrom)
            raise(Errc::ExternalScorerProtocol,
                  "scorer '" + name() + "' returned " + std::to_string(out.logprobs.size()) +
                      " logprobs for " + std::to_string(seq.size()) + " tokens");
        for (double& lp : out.logprobs) lp = floor_logprob(lp);
        return out;
    }

protected:
    // One natural-log conditional probability per position 1..t-1.
    virtual std::vector<double> score_logprobs(const TokenSequence& seq) const = 0;
};

// Assigns 1/V to every token regardless of content; perplexity under this
// scorer is exactly V.
class UniformScorer final : public Scorer {
public:
    explicit UniformScorer(ScorerSpec spec) : spec_(std::move(spec)) {
        spec_.kind = ScorerKind::Uniform;
        spec_.validate();
    }

    static UniformScorer with_vocab(std::uint32_t vocab_size,
                                    std::string name = "uniform") {
        ScorerSpec s;
        s.name = std::move(name);
        s.kind = ScorerKind::Uniform;
        s.vocab_size = vocab_size;
        return UniformScorer(std::move(s));
    }

    const ScorerSpec& spec() const override { return spec_; }

protected:
    std::vector<double> score_logprobs(const TokenSequence& seq) const override {
        const double lp = -std::log(static_cast<double>(spec_.vocab_size));
        return std::vector<double>(seq.size() - kScoredFrom, lp);
    }

private:
    ScorerSpec spec_;
};

}  // namespace pplxguard
