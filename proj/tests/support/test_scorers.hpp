#pragma once

// Scorer doubles for detector and service tests.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pplxguard/scorer.hpp"

namespace testsupport {

// Yields a sequence perplexity of exactly `ppl` for any input: every
// conditional probability is 1/ppl.
class FixedPplScorer final : public pplxguard::Scorer {
public:
    explicit FixedPplScorer(double ppl, std::string name = "fixed")
        : logprob_(-std::log(ppl)) {
        spec_.name = std::move(name);
        spec_.kind = pplxguard::ScorerKind::Uniform;
        spec_.vocab_size = 2;
    }

    const pplxguard::ScorerSpec& spec() const override { return spec_; }

protected:
    std::vector<double> score_logprobs(const pplxguard::TokenSequence& seq) const override {
        return std::vector<double>(seq.size() - pplxguard::kScoredFrom, logprob_);
    }

private:
    pplxguard::ScorerSpec spec_;
    double logprob_;
};

class FailingScorer final : public pplxguard::Scorer {
public:
    explicit FailingScorer(std::string name = "broken") {
        spec_.name = std::move(name);
        spec_.kind = pplxguard::ScorerKind::External;
        spec_.endpoint = "127.0.0.1:1";
        spec_.vocab_size = 2;
    }

    const pplxguard::ScorerSpec& spec() const override { return spec_; }

protected:
    std::vector<double> score_logprobs(const pplxguard::TokenSequence&) const override {
        pplxguard::raise(pplxguard::Errc::ExternalScorerUnavailable,
                         "scorer '" + spec_.name + "' is down");
    }

private:
    pplxguard::ScorerSpec spec_;
};

// Random scored sequences for property tests.
inline pplxguard::ScoredSequence random_scored(std::mt19937_64& rng, std::size_t min_len = 2,
                                               std::size_t max_len = 512) {
    std::uniform_int_distribution<std::size_t> len_dist(min_len, max_len);
    std::uniform_real_distribution<double> lp_dist(std::log(1e-12), 0.0);

    const std::size_t t = len_dist(rng);
    pplxguard::ScoredSequence s;
    s.scorer = "random";
    s.scored_from = pplxguard::kScoredFrom;
    s.tokens.scheme_id = std::string(pplxguard::kRefWordScheme);
    s.tokens.tokens.resize(t, 1);
    s.tokens.surfaces.resize(t);
    s.logprobs.reserve(t - 1);
    for (std::size_t i = 1; i < t; ++i) s.logprobs.push_back(lp_dist(rng));
    return s;
}

}  // namespace testsupport
