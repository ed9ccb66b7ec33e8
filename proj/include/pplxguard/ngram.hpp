#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pplxguard/scorer.hpp"
#include "pplxguard/tokenizer.hpp"

namespace pplxguard {

// Count-based n-gram language model with interpolated add-k smoothing:
//
//   p_1(w)       = (c(w) + k) / (N + k*V)
//   p_m(w | u)   = (c(u w) + k*V*p_{m-1}(w | u[1:])) / (c_prefix(u) + k*V)
//
// V is the size of the realized vocabulary (types seen in training plus
// UNK, capped at spec.vocab_size), so every conditional distribution sums
// to exactly 1 and every event has strictly positive probability. Contexts
// never seen in training reduce cleanly to the next lower order.
//
// Immutable after training; concurrent read-only scoring is safe.
class NgramModel {
public:
    static constexpr std::uint32_t kUnkIndex = 0;

    const ScorerSpec& spec() const { return spec_; }
    std::uint64_t total_tokens() const { return total_tokens_; }

    // Realized vocabulary size, UNK included.
    std::uint32_t vocab_count() const { return static_cast<std::uint32_t>(surfaces_.size()); }
    bool vocab_overflowed() const { return overflowed_; }

    const std::string& surface(std::uint32_t index) const { return surfaces_[index]; }

    std::uint32_t index_of(std::uint64_t token_id) const {
        auto it = index_by_id_.find(token_id);
        return it == index_by_id_.end() ? kUnkIndex : it->second;
    }

    // p(w | context), context given oldest-first, at most order-1 entries.
    double probability(std::uint32_t word, std::span<const std::uint32_t> context) const {
        const double v = static_cast<double>(vocab_count());
        const double k = spec_.add_k;

        // Unigram base case.
        double p = (static_cast<double>(unigram_count(word)) + k) /
                   (static_cast<double>(total_tokens_) + k * v);
        if (context.empty()) return p;

        // Build up through the orders, shortest context first.
        for (std::size_t m = 1; m <= context.size(); ++m) {
            std::span<const std::uint32_t> ctx = context.subspan(context.size() - m, m);
            const double gram = static_cast<double>(count(ctx, word));
            const double ctx_total = static_cast<double>(prefix_count(ctx));
            p = (gram + k * v * p) / (ctx_total + k * v);
        }
        return p;
    }

    std::vector<std::uint32_t> to_indices(const TokenSequence& seq) const {
        std::vector<std::uint32_t> idx;
        idx.reserve(seq.size());
        for (std::uint64_t id : seq.tokens) idx.push_back(index_of(id));
        return idx;
    }

private:
    friend std::shared_ptr<const NgramModel> train_ngram(std::istream&, const ScorerSpec&);

    static std::string pack(std::span<const std::uint32_t> gram) {
        std::string key;
        key.resize(gram.size() * 4);
        for (std::size_t i = 0; i < gram.size(); ++i) {
            const std::uint32_t x = gram[i];
            key[i * 4 + 0] = static_cast<char>(x & 0xFF);
            key[i * 4 + 1] = static_cast<char>((x >> 8) & 0xFF);
            key[i * 4 + 2] = static_cast<char>((x >> 16) & 0xFF);
            key[i * 4 + 3] = static_cast<char>((x >> 24) & 0xFF);
        }
        return key;
    }

    std::uint64_t unigram_count(std::uint32_t word) const {
        return word < unigram_counts_.size() ? unigram_counts_[word] : 0;
    }

    std::uint64_t count(std::span<const std::uint32_t> ctx, std::uint32_t word) const {
        const std::size_t order = ctx.size() + 1;
        if (order - 2 >= gram_counts_.size()) return 0;
        std::vector<std::uint32_t> gram(ctx.begin(), ctx.end());
        gram.push_back(word);
        const auto& table = gram_counts_[order - 2];
        auto it = table.find(pack(gram));
        return it == table.end() ? 0 : it->second;
    }

    std::uint64_t prefix_count(std::span<const std::uint32_t> ctx) const {
        if (ctx.size() - 1 >= prefix_counts_.size()) return 0;
        const auto& table = prefix_counts_[ctx.size() - 1];
        auto it = table.find(pack(ctx));
        return it == table.end() ? 0 : it->second;
    }

    using CountTable = std::unordered_map<std::string, std::uint64_t>;

    ScorerSpec spec_;
    std::vector<std::string> surfaces_;                  // index -> surface, [0] = UNK
    std::unordered_map<std::uint64_t, std::uint32_t> index_by_id_;
    std::vector<std::uint64_t> unigram_counts_;
    std::vector<CountTable> gram_counts_;                // [o-2] holds o-gram counts
    std::vector<CountTable> prefix_counts_;              // [m-1] holds m-gram-as-prefix counts
    std::uint64_t total_tokens_ = 0;
    bool overflowed_ = false;
};

// Trains an n-gram model from a corpus stream, one document per line.
// Documents are independent: n-grams never cross line boundaries, and no
// BOS/EOS symbols are injected (matching the skip-first scoring rule).
// Types beyond the vocab_size budget map to UNK and are counted there.
inline std::shared_ptr<const NgramModel> train_ngram(std::istream& corpus,
                                                     const ScorerSpec& spec) {
    if (spec.kind != ScorerKind::Ngram)
        raise(Errc::ConfigError, "train_ngram needs an ngram spec");
    spec.validate();

    auto model = std::make_shared<NgramModel>();
    model->spec_ = spec;
    model->surfaces_.push_back("<unk>");
    model->unigram_counts_.push_back(0);
    model->gram_counts_.resize(spec.order >= 2 ? spec.order - 1 : 0);
    model->prefix_counts_.resize(spec.order >= 2 ? spec.order - 1 : 0);

    std::string line;
    std::vector<std::uint32_t> idx;
    while (std::getline(corpus, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();

        idx.clear();
        for (const Span& s : detail::segment(line)) {
            const std::string_view word(line.data() + s.begin, s.end - s.begin);
            const std::uint64_t id = token_id(word);
            auto it = model->index_by_id_.find(id);
            std::uint32_t index;
            if (it != model->index_by_id_.end()) {
                index = it->second;
            } else if (model->surfaces_.size() < spec.vocab_size) {
                index = static_cast<std::uint32_t>(model->surfaces_.size());
                model->surfaces_.emplace_back(word);
                model->unigram_counts_.push_back(0);
                model->index_by_id_.emplace(id, index);
            } else {
                index = NgramModel::kUnkIndex;
                model->overflowed_ = true;
            }
            idx.push_back(index);
        }

        model->total_tokens_ += idx.size();
        for (std::uint32_t w : idx) ++model->unigram_counts_[w];
        for (std::uint32_t o = 2; o <= spec.order; ++o) {
            if (idx.size() < o) break;
            for (std::size_t i = 0; i + o <= idx.size(); ++i) {
                std::span<const std::uint32_t> gram(idx.data() + i, o);
                ++model->gram_counts_[o - 2][NgramModel::pack(gram)];
                ++model->prefix_counts_[o - 2][NgramModel::pack(gram.first(o - 1))];
            }
        }
    }

    if (model->total_tokens_ == 0)
        raise(Errc::EmptyCorpus, "training corpus has no tokens");
    return model;
}

inline std::shared_ptr<const NgramModel> train_ngram_file(const std::string& path,
                                                          const ScorerSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::FileNotFound, "cannot open training corpus: " + path);
    return train_ngram(in, spec);
}

class NgramScorer final : public Scorer {
public:
    explicit NgramScorer(std::shared_ptr<const NgramModel> model)
        : spec_(model ? model->spec() : ScorerSpec{}), model_(std::move(model)) {
        if (!model_) raise(Errc::UntrainedModel, "ngram scorer built without a model");
    }

    // Spec-only construction leaves the scorer untrained; scoring fails
    // until a model exists.
    explicit NgramScorer(ScorerSpec spec) : spec_(std::move(spec)) {}

    const ScorerSpec& spec() const override { return spec_; }
    const NgramModel& model() const {
        if (!model_) raise(Errc::UntrainedModel, "ngram scorer '" + spec_.name + "' has no trained model");
        return *model_;
    }

protected:
    std::vector<double> score_logprobs(const TokenSequence& seq) const override {
        const NgramModel& m = model();
        const std::vector<std::uint32_t> idx = m.to_indices(seq);
        const std::size_t max_ctx = spec_.order >= 1 ? spec_.order - 1 : 0;

        std::vector<double> out;
        out.reserve(idx.size() - kScoredFrom);
        for (std::size_t i = kScoredFrom; i < idx.size(); ++i) {
            const std::size_t ctx_len = std::min(max_ctx, i);
            std::span<const std::uint32_t> ctx(idx.data() + i - ctx_len, ctx_len);
            out.push_back(std::log(m.probability(idx[i], ctx)));
        }
        return out;
    }

private:
    ScorerSpec spec_;
    std::shared_ptr<const NgramModel> model_;
};

}  // namespace pplxguard
