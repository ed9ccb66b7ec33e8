#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pplxguard/errors.hpp"
#include "pplxguard/perplexity.hpp"

namespace pplxguard {

enum class Source { Docred, SuperglueBoolq, SquadV2, Adversarial, Custom };
enum class Label { Benign, Adversarial, Unknown };

inline const char* to_string(Source s) {
    switch (s) {
        case Source::Docred:         return "docred";
        case Source::SuperglueBoolq: return "superglue-boolq";
        case Source::SquadV2:        return "squad-v2";
        case Source::Adversarial:    return "adversarial";
        case Source::Custom:         return "custom";
    }
    return "?";
}

inline const char* to_string(Label l) {
    switch (l) {
        case Label::Benign:      return "benign";
        case Label::Adversarial: return "adversarial";
        case Label::Unknown:     return "unknown";
    }
    return "?";
}

inline Source parse_source(std::string_view s) {
    if (s == "docred") return Source::Docred;
    if (s == "superglue-boolq") return Source::SuperglueBoolq;
    if (s == "squad-v2") return Source::SquadV2;
    if (s == "adversarial") return Source::Adversarial;
    if (s == "custom") return Source::Custom;
    raise(Errc::ParseError, "unknown source '" + std::string(s) + "'");
}

inline Label parse_label(std::string_view s) {
    if (s == "benign") return Label::Benign;
    if (s == "adversarial") return Label::Adversarial;
    if (s == "unknown") return Label::Unknown;
    raise(Errc::ParseError, "unknown label '" + std::string(s) + "'");
}

struct PromptRecord {
    Source source = Source::Custom;
    std::string prompt;
    Label label = Label::Unknown;
    std::map<std::string, std::string> meta;

    void validate() const {
        if (prompt.empty()) raise(Errc::EmptyField, "prompt must be non-empty");
        if (label == Label::Adversarial && source != Source::Adversarial &&
            source != Source::Custom)
            raise(Errc::ParseError,
                  "adversarial label requires adversarial or custom source");
    }
};

// ---------------------------------------------------------------------------
// Prompt builders. The instruction templates are fixed strings; callers
// substitute dataset fields only.
// ---------------------------------------------------------------------------

inline PromptRecord build_docred_prompt(std::string_view title, std::string_view passage) {
    if (title.empty()) raise(Errc::EmptyField, "docred title must be non-empty");
    if (passage.empty()) raise(Errc::EmptyField, "docred passage must be non-empty");
    PromptRecord r;
    r.source = Source::Docred;
    r.label = Label::Benign;
    r.prompt = "Read the following passage titled: " + std::string(title) +
               ". What are the main entities and relations you can derive?\n" +
               std::string(passage);
    r.meta["title"] = std::string(title);
    return r;
}

inline PromptRecord build_superglue_prompt(std::string_view question, std::string_view passage) {
    if (question.empty()) raise(Errc::EmptyField, "superglue question must be non-empty");
    if (passage.empty()) raise(Errc::EmptyField, "superglue passage must be non-empty");
    PromptRecord r;
    r.source = Source::SuperglueBoolq;
    r.label = Label::Benign;
    r.prompt = "Read the following passage and answer the question: \"" +
               std::string(question) + "\"\n" + std::string(passage);
    r.meta["question"] = std::string(question);
    return r;
}

inline PromptRecord build_squad_prompt(std::string_view title, std::string_view context,
                                       std::string_view question) {
    if (title.empty()) raise(Errc::EmptyField, "squad title must be non-empty");
    if (context.empty()) raise(Errc::EmptyField, "squad context must be non-empty");
    if (question.empty()) raise(Errc::EmptyField, "squad question must be non-empty");
    PromptRecord r;
    r.source = Source::SquadV2;
    r.label = Label::Benign;
    r.prompt = "Given a context passage from a document titled " + std::string(title) +
               ", followed by a question, try to answer the question with a span of words "
               "from the context:\n"
               "The context follows: " + std::string(context) + "\n" +
               "The question is: " + std::string(question);
    r.meta["title"] = std::string(title);
    return r;
}

// ---------------------------------------------------------------------------
// Describe-style summary of a perplexity sample.
// ---------------------------------------------------------------------------

struct PerplexitySummary {
    std::size_t count = 0;
    double mean = 0.0;
    double std_dev = 0.0;  // sample standard deviation, n-1 divisor
    double min = 0.0;
    double q25 = 0.0;
    double q50 = 0.0;
    double q75 = 0.0;
    double max = 0.0;
};

namespace detail {

// Type-7 quantile: linear interpolation between closest ranks on the
// sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double p) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = p * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace detail

inline PerplexitySummary summarize(std::span<const double> ppls) {
    if (ppls.empty()) raise(Errc::EmptyInput, "summarize needs at least one value");

    std::vector<double> sorted(ppls.begin(), ppls.end());
    std::sort(sorted.begin(), sorted.end());

    PerplexitySummary s;
    s.count = sorted.size();
    CompensatedSum sum;
    for (double x : sorted) sum.add(x);
    s.mean = sum.value() / static_cast<double>(s.count);

    if (s.count > 1) {
        CompensatedSum sq;
        for (double x : sorted) {
            const double d = x - s.mean;
            sq.add(d * d);
        }
        s.std_dev = std::sqrt(sq.value() / static_cast<double>(s.count - 1));
    }

    s.min = sorted.front();
    s.q25 = detail::quantile_sorted(sorted, 0.25);
    s.q50 = detail::quantile_sorted(sorted, 0.50);
    s.q75 = detail::quantile_sorted(sorted, 0.75);
    s.max = sorted.back();
    return s;
}

// Histogram counts over half-open bins (lo, hi]. k edges make k+1 bins:
// everything <= edges[0], the interior bins, and everything > edges[k-1].
// A value exactly on an edge falls in the lower bin.
inline std::vector<std::size_t> band_counts(std::span<const double> ppls,
                                            std::span<const double> edges) {
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i - 1] < edges[i]))
            raise(Errc::UnsortedEdges, "band edges must be strictly increasing");

    std::vector<std::size_t> counts(edges.size() + 1, 0);
    for (double v : ppls) {
        std::size_t bin = edges.size();
        for (std::size_t i = 0; i < edges.size(); ++i) {
            if (v <= edges[i]) {
                bin = i;
                break;
            }
        }
        ++counts[bin];
    }
    return counts;
}

// ---------------------------------------------------------------------------
// File ingestion. Two on-disk shapes:
//   perplexity samples: CSV, header "prompt_id,source,label,ppl", RFC 4180
//   prompt records:     JSON lines {"source":..,"prompt":..,"label":..,"meta":{..}}
//                       or CSV, header "prompt_id,source,label,prompt"
// ---------------------------------------------------------------------------

struct PplSample {
    std::string prompt_id;
    Source source = Source::Custom;
    Label label = Label::Unknown;
    double ppl = 0.0;
};

namespace detail {

// RFC 4180 row reader; handles quoted fields, doubled quotes, embedded
// newlines, and both LF and CRLF endings. Returns false at end of input.
// `line` tracks the 1-based physical line where the row started.
inline bool read_csv_row(std::istream& in, std::vector<std::string>& fields,
                         std::size_t& line, std::size_t& row_start_line) {
    fields.clear();
    int c = in.peek();
    if (c == EOF) return false;
    row_start_line = line;

    std::string field;
    bool quoted = false;
    bool row_done = false;
    while (!row_done) {
        c = in.get();
        if (c == EOF) {
            row_done = true;
        } else if (quoted) {
            if (c == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(static_cast<char>(c));
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n') {
            ++line;
            if (!field.empty() && field.back() == '\r') field.pop_back();
            row_done = true;
        } else {
            field.push_back(static_cast<char>(c));
        }
    }
    fields.push_back(std::move(field));
    return true;
}

inline std::string csv_escape(std::string_view field) {
    const bool needs_quotes =
        field.find_first_of(",\"\r\n") != std::string_view::npos;
    if (!needs_quotes) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

inline std::ifstream open_or_raise(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::FileNotFound, "cannot open file: " + path);
    return in;
}

}  // namespace detail

inline std::vector<PplSample> read_ppl_csv(std::istream& in) {
    std::vector<std::string> fields;
    std::size_t line = 1, row_line = 1;

    if (!detail::read_csv_row(in, fields, line, row_line))
        raise(Errc::ParseError, "empty file", 1);
    if (fields != std::vector<std::string>{"prompt_id", "source", "label", "ppl"})
        raise(Errc::ParseError, "expected header prompt_id,source,label,ppl", row_line);

    std::vector<PplSample> out;
    while (detail::read_csv_row(in, fields, line, row_line)) {
        if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
        if (fields.size() != 4)
            raise(Errc::ParseError, "expected 4 fields, got " + std::to_string(fields.size()),
                  row_line);
        PplSample s;
        s.prompt_id = fields[0];
        try {
            s.source = parse_source(fields[1]);
            s.label = parse_label(fields[2]);
            std::size_t used = 0;
            s.ppl = std::stod(fields[3], &used);
            if (used != fields[3].size()) throw std::invalid_argument(fields[3]);
        } catch (const Error& e) {
            throw Error(e.code(), e.what(), row_line);
        } catch (const std::exception&) {
            throw Error(Errc::ParseError, "bad ppl value '" + fields[3] + "'", row_line);
        }
        if (!(s.ppl > 0.0))
            raise(Errc::ParseError, "ppl must be positive", row_line);
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<PplSample> read_ppl_csv(const std::string& path) {
    std::ifstream in = detail::open_or_raise(path);
    return read_ppl_csv(in);
}

inline std::vector<PromptRecord> read_prompt_csv(std::istream& in) {
    std::vector<std::string> fields;
    std::size_t line = 1, row_line = 1;

    if (!detail::read_csv_row(in, fields, line, row_line))
        raise(Errc::ParseError, "empty file", 1);
    if (fields != std::vector<std::string>{"prompt_id", "source", "label", "prompt"})
        raise(Errc::ParseError, "expected header prompt_id,source,label,prompt", row_line);

    std::vector<PromptRecord> out;
    while (detail::read_csv_row(in, fields, line, row_line)) {
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() != 4)
            raise(Errc::ParseError, "expected 4 fields, got " + std::to_string(fields.size()),
                  row_line);
        PromptRecord r;
        r.meta["prompt_id"] = fields[0];
        try {
            r.source = parse_source(fields[1]);
            r.label = parse_label(fields[2]);
        } catch (const Error& e) {
            throw Error(e.code(), e.what(), row_line);
        }
        r.prompt = fields[3];
        if (r.prompt.empty()) raise(Errc::ParseError, "empty prompt", row_line);
        r.validate();
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<PromptRecord> read_prompt_csv(const std::string& path) {
    std::ifstream in = detail::open_or_raise(path);
    return read_prompt_csv(in);
}

inline std::vector<PromptRecord> read_prompt_jsonl(std::istream& in) {
    std::vector<PromptRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            raise(Errc::ParseError, "invalid JSON object", lineno);
        PromptRecord r;
        try {
            r.source = parse_source(j.at("source").get<std::string>());
            r.prompt = j.at("prompt").get<std::string>();
            r.label = parse_label(j.at("label").get<std::string>());
            if (j.contains("meta"))
                for (const auto& [k, val] : j.at("meta").items())
                    r.meta[k] = val.is_string() ? val.get<std::string>() : val.dump();
            if (r.prompt.empty()) raise(Errc::ParseError, "empty prompt");
            r.validate();
        } catch (const Error& e) {
            throw Error(e.code(), e.what(), lineno);
        } catch (const std::exception& e) {
            throw Error(Errc::ParseError, e.what(), lineno);
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<PromptRecord> read_prompt_jsonl(const std::string& path) {
    std::ifstream in = detail::open_or_raise(path);
    return read_prompt_jsonl(in);
}

}  // namespace pplxguard
