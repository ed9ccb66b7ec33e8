#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pplxguard/corpus.hpp"
#include "pplxguard/detector.hpp"

namespace pplxguard {

struct ScanRow {
    std::string prompt_id;
    Source source = Source::Custom;
    Label label = Label::Unknown;
    std::optional<double> ppl;  // ensemble perplexity; absent if scoring failed
    Decision decision = Decision::Pass;
    std::vector<std::string> rules;
    bool bang_matched = false;
};

struct ScanResult {
    std::vector<ScanRow> rows;
    std::size_t failed = 0;  // rows with no perplexity evidence

    std::vector<double> ppls() const {
        std::vector<double> out;
        out.reserve(rows.size());
        for (const ScanRow& r : rows)
            if (r.ppl) out.push_back(*r.ppl);
        return out;
    }
};

inline ScanResult scan_records(const std::vector<PromptRecord>& records,
                               const Detector& detector) {
    ScanResult result;
    result.rows.reserve(records.size());
    std::size_t seq = 0;
    for (const PromptRecord& rec : records) {
        ++seq;
        ScanRow row;
        const auto id_it = rec.meta.find("prompt_id");
        if (id_it != rec.meta.end() && !id_it->second.empty()) {
            row.prompt_id = id_it->second;
        } else {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "p%04zu", seq);
            row.prompt_id = buf;
        }
        row.source = rec.source;
        row.label = rec.label;

        const Verdict v = detector.classify(rec.prompt);
        row.decision = v.decision;
        row.bang_matched = v.matched_bang_run.has_value();
        for (const Reason& r : v.reasons) row.rules.push_back(r.rule);
        if (!v.evidence.empty())
            row.ppl = ensemble_perplexity(v.evidence, detector.config().ensemble_rule);
        else
            ++result.failed;
        result.rows.push_back(std::move(row));
    }
    return result;
}

// Input dispatch by extension: .jsonl/.ndjson are JSON lines, .csv is the
// prompt CSV schema.
inline std::vector<PromptRecord> load_prompt_file(const std::string& path) {
    const auto ends_with = [&](std::string_view suffix) {
        return path.size() >= suffix.size() &&
               std::string_view(path).substr(path.size() - suffix.size()) == suffix;
    };
    if (ends_with(".jsonl") || ends_with(".ndjson")) return read_prompt_jsonl(path);
    if (ends_with(".csv")) return read_prompt_csv(path);
    raise(Errc::ParseError, "cannot tell prompt file format from extension: " + path);
}

inline constexpr std::string_view kScanCsvHeader =
    "prompt_id,source,label,ppl,decision,rules";

inline void write_scan_csv(std::ostream& out, const ScanResult& result) {
    out << kScanCsvHeader << "\n";
    for (const ScanRow& r : result.rows) {
        std::string rules;
        for (std::size_t i = 0; i < r.rules.size(); ++i) {
            if (i) rules += ";";
            rules += r.rules[i];
        }
        out << detail::csv_escape(r.prompt_id) << "," << to_string(r.source) << ","
            << to_string(r.label) << ",";
        if (r.ppl) {
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.10g", *r.ppl);
            out << buf;
        }
        out << "," << to_string(r.decision) << "," << detail::csv_escape(rules) << "\n";
    }
}

// Reads perplexities back from either the strict sample schema
// (prompt_id,source,label,ppl) or a scan output file; rows without a
// perplexity are skipped.
inline std::vector<double> read_ppl_column(const std::string& path) {
    std::ifstream in = detail::open_or_raise(path);
    std::vector<std::string> fields;
    std::size_t line = 1, row_line = 1;
    if (!detail::read_csv_row(in, fields, line, row_line))
        raise(Errc::ParseError, "empty file", 1);

    bool scan_shape;
    if (fields == std::vector<std::string>{"prompt_id", "source", "label", "ppl"})
        scan_shape = false;
    else if (fields == std::vector<std::string>{"prompt_id", "source", "label", "ppl",
                                                "decision", "rules"})
        scan_shape = true;
    else
        raise(Errc::ParseError, "unrecognized CSV header", row_line);

    std::vector<double> out;
    const std::size_t want = scan_shape ? 6 : 4;
    while (detail::read_csv_row(in, fields, line, row_line)) {
        if (fields.size() == 1 && fields[0].empty()) continue;
        if (fields.size() != want)
            raise(Errc::ParseError, "expected " + std::to_string(want) + " fields", row_line);
        if (fields[3].empty()) continue;
        try {
            std::size_t used = 0;
            const double v = std::stod(fields[3], &used);
            if (used != fields[3].size() || !(v > 0.0)) throw std::invalid_argument(fields[3]);
            out.push_back(v);
        } catch (const std::exception&) {
            throw Error(Errc::ParseError, "bad ppl value '" + fields[3] + "'", row_line);
        }
    }
    return out;
}

// Describe-style block matching the summary table shape.
inline std::string render_summary(const PerplexitySummary& s) {
    const auto fmt = [](double x) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.2f", x);
        return std::string(buf);
    };
    std::ostringstream os;
    os << "count " << s.count << "\n"
       << "mean  " << fmt(s.mean) << "\n"
       << "std   " << fmt(s.std_dev) << "\n"
       << "min   " << fmt(s.min) << "\n"
       << "25%   " << fmt(s.q25) << "\n"
       << "50%   " << fmt(s.q50) << "\n"
       << "75%   " << fmt(s.q75) << "\n"
       << "max   " << fmt(s.max) << "\n";
    return os.str();
}

inline std::string render_band_label(std::span<const double> edges, std::size_t bin) {
    const auto fmt = [](double x) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", x);
        return std::string(buf);
    };
    if (edges.empty()) return "(all)";
    if (bin == 0) return "(0, " + fmt(edges[0]) + "]";
    if (bin == edges.size()) return "(" + fmt(edges[bin - 1]) + ", inf)";
    return "(" + fmt(edges[bin - 1]) + ", " + fmt(edges[bin]) + "]";
}

inline std::string render_histogram(std::span<const double> ppls,
                                    std::span<const double> edges,
                                    std::size_t bar_width = 40) {
    const std::vector<std::size_t> counts = band_counts(ppls, edges);
    const std::size_t peak = counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());

    std::vector<std::string> labels;
    std::size_t label_width = 0, count_width = 1;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        labels.push_back(render_band_label(edges, i));
        label_width = std::max(label_width, labels.back().size());
        count_width = std::max(count_width, std::to_string(counts[i]).size());
    }

    std::ostringstream os;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const std::size_t bar =
            peak == 0 ? 0 : (counts[i] * bar_width + peak - 1) / peak;  // ceil, nonzero stays visible
        os << labels[i] << std::string(label_width - labels[i].size(), ' ') << "  ";
        const std::string count_str = std::to_string(counts[i]);
        os << std::string(count_width - count_str.size(), ' ') << count_str << "  ";
        os << std::string(counts[i] ? std::max<std::size_t>(bar, 1) : 0, '#') << "\n";
    }
    return os.str();
}

inline void write_histogram_csv(std::ostream& out, std::span<const double> ppls,
                                std::span<const double> edges) {
    const std::vector<std::size_t> counts = band_counts(ppls, edges);
    out << "band,count\n";
    for (std::size_t i = 0; i < counts.size(); ++i)
        out << detail::csv_escape(render_band_label(edges, i)) << "," << counts[i] << "\n";
}

struct SweepPoint {
    double threshold = 0.0;
    std::size_t blocked = 0;
};

// Re-applies the block decision at each candidate threshold using the
// cached evidence: a row blocks if the bang rule fired, its ensemble
// perplexity reaches the threshold, or it failed to score under
// fail-closed. Blocked counts are monotone non-increasing in the threshold.
inline std::vector<SweepPoint> threshold_sweep(const ScanResult& result, double lo,
                                               double hi, double step,
                                               FailMode fail_mode) {
    if (!(lo > 0.0) || !(hi >= lo) || !(step > 0.0))
        raise(Errc::ConfigError, "sweep needs 0 < lo <= hi and step > 0");
    std::vector<SweepPoint> points;
    for (double thr = lo; thr <= hi + 1e-9; thr += step) {
        SweepPoint p;
        p.threshold = thr;
        for (const ScanRow& r : result.rows) {
            const bool blocked = r.bang_matched || (r.ppl && *r.ppl >= thr) ||
                                 (!r.ppl && fail_mode == FailMode::FailClosed);
            if (blocked) ++p.blocked;
        }
        points.push_back(p);
    }
    return points;
}

inline void write_sweep_csv(std::ostream& out, std::span<const SweepPoint> points) {
    out << "threshold,blocked\n";
    for (const SweepPoint& p : points) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.10g", p.threshold);
        out << buf << "," << p.blocked << "\n";
    }
}

}  // namespace pplxguard
