#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "tvmerge/tensor.hpp"  // detail::Fnv1a

namespace tvmerge {

// NFC-normalize, case-fold, split on Unicode whitespace. The paper's own
// cleaning script is external; this is the minimal deterministic word
// segmentation WER is computed over.
inline std::vector<std::string> normalize_and_tokenize(const std::string& text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");
    icu::UnicodeString us = icu::UnicodeString::fromUTF8(text);
    icu::UnicodeString norm = nfc->normalize(us, status);
    if (U_FAILURE(status)) throw std::runtime_error("Unicode normalization failed");
    norm.foldCase();

    std::vector<std::string> tokens;
    icu::UnicodeString current;
    const auto flush = [&] {
        if (!current.isEmpty()) {
            std::string out;
            current.toUTF8String(out);
            tokens.push_back(std::move(out));
            current.remove();
        }
    };
    for (int32_t i = 0; i < norm.length();) {
        const UChar32 cp = norm.char32At(i);
        if (u_isUWhiteSpace(cp))
            flush();
        else
            current.append(cp);
        i = norm.moveIndex32(i, 1);
    }
    flush();
    return tokens;
}

// Word-level Levenshtein distance, unit costs.
inline std::size_t edit_distance(const std::vector<std::string>& ref,
                                 const std::vector<std::string>& hyp) {
    std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
    for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= ref.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= hyp.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[hyp.size()];
}

struct UtteranceResult {
    std::string id;
    std::size_t edits = 0;
    std::size_t ref_len = 0;
};

struct WerReport {
    std::size_t total_ref_words = 0;
    std::size_t total_edits = 0;
    double wer = 0.0;  // corpus aggregate: total edits / total reference words
    std::vector<UtteranceResult> per_utterance;

    nlohmann::json to_json() const {
        nlohmann::json per = nlohmann::json::array();
        for (const auto& u : per_utterance)
            per.push_back({{"id", u.id}, {"edits", u.edits}, {"ref_len", u.ref_len}});
        return {{"total_ref_words", total_ref_words},
                {"total_edits", total_edits},
                {"wer", wer},
                {"per_utterance", per}};
    }
};

using UtteranceList = std::vector<std::pair<std::string, std::string>>;  // (id, text)

inline WerReport wer(const UtteranceList& refs, const UtteranceList& hyps) {
    std::map<std::string, const std::string*> hyp_by_id;
    for (const auto& [id, text] : hyps) hyp_by_id[id] = &text;
    WerReport report;
    for (const auto& [id, text] : refs) {
        auto it = hyp_by_id.find(id);
        if (it == hyp_by_id.end()) throw std::runtime_error("missing hypothesis for id " + id);
        const auto ref_tokens = normalize_and_tokenize(text);
        const auto hyp_tokens = normalize_and_tokenize(*it->second);
        UtteranceResult u;
        u.id = id;
        u.edits = edit_distance(ref_tokens, hyp_tokens);
        u.ref_len = ref_tokens.size();
        report.total_edits += u.edits;
        report.total_ref_words += u.ref_len;
        report.per_utterance.push_back(std::move(u));
    }
    if (report.total_ref_words == 0)
        throw std::runtime_error("all references empty after tokenization");
    report.wer = static_cast<double>(report.total_edits) /
                 static_cast<double>(report.total_ref_words);
    return report;
}

struct ComparisonReport {
    double wer_target_only = 0.0;
    double wer_merged = 0.0;
    double delta_wer = 0.0;  // negative iff the merge improves
};

// A language's training data summarized as token counts over a shared
// vocabulary; the fingerprint pins the vocabulary two vectors are compared in.
struct TokenCountVector {
    std::map<std::string, std::uint64_t> counts;
    std::string vocab_fingerprint;
};

inline std::string vocabulary_fingerprint(const std::vector<std::string>& sorted_vocab) {
    detail::Fnv1a f;
    for (const auto& tok : sorted_vocab) {
        f.mix(tok.data(), tok.size());
        f.mix("\n", 1);
    }
    return f.hex();
}

// Build comparable count vectors for two corpora over their union vocabulary.
inline std::pair<TokenCountVector, TokenCountVector> token_count_pair(
    const std::vector<std::string>& corpus_a, const std::vector<std::string>& corpus_b) {
    TokenCountVector a, b;
    for (const auto& line : corpus_a)
        for (auto& tok : normalize_and_tokenize(line)) ++a.counts[tok];
    for (const auto& line : corpus_b)
        for (auto& tok : normalize_and_tokenize(line)) ++b.counts[tok];
    std::vector<std::string> vocab;
    for (const auto& [tok, n] : a.counts) vocab.push_back(tok);
    for (const auto& [tok, n] : b.counts) vocab.push_back(tok);
    std::sort(vocab.begin(), vocab.end());
    vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
    a.vocab_fingerprint = b.vocab_fingerprint = vocabulary_fingerprint(vocab);
    return {std::move(a), std::move(b)};
}

inline double cosine_similarity(const TokenCountVector& u, const TokenCountVector& v) {
    if (u.vocab_fingerprint != v.vocab_fingerprint)
        throw std::runtime_error("token-count vectors built over different vocabularies");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (const auto& [tok, cu] : u.counts) {
        nu += static_cast<double>(cu) * static_cast<double>(cu);
        auto it = v.counts.find(tok);
        if (it != v.counts.end()) dot += static_cast<double>(cu) * static_cast<double>(it->second);
    }
    for (const auto& [tok, cv] : v.counts)
        nv += static_cast<double>(cv) * static_cast<double>(cv);
    if (nu == 0.0 || nv == 0.0) throw std::runtime_error("zero token-count vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

namespace detail {

// Regularized incomplete beta via continued fraction (Lentz's method).
inline double betacf(double a, double b, double x) {
    constexpr int max_iter = 200;
    constexpr double eps = 3e-14, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return h;
}

inline double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double lnbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(lnbeta);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) +
                          b * std::log(1.0 - x) + a * std::log(x)) *
                     betacf(b, a, 1.0 - x) / b;
}

// Two-sided p-value for the t statistic with df degrees of freedom.
inline double t_pvalue(double t, double df) {
    return incbeta(df / 2.0, 0.5, df / (df + t * t));
}

inline void check_corr_inputs(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::runtime_error("correlation inputs differ in length");
    if (xs.size() < 3) throw std::runtime_error("correlation needs at least 3 points");
}

}  // namespace detail

struct Correlation {
    double r = 0.0;
    double p = 1.0;
};

inline Correlation pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    detail::check_corr_inputs(xs, ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw std::runtime_error("degenerate variance in correlation");
    Correlation c;
    c.r = sxy / std::sqrt(sxx * syy);
    const double df = n - 2.0;
    const double denom = 1.0 - c.r * c.r;
    c.p = denom <= 0.0 ? 0.0 : detail::t_pvalue(c.r * std::sqrt(df / denom), df);
    return c;
}

// Average ranks (ties get the mean of the ranks they span).
inline std::vector<double> average_ranks(const std::vector<double>& xs) {
    std::vector<std::size_t> order(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

inline Correlation spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    detail::check_corr_inputs(xs, ys);
    return pearson(average_ranks(xs), average_ranks(ys));
}

}  // namespace tvmerge
