#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include <json.hpp>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "tvmerge/metrics.hpp"
#include "tvmerge/tsv.hpp"

namespace tvmerge {

enum class ManifestKind { SCRIPTED, SPONTANEOUS };

struct SampleRecord {
    std::string id;
    std::string audio_path;
    double duration_s = 0.0;
    std::string transcript;
    std::int64_t up_votes = 0;
    std::int64_t down_votes = 0;
    std::optional<std::int64_t> single_votes;  // spontaneous-speech variant
    bool flagged = false;
    // truncation annotations
    double effective_duration_s = 0.0;
    bool truncated = false;
};

struct Manifest {
    std::string language;
    ManifestKind kind = ManifestKind::SCRIPTED;
    std::vector<SampleRecord> records;
};

// up - down for scripted speech, the single vote count for spontaneous.
inline std::int64_t vote_score(const SampleRecord& r, ManifestKind kind) {
    if (kind == ManifestKind::SPONTANEOUS) {
        if (!r.single_votes) throw std::runtime_error("record " + r.id + " has no votes field");
        return *r.single_votes;
    }
    return r.up_votes - r.down_votes;
}

// Drop annotator-flagged records, zero-length audio, and transcripts that are
// empty after normalization.
inline Manifest filter_samples(const Manifest& m) {
    Manifest out;
    out.language = m.language;
    out.kind = m.kind;
    for (const auto& r : m.records) {
        if (r.flagged) continue;
        if (r.duration_s <= 0.0) continue;
        if (normalize_and_tokenize(r.transcript).empty()) continue;
        out.records.push_back(r);
    }
    return out;
}

// v+1 copies per record, v = vote score clamped at 0 (unvoted and
// downvoted samples are both retained exactly once).
inline Manifest upsample(const Manifest& m) {
    Manifest out;
    out.language = m.language;
    out.kind = m.kind;
    for (const auto& r : m.records) {
        const std::int64_t v = std::max<std::int64_t>(vote_score(r, m.kind), 0);
        for (std::int64_t i = 0; i <= v; ++i) out.records.push_back(r);
    }
    return out;
}

// Uniform seeded subset of exactly `cap` records, original order preserved
// (selection sampling; deterministic for a given seed).
inline Manifest cap_manifest(const Manifest& m, std::size_t cap, std::uint64_t seed) {
    if (cap < 1) throw std::runtime_error("cap must be positive");
    if (m.records.size() <= cap) return m;
    Manifest out;
    out.language = m.language;
    out.kind = m.kind;
    std::mt19937_64 rng(seed);
    std::size_t need = cap;
    std::size_t remaining = m.records.size();
    for (const auto& r : m.records) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        if (u * static_cast<double>(remaining) < static_cast<double>(need)) {
            out.records.push_back(r);
            --need;
        }
        --remaining;
        if (need == 0) break;
    }
    return out;
}

// Whisper's input window: audio past the limit is marked truncated; the audio
// slicing itself happens in the external training/eval stack.
inline Manifest flag_truncation(const Manifest& m, double limit_s = 30.0) {
    Manifest out = m;
    for (auto& r : out.records) {
        if (r.duration_s > limit_s) {
            r.effective_duration_s = limit_s;
            r.truncated = true;
        } else if (!r.truncated) {
            r.effective_duration_s = r.duration_s;
        }
    }
    return out;
}

// --- transcript cleaning -------------------------------------------------

struct CleanRule {
    // Either a named builtin or a regex (pattern, replacement) pair.
    std::string builtin;  // "strip_control" | "collapse_ws" | "nfc" | "trim"
    std::string pattern;
    std::string replacement;
};

inline std::vector<CleanRule> default_clean_rules() {
    return {{"strip_control", "", ""},
            {"collapse_ws", "", ""},
            {"nfc", "", ""},
            {"trim", "", ""}};
}

namespace detail {

inline std::string apply_builtin_rule(const std::string& name, const std::string& text) {
    if (name == "nfc") {
        UErrorCode status = U_ZERO_ERROR;
        const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
        icu::UnicodeString us = icu::UnicodeString::fromUTF8(text);
        icu::UnicodeString norm = nfc->normalize(us, status);
        if (U_FAILURE(status)) throw std::runtime_error("Unicode normalization failed");
        std::string out;
        norm.toUTF8String(out);
        return out;
    }
    icu::UnicodeString us = icu::UnicodeString::fromUTF8(text);
    icu::UnicodeString result;
    if (name == "strip_control") {
        // control characters become spaces so adjoining words stay separate
        for (int32_t i = 0; i < us.length(); i = us.moveIndex32(i, 1)) {
            const UChar32 cp = us.char32At(i);
            result.append(u_charType(cp) == U_CONTROL_CHAR ? UChar32(' ') : cp);
        }
    } else if (name == "collapse_ws") {
        bool in_ws = false;
        for (int32_t i = 0; i < us.length(); i = us.moveIndex32(i, 1)) {
            const UChar32 cp = us.char32At(i);
            if (u_isUWhiteSpace(cp)) {
                if (!in_ws) result.append(UChar32(' '));
                in_ws = true;
            } else {
                result.append(cp);
                in_ws = false;
            }
        }
    } else if (name == "trim") {
        int32_t begin = 0, end = us.length();
        while (begin < end && u_isUWhiteSpace(us.char32At(begin))) begin = us.moveIndex32(begin, 1);
        while (end > begin) {
            const int32_t prev = us.moveIndex32(end, -1);
            if (!u_isUWhiteSpace(us.char32At(prev))) break;
            end = prev;
        }
        result = us.tempSubStringBetween(begin, end);
    } else {
        throw std::runtime_error("unknown builtin cleaning rule: " + name);
    }
    std::string out;
    result.toUTF8String(out);
    return out;
}

}  // namespace detail

inline std::string clean_transcript(const std::string& text,
                                    const std::vector<CleanRule>& rules) {
    std::string s = text;
    for (const auto& rule : rules) {
        if (!rule.builtin.empty()) {
            s = detail::apply_builtin_rule(rule.builtin, s);
        } else {
            try {
                s = std::regex_replace(s, std::regex(rule.pattern), rule.replacement);
            } catch (const std::regex_error& e) {
                throw std::runtime_error("invalid cleaning pattern \"" + rule.pattern +
                                         "\": " + e.what());
            }
        }
    }
    return s;
}

inline std::string clean_transcript(const std::string& text) {
    return clean_transcript(text, default_clean_rules());
}

// Ruleset file: JSON array of {"builtin": name} or {"pattern", "replacement"}.
inline std::vector<CleanRule> load_clean_rules(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open ruleset " + path.string());
    nlohmann::json j;
    in >> j;
    if (!j.is_array()) throw std::runtime_error("ruleset must be a JSON array");
    std::vector<CleanRule> rules;
    for (const auto& entry : j) {
        CleanRule r;
        if (entry.contains("builtin")) {
            r.builtin = entry.at("builtin").get<std::string>();
        } else {
            r.pattern = entry.at("pattern").get<std::string>();
            r.replacement = entry.at("replacement").get<std::string>();
        }
        rules.push_back(std::move(r));
    }
    return rules;
}

// --- manifest I/O ---------------------------------------------------------

// Header-driven TSV: columns id, path, duration, sentence, and either
// up_votes/down_votes (scripted) or votes (spontaneous); optional flags.
inline Manifest read_manifest_tsv(const std::filesystem::path& path,
                                  const std::string& language = "") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty manifest " + path.string());
    const auto header = split_tsv_line(strip_cr(line));
    auto col = [&](const std::string& name) -> int {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    };
    const int c_id = col("id"), c_path = col("path"), c_dur = col("duration");
    const int c_text = col("sentence"), c_up = col("up_votes"), c_down = col("down_votes");
    const int c_votes = col("votes"), c_flags = col("flags");
    if (c_id < 0 || c_dur < 0 || c_text < 0)
        throw std::runtime_error("manifest header must name id, duration, sentence columns");
    if (c_votes < 0 && (c_up < 0 || c_down < 0))
        throw std::runtime_error("manifest header must name votes or up_votes/down_votes");

    Manifest m;
    m.language = language;
    m.kind = c_votes >= 0 ? ManifestKind::SPONTANEOUS : ManifestKind::SCRIPTED;
    while (std::getline(in, line)) {
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_tsv_line(line);
        auto field = [&](int c) -> std::string {
            return c >= 0 && c < static_cast<int>(fields.size()) ? fields[c] : "";
        };
        SampleRecord r;
        r.id = field(c_id);
        r.audio_path = field(c_path);
        r.duration_s = field(c_dur).empty() ? 0.0 : std::stod(field(c_dur));
        r.effective_duration_s = r.duration_s;
        r.transcript = field(c_text);
        if (m.kind == ManifestKind::SPONTANEOUS) {
            const std::string v = field(c_votes);
            r.single_votes = v.empty() ? 0 : std::stoll(v);
        } else {
            r.up_votes = field(c_up).empty() ? 0 : std::stoll(field(c_up));
            r.down_votes = field(c_down).empty() ? 0 : std::stoll(field(c_down));
        }
        const std::string flags = field(c_flags);
        r.flagged = !(flags.empty() || flags == "0" || flags == "false");
        m.records.push_back(std::move(r));
    }
    return m;
}

inline nlohmann::json record_to_json(const SampleRecord& r, ManifestKind kind) {
    nlohmann::json j = {{"id", r.id},
                        {"audio_path", r.audio_path},
                        {"duration_s", r.duration_s},
                        {"transcript", r.transcript},
                        {"flagged", r.flagged}};
    if (kind == ManifestKind::SPONTANEOUS) {
        j["votes"] = r.single_votes.value_or(0);
    } else {
        j["up_votes"] = r.up_votes;
        j["down_votes"] = r.down_votes;
    }
    if (r.truncated) {
        j["effective_duration_s"] = r.effective_duration_s;
        j["truncated"] = true;
    }
    return j;
}

inline void write_manifest_jsonl(const Manifest& m, std::ostream& out) {
    for (const auto& r : m.records) out << record_to_json(r, m.kind).dump() << "\n";
}

inline void write_manifest_jsonl(const Manifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_manifest_jsonl(m, out);
}

inline Manifest read_manifest_jsonl(const std::filesystem::path& path,
                                    const std::string& language = "") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    Manifest m;
    m.language = language;
    bool kind_known = false;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        SampleRecord r;
        r.id = j.at("id").get<std::string>();
        r.audio_path = j.value("audio_path", "");
        r.duration_s = j.value("duration_s", 0.0);
        r.transcript = j.value("transcript", "");
        r.flagged = j.value("flagged", false);
        if (j.contains("votes")) {
            r.single_votes = j.at("votes").get<std::int64_t>();
            if (!kind_known) m.kind = ManifestKind::SPONTANEOUS;
        } else {
            r.up_votes = j.value("up_votes", std::int64_t{0});
            r.down_votes = j.value("down_votes", std::int64_t{0});
        }
        kind_known = true;
        r.truncated = j.value("truncated", false);
        r.effective_duration_s = j.value("effective_duration_s", r.duration_s);
        m.records.push_back(std::move(r));
    }
    return m;
}

// Sniff JSONL vs TSV by the first byte.
inline Manifest load_manifest(const std::filesystem::path& path,
                              const std::string& language = "") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const int first = in.peek();
    in.close();
    if (first == '{') return read_manifest_jsonl(path, language);
    return read_manifest_tsv(path, language);
}

}  // namespace tvmerge
