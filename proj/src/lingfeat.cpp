#include "psycode/lingfeat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "psycode/common.hpp"

namespace psycode::lingfeat {

namespace {

struct CodePoint {
    char32_t cp;
    std::size_t begin;  // byte offset
    std::size_t end;
};

std::vector<CodePoint> decode_utf8(std::string_view s) {
    std::vector<CodePoint> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const auto b0 = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        char32_t cp = 0xFFFD;
        if (b0 < 0x80) {
            cp = b0;
        } else if ((b0 >> 5) == 0x6) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 >> 4) == 0xE) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 >> 3) == 0x1E) {
            len = 4;
            cp = b0 & 0x07;
        } else {
            len = 0;  // stray continuation byte
        }
        bool ok = len > 0 && i + len <= s.size();
        for (std::size_t k = 1; ok && k < len; ++k) {
            const auto b = static_cast<unsigned char>(s[i + k]);
            if ((b >> 6) != 0x2) {
                ok = false;
            } else {
                cp = (cp << 6) | (b & 0x3F);
            }
        }
        if (!ok) {
            out.push_back({0xFFFD, i, i + 1});
            ++i;
            continue;
        }
        out.push_back({cp, i, i + len});
        i += len;
    }
    return out;
}

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

bool is_space(char32_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' || c == 0xA0 ||
           c == 0x2028 || c == 0x2029 || c == 0x3000 || (c >= 0x2000 && c <= 0x200A);
}

bool is_regional_indicator(char32_t c) { return c >= 0x1F1E6 && c <= 0x1F1FF; }

bool is_emoji_base(char32_t c) {
    return (c >= 0x1F000 && c <= 0x1FAFF) || (c >= 0x2600 && c <= 0x27BF) ||
           (c >= 0x2300 && c <= 0x23FF) || (c >= 0x2B00 && c <= 0x2BFF) || c == 0x3030 ||
           c == 0x303D || c == 0x3297 || c == 0x3299;
}

bool is_emoji_modifier(char32_t c) {
    return (c >= 0x1F3FB && c <= 0x1F3FF) || c == 0xFE0F || c == 0xFE0E || c == 0x20E3 ||
           (c >= 0xE0020 && c <= 0xE007F);
}

constexpr char32_t kZwj = 0x200D;

bool is_ascii_alnum(char32_t c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

// General punctuation block and Latin-1 symbols are punctuation; other
// non-ASCII code points (letters of any script) are word characters.
bool is_unicode_punct(char32_t c) {
    return (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
           (c >= 0xA1 && c <= 0xBF && c != 0xAA && c != 0xB5 && c != 0xBA) || c == 0xD7 ||
           c == 0xF7 || (c >= 0x3001 && c <= 0x3003) || c == 0xFFFD;
}

bool is_word_char(char32_t c) {
    if (is_ascii_alnum(c) || c == '_') return true;
    if (c < 0x80) return false;
    return !is_space(c) && !is_emoji_base(c) && !is_emoji_modifier(c) && !is_regional_indicator(c) &&
           !is_unicode_punct(c) && c != kZwj;
}

bool is_apostrophe(char32_t c) { return c == '\'' || c == 0x2019; }

char32_t lower(char32_t c) {
    if (c >= 'A' && c <= 'Z') return c + 32;
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
    return c;
}

bool starts_with_ci(const std::vector<CodePoint>& cps, std::size_t i, std::string_view prefix) {
    if (i + prefix.size() > cps.size()) return false;
    for (std::size_t k = 0; k < prefix.size(); ++k) {
        if (lower(cps[i + k].cp) != static_cast<char32_t>(prefix[k])) return false;
    }
    return true;
}

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
    const auto cps = decode_utf8(text);
    std::vector<Token> out;
    const std::size_t n = cps.size();
    std::size_t i = 0;
    auto slice = [&](std::size_t a, std::size_t b) {
        return std::string(text.substr(cps[a].begin, cps[b - 1].end - cps[a].begin));
    };
    while (i < n) {
        const char32_t c = cps[i].cp;
        if (is_space(c)) {
            ++i;
            continue;
        }
        // Links and already-normalized link placeholders.
        if (starts_with_ci(cps, i, "http://") || starts_with_ci(cps, i, "https://") ||
            starts_with_ci(cps, i, "www.")) {
            while (i < n && !is_space(cps[i].cp)) ++i;
            out.push_back({std::string(kUrlToken), TokenKind::url});
            continue;
        }
        if (starts_with_ci(cps, i, kUrlToken)) {
            i += kUrlToken.size();
            out.push_back({std::string(kUrlToken), TokenKind::url});
            continue;
        }
        if (c == '@' && i + 1 < n && (is_ascii_alnum(cps[i + 1].cp) || cps[i + 1].cp == '_')) {
            ++i;
            while (i < n && (is_ascii_alnum(cps[i].cp) || cps[i].cp == '_')) ++i;
            out.push_back({std::string(kMentionToken), TokenKind::mention});
            continue;
        }
        if (is_regional_indicator(c)) {
            const std::size_t start = i++;
            if (i < n && is_regional_indicator(cps[i].cp)) ++i;
            out.push_back({slice(start, i), TokenKind::emoji});
            continue;
        }
        const bool keycap_base = (c == '#' || c == '*' || (c >= '0' && c <= '9')) && i + 1 < n &&
                                 (cps[i + 1].cp == 0x20E3 ||
                                  (cps[i + 1].cp == 0xFE0F && i + 2 < n && cps[i + 2].cp == 0x20E3));
        if (is_emoji_base(c) || keycap_base) {
            const std::size_t start = i++;
            for (;;) {
                while (i < n && is_emoji_modifier(cps[i].cp)) ++i;
                if (i + 1 < n && cps[i].cp == kZwj && is_emoji_base(cps[i + 1].cp)) {
                    i += 2;
                    continue;
                }
                break;
            }
            out.push_back({slice(start, i), TokenKind::emoji});
            continue;
        }
        const bool hashtag = c == '#' && i + 1 < n && is_word_char(cps[i + 1].cp);
        if (is_word_char(c) || hashtag) {
            std::string word;
            append_utf8(word, lower(c));
            ++i;
            while (i < n) {
                const char32_t d = cps[i].cp;
                if (is_word_char(d)) {
                    append_utf8(word, lower(d));
                    ++i;
                } else if (is_apostrophe(d) && i + 1 < n && is_word_char(cps[i + 1].cp)) {
                    word.push_back('\'');
                    ++i;
                } else {
                    break;
                }
            }
            out.push_back({std::move(word), TokenKind::word});
            continue;
        }
        if (c == kZwj || is_emoji_modifier(c)) {
            ++i;  // orphan joiner or modifier
            continue;
        }
        out.push_back({slice(i, i + 1), TokenKind::punct});
        ++i;
    }
    return out;
}

std::string detokenize(std::span<const Token> tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += tokens[i].surface;
    }
    return out;
}

std::vector<std::string> surfaces(std::span<const Token> tokens) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.surface);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string trim(std::string_view s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return std::string(s.substr(a, b - a));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double parse_double(const std::string& s, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("line " + std::to_string(line_no) + ": bad number '" + s + "'");
    }
}

std::string lowercase_word(std::string_view s) {
    const auto toks = tokenize(s);
    if (toks.size() == 1) return toks[0].surface;
    return trim(s);
}

}  // namespace

Dal parse_dal(std::string_view csv) {
    Dal dal;
    std::istringstream in{std::string(csv)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 4) {
            throw ValidationError("DAL line " + std::to_string(line_no) + ": expected 4 fields");
        }
        if (line_no == 1 && trim(f[0]) == "word") continue;
        DalEntry e;
        e.word = lowercase_word(trim(f[0]));
        e.pleasantness = parse_double(trim(f[1]), line_no);
        e.activation = parse_double(trim(f[2]), line_no);
        e.imagery = parse_double(trim(f[3]), line_no);
        if (!dal.emplace(e.word, e).second) {
            throw ValidationError("DAL line " + std::to_string(line_no) + ": duplicate word '" +
                                  e.word + "'");
        }
    }
    return dal;
}

Dal load_dal(const std::string& path) { return parse_dal(read_file(path)); }

Phrasebook parse_phrasebook(std::string_view csv, const Dal* dal, std::vector<std::string>* warnings) {
    Phrasebook pb;
    std::istringstream in{std::string(csv)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 2) {
            throw ValidationError("phrasebook line " + std::to_string(line_no) + ": expected 2 fields");
        }
        if (line_no == 1 && trim(f[0]) == "token") continue;
        const auto src_tokens = tokenize(trim(f[0]));
        if (src_tokens.size() != 1) {
            throw ValidationError("phrasebook line " + std::to_string(line_no) +
                                  ": source must be a single token");
        }
        std::vector<std::string> targets;
        for (const auto& t : tokenize(f[1])) {
            if (dal != nullptr && warnings != nullptr && !dal->contains(t.surface)) {
                warnings->push_back("phrasebook target '" + t.surface + "' not in DAL");
            }
            targets.push_back(t.surface);
        }
        pb[src_tokens[0].surface] = std::move(targets);
    }
    return pb;
}

Phrasebook load_phrasebook(const std::string& path, const Dal* dal, std::vector<std::string>* warnings) {
    return parse_phrasebook(read_file(path), dal, warnings);
}

std::array<double, kDalDims> dal_vector(std::span<const Token> tokens, const Dal& dal,
                                        const Phrasebook& phrasebook) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::array<double, kDalDims> out{inf, -inf, inf, -inf, inf, -inf};
    bool any = false;
    auto take = [&](const DalEntry& e) {
        any = true;
        const std::array<double, 3> s{e.pleasantness, e.activation, e.imagery};
        for (std::size_t d = 0; d < 3; ++d) {
            out[2 * d] = std::min(out[2 * d], s[d]);
            out[2 * d + 1] = std::max(out[2 * d + 1], s[d]);
        }
    };
    for (const auto& tok : tokens) {
        if (auto it = dal.find(tok.surface); it != dal.end()) {
            take(it->second);
            continue;
        }
        if (auto pit = phrasebook.find(tok.surface); pit != phrasebook.end()) {
            for (const auto& w : pit->second) {
                if (auto it = dal.find(w); it != dal.end()) take(it->second);
            }
        }
    }
    if (!any) out.fill(0.0);
    return out;
}

// ---------------------------------------------------------------------------

std::string NgramKey::to_string() const {
    return std::string(channel == Channel::token ? "tok" : "pos") + std::to_string(n) + ":" + text;
}

std::optional<std::size_t> NgramVocab::find(const NgramKey& key) const {
    if (auto it = columns_.find(key); it != columns_.end()) return it->second;
    return std::nullopt;
}

std::vector<NgramKey> NgramVocab::keys_in_column_order() const {
    std::vector<NgramKey> keys(columns_.size());
    for (const auto& [k, col] : columns_) keys[col] = k;
    return keys;
}

std::vector<NgramKey> extract_ngrams(std::span<const Token> tokens, const PosTags* pos_tags) {
    std::vector<NgramKey> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        out.push_back({Channel::token, 1, tokens[i].surface});
        if (i + 1 < tokens.size()) {
            out.push_back({Channel::token, 2, tokens[i].surface + " " + tokens[i + 1].surface});
        }
    }
    if (pos_tags != nullptr) {
        if (pos_tags->size() != tokens.size()) {
            throw ValidationError("pos_tags do not align with tokens");
        }
        std::vector<std::string> units;
        units.reserve(tokens.size());
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            units.push_back(tokens[i].surface + "/" + (*pos_tags)[i].second);
        }
        for (std::size_t i = 0; i < units.size(); ++i) {
            out.push_back({Channel::pos, 1, units[i]});
            if (i + 1 < units.size()) out.push_back({Channel::pos, 2, units[i] + " " + units[i + 1]});
        }
    }
    return out;
}

NgramVocab build_vocab(std::span<const VocabDocument> docs, std::size_t min_df) {
    std::map<NgramKey, std::size_t> df;
    for (const auto& doc : docs) {
        auto grams = extract_ngrams(doc.tokens, doc.pos_tags);
        std::sort(grams.begin(), grams.end());
        grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
        for (auto& g : grams) ++df[std::move(g)];
    }
    std::map<NgramKey, std::size_t> columns;
    std::size_t next = 0;
    for (auto& [key, count] : df) {
        if (count >= std::max<std::size_t>(min_df, 1)) columns.emplace(key, next++);
    }
    return NgramVocab(std::move(columns));
}

SparseVector ngram_vector(std::span<const Token> tokens, const PosTags* pos_tags,
                          const NgramVocab& vocab, bool binary) {
    std::map<std::size_t, double> counts;
    for (const auto& g : extract_ngrams(tokens, pos_tags)) {
        if (auto col = vocab.find(g)) counts[*col] += 1.0;
    }
    SparseVector v;
    v.dim = vocab.size();
    for (const auto& [col, c] : counts) {
        v.indices.push_back(static_cast<std::uint32_t>(col));
        v.values.push_back(binary ? 1.0 : c);
    }
    return v;
}

SparseVector LinguisticFeaturizer::featurize(std::span<const Token> tokens,
                                             const PosTags* pos_tags) const {
    SparseVector v = ngram_vector(tokens, pos_tags, vocab, binary_ngrams);
    v.dim = dim();
    static const Dal kEmptyDal;
    static const Phrasebook kEmptyPhrasebook;
    const auto affect = dal_vector(tokens, dal != nullptr ? *dal : kEmptyDal,
                                   phrasebook != nullptr ? *phrasebook : kEmptyPhrasebook);
    for (std::size_t d = 0; d < kDalDims; ++d) {
        if (affect[d] != 0.0) {
            v.indices.push_back(static_cast<std::uint32_t>(vocab.size() + d));
            v.values.push_back(affect[d]);
        }
    }
    return v;
}

std::vector<std::string> LinguisticFeaturizer::column_names() const {
    std::vector<std::string> names;
    for (const auto& k : vocab.keys_in_column_order()) names.push_back(k.to_string());
    for (const char* n : {"dal:pleasantness_min", "dal:pleasantness_max", "dal:activation_min",
                          "dal:activation_max", "dal:imagery_min", "dal:imagery_max"}) {
        names.emplace_back(n);
    }
    return names;
}

}  // namespace psycode::lingfeat
