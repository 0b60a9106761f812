#include "belab/bpe.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <queue>
#include <set>

#include <nlohmann/json.hpp>

namespace belab {

namespace {

// Bytes that map to their own code point; the rest are relocated above 255
// so every byte has a printable, whitespace-free representation.
bool self_mapped(int b) {
    return (b >= 0x21 && b <= 0x7E) || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
}

const std::array<char32_t, kByteAlphabet>& byte_map() {
    static const auto table = [] {
        std::array<char32_t, kByteAlphabet> t{};
        char32_t next = 256;
        for (int b = 0; b < 256; ++b) t[b] = self_mapped(b) ? static_cast<char32_t>(b) : next++;
        return t;
    }();
    return table;
}

std::string encode_utf8(char32_t cp) {
    std::string out;
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return out;
}

char32_t decode_utf8_at(std::string_view s, std::size_t& i) {
    auto b0 = static_cast<unsigned char>(s[i]);
    if (b0 < 0x80) {
        i += 1;
        return b0;
    }
    if ((b0 & 0xE0) == 0xC0 && i + 1 < s.size()) {
        char32_t cp = (b0 & 0x1F) << 6 | (static_cast<unsigned char>(s[i + 1]) & 0x3F);
        i += 2;
        return cp;
    }
    if ((b0 & 0xF0) == 0xE0 && i + 2 < s.size()) {
        char32_t cp = (b0 & 0x0F) << 12 | (static_cast<unsigned char>(s[i + 1]) & 0x3F) << 6 |
                      (static_cast<unsigned char>(s[i + 2]) & 0x3F);
        i += 3;
        return cp;
    }
    throw DataError("malformed UTF-8 in token string");
}

using Pair = std::pair<std::int32_t, std::int32_t>;

struct PairHash {
    std::size_t operator()(const Pair& p) const {
        std::uint64_t k = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.first)) << 32) |
                          static_cast<std::uint32_t>(p.second);
        return static_cast<std::size_t>(splitmix_mix(k));
    }
    static std::uint64_t splitmix_mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }
};

struct HeapEntry {
    std::int64_t count;
    std::string left, right;
    Pair pair;
};

// Max by count; equal counts prefer the lexicographically smaller pair.
struct HeapLess {
    bool operator()(const HeapEntry& a, const HeapEntry& b) const {
        if (a.count != b.count) return a.count < b.count;
        return std::tie(a.left, a.right) > std::tie(b.left, b.right);
    }
};

TokenizerModel base_model() {
    TokenizerModel m;
    m.id_to_token.reserve(kNumSpecials + kByteAlphabet);
    for (const auto& s : special_tokens()) m.id_to_token.push_back(s);
    for (int b = 0; b < 256; ++b) m.id_to_token.push_back(byte_to_unicode(static_cast<unsigned char>(b)));
    for (std::size_t id = 0; id < m.id_to_token.size(); ++id) {
        m.token_id.emplace(m.id_to_token[id], static_cast<std::int32_t>(id));
    }
    return m;
}

std::vector<std::int32_t> byte_symbols(std::string_view raw_piece) {
    std::vector<std::int32_t> syms;
    syms.reserve(raw_piece.size());
    for (unsigned char c : raw_piece) {
        syms.push_back(static_cast<std::int32_t>(kNumSpecials) + c);
    }
    return syms;
}

// Replaces every (left, right) occurrence left to right with merged.
std::vector<std::int32_t> apply_merge(const std::vector<std::int32_t>& syms, std::int32_t left,
                                      std::int32_t right, std::int32_t merged) {
    std::vector<std::int32_t> out;
    out.reserve(syms.size());
    std::size_t i = 0;
    while (i < syms.size()) {
        if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
            out.push_back(merged);
            i += 2;
        } else {
            out.push_back(syms[i]);
            i += 1;
        }
    }
    return out;
}

}  // namespace

const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> specials{"<s>", "</s>", "<pad>", "<unk>", "<mask>"};
    return specials;
}

std::string byte_to_unicode(unsigned char b) { return encode_utf8(byte_map()[b]); }

std::string map_bytes(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (unsigned char c : raw) out += encode_utf8(byte_map()[c]);
    return out;
}

std::string unmap_bytes(std::string_view mapped) {
    static const auto inverse = [] {
        std::unordered_map<char32_t, unsigned char> inv;
        for (int b = 0; b < 256; ++b) inv.emplace(byte_map()[b], static_cast<unsigned char>(b));
        return inv;
    }();
    std::string out;
    out.reserve(mapped.size());
    std::size_t i = 0;
    while (i < mapped.size()) {
        char32_t cp = decode_utf8_at(mapped, i);
        auto it = inverse.find(cp);
        if (it == inverse.end()) throw DataError("token string contains an unmapped code point");
        out.push_back(static_cast<char>(it->second));
    }
    return out;
}

std::vector<std::string_view> pretokenize(std::string_view text) {
    std::vector<std::string_view> pieces;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        if (text[i] == ' ' && i + 1 < n && !is_ascii_space(text[i + 1])) {
            std::size_t j = i + 1;
            while (j < n && !is_ascii_space(text[j])) ++j;
            pieces.push_back(text.substr(i, j - i));
            i = j;
        } else if (is_ascii_space(text[i])) {
            std::size_t j = i;
            while (j < n && is_ascii_space(text[j])) ++j;
            // A trailing single space binds to the following word instead.
            if (j < n && text[j - 1] == ' ') --j;
            if (j > i) pieces.push_back(text.substr(i, j - i));
            i = j;
        } else {
            std::size_t j = i;
            while (j < n && !is_ascii_space(text[j])) ++j;
            pieces.push_back(text.substr(i, j - i));
            i = j;
        }
    }
    return pieces;
}

TokenizerModel train_bpe(const std::vector<std::string>& corpus_lines, std::size_t vocab_size) {
    if (vocab_size < kNumSpecials + kByteAlphabet) {
        throw UsageError("vocab size must be at least " +
                         std::to_string(kNumSpecials + kByteAlphabet));
    }
    std::unordered_map<std::string, std::int64_t> piece_counts;
    for (const auto& line : corpus_lines) {
        for (auto piece : pretokenize(line)) piece_counts[std::string(piece)]++;
    }
    if (piece_counts.empty()) throw DataError("tokenizer training needs a non-empty corpus");

    TokenizerModel model = base_model();

    struct Word {
        std::vector<std::int32_t> syms;
        std::int64_t count;
    };
    std::vector<std::pair<std::string, std::int64_t>> ordered(piece_counts.begin(),
                                                              piece_counts.end());
    std::sort(ordered.begin(), ordered.end());
    std::vector<Word> words;
    words.reserve(ordered.size());
    for (auto& [piece, count] : ordered) words.push_back({byte_symbols(piece), count});

    std::unordered_map<Pair, std::int64_t, PairHash> pair_counts;
    std::unordered_map<Pair, std::set<std::uint32_t>, PairHash> pair_words;
    for (std::uint32_t w = 0; w < words.size(); ++w) {
        const auto& syms = words[w].syms;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            Pair p{syms[i], syms[i + 1]};
            pair_counts[p] += words[w].count;
            pair_words[p].insert(w);
        }
    }

    std::priority_queue<HeapEntry, std::vector<HeapEntry>, HeapLess> heap;
    auto push_pair = [&](const Pair& p, std::int64_t count) {
        heap.push({count, model.id_to_token[p.first], model.id_to_token[p.second], p});
    };
    for (const auto& [p, c] : pair_counts) push_pair(p, c);

    while (model.id_to_token.size() < vocab_size && !heap.empty()) {
        HeapEntry top = heap.top();
        heap.pop();
        auto it = pair_counts.find(top.pair);
        if (it == pair_counts.end() || it->second != top.count) continue;  // stale entry
        if (top.count < 2) break;

        auto merged_id = static_cast<std::int32_t>(model.id_to_token.size());
        std::string merged_tok = top.left + top.right;
        model.id_to_token.push_back(merged_tok);
        model.token_id.emplace(merged_tok, merged_id);
        model.merges.emplace_back(top.left, top.right);

        std::set<std::uint32_t> affected = pair_words[top.pair];
        std::set<Pair> touched;
        for (std::uint32_t w : affected) {
            Word& word = words[w];
            for (std::size_t i = 0; i + 1 < word.syms.size(); ++i) {
                Pair p{word.syms[i], word.syms[i + 1]};
                pair_counts[p] -= word.count;
                touched.insert(p);
            }
            word.syms = apply_merge(word.syms, top.pair.first, top.pair.second, merged_id);
            for (std::size_t i = 0; i + 1 < word.syms.size(); ++i) {
                Pair p{word.syms[i], word.syms[i + 1]};
                pair_counts[p] += word.count;
                pair_words[p].insert(w);
                touched.insert(p);
            }
        }
        for (const Pair& p : touched) {
            auto cit = pair_counts.find(p);
            if (cit == pair_counts.end()) continue;
            if (cit->second <= 0) {
                pair_counts.erase(cit);
                pair_words.erase(p);
            } else {
                push_pair(p, cit->second);
            }
        }
    }
    return model;
}

TokenSequence encode(const TokenizerModel& model, std::string_view text, EncodeCache* cache) {
    EncodeCache local;
    EncodeCache& c = cache ? *cache : local;
    if (!c.primed) {
        c.merge_rank.reserve(model.merges.size());
        for (std::size_t r = 0; r < model.merges.size(); ++r) {
            const auto& [l, rgt] = model.merges[r];
            auto key = (static_cast<std::uint64_t>(model.token_id.at(l)) << 32) |
                       static_cast<std::uint32_t>(model.token_id.at(rgt));
            c.merge_rank.emplace(key, static_cast<std::int32_t>(r));
        }
        c.primed = true;
    }

    TokenSequence out;
    out.has_bos = out.has_eos = true;
    out.ids.push_back(kBosId);
    for (auto piece : pretokenize(text)) {
        auto key = std::string(piece);
        auto hit = c.pieces.find(key);
        if (hit == c.pieces.end()) {
            std::vector<std::int32_t> syms = byte_symbols(piece);
            // Lowest-rank adjacent pair first reproduces in-order merge replay.
            while (syms.size() > 1) {
                std::int32_t best_rank = -1;
                for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                    auto key = (static_cast<std::uint64_t>(syms[i]) << 32) |
                               static_cast<std::uint32_t>(syms[i + 1]);
                    auto it = c.merge_rank.find(key);
                    if (it != c.merge_rank.end() && (best_rank < 0 || it->second < best_rank)) {
                        best_rank = it->second;
                    }
                }
                if (best_rank < 0) break;
                const auto& [l, r] = model.merges[static_cast<std::size_t>(best_rank)];
                syms = apply_merge(syms, model.token_id.at(l), model.token_id.at(r),
                                   model.token_id.at(l + r));
            }
            hit = c.pieces.emplace(std::move(key), std::move(syms)).first;
        }
        out.ids.insert(out.ids.end(), hit->second.begin(), hit->second.end());
    }
    out.ids.push_back(kEosId);
    return out;
}

std::string decode(const TokenizerModel& model, const std::vector<std::int32_t>& ids) {
    std::string mapped;
    for (std::int32_t id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= model.vocab_size()) {
            throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(model.vocab_size()));
        }
        if (model.is_special(id)) continue;
        mapped += model.id_to_token[static_cast<std::size_t>(id)];
    }
    return unmap_bytes(mapped);
}

void save_tokenizer(const TokenizerModel& model, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json vocab = nlohmann::json::object();
    for (std::size_t id = 0; id < model.id_to_token.size(); ++id) {
        vocab[model.id_to_token[id]] = id;
    }
    write_text_file(dir + "/vocab.json", vocab.dump(2) + "\n");

    std::string merges;
    for (const auto& [l, r] : model.merges) {
        merges += l;
        merges += ' ';
        merges += r;
        merges += '\n';
    }
    write_text_file(dir + "/merges.txt", merges);
}

TokenizerModel load_tokenizer(const std::string& dir) {
    nlohmann::json vocab;
    try {
        vocab = nlohmann::json::parse(read_text_file(dir + "/vocab.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("vocab.json is not valid JSON: ") + e.what());
    }
    if (!vocab.is_object()) throw DataError("vocab.json must be a JSON object");

    TokenizerModel model;
    model.id_to_token.resize(vocab.size());
    std::vector<bool> seen(vocab.size(), false);
    for (auto& [token, id_json] : vocab.items()) {
        if (!id_json.is_number_unsigned()) throw DataError("vocab id for '" + token + "' must be a non-negative integer");
        auto id = id_json.get<std::size_t>();
        if (id >= vocab.size() || seen[id]) {
            throw DataError("vocab ids must be dense and unique; bad id " + std::to_string(id));
        }
        seen[id] = true;
        model.id_to_token[id] = token;
        model.token_id.emplace(token, static_cast<std::int32_t>(id));
    }
    const auto& specials = special_tokens();
    for (std::size_t i = 0; i < specials.size(); ++i) {
        if (i >= model.id_to_token.size() || model.id_to_token[i] != specials[i]) {
            throw DataError("special token '" + specials[i] + "' must have id " + std::to_string(i));
        }
    }

    for (const auto& line : [&] {
             std::vector<std::string> ls;
             std::string text = read_text_file(dir + "/merges.txt");
             std::size_t start = 0;
             while (start < text.size()) {
                 std::size_t nl = text.find('\n', start);
                 if (nl == std::string::npos) nl = text.size();
                 if (nl > start) ls.push_back(text.substr(start, nl - start));
                 start = nl + 1;
             }
             return ls;
         }()) {
        std::size_t sp = line.find(' ');
        if (sp == std::string::npos) throw DataError("merge line missing separator: " + line);
        std::string l = line.substr(0, sp), r = line.substr(sp + 1);
        if (!model.token_id.count(l) || !model.token_id.count(r) || !model.token_id.count(l + r)) {
            throw DataError("merge references tokens missing from vocab: " + line);
        }
        model.merges.emplace_back(std::move(l), std::move(r));
    }
    return model;
}

}  // namespace belab
