#include "mdfm/seqdata/tokenize.hpp"

#include <cstdint>
#include <stdexcept>
#include <unordered_map>

#include "mdfm/seqdata/dataset.hpp"

namespace mdfm::seqdata {
namespace {

int base_code(char c) {
    switch (c) {
        case 'A': return 0;
        case 'C': return 1;
        case 'G': return 2;
        case 'T': return 3;
        default: throw std::invalid_argument(std::string("non-ACGT character '") + c + "'");
    }
}

const char* const kSpecialNames[kNumSpecials] = {"[PAD]", "[CLS]", "[UNK]"};

}  // namespace

std::size_t kmer_vocab_size(std::size_t k) { return kNumSpecials + (std::size_t{1} << (2 * k)); }

int kmer_id(std::string_view kmer) {
    int code = 0;
    for (char c : kmer) code = code * 4 + base_code(c);
    return kNumSpecials + code;
}

TokenSeq tokenize_kmer(std::string_view sequence, std::size_t k) {
    if (k == 0 || k > sequence.size()) {
        throw std::invalid_argument("tokenize_kmer: k=" + std::to_string(k) + " invalid for sequence of length " +
                                    std::to_string(sequence.size()));
    }
    if (k > 12) throw std::invalid_argument("tokenize_kmer: k=" + std::to_string(k) + " exceeds 12");
    if (!is_acgt(sequence)) throw std::invalid_argument("tokenize_kmer: non-ACGT character in sequence");
    TokenSeq out;
    out.scheme = TokenScheme::kmer;
    out.k = k;
    const std::size_t n = sequence.size() - k + 1;
    out.ids.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto kmer = sequence.substr(i, k);
        out.ids.push_back(kmer_id(kmer));
        out.strings.emplace_back(kmer);
        out.offsets.push_back(i);
    }
    return out;
}

BpeVocab::BpeVocab() {
    for (const char* s : kSpecialNames) {
        token_to_id_.emplace(s, static_cast<int>(id_to_token_.size()));
        id_to_token_.emplace_back(s);
    }
    for (const char* s : {"A", "C", "G", "T"}) {
        token_to_id_.emplace(s, static_cast<int>(id_to_token_.size()));
        id_to_token_.emplace_back(s);
    }
}

int BpeVocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

void BpeVocab::push_merge(const std::string& left, const std::string& right) {
    const int lid = id_of(left);
    const int rid = id_of(right);
    if (lid < kNumSpecials || rid < kNumSpecials) {
        throw std::invalid_argument("BpeVocab: merge of unknown symbols '" + left + "' + '" + right + "'");
    }
    merges_.emplace_back(left, right);
    const std::string merged = left + right;
    if (token_to_id_.emplace(merged, static_cast<int>(id_to_token_.size())).second) {
        id_to_token_.push_back(merged);
    }
    merge_ids_.push_back({lid, rid, token_to_id_.at(merged)});
}

nlohmann::json BpeVocab::to_json() const {
    nlohmann::json j;
    j["specials"] = nlohmann::json::array();
    for (int i = 0; i < kNumSpecials; ++i) j["specials"].push_back(id_to_token_[static_cast<std::size_t>(i)]);
    j["merges"] = nlohmann::json::array();
    for (const auto& [l, r] : merges_) j["merges"].push_back({l, r});
    return j;
}

BpeVocab BpeVocab::from_json(const nlohmann::json& j) {
    BpeVocab v;
    const auto& specials = j.at("specials");
    if (specials.size() != kNumSpecials) throw std::invalid_argument("BpeVocab: expected 3 special tokens");
    for (std::size_t i = 0; i < specials.size(); ++i) {
        if (specials[i].get<std::string>() != kSpecialNames[i]) {
            throw std::invalid_argument("BpeVocab: unexpected special token " + specials[i].get<std::string>());
        }
    }
    for (const auto& m : j.at("merges")) v.push_merge(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    return v;
}

BpeVocab train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size) {
    if (corpus.empty()) throw std::invalid_argument("train_bpe: empty corpus");
    // 7 = specials + bases: a valid budget that admits no merges.
    if (vocab_size < 7) throw std::invalid_argument("train_bpe: vocab_size must be >= 7");

    BpeVocab vocab;
    // Words as symbol ids into a local surface table.
    std::vector<std::string> surface = {"A", "C", "G", "T"};
    std::unordered_map<std::string, int> surface_id = {{"A", 0}, {"C", 1}, {"G", 2}, {"T", 3}};
    std::vector<std::vector<int>> words;
    words.reserve(corpus.size());
    for (const auto& seq : corpus) {
        std::vector<int> w;
        w.reserve(seq.size());
        for (char c : seq) w.push_back(base_code(c));
        words.push_back(std::move(w));
    }

    auto key = [](int l, int r) { return (static_cast<std::uint64_t>(l) << 32) | static_cast<std::uint32_t>(r); };

    while (vocab.size() < vocab_size) {
        std::unordered_map<std::uint64_t, std::size_t> counts;
        for (const auto& w : words)
            for (std::size_t i = 0; i + 1 < w.size(); ++i) ++counts[key(w[i], w[i + 1])];

        std::size_t best = 0;
        int bl = -1, br = -1;
        for (const auto& [k, c] : counts) {
            const int l = static_cast<int>(k >> 32);
            const int r = static_cast<int>(k & 0xffffffffu);
            const bool better =
                c > best || (c == best && bl >= 0 &&
                             std::pair<const std::string&, const std::string&>(surface[static_cast<std::size_t>(l)],
                                                                               surface[static_cast<std::size_t>(r)]) <
                                 std::pair<const std::string&, const std::string&>(
                                     surface[static_cast<std::size_t>(bl)], surface[static_cast<std::size_t>(br)]));
            if (better) {
                best = c;
                bl = l;
                br = r;
            }
        }
        if (best < 2) break;

        const std::string& ls = surface[static_cast<std::size_t>(bl)];
        const std::string& rs = surface[static_cast<std::size_t>(br)];
        const std::string merged = ls + rs;
        vocab.push_merge(ls, rs);
        int mid;
        if (auto it = surface_id.find(merged); it != surface_id.end()) {
            mid = it->second;
        } else {
            mid = static_cast<int>(surface.size());
            surface.push_back(merged);
            surface_id.emplace(merged, mid);
        }
        for (auto& w : words) {
            std::vector<int> nw;
            nw.reserve(w.size());
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (i + 1 < w.size() && w[i] == bl && w[i + 1] == br) {
                    nw.push_back(mid);
                    ++i;
                } else {
                    nw.push_back(w[i]);
                }
            }
            w = std::move(nw);
        }
    }
    return vocab;
}

TokenSeq tokenize_bpe(std::string_view sequence, const BpeVocab& vocab) {
    if (sequence.empty()) throw std::invalid_argument("tokenize_bpe: empty sequence");
    if (!is_acgt(sequence)) throw std::invalid_argument("tokenize_bpe: non-ACGT character in sequence");
    std::vector<int> symbols;
    symbols.reserve(sequence.size());
    for (char c : sequence) symbols.push_back(kNumSpecials + base_code(c));
    std::vector<int> next;
    for (const auto& m : vocab.merge_ids()) {
        next.clear();
        for (std::size_t i = 0; i < symbols.size(); ++i) {
            if (i + 1 < symbols.size() && symbols[i] == m.left && symbols[i + 1] == m.right) {
                next.push_back(m.merged);
                ++i;
            } else {
                next.push_back(symbols[i]);
            }
        }
        symbols.swap(next);
    }
    TokenSeq out;
    out.scheme = TokenScheme::bpe;
    std::size_t offset = 0;
    for (int id : symbols) {
        out.ids.push_back(id);
        out.offsets.push_back(offset);
        out.strings.push_back(vocab.token(id));
        offset += out.strings.back().size();
    }
    return out;
}

}  // namespace mdfm::seqdata
