#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace mdfm::seqdata {

// Special token ids shared by both vocabularies.
inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kNumSpecials = 3;

enum class TokenScheme { kmer, bpe };

struct TokenSeq {
    std::vector<int> ids;
    std::vector<std::string> strings;
    // Character offset of each token in the source sequence.
    std::vector<std::size_t> offsets;
    TokenScheme scheme = TokenScheme::kmer;
    std::size_t k = 0;  // kmer only

    std::size_t size() const noexcept { return ids.size(); }
};

// Vocabulary size of the k-mer view: specials plus all 4^k k-mers.
std::size_t kmer_vocab_size(std::size_t k);
int kmer_id(std::string_view kmer);

// Stride-1 overlapping k-mers. Throws std::invalid_argument when k is 0 or
// exceeds the sequence length, or on non-ACGT input.
TokenSeq tokenize_kmer(std::string_view sequence, std::size_t k);

class BpeVocab {
public:
    BpeVocab();

    const std::vector<std::pair<std::string, std::string>>& merges() const noexcept { return merges_; }
    std::size_t size() const noexcept { return id_to_token_.size(); }
    int id_of(const std::string& token) const;  // kUnkId if absent
    const std::string& token(int id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
    bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

    // Records a merge; registers the merged surface when new.
    void push_merge(const std::string& left, const std::string& right);
    // (left id, right id, merged id) per merge, in training order.
    struct MergeIds {
        int left, right, merged;
    };
    const std::vector<MergeIds>& merge_ids() const noexcept { return merge_ids_; }

    nlohmann::json to_json() const;
    static BpeVocab from_json(const nlohmann::json& j);

    friend bool operator==(const BpeVocab& a, const BpeVocab& b) {
        return a.merges_ == b.merges_ && a.id_to_token_ == b.id_to_token_;
    }

private:
    std::vector<std::pair<std::string, std::string>> merges_;
    std::vector<MergeIds> merge_ids_;
    std::map<std::string, int> token_to_id_;
    std::vector<std::string> id_to_token_;
};

// Greedy most-frequent-pair merges until `vocab_size` tokens exist or no
// adjacent pair occurs at least twice. Ties go to the lexicographically
// smallest (left, right) pair.
BpeVocab train_bpe(const std::vector<std::string>& corpus, std::size_t vocab_size);

// Applies merges in training order, each as a left-to-right non-overlapping
// scan.
TokenSeq tokenize_bpe(std::string_view sequence, const BpeVocab& vocab);

}  // namespace mdfm::seqdata
