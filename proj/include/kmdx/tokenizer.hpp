#pragma once

#include <map>
#include <string>
#include <vector>

namespace kmdx {

// Reserved token ids shared by every vocabulary.
inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kNumReservedIds = 4;

// Whitespace/punctuation word splitting. A '.' between digits stays inside
// the number token ("1.9"), every other punctuation mark becomes its own
// token.
std::vector<std::string> tokenize(const std::string& text);

class Vocab {
 public:
    Vocab();

    // Frequency-ranked vocabulary over the corpus, capped at max_size
    // entries including the reserved ids. Ties rank lexicographically so the
    // result is independent of corpus order.
    static Vocab build(const std::vector<std::string>& corpus, int max_size);
    // Reconstruct from an id-ordered token list (checkpoint restore).
    static Vocab from_tokens(const std::vector<std::string>& id_to_token);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id_of(const std::string& token) const;  // kUnkId when absent
    const std::string& token_of(int id) const;
    const std::vector<std::string>& tokens() const { return id_to_token_; }

    std::vector<int> encode(const std::string& text) const;

 private:
    std::vector<std::string> id_to_token_;
    std::map<std::string, int> token_to_id_;
};

}  // namespace kmdx
