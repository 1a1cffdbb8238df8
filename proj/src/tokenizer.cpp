#include "kmdx/tokenizer.hpp"

#include <algorithm>
#include <cctype>

#include "kmdx/common.hpp"

namespace kmdx {

namespace {

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' ||
           c == '-' || c == '\'';
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    const size_t n = text.size();
    for (size_t i = 0; i < n; ++i) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else if (is_word_char(c)) {
            cur += c;
        } else if (c == '.' && !cur.empty() && i + 1 < n &&
                   std::isdigit(static_cast<unsigned char>(cur.back())) &&
                   std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
            cur += c;  // decimal point inside a number
        } else {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            out.emplace_back(1, c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab::Vocab() {
    id_to_token_ = {"<pad>", "<cls>", "<unk>", "<mask>"};
    for (int i = 0; i < kNumReservedIds; ++i)
        token_to_id_[id_to_token_[static_cast<size_t>(i)]] = i;
}

Vocab Vocab::build(const std::vector<std::string>& corpus, int max_size) {
    if (max_size < kNumReservedIds)
        throw ConfigError("vocab size " + std::to_string(max_size) +
                          " below reserved id count");
    std::map<std::string, long long> counts;
    for (const std::string& text : corpus)
        for (const std::string& tok : tokenize(text)) ++counts[tok];
    std::vector<std::pair<std::string, long long>> ranked(counts.begin(),
                                                          counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocab v;
    for (const auto& [tok, cnt] : ranked) {
        if (v.size() >= max_size) break;
        if (v.token_to_id_.count(tok)) continue;
        v.token_to_id_[tok] = v.size();
        v.id_to_token_.push_back(tok);
    }
    return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& id_to_token) {
    Vocab v;
    if (id_to_token.size() < kNumReservedIds ||
        !std::equal(v.id_to_token_.begin(), v.id_to_token_.end(),
                    id_to_token.begin()))
        throw ContractError("vocab token list missing reserved prefix");
    for (size_t i = kNumReservedIds; i < id_to_token.size(); ++i) {
        v.token_to_id_[id_to_token[i]] = static_cast<int>(i);
        v.id_to_token_.push_back(id_to_token[i]);
    }
    return v;
}

int Vocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= size())
        throw InputError("token id " + std::to_string(id) +
                         " outside vocabulary of " + std::to_string(size()));
    return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> ids;
    for (const std::string& tok : tokenize(text)) ids.push_back(id_of(tok));
    return ids;
}

}  // namespace kmdx
