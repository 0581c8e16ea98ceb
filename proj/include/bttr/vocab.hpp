#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace bttr {

struct TokenizeError : std::runtime_error {
    std::string fragment;
    std::size_t position;
    TokenizeError(std::string frag, std::size_t pos)
        : std::runtime_error("unknown token \"" + frag + "\" at position " + std::to_string(pos)),
          fragment(std::move(frag)),
          position(pos) {}
};

// Bijection between markup tokens and ids. Ids 0/1/2 are reserved for
// PAD/SOS/EOS; real tokens start at 3.
class Vocab {
public:
    static constexpr int PAD = 0;
    static constexpr int SOS = 1;
    static constexpr int EOS = 2;

    Vocab() : id_to_token_{"<pad>", "<sos>", "<eos>"} {}

    explicit Vocab(const std::vector<std::string>& tokens) : Vocab() {
        for (const auto& t : tokens) add(t);
    }

    int add(const std::string& token) {
        auto it = token_to_id_.find(token);
        if (it != token_to_id_.end()) return it->second;
        int id = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(token);
        token_to_id_.emplace(token, id);
        max_token_len_ = std::max(max_token_len_, token.size());
        return id;
    }

    int size() const { return static_cast<int>(id_to_token_.size()); }

    bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

    int id(const std::string& token) const {
        auto it = token_to_id_.find(token);
        if (it == token_to_id_.end()) throw std::out_of_range("token not in vocab: " + token);
        return it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw std::out_of_range("vocab id out of range: " + std::to_string(id));
        return id_to_token_[static_cast<std::size_t>(id)];
    }

    static bool is_reserved(int id) { return id >= 0 && id <= 2; }

    // Greedy longest-match segmentation; whitespace separates but is not required.
    std::vector<int> tokenize(const std::string& s) const {
        std::vector<int> out;
        std::size_t i = 0;
        while (i < s.size()) {
            if (std::isspace(static_cast<unsigned char>(s[i]))) {
                ++i;
                continue;
            }
            std::size_t best = 0;
            // bounded by the longest token we store
            std::size_t limit = std::min(s.size() - i, max_token_len_);
            for (std::size_t len = limit; len >= 1; --len) {
                if (token_to_id_.count(s.substr(i, len))) {
                    best = len;
                    break;
                }
            }
            if (best == 0) {
                std::size_t end = i;
                while (end < s.size() && !std::isspace(static_cast<unsigned char>(s[end]))) ++end;
                throw TokenizeError(s.substr(i, end - i), i);
            }
            out.push_back(token_to_id_.at(s.substr(i, best)));
            i += best;
        }
        return out;
    }

    std::string detokenize(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (!out.empty()) out += ' ';
            out += token(id);
        }
        return out;
    }

    // One non-reserved token per line, in id order.
    void save(std::ostream& os) const {
        for (int i = 3; i < size(); ++i) os << id_to_token_[static_cast<std::size_t>(i)] << '\n';
    }
    void save_file(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("cannot write vocab file: " + path);
        save(f);
    }

    static Vocab load(std::istream& is) {
        Vocab v;
        std::string line;
        while (std::getline(is, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
            if (!line.empty()) v.add(line);
        }
        return v;
    }
    static Vocab load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot read vocab file: " + path);
        return load(f);
    }

    bool operator==(const Vocab& other) const { return id_to_token_ == other.id_to_token_; }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
    std::size_t max_token_len_ = 1;

    friend class VocabBuilder;
};

}  // namespace bttr
