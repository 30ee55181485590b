#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace trtlab {

// Closed template vocabulary: specials, answer letters, digits, punctuation,
// the prompt template words, then (optionally) one contiguous block of
// discrete depth ids DEPTH_0..DEPTH_{n-1}. Ids are dense and depend only on
// the discrete block size, so two runs with the same config agree exactly.
struct Vocabulary {
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int DEPTH_START = 3;
    static constexpr int DEPTH_TOKEN = 4;
    static constexpr int DEPTH_END = 5;

    std::vector<std::string> id_to_tok;
    std::unordered_map<std::string, int> tok_to_id;
    int depth_block_begin = 0; // 0 when no discrete block
    int depth_block_size = 0;
    int letter_begin = 0;

    static Vocabulary build(int discrete_depth_size);

    int size() const { return int(id_to_tok.size()); }
    int token_id(const std::string & tok) const; // throws UnknownToken
    const std::string & token(int id) const;

    bool is_depth_id(int id) const {
        return depth_block_size > 0 && id >= depth_block_begin &&
               id < depth_block_begin + depth_block_size;
    }
    int depth_id(int k) const { return depth_block_begin + k; }
    bool is_letter(int id) const { return id >= letter_begin && id < letter_begin + 5; }
    char letter_of(int id) const { return char('A' + (id - letter_begin)); }
    int letter_id(char c) const { return letter_begin + (c - 'A'); }

    // Whitespace split; ., ? , ( ) peel off as their own tokens; pure digit
    // runs split into single-digit tokens. Throws UnknownToken otherwise.
    std::vector<int> encode_text(const std::string & text) const;
    // Joins with single spaces, skipping PAD/BOS and stopping at nothing.
    std::string decode(const std::vector<int> & ids, bool skip_special = true) const;
};

} // namespace trtlab
