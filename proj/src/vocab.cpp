#include "trtlab/vocab.hpp"

#include <cctype>

#include "trtlab/errors.hpp"

namespace trtlab {

namespace {

const char * kWords[] = {
    // short prompt
    "Multiple", "points", "are", "circled", "on", "the", "image", "Point", "is", "marker",
    "Which", "point", "closest", "to", "camera",
    // long-prompt scaffold
    "Think", "step", "by", "Marker", "at", "Read", "depth", "value", "each", "from", "map",
    "Higher", "values", "closer", "Answer", "with", "letter", "of",
};

bool is_punct_tok(char c) {
    return c == '.' || c == '?' || c == ',' || c == '(' || c == ')';
}

} // namespace

Vocabulary Vocabulary::build(int discrete_depth_size) {
    Vocabulary v;
    auto add = [&v](const std::string & t) {
        v.tok_to_id.emplace(t, int(v.id_to_tok.size()));
        v.id_to_tok.push_back(t);
    };
    add("<PAD>");
    add("<BOS>");
    add("<EOS>");
    add("<DEPTH_START>");
    add("<DEPTH_TOKEN>");
    add("<DEPTH_END>");
    v.letter_begin = v.size();
    for (char c = 'A'; c <= 'E'; ++c) add(std::string(1, c));
    for (char c = '0'; c <= '9'; ++c) add(std::string(1, c));
    for (char c : {'.', '?', ',', '(', ')'}) add(std::string(1, c));
    for (const char * w : kWords) add(w);
    v.depth_block_begin = v.size();
    v.depth_block_size = discrete_depth_size;
    for (int i = 0; i < discrete_depth_size; ++i) add("<DEPTH_" + std::to_string(i) + ">");
    return v;
}

int Vocabulary::token_id(const std::string & tok) const {
    auto it = tok_to_id.find(tok);
    if (it == tok_to_id.end()) throw UnknownToken("unknown token: '" + tok + "'");
    return it->second;
}

const std::string & Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw UnknownToken("token id out of range: " + std::to_string(id));
    return id_to_tok[size_t(id)];
}

std::vector<int> Vocabulary::encode_text(const std::string & text) const {
    std::vector<int> out;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= n) break;
        if (is_punct_tok(text[i])) {
            out.push_back(token_id(std::string(1, text[i])));
            ++i;
            continue;
        }
        size_t j = i;
        while (j < n && !std::isspace(static_cast<unsigned char>(text[j])) && !is_punct_tok(text[j]))
            ++j;
        std::string piece = text.substr(i, j - i);
        auto it = tok_to_id.find(piece);
        if (it != tok_to_id.end()) {
            out.push_back(it->second);
        } else {
            bool digits = !piece.empty();
            for (char c : piece)
                if (!std::isdigit(static_cast<unsigned char>(c))) digits = false;
            if (!digits) throw UnknownToken("unknown token: '" + piece + "'");
            for (char c : piece) out.push_back(token_id(std::string(1, c)));
        }
        i = j;
    }
    return out;
}

std::string Vocabulary::decode(const std::vector<int> & ids, bool skip_special) const {
    std::string out;
    for (int id : ids) {
        if (skip_special && (id == PAD || id == BOS || id == EOS)) continue;
        if (!out.empty()) out += ' ';
        out += token(id);
    }
    return out;
}

} // namespace trtlab
