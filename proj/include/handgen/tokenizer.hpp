#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace handgen {

struct TokenizedPrompt {
    std::vector<std::string> tokens;
    std::vector<int> ids;
    std::vector<int> hand_token_indices;
};

// lowercase word tokens; alphanumeric runs only
inline std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Gerunds that show up in hand-action captions. The suffix rule below covers
// unseen "-ing" verbs; this list pins the common ones.
inline const std::unordered_set<std::string>& vbg_lexicon() {
    static const std::unordered_set<std::string> lex = {
        "holding",  "taking",   "using",    "grabbing", "pointing",  "waving",   "carrying",
        "writing",  "reaching", "touching", "picking",  "showing",   "lifting",  "giving",
        "catching", "throwing", "opening",  "closing",  "shaking",   "typing",   "drawing",
        "pouring",  "gesturing","pressing", "clapping", "pinching",  "raising",  "cutting",
        "wearing",  "playing",  "eating",   "drinking", "sitting",   "standing", "walking",
        "cooking",  "reading",  "painting", "peeling",  "squeezing", "stirring", "folding"};
    return lex;
}

// "-ing" words that are not gerunds (nouns, adjectives, prepositions)
inline const std::unordered_set<std::string>& ing_stoplist() {
    static const std::unordered_set<std::string> stop = {
        "thing",    "something", "nothing",  "anything", "everything", "ring",      "king",
        "wing",     "string",    "spring",   "during",   "evening",    "morning",   "ceiling",
        "building", "lightning", "pudding",  "wedding",  "sibling",    "darling",   "dumpling",
        "earring",  "railing",   "clothing"};
    return stop;
}

// Positions of hand-related tokens: gerund verbs (lexicon plus "-ing" suffix
// rule) and tokens containing "hand". Pure function of the token list.
inline std::vector<int> tag_hand_tokens(const std::vector<std::string>& tokens) {
    std::vector<int> out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        const std::string& t = tokens[i];
        bool tagged = false;
        if (t.find("hand") != std::string::npos) {
            tagged = true;
        } else if (vbg_lexicon().count(t)) {
            tagged = true;
        } else if (t.size() >= 5 && t.compare(t.size() - 3, 3, "ing") == 0 && !ing_stoplist().count(t)) {
            tagged = true;
        }
        if (tagged) out.push_back(static_cast<int>(i));
    }
    return out;
}

/*------------------------------ vocabulary -----------------------------*/

inline const std::vector<std::string>& vocab_words() {
    static const std::vector<std::string> words = [] {
        std::vector<std::string> w = {
            "<pad>", "<unk>",
            // fillers
            "a", "an", "the", "with", "in", "at", "for", "of", "on", "and", "his", "her",
            "their", "one", "two", "both", "open", "firm", "person", "someone", "man", "woman",
            "left", "right", "hand", "hands", "handshake",
            // actions
            "holding", "taking", "using", "grabbing", "pointing", "waving", "carrying",
            "reaching", "touching", "picking", "showing", "lifting", "giving", "catching",
            "throwing", "shaking", "clasped", "together", "outdoors", "up",
            // objects
            "phone", "cup", "ball", "book", "pen", "apple", "bottle", "mug", "object", "tool",
        };
        return w;
    }();
    return words;
}

inline const std::unordered_map<std::string, int>& vocab_index() {
    static const std::unordered_map<std::string, int> idx = [] {
        std::unordered_map<std::string, int> m;
        const auto& w = vocab_words();
        for (size_t i = 0; i < w.size(); ++i) m[w[i]] = static_cast<int>(i);
        return m;
    }();
    return idx;
}

constexpr int kPadId = 0;
constexpr int kUnkId = 1;

// Tokenize a prompt, map to vocabulary ids, tag hand-related tokens, and
// truncate to max_tokens.
inline TokenizedPrompt tokenize_prompt(const std::string& prompt, int max_tokens) {
    TokenizedPrompt tp;
    tp.tokens = tokenize_words(prompt);
    if (static_cast<int>(tp.tokens.size()) > max_tokens) tp.tokens.resize(static_cast<size_t>(max_tokens));
    tp.ids.reserve(tp.tokens.size());
    const auto& idx = vocab_index();
    for (const auto& t : tp.tokens) {
        auto it = idx.find(t);
        tp.ids.push_back(it == idx.end() ? kUnkId : it->second);
    }
    tp.hand_token_indices = tag_hand_tokens(tp.tokens);
    return tp;
}

/*---------------------------- prompt templates --------------------------*/

// Every template contains at least one hand-related token by construction.
inline const std::vector<std::string>& single_hand_templates() {
    static const std::vector<std::string> t = {
        "a person holding a {obj} with the {side} hand",
        "a person taking a {obj} with the {side} hand",
        "a person using a {obj} in the {side} hand",
        "someone grabbing a {obj} with the {side} hand",
        "a person pointing at a {obj} with the {side} hand",
        "a {side} hand reaching for a {obj}",
        "someone waving the {side} hand outdoors",
        "a person showing the open {side} hand",
    };
    return t;
}

inline const std::vector<std::string>& both_hands_templates() {
    static const std::vector<std::string> t = {
        "a person holding a {obj} with both hands",
        "someone taking a {obj} with both hands",
        "a person lifting a {obj} with both hands",
        "two hands clasped together",
    };
    return t;
}

inline const std::vector<std::string>& prompt_objects() {
    static const std::vector<std::string> o = {"phone", "cup", "ball", "book",
                                               "pen",   "apple", "bottle", "mug"};
    return o;
}

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

} // namespace handgen
