#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "attnguide/errors.hpp"

namespace attnguide {

// Fixed toy vocabulary: 4 color words, 3 shape words, "and", and a pad token
// in a size-16 embedding table. Prompts are entered as these words with
// explicit subject positions; there is no free-text parsing.
namespace vocab {

constexpr int kPad = 0;
constexpr int kAnd = 1;
constexpr int kColorBase = 2;   // red, green, blue, yellow
constexpr int kShapeBase = 6;   // circle, square, triangle
constexpr size_t kTableSize = 16;
constexpr size_t kPromptLen = 8;

inline const std::vector<std::string>& words() {
    static const std::vector<std::string> w = {"pad",    "and",    "red",      "green", "blue",
                                               "yellow", "circle", "square",   "triangle"};
    return w;
}

inline bool is_color(int id) { return id >= kColorBase && id < kColorBase + 4; }
inline bool is_shape(int id) { return id >= kShapeBase && id < kShapeBase + 3; }

inline int id_from_word(const std::string& word) {
    const auto& w = words();
    for (size_t i = 0; i < w.size(); ++i)
        if (w[i] == word) return static_cast<int>(i);
    std::string all;
    for (const auto& s : w) all += (all.empty() ? "" : " ") + s;
    throw UsageError("unknown token word '" + word + "'; vocabulary: " + all);
}

inline const std::string& word_from_id(int id) {
    if (id < 0 || static_cast<size_t>(id) >= words().size())
        throw ParameterError("token id " + std::to_string(id) + " has no word");
    return words()[static_cast<size_t>(id)];
}

}  // namespace vocab

// Tokenized prompt with subject bookkeeping. subject_positions mark the shape
// tokens guidance acts on; attribute_bindings map each subject position to
// its color-token position and are used for evaluation only.
struct PromptSpec {
    std::array<int, vocab::kPromptLen> token_ids{};  // pad-filled
    std::vector<size_t> subject_positions;
    std::map<size_t, size_t> attribute_bindings;

    void validate(bool guided) const {
        for (int id : token_ids)
            if (id < 0 || static_cast<size_t>(id) >= vocab::kTableSize)
                throw ParameterError("prompt token id " + std::to_string(id) +
                                     " outside vocabulary table");
        if (guided && subject_positions.empty())
            throw ParameterError("guided runs require at least one subject position");
        for (size_t p : subject_positions)
            if (p >= vocab::kPromptLen)
                throw ParameterError("subject position " + std::to_string(p) + " out of range");
        for (const auto& [s, a] : attribute_bindings)
            if (s >= vocab::kPromptLen || a >= vocab::kPromptLen)
                throw ParameterError("attribute binding position out of range");
    }

    std::vector<int> ids() const { return std::vector<int>(token_ids.begin(), token_ids.end()); }

    std::string text() const {
        std::string out;
        for (int id : token_ids) {
            if (id == vocab::kPad) continue;
            out += (out.empty() ? "" : " ") + vocab::word_from_id(id);
        }
        return out;
    }
};

}  // namespace attnguide
