#include "prefmod/synth/prompt.hpp"

#include <sstream>

#include "prefmod/core/error.hpp"

namespace prefmod::synth {

namespace {

constexpr std::array<std::string_view, kVocabSize> kTokenNames = {
    "circle", "square", "triangle", "cross", "one", "two", "three", "left", "center", "right",
    "<null0>", "<null1>", "<null2>"};

constexpr TokenId kCountBase = kNumShapes;
constexpr TokenId kPositionBase = kNumShapes + kNumCounts;
constexpr TokenId kNullBase = kPositionBase + kNumPositions;

}  // namespace

std::string_view token_name(TokenId id) {
    if (id >= kVocabSize) throw DataError("token id " + std::to_string(id) + " out of vocabulary");
    return kTokenNames[id];
}

Prompt::Prompt(ShapeKind shape, int count, int position)
    : empty_(false), shape_(shape), count_(count), position_(position) {
    if (static_cast<int>(shape) < 0 || static_cast<std::size_t>(shape) >= kNumShapes) throw DataError("invalid shape");
    if (count < 1 || count > 3) throw DataError("prompt count must be 1..3, got " + std::to_string(count));
    if (position < 0 || position > 2) throw DataError("prompt position must be 0..2, got " + std::to_string(position));
}

Prompt Prompt::parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    if (words.empty() || (words.size() == 1 && words[0] == "<empty>")) return Prompt::empty();
    if (words.size() != kPromptLength) {
        throw DataError("prompt '" + std::string(text) + "' must have exactly 3 tokens [shape count position]");
    }
    auto find = [&](const std::string& w, TokenId lo, TokenId hi, const char* slot) -> int {
        for (TokenId id = lo; id < hi; ++id) {
            if (kTokenNames[id] == w) return static_cast<int>(id - lo);
        }
        throw DataError("unknown " + std::string(slot) + " token '" + w + "' in prompt '" + std::string(text) + "'");
    };
    const int shape = find(words[0], 0, kCountBase, "shape");
    const int count = find(words[1], kCountBase, kPositionBase, "count") + 1;
    const int position = find(words[2], kPositionBase, kNullBase, "position");
    return Prompt(static_cast<ShapeKind>(shape), count, position);
}

const std::vector<Prompt>& Prompt::all_content() {
    static const std::vector<Prompt> prompts = [] {
        std::vector<Prompt> out;
        for (std::size_t s = 0; s < kNumShapes; ++s) {
            for (int c = 1; c <= 3; ++c) {
                for (int p = 0; p < 3; ++p) out.emplace_back(static_cast<ShapeKind>(s), c, p);
            }
        }
        return out;
    }();
    return prompts;
}

ShapeKind Prompt::shape() const {
    if (empty_) throw DataError("EMPTY prompt has no shape");
    return shape_;
}

int Prompt::count() const {
    if (empty_) throw DataError("EMPTY prompt has no count");
    return count_;
}

int Prompt::position() const {
    if (empty_) throw DataError("EMPTY prompt has no position");
    return position_;
}

std::array<TokenId, kPromptLength> Prompt::tokens() const noexcept {
    if (empty_) return {kNullBase, kNullBase + 1, kNullBase + 2};
    return {static_cast<TokenId>(shape_), kCountBase + static_cast<TokenId>(count_ - 1),
            kPositionBase + static_cast<TokenId>(position_)};
}

std::string Prompt::str() const {
    if (empty_) return "<empty>";
    const auto t = tokens();
    return std::string(kTokenNames[t[0]]) + " " + std::string(kTokenNames[t[1]]) + " " +
           std::string(kTokenNames[t[2]]);
}

std::size_t Prompt::index() const {
    if (empty_) throw DataError("EMPTY prompt has no content index");
    return static_cast<std::size_t>(shape_) * 9 + static_cast<std::size_t>(count_ - 1) * 3 +
           static_cast<std::size_t>(position_);
}

}  // namespace prefmod::synth
