#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace prefmod::synth {

enum class ShapeKind : int { Circle = 0, Square = 1, Triangle = 2, Cross = 3 };

inline constexpr std::size_t kPromptLength = 3;
inline constexpr std::size_t kNumShapes = 4;
inline constexpr std::size_t kNumCounts = 3;
inline constexpr std::size_t kNumPositions = 3;
// shapes, counts, positions, then one null token per slot.
inline constexpr std::size_t kVocabSize = kNumShapes + kNumCounts + kNumPositions + kPromptLength;

using TokenId = std::size_t;

// Three-token prompt [shape, count, position], or the reserved EMPTY prompt
// whose tokens are the per-slot null tokens.
class Prompt {
public:
    Prompt() = default;  // EMPTY
    Prompt(ShapeKind shape, int count, int position);

    static Prompt empty() { return Prompt(); }
    // "circle two left"; "" or "<empty>" gives EMPTY. Throws DataError on unknown tokens.
    static Prompt parse(std::string_view text);
    static const std::vector<Prompt>& all_content();  // the 36 content prompts

    bool is_empty() const noexcept { return empty_; }
    ShapeKind shape() const;
    int count() const;     // 1..3
    int position() const;  // 0 = left, 1 = center, 2 = right
    std::array<TokenId, kPromptLength> tokens() const noexcept;
    std::string str() const;
    // Index into all_content(); throws for EMPTY.
    std::size_t index() const;

    bool operator==(const Prompt&) const = default;

private:
    bool empty_ = true;
    ShapeKind shape_ = ShapeKind::Circle;
    int count_ = 1;
    int position_ = 1;
};

std::string_view token_name(TokenId id);

}  // namespace prefmod::synth
