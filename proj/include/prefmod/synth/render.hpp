#pragma once

// Procedural renderer and the closed-form oracles that read it back.
//
// Image layout: 3 x S x S, values in [-1, 1]. The background is a single HSV
// colour with `texture_freq` darker horizontal bands. The subject is `count`
// black copies of the prompt's shape stacked vertically, anti-aliased by
// supersampling, centred horizontally at the prompt position plus the style
// offset plus a seeded sub-pixel jitter.

#include <cstdint>
#include <optional>
#include <vector>

#include "prefmod/core/tensor.hpp"
#include "prefmod/synth/prompt.hpp"
#include "prefmod/synth/style.hpp"

namespace prefmod::synth {

inline constexpr std::size_t kDefaultImageSize = 16;
inline constexpr double kStripeValue = 0.65;  // HSV value of dark bands
inline constexpr double kMaxJitterPx = 0.5;   // at 16 px; scales with size

// Horizontal centre of a prompt position as a fraction of the width.
double position_fraction(int position);

Tensor render(const Prompt& prompt, const StyleParams& style, std::uint64_t seed,
              std::size_t size = kDefaultImageSize);

// Foreground coverage in [0,1] of the subject alone, S x S row-major.
std::vector<double> subject_coverage(const Prompt& prompt, double roundness, double center_x_px, std::size_t size);

// Exact area in square pixels of one anti-aliasing-free copy of the shape.
double shape_area(ShapeKind shape, double roundness, std::size_t size);

// Foreground coverage recovered from an image by comparing each pixel's HSV
// value with its row's background level.
std::vector<double> coverage_map(const Tensor& image);
// 4-connected components of coverage > threshold with at least min_pixels pixels.
int count_components(const std::vector<double>& coverage, std::size_t size, double threshold = 0.5,
                     std::size_t min_pixels = 2);

// `layout` supplies the prompt the image was generated for; without it the
// offset and roundness fields are unavailable.
StyleEstimate estimate_style(const Tensor& image, const std::optional<Prompt>& layout = std::nullopt);

// Template correlation of the foreground with the prompt's canonical subject,
// maximized over horizontal shifts, times an exact-count indicator. In [0,1].
double content_check(const Tensor& image, const Prompt& prompt);

// Mean absolute difference averaged over full, 2x and 4x average-pooled scales.
double perceptual_distance(const Tensor& a, const Tensor& b);

void validate_image(const Tensor& image);

}  // namespace prefmod::synth
