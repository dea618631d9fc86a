#pragma once

#include <optional>

namespace prefmod::synth {

// Ground-truth preference attributes of a user.
struct StyleParams {
    double hue = 0.0;         // [0, 1), background colour angle
    double saturation = 0.6;  // [0.2, 1]
    double roundness = 0.5;   // [0, 1], corner softness
    int texture_freq = 0;     // {0, 1, 2, 3} horizontal stripe bands
    double offset = 0.0;      // [-0.25, 0.25] subject shift, fraction of width

    bool valid() const noexcept;
    bool operator==(const StyleParams&) const = default;
};

inline constexpr double kSaturationMin = 0.2;
inline constexpr double kSaturationMax = 1.0;
inline constexpr double kOffsetMax = 0.25;
inline constexpr int kTextureMax = 3;

// Per-field distances, each normalized to [0, 1].
double hue_distance(double a, double b);
double saturation_distance(double a, double b);
double roundness_distance(double a, double b);
double texture_distance(int a, int b);
double offset_distance(double a, double b);

// Mean of the five normalized field distances.
double style_distance(const StyleParams& a, const StyleParams& b);

// Oracle reading of an image. Roundness and offset are unavailable when the
// image has no foreground, and roundness is unobservable for circles.
struct StyleEstimate {
    double hue = 0.0;
    double saturation = 0.0;
    int texture_freq = 0;
    std::optional<double> roundness;
    std::optional<double> offset;
};

// Mean normalized distance over the fields the estimate has.
double style_error(const StyleEstimate& est, const StyleParams& truth);
double estimate_distance(const StyleEstimate& a, const StyleEstimate& b);

}  // namespace prefmod::synth
