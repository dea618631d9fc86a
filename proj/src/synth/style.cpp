#include "prefmod/synth/style.hpp"

#include <cmath>
#include <cstdlib>

namespace prefmod::synth {

bool StyleParams::valid() const noexcept {
    return hue >= 0.0 && hue < 1.0 && saturation >= kSaturationMin && saturation <= kSaturationMax &&
           roundness >= 0.0 && roundness <= 1.0 && texture_freq >= 0 && texture_freq <= kTextureMax &&
           std::abs(offset) <= kOffsetMax;
}

double hue_distance(double a, double b) {
    double d = std::fmod(std::abs(a - b), 1.0);
    return std::min(d, 1.0 - d) / 0.5;
}

double saturation_distance(double a, double b) { return std::abs(a - b) / (kSaturationMax - kSaturationMin); }
double roundness_distance(double a, double b) { return std::abs(a - b); }
double texture_distance(int a, int b) { return std::abs(a - b) / static_cast<double>(kTextureMax); }
double offset_distance(double a, double b) { return std::abs(a - b) / (2.0 * kOffsetMax); }

double style_distance(const StyleParams& a, const StyleParams& b) {
    return (hue_distance(a.hue, b.hue) + saturation_distance(a.saturation, b.saturation) +
            roundness_distance(a.roundness, b.roundness) + texture_distance(a.texture_freq, b.texture_freq) +
            offset_distance(a.offset, b.offset)) /
           5.0;
}

double style_error(const StyleEstimate& est, const StyleParams& truth) {
    double total = hue_distance(est.hue, truth.hue) + saturation_distance(est.saturation, truth.saturation) +
                   texture_distance(est.texture_freq, truth.texture_freq);
    int fields = 3;
    if (est.roundness) {
        total += roundness_distance(*est.roundness, truth.roundness);
        ++fields;
    }
    if (est.offset) {
        total += offset_distance(*est.offset, truth.offset);
        ++fields;
    }
    return total / fields;
}

double estimate_distance(const StyleEstimate& a, const StyleEstimate& b) {
    double total = hue_distance(a.hue, b.hue) + saturation_distance(a.saturation, b.saturation) +
                   texture_distance(a.texture_freq, b.texture_freq);
    int fields = 3;
    if (a.roundness && b.roundness) {
        total += roundness_distance(*a.roundness, *b.roundness);
        ++fields;
    }
    if (a.offset && b.offset) {
        total += offset_distance(*a.offset, *b.offset);
        ++fields;
    }
    return total / fields;
}

}  // namespace prefmod::synth
