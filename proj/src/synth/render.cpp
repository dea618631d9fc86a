#include "prefmod/synth/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "prefmod/core/error.hpp"
#include "prefmod/core/rng.hpp"

namespace prefmod::synth {

namespace {

constexpr int kSuper = 16;  // supersampling grid per pixel axis
constexpr double kRoundFraction = 0.8;

struct Vec2 {
    double x, y;
};

double rounded_box(Vec2 p, double hx, double hy, double radius) {
    const double qx = std::abs(p.x) - (hx - radius);
    const double qy = std::abs(p.y) - (hy - radius);
    const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
    return std::hypot(ox, oy) + std::min(std::max(qx, qy), 0.0) - radius;
}

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const double bx = b.x - a.x, by = b.y - a.y;
    const double px = p.x - a.x, py = p.y - a.y;
    const double h = std::clamp((px * bx + py * by) / (bx * bx + by * by), 0.0, 1.0);
    return std::hypot(px - h * bx, py - h * by);
}

double edge_side(Vec2 p, Vec2 a, Vec2 b) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); }

struct Geometry {
    double half;        // a: half the shape extent
    double arm;         // cross arm half-width
    double tri_inradius;
    double radius;      // corner radius for this roundness
};

Geometry geometry(ShapeKind shape, double roundness, std::size_t size) {
    Geometry g{};
    g.half = static_cast<double>(size) / 8.0;
    g.arm = g.half / 2.0;
    g.tri_inradius = 2.0 * g.half / (1.0 + std::sqrt(5.0));
    const double root = std::sqrt(std::clamp(roundness, 0.0, 1.0));
    switch (shape) {
        case ShapeKind::Circle: g.radius = 0.0; break;
        case ShapeKind::Square: g.radius = kRoundFraction * g.half * root; break;
        case ShapeKind::Triangle: g.radius = kRoundFraction * g.tri_inradius * root; break;
        case ShapeKind::Cross: g.radius = kRoundFraction * g.arm * root; break;
    }
    return g;
}

// True when local point p (relative to the shape centre, y down) is inside.
bool inside(ShapeKind shape, const Geometry& g, Vec2 p) {
    switch (shape) {
        case ShapeKind::Circle: return p.x * p.x + p.y * p.y <= g.half * g.half;
        case ShapeKind::Square: return rounded_box(p, g.half, g.half, g.radius) <= 0.0;
        case ShapeKind::Cross:
            return std::min(rounded_box(p, g.half, g.arm, g.radius), rounded_box(p, g.arm, g.half, g.radius)) <= 0.0;
        case ShapeKind::Triangle: {
            // Points within `radius` of the triangle shrunk about its incentre.
            const double a = g.half;
            const Vec2 c{0.0, a - g.tri_inradius};
            const double k = (g.tri_inradius - g.radius) / g.tri_inradius;
            const std::array<Vec2, 3> v = {Vec2{c.x + k * (0.0 - c.x), c.y + k * (-a - c.y)},
                                           Vec2{c.x + k * (a - c.x), c.y + k * (a - c.y)},
                                           Vec2{c.x + k * (-a - c.x), c.y + k * (a - c.y)}};
            const double s0 = edge_side(p, v[0], v[1]), s1 = edge_side(p, v[1], v[2]), s2 = edge_side(p, v[2], v[0]);
            const bool in = (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
            if (in) return true;
            if (g.radius <= 0.0) return false;
            const double d = std::min({segment_distance(p, v[0], v[1]), segment_distance(p, v[1], v[2]),
                                       segment_distance(p, v[2], v[0])});
            return d <= g.radius;
        }
    }
    return false;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
    const double hh = std::fmod(h, 1.0) * 6.0;
    const int sector = static_cast<int>(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

struct Hsv {
    double h, s, v;
};

Hsv rgb_to_hsv(double r, double g, double b) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double delta = mx - mn;
    Hsv out{0.0, mx > 0.0 ? delta / mx : 0.0, mx};
    if (delta <= 0.0) return out;
    double h;
    if (mx == r) {
        h = (g - b) / delta;
    } else if (mx == g) {
        h = 2.0 + (b - r) / delta;
    } else {
        h = 4.0 + (r - g) / delta;
    }
    h /= 6.0;
    if (h < 0.0) h += 1.0;
    out.h = h;
    return out;
}

bool dark_row(std::size_t row, int freq, std::size_t size) {
    if (freq <= 0) return false;
    const double band = (static_cast<double>(row) + 0.5) * 2.0 * freq / static_cast<double>(size);
    return static_cast<long>(std::floor(band)) % 2 == 1;
}

double clamp_center(double cx, std::size_t size) {
    const double half = static_cast<double>(size) / 8.0;
    return std::clamp(cx, half, static_cast<double>(size) - half);
}

std::size_t image_size(const Tensor& image) {
    validate_image(image);
    return image.shape()[1];
}

double pixel_value01(const Tensor& img, std::size_t c, std::size_t y, std::size_t x, std::size_t size) {
    return std::clamp((img[(c * size + y) * size + x] + 1.0) * 0.5, 0.0, 1.0);
}

std::vector<double> row_background_values(const Tensor& image, std::size_t size) {
    std::vector<double> out(size), row(size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            row[x] = std::max({pixel_value01(image, 0, y, x, size), pixel_value01(image, 1, y, x, size),
                               pixel_value01(image, 2, y, x, size)});
        }
        std::nth_element(row.begin(), row.begin() + static_cast<long>(size / 2), row.end());
        out[y] = row[size / 2];
    }
    return out;
}

double ncc(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va <= 1e-12 || vb <= 1e-12) return 0.0;
    return cov / std::sqrt(va * vb);
}

constexpr double kTemplateRoundness = 0.5;
constexpr double kShiftStep = 0.5;

const std::vector<std::vector<double>>& templates(const Prompt& prompt, std::size_t size) {
    static std::mutex mutex;
    static std::map<std::pair<std::size_t, std::size_t>, std::vector<std::vector<double>>> cache;
    std::lock_guard lock(mutex);
    auto key = std::make_pair(prompt.index(), size);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const double s = static_cast<double>(size);
    const double reach = kOffsetMax * s + 2.0 * kMaxJitterPx * s / 16.0;
    std::vector<std::vector<double>> out;
    for (double shift = -reach; shift <= reach + 1e-9; shift += kShiftStep) {
        out.push_back(subject_coverage(prompt, kTemplateRoundness, position_fraction(prompt.position()) * s + shift, size));
    }
    return cache.emplace(key, std::move(out)).first->second;
}

}  // namespace

double position_fraction(int position) {
    switch (position) {
        case 0: return 0.375;
        case 1: return 0.5;
        case 2: return 0.625;
        default: throw DataError("invalid position " + std::to_string(position));
    }
}

void validate_image(const Tensor& image) {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != 3 || s[1] != s[2] || s[1] % 4 != 0) {
        throw ShapeError("image must be 3 x S x S with S divisible by 4, got " + shape_str(s));
    }
}

double shape_area(ShapeKind shape, double roundness, std::size_t size) {
    const Geometry g = geometry(shape, roundness, size);
    const double r2 = g.radius * g.radius;
    const double pi = std::numbers::pi;
    switch (shape) {
        case ShapeKind::Circle: return pi * g.half * g.half;
        case ShapeKind::Square: return 4.0 * g.half * g.half - (4.0 - pi) * r2;
        case ShapeKind::Cross: return 8.0 * g.half * g.arm - 4.0 * g.arm * g.arm - (8.0 - 2.0 * pi) * r2;
        case ShapeKind::Triangle: {
            const double perimeter = 2.0 * g.half + 2.0 * g.half * std::sqrt(5.0);
            return 2.0 * g.half * g.half - r2 * (perimeter / (2.0 * g.tri_inradius) - pi);
        }
    }
    return 0.0;
}

std::vector<double> subject_coverage(const Prompt& prompt, double roundness, double center_x_px, std::size_t size) {
    std::vector<double> cov(size * size, 0.0);
    const Geometry g = geometry(prompt.shape(), roundness, size);
    const double s = static_cast<double>(size);
    const double side = s / 4.0, gap = s / 8.0;
    const int count = prompt.count();
    const double total = count * side + (count - 1) * gap;
    const double top = (s - total) / 2.0;
    const double cx = clamp_center(center_x_px, size);
    const double step = 1.0 / kSuper;
    for (int copy = 0; copy < count; ++copy) {
        const double cy = top + copy * (side + gap) + side / 2.0;
        const auto x0 = static_cast<std::size_t>(std::max(0.0, std::floor(cx - g.half - 1.0)));
        const auto x1 = static_cast<std::size_t>(std::min(s, std::ceil(cx + g.half + 1.0)));
        const auto y0 = static_cast<std::size_t>(std::max(0.0, std::floor(cy - g.half - 1.0)));
        const auto y1 = static_cast<std::size_t>(std::min(s, std::ceil(cy + g.half + 1.0)));
        for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t x = x0; x < x1; ++x) {
                int hits = 0;
                for (int sy = 0; sy < kSuper; ++sy) {
                    for (int sx = 0; sx < kSuper; ++sx) {
                        const Vec2 p{static_cast<double>(x) + (sx + 0.5) * step - cx,
                                     static_cast<double>(y) + (sy + 0.5) * step - cy};
                        hits += inside(prompt.shape(), g, p) ? 1 : 0;
                    }
                }
                cov[y * size + x] = std::min(1.0, cov[y * size + x] + hits / double(kSuper * kSuper));
            }
        }
    }
    return cov;
}

Tensor render(const Prompt& prompt, const StyleParams& style, std::uint64_t seed, std::size_t size) {
    if (!style.valid()) throw DataError("render: style parameters out of range");
    if (size < 8 || size % 8 != 0) throw ShapeError("render: image size must be a multiple of 8, got " + std::to_string(size));
    const double s = static_cast<double>(size);
    std::vector<double> cov(size * size, 0.0);
    if (!prompt.is_empty()) {
        Rng rng(derive_seed({seed, 0x6A177E5ull}));
        const double jitter = rng.uniform(-kMaxJitterPx, kMaxJitterPx) * s / 16.0;
        const double cx = (position_fraction(prompt.position()) + style.offset) * s + jitter;
        cov = subject_coverage(prompt, style.roundness, cx, size);
    }
    std::vector<double> data(3 * size * size);
    for (std::size_t y = 0; y < size; ++y) {
        const double value = dark_row(y, style.texture_freq, size) ? kStripeValue : 1.0;
        const auto rgb = hsv_to_rgb(style.hue, style.saturation, value);
        for (std::size_t x = 0; x < size; ++x) {
            const double keep = 1.0 - cov[y * size + x];
            for (std::size_t c = 0; c < 3; ++c) data[(c * size + y) * size + x] = 2.0 * keep * rgb[c] - 1.0;
        }
    }
    return Tensor({3, size, size}, std::move(data));
}

std::vector<double> coverage_map(const Tensor& image) {
    const std::size_t size = image_size(image);
    const auto bg = row_background_values(image, size);
    std::vector<double> cov(size * size, 0.0);
    for (std::size_t y = 0; y < size; ++y) {
        if (bg[y] < 0.05) continue;
        for (std::size_t x = 0; x < size; ++x) {
            const double v = std::max({pixel_value01(image, 0, y, x, size), pixel_value01(image, 1, y, x, size),
                                       pixel_value01(image, 2, y, x, size)});
            cov[y * size + x] = std::clamp(1.0 - v / bg[y], 0.0, 1.0);
        }
    }
    return cov;
}

int count_components(const std::vector<double>& coverage, std::size_t size, double threshold, std::size_t min_pixels) {
    std::vector<int> label(size * size, -1);
    int components = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < size * size; ++start) {
        if (coverage[start] <= threshold || label[start] >= 0) continue;
        std::size_t pixels = 0;
        stack.assign(1, start);
        label[start] = components;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++pixels;
            const std::size_t y = i / size, x = i % size;
            const std::size_t nbrs[4] = {y > 0 ? i - size : i, y + 1 < size ? i + size : i, x > 0 ? i - 1 : i,
                                         x + 1 < size ? i + 1 : i};
            for (std::size_t j : nbrs) {
                if (j != i && coverage[j] > threshold && label[j] < 0) {
                    label[j] = components;
                    stack.push_back(j);
                }
            }
        }
        if (pixels >= min_pixels) ++components;
    }
    return components;
}

StyleEstimate estimate_style(const Tensor& image, const std::optional<Prompt>& layout) {
    const std::size_t size = image_size(image);
    const auto bg = row_background_values(image, size);
    const auto cov = coverage_map(image);
    StyleEstimate est;

    // Colour: coverage-weighted circular mean of hue, mean saturation.
    double sx = 0.0, sy = 0.0, sat = 0.0, weight = 0.0;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const Hsv hsv = rgb_to_hsv(pixel_value01(image, 0, y, x, size), pixel_value01(image, 1, y, x, size),
                                       pixel_value01(image, 2, y, x, size));
            if (hsv.v < 0.2) continue;
            const double w = 1.0 - cov[y * size + x];
            const double angle = 2.0 * std::numbers::pi * hsv.h;
            sx += w * hsv.s * std::cos(angle);
            sy += w * hsv.s * std::sin(angle);
            sat += w * hsv.s;
            weight += w;
        }
    }
    if (weight > 0.0) {
        double h = std::atan2(sy, sx) / (2.0 * std::numbers::pi);
        if (h < 0.0) h += 1.0;
        est.hue = h >= 1.0 ? 0.0 : h;
        est.saturation = std::clamp(sat / weight, kSaturationMin, kSaturationMax);
    } else {
        est.saturation = kSaturationMin;
    }

    // Texture: dark bands in the per-row background level.
    const auto [lo_it, hi_it] = std::minmax_element(bg.begin(), bg.end());
    if (*hi_it - *lo_it >= 0.15) {
        const double mid = 0.5 * (*hi_it + *lo_it);
        int runs = 0;
        bool in_run = false;
        for (double v : bg) {
            const bool dark = v < mid;
            if (dark && !in_run) ++runs;
            in_run = dark;
        }
        est.texture_freq = std::min(runs, kTextureMax);
    }

    double mass = 0.0, moment = 0.0;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            mass += cov[y * size + x];
            moment += cov[y * size + x] * (static_cast<double>(x) + 0.5);
        }
    }
    if (!layout || layout->is_empty() || mass < 1.0) return est;

    const double s = static_cast<double>(size);
    est.offset = std::clamp(moment / mass / s - position_fraction(layout->position()), -kOffsetMax, kOffsetMax);
    if (layout->shape() != ShapeKind::Circle) {
        const double per_copy = mass / layout->count();
        const double sharp = shape_area(layout->shape(), 0.0, size);
        const double soft = shape_area(layout->shape(), 1.0, size);
        est.roundness = std::clamp((sharp - per_copy) / (sharp - soft), 0.0, 1.0);
    }
    return est;
}

double content_check(const Tensor& image, const Prompt& prompt) {
    const std::size_t size = image_size(image);
    if (prompt.is_empty()) throw DataError("content_check: EMPTY prompt has no content");
    const auto cov = coverage_map(image);
    if (count_components(cov, size) != prompt.count()) return 0.0;
    double best = 0.0;
    for (const auto& t : templates(prompt, size)) best = std::max(best, ncc(cov, t));
    return std::clamp(best, 0.0, 1.0);
}

double perceptual_distance(const Tensor& a, const Tensor& b) {
    validate_image(a);
    if (a.shape() != b.shape()) {
        throw ShapeError("perceptual_distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const std::size_t size = a.shape()[1];
    double total = 0.0;
    for (std::size_t factor : {1, 2, 4}) {
        const std::size_t n = size / factor;
        double acc = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t y = 0; y < n; ++y) {
                for (std::size_t x = 0; x < n; ++x) {
                    double d = 0.0;
                    for (std::size_t dy = 0; dy < factor; ++dy) {
                        for (std::size_t dx = 0; dx < factor; ++dx) {
                            const std::size_t i = (c * size + y * factor + dy) * size + x * factor + dx;
                            d += a[i] - b[i];
                        }
                    }
                    acc += std::abs(d) / static_cast<double>(factor * factor);
                }
            }
        }
        total += acc / static_cast<double>(3 * n * n);
    }
    return total / 3.0;
}

}  // namespace prefmod::synth
