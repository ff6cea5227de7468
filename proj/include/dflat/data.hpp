#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dflat/errors.hpp"
#include "dflat/rng.hpp"
#include "dflat/tensor.hpp"

namespace dflat {

enum class Task { stripes, rects, checker };

inline const char* task_name(Task t) {
    switch (t) {
        case Task::stripes:
            return "stripes";
        case Task::rects:
            return "rects";
        case Task::checker:
            return "checker";
    }
    return "?";
}

inline Task task_from_name(const std::string& s) {
    if (s == "stripes") return Task::stripes;
    if (s == "rects") return Task::rects;
    if (s == "checker") return Task::checker;
    throw ConfigError("unknown task: " + s + " (want stripes|rects|checker)");
}

struct SyntheticSample {
    Tensor image;                   // [H x W x 3], values in [0, 1]
    std::vector<std::size_t> mask;  // H*W row-major, values in [0, n_classes)
};

// Fixed class palette, shared by image synthesis and mask rendering. Hue
// wheel with full saturation; checker overrides with black/white so the
// patch-averaged image carries no class signal at all.
inline std::array<double, 3> class_color(std::size_t c, std::size_t n_classes) {
    const double hue = 6.0 * static_cast<double>(c) / static_cast<double>(n_classes);
    const int sector = static_cast<int>(hue) % 6;
    const double f = hue - static_cast<double>(static_cast<int>(hue));
    const double v = 0.95, lo = 0.15;
    const double q = v - (v - lo) * f;
    const double t = lo + (v - lo) * f;
    switch (sector) {
        case 0:
            return {v, t, lo};
        case 1:
            return {q, v, lo};
        case 2:
            return {lo, v, t};
        case 3:
            return {lo, q, v};
        case 4:
            return {t, lo, v};
        default:
            return {v, lo, q};
    }
}

namespace detail {

inline double clip01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline void paint(Tensor& image, std::size_t i, std::size_t j, const std::array<double, 3>& rgb,
                  Rng* noise, double sigma) {
    for (std::size_t c = 0; c < 3; ++c) {
        double v = rgb[c];
        if (noise && sigma > 0.0) {
            v += noise->normal(0.0, sigma);
        }
        image.at(i, j, c) = clip01(v);
    }
}

}  // namespace detail

// Slow brightness field underneath the checker classes, bounded to keep the
// +-0.25 class offsets inside [0, 1].
inline double checker_ramp(std::size_t i, std::size_t j, std::size_t H, std::size_t W) {
    const double two_pi = 6.283185307179586;
    return 0.5 + 0.1 * std::sin(two_pi * static_cast<double>(i) / static_cast<double>(H)) +
           0.1 * std::cos(two_pi * static_cast<double>(j) / static_cast<double>(W));
}

// Diagonal band label: exactly n_classes bands across the (i+j) range, band
// index == class.
inline std::size_t stripes_label(std::size_t i, std::size_t j, std::size_t H, std::size_t W,
                                 std::size_t n_classes) {
    const std::size_t span = H + W - 1;
    const std::size_t band_w = (span + n_classes - 1) / n_classes;
    const std::size_t band = (i + j) / band_w;
    return band < n_classes ? band : n_classes - 1;
}

inline std::vector<SyntheticSample> generate(Task task, std::size_t n, std::size_t H,
                                             std::size_t W, std::size_t n_classes,
                                             std::uint64_t seed) {
    if (n < 1) {
        throw ConfigError("generate: need at least one sample");
    }
    if (n_classes < 2) {
        throw ConfigError("generate: n_classes must be >= 2");
    }
    if (task == Task::stripes && n_classes > H + W - 1) {
        throw ConfigError("generate: " + std::to_string(n_classes) +
                          " classes exceed the " + std::to_string(H + W - 1) +
                          " representable diagonal bands");
    }
    if (task == Task::checker && n_classes != 3) {
        throw ConfigError(
            "generate: the period-2 checker pattern (row parity + column parity) represents "
            "exactly 3 classes");
    }
    Rng rng(seed);
    std::vector<SyntheticSample> out;
    out.reserve(n);
    std::size_t rect_class_cursor = 0;
    for (std::size_t s = 0; s < n; ++s) {
        SyntheticSample sample{Tensor({H, W, 3}), std::vector<std::size_t>(H * W, 0)};
        switch (task) {
            case Task::stripes: {
                for (std::size_t i = 0; i < H; ++i) {
                    for (std::size_t j = 0; j < W; ++j) {
                        const std::size_t c = stripes_label(i, j, H, W, n_classes);
                        sample.mask[i * W + j] = c;
                        detail::paint(sample.image, i, j, class_color(c, n_classes), &rng, 0.05);
                    }
                }
                break;
            }
            case Task::rects: {
                // Background class 0, then n_classes rectangles cycling over
                // the foreground classes; sizes capped at half the extent so
                // the background always survives.
                for (std::size_t i = 0; i < H; ++i) {
                    for (std::size_t j = 0; j < W; ++j) {
                        sample.mask[i * W + j] = 0;
                    }
                }
                for (std::size_t r = 0; r < n_classes; ++r) {
                    const std::size_t cls = 1 + rect_class_cursor % (n_classes - 1);
                    ++rect_class_cursor;
                    const std::size_t rh = 1 + rng.below(std::max<std::size_t>(1, H / 2));
                    const std::size_t rw = 1 + rng.below(std::max<std::size_t>(1, W / 2));
                    const std::size_t i0 = rng.below(H - rh + 1);
                    const std::size_t j0 = rng.below(W - rw + 1);
                    for (std::size_t i = i0; i < i0 + rh; ++i) {
                        for (std::size_t j = j0; j < j0 + rw; ++j) {
                            sample.mask[i * W + j] = cls;
                        }
                    }
                }
                for (std::size_t i = 0; i < H; ++i) {
                    for (std::size_t j = 0; j < W; ++j) {
                        detail::paint(sample.image, i, j,
                                      class_color(sample.mask[i * W + j], n_classes), &rng, 0.05);
                    }
                }
                break;
            }
            case Task::checker: {
                // Period-2 checker pattern: class = row parity + column
                // parity, so the extreme classes tile the two diagonal
                // sublattices. Rendered as brightness offsets (c-1)*0.25
                // around a slow spatial ramp; the offsets cancel exactly over
                // any even-sized tile, so patch averages carry the ramp but
                // none of the period-2 phase. The ramp keeps tokens position-
                // distinguishable, which the decoder queries need; the
                // pattern itself is invisible at encoder resolution.
                for (std::size_t i = 0; i < H; ++i) {
                    for (std::size_t j = 0; j < W; ++j) {
                        const std::size_t c = (i % 2) + (j % 2);
                        sample.mask[i * W + j] = c;
                        const double v = checker_ramp(i, j, H, W) +
                                         (static_cast<double>(c) - 1.0) * 0.25;
                        detail::paint(sample.image, i, j, {v, v, v}, nullptr, 0.0);
                    }
                }
                break;
            }
        }
        out.push_back(std::move(sample));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Portable pixmap output (P6) for rendered masks and images.
// ---------------------------------------------------------------------------

inline void write_ppm(const std::string& path, const std::vector<unsigned char>& rgb,
                      std::size_t H, std::size_t W) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("cannot open for write: " + path);
    }
    os << "P6\n" << W << " " << H << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!os) {
        throw IoError("write failed: " + path);
    }
}

inline void write_mask_ppm(const std::string& path, const std::vector<std::size_t>& mask,
                           std::size_t H, std::size_t W, std::size_t n_classes) {
    std::vector<unsigned char> rgb(H * W * 3);
    for (std::size_t p = 0; p < H * W; ++p) {
        const auto color = class_color(mask[p], n_classes);
        for (std::size_t c = 0; c < 3; ++c) {
            rgb[p * 3 + c] = static_cast<unsigned char>(color[c] * 255.0 + 0.5);
        }
    }
    write_ppm(path, rgb, H, W);
}

inline void write_image_ppm(const std::string& path, const Tensor& image) {
    const std::size_t H = image.dim(0), W = image.dim(1);
    std::vector<unsigned char> rgb(H * W * 3);
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            for (std::size_t c = 0; c < 3; ++c) {
                rgb[(i * W + j) * 3 + c] =
                    static_cast<unsigned char>(detail::clip01(image.at(i, j, c)) * 255.0 + 0.5);
            }
        }
    }
    write_ppm(path, rgb, H, W);
}

}  // namespace dflat
