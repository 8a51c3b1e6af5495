#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "attnguide/errors.hpp"
#include "attnguide/prompt.hpp"
#include "attnguide/rng.hpp"
#include "attnguide/tensor.hpp"

// Synthetic "colored shapes on a black canvas" scenes: the training substrate
// and the evaluation oracle. Rendering is hard-edged (no anti-aliasing) so the
// color-quantizing detector can be calibrated with a strict round-trip gate.

namespace attnguide {
namespace scenes {

constexpr int kImage = 32;
constexpr int kShapeCircle = 0;
constexpr int kShapeSquare = 1;
constexpr int kShapeTriangle = 2;

// Palette in [-1, 1] RGB; index order matches the color vocabulary words.
inline const double kPalette[4][3] = {
    {1, -1, -1},   // red
    {-1, 1, -1},   // green
    {-1, -1, 1},   // blue
    {1, 1, -1},    // yellow
};
constexpr double kBackground = -1.0;

struct SceneObject {
    int shape = kShapeCircle;   // kShape*
    int color = 0;              // palette index
    double cx = 0.5, cy = 0.5;  // normalized center
    double radius = 0.15;       // normalized half-extent, in [0.12, 0.2]
};

struct Scene {
    std::vector<SceneObject> objects;
};

enum class ShapeClass { Circle, Square, Triangle, Unknown };

inline const char* shape_class_name(ShapeClass s) {
    switch (s) {
        case ShapeClass::Circle: return "circle";
        case ShapeClass::Square: return "square";
        case ShapeClass::Triangle: return "triangle";
        default: return "unknown";
    }
}

struct Blob {
    int color = -1;          // palette index
    ShapeClass shape = ShapeClass::Unknown;
    double cx = 0, cy = 0;   // centroid in pixel units
    int min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    size_t pixels = 0;
};

struct Detection {
    std::vector<Blob> blobs;
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

// Shapes fit the [-r, r] box around their center, so separating bounding
// boxes along either axis by more than a pixel keeps the rasterized blobs
// disjoint and never 4-adjacent.
inline bool well_separated(const SceneObject& a, const SceneObject& b) {
    const double gap = 1.5 / kImage;
    const double need = a.radius + b.radius + gap;
    return std::fabs(a.cx - b.cx) > need || std::fabs(a.cy - b.cy) > need;
}

// Samples a 1-2 object scene plus its caption. Captions read
// "color shape [and color shape]" padded to the fixed prompt length; subject
// positions are the shape-token slots.
inline std::pair<Scene, PromptSpec> generate_scene(Rng& rng) {
    Scene scene;
    const int count = rng.bernoulli(0.5) ? 2 : 1;
    const double pixel = 1.0 / kImage;
    for (int i = 0; i < count; ++i) {
        SceneObject obj;
        obj.shape = rng.uniform_int(0, 2);
        obj.color = rng.uniform_int(0, 3);
        obj.radius = rng.uniform_in(0.12, 0.2);
        scene.objects.push_back(obj);
    }
    // Joint position draw for all objects per attempt; resampling only the
    // newest object can dead-end when an earlier one blocks the canvas.
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        for (auto& obj : scene.objects) {
            const double margin = obj.radius + 0.5 * pixel;
            obj.cx = rng.uniform_in(margin, 1.0 - margin);
            obj.cy = rng.uniform_in(margin, 1.0 - margin);
        }
        placed = true;
        for (size_t a = 0; a + 1 < scene.objects.size() && placed; ++a)
            for (size_t b = a + 1; b < scene.objects.size(); ++b)
                if (!well_separated(scene.objects[a], scene.objects[b])) {
                    placed = false;
                    break;
                }
    }
    if (!placed) throw std::runtime_error("generate_scene: placement rejection cap exceeded");

    PromptSpec prompt;
    prompt.token_ids.fill(vocab::kPad);
    size_t pos = 0;
    for (int i = 0; i < count; ++i) {
        if (i > 0) prompt.token_ids[pos++] = vocab::kAnd;
        prompt.token_ids[pos++] = vocab::kColorBase + scene.objects[static_cast<size_t>(i)].color;
        const size_t shape_pos = pos;
        prompt.token_ids[pos++] = vocab::kShapeBase + scene.objects[static_cast<size_t>(i)].shape;
        prompt.subject_positions.push_back(shape_pos);
        prompt.attribute_bindings[shape_pos] = shape_pos - 1;
    }
    return {scene, prompt};
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline bool contains(const SceneObject& o, double x, double y) {
    const double dx = x - o.cx, dy = y - o.cy;
    switch (o.shape) {
        case kShapeCircle:
            return dx * dx + dy * dy <= o.radius * o.radius;
        case kShapeSquare:
            return std::fabs(dx) <= o.radius && std::fabs(dy) <= o.radius;
        case kShapeTriangle:
            // Upward triangle: apex at (cx, cy - r), base corners (cx +- r, cy + r).
            return dy >= -o.radius && dy <= o.radius && std::fabs(dx) <= (dy + o.radius) * 0.5;
        default:
            return false;
    }
}

// Pure rasterizer: pixel-center membership, palette colors, black background.
template <typename S>
Tensor<S> render(const Scene& scene) {
    Tensor<S> img = Tensor<S>::full({kImage, kImage, 3}, static_cast<S>(kBackground));
    for (int py = 0; py < kImage; ++py) {
        const double y = (py + 0.5) / kImage;
        for (int px = 0; px < kImage; ++px) {
            const double x = (px + 0.5) / kImage;
            for (const auto& obj : scene.objects) {
                if (contains(obj, x, y)) {
                    for (int c = 0; c < 3; ++c)
                        img[static_cast<size_t>((py * kImage + px) * 3 + c)] =
                            static_cast<S>(kPalette[obj.color][c]);
                    break;
                }
            }
        }
    }
    return img;
}

// Analytic centroid of the continuous shape, in pixel units. Used as the
// expected value in round-trip checks (a triangle's centroid sits below its
// bounding-box center).
inline std::pair<double, double> shape_centroid_px(const SceneObject& o) {
    double cy = o.cy;
    if (o.shape == kShapeTriangle) cy += o.radius / 3.0;
    return {o.cx * kImage, cy * kImage};
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

// Nearest palette color, or -1 for background when nothing is within the
// quantization threshold (Euclidean distance 0.5 in [-1,1] RGB).
inline int quantize_pixel(double r, double g, double b) {
    int best = -1;
    double best_d2 = 0.5 * 0.5;
    for (int c = 0; c < 4; ++c) {
        const double dr = r - kPalette[c][0], dg = g - kPalette[c][1], db = b - kPalette[c][2];
        const double d2 = dr * dr + dg * dg + db * db;
        if (d2 <= best_d2) {
            best_d2 = d2;
            best = c;
        }
    }
    return best;
}

// Fill-ratio bands with two tie-breaks for discretization effects measured on
// rasterized shapes: squares fill their bbox exactly and own its corners
// (small circles can reach fill 0.94 but never the corners), and triangles
// are bottom-heavy (centroid offset >= 0.11 of bbox height; symmetric shapes
// stay within 0.06).
inline ShapeClass classify_fill(double fill, int corner_pixels, double centroid_voff) {
    if (fill >= 0.9 && corner_pixels >= 3) return ShapeClass::Square;
    if (centroid_voff >= 0.08 && fill >= 0.38 && fill <= 0.70) return ShapeClass::Triangle;
    const double kCircleFill = 0.78539816339744831;  // pi/4
    if (fill >= 0.60 && fill <= 0.95 && (fill <= kCircleFill + 0.12 || corner_pixels <= 2))
        return ShapeClass::Circle;
    if (std::fabs(fill - 0.5) <= 0.12) return ShapeClass::Triangle;
    return ShapeClass::Unknown;
}

template <typename S>
Detection detect(const Tensor<S>& image) {
    if (image.shape() != std::vector<size_t>{kImage, kImage, 3})
        throw DimensionError("detect: expected " + std::to_string(kImage) + "x" +
                             std::to_string(kImage) + "x3 image, got " + shape_str(image.shape()));
    std::vector<int> label(kImage * kImage, -1);
    for (int p = 0; p < kImage * kImage; ++p) {
        const size_t base = static_cast<size_t>(p) * 3;
        label[static_cast<size_t>(p)] =
            quantize_pixel(static_cast<double>(image[base]), static_cast<double>(image[base + 1]),
                           static_cast<double>(image[base + 2]));
    }

    Detection det;
    std::vector<bool> seen(kImage * kImage, false);
    for (int start = 0; start < kImage * kImage; ++start) {
        if (seen[static_cast<size_t>(start)] || label[static_cast<size_t>(start)] < 0) continue;
        const int color = label[static_cast<size_t>(start)];
        // 4-connected flood fill
        std::vector<int> members;
        std::deque<int> queue{start};
        seen[static_cast<size_t>(start)] = true;
        while (!queue.empty()) {
            const int p = queue.front();
            queue.pop_front();
            members.push_back(p);
            const int px = p % kImage, py = p / kImage;
            const int neighbors[4] = {px > 0 ? p - 1 : -1, px < kImage - 1 ? p + 1 : -1,
                                      py > 0 ? p - kImage : -1, py < kImage - 1 ? p + kImage : -1};
            for (int q : neighbors) {
                if (q < 0 || seen[static_cast<size_t>(q)] || label[static_cast<size_t>(q)] != color)
                    continue;
                seen[static_cast<size_t>(q)] = true;
                queue.push_back(q);
            }
        }
        if (members.size() < 8) continue;

        Blob blob;
        blob.color = color;
        blob.pixels = members.size();
        blob.min_x = kImage;
        blob.min_y = kImage;
        blob.max_x = -1;
        blob.max_y = -1;
        double sx = 0, sy = 0;
        for (int p : members) {
            const int px = p % kImage, py = p / kImage;
            sx += px + 0.5;
            sy += py + 0.5;
            blob.min_x = std::min(blob.min_x, px);
            blob.max_x = std::max(blob.max_x, px);
            blob.min_y = std::min(blob.min_y, py);
            blob.max_y = std::max(blob.max_y, py);
        }
        blob.cx = sx / static_cast<double>(members.size());
        blob.cy = sy / static_cast<double>(members.size());
        const double height = static_cast<double>(blob.max_y - blob.min_y + 1);
        const double area = static_cast<double>(blob.max_x - blob.min_x + 1) * height;
        int corners = 0;
        for (int p : members) {
            const int px = p % kImage, py = p / kImage;
            if ((px == blob.min_x || px == blob.max_x) && (py == blob.min_y || py == blob.max_y))
                ++corners;
        }
        const double bbox_cy = (blob.min_y + blob.max_y + 1) * 0.5;
        const double voff = (blob.cy - bbox_cy) / height;
        blob.shape = classify_fill(static_cast<double>(members.size()) / area, corners, voff);
        det.blobs.push_back(blob);
    }
    return det;
}

}  // namespace scenes
}  // namespace attnguide
