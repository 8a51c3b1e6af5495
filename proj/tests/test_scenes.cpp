#include <doctest.h>

#include <cmath>
#include <map>

#include "attnguide/scenes.hpp"
#include "round_trip.hpp"

using namespace attnguide;
using namespace attnguide::scenes;

TEST_CASE("generate_scene is seeded and respects spacing invariants") {
    Rng a(1234), b(1234);
    auto [sa, pa] = generate_scene(a);
    auto [sb, pb] = generate_scene(b);
    REQUIRE(sa.objects.size() == sb.objects.size());
    for (size_t i = 0; i < sa.objects.size(); ++i) {
        CHECK(sa.objects[i].cx == sb.objects[i].cx);
        CHECK(sa.objects[i].shape == sb.objects[i].shape);
    }
    CHECK(pa.token_ids == pb.token_ids);

    Rng rng(99);
    for (int trial = 0; trial < 300; ++trial) {
        auto [scene, prompt] = generate_scene(rng);
        REQUIRE(scene.objects.size() >= 1);
        REQUIRE(scene.objects.size() <= 2);
        if (scene.objects.size() == 2) {
            const auto& o1 = scene.objects[0];
            const auto& o2 = scene.objects[1];
            const double d = std::hypot(o1.cx - o2.cx, o1.cy - o2.cy);
            CHECK(d > o1.radius + o2.radius);  // stated non-overlap invariant
        }
        for (const auto& o : scene.objects) {
            CHECK(o.cx - o.radius >= 0.0);
            CHECK(o.cx + o.radius <= 1.0);
            CHECK(o.cy - o.radius >= 0.0);
            CHECK(o.cy + o.radius <= 1.0);
            CHECK(o.radius >= 0.12);
            CHECK(o.radius <= 0.2);
        }
        // caption structure: color shape [and color shape], pad-filled
        CHECK(vocab::is_color(prompt.token_ids[0]));
        CHECK(vocab::is_shape(prompt.token_ids[1]));
        CHECK(prompt.subject_positions[0] == 1);
        CHECK(prompt.attribute_bindings.at(1) == 0);
        if (scene.objects.size() == 2) {
            CHECK(prompt.token_ids[2] == vocab::kAnd);
            CHECK(prompt.subject_positions[1] == 4);
            CHECK(prompt.attribute_bindings.at(4) == 3);
        }
    }
}

TEST_CASE("attribute frequencies are uniform") {
    Rng rng(2024);
    std::map<int, size_t> color_count;
    size_t total = 0;
    for (int i = 0; i < 10000; ++i) {
        auto [scene, prompt] = generate_scene(rng);
        for (const auto& o : scene.objects) {
            ++color_count[o.color];
            ++total;
        }
    }
    for (int c = 0; c < 4; ++c) {
        const double freq = static_cast<double>(color_count[c]) / static_cast<double>(total);
        CHECK(freq > 0.23);
        CHECK(freq < 0.27);
    }
}

TEST_CASE("render basics") {
    Scene empty;
    Tensor<float> img = render<float>(empty);
    for (size_t i = 0; i < img.numel(); ++i) CHECK(img[i] == -1.0f);

    // Deterministic bytes.
    Scene one;
    one.objects.push_back({kShapeCircle, 0, 0.5, 0.5, 0.15});
    Tensor<float> r1 = render<float>(one), r2 = render<float>(one);
    CHECK(r1.data() == r2.data());

    // Red pixel count within 15% of the continuous disk area.
    size_t reds = 0;
    for (int p = 0; p < kImage * kImage; ++p)
        if (r1[static_cast<size_t>(p) * 3] == 1.0f) ++reds;
    const double expected = 3.14159265358979 * (0.15 * 32) * (0.15 * 32);
    CHECK(static_cast<double>(reds) > expected * 0.85);
    CHECK(static_cast<double>(reds) < expected * 1.15);
}

TEST_CASE("detect basics") {
    Tensor<float> black = Tensor<float>::full({kImage, kImage, 3}, -1.0f);
    CHECK(detect(black).blobs.empty());

    // Two disjoint same-color squares stay two blobs under 4-connectivity.
    Scene two;
    two.objects.push_back({kShapeSquare, 2, 0.25, 0.25, 0.13});
    two.objects.push_back({kShapeSquare, 2, 0.75, 0.75, 0.13});
    Detection det = detect(render<float>(two));
    REQUIRE(det.blobs.size() == 2);
    for (const auto& b : det.blobs) {
        CHECK(b.color == 2);
        CHECK(b.shape == ShapeClass::Square);
    }
}

TEST_CASE("detector gate: render->detect round trip on 1000 scenes") {
    Rng rng(777);
    size_t objects = 0, recovered = 0;
    size_t blob_count_mismatch = 0;
    for (int i = 0; i < 1000; ++i) {
        auto [scene, prompt] = generate_scene(rng);
        Detection det = detect(render<float>(scene));
        if (det.blobs.size() != scene.objects.size()) ++blob_count_mismatch;
        roundtrip::Tally rt = roundtrip::score(scene, det);
        objects += rt.objects;
        recovered += rt.recovered;
    }
    const double accuracy = static_cast<double>(recovered) / static_cast<double>(objects);
    INFO("per-object accuracy " << accuracy << " (" << recovered << "/" << objects
                                 << "), scenes with blob-count mismatch " << blob_count_mismatch);
    CHECK(accuracy >= 0.99);
}
