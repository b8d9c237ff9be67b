#pragma once

#include <cstdint>
#include <vector>

#include "dpanet/tensor.hpp"

namespace dpanet {

enum class RegionShape { full, rectangle, ellipse };
enum class TextureKind { checkerboard, grating, blocks };

/// One constant-depth layer. `mask` covers the layer's full extent (also
/// where nearer layers hide it) and `color` is its texture over the whole
/// frame.
struct Layer {
    RegionShape shape = RegionShape::full;
    TextureKind texture = TextureKind::checkerboard;
    double depth = 1.0;
    std::vector<float> mask;   // h * w, 0 or 1
    std::vector<float> color;  // 3 * h * w, in [0, 1]
};

struct Scene {
    int height = 0;
    int width = 0;
    Tensor<float> sharp;        // 1 x 3 x h x w
    std::vector<float> depth;   // h * w, depth of the visible layer
    std::vector<Layer> layers;  // back to front; layers[0] is the full-frame background
};

/// Procedural scene: a textured background plus region_count - 1 textured
/// rectangles or ellipses. Depths lie in [1, z_max]; the background is the
/// farthest layer. Same arguments, same scene.
Scene generate_scene(std::uint64_t seed, int height, int width, int region_count, double z_max = 8.0);

/// Thin-lens blur: signed radius r = clamp(gain * (depth - focal_depth), -max_radius, max_radius).
struct LensModel {
    double focal_depth = 3.0;
    double gain = 1.5;       // pixels per depth unit
    double max_radius = 6.0;

    double radius(double depth) const;
};

enum class View { left, right };

/// Square kernel of side 2 * half + 1, row-major, unit sum.
struct Psf {
    int half = 0;
    std::vector<double> weights;

    double at(int dy, int dx) const { return weights[(dy + half) * (2 * half + 1) + dx + half]; }
};

/// Half of a defocus disc of radius |r|: pixel weights are the disc area
/// on one side of the vertical diameter, integrated on a 16 x 16 grid per
/// pixel. For r > 0 the left view keeps the x < 0 half and the right view
/// the x > 0 half; r < 0 swaps them. r = 0 gives a delta.
Psf half_disc_psf(double r, View view);

struct DpRender {
    Tensor<float> left;          // 1 x 3 x h x w
    Tensor<float> right;
    std::vector<float> radius;   // h * w, signed radius of the visible layer
};

/// Blurs every layer with its view's half-disc PSF and composites back to
/// front: acc = acc * (1 - psf * mask) + psf * (mask * color). Borders
/// replicate. A uniform region of radius r > 0 appears shifted by about
/// 4r / (3 pi) to the left in the left view and to the right in the right
/// view, so I_R(x) ~ I_L(x - 8r / (3 pi)).
DpRender render_dp_pair(const Scene& scene, const LensModel& lens);

/// Expected left-to-right disparity of a uniform region, 8r / (3 pi).
double expected_disparity(double r);

}  // namespace dpanet
