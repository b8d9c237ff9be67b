#include "dpanet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dpanet/errors.hpp"

namespace dpanet {

Tensor<float> read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw std::runtime_error("cannot read image " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&image);
        throw std::runtime_error("cannot decode image " + path.string() + ": " + image.message);
    }
    const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<float> values(3 * plane);
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c) values[c * plane + p] = buffer[3 * p + c] / 255.0f;
    return Tensor<float>({1, 3, h, w}, std::move(values));
}

void write_png(const std::filesystem::path& path, const Tensor<float>& img, int index) {
    const Shape s = img.shape();
    if (s.c != 3 || index < 0 || index >= s.n)
        throw DimensionError("write_png: need item " + std::to_string(index) + " of an n x 3 x h x w tensor, got " +
                             s.str());
    const std::size_t plane = s.plane();
    const float* src = img.data() + static_cast<std::size_t>(index) * 3 * plane;
    std::vector<png_byte> buffer(3 * plane);
    for (std::size_t p = 0; p < plane; ++p)
        for (int c = 0; c < 3; ++c)
            buffer[3 * p + c] =
                static_cast<png_byte>(std::lround(std::clamp(src[c * plane + p], 0.0f, 1.0f) * 255.0f));

    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(s.w);
    image.height = static_cast<png_uint_32>(s.h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr))
        throw std::runtime_error("cannot write image " + path.string() + ": " + image.message);
}

}  // namespace dpanet
