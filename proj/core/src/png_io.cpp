#include "depthfill/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace depthfill {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_abort(png_structp, png_const_charp msg) {
    throw std::runtime_error(std::string("png: ") + (msg ? msg : "unknown error"));
}

void png_quiet_warning(png_structp, png_const_charp) {}

void write_png16_rows(const std::string& path, int height, int width,
                      const std::uint16_t* pixels) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw std::runtime_error("png: cannot open for writing: " + path);
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_abort, png_quiet_warning);
    if (!png) throw std::runtime_error("png: write struct allocation failed");
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, file.get());
        png_set_IHDR(png, info, width, height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        std::vector<std::uint8_t> row(static_cast<std::size_t>(width) * 2);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const std::uint16_t v = pixels[static_cast<std::size_t>(y) * width + x];
                row[2 * x] = static_cast<std::uint8_t>(v >> 8);  // network byte order
                row[2 * x + 1] = static_cast<std::uint8_t>(v & 0xff);
            }
            png_write_row(png, row.data());
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
}

std::vector<std::uint16_t> read_png16_rows(const std::string& path, int* height, int* width) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw std::runtime_error("png: cannot open for reading: " + path);
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_abort, png_quiet_warning);
    if (!png) throw std::runtime_error("png: read struct allocation failed");
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, file.get());
        png_read_info(png, info);
        if (png_get_bit_depth(png, info) != 16 ||
            png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
            throw std::runtime_error("png: " + path + " is not 16-bit grayscale");
        }
        *width = static_cast<int>(png_get_image_width(png, info));
        *height = static_cast<int>(png_get_image_height(png, info));
        std::vector<std::uint16_t> pixels(static_cast<std::size_t>(*width) * *height);
        std::vector<std::uint8_t> row(static_cast<std::size_t>(*width) * 2);
        for (int y = 0; y < *height; ++y) {
            png_read_row(png, row.data(), nullptr);
            for (int x = 0; x < *width; ++x) {
                pixels[static_cast<std::size_t>(y) * *width + x] =
                    static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
            }
        }
        png_destroy_read_struct(&png, &info, nullptr);
        return pixels;
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
}

}  // namespace

void write_depth_png16(const std::string& path, const DepthMap& depth) {
    std::vector<std::uint16_t> pixels(depth.values.size());
    for (std::size_t i = 0; i < depth.values.size(); ++i) {
        const float m = depth.values[i];
        if (m == 0.0f) {
            pixels[i] = 0;
            continue;
        }
        if (!(m > 0.0f) || m > 65.535f || !std::isfinite(m)) {
            throw std::invalid_argument("depth png: value " + std::to_string(m) +
                                        " m outside the 16-bit millimeter range");
        }
        const long mm = std::lround(static_cast<double>(m) * 1000.0);
        if (mm < 1 || mm > 65535) {
            throw std::invalid_argument("depth png: value " + std::to_string(m) +
                                        " m not encodable in millimeters");
        }
        pixels[i] = static_cast<std::uint16_t>(mm);
    }
    write_png16_rows(path, depth.height, depth.width, pixels.data());
}

DepthMap read_depth_png16(const std::string& path) {
    int h = 0, w = 0;
    const auto pixels = read_png16_rows(path, &h, &w);
    DepthMap depth(h, w);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        depth.values[i] = static_cast<float>(pixels[i]) / 1000.0f;
    }
    return depth;
}

void write_gray_png16(const std::string& path, const ImageGray16& image) {
    write_png16_rows(path, image.height, image.width, image.pixels.data());
}

ImageGray16 read_gray_png16(const std::string& path) {
    int h = 0, w = 0;
    auto pixels = read_png16_rows(path, &h, &w);
    ImageGray16 image(h, w);
    image.pixels = std::move(pixels);
    return image;
}

void write_rgb_png8(const std::string& path, const ImageRGB& image) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw std::runtime_error("png: cannot open for writing: " + path);
    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_abort, png_quiet_warning);
    if (!png) throw std::runtime_error("png: write struct allocation failed");
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, file.get());
        png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
                     PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < image.height; ++y) {
            png_write_row(png, const_cast<png_bytep>(image.pixels.data() +
                                                     static_cast<std::size_t>(y) *
                                                         image.width * 3));
        }
        png_write_end(png, nullptr);
        png_destroy_write_struct(&png, &info);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
}

ImageRGB read_rgb_png8(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw std::runtime_error("png: cannot open for reading: " + path);
    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_abort, png_quiet_warning);
    if (!png) throw std::runtime_error("png: read struct allocation failed");
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, file.get());
        png_read_info(png, info);
        png_set_expand(png);
        png_set_strip_16(png);
        png_set_strip_alpha(png);
        png_set_gray_to_rgb(png);
        png_read_update_info(png, info);
        if (png_get_channels(png, info) != 3) {
            throw std::runtime_error("png: " + path + " did not decode to RGB");
        }
        ImageRGB image(static_cast<int>(png_get_image_height(png, info)),
                       static_cast<int>(png_get_image_width(png, info)));
        for (int y = 0; y < image.height; ++y) {
            png_read_row(png,
                         image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3,
                         nullptr);
        }
        png_destroy_read_struct(&png, &info, nullptr);
        return image;
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
}

}  // namespace depthfill
