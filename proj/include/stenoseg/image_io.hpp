#pragma once

// Grayscale image I/O: PGM (P2/P5) and PNG, 8- or 16-bit. Pixels are stored
// as uint16 regardless of bit depth; `max_value` records the source scale.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "stenoseg/tensor.hpp"

namespace stenoseg {

struct GrayImage {
    std::size_t width = 0, height = 0;
    std::uint16_t max_value = 255;  // 255 or 65535
    std::vector<std::uint16_t> pixels;  // row-major, height*width
};

namespace detail {

inline int pgm_next_token(std::istream& in, std::string& tok) {
    tok.clear();
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {  // comment to end of line
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return 1;
            continue;
        }
        tok.push_back(char(c));
    }
    return tok.empty() ? 0 : 1;
}

}  // namespace detail

inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open image: " + path);
    std::string tok;
    if (!detail::pgm_next_token(in, tok) || (tok != "P5" && tok != "P2"))
        throw IOError("not a PGM file: " + path);
    const bool binary = tok == "P5";
    auto next_int = [&](const char* what) {
        std::string t;
        if (!detail::pgm_next_token(in, t)) throw IOError(std::string("truncated PGM header (") +
                                                          what + "): " + path);
        return std::stoul(t);
    };
    GrayImage img;
    img.width = next_int("width");
    img.height = next_int("height");
    const unsigned long maxval = next_int("maxval");
    if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535)
        throw IOError("bad PGM header: " + path);
    img.max_value = std::uint16_t(maxval);
    img.pixels.resize(img.width * img.height);
    if (binary) {
        const bool wide = maxval > 255;
        std::vector<unsigned char> raw(img.pixels.size() * (wide ? 2 : 1));
        in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
        if (std::size_t(in.gcount()) != raw.size()) throw IOError("truncated PGM data: " + path);
        for (std::size_t i = 0; i < img.pixels.size(); ++i)
            img.pixels[i] = wide ? std::uint16_t((raw[2 * i] << 8) | raw[2 * i + 1])
                                 : std::uint16_t(raw[i]);
    } else {
        for (auto& p : img.pixels) {
            std::string t;
            if (!detail::pgm_next_token(in, t)) throw IOError("truncated PGM data: " + path);
            p = std::uint16_t(std::stoul(t));
        }
    }
    return img;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOError("cannot write image: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n" << img.max_value << "\n";
    const bool wide = img.max_value > 255;
    for (std::uint16_t p : img.pixels) {
        if (wide) {
            const char hi = char(p >> 8), lo = char(p & 0xff);
            out.write(&hi, 1);
            out.write(&lo, 1);
        } else {
            const char b = char(p & 0xff);
            out.write(&b, 1);
        }
    }
    if (!out) throw IOError("short write: " + path);
}

inline GrayImage read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IOError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IOError("libpng init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IOError("corrupt PNG: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const png_uint_32 w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    // normalize everything to 8/16-bit grayscale
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int out_depth = png_get_bit_depth(png, info);

    GrayImage img;
    img.width = w;
    img.height = h;
    img.max_value = out_depth > 8 ? 65535 : 255;
    img.pixels.resize(std::size_t(w) * h);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> row(rowbytes);
    for (png_uint_32 r = 0; r < h; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 c = 0; c < w; ++c)
            img.pixels[std::size_t(r) * w + c] =
                out_depth > 8 ? std::uint16_t((row[2 * c] << 8) | row[2 * c + 1])
                              : std::uint16_t(row[c]);
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline void write_png(const std::string& path, const GrayImage& img) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IOError("cannot write image: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IOError("libpng init failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IOError("PNG write failure: " + path);
    }
    const int depth = img.max_value > 255 ? 16 : 8;
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(img.width * (depth == 16 ? 2 : 1));
    for (std::size_t r = 0; r < img.height; ++r) {
        for (std::size_t c = 0; c < img.width; ++c) {
            const std::uint16_t p = img.pixels[r * img.width + c];
            if (depth == 16) {
                row[2 * c] = (unsigned char)(p >> 8);
                row[2 * c + 1] = (unsigned char)(p & 0xff);
            } else {
                row[c] = (unsigned char)(p & 0xff);
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// Dispatch on file magic.
inline GrayImage read_image(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IOError("cannot open image: " + path);
    unsigned char magic[2] = {0, 0};
    probe.read(reinterpret_cast<char*>(magic), 2);
    probe.close();
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '2')) return read_pgm(path);
    if (magic[0] == 0x89 && magic[1] == 'P') return read_png(path);
    throw IOError("unsupported image format: " + path);
}

}  // namespace stenoseg
