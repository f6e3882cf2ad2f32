#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tta/errors.hpp"
#include "tta/fileio.hpp"
#include "tta/tensor.hpp"

// Binary PPM (P6, maxval 255) is the interchange image format: byte value v
// maps to v/255 on read and pixels quantize by round-half-up on write, so a
// write/read round trip of quantized data is bit-exact.
namespace tta {

// Round-half-up quantization to the 8-bit grid.
inline int quantize_8bit(double v) {
    int q = static_cast<int>(std::floor(v * 255.0 + 0.5));
    return std::clamp(q, 0, 255);
}

inline std::vector<unsigned char> encode_ppm(const Tensor& image) {
    if (!is_image_shape(image) || image.dims()[2] != 3)
        throw ParameterError("encode_ppm: HxWx3 image required");
    const std::size_t h = image.dims()[0], w = image.dims()[1];
    std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<unsigned char> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + h * w * 3);
    for (std::size_t i = 0; i < h * w * 3; ++i)
        bytes.push_back(static_cast<unsigned char>(quantize_8bit(image[i])));
    return bytes;
}

inline void write_ppm(const Tensor& image, const std::string& path) {
    auto bytes = encode_ppm(image);
    write_file_atomic(path, bytes.data(), bytes.size());
}

namespace detail {

// PPM header token reader: skips whitespace and '#' comments.
class PpmParser {
public:
    PpmParser(const std::vector<unsigned char>& bytes, const std::string& path)
        : bytes_(bytes), path_(path) {}

    std::string token() {
        skip_space_and_comments();
        std::string tok;
        while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_]))
            tok += static_cast<char>(bytes_[pos_++]);
        if (tok.empty()) throw ImageIoError("truncated PPM header: " + path_);
        return tok;
    }

    std::size_t positive_number() {
        std::string tok = token();
        for (char c : tok)
            if (c < '0' || c > '9') throw ImageIoError("malformed PPM header: " + path_);
        unsigned long long v = std::stoull(tok);
        if (v == 0) throw ImageIoError("zero extent in PPM header: " + path_);
        return static_cast<std::size_t>(v);
    }

    // Raster starts after exactly one whitespace byte.
    std::span<const unsigned char> raster(std::size_t expected) {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
            throw ImageIoError("malformed PPM raster separator: " + path_);
        ++pos_;
        if (bytes_.size() - pos_ < expected)
            throw ImageIoError("truncated PPM raster: " + path_);
        return std::span<const unsigned char>(bytes_.data() + pos_, expected);
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<unsigned char>& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline Tensor decode_ppm(const std::vector<unsigned char>& bytes, const std::string& path) {
    detail::PpmParser p(bytes, path);
    if (p.token() != "P6") throw ImageIoError("not a binary PPM (P6): " + path);
    const std::size_t w = p.positive_number();
    const std::size_t h = p.positive_number();
    const std::size_t maxval = p.positive_number();
    if (maxval != 255) throw ImageIoError("unsupported PPM maxval (255 required): " + path);
    auto raster = p.raster(h * w * 3);
    Tensor image({h, w, 3});
    for (std::size_t i = 0; i < raster.size(); ++i)
        image[i] = static_cast<double>(raster[i]) / 255.0;
    return image;
}

inline Tensor read_ppm(const std::string& path) {
    return decode_ppm(read_file_bytes(path), path);
}

} // namespace tta
