#pragma once

// IDX file reading and writing (the MNIST-family container format).
//
// [offset] [type]          [description]
// 0000     32 bit integer  magic (2051 = ubyte images, 2049 = ubyte labels)
// 0004     32 bit integer  item count
// 0008     32 bit integer  rows     (image files only)
// 0012     32 bit integer  columns  (image files only)
// ....     unsigned bytes  payload, row-wise
//
// All integers are big-endian. Parse failures report the byte offset.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace noisylab {

constexpr std::uint32_t kIdxImagesMagic = 2051;
constexpr std::uint32_t kIdxLabelsMagic = 2049;

namespace detail {

inline std::uint32_t read_be_u32(std::ifstream& in, const std::string& path, std::size_t offset) {
    unsigned char w[4];
    if (!in.read(reinterpret_cast<char*>(w), 4))
        throw std::runtime_error(path + ": truncated header at byte " + std::to_string(offset));
    return (std::uint32_t(w[0]) << 24) | (std::uint32_t(w[1]) << 16) |
           (std::uint32_t(w[2]) << 8) | std::uint32_t(w[3]);
}

inline void write_be_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char w[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(w), 4);
}

}  // namespace detail

struct IdxImages {
    std::uint32_t count = 0, rows = 0, cols = 0;
    std::vector<unsigned char> pixels;  // count*rows*cols bytes
};

inline IdxImages read_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::uint32_t magic = detail::read_be_u32(in, path, 0);
    if (magic != kIdxImagesMagic)
        throw std::runtime_error(path + ": magic " + std::to_string(magic) +
                                 " at byte 0, expected " + std::to_string(kIdxImagesMagic));
    IdxImages img;
    img.count = detail::read_be_u32(in, path, 4);
    img.rows = detail::read_be_u32(in, path, 8);
    img.cols = detail::read_be_u32(in, path, 12);
    std::size_t payload = std::size_t(img.count) * img.rows * img.cols;
    img.pixels.resize(payload);
    if (payload > 0 && !in.read(reinterpret_cast<char*>(img.pixels.data()), payload)) {
        std::size_t got = static_cast<std::size_t>(in.gcount());
        throw std::runtime_error(path + ": payload truncated at byte " + std::to_string(16 + got) +
                                 ", expected " + std::to_string(16 + payload) + " total bytes");
    }
    return img;
}

inline std::vector<unsigned char> read_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::uint32_t magic = detail::read_be_u32(in, path, 0);
    if (magic != kIdxLabelsMagic)
        throw std::runtime_error(path + ": magic " + std::to_string(magic) +
                                 " at byte 0, expected " + std::to_string(kIdxLabelsMagic));
    std::uint32_t count = detail::read_be_u32(in, path, 4);
    std::vector<unsigned char> labels(count);
    if (count > 0 && !in.read(reinterpret_cast<char*>(labels.data()), count)) {
        std::size_t got = static_cast<std::size_t>(in.gcount());
        throw std::runtime_error(path + ": payload truncated at byte " + std::to_string(8 + got) +
                                 ", expected " + std::to_string(8 + count) + " total bytes");
    }
    return labels;
}

inline void write_idx_images(const std::string& path, std::uint32_t count, std::uint32_t rows,
                             std::uint32_t cols, const std::vector<unsigned char>& pixels) {
    if (pixels.size() != std::size_t(count) * rows * cols)
        throw std::invalid_argument("write_idx_images: pixel buffer does not match header");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    detail::write_be_u32(out, kIdxImagesMagic);
    detail::write_be_u32(out, count);
    detail::write_be_u32(out, rows);
    detail::write_be_u32(out, cols);
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    detail::write_be_u32(out, kIdxLabelsMagic);
    detail::write_be_u32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()),
              static_cast<std::streamsize>(labels.size()));
    if (!out) throw std::runtime_error("write to " + path + " failed");
}

}  // namespace noisylab
