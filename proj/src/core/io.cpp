#include "uslam/core/io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace uslam::io {

namespace {

uint32_t crc32_of(const uint8_t* data, size_t n, uint32_t seed = 0) {
    return uint32_t(::crc32(seed, data, uInt(n)));
}

void put_u32be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

uint32_t get_u32be(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
    put_u32be(out, uint32_t(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    put_u32be(out, crc32_of(out.data() + start, out.size() - start));
}

std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& in) {
    uLongf bound = compressBound(uLong(in.size()));
    std::vector<uint8_t> out(bound);
    if (compress2(out.data(), &bound, in.data(), uLong(in.size()), 6) != Z_OK)
        throw IoError("zlib deflate failed");
    out.resize(bound);
    return out;
}

std::vector<uint8_t> zlib_inflate(const uint8_t* in, size_t n, size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf dst = uLongf(expected);
    if (uncompress(out.data(), &dst, in, uLong(n)) != Z_OK || dst != expected)
        throw IoError("zlib inflate failed");
    return out;
}

void write_file(const std::string& path, const void* data, size_t n) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(static_cast<const char*>(data), std::streamsize(n));
    if (!f) throw IoError("write failed: " + path);
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<uint8_t> buf(size_t(f.tellg()));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    return buf;
}

int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace

void write_png(const std::string& path, const GridD& img) {
    if (img.c != 1 && img.c != 3) throw IoError("png supports 1 or 3 channels");
    const int bpp = img.c;
    std::vector<uint8_t> raw;
    raw.reserve(size_t(img.h) * (size_t(img.w) * bpp + 1));
    for (int y = 0; y < img.h; ++y) {
        raw.push_back(0);  // filter: none
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < bpp; ++ch) {
                double v = std::clamp(img.at(y, x, ch), 0.0, 1.0);
                raw.push_back(uint8_t(std::lround(v * 255.0)));
            }
    }
    std::vector<uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    put_u32be(ihdr, uint32_t(img.w));
    put_u32be(ihdr, uint32_t(img.h));
    ihdr.push_back(8);                        // bit depth
    ihdr.push_back(img.c == 1 ? 0 : 2);       // gray / truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    append_chunk(png, "IHDR", ihdr);
    append_chunk(png, "IDAT", zlib_deflate(raw));
    append_chunk(png, "IEND", {});
    write_file(path, png.data(), png.size());
}

GridD read_png(const std::string& path) {
    auto buf = read_file(path);
    if (buf.size() < 8 || std::memcmp(buf.data(), "\x89PNG\r\n\x1a\n", 8) != 0)
        throw IoError("not a png: " + path);
    size_t pos = 8;
    int w = 0, h = 0, channels = 0, bitdepth = 0;
    std::vector<uint8_t> idat;
    while (pos + 8 <= buf.size()) {
        uint32_t len = get_u32be(buf.data() + pos);
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const uint8_t* payload = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            w = int(get_u32be(payload));
            h = int(get_u32be(payload + 4));
            bitdepth = payload[8];
            int color = payload[9];
            if (bitdepth != 8 || payload[12] != 0)
                throw IoError("unsupported png layout: " + path);
            channels = color == 0 ? 1 : color == 2 ? 3 : color == 6 ? 4 : -1;
            if (channels < 0) throw IoError("unsupported png color type");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0) throw IoError("bad png header: " + path);
    const int bpp = channels;
    const size_t stride = size_t(w) * bpp;
    auto raw = zlib_inflate(idat.data(), idat.size(), size_t(h) * (stride + 1));
    // undo per-row filters
    std::vector<uint8_t> pix(size_t(h) * stride);
    for (int y = 0; y < h; ++y) {
        uint8_t filter = raw[size_t(y) * (stride + 1)];
        const uint8_t* src = raw.data() + size_t(y) * (stride + 1) + 1;
        uint8_t* dst = pix.data() + size_t(y) * stride;
        const uint8_t* up = y > 0 ? pix.data() + size_t(y - 1) * stride : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= size_t(bpp) ? dst[i - bpp] : 0;
            int b = up ? up[i] : 0;
            int cc = (up && i >= size_t(bpp)) ? up[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, cc); break;
                default: throw IoError("bad png filter");
            }
            dst[i] = uint8_t(v);
        }
    }
    GridD img(h, w, channels == 4 ? 3 : channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < img.c; ++ch)
                img.at(y, x, ch) = pix[size_t(y) * stride + size_t(x) * bpp + ch] / 255.0;
    return img;
}

void write_pfm(const std::string& path, const GridD& img) {
    if (img.c != 1 && img.c != 3) throw IoError("pfm supports 1 or 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << (img.c == 1 ? "Pf" : "PF") << "\n" << img.w << " " << img.h << "\n-1.0\n";
    // PFM stores rows bottom-up
    std::vector<float> row(size_t(img.w) * img.c);
    for (int y = img.h - 1; y >= 0; --y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch)
                row[size_t(x) * img.c + ch] = float(img.at(y, x, ch));
        f.write(reinterpret_cast<const char*>(row.data()),
                std::streamsize(row.size() * sizeof(float)));
    }
    if (!f) throw IoError("write failed: " + path);
}

GridD read_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string magic;
    int w, h;
    double scale;
    f >> magic >> w >> h >> scale;
    f.get();  // single whitespace after header
    if ((magic != "Pf" && magic != "PF") || w <= 0 || h <= 0 || scale >= 0)
        throw IoError("unsupported pfm: " + path);
    int c = magic == "Pf" ? 1 : 3;
    GridD img(h, w, c);
    std::vector<float> row(size_t(w) * c);
    for (int y = h - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) img.at(y, x, ch) = row[size_t(x) * c + ch];
    }
    if (!f) throw IoError("truncated pfm: " + path);
    return img;
}

void write_feature_block(const std::string& path, const GridD& grid) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    uint32_t hdr[5] = {0x4b4c4246u /*"FBLK"*/, 1u, uint32_t(grid.h), uint32_t(grid.w),
                       uint32_t(grid.c)};
    f.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
    std::vector<float> v(grid.data.begin(), grid.data.end());
    f.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
    if (!f) throw IoError("write failed: " + path);
}

GridD read_feature_block(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    uint32_t hdr[5];
    f.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
    if (!f || hdr[0] != 0x4b4c4246u || hdr[1] != 1u)
        throw IoError("bad feature block: " + path);
    GridD grid{int(hdr[2]), int(hdr[3]), int(hdr[4])};
    std::vector<float> v(grid.size());
    f.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size() * sizeof(float)));
    if (!f) throw IoError("truncated feature block: " + path);
    std::copy(v.begin(), v.end(), grid.data.begin());
    return grid;
}

}  // namespace uslam::io
