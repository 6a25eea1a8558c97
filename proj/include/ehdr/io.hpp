#pragma once

// File-format codecs: PFM radiance images, 8-bit RGB PNG (via libpng),
// EHEV event streams, EHDT tensor blobs, directory checkpoints and
// INI-style configuration files.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "ehdr/event.hpp"
#include "ehdr/image.hpp"
#include "ehdr/tensor.hpp"

namespace ehdr {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace io_detail {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
    is.read(reinterpret_cast<char*>(p), std::streamsize(n));
    if (size_t(is.gcount()) != n)
        throw FormatError(std::string("truncated file while reading ") + what + " at byte offset " +
                          std::to_string(int64_t(is.tellg()) < 0 ? 0 : int64_t(is.tellg())));
}

template <class T>
void write_le(std::ostream& os, T v) {
    // host is little-endian on every supported target
    write_bytes(os, &v, sizeof(T));
}

template <class T>
T read_le(std::istream& is, const char* what) {
    T v;
    read_bytes(is, &v, sizeof(T), what);
    return v;
}

}  // namespace io_detail

// ---- PFM ----

// Color "PF", negative scale = little-endian, rows bottom-to-top per spec.
inline void write_pfm(const std::string& path, const HdrImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << "PF\n" << img.width << " " << img.height << "\n-1.0\n";
    for (int y = img.height - 1; y >= 0; --y)
        io_detail::write_bytes(os, img.pix.data() + size_t(y) * img.width * 3,
                               size_t(img.width) * 3 * sizeof(float));
}

inline HdrImage read_pfm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "PF") throw FormatError(path + ": bad PFM magic at byte offset 0");
    int w = 0, h = 0;
    double scale = 0.0;
    is >> w >> h >> scale;
    if (!is || w <= 0 || h <= 0 || scale == 0.0)
        throw FormatError(path + ": malformed PFM header");
    is.get();  // single whitespace after scale
    HdrImage img(w, h);
    std::vector<float> row(size_t(w) * 3);
    for (int y = h - 1; y >= 0; --y) {
        io_detail::read_bytes(is, row.data(), row.size() * sizeof(float), "PFM pixel data");
        if (scale > 0.0)  // big-endian payload
            for (auto& v : row) {
                uint32_t u;
                std::memcpy(&u, &v, 4);
                u = __builtin_bswap32(u);
                std::memcpy(&v, &u, 4);
            }
        std::copy(row.begin(), row.end(), img.pix.begin() + size_t(y) * w * 3);
    }
    return img;
}

// ---- PNG (8-bit RGB) ----

inline void write_png(const std::string& path, const LdrImage& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw FormatError("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw FormatError("libpng failure writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(size_t(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                row[size_t(x) * 3 + c] =
                    png_byte(std::lround(std::clamp(img.at(x, y, c), 0.0f, 1.0f) * 255.0f));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline LdrImage read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw FormatError("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw FormatError("libpng failure reading " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = int(png_get_image_width(png, info));
    const int h = int(png_get_image_height(png, info));
    LdrImage img(w, h);
    std::vector<png_byte> row(size_t(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) = float(row[size_t(x) * 3 + c]) / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

// Sidecar text metadata next to a bracket PNG.
inline void write_ldr_meta(const std::string& path, const LdrImage& img) {
    std::ofstream os(path);
    os << "fstop " << img.fstop << "\n"
       << "exposure_time " << img.exposure_time << "\n"
       << "timestamp_us " << img.timestamp_us << "\n";
}

inline void read_ldr_meta(const std::string& path, LdrImage& img) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path);
    std::string key;
    while (is >> key) {
        if (key == "fstop")
            is >> img.fstop;
        else if (key == "exposure_time")
            is >> img.exposure_time;
        else if (key == "timestamp_us")
            is >> img.timestamp_us;
        else {
            std::string skip;
            is >> skip;
        }
    }
}

// ---- EHEV events ----

// magic "EHEV", u8 version=1, u16 width, u16 height, u64 count,
// count * (u64 t_us, u16 x, u16 y, i8 p), little-endian.
inline void write_ehev(const std::string& path, const EventStream& stream) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os.write("EHEV", 4);
    io_detail::write_le<uint8_t>(os, 1);
    io_detail::write_le<uint16_t>(os, stream.width);
    io_detail::write_le<uint16_t>(os, stream.height);
    io_detail::write_le<uint64_t>(os, uint64_t(stream.events.size()));
    for (const Event& e : stream.events) {
        io_detail::write_le<uint64_t>(os, e.t);
        io_detail::write_le<uint16_t>(os, e.x);
        io_detail::write_le<uint16_t>(os, e.y);
        io_detail::write_le<int8_t>(os, e.p);
    }
}

inline EventStream read_ehev(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    char magic[4];
    io_detail::read_bytes(is, magic, 4, "EHEV magic");
    if (std::memcmp(magic, "EHEV", 4) != 0)
        throw FormatError(path + ": bad EHEV magic at byte offset 0");
    const auto version = io_detail::read_le<uint8_t>(is, "EHEV version");
    if (version != 1) throw FormatError(path + ": unsupported EHEV version at byte offset 4");
    EventStream stream;
    stream.width = io_detail::read_le<uint16_t>(is, "EHEV width");
    stream.height = io_detail::read_le<uint16_t>(is, "EHEV height");
    const auto count = io_detail::read_le<uint64_t>(is, "EHEV count");
    stream.events.reserve(size_t(count));
    for (uint64_t i = 0; i < count; ++i) {
        Event e;
        e.t = io_detail::read_le<uint64_t>(is, "EHEV event timestamp");
        e.x = io_detail::read_le<uint16_t>(is, "EHEV event x");
        e.y = io_detail::read_le<uint16_t>(is, "EHEV event y");
        e.p = io_detail::read_le<int8_t>(is, "EHEV event polarity");
        if (e.p == 0) e.p = -1;  // {0,1} polarity encoding maps to {-1,+1}
        stream.events.push_back(e);
    }
    return stream;
}

// CSV alternative: header `t_us,x,y,p`.
inline EventStream read_events_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("t_us", 0) != 0)
        throw FormatError(path + ": missing t_us,x,y,p CSV header");
    EventStream stream;
    uint16_t max_x = 0, max_y = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        for (auto& ch : line)
            if (ch == ',') ch = ' ';
        std::istringstream ls(line);
        uint64_t t;
        int x, y, p;
        if (!(ls >> t >> x >> y >> p)) throw FormatError(path + ": malformed CSV event line");
        Event e{t, uint16_t(x), uint16_t(y), int8_t(p == 0 ? -1 : (p > 0 ? 1 : -1))};
        max_x = std::max(max_x, e.x);
        max_y = std::max(max_y, e.y);
        stream.events.push_back(e);
    }
    stream.width = uint16_t(max_x + 1);
    stream.height = uint16_t(max_y + 1);
    return stream;
}

// ---- EHDT tensors ----

// magic "EHDT", u8 version=1, u8 dtype (0 = f32), u8 ndim, u64 dims[ndim],
// little-endian f32 payload row-major.
inline void write_ehdt(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os.write("EHDT", 4);
    io_detail::write_le<uint8_t>(os, 1);
    io_detail::write_le<uint8_t>(os, 0);
    io_detail::write_le<uint8_t>(os, uint8_t(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) io_detail::write_le<uint64_t>(os, uint64_t(t.dim(i)));
    io_detail::write_bytes(os, t.data().data(), t.numel() * sizeof(float));
}

inline Tensor read_ehdt(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path);
    char magic[4];
    io_detail::read_bytes(is, magic, 4, "EHDT magic");
    if (std::memcmp(magic, "EHDT", 4) != 0)
        throw FormatError(path + ": bad EHDT magic at byte offset 0");
    const auto version = io_detail::read_le<uint8_t>(is, "EHDT version");
    if (version != 1) throw FormatError(path + ": unsupported EHDT version at byte offset 4");
    const auto dtype = io_detail::read_le<uint8_t>(is, "EHDT dtype");
    if (dtype != 0) throw FormatError(path + ": unsupported EHDT dtype at byte offset 5");
    const auto ndim = io_detail::read_le<uint8_t>(is, "EHDT ndim");
    std::vector<int> shape(ndim);
    size_t count = 1;
    for (auto& d : shape) {
        d = int(io_detail::read_le<uint64_t>(is, "EHDT dims"));
        count *= size_t(d);
    }
    std::vector<float> data(count);
    io_detail::read_bytes(is, data.data(), count * sizeof(float), "EHDT payload");
    return Tensor::from_data(std::move(shape), std::move(data));
}

// ---- checkpoints ----

// A checkpoint is a directory with manifest.txt (one `name dim0xdim1x...`
// line per tensor plus `config.key value` lines) and one EHDT blob per
// parameter, named after the manifest entry.
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> config;
};

inline void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw FormatError("cannot open " + dir + "/manifest.txt for writing");
    for (const auto& [k, v] : ckpt.config) manifest << "config." << k << " " << v << "\n";
    for (const auto& [name, t] : ckpt.tensors) {
        manifest << name << " ";
        for (int i = 0; i < t.ndim(); ++i) manifest << (i ? "x" : "") << t.dim(i);
        manifest << "\n";
        write_ehdt(dir + "/" + name + ".ehdt", t);
    }
}

inline Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream manifest(dir + "/manifest.txt");
    if (!manifest) throw FormatError("cannot open " + dir + "/manifest.txt");
    Checkpoint ckpt;
    std::string name, rest;
    while (manifest >> name >> rest) {
        if (name.rfind("config.", 0) == 0) {
            ckpt.config[name.substr(7)] = rest;
            continue;
        }
        Tensor t = read_ehdt(dir + "/" + name + ".ehdt");
        std::vector<int> dims;
        std::istringstream ds(rest);
        std::string tok;
        while (std::getline(ds, tok, 'x')) dims.push_back(std::stoi(tok));
        if (dims != t.shape())
            throw FormatError(dir + ": manifest shape mismatch for tensor " + name);
        ckpt.tensors.emplace(name, std::move(t));
    }
    return ckpt;
}

// ---- INI-style config ----

// Flat key-value text with optional [section] headers; keys are reported as
// "section.key". '#' and ';' start comments.
inline std::map<std::string, std::string> read_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open " + path);
    std::map<std::string, std::string> cfg;
    std::string line, section;
    while (std::getline(is, line)) {
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line.erase(comment);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        if (line.front() == '[') {
            const auto close = line.find(']');
            if (close == std::string::npos) throw FormatError(path + ": unterminated section");
            section = line.substr(1, close - 1);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError(path + ": expected key=value, got " + line);
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            s = (a == std::string::npos) ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(val);
        cfg[section.empty() ? key : section + "." + key] = val;
    }
    return cfg;
}

}  // namespace ehdr
