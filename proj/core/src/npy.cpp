#include "dsmcd/npy.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dsmcd::npy {

namespace {

constexpr char kMagic[] = "\x93NUMPY";

size_t dtype_size(const std::string& dtype) {
    if (dtype == "<f4") return 4;
    if (dtype == "|u1" || dtype == "|i1") return 1;
    throw std::invalid_argument("npy: unsupported dtype " + dtype);
}

std::string shape_tuple(const std::vector<size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        os << shape[i];
        if (i + 1 < shape.size() || shape.size() == 1) os << ",";
    }
    os << ")";
    return os.str();
}

} // namespace

void save(const std::filesystem::path& path, const Array& a) {
    const size_t esz = dtype_size(a.dtype);
    if (a.bytes.size() != a.element_count() * esz)
        throw std::invalid_argument("npy: byte count does not match shape");

    std::string header = "{'descr': '" + a.dtype + "', 'fortran_order': False, 'shape': " +
                         shape_tuple(a.shape) + ", }";
    // pad header so that data starts at a multiple of 64
    size_t unpadded = 6 + 2 + 2 + header.size() + 1;
    size_t pad = (64 - unpadded % 64) % 64;
    header.append(pad, ' ');
    header.push_back('\n');

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("npy: cannot open for write: " + path.string());
    f.write(kMagic, 6);
    f.put(1).put(0);
    uint16_t hlen = static_cast<uint16_t>(header.size());
    f.put(static_cast<char>(hlen & 0xff)).put(static_cast<char>(hlen >> 8));
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    f.write(reinterpret_cast<const char*>(a.bytes.data()),
            static_cast<std::streamsize>(a.bytes.size()));
    if (!f) throw std::runtime_error("npy: write failed: " + path.string());
}

Array load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("npy: cannot open: " + path.string());
    char magic[6];
    f.read(magic, 6);
    if (!f || std::memcmp(magic, kMagic, 6) != 0)
        throw std::runtime_error("npy: bad magic in " + path.string());
    char ver[2];
    f.read(ver, 2);
    uint8_t lo = static_cast<uint8_t>(f.get());
    uint8_t hi = static_cast<uint8_t>(f.get());
    size_t hlen = lo | (static_cast<size_t>(hi) << 8);
    std::string header(hlen, '\0');
    f.read(header.data(), static_cast<std::streamsize>(hlen));

    Array a;
    auto dpos = header.find("'descr'");
    if (dpos == std::string::npos) throw std::runtime_error("npy: missing descr");
    auto q1 = header.find('\'', dpos + 7);
    q1 = header.find('\'', q1 + 1); // skip to value opening quote
    // header is "'descr': '<f4', ..." — find the quoted value after the colon
    auto colon = header.find(':', dpos);
    q1 = header.find('\'', colon);
    auto q2 = header.find('\'', q1 + 1);
    a.dtype = header.substr(q1 + 1, q2 - q1 - 1);

    if (header.find("'fortran_order': False") == std::string::npos)
        throw std::runtime_error("npy: fortran order not supported");

    auto spos = header.find("'shape'");
    auto p1 = header.find('(', spos);
    auto p2 = header.find(')', p1);
    std::string dims = header.substr(p1 + 1, p2 - p1 - 1);
    std::istringstream ds(dims);
    std::string tok;
    while (std::getline(ds, tok, ',')) {
        // trim
        size_t b = tok.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        size_t e = tok.find_last_not_of(" \t");
        a.shape.push_back(std::stoull(tok.substr(b, e - b + 1)));
    }

    const size_t nbytes = a.element_count() * dtype_size(a.dtype);
    a.bytes.resize(nbytes);
    f.read(reinterpret_cast<char*>(a.bytes.data()), static_cast<std::streamsize>(nbytes));
    if (!f) throw std::runtime_error("npy: truncated data in " + path.string());
    return a;
}

namespace {

template <typename T>
Array grid_to_array(const Grid<T>& g, const char* dtype) {
    Array a;
    a.dtype = dtype;
    if (g.channels() == 1) {
        a.shape = {static_cast<size_t>(g.height()), static_cast<size_t>(g.width())};
    } else {
        a.shape = {static_cast<size_t>(g.height()), static_cast<size_t>(g.width()),
                   static_cast<size_t>(g.channels())};
    }
    a.bytes.resize(g.size() * sizeof(T));
    // planar -> interleaved
    T* out = reinterpret_cast<T*>(a.bytes.data());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x)
            for (int c = 0; c < g.channels(); ++c)
                *out++ = g.at(c, y, x);
    return a;
}

template <typename T>
Grid<T> array_to_grid(const Array& a, const std::string& want_dtype) {
    if (a.dtype != want_dtype)
        throw std::runtime_error("npy: dtype mismatch, got " + a.dtype);
    if (a.shape.size() != 2 && a.shape.size() != 3)
        throw std::runtime_error("npy: expected 2-D or 3-D array");
    const int h = static_cast<int>(a.shape[0]);
    const int w = static_cast<int>(a.shape[1]);
    const int c = a.shape.size() == 3 ? static_cast<int>(a.shape[2]) : 1;
    Grid<T> g(c, h, w);
    const T* in = reinterpret_cast<const T*>(a.bytes.data());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                g.at(ch, y, x) = *in++;
    return g;
}

} // namespace

void save_grid(const std::filesystem::path& path, const RasterF& g) {
    save(path, grid_to_array(g, "<f4"));
}
void save_grid(const std::filesystem::path& path, const Grid<uint8_t>& g) {
    save(path, grid_to_array(g, "|u1"));
}
void save_grid(const std::filesystem::path& path, const Grid<int8_t>& g) {
    save(path, grid_to_array(g, "|i1"));
}

RasterF load_f32(const std::filesystem::path& path) {
    return array_to_grid<float>(load(path), "<f4");
}
Grid<uint8_t> load_u8(const std::filesystem::path& path) {
    return array_to_grid<uint8_t>(load(path), "|u1");
}
Grid<int8_t> load_i8(const std::filesystem::path& path) {
    return array_to_grid<int8_t>(load(path), "|i1");
}

} // namespace dsmcd::npy
