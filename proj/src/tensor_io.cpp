#include "msca/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace msca {

namespace {

static_assert(std::endian::native == std::endian::little, "raw tensor I/O assumes a little-endian host");

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T get(const std::uint8_t* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype) {
    if (t.ndim() > 255) throw DimensionError("raw tensor format supports at most 255 dims");
    std::vector<std::uint8_t> out{'T', 'N', 'S', 'R', kTensorFormatVersion, static_cast<std::uint8_t>(dtype),
                                  static_cast<std::uint8_t>(t.ndim()), 0};
    for (auto d : t.shape()) {
        if (d > 0xffffffffLL) throw DimensionError("dimension too large for raw tensor format");
        put(out, static_cast<std::uint32_t>(d));
    }
    const std::size_t width = dtype == DType::F64 ? 8 : 4;
    out.reserve(out.size() + width * static_cast<std::size_t>(t.numel()));
    for (double v : t.data()) {
        if (dtype == DType::F64) {
            put(out, v);
        } else {
            put(out, static_cast<float>(v));
        }
    }
    return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::uint64_t base_offset, std::size_t* consumed) {
    auto fail = [&](const std::string& msg, std::size_t at) { throw FormatError(msg, base_offset + at); };
    if (bytes.size() < 8) fail("truncated raw tensor header", bytes.size());
    if (std::memcmp(bytes.data(), "TNSR", 4) != 0) fail("bad raw tensor magic", 0);
    if (bytes[4] != kTensorFormatVersion) fail("unsupported raw tensor version " + std::to_string(bytes[4]), 4);
    if (bytes[5] > 1) fail("unknown raw tensor dtype " + std::to_string(bytes[5]), 5);
    const auto dtype = static_cast<DType>(bytes[5]);
    const std::size_t ndim = bytes[6];
    std::size_t pos = 8;
    if (bytes.size() < pos + 4 * ndim) fail("truncated raw tensor dims", bytes.size());
    Shape shape;
    for (std::size_t i = 0; i < ndim; ++i, pos += 4) {
        const auto d = get<std::uint32_t>(bytes.data() + pos);
        if (d == 0) fail("zero-length dimension", pos);
        shape.push_back(d);
    }
    const std::size_t width = dtype == DType::F64 ? 8 : 4;
    const auto count = static_cast<std::size_t>(shape_numel(shape));
    if (bytes.size() < pos + width * count) fail("truncated raw tensor payload", bytes.size());
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i, pos += width) {
        values[i] = dtype == DType::F64 ? get<double>(bytes.data() + pos)
                                        : static_cast<double>(get<float>(bytes.data() + pos));
    }
    if (consumed) *consumed = pos;
    return Tensor(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

void save_tensor(const std::string& path, const Tensor& t, DType dtype) { write_file(path, encode_tensor(t, dtype)); }

Tensor load_tensor(const std::string& path) {
    const auto bytes = read_file(path);
    std::size_t used = 0;
    Tensor t = decode_tensor(bytes, 0, &used);
    if (used != bytes.size()) throw FormatError("trailing bytes after raw tensor", used);
    return t;
}

}  // namespace msca
