#include "lrod/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lrod/error.hpp"

namespace lrod {

static_assert(std::endian::native == std::endian::little, ".tns encoding assumes a little-endian host");

std::string encode_tns(const Tensor& t, const nlohmann::json& extra) {
    nlohmann::json header = extra.is_object() ? extra : nlohmann::json::object();
    header["shape"] = t.shape();
    std::string out = header.dump();
    out.push_back('\n');
    const std::size_t off = out.size();
    out.resize(off + t.size() * sizeof(double));
    std::memcpy(out.data() + off, t.data().data(), t.size() * sizeof(double));
    return out;
}

TnsFile decode_tns(const std::string& bytes) {
    const auto nl = bytes.find('\n');
    if (nl == std::string::npos) throw IoError(".tns: missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, nl));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string(".tns: bad header: ") + e.what());
    }
    if (!header.contains("shape") || !header["shape"].is_array()) throw IoError(".tns: header lacks shape");
    Shape shape = header["shape"].get<Shape>();
    const std::size_t n = numel(shape);
    if (bytes.size() - nl - 1 != n * sizeof(double))
        throw IoError(".tns: payload size does not match shape " + to_string(shape));
    std::vector<double> data(n);
    std::memcpy(data.data(), bytes.data() + nl + 1, n * sizeof(double));
    return {Tensor(std::move(shape), std::move(data)), std::move(header)};
}

void write_tns(const std::filesystem::path& path, const Tensor& t, const nlohmann::json& extra) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    const std::string bytes = encode_tns(t, extra);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed: " + path.string());
}

TnsFile read_tns_with_header(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    try {
        return decode_tns(ss.str());
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

Tensor read_tns(const std::filesystem::path& path) { return read_tns_with_header(path).tensor; }

}  // namespace lrod
