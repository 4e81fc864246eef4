#include "htune/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "htune/errors.hpp"

namespace htune {

namespace {

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big)
        return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    return v;
}

std::string read_line(std::istream& is, const char* what) {
    std::string line;
    if (!std::getline(is, line)) throw IntegrityError(std::string("unexpected end of stream reading ") + what);
    return line;
}

std::string strip_prefix(const std::string& line, const std::string& prefix) {
    if (line.rfind(prefix, 0) != 0) throw IntegrityError("expected '" + prefix + "' header, got '" + line + "'");
    return line.substr(prefix.size());
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os << "shape:";
    for (auto e : t.shape()) os << ' ' << e;
    os << '\n';
    std::vector<std::uint32_t> buf(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) buf[i] = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
}

Tensor read_tensor(std::istream& is) {
    std::istringstream dims(strip_prefix(read_line(is, "shape"), "shape:"));
    Shape shape;
    std::size_t e;
    while (dims >> e) shape.push_back(e);
    if (shape.empty()) throw IntegrityError("tensor header has no extents");
    Tensor t(shape);
    std::vector<std::uint32_t> buf(t.numel());
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (static_cast<std::size_t>(is.gcount()) != buf.size() * 4) throw IntegrityError("truncated tensor payload");
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::bit_cast<float>(to_le(buf[i]));
    return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IntegrityError("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IntegrityError("cannot open " + path.string());
    return read_tensor(is);
}

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw IntegrityError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IntegrityError("cannot open " + path.string() + " for writing");
    os << "htune-checkpoint 1\n";
    os << "role: " << ckpt.role << '\n';
    for (const auto& [k, v] : ckpt.config) os << k << '=' << v << '\n';
    os << "tensors: " << ckpt.tensors.size() << '\n';
    for (const auto& [name, t] : ckpt.tensors) {
        os << "name: " << name << '\n';
        write_tensor(os, t);
    }
    if (!os) throw IntegrityError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IntegrityError("cannot open " + path.string());
    if (read_line(is, "magic") != "htune-checkpoint 1") throw IntegrityError(path.string() + " is not a checkpoint");
    Checkpoint ckpt;
    ckpt.role = strip_prefix(read_line(is, "role"), "role: ");
    std::size_t count = 0;
    for (;;) {
        std::string line = read_line(is, "header");
        if (line.rfind("tensors: ", 0) == 0) {
            count = std::stoul(line.substr(9));
            break;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw IntegrityError("malformed checkpoint header line '" + line + "'");
        ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (std::size_t i = 0; i < count; ++i) {
        std::string name = strip_prefix(read_line(is, "name"), "name: ");
        ckpt.tensors.emplace_back(std::move(name), read_tensor(is));
    }
    return ckpt;
}

}  // namespace htune
