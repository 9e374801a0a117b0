#include "amil/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace amil {

namespace {

constexpr const char* kMagic = "amil-checkpoint 1";

void push_le_float(std::vector<unsigned char>& buf, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    buf.push_back(static_cast<unsigned char>(u & 0xff));
    buf.push_back(static_cast<unsigned char>((u >> 8) & 0xff));
    buf.push_back(static_cast<unsigned char>((u >> 16) & 0xff));
    buf.push_back(static_cast<unsigned char>((u >> 24) & 0xff));
}

float read_le_float(const unsigned char* p) {
    const std::uint32_t u = static_cast<std::uint32_t>(p[0]) |
                            (static_cast<std::uint32_t>(p[1]) << 8) |
                            (static_cast<std::uint32_t>(p[2]) << 16) |
                            (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

Shape parse_shape(const std::string& s) {
    Shape shape;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, 'x')) shape.push_back(std::stoll(tok));
    return shape;
}

std::string shape_token(const Shape& shape) {
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i)
        out += (i ? "x" : "") + std::to_string(shape[i]);
    return out;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const std::string bin_path = path + ".bin";
    std::vector<unsigned char> bin;
    std::ostringstream manifest;
    manifest << kMagic << '\n';
    manifest << "binary " << std::filesystem::path(bin_path).filename().string() << '\n';
    for (const auto& [k, v] : ckpt.meta) manifest << "meta " << k << ' ' << v << '\n';
    std::size_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        if (t.values.size() != static_cast<std::size_t>(numel(t.shape)))
            throw ContractError("checkpoint tensor `" + t.name + "` has " +
                                std::to_string(t.values.size()) + " values for shape " +
                                shape_str(t.shape));
        manifest << "tensor " << t.name << ' ' << shape_token(t.shape) << ' ' << offset << '\n';
        for (float f : t.values) push_le_float(bin, f);
        offset += t.values.size();
    }

    std::ofstream mf(path, std::ios::binary);
    if (!mf) throw IoError("cannot create checkpoint manifest: " + path);
    mf << manifest.str();
    mf.close();
    if (!mf) throw IoError("short write: " + path);

    std::ofstream bf(bin_path, std::ios::binary);
    if (!bf) throw IoError("cannot create checkpoint sidecar: " + bin_path);
    bf.write(reinterpret_cast<const char*>(bin.data()), static_cast<std::streamsize>(bin.size()));
    bf.close();
    if (!bf) throw IoError("short write: " + bin_path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream mf(path);
    if (!mf) throw IoError("cannot open checkpoint manifest: " + path);
    std::string line;
    if (!std::getline(mf, line) || line != kMagic)
        throw IoError("not a checkpoint manifest: " + path);

    Checkpoint ckpt;
    std::string bin_name;
    struct Entry {
        std::string name;
        Shape shape;
        std::size_t offset;
    };
    std::vector<Entry> entries;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "binary") {
            ss >> bin_name;
        } else if (kind == "meta") {
            std::string key;
            ss >> key;
            std::string value;
            std::getline(ss, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            ckpt.meta.emplace_back(key, value);
        } else if (kind == "tensor") {
            Entry e;
            std::string shape_s;
            ss >> e.name >> shape_s >> e.offset;
            if (ss.fail()) throw IoError("malformed tensor line in " + path + ": " + line);
            e.shape = parse_shape(shape_s);
            entries.push_back(std::move(e));
        } else {
            throw IoError("unknown manifest line in " + path + ": " + line);
        }
    }
    if (bin_name.empty()) throw IoError("manifest names no binary sidecar: " + path);

    const std::string bin_path =
        (std::filesystem::path(path).parent_path() / bin_name).string();
    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) throw IoError("cannot open checkpoint sidecar: " + bin_path);
    std::vector<unsigned char> bin((std::istreambuf_iterator<char>(bf)),
                                   std::istreambuf_iterator<char>());

    for (const auto& e : entries) {
        const std::size_t count = static_cast<std::size_t>(numel(e.shape));
        if ((e.offset + count) * 4 > bin.size())
            throw IoError("checkpoint tensor `" + e.name + "` overruns the sidecar " + bin_path);
        CheckpointTensor t;
        t.name = e.name;
        t.shape = e.shape;
        t.values.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            t.values[i] = read_le_float(bin.data() + (e.offset + i) * 4);
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

}  // namespace amil
