#pragma once

#include "candida/nn.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace candida {

// Checkpoint container: magic line, 8-byte little-endian header length, JSON
// header (metadata + array directory in file order), then raw little-endian
// float32 payload. Round-trips byte-exactly.
struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct CheckpointData {
    nlohmann::json meta;
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return &a;
        return nullptr;
    }
};

inline constexpr char kCkptMagic[] = "CANDCKPT1\n";

inline void save_checkpoint(const std::string& path, const CheckpointData& ckpt) {
    nlohmann::json header;
    header["meta"] = ckpt.meta;
    header["arrays"] = nlohmann::json::array();
    for (const auto& a : ckpt.arrays)
        header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}});
    std::string htext = header.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    f.write(kCkptMagic, sizeof(kCkptMagic) - 1);
    uint64_t hlen = htext.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& a : ckpt.arrays)
        f.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
    char magic[sizeof(kCkptMagic) - 1];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    f.read(htext.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header = nlohmann::json::parse(htext);
    CheckpointData ckpt;
    ckpt.meta = header.value("meta", nlohmann::json::object());
    for (const auto& e : header["arrays"]) {
        NamedArray a;
        a.name = e["name"].get<std::string>();
        a.shape = e["shape"].get<std::vector<int>>();
        int64_t n = 1;
        for (int d : a.shape) n *= d;
        a.data.resize(static_cast<size_t>(n));
        f.read(reinterpret_cast<char*>(a.data.data()),
               static_cast<std::streamsize>(a.data.size() * sizeof(float)));
        ckpt.arrays.push_back(std::move(a));
    }
    if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
    return ckpt;
}

// Snapshot parameters whose name starts with `prefix` ("" for all).
template <typename T>
CheckpointData snapshot(const ParamStore<T>& store, const nlohmann::json& meta,
                        const std::string& prefix = "") {
    CheckpointData ckpt;
    ckpt.meta = meta;
    for (const auto& [name, p] : store.params) {
        if (name.rfind(prefix, 0) != 0) continue;
        NamedArray a;
        a.name = name;
        a.shape = p->value.shape;
        a.data.resize(p->value.data.size());
        for (size_t i = 0; i < a.data.size(); ++i) a.data[i] = static_cast<float>(p->value.data[i]);
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

// Copy checkpoint arrays into matching parameters. Every store parameter under
// `prefix` must be present with matching shape; mismatches are reported by name.
template <typename T>
void restore(ParamStore<T>& store, const CheckpointData& ckpt, const std::string& prefix = "") {
    std::string missing, mismatched;
    for (auto& [name, p] : store.params) {
        if (name.rfind(prefix, 0) != 0) continue;
        const NamedArray* a = ckpt.find(name);
        if (!a) {
            missing += (missing.empty() ? "" : ", ") + name;
            continue;
        }
        if (a->shape != p->value.shape) {
            mismatched += (mismatched.empty() ? "" : ", ") + name;
            continue;
        }
        for (size_t i = 0; i < a->data.size(); ++i) p->value.data[i] = static_cast<T>(a->data[i]);
    }
    if (!missing.empty() || !mismatched.empty())
        throw std::runtime_error("checkpoint restore failed; missing: [" + missing +
                                 "] shape mismatch: [" + mismatched + "]");
}

}  // namespace candida
