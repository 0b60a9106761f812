#include "belab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

namespace belab {

namespace {

// The format pins little-endian f32; bail out loudly on exotic hosts.
static_assert(sizeof(float) == 4, "f32 checkpoint format requires 4-byte float");

void append_le_f32(std::string& out, const float* data, std::size_t count) {
    static_assert(std::endian::native == std::endian::little,
                  "big-endian hosts need byte swaps here");
    out.append(reinterpret_cast<const char*>(data), count * sizeof(float));
}

}  // namespace

void checkpoint_save(const std::string& dir, const std::string& model_kind,
                     const nlohmann::json& config, const std::vector<Param<float>*>& params) {
    std::filesystem::create_directories(dir);
    nlohmann::json arrays = nlohmann::json::array();
    std::string blob;
    std::uint64_t offset = 0;
    for (const auto* p : params) {
        std::uint64_t length = p->size() * sizeof(float);
        arrays.push_back({{"name", p->name},
                          {"shape", p->shape},
                          {"dtype", "f32"},
                          {"offset", offset},
                          {"length", length}});
        append_le_f32(blob, p->v.data(), p->size());
        offset += length;
    }
    nlohmann::json manifest{{"format_version", kCheckpointFormatVersion},
                            {"model_kind", model_kind},
                            {"config", config},
                            {"arrays", arrays}};
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");

    std::ofstream out(dir + "/weights.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + dir + "/weights.bin");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw DataError("short write to " + dir + "/weights.bin");
}

Checkpoint checkpoint_load(const std::string& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad checkpoint manifest: ") + e.what());
    }
    if (manifest.value("format_version", -1) != kCheckpointFormatVersion) {
        throw DataError("unsupported checkpoint format version");
    }

    Checkpoint ckpt;
    ckpt.model_kind = manifest.value("model_kind", "");
    ckpt.config = manifest.value("config", nlohmann::json::object());

    std::ifstream in(dir + "/weights.bin", std::ios::binary);
    if (!in) throw DataError("missing " + dir + "/weights.bin");
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    for (const auto& a : manifest.at("arrays")) {
        ArrayRecord rec;
        rec.name = a.at("name").get<std::string>();
        rec.shape = a.at("shape").get<std::vector<std::size_t>>();
        rec.offset = a.at("offset").get<std::uint64_t>();
        rec.length = a.at("length").get<std::uint64_t>();
        if (a.value("dtype", "") != "f32") {
            throw DataError("array '" + rec.name + "' has unsupported dtype");
        }
        std::size_t count = 1;
        for (std::size_t d : rec.shape) count *= d;
        if (rec.length != count * sizeof(float)) {
            throw DataError("array '" + rec.name + "' length disagrees with its shape");
        }
        if (rec.offset + rec.length > blob.size()) {
            throw DataError("weights.bin truncated at array '" + rec.name + "'");
        }
        std::vector<float> vals(count);
        std::memcpy(vals.data(), blob.data() + rec.offset, rec.length);
        ckpt.values.push_back(std::move(vals));
        ckpt.arrays.push_back(std::move(rec));
    }
    return ckpt;
}

void checkpoint_restore(const Checkpoint& ckpt, const std::string& expected_kind,
                        const std::vector<Param<float>*>& params) {
    if (ckpt.model_kind != expected_kind) {
        throw DataError("checkpoint holds a '" + ckpt.model_kind + "' model, expected '" +
                        expected_kind + "'");
    }
    std::unordered_map<std::string, std::size_t> by_name;
    for (std::size_t i = 0; i < ckpt.arrays.size(); ++i) by_name[ckpt.arrays[i].name] = i;

    if (params.size() != ckpt.arrays.size()) {
        throw DataError("checkpoint has " + std::to_string(ckpt.arrays.size()) +
                        " arrays, model expects " + std::to_string(params.size()));
    }
    for (auto* p : params) {
        auto it = by_name.find(p->name);
        if (it == by_name.end()) throw DataError("checkpoint is missing array '" + p->name + "'");
        const ArrayRecord& rec = ckpt.arrays[it->second];
        if (rec.shape != p->shape) {
            throw DataError("array '" + p->name + "' shape mismatch between checkpoint and model");
        }
        p->v = ckpt.values[it->second];
    }
}

}  // namespace belab
