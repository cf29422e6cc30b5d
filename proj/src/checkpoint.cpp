#include "ict/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "ict/errors.hpp"

namespace ict {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blob format assumes a little-endian host");

void save_checkpoint(const fs::path& base, const ParamStore& params,
                     const ordered_json& meta) {
    fs::path json_path = base;
    json_path += ".json";
    fs::path bin_path = base;
    bin_path += ".bin";

    ordered_json manifest;
    manifest["format_version"] = 1;
    manifest["blob"] = bin_path.filename().string();
    manifest["step_count"] = params.step_count;
    ordered_json plist = ordered_json::array();
    int64_t offset = 0;
    for (const auto& [name, t] : params.entries) {
        assert_all_finite(t, "checkpoint parameter " + name);
        ordered_json e;
        e["name"] = name;
        e["shape"] = t.shape;
        e["offset"] = offset;
        plist.push_back(std::move(e));
        offset += t.numel();
    }
    manifest["params"] = std::move(plist);
    manifest["meta"] = meta;

    std::ofstream jf(json_path, std::ios::binary | std::ios::trunc);
    if (!jf) throw ContractError("cannot write " + json_path.string());
    jf << manifest.dump(2) << "\n";

    std::ofstream bf(bin_path, std::ios::binary | std::ios::trunc);
    if (!bf) throw ContractError("cannot write " + bin_path.string());
    for (const auto& [name, t] : params.entries)
        bf.write(reinterpret_cast<const char*>(t.data.data()),
                 std::streamsize(t.data.size() * sizeof(double)));
    if (!bf) throw ContractError("short write to " + bin_path.string());
}

Checkpoint load_checkpoint(const fs::path& base) {
    fs::path json_path = base;
    json_path += ".json";
    std::ifstream jf(json_path, std::ios::binary);
    if (!jf) throw ContractError("cannot read " + json_path.string());
    ordered_json manifest = ordered_json::parse(jf);

    fs::path bin_path = base.parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream bf(bin_path, std::ios::binary);
    if (!bf) throw ContractError("cannot read " + bin_path.string());

    Checkpoint ck;
    ck.meta = manifest.value("meta", ordered_json::object());
    ck.params.step_count = manifest.value("step_count", int64_t{0});
    for (const auto& e : manifest.at("params")) {
        std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        Tensor t = Tensor::zeros(shape);
        bf.read(reinterpret_cast<char*>(t.data.data()),
                std::streamsize(t.data.size() * sizeof(double)));
        if (bf.gcount() != std::streamsize(t.data.size() * sizeof(double)))
            throw ContractError("checkpoint blob truncated at " +
                                e.at("name").get<std::string>());
        ck.params.add(e.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

}  // namespace ict
