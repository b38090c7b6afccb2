#include "spd/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>

namespace spd {

using json = nlohmann::json;

static const char kMagic[8] = {'S', 'P', 'D', 'C', 'K', 'P', 'T', '\0'};
static const uint32_t kVersion = 1;

void write_checkpoint(const std::string & path, const json & meta, const ParamStore & store) {
    json header = meta;
    json manifest = json::array();
    uint64_t offset = 0;   // in floats, from payload start
    for (const auto & [name, t] : store.entries()) {
        manifest.push_back({{"name", name}, {"shape", t->shape}, {"offset", offset}});
        offset += (uint64_t) t->numel();
    }
    header["manifest"] = manifest;
    const std::string htext = header.dump();

    FILE * f = std::fopen(path.c_str(), "wb");
    SPD_CHECK(f, io_error, "checkpoint: cannot open for write: " + path);
    std::fwrite(kMagic, 1, 8, f);
    std::fwrite(&kVersion, sizeof(kVersion), 1, f);
    const uint64_t hlen = htext.size();
    std::fwrite(&hlen, sizeof(hlen), 1, f);
    std::fwrite(htext.data(), 1, htext.size(), f);
    std::vector<float> buf;
    for (const auto & [name, t] : store.entries()) {
        buf.resize(t->data.size());
        for (size_t i = 0; i < t->data.size(); ++i) {
            buf[i] = (float) t->data[i];
        }
        std::fwrite(buf.data(), sizeof(float), buf.size(), f);
    }
    std::fclose(f);
}

LoadedCheckpoint read_checkpoint(const std::string & path) {
    FILE * f = std::fopen(path.c_str(), "rb");
    SPD_CHECK(f, io_error, "checkpoint: cannot open for read: " + path);
    char magic[8];
    uint32_t version = 0;
    uint64_t hlen = 0;
    bool ok = std::fread(magic, 1, 8, f) == 8 && std::memcmp(magic, kMagic, 8) == 0;
    ok = ok && std::fread(&version, sizeof(version), 1, f) == 1 && version == kVersion;
    ok = ok && std::fread(&hlen, sizeof(hlen), 1, f) == 1;
    if (!ok) {
        std::fclose(f);
        throw io_error("checkpoint: bad magic/version in " + path);
    }
    std::string htext(hlen, '\0');
    if (std::fread(htext.data(), 1, hlen, f) != hlen) {
        std::fclose(f);
        throw io_error("checkpoint: truncated header in " + path);
    }
    json header = json::parse(htext, nullptr, false);
    if (header.is_discarded() || !header.contains("manifest")) {
        std::fclose(f);
        throw io_error("checkpoint: malformed header in " + path);
    }

    LoadedCheckpoint out;
    out.meta_json = htext;
    for (const auto & entry : header["manifest"]) {
        const std::string name = entry["name"];
        std::vector<int> shape = entry["shape"].get<std::vector<int>>();
        auto t = make_tensor(shape, 0.0);
        std::vector<float> buf((size_t) t->numel());
        if (std::fread(buf.data(), sizeof(float), buf.size(), f) != buf.size()) {
            std::fclose(f);
            throw io_error("checkpoint: truncated payload for " + name + " in " + path);
        }
        for (size_t i = 0; i < buf.size(); ++i) {
            t->data[i] = (double) buf[i];
        }
        out.store.add(name, t);
    }
    std::fclose(f);
    return out;
}

static json model_config_json(const ModelConfig & cfg) {
    return json{{"n_layers", cfg.n_layers},   {"d_model", cfg.d_model},
                {"n_heads", cfg.n_heads},     {"d_head", cfg.d_head},
                {"vocab_size", cfg.vocab_size}, {"max_seq_len", cfg.max_seq_len},
                {"seed", cfg.seed}};
}

static ModelConfig model_config_from_json(const json & j) {
    ModelConfig cfg;
    cfg.n_layers = j.at("n_layers");
    cfg.d_model = j.at("d_model");
    cfg.n_heads = j.at("n_heads");
    cfg.d_head = j.at("d_head");
    cfg.vocab_size = j.at("vocab_size");
    cfg.max_seq_len = j.at("max_seq_len");
    cfg.seed = j.at("seed");
    return cfg;
}

void save_model(const std::string & path, const ToyLM & model) {
    json meta;
    meta["kind"] = "toylm";
    meta["model"] = model_config_json(model.cfg);
    write_checkpoint(path, meta, model.params);
}

ToyLM load_model(const std::string & path) {
    auto lc = read_checkpoint(path);
    json meta = json::parse(lc.meta_json);
    SPD_CHECK(meta.value("kind", "") == "toylm", io_error,
              "checkpoint: not a base model: " + path);
    ToyLM m;
    m.cfg = model_config_from_json(meta.at("model"));
    m.cfg.validate();
    m.params = std::move(lc.store);
    return m;
}

} // namespace spd
