#include <cstring>
#include <fstream>

#include "bidshade/model.hpp"
#include "json.hpp"

namespace bidshade {

namespace {

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* data, std::size_t n) {
    std::string out;
    out.reserve(((n + 2) / 3) * 4);
    for (std::size_t i = 0; i < n; i += 3) {
        const unsigned b0 = data[i];
        const unsigned b1 = i + 1 < n ? data[i + 1] : 0;
        const unsigned b2 = i + 2 < n ? data[i + 2] : 0;
        out.push_back(kB64[b0 >> 2]);
        out.push_back(kB64[((b0 & 0x3) << 4) | (b1 >> 4)]);
        out.push_back(i + 1 < n ? kB64[((b1 & 0xf) << 2) | (b2 >> 6)] : '=');
        out.push_back(i + 2 < n ? kB64[b2 & 0x3f] : '=');
    }
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    int rev[256];
    std::fill(std::begin(rev), std::end(rev), -1);
    for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(kB64[i])] = i;
    std::vector<unsigned char> out;
    out.reserve(text.size() / 4 * 3);
    int acc = 0, bits = 0;
    for (char c : text) {
        if (c == '=') break;
        const int v = rev[static_cast<unsigned char>(c)];
        if (v < 0) throw DataError("checkpoint: invalid base64 payload");
        acc = (acc << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<unsigned char>((acc >> bits) & 0xff));
        }
    }
    return out;
}

std::string encode_f32(const std::vector<double>& data) {
    std::vector<unsigned char> bytes(data.size() * 4);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const float f = static_cast<float>(data[i]);
        std::memcpy(&bytes[i * 4], &f, 4);
    }
    return base64_encode(bytes.data(), bytes.size());
}

std::vector<double> decode_f32(const std::string& b64, std::size_t expected) {
    const std::vector<unsigned char> bytes = base64_decode(b64);
    if (bytes.size() != expected * 4)
        throw DataError("checkpoint: tensor payload size mismatch");
    std::vector<double> out(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        float f;
        std::memcpy(&f, &bytes[i * 4], 4);
        out[i] = static_cast<double>(f);
    }
    return out;
}

}  // namespace

void save_checkpoint(const BaseModel& model, const std::string& model_kind,
                     const std::string& extra_json, const std::string& path) {
    const ModelConfig& cfg = model.config();
    nlohmann::json j;
    j["format_version"] = 1;
    j["model_kind"] = model_kind;

    nlohmann::json fields = nlohmann::json::array();
    for (const auto& f : cfg.fields) fields.push_back({{"name", f.name}, {"vocab", f.vocab}});
    nlohmann::json numerics = nlohmann::json::array();
    for (const auto& n : cfg.numerics)
        numerics.push_back({{"name", n.name},
                            {"transform", transform_name(n.transform)},
                            {"mean", n.mean},
                            {"stdev", n.stdev}});
    j["schema"] = {{"fields", fields}, {"numerics", numerics}};

    j["hyperparams"] = {{"embed_dim", cfg.embed_dim},
                        {"hidden", cfg.hidden},
                        {"heads", cfg.heads},
                        {"out_bias_init", cfg.out_bias_init},
                        {"owns_embedding", model.owns_embedding()},
                        {"embedding_frozen", model.embedding()->frozen}};

    try {
        j["extra"] = nlohmann::json::parse(extra_json.empty() ? "{}" : extra_json);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("save_checkpoint: extra_json is not valid JSON: ") + e.what());
    }

    nlohmann::json tensors;
    for (const auto& t : model.tensors())
        tensors[t.name] = {{"shape", t.shape}, {"data", encode_f32(*t.data)}};
    j["tensors"] = tensors;

    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << '\n';
    if (!out) throw DataError("write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path, std::shared_ptr<EmbeddingTable> shared) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }

    LoadedCheckpoint loaded;
    try {
        if (j.at("format_version").get<int>() != 1)
            throw DataError(path + ": unsupported checkpoint format version");
        loaded.model_kind = j.at("model_kind").get<std::string>();
        loaded.extra_json = j.at("extra").dump();

        ModelConfig cfg;
        for (const auto& f : j.at("schema").at("fields"))
            cfg.fields.push_back({f.at("name").get<std::string>(), f.at("vocab").get<int>()});
        for (const auto& n : j.at("schema").at("numerics")) {
            NumericSpec spec;
            spec.name = n.at("name").get<std::string>();
            spec.transform = transform_from_name(n.at("transform").get<std::string>());
            spec.mean = n.at("mean").get<double>();
            spec.stdev = n.at("stdev").get<double>();
            cfg.numerics.push_back(spec);
        }
        const auto& hp = j.at("hyperparams");
        cfg.embed_dim = hp.at("embed_dim").get<int>();
        cfg.hidden = hp.at("hidden").get<std::vector<int>>();
        cfg.heads = hp.at("heads").get<int>();
        cfg.out_bias_init = hp.at("out_bias_init").get<double>();
        const bool frozen = hp.at("embedding_frozen").get<bool>();

        loaded.model = std::make_unique<BaseModel>(cfg, shared, /*seed=*/0);

        const auto& tensors = j.at("tensors");
        for (auto& t : loaded.model->tensors()) {
            const auto it = tensors.find(t.name);
            if (it == tensors.end()) throw DataError(path + ": missing tensor " + t.name);
            const auto shape = it->at("shape").get<std::vector<int>>();
            if (shape != t.shape) throw DataError(path + ": shape mismatch for tensor " + t.name);
            std::vector<double> data = decode_f32(it->at("data").get<std::string>(), t.data->size());
            if (shared && t.name.rfind("embed.", 0) == 0) {
                // The checkpoint's copy must agree with the injected table.
                for (std::size_t i = 0; i < data.size(); ++i)
                    if (static_cast<float>(data[i]) != static_cast<float>((*t.data)[i]))
                        throw DataError(path + ": shared embedding mismatch in " + t.name);
            } else {
                *t.data = std::move(data);
            }
        }
        if (!shared) loaded.model->embedding()->frozen = frozen;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return loaded;
}

}  // namespace bidshade
