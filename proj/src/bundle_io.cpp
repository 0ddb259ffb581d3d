#include "distill/bundle_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "weights.bin is little-endian; big-endian hosts need byte swapping");

namespace distill {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error("bundle: " + what); }

json config_to_json(const ModelConfig& c) {
    return json{
        {"num_layers", c.num_layers},
        {"num_q_heads", c.num_q_heads},
        {"num_kv_heads", c.num_kv_heads},
        {"head_dim", c.head_dim},
        {"model_dim", c.model_dim},
        {"mlp_hidden_dim", c.mlp_hidden_dim},
        {"vocab_size", c.vocab_size},
        {"rope_theta", c.rope_theta},
        {"norm_eps", c.norm_eps},
        {"seed", c.seed},
    };
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    auto take_count = [&](const char* field, std::size_t& out) {
        if (!j.contains(field) || !j[field].is_number_unsigned())
            fail(std::string("config.json field '") + field + "' missing or not an unsigned integer");
        out = j[field].get<std::size_t>();
    };
    auto take_float = [&](const char* field, float& out) {
        if (!j.contains(field) || !j[field].is_number())
            fail(std::string("config.json field '") + field + "' missing or not a number");
        out = j[field].get<float>();
    };
    take_count("num_layers", c.num_layers);
    take_count("num_q_heads", c.num_q_heads);
    take_count("num_kv_heads", c.num_kv_heads);
    take_count("head_dim", c.head_dim);
    take_count("model_dim", c.model_dim);
    take_count("mlp_hidden_dim", c.mlp_hidden_dim);
    take_count("vocab_size", c.vocab_size);
    take_float("rope_theta", c.rope_theta);
    take_float("norm_eps", c.norm_eps);
    if (!j.contains("seed") || !j["seed"].is_number_unsigned())
        fail("config.json field 'seed' missing or not an unsigned integer");
    c.seed = j["seed"].get<std::uint64_t>();
    return c;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) fail("write failed for " + path.string());
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) fail(path.string() + " is not valid JSON");
    return j;
}

} // namespace

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir) {
    bundle.validate();
    std::filesystem::create_directories(dir);

    const auto specs = tensor_specs(bundle.config);
    json manifest_tensors = json::object();
    std::size_t offset = 0;

    std::ofstream weights(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    if (!weights) fail("cannot open " + (dir / "weights.bin").string() + " for writing");
    for (const auto& spec : specs) {
        const MatrixF32& t = bundle.tensor(spec.name);
        weights.write(reinterpret_cast<const char*>(t.data.data()),
                      static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        manifest_tensors[spec.name] = {{"offset", offset}, {"shape", {spec.rows, spec.cols}}};
        offset += spec.count();
    }
    weights.flush();
    if (!weights) fail("write failed for weights.bin");

    json manifest{{"total_floats", offset}, {"tensors", manifest_tensors}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    write_text(dir / "config.json", config_to_json(bundle.config).dump(2) + "\n");
}

ModelConfig load_bundle_config(const std::filesystem::path& dir) {
    ModelConfig config = config_from_json(read_json(dir / "config.json"));
    config.validate();
    return config;
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
    ModelBundle bundle;
    bundle.config = config_from_json(read_json(dir / "config.json"));
    bundle.config.validate();

    const json manifest = read_json(dir / "manifest.json");
    if (!manifest.contains("total_floats") || !manifest.contains("tensors"))
        fail("manifest.json missing total_floats or tensors");
    const std::size_t total_floats = manifest["total_floats"].get<std::size_t>();
    const json& entries = manifest["tensors"];

    const auto weights_path = dir / "weights.bin";
    std::ifstream weights(weights_path, std::ios::binary | std::ios::ate);
    if (!weights) fail("cannot open " + weights_path.string());
    const std::size_t file_bytes = static_cast<std::size_t>(weights.tellg());
    if (file_bytes != total_floats * sizeof(float))
        fail("weights.bin holds " + std::to_string(file_bytes) + " bytes, manifest expects " +
             std::to_string(total_floats * sizeof(float)));

    const auto specs = tensor_specs(bundle.config);
    if (entries.size() != specs.size())
        fail("manifest lists " + std::to_string(entries.size()) + " tensors, config implies " +
             std::to_string(specs.size()));

    std::size_t covered = 0;
    for (const auto& spec : specs) {
        if (!entries.contains(spec.name)) fail("manifest missing tensor '" + spec.name + "'");
        const json& e = entries[spec.name];
        const std::size_t off = e.at("offset").get<std::size_t>();
        const auto shape = e.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2 || shape[0] != spec.rows || shape[1] != spec.cols)
            fail("tensor '" + spec.name + "' manifest shape does not match config");
        if (off + spec.count() > total_floats)
            fail("tensor '" + spec.name + "' extends past the end of weights.bin");

        MatrixF32 t(spec.rows, spec.cols);
        weights.seekg(static_cast<std::streamoff>(off * sizeof(float)));
        weights.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!weights) fail("short read for tensor '" + spec.name + "'");
        bundle.tensors.emplace(spec.name, std::move(t));
        covered += spec.count();
    }
    if (covered != total_floats)
        fail("manifest covers " + std::to_string(covered) + " floats, file holds " +
             std::to_string(total_floats));

    bundle.validate();
    return bundle;
}

} // namespace distill
