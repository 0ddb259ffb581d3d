// Round-trip and validation tests for the on-disk model bundle
// (config.json + weights.bin + manifest.json).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "distill/bundle_io.hpp"
#include "distill/model.hpp"

using namespace distill;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.num_layers = 3;
    c.num_q_heads = 4;
    c.num_kv_heads = 2;
    c.head_dim = 8;
    c.model_dim = 32;
    c.mlp_hidden_dim = 48;
    c.vocab_size = 96;
    c.rope_theta = 10000.0f;
    c.norm_eps = 1e-5f;
    c.seed = 2024;
    return c;
}

// Fresh scratch directory per test case; cleaned up by the fixture.
struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("distill-bundle-test-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static std::size_t& counter() {
        static std::size_t n = 0;
        return n;
    }
};

json read_json_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return json::parse(in);
}

void write_json_file(const fs::path& p, const json& j) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out << j.dump(2) << "\n";
}

} // namespace

TEST_CASE("save/load round-trip is bitwise exact") {
    TempDir tmp;
    ModelBundle original = init_random(small_config());
    save_bundle(original, tmp.path);

    CHECK(fs::exists(tmp.path / "config.json"));
    CHECK(fs::exists(tmp.path / "weights.bin"));
    CHECK(fs::exists(tmp.path / "manifest.json"));

    ModelBundle loaded = load_bundle(tmp.path);

    CHECK(loaded.config.num_layers == original.config.num_layers);
    CHECK(loaded.config.num_q_heads == original.config.num_q_heads);
    CHECK(loaded.config.num_kv_heads == original.config.num_kv_heads);
    CHECK(loaded.config.head_dim == original.config.head_dim);
    CHECK(loaded.config.model_dim == original.config.model_dim);
    CHECK(loaded.config.mlp_hidden_dim == original.config.mlp_hidden_dim);
    CHECK(loaded.config.vocab_size == original.config.vocab_size);
    CHECK(loaded.config.rope_theta == original.config.rope_theta);
    CHECK(loaded.config.norm_eps == original.config.norm_eps);
    CHECK(loaded.config.seed == original.config.seed);

    const auto specs = tensor_specs(original.config);
    REQUIRE(loaded.tensors.size() == specs.size());
    for (const auto& spec : specs) {
        const MatrixF32& a = original.tensor(spec.name);
        const MatrixF32& b = loaded.tensor(spec.name);
        REQUIRE(a.rows == b.rows);
        REQUIRE(a.cols == b.cols);
        // Bitwise: serialization must not perturb a single float.
        CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("weights.bin layout follows the manifest offsets") {
    TempDir tmp;
    ModelBundle bundle = init_random(small_config());
    save_bundle(bundle, tmp.path);

    const json manifest = read_json_file(tmp.path / "manifest.json");
    const auto specs = tensor_specs(bundle.config);

    std::size_t expected_total = 0;
    for (const auto& spec : specs) expected_total += spec.count();
    CHECK(manifest["total_floats"].get<std::size_t>() == expected_total);
    CHECK(fs::file_size(tmp.path / "weights.bin") == expected_total * sizeof(float));

    // Spot-check one tensor by reading its floats straight out of the file.
    const json& entry = manifest["tensors"]["layers.1.wk"];
    const std::size_t offset = entry["offset"].get<std::size_t>();
    const auto shape = entry["shape"].get<std::vector<std::size_t>>();
    const MatrixF32& wk = bundle.tensor("layers.1.wk");
    REQUIRE(shape == std::vector<std::size_t>{wk.rows, wk.cols});

    std::ifstream raw(tmp.path / "weights.bin", std::ios::binary);
    raw.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
    std::vector<float> from_disk(wk.data.size());
    raw.read(reinterpret_cast<char*>(from_disk.data()),
             static_cast<std::streamsize>(from_disk.size() * sizeof(float)));
    REQUIRE(raw.good());
    CHECK(std::memcmp(from_disk.data(), wk.data.data(), from_disk.size() * sizeof(float)) == 0);
}

TEST_CASE("load_bundle_config reads the shape without weights") {
    TempDir tmp;
    ModelBundle bundle = init_random(small_config());
    save_bundle(bundle, tmp.path);

    // Remove the weights; the config-only loader must not care.
    fs::remove(tmp.path / "weights.bin");
    ModelConfig c = load_bundle_config(tmp.path);
    CHECK(c.num_layers == 3);
    CHECK(c.vocab_size == 96);
    CHECK(c.seed == 2024);

    // But the full loader must now fail.
    CHECK_THROWS_WITH_AS(load_bundle(tmp.path), doctest::Contains("cannot open"),
                         std::runtime_error);
}

TEST_CASE("truncated weights.bin is rejected with both byte counts") {
    TempDir tmp;
    save_bundle(init_random(small_config()), tmp.path);

    const auto full = fs::file_size(tmp.path / "weights.bin");
    fs::resize_file(tmp.path / "weights.bin", full - 4);
    CHECK_THROWS_WITH_AS(load_bundle(tmp.path), doctest::Contains("manifest expects"),
                         std::runtime_error);
}

TEST_CASE("manifest shape drift is rejected") {
    TempDir tmp;
    save_bundle(init_random(small_config()), tmp.path);

    json manifest = read_json_file(tmp.path / "manifest.json");
    manifest["tensors"]["layers.0.wq"]["shape"] = {16, 16};
    write_json_file(tmp.path / "manifest.json", manifest);

    CHECK_THROWS_WITH_AS(load_bundle(tmp.path),
                         doctest::Contains("manifest shape does not match config"),
                         std::runtime_error);
}

TEST_CASE("manifest with a missing or renamed tensor is rejected") {
    TempDir tmp;
    save_bundle(init_random(small_config()), tmp.path);

    json manifest = read_json_file(tmp.path / "manifest.json");
    json entry = manifest["tensors"]["layers.2.w_down"];
    manifest["tensors"].erase("layers.2.w_down");

    // One tensor short: the count check fires first.
    write_json_file(tmp.path / "manifest.json", manifest);
    CHECK_THROWS_WITH_AS(load_bundle(tmp.path), doctest::Contains("manifest lists"),
                         std::runtime_error);

    // Same count but a name the config does not produce.
    manifest["tensors"]["layers.2.w_sideways"] = entry;
    write_json_file(tmp.path / "manifest.json", manifest);
    CHECK_THROWS_WITH_AS(load_bundle(tmp.path),
                         doctest::Contains("manifest missing tensor 'layers.2.w_down'"),
                         std::runtime_error);
}

TEST_CASE("manifest offset past the file end is rejected") {
    TempDir tmp;
    save_bundle(init_random(small_config()), tmp.path);

    json manifest = read_json_file(tmp.path / "manifest.json");
    manifest["tensors"]["final_norm"]["offset"] =
        manifest["total_floats"].get<std::size_t>();
    write_json_file(tmp.path / "manifest.json", manifest);

    CHECK_THROWS_WITH_AS(load_bundle(tmp.path),
                         doctest::Contains("extends past the end of weights.bin"),
                         std::runtime_error);
}

TEST_CASE("config.json field errors name the offending field") {
    TempDir tmp;
    save_bundle(init_random(small_config()), tmp.path);

    json config = read_json_file(tmp.path / "config.json");

    SUBCASE("missing field") {
        config.erase("num_kv_heads");
        write_json_file(tmp.path / "config.json", config);
        CHECK_THROWS_WITH_AS(load_bundle_config(tmp.path), doctest::Contains("num_kv_heads"),
                             std::runtime_error);
    }
    SUBCASE("wrong type") {
        config["head_dim"] = "sixteen";
        write_json_file(tmp.path / "config.json", config);
        CHECK_THROWS_WITH_AS(load_bundle_config(tmp.path), doctest::Contains("head_dim"),
                             std::runtime_error);
    }
    SUBCASE("negative where a count belongs") {
        config["num_layers"] = -2;
        write_json_file(tmp.path / "config.json", config);
        CHECK_THROWS_WITH_AS(load_bundle_config(tmp.path), doctest::Contains("num_layers"),
                             std::runtime_error);
    }
    SUBCASE("shape that fails semantic validation") {
        config["model_dim"] = 33; // != num_q_heads * head_dim
        write_json_file(tmp.path / "config.json", config);
        CHECK_THROWS_AS(load_bundle_config(tmp.path), std::invalid_argument);
    }
}

TEST_CASE("malformed JSON is reported as such") {
    TempDir tmp;
    save_bundle(init_random(small_config()), tmp.path);

    std::ofstream out(tmp.path / "config.json", std::ios::binary | std::ios::trunc);
    out << "{ this is not json";
    out.close();
    CHECK_THROWS_WITH_AS(load_bundle_config(tmp.path), doctest::Contains("not valid JSON"),
                         std::runtime_error);
}
