#include <doctest.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "bolt/rng.hpp"
#include "bolt/tensor_store.hpp"

using namespace bolt;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "bolt_tests";
    fs::create_directories(dir);
    return dir / name;
}

TensorContainer random_checkpoint(std::uint64_t seed, const std::string& id) {
    Pcg64 rng(seed);
    TensorContainer c;
    c.model_id = id;
    c.role = Role::checkpoint;
    c.add_matrix("W1", gaussian_matrix(rng, 4, 6));
    c.add_vector("b1", gaussian_vector(rng, 4));
    c.add_matrix("W2", gaussian_matrix(rng, 3, 4));
    return c;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& blob) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

} // namespace

TEST_CASE("save/load roundtrip is bit-exact") {
    TensorContainer c;
    c.model_id = "tiny";
    c.role = Role::checkpoint;
    c.metadata["note"] = "two values";
    TensorEntry e;
    e.name = "w";
    e.shape = {2};
    e.data = {1.0, 2.0};
    c.add(e);

    const auto path = temp_file("roundtrip.btc");
    save_container(c, path);
    const TensorContainer loaded = load_container(path);
    CHECK(containers_equal(c, loaded));
}

TEST_CASE("duplicate entry names are rejected") {
    TensorContainer c;
    c.model_id = "dup";
    c.add_vector("w", Eigen::VectorXd::Ones(2));
    c.add_vector("w", Eigen::VectorXd::Ones(2));
    CHECK_THROWS_AS(save_container(c, temp_file("dup.btc")), ValidationError);
}

TEST_CASE("zero-size shapes are rejected") {
    TensorContainer c;
    c.model_id = "empty";
    TensorEntry e;
    e.name = "w";
    e.shape = {0};
    c.add(e);
    CHECK_THROWS_AS(save_container(c, temp_file("zero.btc")), ValidationError);
}

TEST_CASE("3-layer checkpoint roundtrips exactly") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const TensorContainer c = random_checkpoint(seed, "ckpt");
        const auto path = temp_file("ckpt.btc");
        save_container(c, path);
        CHECK(containers_equal(c, load_container(path)));
    }
}

TEST_CASE("save is byte-deterministic") {
    const TensorContainer c = random_checkpoint(7, "det");
    const auto p1 = temp_file("det1.btc");
    const auto p2 = temp_file("det2.btc");
    save_container(c, p1);
    save_container(c, p2);
    CHECK(read_file(p1) == read_file(p2));
}

TEST_CASE("format gates produce distinct parse errors") {
    const TensorContainer c = random_checkpoint(4, "gate");
    const auto path = temp_file("gate.btc");
    save_container(c, path);
    const std::string blob = read_file(path);

    SUBCASE("bad magic") {
        std::string bad = blob;
        bad.replace(0, 8, "XXXXXXXX");
        write_file(path, bad);
        CHECK_THROWS_WITH_AS(load_container(path), "bad magic", ParseError);
    }
    SUBCASE("truncated payload") {
        write_file(path, blob.substr(0, blob.size() - 9));
        CHECK_THROWS_WITH_AS(load_container(path), "truncated payload", ParseError);
    }
    SUBCASE("manifest-payload length mismatch") {
        write_file(path, blob + std::string(8, '\0'));
        CHECK_THROWS_WITH_AS(load_container(path), "manifest-payload length mismatch",
                             ParseError);
    }
    SUBCASE("truncated header") {
        write_file(path, blob.substr(0, 10));
        CHECK_THROWS_AS(load_container(path), ParseError);
    }
    SUBCASE("bad manifest json") {
        std::string bad = blob;
        bad[17] = '?';
        write_file(path, bad);
        CHECK_THROWS_AS(load_container(path), ParseError);
    }
}

TEST_CASE("task vector of a checkpoint with itself is zero") {
    const TensorContainer c = random_checkpoint(5, "self");
    const TaskVector tv = compute_task_vector(c, c);
    for (const auto& layer : tv.layers)
        for (const double x : layer.data) CHECK(x == 0.0);
}

TEST_CASE("task vector is an elementwise difference") {
    TensorContainer theta0;
    theta0.model_id = "theta0";
    Eigen::MatrixXd a(2, 2);
    a << 1, 2, 3, 4;
    theta0.add_matrix("W", a);
    TensorContainer theta1;
    theta1.model_id = "theta1";
    Eigen::MatrixXd b(2, 2);
    b << 2, 2, 3, 5;
    theta1.add_matrix("W", b);

    const TaskVector tv = compute_task_vector(theta1, theta0);
    const Eigen::MatrixXd delta = tv.at("W").as_matrix();
    CHECK(delta(0, 0) == 1.0);
    CHECK(delta(0, 1) == 0.0);
    CHECK(delta(1, 0) == 0.0);
    CHECK(delta(1, 1) == 1.0);
}

TEST_CASE("add-back reconstructs the fine-tuned checkpoint bitwise") {
    for (std::uint64_t seed : {10u, 11u, 12u}) {
        const TensorContainer theta0 = random_checkpoint(seed, "theta0");
        TensorContainer theta1 = random_checkpoint(seed + 100, "theta1");
        const TaskVector tv = compute_task_vector(theta1, theta0);
        const TensorContainer back = apply_task_arithmetic(theta0, {tv}, {1.0});
        for (const auto& e : theta1.entries) {
            const auto& got = back.at(e.name);
            for (std::size_t k = 0; k < e.data.size(); ++k)
                CHECK(std::bit_cast<std::uint64_t>(got.data[k]) ==
                      std::bit_cast<std::uint64_t>(e.data[k]));
        }
    }
}

TEST_CASE("mismatched layer sets raise an architecture error naming layers") {
    TensorContainer theta0 = random_checkpoint(1, "theta0");
    TensorContainer other = random_checkpoint(2, "other");
    other.entries[0].name = "W1_renamed";
    CHECK_THROWS_AS(compute_task_vector(other, theta0), ArchitectureError);
    try {
        compute_task_vector(other, theta0);
    } catch (const ArchitectureError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("W1") != std::string::npos);
    }
}

TEST_CASE("merging with all-zero alphas returns the base model") {
    const TensorContainer theta0 = random_checkpoint(20, "theta0");
    const TaskVector tv =
        compute_task_vector(random_checkpoint(21, "theta1"), theta0);
    const TensorContainer merged = apply_task_arithmetic(theta0, {tv, tv}, {0.0, 0.0});
    for (const auto& e : theta0.entries) {
        const auto& got = merged.at(e.name);
        for (std::size_t k = 0; k < e.data.size(); ++k) CHECK(got.data[k] == e.data[k]);
    }
}

TEST_CASE("merging is invariant to input permutation") {
    const TensorContainer theta0 = random_checkpoint(30, "theta0");
    TaskVector a = compute_task_vector(random_checkpoint(31, "a"), theta0);
    TaskVector b = compute_task_vector(random_checkpoint(32, "b"), theta0);
    TaskVector c = compute_task_vector(random_checkpoint(33, "c"), theta0);

    const TensorContainer m1 = apply_task_arithmetic(theta0, {a, b, c}, {0.3, 0.5, 0.2});
    const TensorContainer m2 = apply_task_arithmetic(theta0, {c, a, b}, {0.2, 0.3, 0.5});
    CHECK(containers_equal(m1, m2));
}

TEST_CASE("merge validates lengths") {
    const TensorContainer theta0 = random_checkpoint(40, "theta0");
    const TaskVector tv = compute_task_vector(random_checkpoint(41, "x"), theta0);
    CHECK_THROWS_AS(apply_task_arithmetic(theta0, {tv}, {1.0, 2.0}), ValidationError);
    CHECK_THROWS_AS(apply_task_arithmetic(theta0, {}, {}), ValidationError);
}

TEST_CASE("committed fixture parses to the expected values") {
    const fs::path fixture = fs::path(BOLT_TEST_FIXTURE_DIR) / "reference.btc";
    REQUIRE(fs::exists(fixture));
    const TensorContainer c = load_container(fixture);
    CHECK(c.model_id == "fixture-v1");
    CHECK(c.role == Role::checkpoint);
    CHECK(c.metadata.at("note") == "reference container");
    REQUIRE(c.entries.size() == 2);
    CHECK(c.entries[0].name == "W");
    CHECK(c.entries[0].shape == std::vector<std::int64_t>{2, 3});
    const Eigen::MatrixXd w = c.matrix("W");
    CHECK(w(0, 0) == 1.5);
    CHECK(w(0, 1) == -2.25);
    CHECK(w(0, 2) == 0.003);
    CHECK(w(1, 0) == 4096.0);
    CHECK(w(1, 1) == 0.0);
    CHECK(std::signbit(w(1, 1))); // negative zero survives the roundtrip
    CHECK(w(1, 2) == 0.125);
    const Eigen::VectorXd bvec = c.vector("b");
    CHECK(bvec(0) == 1.0);
    CHECK(bvec(1) == -1.0);

    // Re-saving the parsed container reproduces the committed bytes.
    const auto copy = temp_file("fixture_copy.btc");
    save_container(c, copy);
    CHECK(read_file(copy) == read_file(fixture));
}
