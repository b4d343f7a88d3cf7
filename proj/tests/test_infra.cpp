#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "tricoat/common.hpp"
#include "tricoat/config.hpp"
#include "tricoat/csv.hpp"

using namespace tricoat;

TEST_CASE("rng is deterministic and transforms look sane") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng r(7);
    double mean = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        mean += u;
    }
    REQUIRE(std::abs(mean / n - 0.5) < 0.02);

    Rng g(11);
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = g.normal();
        s += z;
        s2 += z * z;
    }
    REQUIRE(std::abs(s / n) < 0.03);
    REQUIRE(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("rng dosage stays in range and tracks p") {
    Rng r(3);
    int total = 0;
    for (int i = 0; i < 10000; ++i) {
        int d = r.dosage(0.3);
        REQUIRE(d >= 0);
        REQUIRE(d <= 2);
        total += d;
    }
    REQUIRE(std::abs(total / 10000.0 - 0.6) < 0.05);
}

TEST_CASE("derive_seed separates streams") {
    REQUIRE(derive_seed(1, 0) != derive_seed(1, 1));
    REQUIRE(derive_seed(1, 0) != derive_seed(2, 0));
    REQUIRE(derive_seed(5, 7) == derive_seed(5, 7));
}

TEST_CASE("format_double round-trips") {
    for (double v : {0.0, 1.0, -1.5, 0.1, 1e-300, 3.141592653589793, 1.0 / 3.0}) {
        REQUIRE(std::strtod(format_double(v).c_str(), nullptr) == v);
    }
}

TEST_CASE("csv round trip with quoting") {
    auto dir = std::filesystem::temp_directory_path() / "tricoat_test_csv";
    std::filesystem::create_directories(dir);
    auto path = dir / "t.csv";
    write_csv(path, {"subject_id", "note"}, {{"S1", "plain"}, {"S2", "has,comma"}, {"S3", "has\"quote"}});
    auto table = read_csv(path);
    REQUIRE(table.header == std::vector<std::string>{"subject_id", "note"});
    REQUIRE(table.rows.size() == 3);
    REQUIRE(table.rows[1][1] == "has,comma");
    REQUIRE(table.rows[2][1] == "has\"quote");
}

TEST_CASE("csv errors") {
    REQUIRE_THROWS_AS(read_csv("/nonexistent/nope.csv"), DataError);
    auto dir = std::filesystem::temp_directory_path() / "tricoat_test_csv";
    std::filesystem::create_directories(dir);
    auto path = dir / "ragged.csv";
    write_text_file(path, "a,b\n1,2,3\n");
    REQUIRE_THROWS_AS(read_csv(path), DataError);
}

TEST_CASE("config document parses keys and types") {
    auto doc = ConfigDoc::parse(
        "# comment\n"
        "train.lr = 0.0001\n"
        "train.epochs = 100\n"
        "model.use_class_tokens = true\n"
        "evaluate.models = tricoat, early ,late\n"
        "\n");
    REQUIRE(doc.get_double("train.lr", 0) == 0.0001);
    REQUIRE(doc.get_int("train.epochs", 0) == 100);
    REQUIRE(doc.get_bool("model.use_class_tokens", false));
    REQUIRE(doc.get_list("evaluate.models") ==
            std::vector<std::string>{"tricoat", "early", "late"});
    REQUIRE(doc.get_int("train.batch_size", 32) == 32);  // default path
}

TEST_CASE("config rejects malformed input") {
    REQUIRE_THROWS_AS(ConfigDoc::parse("novalue\n"), ConfigError);
    REQUIRE_THROWS_AS(ConfigDoc::parse("a = 1\na = 2\n"), ConfigError);
    auto doc = ConfigDoc::parse("train.lr = fast\n");
    REQUIRE_THROWS_AS(doc.get_double("train.lr", 0), ConfigError);
}

TEST_CASE("unknown keys are reported by name") {
    auto doc = ConfigDoc::parse("train.lr = 0.1\ntrain.lrr = 0.2\n");
    try {
        doc.require_known(known_config_keys());
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("train.lrr") != std::string::npos);
        REQUIRE(std::string(e.what()).find("train.lr,") == std::string::npos);
    }
}
