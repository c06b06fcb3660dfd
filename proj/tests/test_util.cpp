#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pseg/util/kvconfig.hpp"

using namespace pseg;
using util::KvConfig;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "pseg_util_test";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("kv config parses flat dotted keys") {
    const auto cfg = KvConfig::parse_string(
        "# a comment\n"
        "\n"
        "train.lambda = 0.9\n"
        "  model.k=20  \n"
        "name = hello world\n"
        "train.lambda = 0.5\n");
    REQUIRE(cfg.entries().size() == 3);
    REQUIRE(cfg.get_double("train.lambda", 0.0) == 0.5);  // last entry wins
    REQUIRE(cfg.get_i64("model.k", 0) == 20);
    REQUIRE(cfg.get_string("name", "") == "hello world");
    REQUIRE(cfg.has("model.k"));
    REQUIRE_FALSE(cfg.has("missing"));
}

TEST_CASE("kv config rejects malformed lines") {
    REQUIRE_THROWS_AS(KvConfig::parse_string("not a pair\n"), ConfigError);
    REQUIRE_THROWS_AS(KvConfig::parse_string("= value\n"), ConfigError);
    REQUIRE_THROWS_MATCHES(KvConfig::parse_string("ok = 1\nbroken line\n"), ConfigError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("line 2")));
}

TEST_CASE("typed getters validate their values") {
    const auto cfg = KvConfig::parse_string(
        "d = 2.5\n"
        "i = -3\n"
        "u = 7\n"
        "b1 = true\n"
        "b0 = 0\n"
        "junk = zzz\n");
    REQUIRE(cfg.get_double("d", 0.0) == 2.5);
    REQUIRE(cfg.get_i64("i", 0) == -3);
    REQUIRE(cfg.get_u64("u", 0) == 7);
    REQUIRE(cfg.get_bool("b1", false));
    REQUIRE_FALSE(cfg.get_bool("b0", true));

    // Defaults only apply to absent keys.
    REQUIRE(cfg.get_double("absent", 4.0) == 4.0);
    REQUIRE(cfg.get_bool("absent", true));

    REQUIRE_THROWS_AS(cfg.get_double("junk", 0.0), ConfigError);
    REQUIRE_THROWS_AS(cfg.get_i64("d", 0), ConfigError);
    REQUIRE_THROWS_AS(cfg.get_u64("i", 0), ConfigError);
    REQUIRE_THROWS_AS(cfg.get_bool("u", false), ConfigError);
    REQUIRE_THROWS_AS(cfg.require_string("absent"), ConfigError);
}

TEST_CASE("unknown keys are rejected with a full list") {
    auto cfg = KvConfig::parse_string("a.x = 1\nb.y = 2\nz = 3\n");
    REQUIRE_NOTHROW(cfg.require_known({"a.x", "b.y", "z", "unused"}));
    try {
        cfg.require_known({"a.x"});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("b.y") != std::string::npos);
        REQUIRE(msg.find("z") != std::string::npos);
    }
}

TEST_CASE("render round trips through the parser") {
    auto cfg = KvConfig::parse_string("b = 2\na = 1\n");
    cfg.set("c.d", "x y");
    const std::string text = cfg.render();
    REQUIRE(text == "a = 1\nb = 2\nc.d = x y\n");
    const auto again = KvConfig::parse_string(text);
    REQUIRE(again.entries() == cfg.entries());
}

TEST_CASE("config files load and propagate errors") {
    const auto path = temp_file("roundtrip.cfg");
    {
        std::ofstream out(path);
        out << "# settings\nmodel.k = 12\n";
    }
    const auto cfg = KvConfig::parse_file(path);
    REQUIRE(cfg.get_i64("model.k", 0) == 12);

    REQUIRE_THROWS_AS(KvConfig::parse_file(temp_file("does_not_exist.cfg")), IoError);

    const auto bad = temp_file("bad.cfg");
    {
        std::ofstream out(bad);
        out << "oops\n";
    }
    try {
        KvConfig::parse_file(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        REQUIRE(std::string(e.what()).find("bad.cfg") != std::string::npos);
    }
}
