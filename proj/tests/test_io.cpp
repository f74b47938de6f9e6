#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "noisypg/config_file.hpp"
#include "noisypg/table.hpp"

using namespace noisypg;

namespace {

std::vector<ColumnSpec> demo_schema() {
    return {{"name", ColumnType::string}, {"n", ColumnType::integer}, {"x", ColumnType::real}};
}

}  // namespace

TEST_CASE("report table enforces its schema") {
    REQUIRE_THROWS_AS(ReportTable({}), std::invalid_argument);
    REQUIRE_THROWS_AS(ReportTable({{"bad,name", ColumnType::real}}), std::invalid_argument);

    ReportTable table(demo_schema());
    REQUIRE_THROWS_AS(table.append_row({std::string("a"), std::int64_t{1}}), std::invalid_argument);
    REQUIRE_THROWS_AS(table.append_row({std::string("a"), 0.5, 0.5}), std::invalid_argument);
    REQUIRE_THROWS_AS(
        table.append_row({std::string("a"), std::int64_t{1},
                          std::numeric_limits<double>::quiet_NaN()}),
        std::invalid_argument);
    REQUIRE(table.num_rows() == 0);

    table.append_row({std::string("a"), std::int64_t{1}, 0.5});
    REQUIRE(table.num_rows() == 1);
    REQUIRE(table.text_at(0, "name") == "a");
    REQUIRE(table.integer_at(0, "n") == 1);
    REQUIRE(table.real_at(0, "x") == 0.5);
    REQUIRE_THROWS_AS(table.column_index("missing"), std::invalid_argument);
}

TEST_CASE("report table serializes to predictable CSV") {
    ReportTable table(demo_schema());
    table.append_row({std::string("a"), std::int64_t{1}, 0.5});
    table.append_row({std::string("b,c"), std::int64_t{-2}, 0.25});
    REQUIRE(table.to_csv() == "name,n,x\na,1,0.5\n\"b,c\",-2,0.25\n");
}

TEST_CASE("CSV round trips byte-identically through parse and re-serialize") {
    ReportTable table(demo_schema());
    table.append_row({std::string("plain"), std::int64_t{42}, 1.0 / 3.0});
    table.append_row({std::string("comma,inside"), std::int64_t{-7}, 0.1});
    table.append_row({std::string("quote\"inside"), std::int64_t{0}, 1e300});
    table.append_row({std::string("line\nbreak"), std::int64_t{9007199254740993},
                      -2.2250738585072014e-308});
    table.append_row({std::string(""), std::int64_t{1}, -0.0});

    const std::string csv = table.to_csv();
    const ReportTable parsed = ReportTable::from_csv(csv, demo_schema());
    REQUIRE(parsed.num_rows() == table.num_rows());
    REQUIRE(parsed.to_csv() == csv);
    // Shortest-round-trip formatting must preserve exact double values.
    for (std::size_t r = 0; r < table.num_rows(); ++r) {
        REQUIRE(parsed.real_at(r, "x") == table.real_at(r, "x"));
        REQUIRE(parsed.integer_at(r, "n") == table.integer_at(r, "n"));
        REQUIRE(parsed.text_at(r, "name") == table.text_at(r, "name"));
    }
}

TEST_CASE("CSV parser rejects malformed input") {
    const auto schema = demo_schema();
    REQUIRE_THROWS_AS(ReportTable::from_csv("", schema), std::invalid_argument);
    REQUIRE_THROWS_AS(ReportTable::from_csv("name,n\n", schema), std::invalid_argument);
    REQUIRE_THROWS_AS(ReportTable::from_csv("name,n,y\n", schema), std::invalid_argument);
    REQUIRE_THROWS_AS(ReportTable::from_csv("name,n,x\na,1\n", schema), std::invalid_argument);
    REQUIRE_THROWS_AS(ReportTable::from_csv("name,n,x\na,one,0.5\n", schema),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(ReportTable::from_csv("name,n,x\na,1,half\n", schema), std::invalid_argument);
    REQUIRE_THROWS_AS(ReportTable::from_csv("name,n,x\n\"a,1,0.5\n", schema), std::invalid_argument);
    REQUIRE_THROWS_AS(ReportTable::from_csv("name,n,x\na,1,nan\n", schema), std::invalid_argument);

    // CRLF input parses; output normalizes to LF.
    const ReportTable crlf = ReportTable::from_csv("name,n,x\r\na,1,0.5\r\n", schema);
    REQUIRE(crlf.num_rows() == 1);
    REQUIRE(crlf.to_csv() == "name,n,x\na,1,0.5\n");
}

TEST_CASE("config files parse sections, comments, and typed values") {
    const std::string text =
        "# top comment\n"
        "experiment = method_comparison\n"
        "tail_fraction = 0.1   # inline comment\n"
        "\n"
        "[environment]\n"
        "kind = bandit\n"
        "actions = 4\n"
        "correct = 0\n"
        "\n"
        "[train]\n"
        "seeds = 1, 2, 3\n"
        "rho_grid = 0.0 0.05 0.1\n"
        "online = true\n";

    ConfigFile config = ConfigFile::parse(text);
    REQUIRE(config.get_string("experiment") == "method_comparison");
    REQUIRE(config.get_real("tail_fraction") == 0.1);
    REQUIRE(config.get_string("environment.kind") == "bandit");
    REQUIRE(config.get_integer("environment.actions") == 4);
    REQUIRE(config.get_integer_list("environment.correct") == std::vector<std::int64_t>{0});
    REQUIRE(config.get_integer_list("train.seeds") == std::vector<std::int64_t>{1, 2, 3});
    REQUIRE(config.get_real_list("train.rho_grid") == std::vector<double>{0.0, 0.05, 0.1});
    REQUIRE(config.get_bool("train.online"));
    REQUIRE_NOTHROW(config.require_all_consumed());

    REQUIRE(config.get_string_or("absent", "fallback") == "fallback");
    REQUIRE(config.get_real_or("absent", 2.5) == 2.5);
    REQUIRE(config.get_integer_or("absent", 7) == 7);
    REQUIRE(config.get_bool_or("absent", false) == false);
}

TEST_CASE("config parser reports line numbers for malformed input") {
    auto parse_error = [](const std::string& text, const std::string& needle) {
        try {
            ConfigFile::parse(text);
            FAIL("expected parse failure");
        } catch (const std::invalid_argument& e) {
            REQUIRE(std::string(e.what()).find(needle) != std::string::npos);
        }
    };

    parse_error("a = 1\nb\n", "line 2");
    parse_error("[section\nkey = 1\n", "line 1");
    parse_error("[]\n", "empty section");
    parse_error("= 3\n", "empty key");
    parse_error("a = 1\na = 2\n", "duplicate key 'a'");

    ConfigFile config = ConfigFile::parse("a = not_a_number\nflag = maybe\n");
    REQUIRE_THROWS_AS(config.get_real("a"), std::invalid_argument);
    REQUIRE_THROWS_AS(config.get_bool("flag"), std::invalid_argument);
    REQUIRE_THROWS_AS(config.get_string("missing"), std::invalid_argument);
}

TEST_CASE("unconsumed config keys surface as unknown-key errors") {
    ConfigFile config = ConfigFile::parse("known = 1\n[env]\ntypo_key = 2\n");
    REQUIRE(config.get_integer("known") == 1);
    try {
        config.require_all_consumed();
        FAIL("expected unknown-key failure");
    } catch (const std::invalid_argument& e) {
        const std::string message = e.what();
        REQUIRE(message.find("env.typo_key") != std::string::npos);
        REQUIRE(message.find("line 3") != std::string::npos);
    }
}

TEST_CASE("config files load from disk") {
    const std::filesystem::path path =
        std::filesystem::temp_directory_path() / "noisypg_config_test.cfg";
    {
        std::ofstream out(path);
        out << "[run]\nsteps = 12\n";
    }
    ConfigFile config = ConfigFile::load(path);
    REQUIRE(config.get_integer("run.steps") == 12);
    std::filesystem::remove(path);

    REQUIRE_THROWS_AS(ConfigFile::load(path), std::runtime_error);
}
