#include <catch2/catch_amalgamated.hpp>

#include "cbseq/toml.hpp"

using namespace cbseq;

TEST_CASE("toml parses scalars, tables and arrays") {
  auto t = toml::parse_string(R"(
# comment
seed = 42
eps = 1.5
name = "hello # not a comment"
flag = true
ints = [1, 2, 3]

[model]
blocks = 6
lr = 1e-5
)");
  CHECK(t.at("seed").as_int() == 42);
  CHECK(t.at("eps").as_double() == 1.5);
  CHECK(t.at("name").as_string() == "hello # not a comment");
  CHECK(t.at("flag").as_bool());
  CHECK(t.at("ints").as_array().size() == 3);
  CHECK(t.at("ints").as_array()[2].as_int() == 3);
  CHECK(t.tables.at("model").at("blocks").as_int() == 6);
  CHECK(t.tables.at("model").at("lr").as_double() == 1e-5);
}

TEST_CASE("toml parses arrays of tables") {
  auto t = toml::parse_string(R"(
[[scenario]]
kind = "benign_background"
hosts = 4

[[scenario]]
kind = "multi_node_transient"
hosts = 50
)");
  REQUIRE(t.table_arrays.at("scenario").size() == 2);
  CHECK(t.table_arrays.at("scenario")[1].at("hosts").as_int() == 50);
}

TEST_CASE("toml rejects malformed input") {
  CHECK_THROWS_AS(toml::parse_string("novalue"), Error);
  CHECK_THROWS_AS(toml::parse_string("a = "), Error);
  CHECK_THROWS_AS(toml::parse_string("a = 1\na = 2"), Error);
  CHECK_THROWS_AS(toml::parse_string("[table"), Error);
  CHECK_THROWS_AS(toml::parse_string("x = \"unterminated"), Error);
}

TEST_CASE("integers and floats keep their type") {
  auto t = toml::parse_string("a = 3\nb = 3.0\nc = -2\n");
  CHECK(t.at("a").is_int());
  CHECK(t.at("b").is_double());
  CHECK(t.at("c").as_int() == -2);
  CHECK(t.at("a").as_double() == 3.0);  // widening allowed
}
