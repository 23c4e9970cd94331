// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "citab/config.hpp"
#include "citab/errors.hpp"

using namespace citab;

TEST_CASE("toml: scalars, sections, comments") {
  const auto doc = parse_toml(R"(
# top comment
title = "hello \"world\""
count = 42
ratio = 1.5e-3
flag = true

[model]
depth = 2          # inline comment
name = "sat"

[model.inner]
k = -7
)");
  CHECK(doc["title"] == "hello \"world\"");
  CHECK(doc["count"] == 42);
  CHECK(doc["ratio"].get<double>() == doctest::Approx(1.5e-3));
  CHECK(doc["flag"] == true);
  CHECK(doc["model"]["depth"] == 2);
  CHECK(doc["model"]["name"] == "sat");
  CHECK(doc["model"]["inner"]["k"] == -7);
}

TEST_CASE("toml: arrays, including multiline") {
  const auto doc = parse_toml(R"(
ints = [1, 2, 3]
mixed_case = [ "a", "b" ]
floats = [
  1.0, 2.5,
  -3.0,
]
empty = []
)");
  CHECK(doc["ints"].size() == 3);
  CHECK(doc["ints"][2] == 3);
  CHECK(doc["mixed_case"][1] == "b");
  CHECK(doc["floats"].size() == 3);
  CHECK(doc["floats"][2].get<double>() == doctest::Approx(-3.0));
  CHECK(doc["empty"].empty());
}

TEST_CASE("toml: arrays of tables, nested") {
  const auto doc = parse_toml(R"(
[[cohort]]
id = "A"
[[cohort.column]]
name = "age"
[[cohort.column]]
name = "sex"
[[cohort]]
id = "B"
[[cohort.column]]
name = "mmse"
)");
  REQUIRE(doc["cohort"].size() == 2);
  CHECK(doc["cohort"][0]["id"] == "A");
  CHECK(doc["cohort"][0]["column"].size() == 2);
  CHECK(doc["cohort"][0]["column"][1]["name"] == "sex");
  CHECK(doc["cohort"][1]["column"][0]["name"] == "mmse");
}

TEST_CASE("toml: malformed input reports the line") {
  CHECK_THROWS_AS(parse_toml("a = 1\na = 2\n"), IoError);
  CHECK_THROWS_AS(parse_toml("just a line\n"), IoError);
  CHECK_THROWS_AS(parse_toml("x = [1, 2\n"), IoError);
  CHECK_THROWS_AS(parse_toml("x = zzz\n"), IoError);
  try {
    parse_toml("ok = 1\nbad = @\n");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}
