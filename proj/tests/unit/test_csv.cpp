#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "crp/csv.hpp"

using namespace crp;

TEST_CASE("parses quoted fields, escapes, and CRLF", "[csv]") {
  auto t = CsvTable::parse("a,b,c\r\n1,\"x,y\",\"he said \"\"hi\"\"\"\n,,\n\"multi\nline\",2,3\n", "mem");
  REQUIRE(t.n_rows() == 3);
  CHECK(t.get_str(0, "b") == "x,y");
  CHECK(t.get_str(0, "c") == "he said \"hi\"");
  CHECK(t.get_str(1, "a").empty());
  CHECK(t.get_str(2, "a") == "multi\nline");
  CHECK(t.get_int(2, "b") == 2);
}

TEST_CASE("rejects ragged rows and missing columns", "[csv]") {
  CHECK_THROWS_MATCHES(CsvTable::parse("a,b\n1\n", "mem"), Error,
                       Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("row 2")));
  auto t = CsvTable::parse("a,b\n1,2\n", "mem");
  CHECK_THROWS_AS(t.column("z"), Error);
  CHECK_THROWS_AS(t.require_columns({"a", "z"}), Error);
  CHECK_THROWS_AS(CsvTable::parse("", "mem"), Error);
}

TEST_CASE("typed getters name the offending cell", "[csv]") {
  auto t = CsvTable::parse("n,x\n3,hello\n", "f.csv");
  try {
    t.get_double(0, "x");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SchemaViolation);
    CHECK(std::string(e.what()).find("f.csv row 2 column 'x'") != std::string::npos);
  }
}

TEST_CASE("load reports missing file", "[csv]") {
  try {
    CsvTable::load("/nonexistent/nope.csv");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingFile);
  }
}

TEST_CASE("writer quotes only when needed and round-trips", "[csv]") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "crp_csv_test";
  fs::create_directories(dir);
  fs::path p = dir / "out.csv";

  CsvWriter w(p.string());
  w.row("id", "note", "value");
  w.row("a1", "plain", 1.5);
  w.row("a2", "comma, inside", -2);
  w.row("a3", "quote \" inside", 0.1);
  w.row("a4", "newline\ninside", 7);
  w.commit();

  auto t = CsvTable::load(p.string());
  REQUIRE(t.n_rows() == 4);
  CHECK(t.get_str(1, "note") == "comma, inside");
  CHECK(t.get_str(2, "note") == "quote \" inside");
  CHECK(t.get_str(3, "note") == "newline\ninside");
  CHECK(t.get_double(0, "value") == 1.5);
  fs::remove_all(dir);
}

TEST_CASE("format_double round-trips exactly", "[csv]") {
  for (double v : {0.0, 1.0, -1.5, 0.1, 1e-10, 123456.789, 2.2250738585072014e-308, 1.6448536269514722}) {
    std::string s = format_double(v);
    double back = 0;
    std::from_chars(s.data(), s.data() + s.size(), back);
    CHECK(back == v);
  }
  CHECK(format_double(3.0) == "3");
}
