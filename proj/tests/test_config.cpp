#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "semnav/config.hpp"
#include "semnav/errors.hpp"

using namespace semnav;

TEST_CASE("parser accepts comments, blanks, and padded assignments") {
  const KeyValueConfig cfg = KeyValueConfig::parse(
      "# run settings\n"
      "\n"
      "  seed   =  42  \n"
      "name = hello world\n"
      "ratio=0.25\n"
      "# trailing comment\n");
  CHECK(cfg.entries().size() == 3);
  CHECK(cfg.has("seed"));
  CHECK(cfg.get_int("seed", 0) == 42);
  CHECK(cfg.get_string("name", "") == "hello world");
  CHECK(cfg.get_real("ratio", 0.0) == doctest::Approx(0.25));
  CHECK_FALSE(cfg.has("missing"));
}

TEST_CASE("parser rejects malformed lines") {
  CHECK_THROWS_AS((void)KeyValueConfig::parse("just words\n"), ConfigError);
  CHECK_THROWS_AS((void)KeyValueConfig::parse("= value\n"), ConfigError);
  CHECK_THROWS_AS((void)KeyValueConfig::parse("key =\n"), ConfigError);
  CHECK_THROWS_AS((void)KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
}

TEST_CASE("typed accessors validate their formats") {
  const KeyValueConfig cfg = KeyValueConfig::parse(
      "count = 12\n"
      "bad_count = 12abc\n"
      "rate = 1.5e-3\n"
      "bad_rate = fast\n"
      "on = yes\n"
      "off = 0\n"
      "maybe = sometimes\n"
      "names = alpha, beta ,gamma\n"
      "bad_names = alpha,,gamma\n");

  CHECK(cfg.get_int("count", 0) == 12);
  CHECK_THROWS_AS((void)cfg.get_int("bad_count", 0), ConfigError);
  CHECK(cfg.get_real("rate", 0.0) == doctest::Approx(1.5e-3));
  CHECK_THROWS_AS((void)cfg.get_real("bad_rate", 0.0), ConfigError);
  CHECK(cfg.get_bool("on", false));
  CHECK_FALSE(cfg.get_bool("off", true));
  CHECK_THROWS_AS((void)cfg.get_bool("maybe", false), ConfigError);

  const std::vector<std::string> names = cfg.get_list("names");
  REQUIRE(names.size() == 3);
  CHECK(names[0] == "alpha");
  CHECK(names[1] == "beta");
  CHECK(names[2] == "gamma");
  CHECK_THROWS_AS((void)cfg.get_list("bad_names"), ConfigError);

  // Absent keys fall back to the provided defaults.
  CHECK(cfg.get_int("absent", 7) == 7);
  CHECK(cfg.get_real("absent", 2.5) == doctest::Approx(2.5));
  CHECK(cfg.get_bool("absent", true));
  CHECK(cfg.get_string("absent", "d") == "d");
  CHECK(cfg.get_list("absent").empty());
}

TEST_CASE("unknown-key guard names the offender") {
  const KeyValueConfig cfg = KeyValueConfig::parse("seed = 1\nbogus = 2\n");
  const std::vector<std::string> known = {"seed", "steps"};
  try {
    cfg.require_known_keys(known);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bogus") != std::string::npos);
  }
  const KeyValueConfig ok = KeyValueConfig::parse("seed = 1\nsteps = 2\n");
  CHECK_NOTHROW(ok.require_known_keys(known));
}

TEST_CASE("canonical text sorts keys and normalizes spacing") {
  const KeyValueConfig cfg =
      KeyValueConfig::parse("zeta=1\n  alpha =  two words \nmid = 3\n");
  CHECK(cfg.canonical_text() == "alpha = two words\nmid = 3\nzeta = 1\n");
  CHECK(KeyValueConfig{}.canonical_text().empty());
}

TEST_CASE("file loading round-trips and reports unreadable paths") {
  const std::string path = "config_test_roundtrip.cfg";
  {
    std::ofstream out(path);
    out << "seed = 9\nnames = a,b\n";
  }
  const KeyValueConfig cfg = KeyValueConfig::load_file(path);
  CHECK(cfg.get_int("seed", 0) == 9);
  CHECK(cfg.get_list("names").size() == 2);
  std::remove(path.c_str());

  CHECK_THROWS_AS((void)KeyValueConfig::load_file("no_such_file.cfg"),
                  ConfigError);
}
