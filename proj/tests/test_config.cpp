#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "cspn/params.hpp"
#include "cspn/run_config.hpp"

using namespace cspn;

TEST_CASE("config file parsing") {
  SECTION("keys, whitespace, comments") {
    RunConfig cfg;
    apply_config_text("# model\n d_model = 64 \nnum_layers=3\n\nlearning_rate = 0.01 # adam\n",
                      cfg);
    REQUIRE(cfg.model.encoder.d_model == 64);
    REQUIRE(cfg.model.encoder.num_layers == 3);
    REQUIRE(cfg.training.learning_rate == 0.01);
  }

  SECTION("unknown keys are errors") {
    RunConfig cfg;
    REQUIRE_THROWS_AS(apply_config_text("d_modle = 64\n", cfg), ConfigError);
  }

  SECTION("malformed lines and values are errors") {
    RunConfig cfg;
    REQUIRE_THROWS_AS(apply_config_text("d_model 64\n", cfg), ConfigError);
    REQUIRE_THROWS_AS(apply_config_text("d_model = abc\n", cfg), ConfigError);
    REQUIRE_THROWS_AS(apply_config_text("learning_rate = 1e\n", cfg), ConfigError);
  }

  SECTION("defaults dump round-trips") {
    std::string dump = dump_default_config();
    REQUIRE(dump.find("d_model = 128") != std::string::npos);
    REQUIRE(dump.find("max_epochs = 150") != std::string::npos);
    REQUIRE(dump.find("batch_size = 150") != std::string::npos);
    REQUIRE(dump.find("sub_batch_max_tokens = 1500") != std::string::npos);
    REQUIRE(dump.find("num_layers = 2") != std::string::npos);
    RunConfig cfg;
    cfg.model.encoder.d_model = 1;  // will be overwritten back to the default
    apply_config_text(dump, cfg);
    REQUIRE(cfg.model.encoder.d_model == 128);
    REQUIRE(cfg.training.patience == 10);
  }
}

TEST_CASE("external vector files") {
  SECTION("two blocks") {
    std::istringstream is("2 3\n1 2 3\n4 5 6\n\n1 3\n7 8 9\n");
    std::vector<Matrix> v = read_external_vectors(is, "test");
    REQUIRE(v.size() == 2);
    REQUIRE(v[0].rows == 2);
    REQUIRE(v[0].cols == 3);
    REQUIRE(v[0](1, 2) == 6.0);
    REQUIRE(v[1](0, 0) == 7.0);
  }

  SECTION("width changes are an error") {
    std::istringstream is("1 3\n1 2 3\n1 2\n7 8\n");
    REQUIRE_THROWS_AS(read_external_vectors(is, "test"), ExternalShapeMismatch);
  }

  SECTION("short rows are an error") {
    std::istringstream is("2 3\n1 2 3\n4 5\n");
    REQUIRE_THROWS_AS(read_external_vectors(is, "test"), ExternalShapeMismatch);
  }

  SECTION("long rows are an error") {
    std::istringstream is("1 2\n1 2 3\n");
    REQUIRE_THROWS_AS(read_external_vectors(is, "test"), ExternalShapeMismatch);
  }

  SECTION("alignment against a corpus") {
    std::istringstream is("2 3\n1 2 3\n4 5 6\n");
    std::vector<Matrix> v = read_external_vectors(is, "test");
    Corpus c = parse_bracketed("(S (T a) (T b))");
    check_vectors_alignment(v, c, "test");
    Corpus wrong = parse_bracketed("(S (T a) (T b) (T c))");
    REQUIRE_THROWS_AS(check_vectors_alignment(v, wrong, "test"), ExternalShapeMismatch);
    Corpus two = parse_bracketed("(S (T a) (T b))\n(S (T a) (T b))");
    REQUIRE_THROWS_AS(check_vectors_alignment(v, two, "test"), ExternalShapeMismatch);
  }
}

TEST_CASE("parameter container round trip") {
  ParamStore store;
  std::mt19937_64 rng(71);
  Parameter& a = store.create("enc.layer0.head0.wq", 4, 3);
  Parameter& b = store.create("span.m2", 2, 5);
  init_uniform(a.value, rng, -3, 3);
  init_uniform(b.value, rng, -3, 3);

  std::ostringstream os(std::ios::binary);
  save_params(os, store);
  std::string blob = os.str();
  REQUIRE(blob.substr(0, 5) == "CSPN1");

  SECTION("bit-identical reload") {
    std::istringstream is(blob, std::ios::binary);
    ParamStore loaded;
    REQUIRE(load_params(is, loaded) == 2);
    REQUIRE(loaded.at("enc.layer0.head0.wq").value == a.value);
    REQUIRE(loaded.at("span.m2").value == b.value);
    // Creation order follows container order.
    REQUIRE(loaded[0].name == "enc.layer0.head0.wq");
    REQUIRE(loaded[1].name == "span.m2");
  }

  SECTION("bad magic is a version error") {
    std::string bad = blob;
    bad[0] = 'X';
    std::istringstream is(bad, std::ios::binary);
    ParamStore loaded;
    REQUIRE_THROWS_AS(load_params(is, loaded), VersionError);
  }

  SECTION("strict mode rejects unknown names") {
    std::istringstream is(blob, std::ios::binary);
    ParamStore partial;
    partial.create("enc.layer0.head0.wq", 4, 3);
    REQUIRE_THROWS_AS(load_params_strict(is, partial), VersionError);
  }

  SECTION("shape conflicts are an error") {
    std::istringstream is(blob, std::ios::binary);
    ParamStore other;
    other.create("enc.layer0.head0.wq", 3, 4);
    REQUIRE_THROWS_AS(load_params(is, other), ShapeMismatch);
  }

  SECTION("truncated containers are an error") {
    std::istringstream is(blob.substr(0, blob.size() - 4), std::ios::binary);
    ParamStore loaded;
    REQUIRE_THROWS_AS(load_params(is, loaded), IoError);
  }
}
