#include <doctest.h>

#include <cstdlib>

#include "oracles.hpp"
#include "tkg/cti.hpp"
#include "tkg/model_client.hpp"
#include "tkg/serialize.hpp"
#include "tkg/text.hpp"

using namespace tkg;

namespace {

class Sentinel : public Transport {
public:
    std::string post(const HttpRequest& request) override {
        ++calls;
        last = request;
        if (failures_left > 0) {
            --failures_left;
            throw ModelUnavailable("HTTP 503");
        }
        return reply;
    }
    int calls = 0;
    int failures_left = 0;
    std::string reply = R"({"choices":[{"message":{"role":"assistant","content":"hello"}}]})";
    HttpRequest last;
};

ClientConfig live_config() {
    ClientConfig cfg;
    cfg.mode = "live";
    cfg.endpoint = "https://models.invalid/v1/chat/completions";
    cfg.model = "test-model";
    cfg.credential_env = "TKG_TEST_CREDENTIAL";
    cfg.max_requests_per_second = 1000;
    return cfg;
}

}  // namespace

TEST_CASE("fixture store round trip and misses") {
    auto store = oracle::scratch_dir("fixture-store");
    fixture_store_put(store, "prompt one", "answer one");
    CHECK(fixture_path(store, "prompt one").filename() == sha256_hex("prompt one") + ".json");
    FixtureClient client(store);
    CHECK(client.complete("prompt one") == "answer one");
    CHECK_THROWS_AS(client.complete("prompt two"), ModelUnavailable);
}

TEST_CASE("fixture mode never touches the transport") {
    auto sentinel = std::make_shared<Sentinel>();
    ClientConfig cfg;
    cfg.fixture_store = oracle::source_dir() / "tests/data/store";
    auto client = make_client(cfg, sentinel);
    FixtureClient reference(cfg.fixture_store);
    for (const auto& r : load_reports(oracle::source_dir() / "tests/data/reports")) {
        CHECK(parse_report(r, *client) == parse_report(r, reference));
    }
    CHECK_THROWS_AS(client->complete("unknown prompt"), ModelUnavailable);
    CHECK(sentinel->calls == 0);
}

TEST_CASE("live mode retries and unwraps the reply") {
    ::setenv("TKG_TEST_CREDENTIAL", "secret-value", 1);
    auto sentinel = std::make_shared<Sentinel>();
    sentinel->failures_left = 2;
    auto client = make_client(live_config(), sentinel);
    CHECK(client->complete("hi") == "hello");
    CHECK(sentinel->calls == 3);
    CHECK(sentinel->last.url == live_config().endpoint);
    auto body = nlohmann::json::parse(sentinel->last.body);
    CHECK(body["temperature"] == 0);
    CHECK(body["messages"][0]["content"] == "hi");
    bool auth = false;
    for (const auto& [k, v] : sentinel->last.headers) {
        auth = auth || (k == "Authorization" && v == "Bearer secret-value");
    }
    CHECK(auth);

    sentinel->calls = 0;
    sentinel->failures_left = 5;
    CHECK_THROWS_AS(client->complete("hi"), ModelUnavailable);
    CHECK(sentinel->calls == 3);

    sentinel->failures_left = 0;
    sentinel->reply = R"({"unexpected":true})";
    CHECK_THROWS_AS(client->complete("hi"), ModelUnavailable);

    ::unsetenv("TKG_TEST_CREDENTIAL");
    sentinel->calls = 0;
    CHECK_THROWS_AS(client->complete("hi"), ModelUnavailable);
    CHECK(sentinel->calls == 0);
}

TEST_CASE("client config validation") {
    CHECK_THROWS_AS(validate_client_config(ClientConfig{}), ConfigError);
    CHECK_NOTHROW(validate_client_config(live_config()));
    auto no_env = live_config();
    no_env.credential_env.clear();
    CHECK_THROWS_AS(validate_client_config(no_env), ConfigError);
    auto bad_mode = live_config();
    bad_mode.mode = "magic";
    CHECK_THROWS_AS(validate_client_config(bad_mode), ConfigError);
    auto zero = live_config();
    zero.max_attempts = 0;
    CHECK_THROWS_AS(validate_client_config(zero), ConfigError);

    auto doc = client_config_to_json(live_config());
    auto back = client_config_from_json(doc);
    CHECK(back.endpoint == live_config().endpoint);
    CHECK(back.credential_env == "TKG_TEST_CREDENTIAL");

    doc["api_key"] = "sk-inline";
    CHECK_THROWS_AS(client_config_from_json(doc), ConfigError);
    CHECK_THROWS_AS(client_config_from_json(nlohmann::json{{"max_attempts", "three"}}), ConfigError);
}
