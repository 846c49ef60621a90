#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tkg/error.hpp"

namespace tkg {

class ModelUnavailable : public Error {
public:
    using Error::Error;
};

struct HttpRequest {
    std::string url;
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
    std::chrono::milliseconds timeout{60'000};
};

/// Network boundary of the live client. Tests substitute a counting
/// implementation to prove fixture mode never reaches it.
class Transport {
public:
    virtual ~Transport() = default;
    /// Returns the response body of a 2xx reply; throws ModelUnavailable otherwise.
    virtual std::string post(const HttpRequest& request) = 0;
};

std::shared_ptr<Transport> make_http_transport();

class ModelClient {
public:
    virtual ~ModelClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

struct ClientConfig {
    std::string mode = "fixture";  // fixture | live
    std::filesystem::path fixture_store;
    std::string endpoint;
    std::string model;
    std::string credential_env;
    int max_attempts = 3;
    std::chrono::milliseconds timeout{60'000};
    double max_requests_per_second = 1.0;
    int max_in_flight = 4;
};

/// Throws ConfigError when required fields for the mode are missing.
void validate_client_config(const ClientConfig& cfg);
ClientConfig client_config_from_json(const nlohmann::json& doc);
nlohmann::json client_config_to_json(const ClientConfig& cfg);

/// Replays responses from `<store>/<sha256(prompt)>.json`. Deterministic and
/// reentrant; never performs I/O beyond the store.
class FixtureClient : public ModelClient {
public:
    explicit FixtureClient(std::filesystem::path store);
    std::string complete(const std::string& prompt) override;

private:
    std::filesystem::path store_;
};

std::filesystem::path fixture_path(const std::filesystem::path& store, const std::string& prompt);
void fixture_store_put(const std::filesystem::path& store, const std::string& prompt,
                       const std::string& response);

/// Builds the client for `cfg`. In fixture mode `transport` is ignored; in
/// live mode it defaults to the HTTP transport.
std::unique_ptr<ModelClient> make_client(const ClientConfig& cfg, std::shared_ptr<Transport> transport = nullptr);

}  // namespace tkg
