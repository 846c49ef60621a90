#include "tkg/model_client.hpp"

#include <cstdlib>
#include <fstream>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <thread>

#include "tkg/serialize.hpp"
#include "tkg/text.hpp"

namespace tkg {

void validate_client_config(const ClientConfig& cfg) {
    if (cfg.mode == "fixture") {
        if (cfg.fixture_store.empty()) {
            throw ConfigError("client: fixture mode requires fixture_store");
        }
    } else if (cfg.mode == "live") {
        if (cfg.endpoint.empty() || cfg.model.empty()) {
            throw ConfigError("client: live mode requires endpoint and model");
        }
        if (cfg.credential_env.empty()) {
            throw ConfigError("client: live mode requires credential_env (name of the environment variable)");
        }
    } else {
        throw ConfigError("client: mode must be 'fixture' or 'live', got '" + cfg.mode + "'");
    }
    if (cfg.max_attempts < 1 || cfg.max_in_flight < 1 || cfg.max_requests_per_second <= 0) {
        throw ConfigError("client: max_attempts, max_in_flight and max_requests_per_second must be positive");
    }
}

ClientConfig client_config_from_json(const nlohmann::json& doc) {
    ClientConfig cfg;
    try {
        cfg.mode = doc.value("mode", cfg.mode);
        cfg.fixture_store = doc.value("fixture_store", std::string{});
        cfg.endpoint = doc.value("endpoint", std::string{});
        cfg.model = doc.value("model", std::string{});
        cfg.credential_env = doc.value("credential_env", std::string{});
        cfg.max_attempts = doc.value("max_attempts", cfg.max_attempts);
        cfg.timeout = std::chrono::milliseconds(doc.value("timeout_ms", static_cast<std::int64_t>(cfg.timeout.count())));
        cfg.max_requests_per_second = doc.value("max_requests_per_second", cfg.max_requests_per_second);
        cfg.max_in_flight = doc.value("max_in_flight", cfg.max_in_flight);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("client: ") + e.what());
    }
    if (doc.contains("credential") || doc.contains("api_key")) {
        throw ConfigError("client: credentials are only read from the environment");
    }
    return cfg;
}

nlohmann::json client_config_to_json(const ClientConfig& cfg) {
    nlohmann::json doc;
    doc["mode"] = cfg.mode;
    doc["fixture_store"] = cfg.fixture_store.generic_string();
    doc["endpoint"] = cfg.endpoint;
    doc["model"] = cfg.model;
    doc["credential_env"] = cfg.credential_env;
    doc["max_attempts"] = cfg.max_attempts;
    doc["timeout_ms"] = cfg.timeout.count();
    doc["max_requests_per_second"] = cfg.max_requests_per_second;
    doc["max_in_flight"] = cfg.max_in_flight;
    return doc;
}

std::filesystem::path fixture_path(const std::filesystem::path& store, const std::string& prompt) {
    return store / (sha256_hex(prompt) + ".json");
}

void fixture_store_put(const std::filesystem::path& store, const std::string& prompt, const std::string& response) {
    write_text_file(fixture_path(store, prompt), response);
}

FixtureClient::FixtureClient(std::filesystem::path store) : store_(std::move(store)) {}

std::string FixtureClient::complete(const std::string& prompt) {
    auto path = fixture_path(store_, prompt);
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ModelUnavailable("fixture store has no response for prompt " + path.filename().string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

namespace {

class LiveClient : public ModelClient {
public:
    LiveClient(ClientConfig cfg, std::shared_ptr<Transport> transport)
        : cfg_(std::move(cfg)), transport_(std::move(transport)), slots_(cfg_.max_in_flight) {}

    std::string complete(const std::string& prompt) override {
        const char* key = std::getenv(cfg_.credential_env.c_str());
        if (key == nullptr || *key == '\0') {
            throw ModelUnavailable("environment variable " + cfg_.credential_env + " is not set");
        }
        nlohmann::json body;
        body["model"] = cfg_.model;
        body["temperature"] = 0;
        body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});

        HttpRequest request;
        request.url = cfg_.endpoint;
        request.body = body.dump();
        request.timeout = cfg_.timeout;
        request.headers = {{"Authorization", std::string("Bearer ") + key}, {"Content-Type", "application/json"}};

        std::string last_error;
        for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(200) * (1 << (attempt - 1)));
            }
            throttle();
            slots_.acquire();
            try {
                std::string reply = transport_->post(request);
                slots_.release();
                return content_of(reply);
            } catch (const ModelUnavailable& e) {
                slots_.release();
                last_error = e.what();
            }
        }
        throw ModelUnavailable("model endpoint failed after " + std::to_string(cfg_.max_attempts) +
                               " attempts: " + last_error);
    }

private:
    ClientConfig cfg_;
    std::shared_ptr<Transport> transport_;
    std::counting_semaphore<1024> slots_;
    std::mutex rate_mutex_;
    std::chrono::steady_clock::time_point next_slot_{};

    void throttle() {
        std::unique_lock lock(rate_mutex_);
        auto now = std::chrono::steady_clock::now();
        auto at = std::max(now, next_slot_);
        next_slot_ = at + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(1.0 / cfg_.max_requests_per_second));
        lock.unlock();
        std::this_thread::sleep_until(at);
    }

    // Chat-completions style reply; a bare string body is accepted as-is.
    static std::string content_of(const std::string& reply) {
        auto doc = nlohmann::json::parse(reply, nullptr, false);
        if (doc.is_discarded()) {
            return reply;
        }
        try {
            return doc.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw ModelUnavailable("unexpected response shape from model endpoint");
        }
    }
};

}  // namespace

std::unique_ptr<ModelClient> make_client(const ClientConfig& cfg, std::shared_ptr<Transport> transport) {
    validate_client_config(cfg);
    if (cfg.mode == "fixture") {
        return std::make_unique<FixtureClient>(cfg.fixture_store);
    }
    if (!transport) {
        transport = make_http_transport();
    }
    return std::make_unique<LiveClient>(cfg, std::move(transport));
}

}  // namespace tkg
