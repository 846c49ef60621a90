#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <regex>

#include "tkg/model_client.hpp"

namespace tkg {

namespace {

class HttpTransport : public Transport {
public:
    std::string post(const HttpRequest& request) override {
        static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
        std::smatch m;
        if (!std::regex_match(request.url, m, kUrl)) {
            throw ModelUnavailable("malformed endpoint URL: " + request.url);
        }
        httplib::Client client(m[1].str());
        auto secs = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
        client.set_connection_timeout(secs);
        client.set_read_timeout(secs);
        client.set_write_timeout(secs);
        httplib::Headers headers;
        std::string content_type = "application/json";
        for (const auto& [k, v] : request.headers) {
            if (k == "Content-Type") {
                content_type = v;
            } else {
                headers.emplace(k, v);
            }
        }
        const std::string path = m[2].matched ? m[2].str() : "/";
        auto res = client.Post(path, headers, request.body, content_type);
        if (!res) {
            throw ModelUnavailable("transport error: " + httplib::to_string(res.error()));
        }
        if (res->status < 200 || res->status >= 300) {
            throw ModelUnavailable("HTTP " + std::to_string(res->status));
        }
        return res->body;
    }
};

}  // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttpTransport>(); }

}  // namespace tkg
