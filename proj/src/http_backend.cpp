#include "circuitlab/http_backend.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "httplib.h"

#include "circuitlab/toy_model.hpp"

namespace circuitlab {

// ---------------------------------------------------------------------------
// client

struct HttpModel::Impl {
    std::string base;    // scheme://host:port
    std::string prefix;  // path prefix, no trailing slash
    std::unique_ptr<httplib::Client> client;
    std::mutex mutex;
    std::atomic<long> next_id{0};
    std::optional<Capabilities> caps;

    std::string fresh_id() { return "req-" + std::to_string(next_id++); }

    json call(const std::string& path, const json* body, const std::string& id) {
        httplib::Result res;
        {
            std::lock_guard lock(mutex);
            if (body) {
                res = client->Post(prefix + path, body->dump(), "application/json");
            } else {
                res = client->Get(prefix + path);
            }
        }
        if (!res) {
            throw BackendError("request to " + base + prefix + path +
                               " failed: " + httplib::to_string(res.error()));
        }
        json out;
        try {
            out = json::parse(res->body);
        } catch (const json::exception&) {
            throw BackendError("non-JSON response (HTTP " + std::to_string(res->status) + ") from " +
                               path);
        }
        if (out.is_object() && out.contains("error")) {
            const auto& e = out["error"];
            throw_protocol_error(e.value("type", "BackendError"), e.value("message", ""));
        }
        if (res->status != 200) {
            throw BackendError("HTTP " + std::to_string(res->status) + " from " + path);
        }
        if (!id.empty() && out.value("id", "") != id) {
            throw BackendError("response id does not match request id " + id);
        }
        return out;
    }
};

HttpModel::HttpModel(const std::string& url, double timeout_seconds) : impl_(std::make_unique<Impl>()) {
    const auto scheme = url.find("://");
    if (url.rfind("http://", 0) != 0 || scheme == std::string::npos) {
        throw BackendError("unsupported endpoint '" + url + "' (expected http://host:port)");
    }
    const auto path = url.find('/', scheme + 3);
    impl_->base = url.substr(0, path);
    if (path != std::string::npos) {
        impl_->prefix = url.substr(path);
        while (!impl_->prefix.empty() && impl_->prefix.back() == '/') impl_->prefix.pop_back();
    }
    impl_->client = std::make_unique<httplib::Client>(impl_->base);
    impl_->client->set_keep_alive(true);
    const auto sec = static_cast<time_t>(timeout_seconds);
    impl_->client->set_read_timeout(sec, 0);
    impl_->client->set_write_timeout(sec, 0);
}

HttpModel::~HttpModel() = default;

Capabilities HttpModel::capabilities() {
    {
        std::lock_guard lock(impl_->mutex);
        if (impl_->caps) return *impl_->caps;
    }
    auto caps = capabilities_from_json(impl_->call("/capabilities", nullptr, ""));
    std::lock_guard lock(impl_->mutex);
    impl_->caps = caps;
    return caps;
}

Tokenization HttpModel::tokenize(const std::string& text) {
    const auto id = impl_->fresh_id();
    const json body = tokenize_request_json(id, text);
    return tokenization_from_json(impl_->call("/tokenize", &body, id));
}

ForwardResult HttpModel::forward(const ForwardRequest& request) {
    ForwardRequest r = request;
    if (r.id.empty()) r.id = impl_->fresh_id();
    const json body = to_json(r);
    return forward_result_from_json(impl_->call("/forward", &body, r.id));
}

GenerateResult HttpModel::generate(const GenerateRequest& request) {
    GenerateRequest r = request;
    if (r.id.empty()) r.id = impl_->fresh_id();
    const json body = to_json(r);
    return generate_result_from_json(impl_->call("/generate", &body, r.id));
}

// ---------------------------------------------------------------------------
// server

struct ModelServer::Impl {
    HookableModel& model;
    httplib::Server server;
    std::thread thread;

    explicit Impl(HookableModel& m) : model(m) {}

    template <typename F>
    void handle(const httplib::Request& req, httplib::Response& res, F&& f) {
        std::string id;
        json out;
        int status = 200;
        try {
            json in;
            if (!req.body.empty()) {
                try {
                    in = json::parse(req.body);
                } catch (const json::exception& e) {
                    throw ProtocolError(std::string("request is not JSON: ") + e.what());
                }
                if (in.is_object() && in.contains("id") && in["id"].is_string()) {
                    id = in["id"].get<std::string>();
                }
            }
            out = f(in);
        } catch (const ProtocolError& e) {
            status = 400;
            out = error_json(id, e.type(), e.what());
        } catch (const std::exception& e) {
            status = 500;
            out = error_json(id, "BackendError", e.what());
        }
        res.status = status;
        res.set_content(out.dump(), "application/json");
    }
};

ModelServer::ModelServer(HookableModel& model) : impl_(std::make_unique<Impl>(model)) {
    auto& s = impl_->server;
    Impl* impl = impl_.get();
    s.Get("/capabilities", [impl](const httplib::Request& req, httplib::Response& res) {
        impl->handle(req, res, [impl](const json&) { return to_json(impl->model.capabilities()); });
    });
    s.Post("/tokenize", [impl](const httplib::Request& req, httplib::Response& res) {
        impl->handle(req, res, [impl](const json& in) {
            const int v = in.value("protocol_version", -1);
            if (v != kProtocolVersion) {
                throw ProtocolError("unsupported protocol_version " + std::to_string(v));
            }
            std::string text;
            try {
                text = in.at("text").get<std::string>();
            } catch (const json::exception& e) {
                throw ProtocolError(std::string("malformed tokenize request: ") + e.what());
            }
            return to_json(impl->model.tokenize(text), in.value("id", ""));
        });
    });
    s.Post("/forward", [impl](const httplib::Request& req, httplib::Response& res) {
        impl->handle(req, res, [impl](const json& in) {
            return to_json(impl->model.forward(forward_request_from_json(in)));
        });
    });
    s.Post("/generate", [impl](const httplib::Request& req, httplib::Response& res) {
        impl->handle(req, res, [impl](const json& in) {
            return to_json(impl->model.generate(generate_request_from_json(in)));
        });
    });
}

ModelServer::~ModelServer() { stop(); }

int ModelServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw BackendError("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw BackendError("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void ModelServer::listen() { impl_->server.listen_after_bind(); }

void ModelServer::start() {
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void ModelServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<HookableModel> make_toy(const std::string& endpoint) {
    ToyConfig config;
    const auto q = endpoint.find('?');
    const std::string rest = endpoint.substr(6, q == std::string::npos ? std::string::npos : q - 6);
    if (!rest.empty() && rest != "/") {
        throw BackendError("unexpected toy endpoint path '" + rest + "'");
    }
    if (q != std::string::npos) {
        std::string query = endpoint.substr(q + 1);
        std::size_t at = 0;
        while (at <= query.size()) {
            const auto amp = query.find('&', at);
            const std::string kv = query.substr(at, amp == std::string::npos ? std::string::npos : amp - at);
            at = amp == std::string::npos ? query.size() + 1 : amp + 1;
            if (kv.empty()) continue;
            const auto eq = kv.find('=');
            const std::string key = kv.substr(0, eq);
            const std::string value = eq == std::string::npos ? "" : kv.substr(eq + 1);
            std::size_t used = 0;
            unsigned long long num = 0;
            try {
                num = std::stoull(value, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != value.size()) {
                throw BackendError("toy endpoint parameter " + key + " needs a number");
            }
            if (key == "layers") config.n_layers = static_cast<int>(num);
            else if (key == "heads") config.n_heads = static_cast<int>(num);
            else if (key == "d_head") config.d_head = static_cast<int>(num);
            else if (key == "max_seq_len") config.max_seq_len = static_cast<int>(num);
            else if (key == "seed") config.seed = num;
            else throw BackendError("unknown toy endpoint parameter '" + key + "'");
        }
    }
    try {
        return std::make_unique<ToyModel>(config);
    } catch (const std::invalid_argument& e) {
        throw BackendError(e.what());
    }
}

}  // namespace

std::unique_ptr<HookableModel> make_model(const std::string& endpoint) {
    if (endpoint.rfind("toy://", 0) == 0) return make_toy(endpoint);
    if (endpoint.rfind("http://", 0) == 0) return std::make_unique<HttpModel>(endpoint);
    throw BackendError("unsupported endpoint '" + endpoint + "' (expected toy:// or http://)");
}

std::string default_endpoint() {
    const char* env = std::getenv("CIRCUITLAB_ENDPOINT");
    return env && *env ? std::string(env) : std::string("toy://");
}

}  // namespace circuitlab
