#pragma once

// HTTP transport for the hookable-model contract, plus endpoint resolution.
//
// Endpoints:
//   toy://                     in-process toy model with default shape
//   toy://?layers=2&heads=4&d_head=8&seed=0
//   http://host:port           remote backend (a gateway or `circuitlab toy serve`)

#include <memory>
#include <string>

#include "circuitlab/protocol.hpp"

namespace circuitlab {

class HttpModel : public HookableModel {
public:
    // url is "http://host:port" with an optional trailing path prefix.
    explicit HttpModel(const std::string& url, double timeout_seconds = 600.0);
    ~HttpModel() override;

    Capabilities capabilities() override;
    Tokenization tokenize(const std::string& text) override;
    ForwardResult forward(const ForwardRequest& request) override;
    GenerateResult generate(const GenerateRequest& request) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Serves a model over HTTP. Model calls may run on several server threads, so
// the model must be thread safe (the toy model is).
class ModelServer {
public:
    explicit ModelServer(HookableModel& model);
    ~ModelServer();

    // Binds; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    void listen();  // blocks until stop()
    void start();   // listen on a background thread
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// "toy://..." or "http://...". Throws BackendError on anything else.
std::unique_ptr<HookableModel> make_model(const std::string& endpoint);

// Value of CIRCUITLAB_ENDPOINT, or "toy://" when unset.
std::string default_endpoint();

}  // namespace circuitlab
