// Before httplib: <resolv.h> defines a `_res` macro that breaks Eigen headers.
#include "sepsislab/service.hpp"

#include <httplib.h>

namespace sepsislab {

HttpServer::HttpServer(Service& service) : server_(std::make_unique<httplib::Server>()) {
    auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
        ApiRequest api;
        api.method = req.method;
        api.path = req.path;
        for (const auto& [key, value] : req.params) api.query[key] = value;
        api.body = req.body;
        const auto out = service.handle(api);
        res.status = out.status;
        res.set_content(out.body, "application/json");
    };
    const char* any = R"(/.*)";
    server_->Get(any, forward);
    server_->Post(any, forward);
    server_->Put(any, forward);
    server_->Delete(any, forward);
    server_->Patch(any, forward);
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = server_->bind_to_any_port(host);
        if (bound < 0) throw ConfigError("cannot bind " + host);
        return bound;
    }
    if (!server_->bind_to_port(host, port)) throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpServer::listen() { server_->listen_after_bind(); }

void HttpServer::stop() { server_->stop(); }

}  // namespace sepsislab
