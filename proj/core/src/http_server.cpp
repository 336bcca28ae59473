#include "gptc/service.hpp"

#include <httplib.h>

namespace gptc::service {

struct HttpServer::Impl {
    httplib::Server server;
};

HttpServer::HttpServer(CompletionService& service) : impl_(new Impl) {
    auto reply = [](httplib::Response& res, const HttpReply& r) {
        res.status = r.status;
        if (r.retry_after) {
            res.set_header("Retry-After", std::to_string(*r.retry_after));
        }
        res.set_content(r.body, "application/json");
    };
    impl_->server.Post("/v1/completions", [&service, reply](const httplib::Request& req, httplib::Response& res) {
        reply(res, service.handle_completion(req.body));
    });
    impl_->server.Get("/v1/health", [&service, reply](const httplib::Request&, httplib::Response& res) {
        reply(res, service.handle_health());
    });
}

HttpServer::~HttpServer() {
    stop();
    delete impl_;
}

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) {
            throw Error("cannot bind " + host);
        }
        return bound;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw Error("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpServer::listen() {
    impl_->server.listen_after_bind();
}

void HttpServer::stop() {
    if (impl_->server.is_running()) {
        impl_->server.stop();
    }
}

}  // namespace gptc::service
