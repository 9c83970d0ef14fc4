#pragma once

// Shared HTTP service runtime: background listen thread, graceful stop (the
// listener closes, in-flight requests drain), basic-auth request check.

#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include <httplib.h>

#include "wattline/util.hpp"

namespace wattline {

struct ListenAddress {
    std::string host;
    int port = 0;
};

inline std::optional<ListenAddress> parse_listen_address(std::string_view s) {
    size_t colon = s.rfind(':');
    if (colon == std::string_view::npos || colon == 0) return std::nullopt;
    auto port = util::parse_int(s.substr(colon + 1));
    if (!port || *port < 0 || *port > 65535) return std::nullopt;
    return ListenAddress{std::string(s.substr(0, colon)), static_cast<int>(*port)};
}

struct BasicAuthCredentials {
    std::string username;
    std::string password_hash;  // util::make_password_hash format
};

inline bool check_basic_auth(const httplib::Request& req, const BasicAuthCredentials& creds) {
    std::string header = req.get_header_value("Authorization");
    if (!header.starts_with("Basic ")) return false;
    auto decoded = util::base64_decode(header.substr(6));
    if (!decoded) return false;
    size_t colon = decoded->find(':');
    if (colon == std::string::npos) return false;
    if (decoded->substr(0, colon) != creds.username) return false;
    return util::verify_password(decoded->substr(colon + 1), creds.password_hash);
}

inline void respond_unauthorized(httplib::Response& res) {
    res.status = 401;
    res.set_header("WWW-Authenticate", "Basic realm=\"wattline\"");
    res.set_content("", "text/plain");
}

class HttpService {
public:
    HttpService() = default;
    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;
    ~HttpService() { stop(); }

    httplib::Server& server() { return server_; }

    // Binds and starts serving on a background thread; port 0 picks any free
    // port. Returns the bound port.
    int start(const std::string& host, int port) {
        if (thread_.joinable()) throw std::runtime_error("service already started");
        // no SO_REUSEPORT: binding an actively used port must fail loudly
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR,
                       reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        if (port == 0) {
            port_ = server_.bind_to_any_port(host);
            if (port_ < 0) throw std::runtime_error("cannot bind " + host + ":any");
        } else {
            if (!server_.bind_to_port(host, port))
                throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
            port_ = port;
        }
        host_ = host;
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    int port() const { return port_; }
    std::string base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

private:
    httplib::Server server_;
    std::thread thread_;
    std::string host_;
    int port_ = -1;
};

}  // namespace wattline
