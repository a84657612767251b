#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "microcep/control.hpp"

namespace microcep::server {

// Actuators with real side effects: TCP forwarding, files for logs and LEDs,
// HTTP POST (or a file) for alarms.
class FileActuators : public control::Actuators {
public:
    // LED state files are written under `led_dir` as `<name>.led`.
    explicit FileActuators(std::filesystem::path led_dir = ".") : led_dir_(std::move(led_dir)) {}

    bool forward(const std::string& host, int port, const std::string& line) override;
    bool log(const std::string& path, const Event& e) override;
    bool led(const std::string& name, const Event& e) override;
    bool alarm(const std::string& url, const Event& e) override;

private:
    std::filesystem::path led_dir_;
};

struct ServerOptions {
    int port = 0;     // 0 picks a free port
    int ws_port = -1;  // <0 disables the WebSocket listener
    std::filesystem::path static_dir;
    std::string bind_address = "127.0.0.1";
};

// Serves one node over the line protocol. All node calls are serialised
// behind one mutex.
class Server {
public:
    Server(control::Node& node, ServerOptions options);
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds and starts accepting. Throws Error("io", ...) when binding fails.
    void start();
    void stop();

    int port() const noexcept { return bound_port_; }
    int ws_port() const noexcept { return bound_ws_port_; }

private:
    struct Connection;

    void accept_loop(int listen_fd, bool websocket);
    void serve_tcp(std::shared_ptr<Connection> conn);
    void serve_http(std::shared_ptr<Connection> conn);
    void serve_websocket(std::shared_ptr<Connection> conn, const std::string& key);
    void serve_static(Connection& conn, const std::string& target);
    std::vector<std::string> handle(control::SessionId session, std::string_view line);
    void close_connection(Connection& conn);
    void track(std::shared_ptr<Connection> conn, bool websocket);

    control::Node& node_;
    ServerOptions options_;
    std::mutex node_mutex_;
    std::mutex threads_mutex_;
    std::vector<std::thread> acceptors_;
    std::vector<std::thread> threads_;
    std::vector<std::weak_ptr<Connection>> connections_;
    int listen_fd_ = -1;
    int ws_listen_fd_ = -1;
    int bound_port_ = -1;
    int bound_ws_port_ = -1;
    std::atomic<bool> running_{false};
};

// WebSocket handshake accept value for a client key.
std::string websocket_accept(const std::string& key);

}  // namespace microcep::server
