#include "microcep/server.hpp"

#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

// After Eigen: resolv.h defines a `_res` macro that clashes with Eigen parameter names.
#include "httplib.h"

using namespace microcep;
using namespace microcep::control;
using namespace microcep::server;
namespace fs = std::filesystem;

namespace {

using Lines = std::vector<std::string>;

class Client {
public:
    explicit Client(int port) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
        if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) ADD_FAILURE() << "connect failed";
    }
    ~Client() { ::close(fd_); }

    void send_raw(std::string_view bytes) {
        while (!bytes.empty()) {
            const ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
            if (n <= 0) return;
            bytes.remove_prefix(static_cast<std::size_t>(n));
        }
    }
    void send_line(const std::string& line) { send_raw(line + "\n"); }

    // Reads until `count` lines arrived or the timeout passed.
    Lines read_lines(std::size_t count, int timeout_ms = 2000) {
        Lines out;
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
        while (out.size() < count) {
            const auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                out.push_back(buffer_.substr(0, nl));
                buffer_.erase(0, nl + 1);
                continue;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0 || !fill(static_cast<int>(left.count()))) break;
        }
        return out;
    }

    Lines request(const std::string& line, std::size_t count = 1) {
        send_line(line);
        return read_lines(count);
    }

    std::string read_bytes(std::size_t n, int timeout_ms = 2000) {
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
        while (buffer_.size() < n) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0 || !fill(static_cast<int>(left.count()))) break;
        }
        std::string out = buffer_.substr(0, n);
        buffer_.erase(0, out.size());
        return out;
    }

    std::string read_until(const std::string& marker) {
        while (buffer_.find(marker) == std::string::npos) {
            if (!fill(2000)) break;
        }
        const auto at = buffer_.find(marker);
        const std::size_t n = at == std::string::npos ? buffer_.size() : at + marker.size();
        std::string out = buffer_.substr(0, n);
        buffer_.erase(0, n);
        return out;
    }

    std::string read_all() {
        while (fill(2000)) {
        }
        std::string out;
        out.swap(buffer_);
        return out;
    }

private:
    bool fill(int timeout_ms) {
        pollfd p{fd_, POLLIN, 0};
        if (::poll(&p, 1, timeout_ms) != 1) return false;
        char chunk[4096];
        const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
        if (n <= 0) return false;
        buffer_.append(chunk, static_cast<std::size_t>(n));
        return true;
    }

    int fd_ = -1;
    std::string buffer_;
};

std::string ws_client_frame(std::uint8_t opcode, const std::string& payload) {
    std::string f;
    f.push_back(static_cast<char>(0x80 | opcode));
    const char mask[4] = {0x11, 0x22, 0x33, 0x44};
    if (payload.size() < 126) {
        f.push_back(static_cast<char>(0x80 | payload.size()));
    } else {
        f.push_back(static_cast<char>(0x80 | 126));
        f.push_back(static_cast<char>(payload.size() >> 8));
        f.push_back(static_cast<char>(payload.size() & 0xff));
    }
    f.append(mask, 4);
    for (std::size_t i = 0; i < payload.size(); ++i) f.push_back(static_cast<char>(payload[i] ^ mask[i % 4]));
    return f;
}

// Reads one unmasked server frame; returns {opcode, payload}.
std::pair<int, std::string> ws_read(Client& c) {
    const std::string head = c.read_bytes(2);
    if (head.size() < 2) return {-1, ""};
    std::size_t len = static_cast<std::uint8_t>(head[1]) & 0x7f;
    if (len == 126) {
        const std::string ext = c.read_bytes(2);
        len = (static_cast<std::size_t>(static_cast<std::uint8_t>(ext[0])) << 8) | static_cast<std::uint8_t>(ext[1]);
    }
    return {static_cast<std::uint8_t>(head[0]) & 0x0f, c.read_bytes(len)};
}

fs::path temp_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("microcep_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool eventually(const std::function<bool()>& pred) {
    for (int i = 0; i < 200; ++i) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return pred();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST(WebSocketAccept, KnownVector) {
    EXPECT_EQ(websocket_accept("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

class ServerTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = temp_dir("server");
        std::ofstream(dir / "index.html") << "<html>console</html>";
        actuators = std::make_unique<FileActuators>(dir);
        node = std::make_unique<Node>(NodeConfig{}, *actuators);
        ServerOptions opts;
        opts.ws_port = 0;
        opts.static_dir = dir;
        server = std::make_unique<Server>(*node, opts);
        server->start();
    }
    void TearDown() override {
        server->stop();
        fs::remove_all(dir);
    }

    fs::path dir;
    std::unique_ptr<FileActuators> actuators;
    std::unique_ptr<Node> node;
    std::unique_ptr<Server> server;
};

TEST_F(ServerTest, PingPong) {
    Client c(server->port());
    EXPECT_EQ(c.request("PING"), Lines{"PONG"});
    EXPECT_EQ(c.request("PING\r"), Lines{"PONG"});
}

TEST_F(ServerTest, RuleEventEmit) {
    Client c(server->port());
    EXPECT_EQ(c.request("RULE f filtered_temperature[_,_](X) :- temperature_event[_,_](X, Celsius) where(X>20)."),
              Lines{"OK f"});
    EXPECT_EQ(c.request("SUB filtered_temperature"), Lines{"OK"});
    EXPECT_EQ(c.request("EVENT temperature_event[2000, 2200](24, Celsius)", 2),
              (Lines{"OK", "EMIT filtered_temperature[2000, 2200](24)"}));
    EXPECT_EQ(c.request("TIME 5000"), Lines{"OK"});
    const Lines r = c.request("TIME 4999");
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].rfind("ERR time-regression", 0), 0u);
}

TEST_F(ServerTest, PipelinedCommandsKeepOrder) {
    Client c(server->port());
    c.send_raw("RULE r x1[_,_](X) :- x[_,_](X).\nSUB x1\nEVENT x[0, 0](1)\nEVENT x[1, 1](2)\nPING\n");
    EXPECT_EQ(c.read_lines(7), (Lines{"OK r", "OK", "OK", "EMIT x1[0, 0](1)", "OK", "EMIT x1[1, 1](2)", "PONG"}));
}

TEST_F(ServerTest, SessionsAreIsolated) {
    Client a(server->port());
    Client b(server->port());
    a.request("RULE r x1[_,_](X) :- x[_,_](X).");
    EXPECT_EQ(a.request("SUB x1"), Lines{"OK"});
    EXPECT_EQ(a.request("EVENT x[0, 0](1)", 2), (Lines{"OK", "EMIT x1[0, 0](1)"}));
    EXPECT_EQ(b.request("PING"), Lines{"PONG"});  // nothing queued ahead of the PONG
    EXPECT_EQ(b.request("SUB x1"), Lines{"OK"});
    EXPECT_EQ(a.request("EVENT x[1, 1](1)", 2), (Lines{"OK", "EMIT x1[1, 1](1)"}));
    EXPECT_EQ(b.read_lines(1), Lines{"EMIT x1[1, 1](1)"});
}

TEST_F(ServerTest, OversizedLineAnsweredOnce) {
    Client c(server->port());
    c.send_raw(std::string(20000, 'A'));
    c.send_raw("\nPING\n");
    const Lines r = c.read_lines(2);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].rfind("ERR too-long", 0), 0u);
    EXPECT_EQ(r[1], "PONG");
}

TEST_F(ServerTest, WebSocketCarriesLines) {
    Client c(server->ws_port());
    c.send_raw("GET /ws HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
               "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n");
    const std::string head = c.read_until("\r\n\r\n");
    EXPECT_NE(head.find("101"), std::string::npos);
    EXPECT_NE(head.find("s3pPLMBiTxaQ9kYGzzhZRbK+xOo="), std::string::npos);

    c.send_raw(ws_client_frame(0x1, "PING"));
    EXPECT_EQ(ws_read(c), std::make_pair(1, std::string("PONG")));
    c.send_raw(ws_client_frame(0x1, "RULE r x1[_,_](X) :- x[_,_](X).\nSUB *"));
    EXPECT_EQ(ws_read(c).second, "OK r");
    EXPECT_EQ(ws_read(c).second, "OK");

    // EMIT lines caused by a TCP session reach the WebSocket subscriber.
    Client tcp(server->port());
    EXPECT_EQ(tcp.request("EVENT x[5, 5](3)"), Lines{"OK"});
    EXPECT_EQ(ws_read(c).second, "EMIT x1[5, 5](3)");

    c.send_raw(ws_client_frame(0x9, "hi"));
    EXPECT_EQ(ws_read(c), std::make_pair(0xA, std::string("hi")));
    const std::string big = "EVENT x[6, 6](" + std::string(200, '1') + ")";
    c.send_raw(ws_client_frame(0x1, big));
    EXPECT_EQ(ws_read(c).second, "OK");
    EXPECT_EQ(ws_read(c).second.rfind("EMIT x1[6, 6](", 0), 0u);
    c.send_raw(ws_client_frame(0x8, "\x03\xe8"));
    EXPECT_EQ(ws_read(c).first, 0x8);
}

TEST_F(ServerTest, StaticAssets) {
    {
        Client c(server->ws_port());
        c.send_raw("GET / HTTP/1.1\r\nHost: x\r\n\r\n");
        const std::string r = c.read_all();
        EXPECT_EQ(r.rfind("HTTP/1.1 200", 0), 0u) << r;
        EXPECT_NE(r.find("text/html"), std::string::npos);
        EXPECT_NE(r.find("<html>console</html>"), std::string::npos);
    }
    {
        Client c(server->ws_port());
        c.send_raw("GET /missing.js HTTP/1.1\r\n\r\n");
        EXPECT_EQ(c.read_all().rfind("HTTP/1.1 404", 0), 0u);
    }
    {
        Client c(server->ws_port());
        c.send_raw("GET /../etc/passwd HTTP/1.1\r\n\r\n");
        EXPECT_EQ(c.read_all().rfind("HTTP/1.1 404", 0), 0u);
    }
}

TEST_F(ServerTest, LedRouteWritesStateFile) {
    Client c(server->port());
    c.request("RULE r23 occupied[_,_](X) :- occupancy_score[_,_](X) where(X>0).");
    c.request("ROUTE occupied led:warn");
    c.request("EVENT occupancy_score[0, 0](0.7)");
    EXPECT_EQ(slurp(dir / "warn.led"), "ON occupied[0, 0](0.7)\n");
}

TEST_F(ServerTest, LogAndFileAlarm) {
    Client c(server->port());
    c.request("RULE r22 not_occupied[_,_](X) :- occupancy_score[_,_](X) where(X<0).");
    c.request("ROUTE not_occupied log:" + (dir / "events.log").string());
    c.request("ROUTE not_occupied alarm:" + (dir / "alarms.txt").string());
    c.request("EVENT occupancy_score[0, 0](-1)");
    c.request("EVENT occupancy_score[1, 1](-2)");
    EXPECT_EQ(slurp(dir / "events.log"), "not_occupied[0, 0](-1)\nnot_occupied[1, 1](-2)\n");
    EXPECT_EQ(slurp(dir / "alarms.txt"), "ALARM not_occupied[0, 0](-1)\nALARM not_occupied[1, 1](-2)\n");
}

TEST_F(ServerTest, HttpAlarm) {
    httplib::Server cloud;
    std::mutex m;
    Lines received;
    cloud.Post("/alarm", [&](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard lock(m);
        received.push_back(req.body);
        res.set_content("ok", "text/plain");
    });
    const int port = cloud.bind_to_any_port("127.0.0.1");
    std::thread t([&] { cloud.listen_after_bind(); });
    cloud.wait_until_ready();

    Client c(server->port());
    c.request("RULE r22 not_occupied[_,_](X) :- occupancy_score[_,_](X) where(X<0).");
    c.request("ROUTE not_occupied alarm:http://127.0.0.1:" + std::to_string(port) + "/alarm");
    EXPECT_EQ(c.request("EVENT occupancy_score[0, 0](-1)"), Lines{"OK"});
    cloud.stop();
    t.join();
    EXPECT_EQ(received, Lines{"not_occupied[0, 0](-1)"});
    EXPECT_TRUE(node->diagnostics().empty());
}

TEST(ServerForward, WarningReachesPeerNode) {
    FileActuators act_b(fs::temp_directory_path());
    Node node_b(NodeConfig{}, act_b);
    Server server_b(node_b, ServerOptions{});
    server_b.start();

    FileActuators act_a(fs::temp_directory_path());
    Node node_a(NodeConfig{}, act_a);
    Server server_a(node_a, ServerOptions{});
    server_a.start();

    Client watcher(server_b.port());
    EXPECT_EQ(watcher.request("RULE seen got[_,_](X) :- warning[_,_](X)."), Lines{"OK seen"});
    EXPECT_EQ(watcher.request("SUB got"), Lines{"OK"});

    Client c(server_a.port());
    c.request("RULE r13 warning[_,_](X) :- smoothed_anomaly_score[_,_](X) where(X>1).");
    c.request("ROUTE warning forward:127.0.0.1:" + std::to_string(server_b.port()));
    EXPECT_EQ(c.request("EVENT smoothed_anomaly_score[10, 20](1.5)"), Lines{"OK"});
    EXPECT_EQ(watcher.read_lines(1), Lines{"EMIT got[10, 20](1.5)"});

    // Unreachable peer: the command still succeeds and a diagnostic is kept.
    server_b.stop();
    EXPECT_EQ(c.request("EVENT smoothed_anomaly_score[30, 40](2)"), Lines{"OK"});
    EXPECT_TRUE(eventually([&] { return !node_a.diagnostics().empty(); }));
    server_a.stop();
}

TEST(ServerLifecycle, StopWithOpenClients) {
    NullActuators act;
    Node node(NodeConfig{}, act);
    Server server(node, ServerOptions{});
    server.start();
    Client a(server.port());
    Client b(server.port());
    EXPECT_EQ(a.request("PING"), Lines{"PONG"});
    server.stop();
    EXPECT_TRUE(b.read_all().empty());
}
