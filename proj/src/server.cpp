#include "microcep/server.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "httplib.h"
#include "microcep/errors.hpp"

namespace microcep::server {

namespace {

bool send_all(int fd, std::string_view data) {
    while (!data.empty()) {
        const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return false;
        data.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
}

// Connects with a bounded wait. Returns -1 on failure.
int connect_tcp(const std::string& host, int port, int timeout_ms) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res) != 0) return -1;
    int fd = -1;
    for (addrinfo* ai = res; ai != nullptr && fd < 0; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK, ai->ai_protocol);
        if (fd < 0) continue;
        int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
        if (rc < 0 && errno == EINPROGRESS) {
            pollfd p{fd, POLLOUT, 0};
            int err = 0;
            socklen_t len = sizeof(err);
            if (::poll(&p, 1, timeout_ms) == 1 && ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0) {
                rc = 0;
            }
        }
        if (rc != 0) {
            ::close(fd);
            fd = -1;
            continue;
        }
        ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
    }
    ::freeaddrinfo(res);
    return fd;
}

int listen_on(const std::string& address, int port, int& bound) {
    const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw Error("io", std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw Error("io", "bad bind address " + address);
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(fd, 64) < 0) {
        const std::string why = std::strerror(errno);
        ::close(fd);
        throw Error("io", "cannot listen on port " + std::to_string(port) + ": " + why);
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    bound = ntohs(addr.sin_port);
    return fd;
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string content_type(const std::filesystem::path& p) {
    const std::string ext = lower(p.extension().string());
    if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
    if (ext == ".js" || ext == ".mjs") return "text/javascript";
    if (ext == ".css") return "text/css";
    if (ext == ".json") return "application/json";
    if (ext == ".svg") return "image/svg+xml";
    if (ext == ".png") return "image/png";
    if (ext == ".wasm") return "application/wasm";
    return "application/octet-stream";
}

std::string http_response(int status, std::string_view reason, std::string_view type, std::string_view body) {
    std::ostringstream out;
    out << "HTTP/1.1 " << status << ' ' << reason << "\r\n"
        << "Content-Type: " << type << "\r\n"
        << "Content-Length: " << body.size() << "\r\n"
        << "Connection: close\r\n\r\n"
        << body;
    return out.str();
}

enum Opcode : std::uint8_t { kContinuation = 0x0, kText = 0x1, kBinary = 0x2, kClose = 0x8, kPing = 0x9, kPong = 0xA };

std::string ws_frame(std::uint8_t opcode, std::string_view payload) {
    std::string f;
    f.push_back(static_cast<char>(0x80 | opcode));
    const std::size_t n = payload.size();
    if (n < 126) {
        f.push_back(static_cast<char>(n));
    } else if (n < 65536) {
        f.push_back(126);
        f.push_back(static_cast<char>(n >> 8));
        f.push_back(static_cast<char>(n & 0xff));
    } else {
        f.push_back(127);
        for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xff));
    }
    f.append(payload);
    return f;
}

}  // namespace

std::string websocket_accept(const std::string& key) {
    const std::string joined = key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(joined.data()), joined.size(), digest);
    unsigned char out[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
    const int n = EVP_EncodeBlock(out, digest, SHA_DIGEST_LENGTH);
    return std::string(reinterpret_cast<char*>(out), static_cast<std::size_t>(n));
}

bool FileActuators::forward(const std::string& host, int port, const std::string& line) {
    const int fd = connect_tcp(host, port, 1000);
    if (fd < 0) return false;
    const bool ok = send_all(fd, line + "\n");
    ::shutdown(fd, SHUT_WR);
    ::close(fd);
    return ok;
}

bool FileActuators::log(const std::string& path, const Event& e) {
    std::ofstream out(path, std::ios::app);
    out << format_event(e) << '\n';
    return static_cast<bool>(out);
}

bool FileActuators::led(const std::string& name, const Event& e) {
    std::ofstream out(led_dir_ / (name + ".led"), std::ios::trunc);
    out << "ON " << format_event(e) << '\n';
    return static_cast<bool>(out);
}

bool FileActuators::alarm(const std::string& url, const Event& e) {
    const std::string body = format_event(e);
    if (url.rfind("http://", 0) == 0) {
        const auto path_at = url.find('/', 7);
        const std::string origin = url.substr(0, path_at);
        const std::string path = path_at == std::string::npos ? "/" : url.substr(path_at);
        httplib::Client client(origin);
        client.set_connection_timeout(1, 0);
        client.set_read_timeout(1, 0);
        auto res = client.Post(path, body, "text/plain");
        return res && res->status >= 200 && res->status < 300;
    }
    std::ofstream out(url, std::ios::app);
    out << "ALARM " << body << '\n';
    return static_cast<bool>(out);
}

struct Server::Connection {
    int fd = -1;
    std::mutex write_mutex;
    bool websocket = false;

    bool write_line(const std::string& line) {
        std::lock_guard lock(write_mutex);
        return websocket ? send_all(fd, ws_frame(kText, line)) : send_all(fd, line + "\n");
    }
    bool write_raw(std::string_view bytes) {
        std::lock_guard lock(write_mutex);
        return send_all(fd, bytes);
    }
};

Server::Server(control::Node& node, ServerOptions options) : node_(node), options_(std::move(options)) {}

Server::~Server() { stop(); }

void Server::start() {
    if (running_) return;
    listen_fd_ = listen_on(options_.bind_address, options_.port, bound_port_);
    if (options_.ws_port >= 0) {
        try {
            ws_listen_fd_ = listen_on(options_.bind_address, options_.ws_port, bound_ws_port_);
        } catch (...) {
            ::close(listen_fd_);
            listen_fd_ = -1;
            throw;
        }
    }
    running_ = true;
    acceptors_.emplace_back(&Server::accept_loop, this, listen_fd_, false);
    if (ws_listen_fd_ >= 0) acceptors_.emplace_back(&Server::accept_loop, this, ws_listen_fd_, true);
}

void Server::stop() {
    if (!running_.exchange(false)) return;
    for (int fd : {listen_fd_, ws_listen_fd_}) {
        if (fd >= 0) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : acceptors_) t.join();
    acceptors_.clear();
    // No new connections past this point.
    std::vector<std::thread> threads;
    {
        std::lock_guard lock(threads_mutex_);
        for (auto& weak : connections_) {
            auto conn = weak.lock();
            if (conn && conn->fd >= 0) ::shutdown(conn->fd, SHUT_RDWR);
        }
        threads.swap(threads_);
        connections_.clear();
    }
    for (auto& t : threads) t.join();
    for (int* fd : {&listen_fd_, &ws_listen_fd_}) {
        if (*fd >= 0) ::close(*fd);
        *fd = -1;
    }
}

void Server::track(std::shared_ptr<Connection> conn, bool websocket) {
    std::lock_guard lock(threads_mutex_);
    connections_.push_back(conn);
    if (websocket) threads_.emplace_back(&Server::serve_http, this, std::move(conn));
    else threads_.emplace_back(&Server::serve_tcp, this, std::move(conn));
}

void Server::close_connection(Connection& conn) {
    std::scoped_lock lock(threads_mutex_, conn.write_mutex);
    if (conn.fd >= 0) ::close(conn.fd);
    conn.fd = -1;
}

void Server::accept_loop(int listen_fd, bool websocket) {
    while (running_) {
        const int fd = ::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) {
            if (errno == EINTR || errno == ECONNABORTED) continue;
            break;
        }
        if (!running_) {
            ::close(fd);
            break;
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        timeval tv{5, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
        auto conn = std::make_shared<Connection>();
        conn->fd = fd;
        track(std::move(conn), websocket);
    }
}

std::vector<std::string> Server::handle(control::SessionId session, std::string_view line) {
    std::lock_guard lock(node_mutex_);
    return node_.handle_line(session, line);
}

void Server::serve_tcp(std::shared_ptr<Connection> conn) {
    control::SessionId session;
    {
        std::weak_ptr<Connection> weak = conn;
        std::lock_guard lock(node_mutex_);
        session = node_.open_session([weak](const std::string& line) {
            if (auto c = weak.lock()) c->write_line(line);
        });
    }
    std::string buffer;
    bool discarding = false;
    char chunk[4096];
    while (true) {
        const ssize_t n = ::recv(conn->fd, chunk, sizeof(chunk), 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t start = 0;
        for (std::size_t nl; (nl = buffer.find('\n', start)) != std::string::npos; start = nl + 1) {
            if (discarding) {
                discarding = false;
                continue;
            }
            for (const auto& reply : handle(session, std::string_view(buffer).substr(start, nl - start))) {
                conn->write_line(reply);
            }
        }
        buffer.erase(0, start);
        // An oversized line is answered once and skipped up to its newline.
        if (buffer.size() > control::kMaxLineBytes + 1) {
            if (!discarding) conn->write_line("ERR too-long line exceeds 8192 bytes");
            discarding = true;
            buffer.clear();
        }
    }
    {
        std::lock_guard lock(node_mutex_);
        node_.close_session(session);
    }
    close_connection(*conn);
}

void Server::serve_http(std::shared_ptr<Connection> conn) {
    std::string request;
    char chunk[2048];
    std::size_t header_end = std::string::npos;
    while (header_end == std::string::npos && request.size() < 16384) {
        const ssize_t n = ::recv(conn->fd, chunk, sizeof(chunk), 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        request.append(chunk, static_cast<std::size_t>(n));
        header_end = request.find("\r\n\r\n");
    }
    if (header_end == std::string::npos) {
        conn->write_raw(http_response(400, "Bad Request", "text/plain", "bad request\n"));
        close_connection(*conn);
        return;
    }

    std::istringstream head(request.substr(0, header_end));
    std::string method, target, version;
    head >> method >> target >> version;
    std::map<std::string, std::string> headers;
    std::string line;
    std::getline(head, line);
    while (std::getline(head, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        std::string value = line.substr(colon + 1);
        value.erase(0, value.find_first_not_of(" \t"));
        headers[lower(line.substr(0, colon))] = value;
    }

    if (method != "GET") {
        conn->write_raw(http_response(405, "Method Not Allowed", "text/plain", "GET only\n"));
    } else if (lower(headers["upgrade"]) == "websocket" && headers.count("sec-websocket-key")) {
        conn->websocket = true;
        conn->write_raw("HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                        "Sec-WebSocket-Accept: " + websocket_accept(headers["sec-websocket-key"]) + "\r\n\r\n");
        // Bytes after the handshake belong to the frame stream.
        serve_websocket(conn, request.substr(header_end + 4));
        return;
    } else {
        serve_static(*conn, target);
    }
    close_connection(*conn);
}

void Server::serve_static(Connection& conn, const std::string& target) {
    std::string path = target.substr(0, target.find_first_of("?#"));
    if (path.empty() || path.back() == '/') path += "index.html";
    const bool unsafe = path.find("..") != std::string::npos || path.front() != '/';
    const std::filesystem::path file = options_.static_dir / path.substr(1);
    std::error_code ec;
    if (options_.static_dir.empty() || unsafe || !std::filesystem::is_regular_file(file, ec)) {
        conn.write_raw(http_response(404, "Not Found", "text/plain", "not found\n"));
        return;
    }
    std::ifstream in(file, std::ios::binary);
    std::ostringstream body;
    body << in.rdbuf();
    conn.write_raw(http_response(200, "OK", content_type(file), body.str()));
}

void Server::serve_websocket(std::shared_ptr<Connection> conn, const std::string& pending) {
    control::SessionId session;
    {
        std::weak_ptr<Connection> weak = conn;
        std::lock_guard lock(node_mutex_);
        session = node_.open_session([weak](const std::string& line) {
            if (auto c = weak.lock()) c->write_line(line);
        });
    }
    std::string buffer = pending;
    std::string message;
    char chunk[4096];
    bool open = true;
    auto need = [&](std::size_t bytes) {
        while (buffer.size() < bytes) {
            const ssize_t n = ::recv(conn->fd, chunk, sizeof(chunk), 0);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) return false;
            buffer.append(chunk, static_cast<std::size_t>(n));
        }
        return true;
    };
    while (open && need(2)) {
        const auto b0 = static_cast<std::uint8_t>(buffer[0]);
        const auto b1 = static_cast<std::uint8_t>(buffer[1]);
        const bool fin = b0 & 0x80;
        const std::uint8_t opcode = b0 & 0x0F;
        const bool masked = b1 & 0x80;
        std::uint64_t len = b1 & 0x7F;
        std::size_t header = 2;
        if (len == 126) {
            if (!need(4)) break;
            len = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buffer[2])) << 8) |
                  static_cast<std::uint8_t>(buffer[3]);
            header = 4;
        } else if (len == 127) {
            if (!need(10)) break;
            len = 0;
            for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<std::uint8_t>(buffer[2 + i]);
            header = 10;
        }
        // Client frames must be masked; anything larger than a few lines is refused.
        if (!masked || len > 4 * control::kMaxLineBytes + 64) {
            conn->write_raw(ws_frame(kClose, std::string("\x03\xea", 2)));
            break;
        }
        if (!need(header + 4 + len)) break;
        const std::string mask = buffer.substr(header, 4);
        std::string payload = buffer.substr(header + 4, len);
        for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(payload[i] ^ mask[i % 4]);
        buffer.erase(0, header + 4 + len);

        switch (opcode) {
            case kPing:
                conn->write_raw(ws_frame(kPong, payload));
                continue;
            case kPong:
                continue;
            case kClose:
                conn->write_raw(ws_frame(kClose, payload.substr(0, 2)));
                open = false;
                continue;
            case kText:
            case kBinary:
                message = payload;
                break;
            case kContinuation:
                message += payload;
                break;
            default:
                open = false;
                continue;
        }
        if (!fin) {
            if (message.size() > 4 * control::kMaxLineBytes) open = false;
            continue;
        }
        // A message may carry several protocol lines.
        std::string_view rest = message;
        while (!rest.empty()) {
            const auto nl = rest.find('\n');
            for (const auto& reply : handle(session, rest.substr(0, nl))) conn->write_line(reply);
            if (nl == std::string_view::npos) break;
            rest.remove_prefix(nl + 1);
        }
        message.clear();
    }
    {
        std::lock_guard lock(node_mutex_);
        node_.close_session(session);
    }
    close_connection(*conn);
}

}  // namespace microcep::server
