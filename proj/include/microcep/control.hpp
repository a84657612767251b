#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "microcep/engine.hpp"
#include "microcep/event.hpp"
#include "microcep/tinyol.hpp"

namespace microcep::control {

inline constexpr std::size_t kMaxLineBytes = 8192;

struct Sink {
    enum class Kind { Forward, Log, Led, Alarm, Activate };
    Kind kind = Kind::Log;
    std::string target;  // path, led name, alarm url or model id
    std::string host;    // forward only
    int port = 0;        // forward only

    friend bool operator==(const Sink&, const Sink&) = default;
};

// `forward:<host>:<port>` | `log:<path>` | `led:<name>` | `alarm:<url>` | `activate:<model-id>`.
// Throws ConfigError.
Sink parse_sink(std::string_view spec);
std::string format_sink(const Sink& sink);

// Side effects of routes. Implementations must not throw for unreachable
// targets; they return false and the node records a diagnostic.
class Actuators {
public:
    virtual ~Actuators() = default;
    virtual bool forward(const std::string& host, int port, const std::string& line) = 0;
    virtual bool log(const std::string& path, const Event& e) = 0;
    virtual bool led(const std::string& name, const Event& e) = 0;
    virtual bool alarm(const std::string& url, const Event& e) = 0;
};

// Discards everything.
class NullActuators : public Actuators {
public:
    bool forward(const std::string&, int, const std::string&) override { return true; }
    bool log(const std::string&, const Event&) override { return true; }
    bool led(const std::string&, const Event&) override { return true; }
    bool alarm(const std::string&, const Event&) override { return true; }
};

struct NodeConfig {
    std::string name = "node";
    EngineConfig engine;
    // A gated model may run for this long after its activating event.
    TimeMs activation_window_ms = 10000;
};

// What a node did, reported as it happens.
struct NodeActivity {
    enum class Kind { Ingested, Emitted, Routed, Model, Control };
    Kind kind;
    std::string text;
};

std::string_view activity_kind_name(NodeActivity::Kind kind);

using SessionId = std::uint64_t;

// One CEP node: engine, routing table, hosted models and client sessions.
// Not thread-safe; the server serialises calls.
class Node {
public:
    using Deliver = std::function<void(const std::string& line)>;

    Node(NodeConfig config, Actuators& actuators);

    // `deliver` receives EMIT lines caused by other sessions' commands.
    SessionId open_session(Deliver deliver = {});
    void close_session(SessionId id);

    // Handles one protocol line and returns the reply for the calling
    // session: OK/ERR/PONG first, then its EMIT lines in emission order.
    std::vector<std::string> handle_line(SessionId session, std::string_view line);

    Engine& engine() noexcept { return engine_; }
    tinyol::ModelPool& models() noexcept { return models_; }
    const NodeConfig& config() const noexcept { return config_; }

    bool is_gated(const std::string& model_id) const;
    bool is_active(const std::string& model_id) const;

    const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }
    void on_activity(std::function<void(const NodeActivity&)> observer) { observer_ = std::move(observer); }

private:
    struct Session {
        std::set<std::string> subscriptions;
        Deliver deliver;
    };

    using Reply = std::vector<std::string>;

    void dispatch(const std::vector<Event>& produced, SessionId caller, Reply& reply);
    void publish(const Event& e, SessionId caller, Reply& reply);
    void apply_activation(const Event& e);
    void run_sinks(const Event& e);
    void note(NodeActivity::Kind kind, std::string text);

    Reply cmd_rule(std::string_view args);
    Reply cmd_unrule(std::string_view args);
    Reply cmd_event(SessionId session, std::string_view args);
    Reply cmd_sub(SessionId session, std::string_view args, bool add);
    Reply cmd_route(std::string_view args);
    Reply cmd_unroute(std::string_view args);
    Reply cmd_time(SessionId session, std::string_view args);
    Reply cmd_model(SessionId session, std::string_view args);

    NodeConfig config_;
    Actuators& actuators_;
    Engine engine_;
    tinyol::ModelPool models_;
    std::map<std::string, std::vector<Sink>> routes_;
    std::map<std::string, TimeMs> activations_;
    std::map<SessionId, Session> sessions_;
    SessionId next_session_ = 1;
    std::vector<std::string> diagnostics_;
    std::function<void(const NodeActivity&)> observer_;
};

// Loads `<id> <rule-text>` lines (blank lines and `%` comments skipped)
// through the node. Throws ConfigError naming the failing line.
void load_rules_text(Node& node, std::string_view text);
// Loads `<event-name> <sink-spec>` lines.
void load_routes_text(Node& node, std::string_view text);

bool is_valid_utf8(std::string_view bytes) noexcept;

}  // namespace microcep::control
