#include "microcep/control.hpp"

#include <charconv>

#include "microcep/errors.hpp"
#include "microcep/rule.hpp"

namespace microcep::control {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

// Splits off the first space-delimited word.
std::pair<std::string_view, std::string_view> split_word(std::string_view s) {
    s = trim(s);
    const auto sp = s.find_first_of(" \t");
    if (sp == std::string_view::npos) return {s, {}};
    return {s.substr(0, sp), trim(s.substr(sp + 1))};
}

std::string one_line(std::string_view text) {
    std::string out(text);
    for (char& c : out) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return out;
}

std::string err(std::string_view code, std::string_view message) {
    return "ERR " + std::string(code) + " " + one_line(message);
}

class UsageError : public Error {
public:
    explicit UsageError(const std::string& message) : Error("usage", message) {}
};

std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    if (s.empty()) return std::nullopt;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

tinyol::Vector parse_floats(std::string_view csv) {
    std::vector<double> values;
    while (true) {
        const auto comma = csv.find(',');
        const std::string_view item = trim(csv.substr(0, comma));
        double v = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || ec != std::errc() || p != item.data() + item.size()) {
            throw UsageError("expected comma-separated numbers, got '" + std::string(item) + "'");
        }
        values.push_back(v);
        if (comma == std::string_view::npos) break;
        csv.remove_prefix(comma + 1);
    }
    return Eigen::Map<const tinyol::Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

bool is_valid_utf8(std::string_view bytes) noexcept {
    std::size_t i = 0;
    const std::size_t n = bytes.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(bytes[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > n) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(bytes[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        // Overlong forms, surrogates and out-of-range code points.
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
        if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
        i += len;
    }
    return true;
}

Sink parse_sink(std::string_view spec) {
    const auto colon = spec.find(':');
    if (colon == std::string_view::npos) throw ConfigError("sink spec needs '<kind>:<target>': " + std::string(spec));
    const std::string_view kind = spec.substr(0, colon);
    const std::string target(spec.substr(colon + 1));
    if (target.empty()) throw ConfigError("sink spec has an empty target: " + std::string(spec));
    Sink sink;
    sink.target = target;
    if (kind == "forward") {
        const auto last = target.rfind(':');
        if (last == std::string::npos || last == 0) throw ConfigError("forward sink needs host:port");
        const auto port = parse_int(std::string_view(target).substr(last + 1));
        if (!port || *port < 1 || *port > 65535) throw ConfigError("forward sink has an invalid port");
        sink.kind = Sink::Kind::Forward;
        sink.host = target.substr(0, last);
        sink.port = static_cast<int>(*port);
    } else if (kind == "log") {
        sink.kind = Sink::Kind::Log;
    } else if (kind == "led") {
        sink.kind = Sink::Kind::Led;
    } else if (kind == "alarm") {
        sink.kind = Sink::Kind::Alarm;
    } else if (kind == "activate") {
        sink.kind = Sink::Kind::Activate;
    } else {
        throw ConfigError("unknown sink kind '" + std::string(kind) + "'");
    }
    return sink;
}

std::string format_sink(const Sink& sink) {
    switch (sink.kind) {
        case Sink::Kind::Forward: return "forward:" + sink.target;
        case Sink::Kind::Log: return "log:" + sink.target;
        case Sink::Kind::Led: return "led:" + sink.target;
        case Sink::Kind::Alarm: return "alarm:" + sink.target;
        case Sink::Kind::Activate: return "activate:" + sink.target;
    }
    return "?";
}

std::string_view activity_kind_name(NodeActivity::Kind kind) {
    switch (kind) {
        case NodeActivity::Kind::Ingested: return "ingested";
        case NodeActivity::Kind::Emitted: return "emitted";
        case NodeActivity::Kind::Routed: return "routed";
        case NodeActivity::Kind::Model: return "model";
        case NodeActivity::Kind::Control: return "control";
    }
    return "?";
}

Node::Node(NodeConfig config, Actuators& actuators)
    : config_(std::move(config)), actuators_(actuators), engine_(config_.engine) {}

SessionId Node::open_session(Deliver deliver) {
    const SessionId id = next_session_++;
    sessions_.emplace(id, Session{{}, std::move(deliver)});
    return id;
}

void Node::close_session(SessionId id) { sessions_.erase(id); }

bool Node::is_gated(const std::string& model_id) const {
    for (const auto& [name, sinks] : routes_) {
        for (const Sink& s : sinks) {
            if (s.kind == Sink::Kind::Activate && s.target == model_id) return true;
        }
    }
    return false;
}

bool Node::is_active(const std::string& model_id) const {
    if (!is_gated(model_id)) return true;
    auto it = activations_.find(model_id);
    if (it == activations_.end()) return false;
    const TimeMs age = engine_.watermark() - it->second;
    return age <= config_.activation_window_ms;
}

void Node::note(NodeActivity::Kind kind, std::string text) {
    if (observer_) observer_(NodeActivity{kind, std::move(text)});
}

std::vector<std::string> Node::handle_line(SessionId session, std::string_view line) {
    if (line.size() > kMaxLineBytes) return {err("too-long", "line exceeds 8192 bytes")};
    if (!is_valid_utf8(line)) return {err("encoding", "line is not valid UTF-8")};
    if (!sessions_.count(session)) return {err("usage", "unknown session")};
    const auto [verb, args] = split_word(line);
    try {
        if (verb == "PING") {
            if (!args.empty()) throw UsageError("PING takes no arguments");
            return {"PONG"};
        }
        if (verb == "RULE") return cmd_rule(args);
        if (verb == "UNRULE") return cmd_unrule(args);
        if (verb == "EVENT") return cmd_event(session, args);
        if (verb == "SUB") return cmd_sub(session, args, true);
        if (verb == "UNSUB") return cmd_sub(session, args, false);
        if (verb == "ROUTE") return cmd_route(args);
        if (verb == "UNROUTE") return cmd_unroute(args);
        if (verb == "TIME") return cmd_time(session, args);
        if (verb == "MODEL") return cmd_model(session, args);
        return {err("bad-verb", verb.empty() ? std::string("empty line") : "unknown verb " + std::string(verb))};
    } catch (const Error& e) {
        return {err(e.code(), e.what())};
    } catch (const std::exception& e) {
        return {err("internal", e.what())};
    }
}

Node::Reply Node::cmd_rule(std::string_view args) {
    const auto [id, text] = split_word(args);
    if (id.empty() || text.empty()) throw UsageError("RULE <id> <rule-text>");
    if (!is_identifier(id)) throw UsageError("rule id must be an identifier");
    engine_.add_rule(std::string(id), parse_rule(text));
    note(NodeActivity::Kind::Control, "RULE " + std::string(id) + " " + format_rule(engine_.rule(std::string(id))));
    return {"OK " + std::string(id)};
}

Node::Reply Node::cmd_unrule(std::string_view args) {
    const auto [id, rest] = split_word(args);
    if (id.empty() || !rest.empty()) throw UsageError("UNRULE <id>");
    engine_.remove_rule(std::string(id));
    note(NodeActivity::Kind::Control, "UNRULE " + std::string(id));
    return {"OK " + std::string(id)};
}

Node::Reply Node::cmd_event(SessionId session, std::string_view args) {
    if (args.empty()) throw UsageError("EVENT <event-literal>");
    Event e = parse_event(args);
    note(NodeActivity::Kind::Ingested, format_event(e));
    apply_activation(e);
    Reply reply{"OK"};
    dispatch(engine_.push_event(std::move(e)), session, reply);
    return reply;
}

Node::Reply Node::cmd_sub(SessionId session, std::string_view args, bool add) {
    const auto [name, rest] = split_word(args);
    if (name.empty() || !rest.empty() || (name != "*" && !is_identifier(name))) {
        throw UsageError(add ? "SUB <event-name|*>" : "UNSUB <event-name|*>");
    }
    auto& subs = sessions_.at(session).subscriptions;
    if (add) subs.insert(std::string(name));
    else if (name == "*") subs.clear();
    else subs.erase(std::string(name));
    return {"OK"};
}

Node::Reply Node::cmd_route(std::string_view args) {
    const auto [name, spec] = split_word(args);
    if (name.empty() || spec.empty() || !is_identifier(name)) throw UsageError("ROUTE <event-name> <sink-spec>");
    Sink sink;
    try {
        sink = parse_sink(spec);
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    routes_[std::string(name)].push_back(sink);
    note(NodeActivity::Kind::Control, "ROUTE " + std::string(name) + " " + format_sink(sink));
    return {"OK"};
}

Node::Reply Node::cmd_unroute(std::string_view args) {
    const auto [name, rest] = split_word(args);
    if (name.empty() || !rest.empty()) throw UsageError("UNROUTE <event-name>");
    routes_.erase(std::string(name));
    return {"OK"};
}

Node::Reply Node::cmd_time(SessionId session, std::string_view args) {
    const auto t = parse_int(args);
    if (!t || *t < 0) throw UsageError("TIME <non-negative integer ms>");
    Reply reply{"OK"};
    dispatch(engine_.advance_time(*t), session, reply);
    return reply;
}

Node::Reply Node::cmd_model(SessionId session, std::string_view args) {
    const auto [sub, rest] = split_word(args);
    const auto [model_id, csv] = split_word(rest);
    if (sub != "INFER" || model_id.empty() || csv.empty()) throw UsageError("MODEL INFER <model-id> <floats>");
    const std::string id(model_id);
    if (!models_.contains(id)) throw UsageError("no hosted model " + id);
    if (!is_active(id)) throw Error("gated", "model " + id + " has not been activated in the last " +
                                                 std::to_string(config_.activation_window_ms) + " ms");
    const tinyol::Model& model = models_.get(id).model;
    const tinyol::Vector x = parse_floats(csv);

    // Autoencoders report their reconstruction error, other models their raw outputs.
    Event e;
    e.name = id + "_score";
    e.start_ms = e.end_ms = engine_.watermark();
    if (model.loss == tinyol::Loss::Mse && model.output_dim() == model.input_dim() && model.input_dim() > 1) {
        e.args.emplace_back(tinyol::anomaly_score(model, x));
    } else {
        const tinyol::Vector y = tinyol::infer(model, x);
        for (Eigen::Index i = 0; i < y.size(); ++i) e.args.emplace_back(y(i));
    }
    note(NodeActivity::Kind::Model, format_event(e));
    Reply reply{"OK " + format_event(e)};
    apply_activation(e);
    publish(e, session, reply);
    dispatch(engine_.push_event(std::move(e)), session, reply);
    return reply;
}

void Node::apply_activation(const Event& e) {
    auto it = routes_.find(e.name);
    if (it == routes_.end()) return;
    for (const Sink& s : it->second) {
        if (s.kind != Sink::Kind::Activate) continue;
        auto& at = activations_[s.target];
        at = std::max(at, e.end_ms);
        note(NodeActivity::Kind::Routed, format_sink(s) + " " + format_event(e));
    }
}

void Node::run_sinks(const Event& e) {
    auto it = routes_.find(e.name);
    if (it == routes_.end()) return;
    const std::string literal = format_event(e);
    for (const Sink& s : it->second) {
        bool ok = true;
        switch (s.kind) {
            case Sink::Kind::Forward: ok = actuators_.forward(s.host, s.port, "EVENT " + literal); break;
            case Sink::Kind::Log: ok = actuators_.log(s.target, e); break;
            case Sink::Kind::Led: ok = actuators_.led(s.target, e); break;
            case Sink::Kind::Alarm: ok = actuators_.alarm(s.target, e); break;
            case Sink::Kind::Activate: continue;  // handled on entry
        }
        note(NodeActivity::Kind::Routed, format_sink(s) + " " + literal);
        if (!ok && diagnostics_.size() < 10000) diagnostics_.push_back("sink unreachable: " + format_sink(s) + " for " + literal);
    }
}

void Node::publish(const Event& e, SessionId caller, Reply& reply) {
    const std::string line = "EMIT " + format_event(e);
    for (auto& [id, session] : sessions_) {
        if (!session.subscriptions.count("*") && !session.subscriptions.count(e.name)) continue;
        if (id == caller) reply.push_back(line);
        else if (session.deliver) session.deliver(line);
    }
    run_sinks(e);
}

void Node::dispatch(const std::vector<Event>& produced, SessionId caller, Reply& reply) {
    for (const Event& e : produced) {
        note(NodeActivity::Kind::Emitted, format_event(e));
        apply_activation(e);
        publish(e, caller, reply);
    }
    for (const Diagnostic& d : engine_.diagnostics()) {
        if (diagnostics_.size() < 10000) diagnostics_.push_back(d.rule_id + ": " + d.detail);
    }
    engine_.clear_diagnostics();
}

namespace {

template <typename Fn>
void for_each_config_line(std::string_view text, Fn fn) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        const auto comment = line.find('%');
        line = trim(line.substr(0, comment == std::string_view::npos ? line.size() : comment));
        if (!line.empty()) fn(line_no, line);
    }
}

void apply_config_line(Node& node, SessionId session, std::size_t line_no, const std::string& command) {
    const auto reply = node.handle_line(session, command);
    if (reply.empty() || reply.front().rfind("OK", 0) != 0) {
        throw ConfigError("line " + std::to_string(line_no) + ": " + (reply.empty() ? "no reply" : reply.front()));
    }
}

}  // namespace

void load_rules_text(Node& node, std::string_view text) {
    const SessionId session = node.open_session();
    try {
        for_each_config_line(text, [&](std::size_t n, std::string_view line) {
            apply_config_line(node, session, n, "RULE " + std::string(line));
        });
    } catch (...) {
        node.close_session(session);
        throw;
    }
    node.close_session(session);
}

void load_routes_text(Node& node, std::string_view text) {
    const SessionId session = node.open_session();
    try {
        for_each_config_line(text, [&](std::size_t n, std::string_view line) {
            apply_config_line(node, session, n, "ROUTE " + std::string(line));
        });
    } catch (...) {
        node.close_session(session);
        throw;
    }
    node.close_session(session);
}

}  // namespace microcep::control
