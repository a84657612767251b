#include <gtest/gtest.h>

#include <random>

#include "microcep/control.hpp"
#include "microcep/errors.hpp"

using namespace microcep;
using namespace microcep::control;

namespace {

using Lines = std::vector<std::string>;

struct Recorder : Actuators {
    Lines forwarded;
    Lines logged;
    Lines leds;
    Lines alarms;
    bool reachable = true;

    bool forward(const std::string& host, int port, const std::string& line) override {
        forwarded.push_back(host + ":" + std::to_string(port) + " " + line);
        return reachable;
    }
    bool log(const std::string& path, const Event& e) override {
        logged.push_back(path + " " + format_event(e));
        return true;
    }
    bool led(const std::string& name, const Event& e) override {
        leds.push_back(name + " " + format_event(e));
        return true;
    }
    bool alarm(const std::string& url, const Event& e) override {
        alarms.push_back(url + " " + format_event(e));
        return true;
    }
};

const char* kFilterRule = "filtered_temperature[_,_](X) :- temperature_event[_,_](X, Celsius) where(X>20).";

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

// Autoencoder whose output equals its input.
tinyol::Model identity_ae(const std::string& id, int dim) {
    tinyol::Model m = tinyol::make_model(id, dim, {{dim, tinyol::Activation::Linear}}, 0, tinyol::Loss::Mse, 1);
    m.layers[0].weights.setIdentity();
    return m;
}

tinyol::Model scalar_model(const std::string& id, double weight) {
    tinyol::Model m = tinyol::make_model(id, 1, {{1, tinyol::Activation::Linear}}, 0, tinyol::Loss::Mse, 1);
    m.layers[0].weights(0, 0) = weight;
    return m;
}

class NodeTest : public ::testing::Test {
protected:
    Recorder act;
    Node node{NodeConfig{}, act};
    SessionId s = node.open_session();

    Lines send(std::string_view line) { return node.handle_line(s, line); }
};

}  // namespace

TEST_F(NodeTest, RuleInjectionAcknowledgesId) {
    EXPECT_EQ(send("RULE r13 warning[_,_](X) :- smoothed_anomaly_score[_,_](X) where(X>1)."), Lines{"OK r13"});
    EXPECT_TRUE(node.engine().has_rule("r13"));
}

TEST_F(NodeTest, EventWithSubscriptionEmits) {
    ASSERT_EQ(send(std::string("RULE f ") + kFilterRule), Lines{"OK f"});
    ASSERT_EQ(send("SUB filtered_temperature"), Lines{"OK"});
    EXPECT_EQ(send("EVENT temperature_event[2000, 2200](24, Celsius)"),
              (Lines{"OK", "EMIT filtered_temperature[2000, 2200](24)"}));
}

TEST_F(NodeTest, NoSubscriptionNoEmit) {
    send(std::string("RULE f ") + kFilterRule);
    EXPECT_EQ(send("EVENT temperature_event[2000, 2200](24, Celsius)"), Lines{"OK"});
}

TEST_F(NodeTest, TimeRegression) {
    EXPECT_EQ(send("TIME 5"), Lines{"OK"});
    const Lines r = send("TIME 4");
    ASSERT_EQ(r.size(), 1u);
    EXPECT_TRUE(starts_with(r[0], "ERR time-regression ")) << r[0];
}

TEST_F(NodeTest, ErrorCodesEchoModuleErrors) {
    EXPECT_TRUE(starts_with(send("RULE r1 foo[_,_](X) :- bar[_,_](X) whre(X>1).").at(0), "ERR parse "));
    send(std::string("RULE f ") + kFilterRule);
    EXPECT_TRUE(starts_with(send(std::string("RULE f ") + kFilterRule).at(0), "ERR dup-rule "));
    EXPECT_TRUE(starts_with(send("UNRULE nope").at(0), "ERR unknown-id "));
    EXPECT_TRUE(starts_with(send("EVENT temperature_event[2000,").at(0), "ERR parse "));
    EXPECT_TRUE(starts_with(send("FROB x").at(0), "ERR bad-verb "));
    EXPECT_TRUE(starts_with(send("").at(0), "ERR bad-verb "));
    EXPECT_TRUE(starts_with(send("TIME abc").at(0), "ERR usage "));
    EXPECT_TRUE(starts_with(send("TIME -1").at(0), "ERR usage "));
    EXPECT_TRUE(starts_with(send("SUB").at(0), "ERR usage "));
    EXPECT_TRUE(starts_with(send("ROUTE x bogus:1").at(0), "ERR usage "));
    EXPECT_TRUE(starts_with(send("ROUTE x forward:host").at(0), "ERR usage "));
    EXPECT_TRUE(starts_with(send("PING extra").at(0), "ERR usage "));
    EXPECT_TRUE(starts_with(send("MODEL INFER ghost 1,2").at(0), "ERR usage "));
}

TEST_F(NodeTest, PingPong) { EXPECT_EQ(send("PING"), Lines{"PONG"}); }

TEST_F(NodeTest, LineLimits) {
    EXPECT_TRUE(starts_with(send(std::string(8193, 'A')).at(0), "ERR too-long "));
    // Exactly at the limit is parsed normally.
    EXPECT_TRUE(starts_with(send(std::string(8192, 'A')).at(0), "ERR bad-verb "));
    EXPECT_TRUE(starts_with(send("PING \xff").at(0), "ERR encoding "));
    EXPECT_TRUE(starts_with(send("EVENT a[0,0](\xc0\xaf)").at(0), "ERR encoding "));
    EXPECT_TRUE(starts_with(send("EVENT a[0,0](\xed\xa0\x80)").at(0), "ERR encoding "));
    EXPECT_EQ(send("PING\r"), Lines{"PONG"});
}

TEST_F(NodeTest, UnruleStopsMatching) {
    send(std::string("RULE f ") + kFilterRule);
    send("SUB *");
    EXPECT_EQ(send("UNRULE f"), Lines{"OK f"});
    EXPECT_EQ(send("EVENT temperature_event[2000, 2200](24, Celsius)"), Lines{"OK"});
}

TEST_F(NodeTest, UnsubscribeAll) {
    send(std::string("RULE f ") + kFilterRule);
    send("SUB filtered_temperature");
    send("SUB other");
    EXPECT_EQ(send("UNSUB *"), Lines{"OK"});
    EXPECT_EQ(send("EVENT temperature_event[2000, 2200](24, Celsius)"), Lines{"OK"});
}

TEST_F(NodeTest, SessionIsolation) {
    Lines delivered_b;
    const SessionId b = node.open_session([&](const std::string& l) { delivered_b.push_back(l); });
    send(std::string("RULE f ") + kFilterRule);
    send("SUB filtered_temperature");
    EXPECT_EQ(send("EVENT temperature_event[0, 0](24, Celsius)").size(), 2u);
    EXPECT_TRUE(delivered_b.empty());

    // B subscribes; an event sent by A reaches B through its callback only.
    EXPECT_EQ(node.handle_line(b, "SUB filtered_temperature"), Lines{"OK"});
    EXPECT_EQ(send("EVENT temperature_event[1, 1](25, Celsius)"),
              (Lines{"OK", "EMIT filtered_temperature[1, 1](25)"}));
    EXPECT_EQ(delivered_b, Lines{"EMIT filtered_temperature[1, 1](25)"});

    node.handle_line(b, "UNSUB filtered_temperature");
    send("EVENT temperature_event[2, 2](26, Celsius)");
    EXPECT_EQ(delivered_b.size(), 1u);
    node.close_session(b);
    send("EVENT temperature_event[3, 3](26, Celsius)");
}

TEST_F(NodeTest, EmitOrderFollowsEngine) {
    send("RULE a x1[_,_](X) :- x[_,_](X).");
    send("RULE b x2[_,_](X) :- x1[_,_](X).");
    send("RULE c x3[_,_](X) :- x[_,_](X) where(X > 0).");
    send("SUB *");
    Engine reference;
    reference.add_rule("a", parse_rule("x1[_,_](X) :- x[_,_](X)."));
    reference.add_rule("b", parse_rule("x2[_,_](X) :- x1[_,_](X)."));
    reference.add_rule("c", parse_rule("x3[_,_](X) :- x[_,_](X) where(X > 0)."));
    Lines expected{"OK"};
    for (const Event& e : reference.push_event(parse_event("x[0,0](1)"))) expected.push_back("EMIT " + format_event(e));
    EXPECT_EQ(send("EVENT x[0,0](1)"), expected);
    EXPECT_EQ(expected.size(), 4u);
}

TEST_F(NodeTest, TimeAdvanceDeliversMaturedNegation) {
    send("RULE n quiet[_,_](X) :- a[_,_](X) nseq b[_,_](Y) [range 2 s].");
    send("SUB quiet");
    EXPECT_EQ(send("EVENT a[0, 0](1)"), Lines{"OK"});
    EXPECT_EQ(send("TIME 2001"), (Lines{"OK", "EMIT quiet[0, 2000](1)"}));
}

TEST(Sink, ParseAndFormat) {
    const Sink f = parse_sink("forward:nodeB:7001");
    EXPECT_EQ(f.kind, Sink::Kind::Forward);
    EXPECT_EQ(f.host, "nodeB");
    EXPECT_EQ(f.port, 7001);
    EXPECT_EQ(format_sink(f), "forward:nodeB:7001");
    EXPECT_EQ(parse_sink("led:warn").kind, Sink::Kind::Led);
    EXPECT_EQ(parse_sink("alarm:http://cloud:80/alarm").target, "http://cloud:80/alarm");
    EXPECT_EQ(parse_sink("log:/tmp/x.log").kind, Sink::Kind::Log);
    EXPECT_EQ(parse_sink("activate:occupancy").kind, Sink::Kind::Activate);
    EXPECT_THROW(parse_sink("led:"), ConfigError);
    EXPECT_THROW(parse_sink("nocolon"), ConfigError);
    EXPECT_THROW(parse_sink("forward:h:0"), ConfigError);
    EXPECT_THROW(parse_sink("forward:h:99999"), ConfigError);
    EXPECT_THROW(parse_sink("teleport:x"), ConfigError);
}

TEST_F(NodeTest, ForwardRouteSendsEventLine) {
    send("RULE r13 warning[_,_](X) :- smoothed_anomaly_score[_,_](X) where(X>1).");
    EXPECT_EQ(send("ROUTE warning forward:nodeB:7001"), Lines{"OK"});
    send("EVENT smoothed_anomaly_score[10, 20](1.5)");
    EXPECT_EQ(act.forwarded, Lines{"nodeB:7001 EVENT warning[10, 20](1.5)"});
}

TEST_F(NodeTest, LedRoute) {
    send("RULE r23 occupied[_,_](X) :- occupancy_score[_,_](X) where(X>0).");
    send("ROUTE occupied led:warn");
    send("EVENT occupancy_score[0, 0](0.7)");
    EXPECT_EQ(act.leds, Lines{"warn occupied[0, 0](0.7)"});
}

TEST_F(NodeTest, SinksRunInRegistrationOrderAndUnroute) {
    send("RULE r x1[_,_](X) :- x[_,_](X).");
    send("ROUTE x1 log:a.log");
    send("ROUTE x1 log:b.log");
    send("EVENT x[0, 0](1)");
    EXPECT_EQ(act.logged, (Lines{"a.log x1[0, 0](1)", "b.log x1[0, 0](1)"}));
    send("UNROUTE x1");
    send("EVENT x[1, 1](1)");
    EXPECT_EQ(act.logged.size(), 2u);
}

TEST_F(NodeTest, NoRouteNoSideEffect) {
    send("RULE r x1[_,_](X) :- x[_,_](X).");
    EXPECT_EQ(send("EVENT x[0, 0](1)"), Lines{"OK"});
    EXPECT_TRUE(act.forwarded.empty() && act.logged.empty() && act.leds.empty() && act.alarms.empty());
    EXPECT_TRUE(node.diagnostics().empty());
}

TEST_F(NodeTest, UnreachableSinkIsDiagnosticOnly) {
    act.reachable = false;
    send("RULE r x1[_,_](X) :- x[_,_](X).");
    send("ROUTE x1 forward:nowhere:9");
    EXPECT_EQ(send("EVENT x[0, 0](1)"), Lines{"OK"});
    ASSERT_EQ(node.diagnostics().size(), 1u);
    EXPECT_NE(node.diagnostics()[0].find("forward:nowhere:9"), std::string::npos);
    EXPECT_EQ(act.forwarded.size(), 1u);  // one attempt, no retry
}

TEST_F(NodeTest, IngestedEventsAreNotRouted) {
    send("ROUTE x log:a.log");
    send("EVENT x[0, 0](1)");
    EXPECT_TRUE(act.logged.empty());
}

TEST_F(NodeTest, ModelInferAutoencoderScore) {
    node.models().add(identity_ae("anomaly", 3));
    send("SUB anomaly_score");
    send("TIME 1000");
    EXPECT_EQ(send("MODEL INFER anomaly 1,2,3"), (Lines{"OK anomaly_score[1000, 1000](0)", "EMIT anomaly_score[1000, 1000](0)"}));
    EXPECT_TRUE(starts_with(send("MODEL INFER anomaly 1,2").at(0), "ERR dimension "));
    EXPECT_TRUE(starts_with(send("MODEL INFER anomaly 1,x,3").at(0), "ERR usage "));
    EXPECT_TRUE(starts_with(send("MODEL TRAIN anomaly 1,2,3").at(0), "ERR usage "));
}

TEST_F(NodeTest, ModelScoreFeedsRules) {
    node.models().add(scalar_model("occupancy", -2.0));
    send("RULE r22 not_occupied[_,_](X) :- occupancy_score[_,_](X) where(X<0),");
    send("SUB not_occupied");
    send("ROUTE not_occupied alarm:http://cloud/alarm");
    send("TIME 5000");
    EXPECT_EQ(send("MODEL INFER occupancy 1.5"),
              (Lines{"OK occupancy_score[5000, 5000](-3)", "EMIT not_occupied[5000, 5000](-3)"}));
    EXPECT_EQ(act.alarms, Lines{"http://cloud/alarm not_occupied[5000, 5000](-3)"});
}

TEST_F(NodeTest, GatedModelRunsOnlyAfterActivation) {
    node.models().add(scalar_model("occupancy", 1.0));
    EXPECT_FALSE(node.is_gated("occupancy"));
    EXPECT_EQ(send("MODEL INFER occupancy 1").at(0), "OK occupancy_score[0, 0](1)");

    send("ROUTE warning activate:occupancy");
    EXPECT_TRUE(node.is_gated("occupancy"));
    send("TIME 1000");
    EXPECT_TRUE(starts_with(send("MODEL INFER occupancy 1").at(0), "ERR gated "));

    // A forwarded warning arrives as a plain EVENT and opens the gate.
    send("EVENT warning[2000, 3000](1.2)");
    send("TIME 3000");
    EXPECT_TRUE(starts_with(send("MODEL INFER occupancy 1").at(0), "OK "));
    send("TIME 13000");
    EXPECT_TRUE(starts_with(send("MODEL INFER occupancy 1").at(0), "OK "));
    send("TIME 13001");
    EXPECT_TRUE(starts_with(send("MODEL INFER occupancy 1").at(0), "ERR gated "));
}

TEST_F(NodeTest, ActivationWindowIsConfigurable) {
    NodeConfig cfg;
    cfg.activation_window_ms = 500;
    Node short_node(cfg, act);
    const SessionId t = short_node.open_session();
    short_node.models().add(scalar_model("m", 1.0));
    short_node.handle_line(t, "ROUTE go activate:m");
    short_node.handle_line(t, "EVENT go[0, 0](1)");
    short_node.handle_line(t, "TIME 500");
    EXPECT_TRUE(starts_with(short_node.handle_line(t, "MODEL INFER m 1").at(0), "OK "));
    short_node.handle_line(t, "TIME 501");
    EXPECT_TRUE(starts_with(short_node.handle_line(t, "MODEL INFER m 1").at(0), "ERR gated "));
}

TEST_F(NodeTest, ActivityObserver) {
    std::vector<std::string> seen;
    node.on_activity([&](const NodeActivity& a) {
        seen.push_back(std::string(activity_kind_name(a.kind)) + " " + a.text);
    });
    send("RULE r x1[_,_](X) :- x[_,_](X).");
    send("ROUTE x1 led:lamp");
    send("EVENT x[0, 0](1)");
    EXPECT_EQ(seen, (Lines{"control RULE r x1[_, _](X) :- x[_, _](X).", "control ROUTE x1 led:lamp",
                           "ingested x[0, 0](1)", "emitted x1[0, 0](1)", "routed led:lamp x1[0, 0](1)"}));
}

TEST(LoadText, RulesAndRoutes) {
    Recorder act;
    Node node(NodeConfig{}, act);
    load_rules_text(node, "% node 2\n\nr22 not_occupied[_,_](X) :- occupancy_score[_,_](X) where(X<0).\n"
                          "r23 occupied[_,_](X) :- occupancy_score[_,_](X) where(X>0).\n");
    EXPECT_TRUE(node.engine().has_rule("r22"));
    EXPECT_TRUE(node.engine().has_rule("r23"));
    load_routes_text(node, "occupied led:warn  % lamp\nnot_occupied alarm:http://x/y\n");
    const SessionId s = node.open_session();
    node.handle_line(s, "EVENT occupancy_score[0, 0](1)");
    EXPECT_EQ(act.leds.size(), 1u);
    EXPECT_THROW(load_rules_text(node, "r1 ok[_,_](X) :- a[_,_](X).\nr2 broken :-\n"), ConfigError);
    EXPECT_THROW(load_routes_text(node, "x nowhere\n"), ConfigError);
}

TEST(Utf8, Validation) {
    EXPECT_TRUE(is_valid_utf8(""));
    EXPECT_TRUE(is_valid_utf8("temp 24 \xc2\xb0"
                              "C"));
    EXPECT_TRUE(is_valid_utf8("\xe2\x82\xac \xf0\x9f\x98\x80"));
    EXPECT_FALSE(is_valid_utf8("\x80"));
    EXPECT_FALSE(is_valid_utf8("\xe2\x82"));
    EXPECT_FALSE(is_valid_utf8("\xf4\x90\x80\x80"));
    EXPECT_FALSE(is_valid_utf8("\xf8\x88\x80\x80\x80"));
}

TEST(Fuzz, RandomBytesNeverEmitOrCrash) {
    Recorder act;
    Node node(NodeConfig{}, act);
    const SessionId s = node.open_session();
    std::mt19937_64 rng(77);
    const std::vector<std::string> seeds = {
        "RULE r x1[_,_](X) :- x[_,_](X).", "EVENT x[0, 0](1)", "TIME 100", "SUB *",
        "ROUTE x1 log:a", "MODEL INFER m 1,2", "UNRULE r", "PING",
    };
    std::size_t ok_lines = 0;
    for (int i = 0; i < 20000; ++i) {
        std::string line;
        if (i % 2 == 0) {
            line.resize(rng() % 64);
            for (char& c : line) {
                do c = static_cast<char>(rng() & 0xff);
                while (c == '\n');
            }
        } else {
            line = seeds[rng() % seeds.size()];
            const int flips = 1 + static_cast<int>(rng() % 4);
            for (int f = 0; f < flips && !line.empty(); ++f) {
                char c;
                do c = static_cast<char>(rng() & 0xff);
                while (c == '\n');
                line[rng() % line.size()] = c;
            }
        }
        const Lines r = node.handle_line(s, line);
        ASSERT_FALSE(r.empty());
        for (const std::string& l : r) {
            ASSERT_TRUE(starts_with(l, "ERR ") || starts_with(l, "OK") || l == "PONG" || starts_with(l, "EMIT "))
                << l;
            ASSERT_EQ(l.find('\n'), std::string::npos);
        }
        if (starts_with(r[0], "OK")) ++ok_lines;
    }
    EXPECT_GT(ok_lines, 0u);
}
