#include "microcep/scenario.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "microcep/control.hpp"
#include "microcep/errors.hpp"

namespace microcep::scenario {

namespace {

using json = nlohmann::ordered_json;

std::string window_text(TimeMs ms) {
    if (ms % 1000 == 0) return std::to_string(ms / 1000) + " s";
    return std::to_string(ms) + " ms";
}

// Independent stream per (seed, time, purpose).
std::mt19937_64 stream_rng(std::uint64_t seed, TimeMs t_ms, std::uint32_t tag) {
    const auto t = static_cast<std::uint64_t>(t_ms);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(t >> 32), tag};
    return std::mt19937_64(seq);
}

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename Spans>
void check_spans(const Spans& spans, int duration_s, const char* what) {
    int previous_end = 0;
    for (const auto& s : spans) {
        if (s.start_s < 0 || s.end_s > duration_s || s.start_s >= s.end_s) {
            throw ConfigError(std::string(what) + " [" + std::to_string(s.start_s) + ", " + std::to_string(s.end_s) +
                              ") must be non-empty and within the duration");
        }
        if (s.start_s < previous_end) throw ConfigError(std::string(what) + " entries overlap or are out of order");
        previous_end = s.end_s;
    }
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
    if (to <= from) return 0.0;
    double sum = 0.0;
    for (std::size_t i = from; i < to; ++i) sum += v[i];
    return sum / static_cast<double>(to - from);
}

}  // namespace

ScenarioConfig default_config() {
    ScenarioConfig cfg;
    cfg.anomaly_episodes = {{60, 120}, {180, 280}};
    cfg.occupancy_schedule = {{0, 150, true}, {150, 300, false}};
    cfg.rule_injections = {{215, "r25", backup_rule(cfg)}};
    return cfg;
}

void validate(const ScenarioConfig& cfg) {
    if (cfg.duration_s <= 0) throw ConfigError("duration_s must be positive");
    check_spans(cfg.anomaly_episodes, cfg.duration_s, "anomaly episode");
    check_spans(cfg.occupancy_schedule, cfg.duration_s, "occupancy interval");
    for (const auto& inj : cfg.rule_injections) {
        if (inj.at_s < 0 || inj.at_s >= cfg.duration_s) throw ConfigError("rule injection outside the duration");
        if (!is_identifier(inj.rule_id)) throw ConfigError("rule injection id must be an identifier");
        if (inj.rule_text.empty()) throw ConfigError("rule injection text is empty");
    }
    for (double v : {cfg.warning_threshold, cfg.temperature_threshold, cfg.occupancy_boundary, cfg.vibration_hz,
                     cfg.vibration_noise, cfg.anomaly_gain, cfg.temperature_cooled, cfg.temperature_uncooled,
                     cfg.temperature_rate, cfg.fine_tune_rate}) {
        if (!std::isfinite(v)) throw ConfigError("numeric parameters must be finite");
    }
    if (cfg.smoothing_ms <= 0 || cfg.backup_window_ms <= 0 || cfg.activation_window_ms < 0) {
        throw ConfigError("windows must be positive");
    }
    if (cfg.vibration_hz <= 0 || cfg.vibration_noise < 0 || cfg.anomaly_gain <= 0 || cfg.temperature_rate < 0) {
        throw ConfigError("signal parameters out of range");
    }
    if (cfg.fine_tune_steps < 0 || cfg.fine_tune_rate < 0) throw ConfigError("fine_tune parameters out of range");
}

ScenarioConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("scenario config must be an object");

    ScenarioConfig cfg = default_config();
    bool injections_given = false;
    auto path_of = [&](const json& v) {
        std::filesystem::path p = v.get<std::string>();
        return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    try {
        for (const auto& [key, v] : doc.items()) {
            if (key == "seed") cfg.seed = v.get<std::uint64_t>();
            else if (key == "duration_s") cfg.duration_s = v.get<int>();
            else if (key == "anomaly_episodes") {
                cfg.anomaly_episodes.clear();
                for (const auto& e : v) cfg.anomaly_episodes.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
            } else if (key == "occupancy_schedule") {
                cfg.occupancy_schedule.clear();
                for (const auto& e : v) {
                    cfg.occupancy_schedule.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<bool>()});
                }
            } else if (key == "rule_injections") {
                injections_given = true;
                cfg.rule_injections.clear();
                for (const auto& e : v) {
                    cfg.rule_injections.push_back(
                        {e.at("at_s").get<int>(), e.at("rule_id").get<std::string>(), e.at("rule_text").get<std::string>()});
                }
            } else if (key == "thresholds") {
                for (const auto& [k, t] : v.items()) {
                    if (k == "warning") cfg.warning_threshold = t.get<double>();
                    else if (k == "temperature") cfg.temperature_threshold = t.get<double>();
                    else if (k == "occupancy_boundary") cfg.occupancy_boundary = t.get<double>();
                    else throw ConfigError("unknown key thresholds." + k);
                }
            } else if (key == "smoothing_ms") cfg.smoothing_ms = v.get<TimeMs>();
            else if (key == "backup_window_ms") cfg.backup_window_ms = v.get<TimeMs>();
            else if (key == "activation_window_ms") cfg.activation_window_ms = v.get<TimeMs>();
            else if (key == "signals") {
                for (const auto& [k, s] : v.items()) {
                    if (k == "vibration_hz") cfg.vibration_hz = s.get<double>();
                    else if (k == "vibration_noise") cfg.vibration_noise = s.get<double>();
                    else if (k == "anomaly_gain") cfg.anomaly_gain = s.get<double>();
                    else if (k == "temperature_cooled") cfg.temperature_cooled = s.get<double>();
                    else if (k == "temperature_uncooled") cfg.temperature_uncooled = s.get<double>();
                    else if (k == "temperature_rate") cfg.temperature_rate = s.get<double>();
                    else throw ConfigError("unknown key signals." + k);
                }
            } else if (key == "models") {
                for (const auto& [k, m] : v.items()) {
                    if (k == "anomaly") cfg.anomaly_model = path_of(m);
                    else if (k == "occupancy") cfg.occupancy_model = path_of(m);
                    else throw ConfigError("unknown key models." + k);
                }
            } else if (key == "fine_tune") {
                for (const auto& [k, f] : v.items()) {
                    if (k == "steps") cfg.fine_tune_steps = f.get<int>();
                    else if (k == "learning_rate") cfg.fine_tune_rate = f.get<double>();
                    else throw ConfigError("unknown key fine_tune." + k);
                }
            } else {
                throw ConfigError("unknown key " + key);
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scenario config has a malformed value: ") + e.what());
    }
    // The default injection follows the configured thresholds.
    if (!injections_given) cfg.rule_injections = {{215, "r25", backup_rule(cfg)}};
    validate(cfg);
    return cfg;
}

ScenarioConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read scenario config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), path.parent_path());
}

std::string smoothing_rule(const ScenarioConfig& cfg) {
    return "smoothed_anomaly_score[_,_](Y) :- lambda { anomaly_score(X), *, Y := avg(X) } [range " +
           window_text(cfg.smoothing_ms) + "].";
}

std::string warning_rule(const ScenarioConfig& cfg) {
    return "warning[_,_](X) :- smoothed_anomaly_score[_,_](X) where(X>" + format_number(cfg.warning_threshold) + ").";
}

std::string not_occupied_rule(const ScenarioConfig& cfg) {
    return "not_occupied[_,_](X) :- occupancy_score[_,_](X) where(X<" + format_number(cfg.occupancy_boundary) + ").";
}

std::string occupied_rule(const ScenarioConfig& cfg) {
    return "occupied[_,_](X) :- occupancy_score[_,_](X) where(X>" + format_number(cfg.occupancy_boundary) + ").";
}

std::string backup_rule(const ScenarioConfig& cfg) {
    return "backup[_,_](Y) :- temperature[_,_](Y) and not_occupied[_,_](X) where(Y>" +
           format_number(cfg.temperature_threshold) + ") [range " + window_text(cfg.backup_window_ms) + "].";
}

bool in_anomaly(const ScenarioConfig& cfg, TimeMs t_ms) {
    for (const auto& e : cfg.anomaly_episodes) {
        if (t_ms >= TimeMs{e.start_s} * 1000 && t_ms < TimeMs{e.end_s} * 1000) return true;
    }
    return false;
}

bool worker_present(const ScenarioConfig& cfg, TimeMs t_ms) {
    for (const auto& p : cfg.occupancy_schedule) {
        if (t_ms >= TimeMs{p.start_s} * 1000 && t_ms < TimeMs{p.end_s} * 1000) return p.present;
    }
    return false;
}

tinyol::Vector vibration_window(std::uint64_t seed, TimeMs t_ms, double hz, double noise, double gain) {
    auto rng = stream_rng(seed, t_ms, 0x76);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    std::normal_distribution<double> jitter(0.0, 1.0);
    tinyol::Vector x(kVibrationSamples);
    for (int k = 0; k < kVibrationSamples; ++k) {
        const double t = k / kSampleRateHz;
        x(k) = gain * (std::sin(2.0 * std::numbers::pi * hz * t + phase) + noise * jitter(rng));
    }
    return x;
}

tinyol::Vector occupancy_features(std::uint64_t seed, TimeMs t_ms, bool present) {
    auto rng = stream_rng(seed, t_ms, 0x0c);
    std::normal_distribution<double> jitter(0.0, 0.3);
    tinyol::Vector x(kOccupancyFeatures);
    for (int k = 0; k < kOccupancyFeatures; ++k) x(k) = (present ? 1.0 : -1.0) + jitter(rng);
    return x;
}

double temperature_step(double temperature, double setpoint, double rate, double dt_s) {
    return setpoint + (temperature - setpoint) * std::exp(-rate * dt_s);
}

SignalGenerator::SignalGenerator(const ScenarioConfig& cfg) : cfg_(cfg), temperature_(cfg.temperature_cooled) {}

Signals SignalGenerator::at(TimeMs t_ms, bool backup_active) {
    if (t_ms < 0 || t_ms >= TimeMs{cfg_.duration_s} * 1000) {
        throw OutOfRange("t_ms " + std::to_string(t_ms) + " outside the scenario duration");
    }
    if (t_ms < last_ms_) throw OutOfRange("signal time went backwards");
    while (last_ms_ < t_ms) {
        const TimeMs dt = std::min<TimeMs>(1000, t_ms - last_ms_);
        const bool hot = in_anomaly(cfg_, last_ms_) && !backup_active;
        temperature_ = temperature_step(temperature_, hot ? cfg_.temperature_uncooled : cfg_.temperature_cooled,
                                        cfg_.temperature_rate, static_cast<double>(dt) / 1000.0);
        last_ms_ += dt;
    }
    const double gain = in_anomaly(cfg_, t_ms) ? cfg_.anomaly_gain : 1.0;
    return Signals{vibration_window(cfg_.seed, t_ms, cfg_.vibration_hz, cfg_.vibration_noise, gain),
                   occupancy_features(cfg_.seed, t_ms, worker_present(cfg_, t_ms)), temperature_};
}

tinyol::Model pretrain_anomaly_model(std::uint64_t seed) {
    using tinyol::Activation;
    tinyol::Model m = tinyol::make_model("anomaly", kVibrationSamples,
                                         {{4, Activation::Linear}, {kVibrationSamples, Activation::Linear}}, 0,
                                         tinyol::Loss::Mse, seed);
    const ScenarioConfig cfg;
    auto sample = [&](int i) { return vibration_window(seed, i, kPretrainHz, cfg.vibration_noise, 1.0); };

    // Per-sample standardisation from a calibration set.
    constexpr int kCalibration = 2000;
    tinyol::Vector sum = tinyol::Vector::Zero(kVibrationSamples);
    tinyol::Vector sq = tinyol::Vector::Zero(kVibrationSamples);
    for (int i = 0; i < kCalibration; ++i) {
        const tinyol::Vector x = sample(-1 - i);
        sum += x;
        sq += x.cwiseProduct(x);
    }
    m.mean = sum / kCalibration;
    m.std = (sq / kCalibration - m.mean.cwiseProduct(m.mean)).cwiseSqrt();

    tinyol::Trainer tr{0.01, 0};
    tinyol::Metrics met;
    for (int i = 0; i < 20000; ++i) {
        const tinyol::Vector x = sample(i);
        tinyol::train_step(m, tr, met, x, tinyol::preprocess(m, x));
    }
    m.frozen_count = 1;
    tinyol::validate(m);
    return m;
}

tinyol::Model pretrain_occupancy_model(std::uint64_t seed) {
    using tinyol::Activation;
    tinyol::Model m = tinyol::make_model("occupancy", kOccupancyFeatures,
                                         {{8, Activation::Relu}, {1, Activation::Linear}}, 0, tinyol::Loss::Mse, seed);
    std::mt19937_64 rng(seed);
    tinyol::Trainer tr{0.02, 0};
    tinyol::Metrics met;
    for (int i = 0; i < 3000; ++i) {
        const bool present = (rng() & 1) != 0;
        const tinyol::Vector x = occupancy_features(seed, -1 - i, present);
        tinyol::Vector y(1);
        y(0) = present ? 1.0 : -1.0;
        tinyol::train_step(m, tr, met, x, y);
    }
    m.frozen_count = 1;
    tinyol::validate(m);
    return m;
}

FineTuneReport fine_tune_anomaly_model(tinyol::Model& model, const ScenarioConfig& cfg) {
    FineTuneReport report;
    report.steps = cfg.fine_tune_steps;
    if (cfg.fine_tune_steps == 0) return report;
    tinyol::Trainer tr{cfg.fine_tune_rate, 0};
    tinyol::Metrics met;
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg.fine_tune_steps));
    // Field data recorded on the healthy machine before deployment.
    const std::uint64_t field_seed = cfg.seed ^ 0xf1e1dULL;
    for (int i = 0; i < cfg.fine_tune_steps; ++i) {
        const tinyol::Vector x = vibration_window(field_seed, i, cfg.vibration_hz, cfg.vibration_noise, 1.0);
        losses.push_back(tinyol::train_step(model, tr, met, x, tinyol::preprocess(model, x)).loss);
    }
    const std::size_t n = losses.size();
    const std::size_t k = std::min<std::size_t>(50, n);
    report.first_loss_mean = mean_of(losses, 0, k);
    report.last_loss_mean = mean_of(losses, n - k, n);
    return report;
}

namespace {

// Routes resolved inside the simulation: forwards go straight into the
// peer node, LEDs and alarms are recorded.
class SimActuators : public control::Actuators {
public:
    void connect(const std::string& host, control::Node& node) { peers_[host] = {&node, node.open_session()}; }

    bool forward(const std::string& host, int, const std::string& line) override {
        auto it = peers_.find(host);
        if (it == peers_.end()) return false;
        const auto reply = it->second.first->handle_line(it->second.second, line);
        return !reply.empty() && reply.front().rfind("OK", 0) == 0;
    }
    bool log(const std::string&, const Event&) override { return true; }
    bool led(const std::string& name, const Event&) override {
        if (name == "backup_cooling") backup_active = true;
        return true;
    }
    bool alarm(const std::string&, const Event&) override { return true; }

    bool backup_active = false;

private:
    std::map<std::string, std::pair<control::Node*, control::SessionId>> peers_;
};

std::string csv_of(const tinyol::Vector& x) {
    std::string out;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (i > 0) out += ',';
        out += format_number(x(i));
    }
    return out;
}

// Runs a setup command that must succeed.
std::vector<std::string> must(control::Node& node, control::SessionId s, const std::string& line) {
    auto reply = node.handle_line(s, line);
    if (reply.empty() || reply.front().rfind("OK", 0) != 0) {
        throw ConfigError(node.config().name + " rejected '" + line + "': " + (reply.empty() ? "" : reply.front()));
    }
    return reply;
}

// Value of the single argument in `OK name[s, e](v)` or `EMIT name[s, e](v)`.
double literal_value(const std::string& line) {
    const auto space = line.find(' ');
    return parse_event(std::string_view(line).substr(space + 1)).args.at(0).number();
}

bool emits(const std::vector<std::string>& reply, const std::string& name) {
    const std::string prefix = "EMIT " + name + "[";
    for (const auto& l : reply) {
        if (l.rfind(prefix, 0) == 0) return true;
    }
    return false;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& cfg) {
    validate(cfg);
    ScenarioResult result;

    tinyol::Model ae = cfg.anomaly_model.empty() ? pretrain_anomaly_model() : tinyol::load_model_file(cfg.anomaly_model);
    tinyol::Model occ =
        cfg.occupancy_model.empty() ? pretrain_occupancy_model() : tinyol::load_model_file(cfg.occupancy_model);
    ae.model_id = "anomaly";
    occ.model_id = "occupancy";
    result.fine_tune = fine_tune_anomaly_model(ae, cfg);

    SimActuators actuators;
    control::NodeConfig c1;
    c1.name = "node1";
    c1.activation_window_ms = cfg.activation_window_ms;
    control::NodeConfig c2 = c1;
    c2.name = "node2";
    control::Node node1(c1, actuators);
    control::Node node2(c2, actuators);
    actuators.connect("node2", node2);

    TimeMs now = 0;
    auto observe = [&](const std::string& name) {
        return [&result, &now, name](const control::NodeActivity& a) {
            result.trace.push_back(TraceEntry{now, name, std::string(control::activity_kind_name(a.kind)), a.text});
        };
    };
    node1.on_activity(observe("node1"));
    node2.on_activity(observe("node2"));

    const control::SessionId s1 = node1.open_session();
    const control::SessionId s2 = node2.open_session();
    node1.models().add(std::move(ae));
    node2.models().add(std::move(occ));

    must(node1, s1, "RULE r12 " + smoothing_rule(cfg));
    must(node1, s1, "RULE r13 " + warning_rule(cfg));
    must(node1, s1, "ROUTE warning forward:node2:7002");
    must(node1, s1, "SUB smoothed_anomaly_score");
    must(node1, s1, "SUB warning");

    must(node2, s2, "RULE r22 " + not_occupied_rule(cfg));
    must(node2, s2, "RULE r23 " + occupied_rule(cfg));
    must(node2, s2, "ROUTE warning activate:occupancy");
    must(node2, s2, "ROUTE occupied led:warn");
    must(node2, s2, "ROUTE not_occupied alarm:cloud");
    must(node2, s2, "ROUTE backup led:backup_cooling");

    SignalGenerator signals(cfg);
    for (int sec = 0; sec < cfg.duration_s; ++sec) {
        now = TimeMs{sec} * 1000;
        for (const auto& inj : cfg.rule_injections) {
            if (inj.at_s == sec) must(node2, s2, "RULE " + inj.rule_id + " " + inj.rule_text);
        }
        const Signals sig = signals.at(now, actuators.backup_active);

        must(node1, s1, "TIME " + std::to_string(now));
        const auto r1 = must(node1, s1, "MODEL INFER anomaly " + csv_of(sig.vibration));
        result.anomaly.emplace_back(now, literal_value(r1.front()));
        for (const auto& l : r1) {
            if (l.rfind("EMIT smoothed_anomaly_score[", 0) == 0) result.smoothed.emplace_back(now, literal_value(l));
        }
        result.warning.emplace_back(now, emits(r1, "warning") ? 1.0 : 0.0);

        must(node2, s2, "TIME " + std::to_string(now));
        must(node2, s2, "EVENT temperature[" + std::to_string(now) + ", " + std::to_string(now) + "](" +
                            format_number(sig.temperature) + ")");
        result.temperature.emplace_back(now, sig.temperature);
        const auto r2 = node2.handle_line(s2, "MODEL INFER occupancy " + csv_of(sig.occupancy));
        if (!r2.empty() && r2.front().rfind("OK", 0) == 0) {
            result.occupancy.emplace_back(now, literal_value(r2.front()) > cfg.occupancy_boundary ? 1.0 : 0.0);
        } else if (r2.empty() || r2.front().rfind("ERR gated", 0) != 0) {
            result.diagnostics.push_back("node2: " + (r2.empty() ? std::string("no reply") : r2.front()));
        }
    }
    for (const auto* node : {&node1, &node2}) {
        for (const auto& d : node->diagnostics()) result.diagnostics.push_back(node->config().name + ": " + d);
    }
    return result;
}

std::string trace_jsonl(const std::vector<TraceEntry>& trace) {
    std::string out;
    for (const auto& e : trace) {
        json line;
        line["t_ms"] = e.t_ms;
        line["node"] = e.node;
        line["kind"] = e.kind;
        line["text"] = e.text;
        out += line.dump();
        out += '\n';
    }
    return out;
}

std::string series_csv(const Series& series) {
    std::string out = "t_ms,value\n";
    for (const auto& [t, v] : series) out += std::to_string(t) + "," + format_number(v) + "\n";
    return out;
}

void write_outputs(const ScenarioResult& result, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error("io", "cannot create " + out_dir.string() + ": " + ec.message());
    auto write = [&](const char* name, const std::string& body) {
        std::ofstream out(out_dir / name, std::ios::binary | std::ios::trunc);
        out << body;
        if (!out) throw Error("io", "cannot write " + (out_dir / name).string());
    };
    write("trace.jsonl", trace_jsonl(result.trace));
    write("series_anomaly.csv", series_csv(result.anomaly));
    write("series_smoothed.csv", series_csv(result.smoothed));
    write("series_warning.csv", series_csv(result.warning));
    write("series_occupancy.csv", series_csv(result.occupancy));
    write("series_temperature.csv", series_csv(result.temperature));
}

}  // namespace microcep::scenario
