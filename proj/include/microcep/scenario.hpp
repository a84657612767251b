#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "microcep/event.hpp"
#include "microcep/tinyol.hpp"

namespace microcep::scenario {

struct Episode {
    int start_s = 0;
    int end_s = 0;  // exclusive
};

struct Presence {
    int start_s = 0;
    int end_s = 0;
    bool present = false;
};

struct RuleInjection {
    int at_s = 0;
    std::string rule_id;
    std::string rule_text;
};

struct ScenarioConfig {
    std::uint64_t seed = 7;
    int duration_s = 300;
    std::vector<Episode> anomaly_episodes;
    std::vector<Presence> occupancy_schedule;
    std::vector<RuleInjection> rule_injections;

    double warning_threshold = 1.0;
    double temperature_threshold = 30.0;
    double occupancy_boundary = 0.0;
    TimeMs smoothing_ms = 10000;
    TimeMs backup_window_ms = 1000;
    TimeMs activation_window_ms = 10000;

    // Signal synthesis.
    double vibration_hz = 25.0;
    double vibration_noise = 0.4;
    double anomaly_gain = 3.0;
    double temperature_cooled = 25.0;
    double temperature_uncooled = 35.0;
    double temperature_rate = 0.05;  // 1/s

    // Pre-trained model files; when empty the built-in pretraining is run.
    std::filesystem::path anomaly_model;
    std::filesystem::path occupancy_model;

    // On-site fine-tuning of the anomaly autoencoder before the run.
    int fine_tune_steps = 600;
    double fine_tune_rate = 0.01;
};

// Two anomaly episodes, a worker only during the first, the backup rule
// injected after the second alarm.
ScenarioConfig default_config();

// Throws ConfigError.
void validate(const ScenarioConfig& cfg);

// JSON document; absent keys keep their defaults. Relative model paths are
// resolved against `base_dir`. Throws ConfigError.
ScenarioConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ScenarioConfig load_config_file(const std::filesystem::path& path);

// Node rules with the configured thresholds and windows.
std::string smoothing_rule(const ScenarioConfig& cfg);
std::string warning_rule(const ScenarioConfig& cfg);
std::string not_occupied_rule(const ScenarioConfig& cfg);
std::string occupied_rule(const ScenarioConfig& cfg);
std::string backup_rule(const ScenarioConfig& cfg);

inline constexpr int kVibrationSamples = 16;
inline constexpr double kSampleRateHz = 200.0;
inline constexpr int kOccupancyFeatures = 4;

bool in_anomaly(const ScenarioConfig& cfg, TimeMs t_ms);
bool worker_present(const ScenarioConfig& cfg, TimeMs t_ms);

// One accelerometer window: sinusoid with random phase plus noise, the
// whole window scaled by anomaly_gain inside an episode.
tinyol::Vector vibration_window(std::uint64_t seed, TimeMs t_ms, double hz, double noise, double gain);

// Camera features; clustered near +1 when a worker is present, -1 otherwise.
tinyol::Vector occupancy_features(std::uint64_t seed, TimeMs t_ms, bool present);

// First-order step of length dt_s toward `setpoint`.
double temperature_step(double temperature, double setpoint, double rate, double dt_s);

struct Signals {
    tinyol::Vector vibration;
    tinyol::Vector occupancy;
    double temperature = 0.0;
};

// Stateful generator over the scenario timeline. Temperature integrates in
// 1 s steps and depends on whether backup cooling is running.
class SignalGenerator {
public:
    explicit SignalGenerator(const ScenarioConfig& cfg);

    // Signals at t_ms. Calls must be non-decreasing in time and within
    // [0, duration). Throws OutOfRange.
    Signals at(TimeMs t_ms, bool backup_active);

private:
    const ScenarioConfig& cfg_;
    TimeMs last_ms_ = 0;
    double temperature_;
};

struct TraceEntry {
    TimeMs t_ms = 0;
    std::string node;
    std::string kind;  // ingested | emitted | routed | model | control
    std::string text;
};

using Series = std::vector<std::pair<TimeMs, double>>;

struct FineTuneReport {
    int steps = 0;
    double first_loss_mean = 0.0;  // first 50 steps
    double last_loss_mean = 0.0;   // last 50 steps
};

struct ScenarioResult {
    std::vector<TraceEntry> trace;
    Series anomaly;
    Series smoothed;
    Series warning;
    Series occupancy;
    Series temperature;
    FineTuneReport fine_tune;
    std::vector<std::string> diagnostics;
};

// Deterministic two-node run. Throws ConfigError.
ScenarioResult run_scenario(const ScenarioConfig& cfg);

// trace.jsonl and series_{anomaly,smoothed,warning,occupancy,temperature}.csv.
void write_outputs(const ScenarioResult& result, const std::filesystem::path& out_dir);
std::string trace_jsonl(const std::vector<TraceEntry>& trace);
std::string series_csv(const Series& series);

// Built-in pretraining of the shipped models.
inline constexpr std::uint64_t kPretrainSeed = 20211;
inline constexpr double kPretrainHz = 22.0;

tinyol::Model pretrain_anomaly_model(std::uint64_t seed = kPretrainSeed);
tinyol::Model pretrain_occupancy_model(std::uint64_t seed = kPretrainSeed);

// Unsupervised fine-tuning on normal-phase windows of the deployment
// signal, with the reconstruction as target.
FineTuneReport fine_tune_anomaly_model(tinyol::Model& model, const ScenarioConfig& cfg);

}  // namespace microcep::scenario
