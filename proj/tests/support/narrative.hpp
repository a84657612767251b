#pragma once

// Event-sequence checks of the two-node safety run against its config.

#include <string>
#include <vector>

#include "microcep/scenario.hpp"

namespace microcep::narrative {

struct Emission {
    TimeMs t_ms = 0;
    std::string node;
    Event event;
};

// Emitted (or routed with the given sink prefix) events named `name`.
std::vector<Emission> emitted(const scenario::ScenarioResult& r, const std::string& name);
std::vector<Emission> routed(const scenario::ScenarioResult& r, const std::string& sink, const std::string& name);

// Maximal runs of emission times with gaps no larger than `gap_ms`.
std::vector<std::pair<TimeMs, TimeMs>> runs(const std::vector<Emission>& es, TimeMs gap_ms);

// Failed checks, one message each; empty when the trace tells the story.
std::vector<std::string> check_golden(const scenario::ScenarioConfig& cfg, const scenario::ScenarioResult& r);

// Backups only after injection; occupancy scores only within the activation
// window after a warning reached node2.
std::vector<std::string> check_causality(const scenario::ScenarioConfig& cfg, const scenario::ScenarioResult& r);

struct ScoreMeans {
    double normal = 0.0;
    double anomaly = 0.0;
};

// Mean anomaly score of `model` over the scenario's vibration windows, one per
// second, split by whether the second lies in an anomaly episode.
ScoreMeans score_means(const scenario::ScenarioConfig& cfg, const tinyol::Model& model);

}  // namespace microcep::narrative
