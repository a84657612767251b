#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "microcep/event.hpp"
#include "microcep/rule.hpp"

namespace microcep {

struct EngineConfig {
    // Emissions deeper than this many re-entries are dropped with a diagnostic.
    int cascade_depth_limit = 8;
    // Applied to windowless rules that need buffering; unset means they are rejected.
    std::optional<TimeMs> default_range_ms;
    std::size_t max_buffer_events = 4096;
    // Time retention for buffers of count-window rules.
    TimeMs count_retention_ms = 60000;
};

struct Diagnostic {
    enum class Kind { CascadeDepthExceeded, BufferOverflow };
    Kind kind;
    std::string rule_id;
    std::string detail;
};

class RuleInstance;

// Incremental matcher over a set of rules. Single-threaded: callers serialise
// all mutations. Emitted complex events are re-ingested (cascade) before the
// call returns, and every returned event carries the seq_id it was given.
class Engine {
public:
    explicit Engine(EngineConfig config = {});
    ~Engine();
    Engine(Engine&&) noexcept;
    Engine& operator=(Engine&&) noexcept;
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    // Rule takes effect for subsequent events only. Throws DuplicateRuleId,
    // MissingWindow or WindowError.
    void add_rule(const std::string& rule_id, RuleAst ast);
    // Throws UnknownRuleId.
    void remove_rule(const std::string& rule_id);
    bool has_rule(const std::string& rule_id) const;
    std::vector<std::string> rule_ids() const;
    const RuleAst& rule(const std::string& rule_id) const;

    // Returns direct and cascaded emissions in generation order.
    // Throws TimeOrderError for an event with start > end.
    std::vector<Event> push_event(Event e);

    // Moves the watermark forward, maturing negations. Throws TimeRegression.
    std::vector<Event> advance_time(TimeMs t_ms);

    TimeMs watermark() const noexcept { return watermark_; }
    std::uint64_t next_seq_id() const noexcept { return next_seq_; }
    const EngineConfig& config() const noexcept { return config_; }

    // Total number of events held in rule buffers (diagnostic aid).
    std::size_t buffered_events() const;

    const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }
    void clear_diagnostics() { diagnostics_.clear(); }

private:
    std::uint64_t ingest(Event e, int depth, std::vector<Event>& out);
    void emit(Event e, int depth, std::vector<Event>& out);
    // Settles every rule, or only `only` (ascending indices) when given.
    std::vector<std::pair<std::size_t, Event>> settle(const std::vector<std::size_t>* only = nullptr);
    void reindex();

    EngineConfig config_;
    std::vector<std::unique_ptr<RuleInstance>> rules_;
    // Event name -> indices of the rules with a pattern on that name.
    std::map<std::string, std::vector<std::size_t>> by_name_;
    TimeMs watermark_ = 0;
    std::uint64_t next_seq_ = 1;
    std::vector<Diagnostic> diagnostics_;
};

}  // namespace microcep
