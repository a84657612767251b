#pragma once

#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "microcep/event.hpp"
#include "microcep/rule.hpp"

namespace microcep::scenario {

// One input to the engine: an event push or an explicit time advance.
struct StreamStep {
    std::variant<Event, TimeMs> item;

    static StreamStep push(Event e) { return StreamStep{std::move(e)}; }
    static StreamStep advance(TimeMs t) { return StreamStep{t}; }
};

// Expected emissions as canonical event literals (a multiset: identical
// literals from distinct contributing tuples are counted separately).
using OracleResult = std::multiset<std::string>;

struct OracleOptions {
    TimeMs count_retention_ms = 60000;
};

inline constexpr std::size_t kOracleMaxEvents = 12;

// Exhaustive enumeration of the matching semantics for a single rule over a
// short stream. The rule's head must not re-trigger its own body (no cascade).
// Throws StreamTooLarge past 12 events and MissingWindow for a windowless
// multi-event rule.
OracleResult oracle_match(const RuleAst& rule, std::span<const StreamStep> steps,
                          const OracleOptions& options = {});

}  // namespace microcep::scenario
