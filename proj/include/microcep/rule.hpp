#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "microcep/event.hpp"

namespace microcep {

inline constexpr std::size_t kMaxRuleBytes = 4096;

struct Variable {
    std::string name;
    friend bool operator==(const Variable&, const Variable&) = default;
};

struct Wildcard {
    friend bool operator==(const Wildcard&, const Wildcard&) = default;
};

// Pattern argument. Numbers and symbols must equal the event argument exactly.
using Term = std::variant<Wildcard, Variable, double, Symbol>;

struct EventPattern {
    std::string name;
    Term start_slot = Wildcard{};
    Term end_slot = Wildcard{};
    std::vector<Term> args;

    friend bool operator==(const EventPattern&, const EventPattern&) = default;
};

// ---- arithmetic inside where(...) ----

struct ArithExpr;
using ArithPtr = std::shared_ptr<const ArithExpr>;

enum class ArithOp { Add, Sub, Mul, Div };

struct AbsExpr {
    ArithPtr inner;
};

struct BinaryArith {
    ArithOp op;
    ArithPtr left;
    ArithPtr right;
};

struct ArithExpr {
    std::variant<Variable, double, AbsExpr, BinaryArith> node;
};

bool operator==(const ArithExpr& a, const ArithExpr& b);

enum class CmpOp { Less, Greater, LessEq, GreaterEq, Equal, NotEqual };

struct Constraint {
    ArithPtr lhs;
    CmpOp op;
    ArithPtr rhs;
};

bool operator==(const Constraint& a, const Constraint& b);

// ---- body ----

enum class AggFn { Sum, Avg, Min, Max };

struct Aggregate {
    AggFn fn = AggFn::Avg;
    bool abs = false;  // fn(abs(X))
    std::string variable;

    friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

enum class BodyOp { And, Seq, Or, Nseq, Kseq };

struct BodyExpr;
using BodyPtr = std::shared_ptr<const BodyExpr>;

struct Atom {
    EventPattern pattern;
};

// For Nseq: left is the positive anchor, right the negated pattern.
// For Kseq: left is the repeated pattern, right the terminator.
struct Binary {
    BodyOp op;
    BodyPtr left;
    BodyPtr right;
};

struct Lambda {
    EventPattern source;
    Aggregate agg;
    std::string target;
};

struct BodyExpr {
    std::variant<Atom, Binary, Lambda> node;
};

bool operator==(const BodyExpr& a, const BodyExpr& b);

BodyPtr make_atom(EventPattern pattern);
BodyPtr make_binary(BodyOp op, BodyPtr left, BodyPtr right);
BodyPtr make_lambda(EventPattern source, Aggregate agg, std::string target);

struct WindowSpec {
    enum class Kind { Count, Range };
    Kind kind = Kind::Range;
    // Count: number of events. Range: duration in milliseconds.
    std::int64_t value = 0;

    static WindowSpec count(std::int64_t n) { return {Kind::Count, n}; }
    static WindowSpec range_ms(std::int64_t ms) { return {Kind::Range, ms}; }

    friend bool operator==(const WindowSpec&, const WindowSpec&) = default;
};

struct RuleAst {
    EventPattern head;
    BodyPtr body;
    std::vector<Constraint> constraints;
    std::optional<WindowSpec> window;
};

bool operator==(const RuleAst& a, const RuleAst& b);

// Parses and validates a rule. Throws SyntaxError, UnboundVariableError,
// ArityError, WindowError or ShapeError.
RuleAst parse_rule(std::string_view text);

// Single-line canonical form terminated by '.'.
std::string format_rule(const RuleAst& rule);
std::string format_pattern(const EventPattern& pattern);
std::string format_body(const BodyExpr& body);
std::string format_constraint(const Constraint& constraint);

std::set<std::string> free_variables(const EventPattern& pattern);
std::set<std::string> free_variables(const BodyExpr& body);
std::set<std::string> free_variables(const Constraint& constraint);

// Variables guaranteed bound by every match of the body (an `or` binds only
// what both branches bind; an `nseq` only what its anchor binds; a lambda only
// its target).
std::set<std::string> bound_variables(const BodyExpr& body);

// Leaf patterns of an and/seq/or tree in left-to-right order.
std::vector<const EventPattern*> leaf_patterns(const BodyExpr& body);

// True when an argument identifier is read as a variable: an uppercase first
// letter and no lowercase letters (X, Y, T1, MAX_V).
bool is_variable_name(std::string_view text) noexcept;

// True for identifiers that cannot name an event pattern.
bool is_reserved_word(std::string_view text) noexcept;

}  // namespace microcep
