#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace microcep {

using TimeMs = std::int64_t;

// Text atom such as `Celsius`. Compared by exact text.
struct Symbol {
    std::string text;

    friend bool operator==(const Symbol&, const Symbol&) = default;
    friend auto operator<=>(const Symbol&, const Symbol&) = default;
};

// An event argument: either a real number or a symbol.
class Value {
public:
    Value() : data_(0.0) {}
    Value(double number) : data_(number) {}  // NOLINT(google-explicit-constructor)
    Value(Symbol symbol) : data_(std::move(symbol)) {}  // NOLINT(google-explicit-constructor)

    static Value symbol(std::string text) { return Value(Symbol{std::move(text)}); }

    bool is_number() const noexcept { return std::holds_alternative<double>(data_); }
    bool is_symbol() const noexcept { return std::holds_alternative<Symbol>(data_); }

    double number() const { return std::get<double>(data_); }
    const std::string& symbol_text() const { return std::get<Symbol>(data_).text; }

    friend bool operator==(const Value& a, const Value& b) { return a.data_ == b.data_; }

private:
    std::variant<double, Symbol> data_;
};

struct Event {
    std::string name;
    TimeMs start_ms = 0;
    TimeMs end_ms = 0;
    std::vector<Value> args;
    // Assigned by the engine on ingestion; never part of the textual form.
    std::optional<std::uint64_t> seq_id;

    // Field-for-field comparison excluding seq_id.
    bool same_content(const Event& other) const {
        return name == other.name && start_ms == other.start_ms && end_ms == other.end_ms &&
               args == other.args;
    }
};

bool is_identifier(std::string_view text) noexcept;

// Parses `name[start, end](arg, ...)`. A trailing `.` or `,` is accepted.
// Throws SyntaxError (with byte offset) or TimeOrderError.
Event parse_event(std::string_view text);

// Canonical `name[start, end](a1, a2)` with shortest round-trip numbers.
std::string format_event(const Event& e);

std::string format_number(double value);
std::string format_value(const Value& value);

// (min start_ms, max end_ms). Throws EmptyInput.
std::pair<TimeMs, TimeMs> hull(std::span<const Event> events);

}  // namespace microcep
