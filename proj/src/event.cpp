#include "microcep/event.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

#include "microcep/errors.hpp"
#include "microcep/lexer.hpp"

namespace microcep {

SyntaxError::SyntaxError(std::size_t offset, const std::string& message,
                         std::vector<std::string> expected)
    : Error("parse", [&] {
          std::string text = "at offset " + std::to_string(offset) + ": " + message;
          if (!expected.empty()) {
              text += " (expected ";
              for (std::size_t i = 0; i < expected.size(); ++i) {
                  if (i > 0) text += " or ";
                  text += expected[i];
              }
              text += ")";
          }
          return text;
      }()),
      offset_(offset),
      expected_(std::move(expected)) {}

UnboundVariableError::UnboundVariableError(std::string variable)
    : Error("unbound", "variable " + variable + " is not bound by the rule body"),
      variable_(std::move(variable)) {}

bool is_identifier(std::string_view text) noexcept {
    if (text.empty()) return false;
    auto alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
    if (!alpha(text.front())) return false;
    return std::all_of(text.begin() + 1, text.end(),
                       [&](char c) { return alpha(c) || (c >= '0' && c <= '9'); });
}

namespace {

class EventParser {
public:
    explicit EventParser(std::string_view text) : tokens_(tokenize(text)) {}

    Event parse() {
        Event e;
        e.name = expect(TokenKind::Identifier).text;
        expect(TokenKind::LBracket);
        const std::size_t start_offset = peek().offset;
        e.start_ms = timestamp();
        expect(TokenKind::Comma);
        e.end_ms = timestamp();
        expect(TokenKind::RBracket);
        expect(TokenKind::LParen);
        if (peek().kind != TokenKind::RParen) {
            e.args.push_back(argument());
            while (peek().kind == TokenKind::Comma) {
                ++pos_;
                e.args.push_back(argument());
            }
        }
        expect(TokenKind::RParen);
        if (peek().kind == TokenKind::Dot || peek().kind == TokenKind::Comma) ++pos_;
        if (peek().kind != TokenKind::End) {
            throw SyntaxError(peek().offset, "trailing input after event", {"end of input"});
        }
        if (e.start_ms > e.end_ms) {
            throw TimeOrderError("at offset " + std::to_string(start_offset) + ": start " +
                                 std::to_string(e.start_ms) + " is after end " +
                                 std::to_string(e.end_ms));
        }
        return e;
    }

private:
    const Token& peek() const { return tokens_[pos_]; }

    const Token& expect(TokenKind kind) {
        const Token& t = peek();
        if (t.kind != kind) {
            throw SyntaxError(t.offset, "unexpected " + std::string(token_kind_name(t.kind)),
                              {std::string(token_kind_name(kind))});
        }
        ++pos_;
        return t;
    }

    TimeMs timestamp() {
        const Token& t = peek();
        if (t.kind != TokenKind::Number ||
            !std::all_of(t.text.begin(), t.text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            throw SyntaxError(t.offset, "timestamp must be a non-negative integer", {"integer"});
        }
        TimeMs value = 0;
        auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), value);
        if (ec != std::errc{}) throw SyntaxError(t.offset, "timestamp out of range");
        ++pos_;
        return value;
    }

    Value argument() {
        const Token& t = peek();
        if (t.kind == TokenKind::Identifier) {
            ++pos_;
            return Value::symbol(t.text);
        }
        bool negative = false;
        if (t.kind == TokenKind::Minus) {
            negative = true;
            ++pos_;
        }
        const Token& num = peek();
        if (num.kind != TokenKind::Number) {
            throw SyntaxError(num.offset, "unexpected " + std::string(token_kind_name(num.kind)),
                              {"number", "symbol"});
        }
        double value = 0;
        auto [ptr, ec] = std::from_chars(num.text.data(), num.text.data() + num.text.size(), value);
        if (ec != std::errc{} || !std::isfinite(value)) {
            throw SyntaxError(num.offset, "number out of range");
        }
        ++pos_;
        return Value(negative ? -value : value);
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

}  // namespace

Event parse_event(std::string_view text) {
    return EventParser(text).parse();
}

std::string format_number(double value) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
}

std::string format_value(const Value& value) {
    return value.is_number() ? format_number(value.number()) : value.symbol_text();
}

std::string format_event(const Event& e) {
    std::string out = e.name;
    out += '[';
    out += std::to_string(e.start_ms);
    out += ", ";
    out += std::to_string(e.end_ms);
    out += "](";
    for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i > 0) out += ", ";
        out += format_value(e.args[i]);
    }
    out += ')';
    return out;
}

std::pair<TimeMs, TimeMs> hull(std::span<const Event> events) {
    if (events.empty()) throw EmptyInput("hull of an empty event list");
    TimeMs lo = events.front().start_ms;
    TimeMs hi = events.front().end_ms;
    for (const Event& e : events.subspan(1)) {
        lo = std::min(lo, e.start_ms);
        hi = std::max(hi, e.end_ms);
    }
    return {lo, hi};
}

}  // namespace microcep
