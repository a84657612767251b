#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

#include "microcep/errors.hpp"
#include "microcep/lexer.hpp"
#include "microcep/rule.hpp"

namespace microcep {

bool is_variable_name(std::string_view text) noexcept {
    if (text.empty() || text.front() < 'A' || text.front() > 'Z') return false;
    return std::none_of(text.begin(), text.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

bool is_reserved_word(std::string_view text) noexcept {
    static constexpr std::array<std::string_view, 7> words = {"and",  "seq",    "or",   "nseq",
                                                              "kseq", "lambda", "where"};
    return std::find(words.begin(), words.end(), text) != words.end();
}

BodyPtr make_atom(EventPattern pattern) {
    return std::make_shared<const BodyExpr>(BodyExpr{Atom{std::move(pattern)}});
}

BodyPtr make_binary(BodyOp op, BodyPtr left, BodyPtr right) {
    return std::make_shared<const BodyExpr>(BodyExpr{Binary{op, std::move(left), std::move(right)}});
}

BodyPtr make_lambda(EventPattern source, Aggregate agg, std::string target) {
    return std::make_shared<const BodyExpr>(
        BodyExpr{Lambda{std::move(source), std::move(agg), std::move(target)}});
}

namespace {

class RuleParser {
public:
    explicit RuleParser(std::string_view text) : tokens_(tokenize(text)) {}

    RuleAst parse() {
        RuleAst rule;
        rule.head = pattern(false);
        expect(TokenKind::Implies);
        rule.body = disjunction();
        if (is_keyword("where")) rule.constraints = where_clause();
        if (peek().kind == TokenKind::LBracket) rule.window = window();
        // A trailing ',' is accepted as terminator the way listings in prose end.
        if (peek().kind == TokenKind::Dot || peek().kind == TokenKind::Comma) ++pos_;
        if (peek().kind != TokenKind::End) {
            fail({"'where'", "'['", "'.'", "end of input"});
        }
        return rule;
    }

private:
    const Token& peek(std::size_t ahead = 0) const {
        return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
    }

    bool is_keyword(std::string_view word, std::size_t ahead = 0) const {
        const Token& t = peek(ahead);
        return t.kind == TokenKind::Identifier && t.text == word;
    }

    [[noreturn]] void fail(std::vector<std::string> expected) const {
        const Token& t = peek();
        std::string what = t.kind == TokenKind::End ? "end of input"
                                                    : "'" + t.text + "'";
        throw SyntaxError(t.offset, "unexpected " + what, std::move(expected));
    }

    const Token& expect(TokenKind kind) {
        if (peek().kind != kind) fail({std::string(token_kind_name(kind))});
        return tokens_[pos_++];
    }

    void expect_keyword(std::string_view word) {
        if (!is_keyword(word)) fail({"'" + std::string(word) + "'"});
        ++pos_;
    }

    std::string variable_name() {
        const Token& t = peek();
        if (t.kind != TokenKind::Identifier || !is_variable_name(t.text)) fail({"variable"});
        ++pos_;
        return t.text;
    }

    double number_literal() {
        bool negative = false;
        if (peek().kind == TokenKind::Minus) {
            negative = true;
            ++pos_;
        }
        const Token& t = expect(TokenKind::Number);
        double value = 0;
        auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), value);
        if (ec != std::errc{} || !std::isfinite(value)) {
            throw SyntaxError(t.offset, "number out of range");
        }
        return negative ? -value : value;
    }

    std::int64_t integer_literal() {
        const Token& t = peek();
        if (t.kind != TokenKind::Number ||
            !std::all_of(t.text.begin(), t.text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            fail({"integer"});
        }
        std::int64_t value = 0;
        auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), value);
        if (ec != std::errc{}) throw SyntaxError(t.offset, "integer out of range");
        ++pos_;
        return value;
    }

    Term slot() {
        const Token& t = peek();
        if (t.kind != TokenKind::Identifier) fail({"'_'", "identifier"});
        ++pos_;
        if (t.text == "_") return Wildcard{};
        return Variable{t.text};
    }

    Term term() {
        const Token& t = peek();
        if (t.kind == TokenKind::Identifier) {
            ++pos_;
            if (t.text == "_") return Wildcard{};
            if (is_variable_name(t.text)) return Variable{t.text};
            return Symbol{t.text};
        }
        if (t.kind == TokenKind::Number || t.kind == TokenKind::Minus) return number_literal();
        fail({"'_'", "variable", "number", "symbol"});
    }

    EventPattern pattern(bool timespec_optional) {
        EventPattern p;
        const Token& name = expect(TokenKind::Identifier);
        if (is_reserved_word(name.text)) {
            throw SyntaxError(name.offset, "reserved word '" + name.text + "' cannot name an event",
                              {"event name"});
        }
        p.name = name.text;
        if (peek().kind == TokenKind::LBracket) {
            ++pos_;
            p.start_slot = slot();
            expect(TokenKind::Comma);
            p.end_slot = slot();
            expect(TokenKind::RBracket);
        } else if (!timespec_optional) {
            fail({"'['"});
        }
        expect(TokenKind::LParen);
        if (peek().kind != TokenKind::RParen) {
            p.args.push_back(term());
            while (peek().kind == TokenKind::Comma) {
                ++pos_;
                p.args.push_back(term());
            }
        }
        expect(TokenKind::RParen);
        return p;
    }

    BodyPtr disjunction() {
        BodyPtr left = conjunction();
        while (is_keyword("or")) {
            ++pos_;
            left = make_binary(BodyOp::Or, left, conjunction());
        }
        return left;
    }

    std::optional<BodyOp> conj_operator() const {
        if (is_keyword("and")) return BodyOp::And;
        if (is_keyword("seq")) return BodyOp::Seq;
        if (is_keyword("nseq")) return BodyOp::Nseq;
        if (is_keyword("kseq")) return BodyOp::Kseq;
        return std::nullopt;
    }

    BodyPtr conjunction() {
        BodyPtr left = unit();
        while (auto op = conj_operator()) {
            ++pos_;
            left = make_binary(*op, left, unit());
        }
        return left;
    }

    BodyPtr unit() {
        if (peek().kind == TokenKind::LParen) {
            ++pos_;
            BodyPtr inner = disjunction();
            expect(TokenKind::RParen);
            return inner;
        }
        if (is_keyword("lambda") && peek(1).kind == TokenKind::LBrace) return lambda();
        if (peek().kind != TokenKind::Identifier) fail({"event pattern", "'('", "'lambda'"});
        return make_atom(pattern(false));
    }

    BodyPtr lambda() {
        expect_keyword("lambda");
        expect(TokenKind::LBrace);
        EventPattern source = pattern(true);
        expect(TokenKind::Comma);
        expect(TokenKind::Star);
        expect(TokenKind::Comma);
        std::string target = variable_name();
        expect(TokenKind::Assign);
        Aggregate agg;
        const Token& fn = peek();
        if (fn.kind != TokenKind::Identifier) fail({"'sum'", "'avg'", "'min'", "'max'"});
        if (fn.text == "sum") agg.fn = AggFn::Sum;
        else if (fn.text == "avg") agg.fn = AggFn::Avg;
        else if (fn.text == "min") agg.fn = AggFn::Min;
        else if (fn.text == "max") agg.fn = AggFn::Max;
        else if (fn.text == "abs") {
            throw SyntaxError(fn.offset, "abs is not an aggregation; compose it, e.g. max(abs(X))",
                              {"'sum'", "'avg'", "'min'", "'max'"});
        } else {
            fail({"'sum'", "'avg'", "'min'", "'max'"});
        }
        ++pos_;
        expect(TokenKind::LParen);
        if (is_keyword("abs")) {
            ++pos_;
            agg.abs = true;
            expect(TokenKind::LParen);
            agg.variable = variable_name();
            expect(TokenKind::RParen);
        } else {
            agg.variable = variable_name();
        }
        expect(TokenKind::RParen);
        expect(TokenKind::RBrace);
        return make_lambda(std::move(source), std::move(agg), std::move(target));
    }

    std::vector<Constraint> where_clause() {
        expect_keyword("where");
        expect(TokenKind::LParen);
        std::vector<Constraint> out;
        out.push_back(constraint());
        while (peek().kind == TokenKind::Comma) {
            ++pos_;
            out.push_back(constraint());
        }
        expect(TokenKind::RParen);
        return out;
    }

    Constraint constraint() {
        ArithPtr lhs = additive();
        CmpOp op;
        switch (peek().kind) {
            case TokenKind::Less: op = CmpOp::Less; break;
            case TokenKind::Greater: op = CmpOp::Greater; break;
            case TokenKind::LessEq: op = CmpOp::LessEq; break;
            case TokenKind::GreaterEq: op = CmpOp::GreaterEq; break;
            case TokenKind::Equal: op = CmpOp::Equal; break;
            case TokenKind::NotEqual: op = CmpOp::NotEqual; break;
            default: fail({"comparison operator"});
        }
        ++pos_;
        return Constraint{lhs, op, additive()};
    }

    static ArithPtr arith(ArithExpr e) { return std::make_shared<const ArithExpr>(std::move(e)); }

    ArithPtr additive() {
        ArithPtr left = multiplicative();
        while (peek().kind == TokenKind::Plus || peek().kind == TokenKind::Minus) {
            ArithOp op = peek().kind == TokenKind::Plus ? ArithOp::Add : ArithOp::Sub;
            ++pos_;
            left = arith({BinaryArith{op, left, multiplicative()}});
        }
        return left;
    }

    ArithPtr multiplicative() {
        ArithPtr left = primary();
        while (peek().kind == TokenKind::Star || peek().kind == TokenKind::Slash) {
            ArithOp op = peek().kind == TokenKind::Star ? ArithOp::Mul : ArithOp::Div;
            ++pos_;
            left = arith({BinaryArith{op, left, primary()}});
        }
        return left;
    }

    ArithPtr primary() {
        const Token& t = peek();
        if (t.kind == TokenKind::LParen) {
            ++pos_;
            ArithPtr inner = additive();
            expect(TokenKind::RParen);
            return inner;
        }
        if (t.kind == TokenKind::Number || t.kind == TokenKind::Minus) {
            if (t.kind == TokenKind::Minus && peek(1).kind != TokenKind::Number) {
                ++pos_;
                fail({"number"});
            }
            return arith({number_literal()});
        }
        if (t.kind == TokenKind::Identifier && t.text == "abs") {
            ++pos_;
            expect(TokenKind::LParen);
            ArithPtr inner = additive();
            expect(TokenKind::RParen);
            return arith({AbsExpr{inner}});
        }
        return arith({Variable{variable_name()}});
    }

    WindowSpec window() {
        expect(TokenKind::LBracket);
        WindowSpec w;
        const std::size_t offset = peek().offset;
        if (is_keyword("count")) {
            ++pos_;
            w = WindowSpec::count(integer_literal());
        } else if (is_keyword("range")) {
            ++pos_;
            std::int64_t amount = integer_literal();
            if (is_keyword("s")) {
                if (amount > INT64_MAX / 1000) throw SyntaxError(offset, "range out of range");
                amount *= 1000;
            } else if (!is_keyword("ms")) {
                fail({"'s'", "'ms'"});
            }
            ++pos_;
            w = WindowSpec::range_ms(amount);
        } else {
            fail({"'count'", "'range'"});
        }
        expect(TokenKind::RBracket);
        if (w.value < 1) {
            throw WindowError("at offset " + std::to_string(offset) + ": window must be positive");
        }
        return w;
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

void collect(const ArithExpr& e, std::set<std::string>& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Variable>) out.insert(n.name);
            else if constexpr (std::is_same_v<T, AbsExpr>) collect(*n.inner, out);
            else if constexpr (std::is_same_v<T, BinaryArith>) {
                collect(*n.left, out);
                collect(*n.right, out);
            }
        },
        e.node);
}

void collect(const Term& t, std::set<std::string>& out) {
    if (const auto* v = std::get_if<Variable>(&t)) out.insert(v->name);
}

void check_shape(const BodyExpr& body, bool top) {
    if (const auto* b = std::get_if<Binary>(&body.node)) {
        if (b->op == BodyOp::Nseq || b->op == BodyOp::Kseq) {
            const char* name = b->op == BodyOp::Nseq ? "nseq" : "kseq";
            if (!top) throw ShapeError(std::string(name) + " must be the whole rule body");
            if (!std::holds_alternative<Atom>(b->left->node) ||
                !std::holds_alternative<Atom>(b->right->node)) {
                throw ShapeError(std::string(name) + " operands must be event patterns");
            }
            return;
        }
        check_shape(*b->left, false);
        check_shape(*b->right, false);
    } else if (std::holds_alternative<Lambda>(body.node) && !top) {
        throw ShapeError("lambda must be the whole rule body");
    }
}

void validate(const RuleAst& rule) {
    check_shape(*rule.body, true);

    if (const auto* lam = std::get_if<Lambda>(&rule.body->node)) {
        bool bound = false;
        for (const Term& t : lam->source.args) {
            if (const auto* v = std::get_if<Variable>(&t); v && v->name == lam->agg.variable) bound = true;
        }
        if (!bound) {
            throw ArityError("aggregated variable " + lam->agg.variable +
                             " is not an argument of the lambda source pattern");
        }
    }

    const std::set<std::string> bound = bound_variables(*rule.body);
    auto require = [&](const std::set<std::string>& vars) {
        for (const std::string& v : vars) {
            if (!bound.contains(v)) throw UnboundVariableError(v);
        }
    };
    for (const Term& t : rule.head.args) {
        if (std::holds_alternative<Wildcard>(t)) throw ShapeError("head arguments cannot be wildcards");
    }
    require(free_variables(rule.head));
    for (const Constraint& c : rule.constraints) require(free_variables(c));
}

}  // namespace

RuleAst parse_rule(std::string_view text) {
    if (text.size() > kMaxRuleBytes) {
        throw SyntaxError(kMaxRuleBytes, "rule text exceeds " + std::to_string(kMaxRuleBytes) + " bytes");
    }
    RuleAst rule = RuleParser(text).parse();
    validate(rule);
    return rule;
}

std::set<std::string> free_variables(const EventPattern& pattern) {
    std::set<std::string> out;
    collect(pattern.start_slot, out);
    collect(pattern.end_slot, out);
    for (const Term& t : pattern.args) collect(t, out);
    return out;
}

std::set<std::string> free_variables(const BodyExpr& body) {
    return std::visit(
        [](const auto& n) -> std::set<std::string> {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Atom>) {
                return free_variables(n.pattern);
            } else if constexpr (std::is_same_v<T, Binary>) {
                auto out = free_variables(*n.left);
                out.merge(free_variables(*n.right));
                return out;
            } else {
                auto out = free_variables(n.source);
                out.insert(n.target);
                return out;
            }
        },
        body.node);
}

std::set<std::string> free_variables(const Constraint& constraint) {
    std::set<std::string> out;
    collect(*constraint.lhs, out);
    collect(*constraint.rhs, out);
    return out;
}

std::set<std::string> bound_variables(const BodyExpr& body) {
    return std::visit(
        [](const auto& n) -> std::set<std::string> {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Atom>) {
                return free_variables(n.pattern);
            } else if constexpr (std::is_same_v<T, Binary>) {
                auto left = bound_variables(*n.left);
                if (n.op == BodyOp::Nseq) return left;
                auto right = bound_variables(*n.right);
                if (n.op == BodyOp::Or) {
                    std::set<std::string> both;
                    std::set_intersection(left.begin(), left.end(), right.begin(), right.end(),
                                          std::inserter(both, both.end()));
                    return both;
                }
                left.merge(right);
                return left;
            } else {
                return {n.target};
            }
        },
        body.node);
}

std::vector<const EventPattern*> leaf_patterns(const BodyExpr& body) {
    std::vector<const EventPattern*> out;
    auto walk = [&](auto&& self, const BodyExpr& b) -> void {
        if (const auto* a = std::get_if<Atom>(&b.node)) {
            out.push_back(&a->pattern);
        } else if (const auto* bin = std::get_if<Binary>(&b.node)) {
            self(self, *bin->left);
            self(self, *bin->right);
        } else {
            out.push_back(&std::get<Lambda>(b.node).source);
        }
    };
    walk(walk, body);
    return out;
}

// ---- structural equality ----

bool operator==(const ArithExpr& a, const ArithExpr& b) {
    if (a.node.index() != b.node.index()) return false;
    return std::visit(
        [&](const auto& x) -> bool {
            using T = std::decay_t<decltype(x)>;
            const T& y = std::get<T>(b.node);
            if constexpr (std::is_same_v<T, AbsExpr>) return *x.inner == *y.inner;
            else if constexpr (std::is_same_v<T, BinaryArith>)
                return x.op == y.op && *x.left == *y.left && *x.right == *y.right;
            else return x == y;
        },
        a.node);
}

bool operator==(const Constraint& a, const Constraint& b) {
    return a.op == b.op && *a.lhs == *b.lhs && *a.rhs == *b.rhs;
}

bool operator==(const BodyExpr& a, const BodyExpr& b) {
    if (a.node.index() != b.node.index()) return false;
    return std::visit(
        [&](const auto& x) -> bool {
            using T = std::decay_t<decltype(x)>;
            const T& y = std::get<T>(b.node);
            if constexpr (std::is_same_v<T, Atom>) return x.pattern == y.pattern;
            else if constexpr (std::is_same_v<T, Binary>)
                return x.op == y.op && *x.left == *y.left && *x.right == *y.right;
            else return x.source == y.source && x.agg == y.agg && x.target == y.target;
        },
        a.node);
}

bool operator==(const RuleAst& a, const RuleAst& b) {
    return a.head == b.head && *a.body == *b.body && a.constraints == b.constraints &&
           a.window == b.window;
}

}  // namespace microcep
