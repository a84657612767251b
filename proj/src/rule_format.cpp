#include "microcep/rule.hpp"

namespace microcep {

namespace {

std::string format_term(const Term& t) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Wildcard>) return "_";
            else if constexpr (std::is_same_v<T, Variable>) return x.name;
            else if constexpr (std::is_same_v<T, double>) return format_number(x);
            else return x.text;
        },
        t);
}

const char* op_text(ArithOp op) {
    switch (op) {
        case ArithOp::Add: return " + ";
        case ArithOp::Sub: return " - ";
        case ArithOp::Mul: return " * ";
        case ArithOp::Div: return " / ";
    }
    return "?";
}

const char* op_text(CmpOp op) {
    switch (op) {
        case CmpOp::Less: return " < ";
        case CmpOp::Greater: return " > ";
        case CmpOp::LessEq: return " <= ";
        case CmpOp::GreaterEq: return " >= ";
        case CmpOp::Equal: return " == ";
        case CmpOp::NotEqual: return " != ";
    }
    return "?";
}

const char* op_text(BodyOp op) {
    switch (op) {
        case BodyOp::And: return " and ";
        case BodyOp::Seq: return " seq ";
        case BodyOp::Or: return " or ";
        case BodyOp::Nseq: return " nseq ";
        case BodyOp::Kseq: return " kseq ";
    }
    return "?";
}

const char* fn_text(AggFn fn) {
    switch (fn) {
        case AggFn::Sum: return "sum";
        case AggFn::Avg: return "avg";
        case AggFn::Min: return "min";
        case AggFn::Max: return "max";
    }
    return "?";
}

std::string format_arith(const ArithExpr& e) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Variable>) {
                return x.name;
            } else if constexpr (std::is_same_v<T, double>) {
                return format_number(x);
            } else if constexpr (std::is_same_v<T, AbsExpr>) {
                return "abs(" + format_arith(*x.inner) + ")";
            } else {
                // Nested binaries are always parenthesised.
                auto side = [](const ArithExpr& s) {
                    std::string text = format_arith(s);
                    return std::holds_alternative<BinaryArith>(s.node) ? "(" + text + ")" : text;
                };
                return side(*x.left) + op_text(x.op) + side(*x.right);
            }
        },
        e.node);
}

int precedence(BodyOp op) { return op == BodyOp::Or ? 1 : 2; }

}  // namespace

std::string format_pattern(const EventPattern& p) {
    std::string out = p.name + "[" + format_term(p.start_slot) + ", " + format_term(p.end_slot) + "](";
    for (std::size_t i = 0; i < p.args.size(); ++i) {
        if (i > 0) out += ", ";
        out += format_term(p.args[i]);
    }
    return out + ")";
}

std::string format_body(const BodyExpr& body) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Atom>) {
                return format_pattern(x.pattern);
            } else if constexpr (std::is_same_v<T, Binary>) {
                // Operators are left-associative: a right child of equal
                // precedence needs parentheses, a left child does not.
                auto side = [&](const BodyExpr& child, bool right) {
                    std::string text = format_body(child);
                    const auto* b = std::get_if<Binary>(&child.node);
                    if (!b) return text;
                    const int p = precedence(x.op);
                    const int c = precedence(b->op);
                    const bool wrap = right ? c <= p : c < p;
                    return wrap ? "(" + text + ")" : text;
                };
                return side(*x.left, false) + op_text(x.op) + side(*x.right, true);
            } else {
                std::string agg = std::string(fn_text(x.agg.fn)) + "(" +
                                  (x.agg.abs ? "abs(" + x.agg.variable + ")" : x.agg.variable) + ")";
                return "lambda { " + format_pattern(x.source) + ", *, " + x.target + " := " + agg +
                       " }";
            }
        },
        body.node);
}

std::string format_constraint(const Constraint& c) {
    return format_arith(*c.lhs) + op_text(c.op) + format_arith(*c.rhs);
}

std::string format_rule(const RuleAst& rule) {
    std::string out = format_pattern(rule.head) + " :- " + format_body(*rule.body);
    if (!rule.constraints.empty()) {
        out += " where(";
        for (std::size_t i = 0; i < rule.constraints.size(); ++i) {
            if (i > 0) out += ", ";
            out += format_constraint(rule.constraints[i]);
        }
        out += ")";
    }
    if (rule.window) {
        if (rule.window->kind == WindowSpec::Kind::Count) {
            out += " [count " + std::to_string(rule.window->value) + "]";
        } else if (rule.window->value % 1000 == 0) {
            out += " [range " + std::to_string(rule.window->value / 1000) + " s]";
        } else {
            out += " [range " + std::to_string(rule.window->value) + " ms]";
        }
    }
    return out + ".";
}

}  // namespace microcep
