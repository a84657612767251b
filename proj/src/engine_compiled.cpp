#include "engine_compiled.hpp"

#include <cmath>

namespace microcep::detail {

namespace {

CompiledTerm compile_term(const Term& t, VarTable& vars) {
    CompiledTerm out;
    std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Wildcard>) {
                out.kind = CompiledTerm::Kind::Wildcard;
            } else if constexpr (std::is_same_v<T, Variable>) {
                out.kind = CompiledTerm::Kind::Var;
                out.var = vars.index(x.name);
            } else {
                out.kind = CompiledTerm::Kind::Const;
                out.constant = Value(x);
            }
        },
        t);
    return out;
}

bool unify(const CompiledTerm& term, const Value& value, Binding& binding) {
    switch (term.kind) {
        case CompiledTerm::Kind::Wildcard:
            return true;
        case CompiledTerm::Kind::Const:
            return term.constant == value;
        case CompiledTerm::Kind::Var: {
            auto& slot = binding[static_cast<std::size_t>(term.var)];
            if (slot) return *slot == value;
            slot = value;
            return true;
        }
    }
    return false;
}

}  // namespace

CompiledPattern compile_pattern(const EventPattern& p, VarTable& vars) {
    CompiledPattern out;
    out.name = p.name;
    out.start = compile_term(p.start_slot, vars);
    out.end = compile_term(p.end_slot, vars);
    for (const Term& t : p.args) out.args.push_back(compile_term(t, vars));
    return out;
}

bool CompiledPattern::match(const Event& e, Binding& binding) const {
    if (e.name != name || e.args.size() != args.size()) return false;
    if (!unify(start, Value(static_cast<double>(e.start_ms)), binding)) return false;
    if (!unify(end, Value(static_cast<double>(e.end_ms)), binding)) return false;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (!unify(args[i], e.args[i], binding)) return false;
    }
    return true;
}

CompiledConstraints::CompiledConstraints(const std::vector<Constraint>& constraints, VarTable& vars) {
    for (const Constraint& c : constraints) {
        const int lhs = add(*c.lhs, vars);
        const int rhs = add(*c.rhs, vars);
        roots_.push_back(Root{lhs, c.op, rhs});
    }
}

int CompiledConstraints::add(const ArithExpr& e, VarTable& vars) {
    Node node{};
    std::visit(
        [&](const auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, Variable>) {
                node.kind = Node::Kind::Var;
                node.var = vars.index(x.name);
            } else if constexpr (std::is_same_v<T, double>) {
                node.kind = Node::Kind::Num;
                node.num = x;
            } else if constexpr (std::is_same_v<T, AbsExpr>) {
                node.kind = Node::Kind::Abs;
                node.left = add(*x.inner, vars);
            } else {
                node.kind = Node::Kind::Bin;
                node.op = x.op;
                node.left = add(*x.left, vars);
                node.right = add(*x.right, vars);
            }
        },
        e.node);
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size() - 1);
}

// Arithmetic is defined on numbers only; a symbol reaching an arithmetic
// operator makes the whole constraint false.
std::optional<Value> CompiledConstraints::eval(int index, const Binding& binding) const {
    const Node& n = nodes_[static_cast<std::size_t>(index)];
    switch (n.kind) {
        case Node::Kind::Var: return binding[static_cast<std::size_t>(n.var)];
        case Node::Kind::Num: return Value(n.num);
        case Node::Kind::Abs: {
            auto v = eval(n.left, binding);
            if (!v || !v->is_number()) return std::nullopt;
            return Value(std::fabs(v->number()));
        }
        case Node::Kind::Bin: {
            auto l = eval(n.left, binding);
            auto r = eval(n.right, binding);
            if (!l || !r || !l->is_number() || !r->is_number()) return std::nullopt;
            const double a = l->number();
            const double b = r->number();
            switch (n.op) {
                case ArithOp::Add: return Value(a + b);
                case ArithOp::Sub: return Value(a - b);
                case ArithOp::Mul: return Value(a * b);
                case ArithOp::Div: return Value(a / b);
            }
        }
    }
    return std::nullopt;
}

bool CompiledConstraints::hold(const Binding& binding) const {
    for (const Root& root : roots_) {
        auto l = eval(root.lhs, binding);
        auto r = eval(root.rhs, binding);
        if (!l || !r) return false;
        if (l->is_number() && r->is_number()) {
            const double a = l->number();
            const double b = r->number();
            bool ok = false;
            switch (root.op) {
                case CmpOp::Less: ok = a < b; break;
                case CmpOp::Greater: ok = a > b; break;
                case CmpOp::LessEq: ok = a <= b; break;
                case CmpOp::GreaterEq: ok = a >= b; break;
                case CmpOp::Equal: ok = a == b; break;
                case CmpOp::NotEqual: ok = a != b; break;
            }
            if (!ok) return false;
        } else {
            // Symbols only support (in)equality.
            if (root.op == CmpOp::Equal) {
                if (!(*l == *r)) return false;
            } else if (root.op == CmpOp::NotEqual) {
                if (*l == *r) return false;
            } else {
                return false;
            }
        }
    }
    return true;
}

bool join_into(Binding& dst, const Binding& src) {
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!src[i]) continue;
        if (dst[i]) {
            if (!(*dst[i] == *src[i])) return false;
        } else {
            dst[i] = src[i];
        }
    }
    return true;
}

bool joinable(const Binding& a, const Binding& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] && b[i] && !(*a[i] == *b[i])) return false;
    }
    return true;
}

Event build_head(const CompiledPattern& head, const Binding& binding, TimeMs start, TimeMs end) {
    Event out;
    out.name = head.name;
    out.start_ms = start;
    out.end_ms = end;
    out.args.reserve(head.args.size());
    for (const CompiledTerm& t : head.args) {
        if (t.kind == CompiledTerm::Kind::Var) {
            out.args.push_back(*binding[static_cast<std::size_t>(t.var)]);
        } else {
            out.args.push_back(t.constant);
        }
    }
    return out;
}

}  // namespace microcep::detail
