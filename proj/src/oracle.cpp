// Brute-force reference for the matching semantics. Deliberately shares no
// code with the engine beyond the AST and event formatting: unification,
// arithmetic and window bookkeeping are re-derived here from the definitions.

#include "microcep/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>

#include "microcep/errors.hpp"

namespace microcep::scenario {

namespace {

using Bindings = std::map<std::string, Value>;

bool bind_term(const Term& term, const Value& value, Bindings& b) {
    if (std::holds_alternative<Wildcard>(term)) return true;
    if (const auto* v = std::get_if<Variable>(&term)) {
        auto it = b.find(v->name);
        if (it == b.end()) {
            b.emplace(v->name, value);
            return true;
        }
        return it->second == value;
    }
    if (const auto* d = std::get_if<double>(&term)) return value.is_number() && value.number() == *d;
    const auto& s = std::get<Symbol>(term);
    return value.is_symbol() && value.symbol_text() == s.text;
}

std::optional<Bindings> unify(const EventPattern& p, const Event& e) {
    if (p.name != e.name || p.args.size() != e.args.size()) return std::nullopt;
    Bindings b;
    if (!bind_term(p.start_slot, Value(static_cast<double>(e.start_ms)), b)) return std::nullopt;
    if (!bind_term(p.end_slot, Value(static_cast<double>(e.end_ms)), b)) return std::nullopt;
    for (std::size_t i = 0; i < p.args.size(); ++i) {
        if (!bind_term(p.args[i], e.args[i], b)) return std::nullopt;
    }
    return b;
}

bool merge(Bindings& into, const Bindings& from) {
    for (const auto& [k, v] : from) {
        auto it = into.find(k);
        if (it == into.end()) into.emplace(k, v);
        else if (!(it->second == v)) return false;
    }
    return true;
}

bool compatible(const Bindings& a, const Bindings& b) {
    Bindings copy = a;
    return merge(copy, b);
}

std::optional<Value> evaluate(const ArithExpr& e, const Bindings& b) {
    if (const auto* v = std::get_if<Variable>(&e.node)) {
        auto it = b.find(v->name);
        if (it == b.end()) return std::nullopt;
        return it->second;
    }
    if (const auto* d = std::get_if<double>(&e.node)) return Value(*d);
    if (const auto* a = std::get_if<AbsExpr>(&e.node)) {
        auto x = evaluate(*a->inner, b);
        if (!x || !x->is_number()) return std::nullopt;
        return Value(x->number() < 0 ? -x->number() : x->number());
    }
    const auto& bin = std::get<BinaryArith>(e.node);
    auto l = evaluate(*bin.left, b);
    auto r = evaluate(*bin.right, b);
    if (!l || !r || !l->is_number() || !r->is_number()) return std::nullopt;
    switch (bin.op) {
        case ArithOp::Add: return Value(l->number() + r->number());
        case ArithOp::Sub: return Value(l->number() - r->number());
        case ArithOp::Mul: return Value(l->number() * r->number());
        case ArithOp::Div: return Value(l->number() / r->number());
    }
    return std::nullopt;
}

bool satisfied(const std::vector<Constraint>& constraints, const Bindings& b) {
    for (const Constraint& c : constraints) {
        auto l = evaluate(*c.lhs, b);
        auto r = evaluate(*c.rhs, b);
        if (!l || !r) return false;
        bool ok;
        if (l->is_number() && r->is_number()) {
            const double x = l->number();
            const double y = r->number();
            switch (c.op) {
                case CmpOp::Less: ok = x < y; break;
                case CmpOp::Greater: ok = x > y; break;
                case CmpOp::LessEq: ok = x <= y; break;
                case CmpOp::GreaterEq: ok = x >= y; break;
                case CmpOp::Equal: ok = x == y; break;
                default: ok = x != y; break;
            }
        } else if (c.op == CmpOp::Equal) {
            ok = *l == *r;
        } else if (c.op == CmpOp::NotEqual) {
            ok = !(*l == *r);
        } else {
            ok = false;
        }
        if (!ok) return false;
    }
    return true;
}

std::string emit(const EventPattern& head, const Bindings& b, TimeMs start, TimeMs end) {
    Event out;
    out.name = head.name;
    out.start_ms = start;
    out.end_ms = end;
    for (const Term& t : head.args) {
        if (const auto* v = std::get_if<Variable>(&t)) out.args.push_back(b.at(v->name));
        else if (const auto* d = std::get_if<double>(&t)) out.args.emplace_back(*d);
        else out.args.emplace_back(std::get<Symbol>(t));
    }
    return format_event(out);
}

// The stream flattened with the watermark before and after every step.
struct Timeline {
    struct Arrival {
        std::size_t step;
        Event event;
    };
    std::vector<Arrival> arrivals;
    std::vector<TimeMs> before;  // per step
    std::vector<TimeMs> after;   // per step
    std::vector<int> arrival_at_step;  // -1 for time advances

    explicit Timeline(std::span<const StreamStep> steps) {
        TimeMs w = 0;
        for (std::size_t k = 0; k < steps.size(); ++k) {
            before.push_back(w);
            if (const auto* e = std::get_if<Event>(&steps[k].item)) {
                w = std::max(w, e->end_ms);
                arrival_at_step.push_back(static_cast<int>(arrivals.size()));
                arrivals.push_back(Arrival{k, *e});
            } else {
                w = std::max(w, std::get<TimeMs>(steps[k].item));
                arrival_at_step.push_back(-1);
            }
            after.push_back(w);
        }
    }
};

struct WindowRules {
    std::optional<WindowSpec> window;
    TimeMs count_retention;

    bool range() const { return window && window->kind == WindowSpec::Kind::Range; }
    bool count() const { return window && window->kind == WindowSpec::Kind::Count; }
    TimeMs retention() const { return range() ? window->value : count_retention; }
};

// Is arrival `j` (matching `pattern`) still usable as a partner when arrival
// `k` is processed? Encodes time retention and count recency.
bool available(const Timeline& tl, const EventPattern& pattern, std::size_t j, std::size_t k,
               const WindowRules& wr) {
    if (j == k) return true;
    const auto& arr = tl.arrivals;
    if (wr.window && arr[j].event.end_ms < tl.before[arr[k].step] - wr.retention()) return false;
    if (wr.count()) {
        std::int64_t later = 0;  // matching arrivals after j, up to and including k
        for (std::size_t m = j + 1; m <= k; ++m) {
            if (unify(pattern, arr[m].event)) ++later;
        }
        if (later >= wr.window->value) return false;
    }
    return true;
}

// ---- and / seq / or trees ----

struct Assignment {
    std::map<std::size_t, std::size_t> leaf_to_arrival;
};

void leaves_of(const BodyExpr& b, std::vector<const EventPattern*>& out) {
    if (const auto* a = std::get_if<Atom>(&b.node)) {
        out.push_back(&a->pattern);
        return;
    }
    const auto& bin = std::get<Binary>(b.node);
    leaves_of(*bin.left, out);
    leaves_of(*bin.right, out);
}

// Every way of assigning arrivals [0, k] to the leaves the node actually uses.
std::vector<Assignment> assignments(const BodyExpr& b, std::size_t& next_leaf, std::size_t k,
                                    const Timeline& tl) {
    if (const auto* a = std::get_if<Atom>(&b.node)) {
        const std::size_t leaf = next_leaf++;
        std::vector<Assignment> out;
        for (std::size_t j = 0; j <= k; ++j) {
            if (unify(a->pattern, tl.arrivals[j].event)) out.push_back(Assignment{{{leaf, j}}});
        }
        return out;
    }
    const auto& bin = std::get<Binary>(b.node);
    auto left = assignments(*bin.left, next_leaf, k, tl);
    auto right = assignments(*bin.right, next_leaf, k, tl);
    if (bin.op == BodyOp::Or) {
        left.insert(left.end(), right.begin(), right.end());
        return left;
    }
    std::vector<Assignment> out;
    for (const auto& l : left) {
        for (const auto& r : right) {
            Assignment both = l;
            both.leaf_to_arrival.insert(r.leaf_to_arrival.begin(), r.leaf_to_arrival.end());
            out.push_back(std::move(both));
        }
    }
    return out;
}

// Interval of the events the assignment places under `b`, or nullopt if that
// subtree is unused. Verifies seq ordering on the way.
struct SubResult {
    bool ok = true;
    std::optional<std::pair<TimeMs, TimeMs>> interval;
};

SubResult check_order(const BodyExpr& b, std::size_t& next_leaf, const Assignment& asg,
                      const Timeline& tl) {
    if (std::holds_alternative<Atom>(b.node)) {
        const std::size_t leaf = next_leaf++;
        auto it = asg.leaf_to_arrival.find(leaf);
        if (it == asg.leaf_to_arrival.end()) return {};
        const Event& e = tl.arrivals[it->second].event;
        return SubResult{true, std::make_pair(e.start_ms, e.end_ms)};
    }
    const auto& bin = std::get<Binary>(b.node);
    SubResult l = check_order(*bin.left, next_leaf, asg, tl);
    SubResult r = check_order(*bin.right, next_leaf, asg, tl);
    if (!l.ok || !r.ok) return SubResult{false, {}};
    if (bin.op == BodyOp::Seq && l.interval && r.interval && l.interval->second > r.interval->first) {
        return SubResult{false, {}};
    }
    if (!l.interval) return r;
    if (!r.interval) return l;
    return SubResult{true, std::make_pair(std::min(l.interval->first, r.interval->first),
                                          std::max(l.interval->second, r.interval->second))};
}

void tree_matches(const RuleAst& rule, const Timeline& tl, const WindowRules& wr, OracleResult& out) {
    std::vector<const EventPattern*> leaves;
    leaves_of(*rule.body, leaves);
    for (std::size_t k = 0; k < tl.arrivals.size(); ++k) {
        std::size_t counter = 0;
        for (const Assignment& asg : assignments(*rule.body, counter, k, tl)) {
            bool uses_k = false;
            bool ok = true;
            std::set<std::size_t> used;
            Bindings b;
            for (const auto& [leaf, j] : asg.leaf_to_arrival) {
                if (j == k) uses_k = true;
                if (!used.insert(j).second) ok = false;
                if (!ok) break;
                if (!available(tl, *leaves[leaf], j, k, wr)) ok = false;
                if (!ok || !merge(b, *unify(*leaves[leaf], tl.arrivals[j].event))) ok = false;
                if (!ok) break;
            }
            if (!ok || !uses_k) continue;
            std::size_t order_counter = 0;
            SubResult res = check_order(*rule.body, order_counter, asg, tl);
            if (!res.ok || !res.interval) continue;
            const auto [start, end] = *res.interval;
            if (wr.range() && end - start > wr.window->value) continue;
            if (!satisfied(rule.constraints, b)) continue;
            out.insert(emit(rule.head, b, start, end));
        }
    }
}

// ---- nseq ----

void nseq_matches(const RuleAst& rule, const Timeline& tl, std::span<const StreamStep> steps,
                  OracleResult& out) {
    const auto& bin = std::get<Binary>(rule.body->node);
    const EventPattern& pos = std::get<Atom>(bin.left->node).pattern;
    const EventPattern& neg = std::get<Atom>(bin.right->node).pattern;
    const TimeMs w = rule.window->value;

    for (std::size_t a = 0; a < tl.arrivals.size(); ++a) {
        const Event& anchor = tl.arrivals[a].event;
        auto ba = unify(pos, anchor);
        if (!ba || !satisfied(rule.constraints, *ba)) continue;
        const TimeMs deadline = anchor.end_ms + w;
        const std::size_t anchor_step = tl.arrivals[a].step;

        std::optional<std::size_t> mature;
        for (std::size_t s = anchor_step; s < steps.size(); ++s) {
            if (tl.after[s] > deadline) {
                mature = s;
                break;
            }
        }
        if (!mature) continue;

        bool cancelled = false;
        for (std::size_t j = 0; j < tl.arrivals.size() && !cancelled; ++j) {
            if (j == a) continue;
            const Event& b = tl.arrivals[j].event;
            auto bb = unify(neg, b);
            if (!bb || !compatible(*ba, *bb)) continue;
            if (!(b.start_ms > anchor.end_ms && b.start_ms <= deadline)) continue;
            const std::size_t bstep = tl.arrivals[j].step;
            if (bstep < anchor_step) {
                cancelled = b.end_ms >= tl.before[anchor_step] - w;
            } else {
                cancelled = bstep <= *mature;
            }
        }
        if (!cancelled) out.insert(emit(rule.head, *ba, anchor.start_ms, deadline));
    }
}

// ---- kseq ----

void kseq_matches(const RuleAst& rule, const Timeline& tl, const WindowRules& wr, OracleResult& out) {
    const auto& bin = std::get<Binary>(rule.body->node);
    const EventPattern& rep = std::get<Atom>(bin.left->node).pattern;
    const EventPattern& term = std::get<Atom>(bin.right->node).pattern;

    for (std::size_t k = 0; k < tl.arrivals.size(); ++k) {
        const Event& t = tl.arrivals[k].event;
        auto bt = unify(term, t);
        if (!bt) continue;
        std::optional<std::size_t> latest;
        TimeMs earliest = t.start_ms;
        for (std::size_t j = 0; j < k; ++j) {
            const Event& a = tl.arrivals[j].event;
            auto ba = unify(rep, a);
            if (!ba || !compatible(*ba, *bt)) continue;
            if (a.end_ms > t.start_ms) continue;
            if (wr.range() && t.end_ms - a.start_ms > wr.window->value) continue;
            if (!available(tl, rep, j, k, wr)) continue;
            latest = j;
            earliest = std::min(earliest, a.start_ms);
        }
        if (!latest) continue;
        Bindings b = *bt;
        merge(b, *unify(rep, tl.arrivals[*latest].event));
        if (!satisfied(rule.constraints, b)) continue;
        out.insert(emit(rule.head, b, earliest, t.end_ms));
    }
}

// ---- lambda ----

void lambda_matches(const RuleAst& rule, const Timeline& tl, const WindowRules& wr, OracleResult& out) {
    const auto& lam = std::get<Lambda>(rule.body->node);

    auto sample = [&](std::size_t j) -> std::optional<double> {
        auto b = unify(lam.source, tl.arrivals[j].event);
        if (!b) return std::nullopt;
        const Value& v = b->at(lam.agg.variable);
        if (!v.is_number()) return std::nullopt;
        return lam.agg.abs ? std::fabs(v.number()) : v.number();
    };

    for (std::size_t k = 0; k < tl.arrivals.size(); ++k) {
        if (!sample(k)) continue;
        std::vector<std::size_t> window;
        if (wr.count()) {
            std::vector<std::size_t> last;
            for (std::size_t j = k + 1; j-- > 0 && static_cast<std::int64_t>(last.size()) < wr.window->value;) {
                if (sample(j)) last.push_back(j);
            }
            if (static_cast<std::int64_t>(last.size()) < wr.window->value) continue;
            bool all_held = std::all_of(last.begin(), last.end(), [&](std::size_t j) {
                return j == k ||
                       tl.arrivals[j].event.end_ms >= tl.before[tl.arrivals[k].step] - wr.count_retention;
            });
            if (!all_held) continue;
            window = last;
        } else {
            const TimeMs now = tl.after[tl.arrivals[k].step];
            for (std::size_t j = 0; j <= k; ++j) {
                if (!sample(j)) continue;
                if (wr.range() && tl.arrivals[j].event.end_ms <= now - wr.window->value) continue;
                window.push_back(j);
            }
        }
        if (window.empty()) continue;

        std::vector<double> values;
        TimeMs start = std::numeric_limits<TimeMs>::max();
        TimeMs end = std::numeric_limits<TimeMs>::min();
        for (std::size_t j : window) {
            values.push_back(*sample(j));
            start = std::min(start, tl.arrivals[j].event.start_ms);
            end = std::max(end, tl.arrivals[j].event.end_ms);
        }
        // Sum in arrival order so rounding matches a left-to-right accumulation.
        std::sort(window.begin(), window.end());
        double total = 0;
        for (std::size_t j : window) total += *sample(j);
        double result = 0;
        switch (lam.agg.fn) {
            case AggFn::Sum: result = total; break;
            case AggFn::Avg: result = total / static_cast<double>(values.size()); break;
            case AggFn::Min: result = *std::min_element(values.begin(), values.end()); break;
            case AggFn::Max: result = *std::max_element(values.begin(), values.end()); break;
        }
        Bindings b{{lam.target, Value(result)}};
        if (!satisfied(rule.constraints, b)) continue;
        out.insert(emit(rule.head, b, start, end));
    }
}

bool joins_events(const BodyExpr& b) {
    const auto* bin = std::get_if<Binary>(&b.node);
    if (!bin) return false;
    return bin->op != BodyOp::Or || joins_events(*bin->left) || joins_events(*bin->right);
}

}  // namespace

OracleResult oracle_match(const RuleAst& rule, std::span<const StreamStep> steps,
                          const OracleOptions& options) {
    std::size_t events = 0;
    for (const StreamStep& s : steps) {
        if (std::holds_alternative<Event>(s.item)) ++events;
    }
    if (events > kOracleMaxEvents) throw StreamTooLarge(events);

    const Timeline tl(steps);
    const WindowRules wr{rule.window, options.count_retention_ms};
    OracleResult out;

    if (std::holds_alternative<Lambda>(rule.body->node)) {
        lambda_matches(rule, tl, wr, out);
        return out;
    }
    if (const auto* bin = std::get_if<Binary>(&rule.body->node)) {
        if (bin->op == BodyOp::Nseq) {
            if (!wr.range()) throw MissingWindow("nseq needs a range window");
            nseq_matches(rule, tl, steps, out);
            return out;
        }
        if (!rule.window && joins_events(*rule.body)) {
            throw MissingWindow("multi-event rule without window");
        }
        if (bin->op == BodyOp::Kseq) {
            kseq_matches(rule, tl, wr, out);
            return out;
        }
    }
    tree_matches(rule, tl, wr, out);
    return out;
}

}  // namespace microcep::scenario
