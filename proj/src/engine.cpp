#include "microcep/engine.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <set>
#include <unordered_set>

#include "engine_compiled.hpp"
#include "microcep/errors.hpp"

namespace microcep {

using detail::Binding;
using detail::CompiledConstraints;
using detail::CompiledPattern;

namespace {

constexpr std::size_t kMaxDiagnostics = 10000;

struct Entry {
    Event event;
    Binding binding;
    std::uint64_t ordinal = 0;  // position among arrivals matching the same pattern

    std::uint64_t seq() const { return *event.seq_id; }
};

bool needs_buffering(const BodyExpr& body) {
    if (const auto* b = std::get_if<Binary>(&body.node)) {
        if (b->op != BodyOp::Or) return true;
        return needs_buffering(*b->left) || needs_buffering(*b->right);
    }
    return false;
}

}  // namespace

// Per-rule matching state. Subclasses implement one operator family.
class RuleInstance {
public:
    RuleInstance(std::string id, RuleAst ast, const EngineConfig& config)
        : id_(std::move(id)), ast_(std::move(ast)), config_(config) {
        if (ast_.window && ast_.window->kind == WindowSpec::Kind::Range) {
            retention_ = ast_.window->value;
        } else {
            retention_ = config.count_retention_ms;
        }
    }
    virtual ~RuleInstance() = default;

    const std::string& id() const { return id_; }
    const RuleAst& ast() const { return ast_; }

    // Appends emissions caused by `e`. The watermark already includes e.
    virtual void on_event(const Event& e, TimeMs watermark, std::vector<Event>& out) = 0;
    // Eviction plus any deferred (negation) emissions.
    virtual void settle(TimeMs watermark, std::vector<Event>& out) = 0;
    virtual std::size_t buffered() const = 0;

    std::vector<Diagnostic> take_diagnostics() { return std::exchange(diagnostics_, {}); }

protected:
    bool is_range() const { return ast_.window && ast_.window->kind == WindowSpec::Kind::Range; }
    bool is_count() const { return ast_.window && ast_.window->kind == WindowSpec::Kind::Count; }
    std::size_t count_n() const { return static_cast<std::size_t>(ast_.window->value); }
    TimeMs range_ms() const { return ast_.window->value; }

    // Drops the oldest entry when a buffer exceeds the configured bound.
    template <typename T>
    void bound_buffer(std::deque<T>& buffer, std::vector<std::uint64_t>* dropped = nullptr) {
        while (buffer.size() > config_.max_buffer_events) {
            if constexpr (std::is_same_v<T, Entry>) {
                if (dropped) dropped->push_back(buffer.front().seq());
            }
            buffer.pop_front();
            diagnostics_.push_back(Diagnostic{Diagnostic::Kind::BufferOverflow, id_,
                                              "buffer exceeded " +
                                                  std::to_string(config_.max_buffer_events) +
                                                  " events; oldest evicted"});
        }
    }

    std::string id_;
    RuleAst ast_;
    const EngineConfig& config_;
    TimeMs retention_ = 0;
    std::vector<Diagnostic> diagnostics_;
};

namespace {

// and / seq / or trees, including the single-pattern rule.
class TreeRule final : public RuleInstance {
public:
    TreeRule(std::string id, RuleAst ast, const EngineConfig& config)
        : RuleInstance(std::move(id), std::move(ast), config) {
        detail::VarTable vars;
        build(*ast_.body, vars);
        head_ = detail::compile_pattern(ast_.head, vars);
        constraints_ = CompiledConstraints(ast_.constraints, vars);
        var_count_ = vars.size();
        buffers_.resize(leaves_.size());
        arrivals_.resize(leaves_.size(), 0);
        multi_event_ = needs_buffering(*ast_.body);
        mark_buffered(0, false);
    }

    void on_event(const Event& e, TimeMs /*watermark*/, std::vector<Event>& out) override {
        std::vector<std::size_t> matched;
        std::vector<Entry> fresh(leaves_.size());
        for (std::size_t leaf = 0; leaf < leaves_.size(); ++leaf) {
            Binding b(var_count_);
            if (!leaves_[leaf].pattern.match(e, b)) continue;
            matched.push_back(leaf);
            fresh[leaf] = Entry{e, std::move(b)};
            if (leaves_[leaf].buffered) {
                auto& buf = buffers_[leaf];
                fresh[leaf].ordinal = ++arrivals_[leaf];
                buf.push_back(fresh[leaf]);
                if (is_count()) {
                    while (!buf.empty() && buf.front().ordinal + count_n() <= arrivals_[leaf]) {
                        evicted_.push_back(buf.front().seq());
                        buf.pop_front();
                    }
                }
                bound_buffer(buf, &evicted_);
            }
        }
        if (matched.empty()) return;

        std::vector<Partial> complete;
        for (std::size_t leaf : matched) {
            const Entry& entry = fresh[leaf];
            for (Partial& p : enumerate(0, leaf, entry)) {
                if (!window_ok(p)) continue;
                if (!constraints_.hold(p.binding)) continue;
                complete.push_back(std::move(p));
            }
        }
        std::sort(complete.begin(), complete.end(),
                  [](const Partial& a, const Partial& b) { return a.key() < b.key(); });
        for (const Partial& p : complete) {
            if (multi_event_ && !emitted_.insert(p.key()).second) continue;
            out.push_back(detail::build_head(head_, p.binding, p.start, p.end));
        }
    }

    void settle(TimeMs watermark, std::vector<Event>& /*out*/) override {
        const TimeMs cutoff = watermark - retention_;
        for (auto& buf : buffers_) {
            auto keep = std::stable_partition(buf.begin(), buf.end(), [&](const Entry& en) {
                return en.event.end_ms >= cutoff;
            });
            for (auto it = keep; it != buf.end(); ++it) evicted_.push_back(it->seq());
            buf.erase(keep, buf.end());
        }
        prune_emitted();
    }

    std::size_t buffered() const override {
        std::size_t n = 0;
        for (const auto& b : buffers_) n += b.size();
        return n;
    }

private:
    struct Leaf {
        CompiledPattern pattern;
        bool buffered = false;
    };
    struct Node {
        enum class Kind { Leaf, And, Seq, Or } kind;
        std::size_t leaf = 0;
        int left = -1;
        int right = -1;
        std::size_t leaf_lo = 0;  // leaves [leaf_lo, leaf_hi) lie under this node
        std::size_t leaf_hi = 0;
    };
    struct Partial {
        Binding binding;
        TimeMs start = 0;
        TimeMs end = 0;
        std::vector<std::uint64_t> seqs;  // per leaf, 0 when the leaf is unused

        const std::vector<std::uint64_t>& key() const { return seqs; }
    };

    int build(const BodyExpr& body, detail::VarTable& vars) {
        const int index = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{});
        if (const auto* atom = std::get_if<Atom>(&body.node)) {
            nodes_[index].kind = Node::Kind::Leaf;
            nodes_[index].leaf = leaves_.size();
            nodes_[index].leaf_lo = leaves_.size();
            leaves_.push_back(Leaf{detail::compile_pattern(atom->pattern, vars)});
            nodes_[index].leaf_hi = leaves_.size();
            return index;
        }
        const auto& bin = std::get<Binary>(body.node);
        Node::Kind kind = bin.op == BodyOp::And   ? Node::Kind::And
                          : bin.op == BodyOp::Seq ? Node::Kind::Seq
                                                  : Node::Kind::Or;
        const std::size_t lo = leaves_.size();
        const int left = build(*bin.left, vars);
        const int right = build(*bin.right, vars);
        nodes_[index].kind = kind;
        nodes_[index].left = left;
        nodes_[index].right = right;
        nodes_[index].leaf_lo = lo;
        nodes_[index].leaf_hi = leaves_.size();
        return index;
    }

    // A leaf keeps a buffer only if some and/seq ancestor can pair it with
    // an earlier event.
    void mark_buffered(int index, bool under_join) {
        Node& n = nodes_[static_cast<std::size_t>(index)];
        if (n.kind == Node::Kind::Leaf) {
            leaves_[n.leaf].buffered = under_join;
            return;
        }
        const bool join = under_join || n.kind != Node::Kind::Or;
        mark_buffered(n.left, join);
        mark_buffered(n.right, join);
    }

    static bool contains(const Node& n, std::size_t leaf) { return leaf >= n.leaf_lo && leaf < n.leaf_hi; }

    Partial from_entry(std::size_t leaf, const Entry& en) const {
        Partial p;
        p.binding = en.binding;
        p.start = en.event.start_ms;
        p.end = en.event.end_ms;
        p.seqs.assign(leaves_.size(), 0);
        p.seqs[leaf] = en.seq();
        return p;
    }

    // All partial matches of `index`. If the node covers `fixed_leaf`, that
    // leaf is bound to `fixed`; every other leaf draws from its buffer,
    // restricted to events that arrived before `fixed`.
    std::vector<Partial> enumerate(int index, std::size_t fixed_leaf, const Entry& fixed) const {
        const Node& n = nodes_[static_cast<std::size_t>(index)];
        std::vector<Partial> out;
        if (n.kind == Node::Kind::Leaf) {
            if (n.leaf == fixed_leaf) {
                out.push_back(from_entry(n.leaf, fixed));
            } else {
                for (const Entry& en : buffers_[n.leaf]) {
                    if (en.seq() < fixed.seq()) out.push_back(from_entry(n.leaf, en));
                }
            }
            return out;
        }
        const Node& l = nodes_[static_cast<std::size_t>(n.left)];
        if (n.kind == Node::Kind::Or) {
            if (contains(n, fixed_leaf)) {
                return enumerate(contains(l, fixed_leaf) ? n.left : n.right, fixed_leaf, fixed);
            }
            out = enumerate(n.left, fixed_leaf, fixed);
            auto more = enumerate(n.right, fixed_leaf, fixed);
            std::move(more.begin(), more.end(), std::back_inserter(out));
            return out;
        }
        const auto lefts = enumerate(n.left, fixed_leaf, fixed);
        if (lefts.empty()) return out;
        const auto rights = enumerate(n.right, fixed_leaf, fixed);
        for (const Partial& a : lefts) {
            for (const Partial& b : rights) {
                if (n.kind == Node::Kind::Seq && a.end > b.start) continue;
                const TimeMs start = std::min(a.start, b.start);
                const TimeMs end = std::max(a.end, b.end);
                if (is_range() && end - start > range_ms()) continue;
                if (!distinct(a, b)) continue;
                Partial joined = a;
                if (!detail::join_into(joined.binding, b.binding)) continue;
                joined.start = start;
                joined.end = end;
                for (std::size_t i = 0; i < b.seqs.size(); ++i) {
                    if (b.seqs[i] != 0) joined.seqs[i] = b.seqs[i];
                }
                out.push_back(std::move(joined));
            }
        }
        return out;
    }

    static bool distinct(const Partial& a, const Partial& b) {
        for (std::uint64_t x : a.seqs) {
            if (x == 0) continue;
            for (std::uint64_t y : b.seqs) {
                if (x == y) return false;
            }
        }
        return true;
    }

    bool window_ok(const Partial& p) const {
        return !is_range() || p.end - p.start <= range_ms();
    }

    void prune_emitted() {
        if (evicted_.empty()) return;
        if (!emitted_.empty()) {
            std::unordered_set<std::uint64_t> gone(evicted_.begin(), evicted_.end());
            for (auto it = emitted_.begin(); it != emitted_.end();) {
                bool stale = std::any_of(it->begin(), it->end(),
                                         [&](std::uint64_t s) { return gone.contains(s); });
                it = stale ? emitted_.erase(it) : std::next(it);
            }
        }
        evicted_.clear();
    }

    std::vector<Node> nodes_;
    std::vector<Leaf> leaves_;
    std::vector<std::deque<Entry>> buffers_;
    std::vector<std::uint64_t> arrivals_;
    CompiledPattern head_;
    CompiledConstraints constraints_;
    std::size_t var_count_ = 0;
    bool multi_event_ = false;
    // Contributing seq_id tuples already emitted; tuples containing an evicted
    // event can never recur and are pruned.
    std::set<std::vector<std::uint64_t>> emitted_;
    std::vector<std::uint64_t> evicted_;
};

// `a nseq b [range w]`: emits for an anchor once the watermark passes
// a.end + w without a consistent b starting in (a.end, a.end + w].
class NseqRule final : public RuleInstance {
public:
    NseqRule(std::string id, RuleAst ast, const EngineConfig& config)
        : RuleInstance(std::move(id), std::move(ast), config) {
        detail::VarTable vars;
        const auto& bin = std::get<Binary>(ast_.body->node);
        anchor_ = detail::compile_pattern(std::get<Atom>(bin.left->node).pattern, vars);
        negated_ = detail::compile_pattern(std::get<Atom>(bin.right->node).pattern, vars);
        head_ = detail::compile_pattern(ast_.head, vars);
        constraints_ = CompiledConstraints(ast_.constraints, vars);
        var_count_ = vars.size();
    }

    void on_event(const Event& e, TimeMs /*watermark*/, std::vector<Event>& /*out*/) override {
        const TimeMs w = range_ms();
        Binding neg(var_count_);
        if (negated_.match(e, neg)) {
            std::erase_if(pending_, [&](const Pending& p) {
                return e.start_ms > p.anchor.event.end_ms && e.start_ms <= p.deadline &&
                       detail::joinable(p.anchor.binding, neg);
            });
        }
        Binding pos(var_count_);
        if (anchor_.match(e, pos) && constraints_.hold(pos)) {
            const TimeMs deadline = e.end_ms + w;
            const bool witnessed = std::any_of(seen_.begin(), seen_.end(), [&](const Entry& b) {
                return b.event.start_ms > e.end_ms && b.event.start_ms <= deadline &&
                       detail::joinable(pos, b.binding);
            });
            if (!witnessed) pending_.push_back(Pending{Entry{e, pos}, deadline});
        }
        if (negated_.match(e, neg = Binding(var_count_))) {
            seen_.push_back(Entry{e, std::move(neg)});
            bound_buffer(seen_);
        }
    }

    void settle(TimeMs watermark, std::vector<Event>& out) override {
        std::erase_if(seen_, [&](const Entry& b) { return b.event.end_ms < watermark - range_ms(); });
        auto matured = std::stable_partition(pending_.begin(), pending_.end(),
                                             [&](const Pending& p) { return p.deadline >= watermark; });
        for (auto it = matured; it != pending_.end(); ++it) {
            out.push_back(detail::build_head(head_, it->anchor.binding, it->anchor.event.start_ms,
                                             it->deadline));
        }
        pending_.erase(matured, pending_.end());
    }

    std::size_t buffered() const override { return seen_.size() + pending_.size(); }

private:
    struct Pending {
        Entry anchor;
        TimeMs deadline;
    };

    CompiledPattern anchor_;
    CompiledPattern negated_;
    CompiledPattern head_;
    CompiledConstraints constraints_;
    std::size_t var_count_ = 0;
    std::deque<Pending> pending_;
    std::deque<Entry> seen_;  // negated events kept for late-arriving anchors
};

// `a kseq b [window]`: one emission per terminator preceded by at least one
// repetition; variables of the repeated pattern come from the latest one.
class KseqRule final : public RuleInstance {
public:
    KseqRule(std::string id, RuleAst ast, const EngineConfig& config)
        : RuleInstance(std::move(id), std::move(ast), config) {
        detail::VarTable vars;
        const auto& bin = std::get<Binary>(ast_.body->node);
        repeated_ = detail::compile_pattern(std::get<Atom>(bin.left->node).pattern, vars);
        terminator_ = detail::compile_pattern(std::get<Atom>(bin.right->node).pattern, vars);
        head_ = detail::compile_pattern(ast_.head, vars);
        constraints_ = CompiledConstraints(ast_.constraints, vars);
        var_count_ = vars.size();
    }

    void on_event(const Event& e, TimeMs /*watermark*/, std::vector<Event>& out) override {
        Binding rep(var_count_);
        if (repeated_.match(e, rep)) {
            buffer_.push_back(Entry{e, std::move(rep), ++arrivals_});
            if (is_count()) {
                while (!buffer_.empty() && buffer_.front().ordinal + count_n() <= arrivals_) {
                    buffer_.pop_front();
                }
            }
            bound_buffer(buffer_);
        }
        Binding term(var_count_);
        if (!terminator_.match(e, term)) return;

        const Entry* latest = nullptr;
        TimeMs earliest = e.start_ms;
        for (const Entry& a : buffer_) {
            if (a.seq() >= *e.seq_id) continue;
            if (a.event.end_ms > e.start_ms) continue;
            if (is_range() && e.end_ms - a.event.start_ms > range_ms()) continue;
            if (!detail::joinable(a.binding, term)) continue;
            latest = &a;  // buffer is in arrival order
            earliest = std::min(earliest, a.event.start_ms);
        }
        if (!latest) return;
        detail::join_into(term, latest->binding);
        if (!constraints_.hold(term)) return;
        out.push_back(detail::build_head(head_, term, earliest, e.end_ms));
    }

    void settle(TimeMs watermark, std::vector<Event>& /*out*/) override {
        std::erase_if(buffer_, [&](const Entry& a) { return a.event.end_ms < watermark - retention_; });
    }

    std::size_t buffered() const override { return buffer_.size(); }

private:
    CompiledPattern repeated_;
    CompiledPattern terminator_;
    CompiledPattern head_;
    CompiledConstraints constraints_;
    std::size_t var_count_ = 0;
    std::deque<Entry> buffer_;
    std::uint64_t arrivals_ = 0;
};

// Windowed aggregation over one variable of a source pattern.
class LambdaRule final : public RuleInstance {
public:
    LambdaRule(std::string id, RuleAst ast, const EngineConfig& config)
        : RuleInstance(std::move(id), std::move(ast), config) {
        const auto& lam = std::get<Lambda>(ast_.body->node);
        agg_ = lam.agg;
        detail::VarTable source_vars;
        source_ = detail::compile_pattern(lam.source, source_vars);
        source_var_count_ = source_vars.size();
        agg_var_ = source_vars.index(lam.agg.variable);

        detail::VarTable vars;
        target_var_ = vars.index(lam.target);
        head_ = detail::compile_pattern(ast_.head, vars);
        constraints_ = CompiledConstraints(ast_.constraints, vars);
        var_count_ = vars.size();
    }

    void on_event(const Event& e, TimeMs watermark, std::vector<Event>& out) override {
        Binding b(source_var_count_);
        if (!source_.match(e, b)) return;
        const auto& v = b[static_cast<std::size_t>(agg_var_)];
        if (!v || !v->is_number()) return;
        const double x = agg_.abs ? std::fabs(v->number()) : v->number();
        samples_.push_back(Sample{x, e.start_ms, e.end_ms, ++arrivals_});
        if (is_count()) {
            // Only the latest n arrivals count, and all of them must still be held.
            while (samples_.front().ordinal + count_n() <= arrivals_) samples_.pop_front();
            if (samples_.size() < count_n()) return;
        }
        bound_buffer(samples_);

        double sum = 0;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        std::size_t n = 0;
        TimeMs start = std::numeric_limits<TimeMs>::max();
        TimeMs end = std::numeric_limits<TimeMs>::min();
        for (const Sample& s : samples_) {
            if (is_range() && s.end <= watermark - range_ms()) continue;
            sum += s.value;
            lo = std::min(lo, s.value);
            hi = std::max(hi, s.value);
            start = std::min(start, s.start);
            end = std::max(end, s.end);
            ++n;
        }
        if (n == 0) return;
        double result = 0;
        switch (agg_.fn) {
            case AggFn::Sum: result = sum; break;
            case AggFn::Avg: result = sum / static_cast<double>(n); break;
            case AggFn::Min: result = lo; break;
            case AggFn::Max: result = hi; break;
        }
        Binding out_binding(var_count_);
        out_binding[static_cast<std::size_t>(target_var_)] = Value(result);
        if (!constraints_.hold(out_binding)) return;
        out.push_back(detail::build_head(head_, out_binding, start, end));
    }

    void settle(TimeMs watermark, std::vector<Event>& /*out*/) override {
        if (!ast_.window) return;
        if (is_range()) {
            std::erase_if(samples_, [&](const Sample& s) { return s.end <= watermark - range_ms(); });
        } else {
            std::erase_if(samples_, [&](const Sample& s) { return s.end < watermark - retention_; });
        }
    }

    std::size_t buffered() const override { return samples_.size(); }

private:
    struct Sample {
        double value;
        TimeMs start;
        TimeMs end;
        std::uint64_t ordinal;
    };

    Aggregate agg_;
    CompiledPattern source_;
    std::size_t source_var_count_ = 0;
    int agg_var_ = 0;
    int target_var_ = 0;
    CompiledPattern head_;
    CompiledConstraints constraints_;
    std::size_t var_count_ = 0;
    std::deque<Sample> samples_;
    std::uint64_t arrivals_ = 0;
};

std::unique_ptr<RuleInstance> instantiate(const std::string& id, RuleAst ast, const EngineConfig& config) {
    if (std::holds_alternative<Lambda>(ast.body->node)) {
        return std::make_unique<LambdaRule>(id, std::move(ast), config);
    }
    if (const auto* bin = std::get_if<Binary>(&ast.body->node)) {
        if (bin->op == BodyOp::Nseq) {
            if (!ast.window || ast.window->kind != WindowSpec::Kind::Range) {
                throw WindowError("nseq requires a range window");
            }
            return std::make_unique<NseqRule>(id, std::move(ast), config);
        }
        if (bin->op == BodyOp::Kseq) return std::make_unique<KseqRule>(id, std::move(ast), config);
    }
    return std::make_unique<TreeRule>(id, std::move(ast), config);
}

}  // namespace

Engine::Engine(EngineConfig config) : config_(std::move(config)) {
    if (config_.cascade_depth_limit < 1) {
        throw InvariantViolation("cascade_depth_limit must be at least 1");
    }
}

Engine::~Engine() = default;
Engine::Engine(Engine&&) noexcept = default;
Engine& Engine::operator=(Engine&&) noexcept = default;

void Engine::add_rule(const std::string& rule_id, RuleAst ast) {
    if (has_rule(rule_id)) throw DuplicateRuleId(rule_id);
    if (!ast.window && needs_buffering(*ast.body)) {
        if (!config_.default_range_ms) {
            throw MissingWindow("rule " + rule_id + " combines events and needs a [count N] or [range T] window");
        }
        ast.window = WindowSpec::range_ms(*config_.default_range_ms);
    }
    rules_.push_back(instantiate(rule_id, std::move(ast), config_));
    reindex();
}

void Engine::remove_rule(const std::string& rule_id) {
    auto it = std::find_if(rules_.begin(), rules_.end(), [&](const auto& r) { return r->id() == rule_id; });
    if (it == rules_.end()) throw UnknownRuleId(rule_id);
    rules_.erase(it);
    reindex();
}

namespace {

void collect_names(const BodyExpr& body, std::set<std::string>& names) {
    if (const auto* atom = std::get_if<Atom>(&body.node)) {
        names.insert(atom->pattern.name);
    } else if (const auto* bin = std::get_if<Binary>(&body.node)) {
        collect_names(*bin->left, names);
        collect_names(*bin->right, names);
    } else if (const auto* lam = std::get_if<Lambda>(&body.node)) {
        names.insert(lam->source.name);
    }
}

}  // namespace

void Engine::reindex() {
    by_name_.clear();
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        std::set<std::string> names;
        collect_names(*rules_[i]->ast().body, names);
        for (const auto& name : names) by_name_[name].push_back(i);
    }
}

bool Engine::has_rule(const std::string& rule_id) const {
    return std::any_of(rules_.begin(), rules_.end(), [&](const auto& r) { return r->id() == rule_id; });
}

std::vector<std::string> Engine::rule_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : rules_) ids.push_back(r->id());
    return ids;
}

const RuleAst& Engine::rule(const std::string& rule_id) const {
    for (const auto& r : rules_) {
        if (r->id() == rule_id) return r->ast();
    }
    throw UnknownRuleId(rule_id);
}

std::size_t Engine::buffered_events() const {
    std::size_t n = 0;
    for (const auto& r : rules_) n += r->buffered();
    return n;
}

std::vector<Event> Engine::push_event(Event e) {
    if (e.start_ms > e.end_ms) {
        throw TimeOrderError("event " + e.name + " starts after it ends");
    }
    if (e.start_ms < 0) throw TimeOrderError("event " + e.name + " has a negative timestamp");
    std::vector<Event> out;
    ingest(std::move(e), 0, out);
    return out;
}

std::vector<Event> Engine::advance_time(TimeMs t_ms) {
    if (t_ms < watermark_) throw TimeRegression(t_ms, watermark_);
    watermark_ = t_ms;
    std::vector<Event> out;
    for (auto& [rule_index, event] : settle()) emit(std::move(event), 1, out);
    return out;
}

std::uint64_t Engine::ingest(Event e, int depth, std::vector<Event>& out) {
    const std::uint64_t seq = next_seq_++;
    e.seq_id = seq;
    const bool advanced = e.end_ms > watermark_;
    watermark_ = std::max(watermark_, e.end_ms);

    // Rules without a pattern on this name cannot react to it, and their
    // state only changes with the watermark.
    static const std::vector<std::size_t> kNone;
    auto it = by_name_.find(e.name);
    const std::vector<std::size_t>& interested = it == by_name_.end() ? kNone : it->second;

    std::vector<Event> direct;
    for (std::size_t i : interested) rules_[i]->on_event(e, watermark_, direct);
    for (Event& d : direct) emit(std::move(d), depth + 1, out);

    for (auto& [rule_index, event] : settle(advanced ? nullptr : &interested)) emit(std::move(event), depth + 1, out);
    return seq;
}

void Engine::emit(Event e, int depth, std::vector<Event>& out) {
    if (depth > config_.cascade_depth_limit) {
        if (diagnostics_.size() < kMaxDiagnostics) {
            diagnostics_.push_back(Diagnostic{Diagnostic::Kind::CascadeDepthExceeded, "",
                                              "dropped " + format_event(e) + " at cascade depth " +
                                                  std::to_string(depth)});
        }
        return;
    }
    const std::size_t slot = out.size();
    out.push_back(e);
    out[slot].seq_id = ingest(std::move(e), depth, out);
}

std::vector<std::pair<std::size_t, Event>> Engine::settle(const std::vector<std::size_t>* only) {
    std::vector<std::pair<std::size_t, Event>> deferred;
    const std::size_t n = only ? only->size() : rules_.size();
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = only ? (*only)[k] : k;
        std::vector<Event> produced;
        rules_[i]->settle(watermark_, produced);
        for (Event& ev : produced) deferred.emplace_back(i, std::move(ev));
        for (Diagnostic& d : rules_[i]->take_diagnostics()) {
            if (diagnostics_.size() < kMaxDiagnostics) diagnostics_.push_back(std::move(d));
        }
    }
    return deferred;
}

}  // namespace microcep
