#include "microcep/bench.hpp"

#include <algorithm>
#include <chrono>
#include <limits>

#include "microcep/engine.hpp"
#include "microcep/errors.hpp"

namespace microcep::scenario {

std::string_view bench_op_name(BenchOp op) {
    switch (op) {
        case BenchOp::Atom: return "atom";
        case BenchOp::And: return "and";
        case BenchOp::Seq: return "seq";
        case BenchOp::Or: return "or";
        case BenchOp::Nseq: return "nseq";
        case BenchOp::Kseq: return "kseq";
        case BenchOp::Lambda: return "lambda";
    }
    return "?";
}

std::optional<BenchOp> parse_bench_op(std::string_view name) {
    for (BenchOp op : kBenchOps) {
        if (bench_op_name(op) == name) return op;
    }
    return std::nullopt;
}

std::vector<std::pair<std::string, std::string>> bench_rules(BenchOp op, int n_rules) {
    std::vector<std::pair<std::string, std::string>> rules;
    for (int i = 0; i < n_rules; ++i) {
        const std::string head = "out" + std::to_string(i);
        std::string body;
        switch (op) {
            case BenchOp::Atom: body = "[_,_](X) :- x[_,_](X) where(X > -1)."; break;
            case BenchOp::And: body = "[_,_](X, Y) :- a[_,_](X) and b[_,_](Y) [count 1]."; break;
            // Each x closes a sequence with the x before it.
            case BenchOp::Seq: body = "[_,_](X, Y) :- x[_,_](X) seq x[_,_](Y) [count 2]."; break;
            case BenchOp::Or: body = "[_,_](X) :- a[_,_](X) or b[_,_](X)."; break;
            case BenchOp::Nseq: body = "[_,_](X) :- a[_,_](X) nseq b[_,_](Y) [range 5 ms]."; break;
            case BenchOp::Kseq: body = "[_,_](X) :- x[_,_](X) kseq x[_,_](Y) [count 2]."; break;
            case BenchOp::Lambda: body = "[_,_](Y) :- lambda { x(X), *, Y := avg(X) } [count 5]."; break;
        }
        rules.emplace_back("r" + std::to_string(i), head + body);
    }
    return rules;
}

std::vector<Event> bench_stream(BenchOp op, std::size_t n_events) {
    std::vector<Event> stream;
    stream.reserve(n_events);
    for (std::size_t i = 0; i < n_events; ++i) {
        Event e;
        const auto t = static_cast<TimeMs>(i) * 10;
        e.start_ms = e.end_ms = t;
        const bool odd = (i % 2) != 0;
        switch (op) {
            case BenchOp::Atom:
            case BenchOp::Seq:
            case BenchOp::Kseq:
            case BenchOp::Lambda:
                e.name = "x";
                break;
            case BenchOp::And:
            case BenchOp::Or:
                e.name = odd ? "b" : "a";
                break;
            case BenchOp::Nseq:
                // Each a matures when the next one moves the watermark past it.
                e.name = "a";
                break;
        }
        e.args.emplace_back(static_cast<double>(i % 100));
        stream.push_back(std::move(e));
    }
    return stream;
}

namespace {

struct Workload {
    std::vector<std::pair<std::string, std::string>> rules;
    std::vector<RuleAst> asts;
};

Workload workload(BenchOp op, int n_rules) {
    Workload w;
    w.rules = bench_rules(op, n_rules);
    for (const auto& [id, text] : w.rules) w.asts.push_back(parse_rule(text));
    return w;
}

// Seconds for one fresh engine to take the whole stream.
double time_once(const Workload& w, const std::vector<Event>& stream, std::size_t& emissions) {
    Engine engine;
    for (std::size_t i = 0; i < w.rules.size(); ++i) engine.add_rule(w.rules[i].first, w.asts[i]);
    emissions = 0;
    const auto start = std::chrono::steady_clock::now();
    for (const Event& e : stream) emissions += engine.push_event(e).size();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(stop - start).count();
}

void finish(BenchResult& r) {
    r.events_per_s = r.seconds > 0 ? static_cast<double>(r.events) / r.seconds : 0.0;
}

}  // namespace

BenchResult bench_throughput(BenchOp op, int n_rules, std::size_t n_events, int repetitions) {
    return bench_sweep(op, {n_rules}, n_events, repetitions).front();
}

std::vector<BenchResult> bench_sweep(BenchOp op, const std::vector<int>& rule_counts, std::size_t n_events,
                                     int repetitions) {
    std::vector<BenchResult> results(rule_counts.size());
    std::vector<Workload> loads;
    for (std::size_t i = 0; i < rule_counts.size(); ++i) {
        results[i].op = op;
        results[i].rules = rule_counts[i];
        results[i].events = n_events;
        results[i].seconds = std::numeric_limits<double>::infinity();
        loads.push_back(workload(op, rule_counts[i]));
    }
    if (n_events == 0) {
        for (auto& r : results) r.seconds = 0.0;
        return results;
    }
    const std::vector<Event> stream = bench_stream(op, n_events);
    // Repetitions go round-robin over the points so that a slow stretch of
    // the machine does not land on a single rule count.
    for (int rep = 0; rep < std::max(1, repetitions); ++rep) {
        for (std::size_t i = 0; i < loads.size(); ++i) {
            std::size_t emissions = 0;
            results[i].seconds = std::min(results[i].seconds, time_once(loads[i], stream, emissions));
            results[i].emissions = emissions;
        }
    }
    for (auto& r : results) finish(r);
    return results;
}

std::string bench_csv_header() { return "op,rules,events_per_s"; }

std::string bench_csv_row(const BenchResult& r) {
    return std::string(bench_op_name(r.op)) + "," + std::to_string(r.rules) + "," + format_number(r.events_per_s);
}

}  // namespace microcep::scenario
