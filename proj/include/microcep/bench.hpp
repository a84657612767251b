#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "microcep/event.hpp"

namespace microcep::scenario {

enum class BenchOp { Atom, And, Seq, Or, Nseq, Kseq, Lambda };

inline constexpr BenchOp kBenchOps[] = {BenchOp::Atom, BenchOp::And,  BenchOp::Seq,   BenchOp::Or,
                                        BenchOp::Nseq, BenchOp::Kseq, BenchOp::Lambda};

std::string_view bench_op_name(BenchOp op);
std::optional<BenchOp> parse_bench_op(std::string_view name);

// `n_rules` rules of one operator kind as (id, text); heads are distinct.
std::vector<std::pair<std::string, std::string>> bench_rules(BenchOp op, int n_rules);

// Synthetic stream on which, past the first event or two, every event fires
// every rule once.
std::vector<Event> bench_stream(BenchOp op, std::size_t n_events);

struct BenchResult {
    BenchOp op = BenchOp::Atom;
    int rules = 0;
    std::size_t events = 0;
    std::size_t emissions = 0;
    double seconds = 0.0;       // fastest repetition
    double events_per_s = 0.0;  // 0 when no events were processed
};

// Wall-clock throughput of push_event over the stream, from the fastest of
// `repetitions` fresh engines.
BenchResult bench_throughput(BenchOp op, int n_rules, std::size_t n_events = 10000, int repetitions = 7);

// One result per rule count, repetitions interleaved across the counts.
std::vector<BenchResult> bench_sweep(BenchOp op, const std::vector<int>& rule_counts, std::size_t n_events = 10000,
                                     int repetitions = 7);

std::string bench_csv_header();
std::string bench_csv_row(const BenchResult& r);

}  // namespace microcep::scenario
