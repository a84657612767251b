// microcep: serve a node, run the safety scenario, benchmark the engine,
// or run one inference.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "microcep/bench.hpp"
#include "microcep/control.hpp"
#include "microcep/errors.hpp"
#include "microcep/scenario.hpp"
#include "microcep/server.hpp"

using namespace microcep;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

struct ServeArgs {
    int port = 7000;
    int ws_port = -1;
    std::vector<std::string> models;
    std::string rules;
    std::string routes;
    std::string static_dir;
    std::string led_dir = ".";
    std::string name = "node";
    std::string bind = "127.0.0.1";
    TimeMs activation_window_ms = 10000;
};

int serve(const ServeArgs& a) {
    server::FileActuators actuators(a.led_dir);
    control::NodeConfig cfg;
    cfg.name = a.name;
    cfg.activation_window_ms = a.activation_window_ms;
    control::Node node(cfg, actuators);
    for (const auto& path : a.models) node.models().add(tinyol::load_model_file(path));
    if (!a.rules.empty()) control::load_rules_text(node, read_file(a.rules));
    if (!a.routes.empty()) control::load_routes_text(node, read_file(a.routes));

    server::ServerOptions opts;
    opts.port = a.port;
    opts.ws_port = a.ws_port;
    opts.static_dir = a.static_dir;
    opts.bind_address = a.bind;
    server::Server srv(node, opts);
    srv.start();
    std::cerr << a.name << " listening on " << a.bind << ":" << srv.port();
    if (srv.ws_port() >= 0) std::cerr << " (websocket " << srv.ws_port() << ")";
    std::cerr << std::endl;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) ::pause();
    srv.stop();
    return 0;
}

int run(const std::string& scenario_path, const std::string& out_dir) {
    const scenario::ScenarioConfig cfg = scenario::load_config_file(scenario_path);
    const scenario::ScenarioResult result = scenario::run_scenario(cfg);
    scenario::write_outputs(result, out_dir);
    std::size_t warnings = 0, backups = 0;
    for (const auto& e : result.trace) {
        if (e.kind != "emitted") continue;
        if (e.text.rfind("warning[", 0) == 0) ++warnings;
        if (e.text.rfind("backup[", 0) == 0) ++backups;
    }
    std::cout << "trace entries: " << result.trace.size() << "\n"
              << "warning emissions: " << warnings << "\n"
              << "backup emissions: " << backups << "\n"
              << "fine-tune loss: " << result.fine_tune.first_loss_mean << " -> " << result.fine_tune.last_loss_mean
              << "\n";
    for (const auto& d : result.diagnostics) std::cerr << "diagnostic: " << d << "\n";
    return 0;
}

int bench(const std::vector<int>& rule_counts, std::size_t events, const std::string& op_name, const std::string& csv,
          int repetitions) {
    std::vector<scenario::BenchOp> ops;
    if (op_name == "all") {
        ops.assign(std::begin(scenario::kBenchOps), std::end(scenario::kBenchOps));
    } else {
        ops.push_back(*scenario::parse_bench_op(op_name));
    }
    std::ofstream out;
    if (!csv.empty()) {
        const bool fresh = !std::filesystem::exists(csv) || std::filesystem::file_size(csv) == 0;
        out.open(csv, std::ios::app);
        if (!out) throw Error("io", "cannot write " + csv);
        if (fresh) out << scenario::bench_csv_header() << "\n";
    }
    for (auto op : ops) {
        for (const auto& r : scenario::bench_sweep(op, rule_counts, events, repetitions)) {
            const int n = r.rules;
            std::cout << scenario::bench_op_name(op) << " rules=" << n << " events=" << r.events
                      << " events_per_s=" << static_cast<long long>(r.events_per_s) << "\n";
            if (out.is_open()) out << scenario::bench_csv_row(r) << "\n";
        }
    }
    return 0;
}

int infer(const std::string& model_path, const std::string& input) {
    const tinyol::Model m = tinyol::load_model_file(model_path);
    std::vector<double> values;
    std::stringstream ss(input);
    for (std::string item; std::getline(ss, item, ',');) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos) {
            throw CLI::ValidationError("--input", "not a number: '" + item + "'");
        }
        values.push_back(v);
    }
    const tinyol::Vector x = Eigen::Map<tinyol::Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    const tinyol::Vector y = tinyol::infer(m, x);
    for (Eigen::Index i = 0; i < y.size(); ++i) std::cout << (i ? "," : "") << format_number(y(i));
    std::cout << "\n";
    if (m.loss == tinyol::Loss::Mse && m.output_dim() == m.input_dim() && m.input_dim() > 1) {
        std::cout << "anomaly_score " << format_number(tinyol::anomaly_score(m, x)) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Micro CEP engine with on-device learning"};
    app.require_subcommand(1);

    ServeArgs sa;
    auto* serve_cmd = app.add_subcommand("serve", "Serve one node over TCP (and optionally WebSocket)");
    serve_cmd->add_option("--port", sa.port, "TCP port for the line protocol")->required()->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--ws-port", sa.ws_port, "WebSocket and static asset port")->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--model", sa.models, "Model file to host (repeatable)")->check(CLI::ExistingFile);
    serve_cmd->add_option("--rules", sa.rules, "File of '<id> <rule>' lines")->check(CLI::ExistingFile);
    serve_cmd->add_option("--routes", sa.routes, "File of '<event> <sink>' lines")->check(CLI::ExistingFile);
    serve_cmd->add_option("--static-dir", sa.static_dir, "Directory served over the WebSocket port")
        ->check(CLI::ExistingDirectory);
    serve_cmd->add_option("--led-dir", sa.led_dir, "Where led sinks write <name>.led")->check(CLI::ExistingDirectory);
    serve_cmd->add_option("--name", sa.name, "Node name");
    serve_cmd->add_option("--bind", sa.bind, "Bind address");
    serve_cmd->add_option("--activation-window-ms", sa.activation_window_ms, "Gated model window")
        ->check(CLI::NonNegativeNumber);

    std::string scenario_path, out_dir;
    auto* run_cmd = app.add_subcommand("run", "Run the two-node safety scenario");
    run_cmd->add_option("--scenario", scenario_path, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
    run_cmd->add_option("--out", out_dir, "Output directory")->required();

    std::vector<int> rule_counts{1};
    std::size_t events = 10000;
    std::string op = "and";
    std::string csv;
    int repetitions = 7;
    auto* bench_cmd = app.add_subcommand("bench", "Measure engine throughput");
    bench_cmd->add_option("--rules", rule_counts, "Rule counts (comma separated)")
        ->delimiter(',')
        ->check(CLI::Range(1, 100000));
    bench_cmd->add_option("--events", events, "Events per run");
    bench_cmd->add_option("--op", op, "Operator kind or 'all'")
        ->check(CLI::IsMember({"atom", "and", "seq", "or", "nseq", "kseq", "lambda", "all"}));
    bench_cmd->add_option("--csv", csv, "Append op,rules,events_per_s rows");
    bench_cmd->add_option("--repetitions", repetitions, "Runs per point (fastest is kept)")->check(CLI::Range(1, 1000));

    std::string model_path, input;
    auto* infer_cmd = app.add_subcommand("infer", "Run one inference");
    infer_cmd->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--input", input, "Comma separated input values")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*serve_cmd) return serve(sa);
        if (*run_cmd) return run(scenario_path, out_dir);
        if (*bench_cmd) return bench(rule_counts, events, op, csv, repetitions);
        if (*infer_cmd) return infer(model_path, input);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
