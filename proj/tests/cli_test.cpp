#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

namespace {

const std::string kCli = MICROCEP_CLI;
const std::filesystem::path kSource = MICROCEP_SOURCE_DIR;

struct Outcome {
    int rc = -1;
    std::string out;
};

Outcome run(const std::string& args) {
    Outcome r;
    FILE* p = ::popen((kCli + " " + args + " 2>&1").c_str(), "r");
    if (!p) return r;
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
    const int status = ::pclose(p);
    r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("microcep_cli_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

int connect_to(int port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd);
        return -1;
    }
    return fd;
}

// Sends `request` and reads until `until` has been seen `times` times, the
// peer closes, or two seconds pass without data.
std::string exchange(int fd, const std::string& request, const std::string& until, int times = 1) {
    timeval tv{2, 0};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::send(fd, request.data(), request.size(), MSG_NOSIGNAL);
    std::string got;
    char buf[4096];
    auto seen = [&] {
        int n = 0;
        for (auto pos = got.find(until); pos != std::string::npos; pos = got.find(until, pos + until.size())) ++n;
        return n;
    };
    while (seen() < times) {
        const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
        if (n <= 0) break;
        got.append(buf, static_cast<std::size_t>(n));
    }
    return got;
}

// Kills a child left running by a failed assertion.
struct Reaper {
    pid_t pid = -1;
    ~Reaper() {
        if (pid > 0) {
            ::kill(pid, SIGKILL);
            ::waitpid(pid, nullptr, 0);
        }
    }
};

}  // namespace

TEST(Cli, RunWritesOutputs) {
    const auto dir = scratch("run");
    const Outcome r = run("run --scenario " + (kSource / "scenarios" / "safety.json").string() + " --out " + dir.string());
    ASSERT_EQ(r.rc, 0) << r.out;
    EXPECT_NE(r.out.find("backup emissions:"), std::string::npos);
    for (const char* f : {"trace.jsonl", "series_anomaly.csv", "series_warning.csv", "series_occupancy.csv",
                          "series_temperature.csv"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    std::filesystem::remove_all(dir);
}

TEST(Cli, BenchAppendsCsv) {
    const auto dir = scratch("bench");
    const auto csv = (dir / "bench.csv").string();
    ASSERT_EQ(run("bench --rules 1,2 --events 200 --op and --repetitions 1 --csv " + csv).rc, 0);
    ASSERT_EQ(run("bench --rules 1 --events 200 --op seq --repetitions 1 --csv " + csv).rc, 0);
    std::ifstream in(csv);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0], "op,rules,events_per_s");
    EXPECT_TRUE(std::regex_match(lines[1], std::regex(R"(and,1,[0-9.e+]+)"))) << lines[1];
    EXPECT_TRUE(std::regex_match(lines[3], std::regex(R"(seq,1,[0-9.e+]+)"))) << lines[3];
    std::filesystem::remove_all(dir);
}

TEST(Cli, InferPrintsScore) {
    const Outcome r = run("infer --model " + (kSource / "models" / "occupancy.json").string() + " --input 1,1,1,1");
    ASSERT_EQ(r.rc, 0) << r.out;
    EXPECT_GT(std::stod(r.out), 0.0);
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run("").rc, 1);
    EXPECT_EQ(run("bench --op xor").rc, 1);
    EXPECT_EQ(run("serve").rc, 1);
    EXPECT_EQ(run("infer --model " + (kSource / "models" / "occupancy.json").string() + " --input 1,x").rc, 1);
    EXPECT_EQ(run("infer --model " + (kSource / "models" / "occupancy.json").string() + " --input 1,2").rc, 2);
    EXPECT_EQ(run("--help").rc, 0);
}

TEST(Cli, ServeAnswersAndStopsOnSigterm) {
    const auto dir = scratch("serve");
    {
        std::ofstream(dir / "index.html") << "<html>console</html>";
        std::ofstream(dir / "rules.txt") << "% node rules\nr1 hot[_,_](X) :- t[_,_](X) where(X>30).\n";
        std::ofstream(dir / "routes.txt") << "hot log:" << (dir / "hot.log").string() << "\n";
    }
    int err[2];
    ASSERT_EQ(::pipe(err), 0);
    const pid_t pid = ::fork();
    ASSERT_GE(pid, 0);
    if (pid == 0) {
        ::dup2(err[1], 2);
        ::close(err[0]);
        const std::string s = dir.string();
        const std::string rules = (dir / "rules.txt").string(), routes = (dir / "routes.txt").string();
        ::execl(kCli.c_str(), kCli.c_str(), "serve", "--port", "0", "--ws-port", "0", "--static-dir", s.c_str(),
                "--rules", rules.c_str(), "--routes", routes.c_str(), "--name", "edge", nullptr);
        ::_exit(127);
    }
    Reaper reaper{pid};
    ::close(err[1]);
    std::string banner;
    char c;
    while (::read(err[0], &c, 1) == 1 && c != '\n') banner += c;
    std::smatch m;
    ASSERT_TRUE(std::regex_search(banner, m, std::regex(R"(edge listening on 127\.0\.0\.1:(\d+) \(websocket (\d+)\))")))
        << banner;
    const int port = std::stoi(m[1]), ws_port = std::stoi(m[2]);

    const int fd = connect_to(port);
    ASSERT_GE(fd, 0);
    EXPECT_EQ(exchange(fd, "PING\n", "\n"), "PONG\n");
    const std::string reply = exchange(fd, "SUB hot\nEVENT t[5, 5](31)\n", "\n", 3);
    EXPECT_EQ(reply, "OK\nOK\nEMIT hot[5, 5](31)\n");
    ::close(fd);

    const int http = connect_to(ws_port);
    ASSERT_GE(http, 0);
    const std::string page = exchange(http, "GET / HTTP/1.1\r\nHost: x\r\n\r\n", "</html>");
    EXPECT_EQ(page.rfind("HTTP/1.1 200", 0), 0u) << page;
    EXPECT_NE(page.find("<html>console</html>"), std::string::npos);
    ::close(http);

    ::kill(pid, SIGTERM);
    int status = 0;
    ::waitpid(pid, &status, 0);
    reaper.pid = -1;
    ::close(err[0]);
    EXPECT_TRUE(WIFEXITED(status));
    EXPECT_EQ(WEXITSTATUS(status), 0);

    std::ifstream log(dir / "hot.log");
    std::string line;
    std::getline(log, line);
    EXPECT_EQ(line, "hot[5, 5](31)");
    std::filesystem::remove_all(dir);
}
