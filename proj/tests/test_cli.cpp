// End-to-end tests driving the installed ess binary through a shell.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kBin = ESS_BINARY_PATH;
const fs::path kDemo = fs::path(ESS_SOURCE_DIR) / "demo";
const fs::path kDemoCsv = kDemo / "data" / "demo.csv";
const fs::path kSimPkg = fs::path(ESS_SOURCE_DIR) / "tests" / "fixtures" / "sim_pkg";

struct RunResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

RunResult run_cli(const std::string& args, const std::string& prefix = "") {
    const auto out_path = fs::temp_directory_path() / ("ess_cli_out_" + std::to_string(::getpid()));
    const auto err_path = fs::temp_directory_path() / ("ess_cli_err_" + std::to_string(::getpid()));
    const std::string command =
        prefix + kBin + " " + args + " > " + out_path.string() + " 2> " + err_path.string();
    const int status = std::system(command.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = slurp(out_path);
    result.err = slurp(err_path);
    fs::remove(out_path);
    fs::remove(err_path);
    return result;
}

fs::path temp_dir(const std::string& tag) {
    const auto dir =
        fs::temp_directory_path() / ("ess_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
}

}  // namespace

TEST_CASE("validate accepts the demo package silently") {
    const auto result = run_cli("validate " + kDemo.string());
    CHECK(result.exit_code == 0);
    CHECK(result.out.empty());
    CHECK(result.err.empty());
}

TEST_CASE("validate reports a rule cycle with exit 1") {
    const auto dir = temp_dir("cycle");
    fs::copy_file(kDemo / "kb.json", dir / "kb.json");
    write_file(dir / "rules.frl",
               "RULE r1: IF waste IS high THEN action IS optimize;\n"
               "RULE r2: IF action IS optimize THEN waste IS high;\n");
    const auto result = run_cli("validate " + dir.string());
    CHECK(result.exit_code == 1);
    CHECK(result.err.find("ERROR") != std::string::npos);
    CHECK(result.err.find("cyclic variable dependency") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("validate of a nonexistent path is a usage error") {
    const auto result = run_cli("validate /nonexistent/package");
    CHECK(result.exit_code == 2);
    CHECK(result.err.find("ERROR") != std::string::npos);
}

TEST_CASE("analyze writes a three-window json report") {
    const auto out = fs::temp_directory_path() / ("ess_cli_report_" + std::to_string(::getpid()));
    const auto result = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string() +
                                " --out " + out.string());
    REQUIRE(result.exit_code == 0);
    const auto report = json::parse(slurp(out));
    CHECK(report["windows"].size() == 3);
    CHECK(report["package"]["machine"] == "cnc_mill_1");
    fs::remove(out);
}

TEST_CASE("analyze renders markdown on request") {
    const auto result = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string() +
                                " --format markdown");
    REQUIRE(result.exit_code == 0);
    CHECK(result.out.find("# Energy assessment report") != std::string::npos);
    CHECK(result.out.find("## EnPIs") != std::string::npos);
}

TEST_CASE("analyze without --data is a usage error") {
    const auto result = run_cli("analyze " + kDemo.string());
    CHECK(result.exit_code == 2);
}

TEST_CASE("a csv with no parseable rows still exits 0 with warnings") {
    const auto csv = fs::temp_directory_path() / ("ess_cli_junk_" + std::to_string(::getpid()) + ".csv");
    write_file(csv, "timestamp,data_point,value\nnot,really,numbers\nmore,junk,rows\n");
    const auto result = run_cli("analyze " + kDemo.string() + " --data " + csv.string());
    CHECK(result.exit_code == 0);
    CHECK(result.err.find("skipped 2") != std::string::npos);
    const auto report = json::parse(result.out);
    CHECK(report["windows"].empty());
    fs::remove(csv);
}

TEST_CASE("analyze is byte-identical across runs") {
    const auto a = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string());
    const auto b = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string());
    REQUIRE(a.exit_code == 0);
    CHECK(!a.out.empty());
    CHECK(a.out == b.out);
}

TEST_CASE("window and norms overrides change the report") {
    const auto result = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string() +
                                " --window-s 1800 --norms product");
    REQUIRE(result.exit_code == 0);
    const auto report = json::parse(result.out);
    CHECK(report["config"]["window_length_s"] == 1800);
    CHECK(report["config"]["norms"] == "product");
    CHECK(report["windows"].size() == 6);
}

TEST_CASE("monitor replaying the demo matches analyze window for window") {
    const auto ndjson_path =
        fs::temp_directory_path() / ("ess_cli_ndjson_" + std::to_string(::getpid()));
    const auto monitor =
        run_cli("monitor " + kDemo.string() + " --out " + ndjson_path.string());
    REQUIRE(monitor.exit_code == 0);

    const auto analyze = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string());
    REQUIRE(analyze.exit_code == 0);
    const auto report = json::parse(analyze.out);

    std::istringstream lines(slurp(ndjson_path));
    std::vector<json> streamed;
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty()) streamed.push_back(json::parse(line));
    }
    REQUIRE(streamed.size() == report["windows"].size());
    for (size_t i = 0; i < streamed.size(); ++i) {
        CHECK(streamed[i] == report["windows"][i]);
    }
    fs::remove(ndjson_path);
}

TEST_CASE("monitor with the simulator emits complete windows and a partial tail") {
    const auto ndjson_path =
        fs::temp_directory_path() / ("ess_cli_sim_" + std::to_string(::getpid()));
    const auto result = run_cli("monitor " + kSimPkg.string() + " --duration 3.4 --out " +
                                ndjson_path.string());
    REQUIRE(result.exit_code == 0);

    std::istringstream lines(slurp(ndjson_path));
    std::vector<json> windows;
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty()) windows.push_back(json::parse(line));
    }
    REQUIRE(windows.size() >= 2);
    size_t complete = 0;
    for (const auto& w : windows) {
        if (!w["window"].contains("partial")) ++complete;
        CHECK(w.contains("enpis"));
        CHECK(w.contains("outputs"));
    }
    CHECK(complete >= 2);
    // interrupting mid-window flushes the tail as partial
    CHECK(windows.back()["window"].value("partial", false));
    fs::remove(ndjson_path);
}

TEST_CASE("analyze on an invalid package fails validation with exit 1") {
    const auto dir = temp_dir("invalid_analyze");
    fs::copy_file(kDemo / "kb.json", dir / "kb.json");
    write_file(dir / "rules.frl", "RULE r1: IF ghost IS high THEN action IS optimize;\n");
    const auto result =
        run_cli("analyze " + dir.string() + " --data " + kDemoCsv.string());
    CHECK(result.exit_code == 1);
    CHECK(result.err.find("ghost") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("ESS_LOG=info reports the analyzed window count") {
    const auto result = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string() +
                                " --out /dev/null");
    CHECK(result.err.empty());
    setenv("ESS_LOG", "info", 1);
    const auto verbose = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string() +
                                 " --out /dev/null");
    unsetenv("ESS_LOG");
    CHECK(verbose.err.find("analyzed 3 window(s)") != std::string::npos);
}

TEST_CASE("interrupt mid-window flushes a partial report") {
    const auto ndjson_path =
        fs::temp_directory_path() / ("ess_cli_int_" + std::to_string(::getpid()));
    // timeout delivers SIGINT and reports 124 even though ess shuts down cleanly
    const auto result = run_cli("monitor " + kSimPkg.string() + " --window-s 60 --out " +
                                ndjson_path.string(), "timeout -s INT 2 ");
    CHECK((result.exit_code == 0 || result.exit_code == 124));
    std::istringstream lines(slurp(ndjson_path));
    std::vector<json> windows;
    std::string line;
    while (std::getline(lines, line)) {
        if (!line.empty()) windows.push_back(json::parse(line));
    }
    REQUIRE(windows.size() == 1);
    CHECK(windows[0]["window"].value("partial", false));
    fs::remove(ndjson_path);
}

TEST_CASE("plotdata format and unknown formats through the CLI") {
    const auto plot = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string() +
                              " --format plotdata");
    REQUIRE(plot.exit_code == 0);
    CHECK(plot.out.find("# enpis.csv") != std::string::npos);
    CHECK(plot.out.find("# membership.csv") != std::string::npos);

    const auto bogus = run_cli("analyze " + kDemo.string() + " --data " + kDemoCsv.string() +
                               " --format yaml");
    CHECK(bogus.exit_code == 2);
}

TEST_CASE("a broken connector ends its stream without killing the monitor") {
    const auto dir = temp_dir("broken_conn");
    std::string kb_text = slurp(kDemo / "kb.json");
    const auto pos = kb_text.find("data/demo.csv");
    REQUIRE(pos != std::string::npos);
    kb_text.replace(pos, 13, "data/gone.csv");  // first binding points nowhere
    write_file(dir / "kb.json", kb_text);
    fs::copy_file(kDemo / "rules.frl", dir / "rules.frl");
    fs::create_directories(dir / "data");
    fs::copy_file(kDemoCsv, dir / "data" / "demo.csv");  // second binding still works

    const auto result = run_cli("monitor " + dir.string() + " --duration 3");
    CHECK(result.exit_code == 0);
    CHECK(result.err.find("ERROR connector power") != std::string::npos);
    fs::remove_all(dir);
}
