#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include "emodel/io.hpp"

using namespace emodel;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::path(::testing::TempDir()) / "emodel_io";
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void dump(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string config_error(const json& doc) {
    try {
        parse_config_json(doc);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

json scalar_explicit() {
    return json::parse(R"({
      "model": {"sectors": [{"id": 0, "dim": 1, "label": "ready"}, {"id": 1, "dim": 1, "label": "fired"}],
                "jumps": [{"from": 0, "to": 1, "matrix": [[[1, 0]]]}]},
      "run": {"t_max": 3, "seed": 5}
    })");
}

std::vector<Trajectory> sample(const ParsedConfig& p, std::size_t n, std::uint64_t seed, RunOptions o) {
    EnsembleOptions e;
    e.workers = 2;
    return run_ensemble(p.model, p.initial, n, o, seed, e).runs;
}

int cli(const std::string& args) {
    const std::string cmd = std::string("\"") + EMODEL_CLI + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kConfigs = EMODEL_CONFIG_DIR;

} // namespace

TEST(ParseConfig, MinimalScalarIsValid) {
    const auto p = parse_config_json(scalar_explicit());
    EXPECT_EQ(p.model.sector_count(), 2u);
    EXPECT_EQ(p.initial.sector, 0u);
    EXPECT_EQ(p.config.run.t_max, 3.0);
    EXPECT_EQ(p.hash.size(), 64u);
    const auto b = parse_config(kConfigs + "/two_sector_scalar.json");
    EXPECT_EQ(b.model.sector_count(), 2u);
    EXPECT_EQ(b.config.run.seed, 42u);
}

TEST(ParseConfig, DiagonalJumpCitesNonEventRule) {
    json doc = scalar_explicit();
    doc["model"]["jumps"].push_back({{"from", 1}, {"to", 1}, {"matrix", json::parse("[[[1, 0]]]")}});
    const std::string msg = config_error(doc);
    EXPECT_NE(msg.find("diagonal jump"), std::string::npos) << msg;
    EXPECT_NE(msg.find("non-event"), std::string::npos) << msg;
}

TEST(ParseConfig, GrwBuiltinHasEightLabels) {
    const auto p = parse_config_json(
        json::parse(R"({"builtin": {"name": "grw_lattice", "params": {"M": 8, "sigma": 1, "lambda": 1, "J": 1}}})"));
    ASSERT_TRUE(p.reduced.has_value());
    EXPECT_EQ(p.reduced->jumps.size(), 8u);
    EXPECT_TRUE(p.model.is_label_record());
    std::set<std::string> labels;
    for (const auto& ch : p.model.channels()) labels.insert(ch.label);
    EXPECT_EQ(labels.size(), 8u);
}

TEST(ParseConfig, ReportsEveryProblem) {
    json doc = scalar_explicit();
    doc["colour"] = "blue";
    doc["run"]["step"] = -1;
    doc["model"]["jumps"].push_back({{"from", 0}, {"to", 0}, {"matrix", json::parse("[[[1, 0]]]")}});
    doc["model"]["jumps"].push_back({{"from", 0}, {"to", 7}, {"matrix", json::parse("[[[1, 0]]]")}});
    const std::string msg = config_error(doc);
    EXPECT_NE(msg.find("colour"), std::string::npos) << msg;
    EXPECT_NE(msg.find("step"), std::string::npos) << msg;
    EXPECT_NE(msg.find("diagonal jump"), std::string::npos) << msg;
    EXPECT_NE(msg.find("7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("problem(s)"), std::string::npos);
}

TEST(ParseConfig, SchemaErrors) {
    EXPECT_FALSE(config_error(json::array()).empty());
    EXPECT_FALSE(config_error(json::object()).empty());
    EXPECT_FALSE(config_error(json::parse(R"({"builtin": "no_such_model"})")).empty());
    EXPECT_FALSE(config_error(json::parse(R"({"builtin": {"name": "grw_lattice", "params": {"M": 8, "tau": 1}}})")).empty());
    json doc = scalar_explicit();
    doc["initial"] = {{"sector", 0}, {"state", json::parse("[[1, 0], [0, 0]]")}};
    EXPECT_NE(config_error(doc).find("does not match"), std::string::npos);
    doc["initial"] = {{"sector", 0}, {"state", json::parse("[[0, 0]]")}};
    EXPECT_NE(config_error(doc).find("nonzero"), std::string::npos);
}

TEST(ParseConfig, UnreadableOrBrokenFile) {
    EXPECT_THROW(parse_config(scratch("missing.json")), InputError);
    dump(scratch("broken.json"), "{\"builtin\": ");
    EXPECT_THROW(parse_config(scratch("broken.json")), InputError);
}

TEST(ParseConfig, RoundTripIsBitExact) {
    EventModel m({{0, 2, "a"}, {1, 3, "b"}});
    Matrix h(2, 2), g(3, 2);
    h << 0.1 / 3.0, Complex(1.0 / 7.0, -2.0 / 9.0), Complex(1.0 / 7.0, 2.0 / 9.0), -std::sqrt(2.0);
    g << Complex(M_PI, 1e-17), 1e300, -0.0, Complex(0.0, std::exp(1.0)), 5e-324, 2.0 / 3.0;
    m.set_hamiltonian(0, OperatorProvider::constant(h));
    m.add_jump(0, 1, OperatorProvider::piecewise({0.3}, {g, 0.5 * g}), "kick");
    Vector psi(2);
    psi << Complex(0.6, 0.0), Complex(0.0, 0.8);
    RunConfig run;
    run.t_max = 2.5;
    run.seed = 1234567890123ULL;
    run.probe_times = {0.1, 1.0 / 3.0};
    const auto cfg = explicit_config(m, {0, psi}, run);
    write_config(cfg, scratch("round.json"));
    const auto a = parse_config(scratch("round.json"));
    write_config(a.config, scratch("round2.json"));
    const auto b = parse_config(scratch("round2.json"));
    EXPECT_EQ(a.hash, b.hash);
    EXPECT_EQ(slurp(scratch("round.json")), slurp(scratch("round2.json")));
    EXPECT_TRUE(a.model.hamiltonian(0).at(0.0) == h);
    EXPECT_TRUE(b.model.channel(0).op.at(0.0) == g);
    EXPECT_TRUE(b.model.channel(0).op.at(0.5) == 0.5 * g);
    EXPECT_EQ(b.model.channel(0).label, "kick");
    EXPECT_EQ(b.config.run.seed, run.seed);
    EXPECT_EQ(b.config.run.probe_times, run.probe_times);
}

TEST(ParseConfig, HashTracksContent) {
    auto doc = scalar_explicit();
    const auto a = parse_config_json(doc);
    doc["run"]["seed"] = 6;
    const auto b = parse_config_json(doc);
    EXPECT_NE(a.hash, b.hash);
    EXPECT_EQ(a.hash, parse_config_json(scalar_explicit()).hash);
}

TEST(Sha256, KnownDigest) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(EventLog, ZeroEventsGivesHeaderOnly) {
    EventModel closed({{0, 1, "still"}});
    std::vector<Trajectory> runs = run_ensemble(closed, {0, Vector::Ones(1)}, 5, RunOptions{}, 1).runs;
    std::ostringstream out;
    EXPECT_EQ(write_event_log(runs, {"h", 1, 5, 0.0, 1.0}, out), 0u);
    const std::string text = out.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
    const auto header = json::parse(text);
    EXPECT_EQ(header["format"], kEventLogFormat);
    EXPECT_EQ(header["config_hash"], "h");
    EXPECT_EQ(header["master_seed"], 1);
}

TEST(EventLog, ThreeEventsThreeLines) {
    const auto p = parse_config(kConfigs + "/grw_lattice.json");
    RunOptions o = p.run_options();
    o.t_max = 1e6;
    o.event_budget = 3;
    const auto runs = sample(p, 1, 3, o);
    const fs::path path = scratch("three.jsonl");
    EXPECT_EQ(write_event_log(runs, {p.hash, 3, 1, o.t0, o.t_max}, path), 3u);
    const std::string text = slurp(path);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
    const auto log = read_event_log(path);
    ASSERT_TRUE(log.header.has_value());
    EXPECT_EQ(log.header->config_hash, p.hash);
    ASSERT_EQ(log.events.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(log.events[k].k, k + 1);
        EXPECT_EQ(log.events[k].time, runs[0].events[k].time);  // round-trips exactly
        EXPECT_EQ(log.events[k].label, runs[0].events[k].label);
    }
}

TEST(EventLog, RerunIsByteIdentical) {
    const auto p = parse_config(kConfigs + "/two_sector_scalar.json");
    RunOptions o = p.run_options();
    o.snapshot_states = true;
    std::ostringstream a, b;
    write_event_log(sample(p, 200, 9, o), {p.hash, 9, 200, o.t0, o.t_max}, a);
    write_event_log(sample(p, 200, 9, o), {p.hash, 9, 200, o.t0, o.t_max}, b);
    EXPECT_EQ(a.str(), b.str());
    EXPECT_NE(a.str().find("\"state\""), std::string::npos);
}

TEST(EventLog, MalformedLinesAreNumbered) {
    std::istringstream in(
        "{\"format\":\"emodel-events/1\",\"trajectories\":2,\"t0\":0}\n"
        "{\"trajectory\":0,\"k\":1,\"t\":0.5,\"from\":0,\"to\":1,\"label\":\"fired\"}\n"
        "not json\n"
        "{\"trajectory\":1,\"k\":1,\"t\":0.5,\"from\":0,\"label\":\"fired\"}\n");
    try {
        read_event_log(in);
        FAIL() << "expected an input error";
    } catch (const InputError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("line 4"), std::string::npos) << msg;
        EXPECT_EQ(msg.find("line 2"), std::string::npos) << msg;
    }
}

TEST(EventLog, OrderIsChecked) {
    std::istringstream in(
        "{\"trajectory\":1,\"k\":1,\"t\":0.5,\"from\":0,\"to\":1,\"label\":\"a\"}\n"
        "{\"trajectory\":0,\"k\":1,\"t\":0.7,\"from\":0,\"to\":1,\"label\":\"a\"}\n");
    EXPECT_THROW(read_event_log(in), InputError);
}

TEST(Stats, ScalarMeanWaitingTimeIsOne) {
    const auto p = parse_config_json(scalar_explicit());
    RunOptions o = p.run_options();
    o.t_max = 1e6;
    EnsembleOptions e;
    const std::size_t n = 100000;
    const auto runs = run_ensemble(p.model, p.initial, n, o, 77, e).runs;
    std::stringstream log;
    write_event_log(runs, {p.hash, 77, n, o.t0, o.t_max}, log);
    const auto r = stats_report(read_event_log(log));
    ASSERT_EQ(r.mean_inter_event.size(), 1u);
    EXPECT_EQ(r.mean_inter_event[0].count, n);
    EXPECT_NEAR(r.mean_inter_event[0].mean, 1.0, 0.01);
    EXPECT_NEAR(r.mean_inter_event[0].std_error, 1.0 / std::sqrt(static_cast<double>(n)), 1e-3);
    EXPECT_EQ(r.label_counts.at("fired"), n);
    EXPECT_EQ(r.event_count_distribution.at(1), n);
}

TEST(Stats, EmptyLogGivesEmptyTables) {
    std::istringstream nothing("");
    const auto r = stats_report(read_event_log(nothing));
    EXPECT_EQ(r.events, 0u);
    EXPECT_TRUE(r.mean_inter_event.empty());
    EXPECT_TRUE(r.label_counts.empty());

    std::istringstream header_only("{\"format\":\"emodel-events/1\",\"trajectories\":4,\"t0\":0}\n");
    const auto h = stats_report(read_event_log(header_only));
    EXPECT_EQ(h.event_count_distribution.at(0), 4u);
    const fs::path dir = scratch("empty_stats");
    write_stats(h, dir);
    EXPECT_EQ(slurp(dir / "mean_inter_event.csv"), "k,count,mean,std_error\n");
    EXPECT_TRUE(fs::exists(dir / "report.json"));
}

TEST(Stats, GrwLabelsAreUniform) {
    // One flash per trajectory keeps the counts exactly multinomial.
    const auto p = parse_config(kConfigs + "/grw_lattice.json");
    RunOptions o = p.run_options();
    o.t_max = 1e6;
    o.event_budget = 1;
    const std::size_t n = 16000;
    std::stringstream log;
    write_event_log(sample(p, n, 21, o), {p.hash, 21, n, o.t0, o.t_max}, log);
    const auto r = stats_report(read_event_log(log));
    ASSERT_EQ(r.label_counts.size(), 8u);
    const double mean = n / 8.0;
    const double sd = std::sqrt(n * (1.0 / 8.0) * (7.0 / 8.0));
    for (const auto& [label, count] : r.label_counts) {
        EXPECT_LE(std::abs(static_cast<double>(count) - mean), 3.0 * sd) << label;
    }
}

TEST(Stats, WritesCsvTables) {
    const auto p = parse_config(kConfigs + "/grw_lattice.json");
    RunOptions o = p.run_options();
    o.t_max = 3.0;
    const fs::path log = scratch("grw.jsonl");
    write_event_log(sample(p, 50, 2, o), {p.hash, 2, 50, o.t0, o.t_max}, log);
    const fs::path dir = scratch("grw_stats");
    write_stats(stats_report(log), dir);
    for (const char* f : {"report.json", "inter_event_times.csv", "mean_inter_event.csv", "label_counts.csv",
                          "event_counts.csv"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    EXPECT_EQ(slurp(dir / "label_counts.csv").rfind("label,count\n", 0), 0u);
    const auto report = json::parse(slurp(dir / "report.json"));
    EXPECT_EQ(report["trajectories"], 50);
}

TEST(DensityCsv, HeaderCarriesHash) {
    EventModel m({{0, 1, "a"}, {1, 1, "b"}});
    std::ostringstream out;
    write_density_csv({0.5}, {DirectSumDensity::pure(m, 0, Vector::Ones(1))}, "abc", out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "# config_hash=abc");
    std::getline(in, line);
    EXPECT_EQ(line, "t,sector,row,col,re,im");
    std::getline(in, line);
    EXPECT_EQ(line, "0.5,0,0,0,1,0");
}

TEST(HistoryInput, ParsesFile) {
    const auto h = history_from_json(read_json_file(kConfigs + "/history.json"));
    EXPECT_EQ(h.history.start_sector, 0u);
    ASSERT_EQ(h.history.steps.size(), 1u);
    EXPECT_EQ(h.history.steps[0].sector, 1u);
    EXPECT_EQ(h.history.t_end, 5.0);
    EXPECT_THROW(history_from_json(json::parse(R"({"steps": [{"t": 1}]})")), InputError);
}

TEST(Cli, ExitCodes) {
    const std::string scalar = kConfigs + "/two_sector_scalar.json";
    const fs::path events = scratch("cli_events.jsonl");
    EXPECT_EQ(cli("--help"), 0);
    EXPECT_EQ(cli("simulate --config " + scalar + " --out " + events.string() + " --trajectories 50"), 0);
    const auto log = read_event_log(events);
    EXPECT_EQ(log.header->trajectories, 50u);
    EXPECT_GT(log.events.size(), 40u);  // at most one event each, e^-5 stay quiet
    EXPECT_EQ(cli("stats --events " + events.string() + " --out " + scratch("cli_stats").string()), 0);
    EXPECT_EQ(cli("lindblad --config " + scalar + " --out " + scratch("rho.csv").string() + " --probe 0.5,1"), 0);
    EXPECT_EQ(cli("likelihood --config " + scalar + " --history " + kConfigs + "/history.json --out " +
                  scratch("lik.json").string()),
              0);
    EXPECT_NEAR(json::parse(slurp(scratch("lik.json")))["joint_density"].get<double>(), std::exp(-1.0), 1e-10);

    EXPECT_EQ(cli("validate --config " + scalar + " --trajectories 4000"), 0);
    EXPECT_EQ(cli("validate --config " + scalar + " --trajectories 500 --tol 1e-6"), 1);

    EXPECT_EQ(cli("simulate --config " + scratch("nope.json").string() + " --out x"), 2);
    EXPECT_EQ(cli("frobnicate"), 2);
    EXPECT_EQ(cli("simulate --config " + scalar), 2);  // --out is required
    json bad = scalar_explicit();
    bad["model"]["jumps"][0]["to"] = 0;
    dump(scratch("diag.json"), bad.dump());
    EXPECT_EQ(cli("simulate --config " + scratch("diag.json").string() + " --out x"), 2);

    // RK4 far outside its stability region: the density blows up.
    json stiff = json::parse(R"({
      "model": {"sectors": [{"id": 0, "dim": 2, "label": "a"}],
                "hamiltonians": [{"sector": 0, "matrix": [[[0, 0], [10000, 0]], [[10000, 0], [0, 0]]]}]},
      "run": {"t_max": 0.01, "step": 0.001}
    })");
    dump(scratch("stiff.json"), stiff.dump());
    EXPECT_EQ(cli("lindblad --config " + scratch("stiff.json").string() + " --out " + scratch("stiff.csv").string()), 3);
}
