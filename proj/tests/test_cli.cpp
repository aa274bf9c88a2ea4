#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "t2p/motion.hpp"

// End-to-end exercises of the command-line binary; T2P_CLI points at it.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string cli() {
    const char* env = std::getenv("T2P_CLI");
    REQUIRE(env != nullptr);
    return env;
}

int run(const std::string& args, std::string* out = nullptr) {
    const std::string cmd = cli() + " " + args + " > cli_stdout.txt 2> cli_stderr.txt";
    const int status = std::system(cmd.c_str());
    if (out) {
        std::ifstream is("cli_stdout.txt");
        std::stringstream ss;
        ss << is.rdbuf();
        *out = ss.str();
    }
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::path("cli_tmp") / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("synth: writes the requested scene files deterministically") {
    TempDir a("synth_a"), b("synth_b");
    CHECK(run("synth --out " + a.str() + " --scenes 10 --agents 2 --duration 24 --seed 5") == 0);
    int scene_files = 0;
    for (const auto& e : fs::directory_iterator(a.str()))
        if (e.path().filename().string().rfind("scene_", 0) == 0) ++scene_files;
    CHECK(scene_files == 10);
    CHECK(fs::exists(a.path / "effective_config.txt"));

    CHECK(run("synth --out " + b.str() + " --scenes 10 --agents 2 --duration 24 --seed 5") == 0);
    for (int i = 0; i < 10; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d.jsonl", i);
        CHECK(slurp((a.path / name).string()) == slurp((b.path / name).string()));
    }
}

TEST_CASE("synth: unknown option is rejected with exit code 1") {
    TempDir d("synth_bad");
    std::string out;
    CHECK(run("synth --out " + d.str() + " --wibble 3") == 1);
    const std::string err = slurp("cli_stderr.txt");
    CHECK(err.find("wibble") != std::string::npos);
}

TEST_CASE("config file: flags win over file values") {
    TempDir d("synth_cfg");
    {
        std::ofstream os(d.path / "cfg.txt");
        os << "scenes=3\nagents=2\nduration=24\nseed=9\n";
    }
    CHECK(run("synth --config " + (d.path / "cfg.txt").string() + " --out " + d.str() +
              " --scenes 4") == 0);
    int scene_files = 0;
    for (const auto& e : fs::directory_iterator(d.str()))
        if (e.path().filename().string().rfind("scene_", 0) == 0) ++scene_files;
    CHECK(scene_files == 4);  // flag beat the file
    const std::string echoed = slurp((d.path / "effective_config.txt").string());
    CHECK(echoed.find("scenes=4") != std::string::npos);
}

TEST_CASE("train/predict/eval: tiny end-to-end pipeline") {
    const auto start = std::chrono::steady_clock::now();
    TempDir d("pipeline");
    const std::string scenes = d.str() + "/scenes";
    const std::string runout = d.str() + "/run";
    CHECK(run("synth --out " + scenes + " --scenes 4 --agents 2 --duration 18 --seed 3") == 0);
    CHECK(run("train --data " + scenes + " --out " + runout +
              " --steps 50 --batch 2 --tp 6 --tf 12 --modes 2 --seed 1") == 0);
    CHECK(fs::exists(runout + "/checkpoint.bin"));
    CHECK(fs::exists(runout + "/loss.csv"));

    // predict on the training scenes and evaluate
    CHECK(run("predict --checkpoint " + runout + "/checkpoint.bin --scene " + scenes + " --out " +
              d.str() + "/forecast.jsonl --tp 6 --tf 12 --modes 2") == 0);
    std::string report;
    CHECK(run("eval --forecast " + d.str() + "/forecast.jsonl --scenes " + scenes +
              " --eval-at 0.5,1.2 --tp 6 --tf 12 --modes 2", &report) == 0);
    auto o = json::parse(report);
    CHECK(o["scene_count"] == 4);
    CHECK(o["aggregate"].contains("0.5s"));
    CHECK(o["aggregate"].contains("1.2s"));

    // the smoke pipeline must stay fast
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(secs < 60.0);
}

TEST_CASE("eval: ground truth as forecast scores zero everywhere") {
    TempDir d("eval_gt");
    const std::string scenes = d.str() + "/scenes";
    CHECK(run("synth --out " + scenes + " --scenes 2 --agents 2 --duration 18 --seed 8") == 0);

    // build a forecast file from the ground-truth futures
    auto all = t2p::load_scenes(scenes + "/scene_0000.jsonl");
    auto more = t2p::load_scenes(scenes + "/scene_0001.jsonl");
    all.insert(all.end(), more.begin(), more.end());
    const int tp = 6, tf = 12;
    std::ofstream fo(d.path / "forecast.jsonl");
    for (const auto& s : all) {
        json rec;
        rec["scene_id"] = s.scene_id;
        rec["frame_rate"] = s.frame_rate;
        rec["modes"] = 1;
        json agents = json::array();
        for (int a = 0; a < s.agents(); ++a) {
            json ag;
            ag["id"] = s.agent_ids[static_cast<size_t>(a)];
            json frames = json::array();
            for (int f = tp; f < tp + tf; ++f) {
                json joints = json::array();
                for (int q = 0; q < s.joints(); ++q)
                    joints.push_back({s.positions.at({a, f, q, 0}), s.positions.at({a, f, q, 1}),
                                      s.positions.at({a, f, q, 2})});
                frames.push_back(std::move(joints));
            }
            ag["modes"] = json::array({std::move(frames)});
            agents.push_back(std::move(ag));
        }
        rec["agents"] = std::move(agents);
        fo << rec.dump() << "\n";
    }
    fo.close();

    std::string report;
    CHECK(run("eval --forecast " + (d.path / "forecast.jsonl").string() + " --scenes " + scenes +
              " --eval-at 0.5,1.0 --tp 6 --tf 12 --modes 1", &report) == 0);
    auto o = json::parse(report);
    for (const char* stamp : {"0.5s", "1.0s"}) {
        CHECK(o["aggregate"][stamp]["jpe"].get<double>() == 0.0);
        CHECK(o["aggregate"][stamp]["ape"].get<double>() == 0.0);
        CHECK(o["aggregate"][stamp]["fde"].get<double>() == 0.0);
    }
}

TEST_CASE("eval: missing forecast is a clear error") {
    TempDir d("eval_none");
    const std::string scenes = d.str() + "/scenes";
    CHECK(run("synth --out " + scenes + " --scenes 1 --agents 2 --duration 18 --seed 2") == 0);
    CHECK(run("eval --scenes " + scenes + " --tp 6 --tf 12") == 2);
    CHECK(slurp("cli_stderr.txt").find("forecast") != std::string::npos);
}

TEST_CASE("extract: tau zero accepts nothing and exits cleanly") {
    TempDir d("extract_zero");
    // minimal fixture: one camera, one detection, one annotation, one box
    {
        std::ofstream os(d.path / "cameras.jsonl");
        os << R"({"cam":0,"yaw":0.0,"K":[500,0,320,0,500,240,0,0,1]})" << "\n";
    }
    {
        std::ofstream os(d.path / "detections.jsonl");
        os << R"({"t":0,"cam":0,"joints_3d":[[0,0,3]],"joints_2d":[[320,240]]})" << "\n";
    }
    {
        std::ofstream os(d.path / "annotations.jsonl");
        os << R"({"t":0,"cam":0,"agent_id":"p1","joints_2d":[[320,240]]})" << "\n";
    }
    {
        std::ofstream os(d.path / "boxes.jsonl");
        os << R"({"t":0,"agent_id":"p1","cx":3.0,"cy":0.0})" << "\n";
    }
    std::string out;
    CHECK(run("extract --inputs " + d.str() + " --out " + d.str() + "/out --tau 0 --window 1 --min_agents 1",
              &out) == 0);
    auto rep = json::parse(slurp(d.str() + "/out/extraction_report.json"));
    CHECK(rep["accepted"] == 0);
    CHECK(rep["rejected_match"] == 1);
    CHECK(rep["windows_emitted"] == 0);
}

TEST_CASE("extract: missing camera file is a data error with exit 2") {
    TempDir d("extract_missing");
    CHECK(run("extract --inputs " + d.str() + " --out " + d.str() + "/out") == 2);
}

TEST_CASE("extract: malformed json reports the line number") {
    TempDir d("extract_bad");
    {
        std::ofstream os(d.path / "cameras.jsonl");
        os << R"({"cam":0,"yaw":0.0,"K":[500,0,320,0,500,240,0,0,1]})" << "\n";
        os << "{broken\n";
    }
    for (const char* f : {"detections.jsonl", "annotations.jsonl", "boxes.jsonl"})
        std::ofstream(d.path / f).close();
    CHECK(run("extract --inputs " + d.str() + " --out " + d.str() + "/out") == 2);
    CHECK(slurp("cli_stderr.txt").find("line 2") != std::string::npos);
}

TEST_CASE("checkpoint/config mismatch is caught") {
    TempDir d("ckpt_mismatch");
    const std::string scenes = d.str() + "/scenes";
    const std::string runout = d.str() + "/run";
    CHECK(run("synth --out " + scenes + " --scenes 2 --agents 2 --duration 18 --seed 3") == 0);
    CHECK(run("train --data " + scenes + " --out " + runout +
              " --steps 2 --batch 1 --tp 6 --tf 12 --modes 2 --seed 1") == 0);
    // different modes count -> different config hash -> data error
    CHECK(run("predict --checkpoint " + runout + "/checkpoint.bin --scene " + scenes +
              " --out " + d.str() + "/f.jsonl --tp 6 --tf 12 --modes 3") == 2);
}
