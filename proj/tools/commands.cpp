#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "t2p/extract.hpp"
#include "t2p/metrics.hpp"
#include "t2p/model.hpp"
#include "t2p/synth.hpp"
#include "t2p/training.hpp"

#include <json.hpp>

namespace t2p::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string RunConfig::str(const std::string& k, const std::string& fallback) const {
    auto it = values.find(k);
    return it == values.end() ? fallback : it->second;
}

double RunConfig::num(const std::string& k, double fallback) const {
    auto it = values.find(k);
    if (it == values.end()) return fallback;
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size())
        throw std::invalid_argument("option '" + k + "': '" + it->second + "' is not a number");
    return v;
}

int RunConfig::integer(const std::string& k, int fallback) const {
    const double v = num(k, fallback);
    if (v != std::floor(v))
        throw std::invalid_argument("option '" + k + "' must be an integer");
    return static_cast<int>(v);
}

std::uint64_t RunConfig::seed(const std::string& k, std::uint64_t fallback) const {
    auto it = values.find(k);
    if (it == values.end()) return fallback;
    return std::stoull(it->second);
}

void RunConfig::reject_unknown(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : values)
        if (!allowed.count(k))
            throw std::invalid_argument("unknown option '" + k + "'");
}

std::string RunConfig::canonical() const {
    std::ostringstream os;
    for (const auto& [k, v] : values) os << k << "=" << v << "\n";
    return os.str();
}

RunConfig parse_run_config(const std::vector<std::string>& args, const std::string& config_file_key) {
    RunConfig flags;
    for (size_t i = 0; i < args.size(); ++i) {
        std::string a = args[i];
        if (a.rfind("--", 0) != 0)
            throw std::invalid_argument("expected --option, got '" + a + "'");
        a = a.substr(2);
        const auto eq = a.find('=');
        if (eq != std::string::npos) {
            flags.values[a.substr(0, eq)] = a.substr(eq + 1);
        } else {
            if (i + 1 >= args.size())
                throw std::invalid_argument("option '--" + a + "' is missing a value");
            flags.values[a] = args[++i];
        }
    }
    RunConfig merged;
    if (flags.has(config_file_key)) {
        const std::string path = flags.str(config_file_key);
        std::ifstream is(path);
        if (!is) throw std::runtime_error("cannot open config file '" + path + "'");
        std::string line;
        int ln = 0;
        while (std::getline(is, line)) {
            ++ln;
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(path + ":" + std::to_string(ln) +
                                         ": expected key=value, got '" + line + "'");
            merged.values[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    for (const auto& [k, v] : flags.values)
        if (k != config_file_key) merged.values[k] = v;  // flags win
    return merged;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream os(out_dir + "/effective_config.txt");
    os << cfg.canonical();
}

namespace {

ModelConfig model_config_from(const RunConfig& cfg) {
    ModelConfig mc;
    mc.scenario.past_steps = cfg.integer("tp", 10);
    mc.scenario.future_steps = cfg.integer("tf", 20);
    mc.scenario.modes = cfg.integer("modes", 6);
    const std::string radius = cfg.str("radius", "unbounded");
    mc.scenario.interaction_radius = radius == "unbounded" ? -1.0 : std::stod(radius);
    mc.dropout = cfg.num("dropout", 0.2);
    mc.dct_coeffs = cfg.integer("dct_coeffs", 0);
    mc.validate();
    return mc;
}

const std::set<std::string> kModelKeys = {"tp", "tf", "modes", "radius", "dropout", "dct_coeffs"};

std::set<std::string> with_model_keys(std::set<std::string> keys) {
    keys.insert(kModelKeys.begin(), kModelKeys.end());
    return keys;
}

void write_model_config(const RunConfig& cfg, const std::string& out_dir) {
    std::ofstream os(out_dir + "/model_config.txt");
    os << "tp=" << cfg.integer("tp", 10) << "\ntf=" << cfg.integer("tf", 20)
       << "\nmodes=" << cfg.integer("modes", 6) << "\nradius=" << cfg.str("radius", "unbounded")
       << "\ndropout=" << cfg.num("dropout", 0.2) << "\ndct_coeffs=" << cfg.integer("dct_coeffs", 0)
       << "\n";
}

std::vector<GlobalPoseSequence> load_scene_dir(const std::string& path) {
    std::vector<GlobalPoseSequence> scenes;
    if (fs::is_directory(path)) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(path))
            if (e.path().extension() == ".jsonl" &&
                e.path().filename().string().rfind("scene", 0) == 0)
                files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files)
            for (auto& s : load_scenes(f)) scenes.push_back(std::move(s));
    } else {
        scenes = load_scenes(path);
    }
    if (scenes.empty()) throw std::runtime_error("no scenes found under '" + path + "'");
    return scenes;
}

std::string forecast_to_json_line(const ForecastBundle& b) {
    json o;
    o["scene_id"] = b.scene_id;
    o["frame_rate"] = b.frame_rate;
    o["modes"] = b.modes();
    json agents = json::array();
    for (int a = 0; a < b.agents(); ++a) {
        json ag;
        ag["id"] = b.agent_ids[static_cast<size_t>(a)];
        json mode_list = json::array();
        for (int f = 0; f < b.modes(); ++f) {
            json frames = json::array();
            for (int t = 0; t < b.horizon(); ++t) {
                json joints = json::array();
                for (int q = 0; q < b.joints(); ++q) {
                    const std::int64_t off =
                        ((((static_cast<std::int64_t>(f) * b.agents() + a) * b.horizon()) + t) *
                             b.joints() +
                         q) *
                        3;
                    joints.push_back({b.composed[off], b.composed[off + 1], b.composed[off + 2]});
                }
                frames.push_back(std::move(joints));
            }
            mode_list.push_back(std::move(frames));
        }
        ag["modes"] = std::move(mode_list);
        agents.push_back(std::move(ag));
    }
    o["agents"] = std::move(agents);
    return o.dump();
}

ForecastBundle forecast_from_json(const json& o, const Skeleton& skel) {
    ForecastBundle b;
    b.scene_id = o.at("scene_id").get<std::string>();
    b.frame_rate = o.at("frame_rate").get<double>();
    const auto& agents = o.at("agents");
    const int n = static_cast<int>(agents.size());
    const int modes = o.at("modes").get<int>();
    const auto& first = agents.at(0).at("modes");
    const int tf = static_cast<int>(first.at(0).size());
    const int j = static_cast<int>(first.at(0).at(0).size());
    if (j != skel.joint_count)
        throw std::runtime_error("forecast '" + b.scene_id + "' carries " + std::to_string(j) +
                                 " joints, skeleton expects " + std::to_string(skel.joint_count));
    b.composed = Array({modes, n, tf, j, 3});
    b.trajectories = Array({modes, n, tf, 3});
    b.local = Array({modes, n, tf, j, 3});
    for (int a = 0; a < n; ++a) {
        b.agent_ids.push_back(agents[static_cast<size_t>(a)].at("id").get<std::string>());
        const auto& ml = agents[static_cast<size_t>(a)].at("modes");
        for (int f = 0; f < modes; ++f)
            for (int t = 0; t < tf; ++t)
                for (int q = 0; q < j; ++q)
                    for (int c = 0; c < 3; ++c)
                        b.composed.at({f, a, t, q, c}) =
                            ml[static_cast<size_t>(f)][static_cast<size_t>(t)][static_cast<size_t>(q)]
                              [static_cast<size_t>(c)]
                                  .get<double>();
    }
    for (int f = 0; f < modes; ++f)
        for (int a = 0; a < n; ++a)
            for (int t = 0; t < tf; ++t) {
                for (int c = 0; c < 3; ++c)
                    b.trajectories.at({f, a, t, c}) = b.composed.at({f, a, t, skel.hip_index, c});
                for (int q = 0; q < j; ++q)
                    for (int c = 0; c < 3; ++c)
                        b.local.at({f, a, t, q, c}) =
                            b.composed.at({f, a, t, q, c}) - b.trajectories.at({f, a, t, c});
            }
    return b;
}

void write_metric_plot(const std::string& path, const std::vector<MetricReport>& reports) {
    if (reports.empty()) return;
    const auto& stamps = reports.front().timestamps;
    const int w = 640, h = 420, ml = 60, mb = 40, mt = 20, mr = 20;
    std::vector<std::pair<std::string, std::vector<double>>> series = {
        {"jpe", {}}, {"ape", {}}, {"fde", {}}};
    double vmax = 1.0;
    for (size_t i = 0; i < stamps.size(); ++i) {
        double jpe = 0, ape = 0, fde = 0;
        for (const auto& r : reports) {
            jpe += r.points[i].jpe;
            ape += r.points[i].ape;
            fde += r.points[i].fde;
        }
        const double n = static_cast<double>(reports.size());
        series[0].second.push_back(jpe / n);
        series[1].second.push_back(ape / n);
        series[2].second.push_back(fde / n);
        vmax = std::max({vmax, jpe / n, ape / n, fde / n});
    }
    const double tmin = stamps.front(), tmax = std::max(stamps.back(), tmin + 1e-9);
    auto px = [&](double t) { return ml + (t - tmin) / (tmax - tmin) * (w - ml - mr); };
    auto py = [&](double v) { return h - mb - v / vmax * (h - mb - mt); };

    std::ofstream os(path);
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
       << "' stroke='black'/>\n";
    os << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
       << "' stroke='black'/>\n";
    const char* colors[3] = {"#c0392b", "#2980b9", "#27ae60"};
    for (size_t s = 0; s < series.size(); ++s) {
        os << "<polyline fill='none' stroke='" << colors[s] << "' stroke-width='2' points='";
        for (size_t i = 0; i < stamps.size(); ++i)
            os << px(stamps[i]) << "," << py(series[s].second[i]) << " ";
        os << "'/>\n";
        os << "<text x='" << w - mr - 60 << "' y='" << mt + 18 * (s + 1) << "' fill='" << colors[s]
           << "'>" << series[s].first << " mm</text>\n";
    }
    os << "<text x='" << (w / 2 - 40) << "' y='" << h - 8 << "'>time (s)</text>\n";
    os << "<text x='8' y='" << mt + 10 << "'>" << static_cast<int>(vmax) << " mm</text>\n";
    os << "</svg>\n";
}

}  // namespace

int cmd_synth(const std::vector<std::string>& args) {
    RunConfig cfg = parse_run_config(args);
    cfg.reject_unknown({"out", "scenes", "agents", "duration", "fps", "style", "avoidance", "seed",
                        "fork_frame"});
    const std::string out = cfg.str("out");
    if (out.empty()) throw std::invalid_argument("synth: --out directory is required");
    const int scenes = cfg.integer("scenes", 10);
    SynthSpec spec;
    spec.agent_count = cfg.integer("agents", 3);
    spec.duration_frames = cfg.integer("duration", 30);
    spec.frame_rate = cfg.num("fps", 10.0);
    spec.style = motion_style_from_string(cfg.str("style", "straight"));
    spec.avoidance = cfg.num("avoidance", 1.0);
    spec.seed = cfg.seed("seed", 0);
    spec.fork_frame = cfg.integer("fork_frame", -1);

    fs::create_directories(out);
    echo_config(cfg, out);
    save_skeleton(out + "/skeleton.json", Skeleton::default15());

    std::ofstream labels;
    if (spec.style == MotionStyle::BimodalFork) labels.open(out + "/labels.csv");

    if (spec.style == MotionStyle::BimodalFork) {
        labels << "scene_id,fork_label\n";
        auto set = generate_bimodal(spec, scenes);
        for (int i = 0; i < scenes; ++i) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s/scene_%04d.jsonl", out.c_str(), i);
            save_scenes(name, {set[static_cast<size_t>(i)].scene});
            labels << set[static_cast<size_t>(i)].scene.scene_id << ","
                   << set[static_cast<size_t>(i)].fork_label << "\n";
        }
    } else {
        for (int i = 0; i < scenes; ++i) {
            SynthSpec one = spec;
            one.seed = Rng::mix(spec.seed, 0x5CE7E, static_cast<std::uint64_t>(i));
            GlobalPoseSequence scene = generate(one);
            scene.scene_id = "synth_" + std::to_string(i);
            char name[64];
            std::snprintf(name, sizeof(name), "%s/scene_%04d.jsonl", out.c_str(), i);
            save_scenes(name, {scene});
        }
    }
    std::cout << "wrote " << scenes << " scene files to " << out << "\n";
    return kOk;
}

int cmd_extract(const std::vector<std::string>& args) {
    RunConfig cfg = parse_run_config(args);
    cfg.reject_unknown({"inputs", "out", "tau", "max_range", "min_agents", "stride", "window",
                        "fps"});
    const std::string inputs = cfg.str("inputs");
    const std::string out = cfg.str("out");
    if (inputs.empty() || out.empty())
        throw std::invalid_argument("extract: --inputs and --out are required");

    ExtractionConfig ec;
    ec.tau_px = cfg.num("tau", 20.0);
    ec.max_range = cfg.num("max_range", 4.5);
    ec.min_agents = cfg.integer("min_agents", 3);
    ec.stride_frames = cfg.integer("stride", 15);
    ec.window_frames = cfg.integer("window", 30);
    ec.frame_rate = cfg.num("fps", 15.0);

    ExtractionScene scene = load_extraction_inputs(inputs);
    ExtractionReport report;
    const Skeleton skel = Skeleton::default15();
    std::vector<GlobalPoseSequence> windows = run_extraction(scene, ec, skel, &report);

    fs::create_directories(out);
    echo_config(cfg, out);
    save_scenes(out + "/scenes.jsonl", windows);
    {
        std::ofstream os(out + "/extraction_report.json");
        os << report.to_json() << "\n";
    }
    std::cout << report.to_json() << "\n";
    return kOk;
}

int cmd_train(const std::vector<std::string>& args) {
    RunConfig cfg = parse_run_config(args);
    cfg.reject_unknown(with_model_keys({"data", "out", "seed", "steps", "batch", "lr",
                                        "weight_decay", "checkpoint_every", "resume"}));
    const std::string data = cfg.str("data");
    const std::string out = cfg.str("out");
    if (data.empty() || out.empty())
        throw std::invalid_argument("train: --data and --out are required");

    ModelConfig mc = model_config_from(cfg);
    TrainConfig tc;
    tc.learning_rate = cfg.num("lr", 0.003);
    tc.weight_decay = cfg.num("weight_decay", 0.01);
    tc.steps = cfg.integer("steps", 2000);
    tc.batch_size = cfg.integer("batch", 4);
    tc.seed = cfg.seed("seed", 0);
    tc.checkpoint_every = cfg.integer("checkpoint_every", 500);
    tc.out_dir = out;

    std::vector<GlobalPoseSequence> dataset = load_scene_dir(data);
    const Skeleton skel = Skeleton::default15();

    std::unique_ptr<Model> model;
    if (cfg.has("resume")) {
        ParameterStore store = ParameterStore::load(cfg.str("resume"));
        model = std::make_unique<Model>(mc, skel, std::move(store));
    } else {
        model = std::make_unique<Model>(mc, skel, tc.seed);
    }

    fs::create_directories(out);
    echo_config(cfg, out);
    write_model_config(cfg, out);

    FitResult res = fit(*model, dataset, tc, [](int step, const LossReport& rep) {
        if (step % 100 == 0)
            std::cout << "step " << step << "  loss " << rep.total << "  (traj " << rep.trajectory_loss
                      << ", pose " << rep.pose_loss << ")\n";
    });
    std::cout << "checkpoint: " << res.checkpoint_path << "\n";
    return kOk;
}

int cmd_predict(const std::vector<std::string>& args) {
    RunConfig cfg = parse_run_config(args);
    cfg.reject_unknown(with_model_keys({"checkpoint", "scene", "out", "seed"}));
    const std::string ckpt = cfg.str("checkpoint");
    const std::string scene_path = cfg.str("scene");
    const std::string out = cfg.str("out");
    if (ckpt.empty() || scene_path.empty() || out.empty())
        throw std::invalid_argument("predict: --checkpoint, --scene and --out are required");

    ModelConfig mc = model_config_from(cfg);
    const Skeleton skel = Skeleton::default15();
    Model model(mc, skel, ParameterStore::load(ckpt));

    std::vector<GlobalPoseSequence> scenes = load_scene_dir(scene_path);
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot open '" + out + "' for writing");
    for (const auto& s : scenes) os << forecast_to_json_line(model.predict(s)) << "\n";
    std::cout << "wrote " << scenes.size() << " forecasts to " << out << "\n";
    return kOk;
}

int cmd_eval(const std::vector<std::string>& args) {
    RunConfig cfg = parse_run_config(args);
    cfg.reject_unknown(with_model_keys({"forecast", "checkpoint", "scenes", "eval-at", "out",
                                        "plot", "seed"}));
    const std::string scenes_path = cfg.str("scenes");
    if (scenes_path.empty()) throw std::invalid_argument("eval: --scenes is required");
    if (!cfg.has("forecast") && !cfg.has("checkpoint"))
        throw std::runtime_error("eval: no forecast available; pass --forecast or --checkpoint");

    ModelConfig mc = model_config_from(cfg);
    const Skeleton skel = Skeleton::default15();
    const int tp = mc.scenario.past_steps;
    const int tf = mc.scenario.future_steps;

    std::vector<double> stamps;
    {
        std::istringstream is(cfg.str("eval-at", "1.0,2.0"));
        std::string tok;
        while (std::getline(is, tok, ',')) stamps.push_back(std::stod(tok));
        if (stamps.empty()) throw std::invalid_argument("eval: --eval-at lists no timestamps");
    }

    std::vector<GlobalPoseSequence> gt = load_scene_dir(scenes_path);
    std::map<std::string, const GlobalPoseSequence*> by_id;
    for (const auto& s : gt) by_id[s.scene_id] = &s;

    std::vector<ForecastBundle> bundles;
    if (cfg.has("forecast")) {
        std::ifstream is(cfg.str("forecast"));
        if (!is) throw std::runtime_error("cannot open forecast file '" + cfg.str("forecast") + "'");
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            bundles.push_back(forecast_from_json(json::parse(line), skel));
        }
        if (bundles.empty())
            throw std::runtime_error("eval: forecast file '" + cfg.str("forecast") + "' is empty");
    } else {
        Model model(mc, skel, ParameterStore::load(cfg.str("checkpoint")));
        for (const auto& s : gt) bundles.push_back(model.predict(s));
    }

    std::vector<MetricReport> reports;
    for (const auto& b : bundles) {
        auto it = by_id.find(b.scene_id);
        if (it == by_id.end())
            throw std::runtime_error("eval: no ground-truth scene with id '" + b.scene_id + "'");
        if (it->second->frames() < tp + tf)
            throw std::runtime_error("eval: scene '" + b.scene_id + "' has " +
                                     std::to_string(it->second->frames()) +
                                     " frames, needs " + std::to_string(tp + tf));
        GlobalPoseSequence future = it->second->window(tp, tp + tf);
        reports.push_back(evaluate_scene(b, future, skel, stamps));
    }

    const std::string json_out = aggregate_to_json(reports);
    if (cfg.has("out")) {
        std::ofstream os(cfg.str("out"));
        os << json_out << "\n";
    } else {
        std::cout << json_out << "\n";
    }
    if (cfg.has("plot")) {
        fs::create_directories(cfg.str("plot"));
        write_metric_plot(cfg.str("plot") + "/metrics.svg", reports);
    }
    return kOk;
}

}  // namespace t2p::cli
