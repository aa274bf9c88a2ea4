#include "t2p/extract.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace t2p {

using nlohmann::json;

void CameraModel::validate() const {
    if (intrinsics.shape != std::vector<int>{3, 3})
        throw ShapeError("camera " + std::to_string(camera_index) + ": K must be 3x3");
    if (intrinsics.at({0, 0}) <= 0.0 || intrinsics.at({1, 1}) <= 0.0)
        throw std::invalid_argument("camera " + std::to_string(camera_index) +
                                    ": fx and fy must be positive");
    invert_3x3(intrinsics);  // throws when singular
}

void ExtractionConfig::validate() const {
    if (tau_px < 0.0) throw std::invalid_argument("extraction: tau must be >= 0");
    if (stride_frames < 1) throw std::invalid_argument("extraction: stride must be >= 1");
    if (window_frames < 1) throw std::invalid_argument("extraction: window must be >= 1");
    if (min_agents < 1) throw std::invalid_argument("extraction: min_agents must be >= 1");
    if (max_range <= 0.0) throw std::invalid_argument("extraction: max_range must be > 0");
}

Array invert_3x3(const Array& m) {
    const double a = m[0], b = m[1], c = m[2];
    const double d = m[3], e = m[4], f = m[5];
    const double g = m[6], h = m[7], i = m[8];
    const double det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    if (std::abs(det) < 1e-12) throw std::invalid_argument("invert_3x3: singular matrix");
    const double inv = 1.0 / det;
    Array out({3, 3});
    out[0] = (e * i - f * h) * inv;
    out[1] = (c * h - b * i) * inv;
    out[2] = (b * f - c * e) * inv;
    out[3] = (f * g - d * i) * inv;
    out[4] = (a * i - c * g) * inv;
    out[5] = (c * d - a * f) * inv;
    out[6] = (d * h - e * g) * inv;
    out[7] = (b * g - a * h) * inv;
    out[8] = (a * e - b * d) * inv;
    return out;
}

Array project_points(const Array& joints_3d, const Array& intrinsics) {
    const int j = joints_3d.dim(0);
    Array out({j, 2});
    for (int q = 0; q < j; ++q) {
        const double x = joints_3d.at({q, 0}), y = joints_3d.at({q, 1}), z = joints_3d.at({q, 2});
        if (z <= 0.0)
            throw std::invalid_argument("project_points: joint " + std::to_string(q) +
                                        " behind the camera (z=" + std::to_string(z) + ")");
        const double u = intrinsics[0] * x / z + intrinsics[1] * y / z + intrinsics[2];
        const double v = intrinsics[4] * y / z + intrinsics[5];
        out.at({q, 0}) = u;
        out.at({q, 1}) = v;
    }
    return out;
}

std::vector<int> match_filter(const std::vector<const Array*>& det_2d,
                              const std::vector<const Array*>& ann_2d, double tau) {
    struct Cand {
        double dist;
        int det, ann;
    };
    std::vector<Cand> cands;
    for (size_t d = 0; d < det_2d.size(); ++d)
        for (size_t a = 0; a < ann_2d.size(); ++a) {
            const Array& p = *det_2d[d];
            const Array& q = *ann_2d[a];
            if (p.shape != q.shape) continue;
            const int joints = p.dim(0);
            double acc = 0.0;
            for (int j = 0; j < joints; ++j)
                acc += std::hypot(p.at({j, 0}) - q.at({j, 0}), p.at({j, 1}) - q.at({j, 1}));
            cands.push_back({acc / joints, static_cast<int>(d), static_cast<int>(a)});
        }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& l, const Cand& r) {
        if (l.dist != r.dist) return l.dist < r.dist;
        if (l.det != r.det) return l.det < r.det;
        return l.ann < r.ann;
    });
    std::vector<int> match(det_2d.size(), -1);
    std::vector<char> ann_used(ann_2d.size(), 0);
    for (const Cand& c : cands) {
        if (!(c.dist < tau)) break;  // strict threshold; sorted, so nothing later passes
        if (match[static_cast<size_t>(c.det)] != -1 || ann_used[static_cast<size_t>(c.ann)]) continue;
        match[static_cast<size_t>(c.det)] = c.ann;
        ann_used[static_cast<size_t>(c.ann)] = 1;
    }
    return match;
}

Vec3 refine_joint(const Vec3& joint_cam, double ann_x, double ann_y, const Array& k_inv,
                  bool* degenerate) {
    const double z = joint_cam[2];
    // B = z * inv(K) * (X, Y, 1); A = (0, 0, z)
    const double bx = z * (k_inv[0] * ann_x + k_inv[1] * ann_y + k_inv[2]);
    const double by = z * (k_inv[3] * ann_x + k_inv[4] * ann_y + k_inv[5]);
    const double bz = z * (k_inv[6] * ann_x + k_inv[7] * ann_y + k_inv[8]);
    const double dx = bx, dy = by, dz = bz - z;
    const double len2 = dx * dx + dy * dy + dz * dz;
    if (len2 < 1e-18) {
        if (degenerate) *degenerate = true;
        return joint_cam;
    }
    if (degenerate) *degenerate = false;
    const double px = joint_cam[0], py = joint_cam[1], pz = joint_cam[2] - z;
    const double s = (px * dx + py * dy + pz * dz) / len2;
    return {s * dx, s * dy, z + s * dz};
}

Array refine_pose(const Array& joints_3d, const Array& det_2d, const Array& ann_2d,
                  const Array& intrinsics) {
    if (joints_3d.rank() != 2 || joints_3d.dim(1) != 3)
        throw ShapeError("refine_pose: joints must be (J,3), got " + joints_3d.shape_str());
    const int j = joints_3d.dim(0);
    if (ann_2d.dim(0) != j || det_2d.dim(0) != j)
        throw ShapeError("refine_pose: 2D arrays must carry one row per joint");

    // mean-x alignment: shift the annotation so its mean x matches the
    // detection's projected mean x, keeping the global position in place
    double det_mean_x = 0.0, ann_mean_x = 0.0;
    for (int q = 0; q < j; ++q) {
        det_mean_x += det_2d.at({q, 0});
        ann_mean_x += ann_2d.at({q, 0});
    }
    const double shift = (det_mean_x - ann_mean_x) / j;

    const Array k_inv = invert_3x3(intrinsics);
    Array out({j, 3});
    for (int q = 0; q < j; ++q) {
        const Vec3 p = {joints_3d.at({q, 0}), joints_3d.at({q, 1}), joints_3d.at({q, 2})};
        const Vec3 r = refine_joint(p, ann_2d.at({q, 0}) + shift, ann_2d.at({q, 1}), k_inv);
        out.at({q, 0}) = r[0];
        out.at({q, 1}) = r[1];
        out.at({q, 2}) = r[2];
    }
    return out;
}

Array center_pose(const Array& pose, int hip_index, double cx, double cy) {
    const int j = pose.dim(0);
    const double dx = cx - pose.at({hip_index, 0});
    const double dy = cy - pose.at({hip_index, 1});
    Array out = pose;
    for (int q = 0; q < j; ++q) {
        out.at({q, 0}) += dx;
        out.at({q, 1}) += dy;
    }
    return out;
}

Array rotate_about_z(const Array& pose, double yaw) {
    const int j = pose.dim(0);
    const double c = std::cos(yaw), s = std::sin(yaw);
    Array out = pose;
    for (int q = 0; q < j; ++q) {
        const double x = pose.at({q, 0}), y = pose.at({q, 1});
        out.at({q, 0}) = c * x - s * y;
        out.at({q, 1}) = s * x + c * y;
    }
    return out;
}

Array optical_to_upright(const Array& pose_optical) {
    const int j = pose_optical.dim(0);
    Array out({j, 3});
    for (int q = 0; q < j; ++q) {
        out.at({q, 0}) = pose_optical.at({q, 2});   // depth -> forward
        out.at({q, 1}) = -pose_optical.at({q, 0});  // right -> left
        out.at({q, 2}) = -pose_optical.at({q, 1});  // down -> up
    }
    return out;
}

std::vector<GlobalPoseSequence> run_extraction(const ExtractionScene& scene,
                                               const ExtractionConfig& cfg, const Skeleton& skel,
                                               ExtractionReport* report) {
    cfg.validate();
    ExtractionReport local;
    ExtractionReport& rep = report ? *report : local;
    rep = ExtractionReport{};

    std::map<int, const CameraModel*> cams;
    for (const auto& c : scene.cameras) {
        c.validate();
        cams[c.camera_index] = &c;
    }
    std::map<std::pair<int, std::string>, const BoxRecord*> boxes;
    for (const auto& b : scene.boxes) boxes[{b.t, b.agent_id}] = &b;

    // group records by (t, cam)
    std::map<std::pair<int, int>, std::vector<const DetectionRecord*>> dets;
    std::map<std::pair<int, int>, std::vector<const AnnotationRecord*>> anns;
    for (const auto& d : scene.detections) dets[{d.t, d.cam}].push_back(&d);
    for (const auto& a : scene.annotations) anns[{a.t, a.cam}].push_back(&a);
    rep.detections_total = static_cast<std::int64_t>(scene.detections.size());

    // registered world poses: (t, agent_id) -> (J,3); first registration wins
    std::map<int, std::map<std::string, Array>> registered;
    for (const auto& [key, frame_dets] : dets) {
        const auto [t, cam_index] = key;
        const auto cam_it = cams.find(cam_index);
        if (cam_it == cams.end())
            throw std::runtime_error("extraction: detection references unknown camera " +
                                     std::to_string(cam_index));
        const CameraModel& cam = *cam_it->second;
        const auto ann_it = anns.find(key);
        const std::vector<const AnnotationRecord*> frame_anns =
            ann_it == anns.end() ? std::vector<const AnnotationRecord*>{} : ann_it->second;

        std::vector<const Array*> det2d, ann2d;
        for (const auto* d : frame_dets) det2d.push_back(&d->joints_2d);
        for (const auto* a : frame_anns) ann2d.push_back(&a->joints_2d);
        const std::vector<int> match = match_filter(det2d, ann2d, cfg.tau_px);

        for (size_t di = 0; di < frame_dets.size(); ++di) {
            if (match[di] < 0) {
                ++rep.rejected_match;
                continue;
            }
            ++rep.accepted;
            const AnnotationRecord& ann = *frame_anns[static_cast<size_t>(match[di])];
            const auto box_it = boxes.find({t, ann.agent_id});
            if (box_it == boxes.end()) {
                ++rep.missing_box;
                continue;
            }
            Array refined = refine_pose(frame_dets[di]->joints_3d, frame_dets[di]->joints_2d,
                                        ann.joints_2d, cam.intrinsics);
            Array upright = optical_to_upright(refined);
            // the box center lives in world coordinates; counter-rotate it into
            // the camera's upright frame so centering can precede the yaw step
            const double c = std::cos(-cam.yaw), s = std::sin(-cam.yaw);
            const double bx = c * box_it->second->cx - s * box_it->second->cy;
            const double by = s * box_it->second->cx + c * box_it->second->cy;
            Array centered = center_pose(upright, skel.hip_index, bx, by);
            Array world = rotate_about_z(centered, cam.yaw);

            auto& frame_reg = registered[t];
            if (frame_reg.count(ann.agent_id)) {
                ++rep.duplicate_registration;
                continue;
            }
            frame_reg.emplace(ann.agent_id, std::move(world));
            ++rep.registered;
        }
    }

    std::vector<GlobalPoseSequence> out;
    if (registered.empty()) {
        return out;
    }
    const int t_min = registered.begin()->first;
    const int t_max = registered.rbegin()->first;
    const int total = t_max - t_min + 1;

    for (int start = t_min; start + cfg.window_frames <= t_min + total; start += cfg.stride_frames) {
        ++rep.windows_considered;
        // agents present and in range for the whole window
        std::set<std::string> candidates;
        if (registered.count(start))
            for (const auto& [id, pose] : registered.at(start)) candidates.insert(id);
        std::vector<std::string> kept;
        for (const auto& id : candidates) {
            bool ok = true;
            for (int f = 0; f < cfg.window_frames && ok; ++f) {
                const auto ft = registered.find(start + f);
                if (ft == registered.end() || !ft->second.count(id)) {
                    ok = false;
                    break;
                }
                const Array& pose = ft->second.at(id);
                const double hx = pose.at({skel.hip_index, 0});
                const double hy = pose.at({skel.hip_index, 1});
                if (std::hypot(hx, hy) > cfg.max_range) {
                    ok = false;
                    ++rep.range_excluded_agent_windows;
                }
            }
            if (ok) kept.push_back(id);
        }
        if (static_cast<int>(kept.size()) < cfg.min_agents) continue;

        GlobalPoseSequence seq;
        seq.scene_id = "extract_" + std::to_string(start);
        seq.frame_rate = cfg.frame_rate;
        seq.agent_ids = kept;
        const int n = static_cast<int>(kept.size());
        seq.positions = Array({n, cfg.window_frames, skel.joint_count, 3});
        for (int a = 0; a < n; ++a)
            for (int f = 0; f < cfg.window_frames; ++f) {
                const Array& pose = registered.at(start + f).at(kept[static_cast<size_t>(a)]);
                for (int q = 0; q < skel.joint_count; ++q)
                    for (int cc = 0; cc < 3; ++cc)
                        seq.positions.at({a, f, q, cc}) = pose.at({q, cc});
            }
        seq.validate();
        out.push_back(std::move(seq));
        ++rep.windows_emitted;
    }
    return out;
}

std::string ExtractionReport::to_json() const {
    json o;
    o["detections_total"] = detections_total;
    o["rejected_match"] = rejected_match;
    o["accepted"] = accepted;
    o["missing_box"] = missing_box;
    o["duplicate_registration"] = duplicate_registration;
    o["registered"] = registered;
    o["range_excluded_agent_windows"] = range_excluded_agent_windows;
    o["windows_considered"] = windows_considered;
    o["windows_emitted"] = windows_emitted;
    return o.dump(2);
}

namespace {

Array array_from_json(const json& rows, int cols) {
    const int n = static_cast<int>(rows.size());
    Array out({n, cols});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < cols; ++c)
            out.at({r, c}) = rows[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
    return out;
}

json array_to_json(const Array& a) {
    json rows = json::array();
    for (int r = 0; r < a.dim(0); ++r) {
        json row = json::array();
        for (int c = 0; c < a.dim(1); ++c) row.push_back(a.at({r, c}));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open '" + path + "'");
    std::vector<json> out;
    std::string line;
    int ln = 0;
    while (std::getline(is, line)) {
        ++ln;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw std::runtime_error(path + ": malformed JSON at line " + std::to_string(ln) +
                                     ": " + e.what());
        }
    }
    return out;
}

}  // namespace

ExtractionScene load_extraction_inputs(const std::string& dir) {
    ExtractionScene scene;
    for (const auto& o : read_jsonl(dir + "/cameras.jsonl")) {
        CameraModel cam;
        cam.camera_index = o.at("cam").get<int>();
        cam.yaw = o.at("yaw").get<double>();
        const auto k = o.at("K");
        if (k.size() != 9) throw std::runtime_error("cameras.jsonl: K must hold 9 numbers");
        for (int i = 0; i < 9; ++i) cam.intrinsics[i] = k[static_cast<size_t>(i)].get<double>();
        cam.validate();
        scene.cameras.push_back(std::move(cam));
    }
    for (const auto& o : read_jsonl(dir + "/detections.jsonl")) {
        DetectionRecord d;
        d.t = o.at("t").get<int>();
        d.cam = o.at("cam").get<int>();
        d.joints_3d = array_from_json(o.at("joints_3d"), 3);
        d.joints_2d = array_from_json(o.at("joints_2d"), 2);
        scene.detections.push_back(std::move(d));
    }
    for (const auto& o : read_jsonl(dir + "/annotations.jsonl")) {
        AnnotationRecord a;
        a.t = o.at("t").get<int>();
        a.cam = o.at("cam").get<int>();
        a.agent_id = o.at("agent_id").get<std::string>();
        a.joints_2d = array_from_json(o.at("joints_2d"), 2);
        scene.annotations.push_back(std::move(a));
    }
    for (const auto& o : read_jsonl(dir + "/boxes.jsonl")) {
        BoxRecord b;
        b.t = o.at("t").get<int>();
        b.agent_id = o.at("agent_id").get<std::string>();
        b.cx = o.at("cx").get<double>();
        b.cy = o.at("cy").get<double>();
        scene.boxes.push_back(std::move(b));
    }
    return scene;
}

void save_extraction_inputs(const std::string& dir, const ExtractionScene& scene) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir + "/cameras.jsonl");
        for (const auto& c : scene.cameras) {
            json o;
            o["cam"] = c.camera_index;
            o["yaw"] = c.yaw;
            json k = json::array();
            for (int i = 0; i < 9; ++i) k.push_back(c.intrinsics[i]);
            o["K"] = std::move(k);
            os << o.dump() << "\n";
        }
    }
    {
        std::ofstream os(dir + "/detections.jsonl");
        for (const auto& d : scene.detections) {
            json o;
            o["t"] = d.t;
            o["cam"] = d.cam;
            o["joints_3d"] = array_to_json(d.joints_3d);
            o["joints_2d"] = array_to_json(d.joints_2d);
            os << o.dump() << "\n";
        }
    }
    {
        std::ofstream os(dir + "/annotations.jsonl");
        for (const auto& a : scene.annotations) {
            json o;
            o["t"] = a.t;
            o["cam"] = a.cam;
            o["agent_id"] = a.agent_id;
            o["joints_2d"] = array_to_json(a.joints_2d);
            os << o.dump() << "\n";
        }
    }
    {
        std::ofstream os(dir + "/boxes.jsonl");
        for (const auto& b : scene.boxes) {
            json o;
            o["t"] = b.t;
            o["agent_id"] = b.agent_id;
            o["cx"] = b.cx;
            o["cy"] = b.cy;
            os << o.dump() << "\n";
        }
    }
}

}  // namespace t2p
