#include "gvio/dataset_io.hpp"

#include <Eigen/Geometry>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace gvio::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNs = 1e9;

std::int64_t to_ns(double t) { return std::llround(t * kNs); }
double from_ns(std::int64_t ns) { return double(ns) / kNs; }

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<double> parse_row(const std::string& line, const fs::path& file, int row,
                              std::size_t expected) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= line.size()) {
        std::size_t comma = line.find(',', pos);
        if (comma == std::string::npos) comma = line.size();
        double v = 0.0;
        const char* b = line.data() + pos;
        const char* e = line.data() + comma;
        while (b < e && (*b == ' ' || *b == '\t')) ++b;
        const auto [p, ec] = std::from_chars(b, e, v);
        if (ec != std::errc{} || p != e) {
            throw DataError(file.string() + ": malformed value in row " +
                            std::to_string(row));
        }
        out.push_back(v);
        pos = comma + 1;
        if (comma == line.size()) break;
    }
    if (out.size() != expected) {
        throw DataError(file.string() + ": expected " + std::to_string(expected) +
                        " columns in row " + std::to_string(row) + ", got " +
                        std::to_string(out.size()));
    }
    return out;
}

/// Applies fn(row_index, values) to every non-header row.
template <typename Fn>
void read_csv(const fs::path& file, std::size_t columns, Fn&& fn) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line[0] == '#') continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        fn(row, parse_row(line, file, row, columns));
    }
}

std::ofstream open_out(const fs::path& file) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot open " + file.string() + " for writing");
    return out;
}

json quat_json(const Mat3& R) {
    const Eigen::Quaterniond q(R);
    return json{q.w(), q.x(), q.y(), q.z()};
}

Mat3 quat_from_json(const json& j) {
    return Eigen::Quaterniond(j.at(0).get<double>(), j.at(1).get<double>(),
                              j.at(2).get<double>(), j.at(3).get<double>())
        .normalized()
        .toRotationMatrix();
}

json vec_json(const Vec3& v) { return json{v.x(), v.y(), v.z()}; }

Vec3 vec_from_json(const json& j) {
    return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

}  // namespace

void write_dataset(const sim::SimulatedDataset& ds, const fs::path& dir) {
    fs::create_directories(dir);

    {
        auto out = open_out(dir / "imu.csv");
        out << "#timestamp_ns,w_x,w_y,w_z,a_x,a_y,a_z\n";
        for (const auto& s : ds.imu) {
            out << to_ns(s.t);
            for (int k = 0; k < 3; ++k) out << ',' << fmt(s.gyro(k));
            for (int k = 0; k < 3; ++k) out << ',' << fmt(s.accel(k));
            out << '\n';
        }
    }
    {
        auto out = open_out(dir / "gps.csv");
        out << "#timestamp_ns,p_e,p_n,p_u,cov_ee,cov_nn,cov_uu,cov_en,cov_eu,cov_nu\n";
        for (const auto& m : ds.gps) {
            out << to_ns(m.t);
            for (int k = 0; k < 3; ++k) out << ',' << fmt(m.p_enu(k));
            out << ',' << fmt(m.cov(0, 0)) << ',' << fmt(m.cov(1, 1)) << ','
                << fmt(m.cov(2, 2)) << ',' << fmt(m.cov(0, 1)) << ',' << fmt(m.cov(0, 2))
                << ',' << fmt(m.cov(1, 2)) << '\n';
        }
    }
    {
        auto out = open_out(dir / "features.csv");
        out << "#timestamp_ns,landmark_id,u,v,sigma_px\n";
        for (const auto& o : ds.vis) {
            out << to_ns(o.t) << ',' << o.landmark_id << ',' << fmt(o.uv.x()) << ','
                << fmt(o.uv.y()) << ',' << fmt(std::sqrt(o.cov(0, 0))) << '\n';
        }
    }
    {
        auto out = open_out(dir / "truth.csv");
        out << "#timestamp_ns,p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x,v_y,v_z,"
               "b_w_x,b_w_y,b_w_z,b_a_x,b_a_y,b_a_z\n";
        for (const auto& s : ds.truth) {
            const Eigen::Quaterniond q(s.R_wb);
            out << to_ns(s.t);
            for (int k = 0; k < 3; ++k) out << ',' << fmt(s.p(k));
            out << ',' << fmt(q.w()) << ',' << fmt(q.x()) << ',' << fmt(q.y()) << ','
                << fmt(q.z());
            for (int k = 0; k < 3; ++k) out << ',' << fmt(s.v(k));
            for (int k = 0; k < 3; ++k) out << ',' << fmt(s.bw(k));
            for (int k = 0; k < 3; ++k) out << ',' << fmt(s.ba(k));
            out << '\n';
        }
    }
    {
        auto out = open_out(dir / "landmarks.csv");
        out << "#id,x,y,z\n";
        for (const auto& [id, x] : ds.landmarks) {
            out << id << ',' << fmt(x.x()) << ',' << fmt(x.y()) << ',' << fmt(x.z())
                << '\n';
        }
    }

    json meta;
    meta["format_version"] = 1;
    meta["seed"] = ds.spec.seed;
    meta["duration"] = ds.spec.duration;
    meta["imu_rate"] = ds.rig.imu_rate;
    meta["gps_rate"] = ds.rig.gps_rate;
    meta["cam_rate"] = ds.rig.cam_rate;
    meta["gps_sigma"] = ds.rig.gps_sigma;
    meta["pixel_sigma"] = ds.rig.pixel_sigma;
    meta["imu_noise"] = {ds.rig.imu_noise.gyro_noise, ds.rig.imu_noise.accel_noise,
                         ds.rig.imu_noise.gyro_bias_rw, ds.rig.imu_noise.accel_bias_rw};
    meta["camera"] = {{"fx", ds.rig.camera.fx}, {"fy", ds.rig.camera.fy},
                      {"cx", ds.rig.camera.cx}, {"cy", ds.rig.camera.cy},
                      {"width", ds.rig.camera.width}, {"height", ds.rig.camera.height},
                      {"q_cb", quat_json(ds.rig.camera.R_cb)},
                      {"p_cb", vec_json(ds.rig.camera.p_cb)}};
    meta["calib_true"] = {{"p_gb", vec_json(ds.truth_calib.p_gb)},
                          {"t_d", ds.truth_calib.t_d}};
    meta["frame_true"] = {{"q_ew", quat_json(ds.truth_frame.R_ew)},
                          {"p_ew", vec_json(ds.truth_frame.p_ew)},
                          {"initialized", ds.truth_frame.initialized}};
    json fails = json::array();
    for (const auto& f : ds.failures) {
        fails.push_back({{"modality",
                          f.modality == sim::FailureWindow::Modality::Gps ? "gps" : "vision"},
                         {"t_start", f.t_start},
                         {"t_end", f.t_end}});
    }
    meta["failures"] = fails;
    auto out = open_out(dir / "meta.json");
    out << meta.dump(2) << '\n';
}

sim::SimulatedDataset read_dataset(const fs::path& dir) {
    sim::SimulatedDataset ds;

    json meta;
    {
        std::ifstream in(dir / "meta.json");
        if (!in) throw DataError("cannot open " + (dir / "meta.json").string());
        in >> meta;
    }
    ds.spec.seed = meta.value("seed", 0ull);
    ds.spec.duration = meta.value("duration", 0.0);
    ds.rig.imu_rate = meta.at("imu_rate").get<double>();
    ds.rig.gps_rate = meta.at("gps_rate").get<double>();
    ds.rig.cam_rate = meta.at("cam_rate").get<double>();
    ds.rig.gps_sigma = meta.value("gps_sigma", 0.0);
    ds.rig.pixel_sigma = meta.value("pixel_sigma", 0.0);
    const auto& n = meta.at("imu_noise");
    ds.rig.imu_noise.gyro_noise = n.at(0).get<double>();
    ds.rig.imu_noise.accel_noise = n.at(1).get<double>();
    ds.rig.imu_noise.gyro_bias_rw = n.at(2).get<double>();
    ds.rig.imu_noise.accel_bias_rw = n.at(3).get<double>();
    const auto& cam = meta.at("camera");
    ds.rig.camera.fx = cam.at("fx").get<double>();
    ds.rig.camera.fy = cam.at("fy").get<double>();
    ds.rig.camera.cx = cam.at("cx").get<double>();
    ds.rig.camera.cy = cam.at("cy").get<double>();
    ds.rig.camera.width = cam.at("width").get<int>();
    ds.rig.camera.height = cam.at("height").get<int>();
    ds.rig.camera.R_cb = quat_from_json(cam.at("q_cb"));
    ds.rig.camera.p_cb = vec_from_json(cam.at("p_cb"));
    ds.truth_calib.p_gb = vec_from_json(meta.at("calib_true").at("p_gb"));
    ds.truth_calib.t_d = meta.at("calib_true").at("t_d").get<double>();
    ds.rig.calib_true = ds.truth_calib;
    ds.truth_frame.R_ew = quat_from_json(meta.at("frame_true").at("q_ew"));
    ds.truth_frame.p_ew = vec_from_json(meta.at("frame_true").at("p_ew"));
    ds.truth_frame.initialized = meta.at("frame_true").value("initialized", true);
    ds.rig.R_ew_true = ds.truth_frame.R_ew;
    ds.rig.p_ew_true = ds.truth_frame.p_ew;
    for (const auto& f : meta.value("failures", json::array())) {
        ds.failures.push_back({f.at("modality").get<std::string>() == "gps"
                                   ? sim::FailureWindow::Modality::Gps
                                   : sim::FailureWindow::Modality::Vision,
                               f.at("t_start").get<double>(),
                               f.at("t_end").get<double>()});
    }

    read_csv(dir / "imu.csv", 7, [&](int, const std::vector<double>& v) {
        ImuSample s;
        s.t = from_ns(std::int64_t(v[0]));
        s.gyro = Vec3(v[1], v[2], v[3]);
        s.accel = Vec3(v[4], v[5], v[6]);
        ds.imu.push_back(s);
    });
    read_csv(dir / "gps.csv", 10, [&](int, const std::vector<double>& v) {
        GpsMeasurement m;
        m.t = from_ns(std::int64_t(v[0]));
        m.p_enu = Vec3(v[1], v[2], v[3]);
        m.cov << v[4], v[7], v[8], v[7], v[5], v[9], v[8], v[9], v[6];
        ds.gps.push_back(m);
    });
    if (fs::exists(dir / "features.csv")) {
        read_csv(dir / "features.csv", 5, [&](int, const std::vector<double>& v) {
            VisualObservation o;
            o.t = from_ns(std::int64_t(v[0]));
            o.landmark_id = std::int64_t(v[1]);
            o.uv = Vec2(v[2], v[3]);
            o.cov = v[4] * v[4] * Mat2::Identity();
            ds.vis.push_back(o);
        });
    }
    read_csv(dir / "truth.csv", 17, [&](int, const std::vector<double>& v) {
        NavState s;
        s.t = from_ns(std::int64_t(v[0]));
        s.p = Vec3(v[1], v[2], v[3]);
        s.R_wb = Eigen::Quaterniond(v[4], v[5], v[6], v[7]).normalized().toRotationMatrix();
        s.v = Vec3(v[8], v[9], v[10]);
        s.bw = Vec3(v[11], v[12], v[13]);
        s.ba = Vec3(v[14], v[15], v[16]);
        ds.truth.push_back(s);
    });
    if (fs::exists(dir / "landmarks.csv")) {
        read_csv(dir / "landmarks.csv", 4, [&](int, const std::vector<double>& v) {
            ds.landmarks.emplace_back(std::int64_t(v[0]), Vec3(v[1], v[2], v[3]));
        });
    }

    if (ds.truth.empty()) throw DataError((dir / "truth.csv").string() + ": empty");
    ds.truth_frame.R_wb0 = ds.truth.front().R_wb;
    ds.truth_frame.p_wb0 = ds.truth.front().p;
    ds.truth_frame.R_eb0 = ds.truth_frame.R_ew * ds.truth_frame.R_wb0;
    ds.truth_frame.p_eb0 =
        ds.truth_frame.R_ew * ds.truth_frame.p_wb0 + ds.truth_frame.p_ew;
    return ds;
}

void write_tum(const TrajectoryEstimate& traj, const fs::path& file) {
    auto out = open_out(file);
    for (const auto& s : traj.samples) {
        const Eigen::Quaterniond q(s.R);
        out << fmt(s.t) << ' ' << fmt(s.p.x()) << ' ' << fmt(s.p.y()) << ' '
            << fmt(s.p.z()) << ' ' << fmt(q.x()) << ' ' << fmt(q.y()) << ' '
            << fmt(q.z()) << ' ' << fmt(q.w()) << '\n';
    }
}

TrajectoryEstimate read_tum(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    TrajectoryEstimate traj;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double t, tx, ty, tz, qx, qy, qz, qw;
        if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
            throw DataError(file.string() + ": malformed TUM row " + std::to_string(row));
        }
        TrajectorySample s;
        s.t = t;
        s.p = Vec3(tx, ty, tz);
        s.R = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
        traj.samples.push_back(s);
    }
    return traj;
}

void ingest_euroc(const fs::path& euroc_dir, const fs::path& out_dir, double gps_sigma,
                  double gps_rate, std::uint64_t seed) {
    fs::path root = euroc_dir;
    if (fs::exists(root / "mav0")) root = root / "mav0";
    const fs::path imu_file = root / "imu0" / "data.csv";
    const fs::path gt_file = root / "state_groundtruth_estimate0" / "data.csv";
    if (!fs::exists(imu_file)) throw DataError("missing " + imu_file.string());
    if (!fs::exists(gt_file)) throw DataError("missing " + gt_file.string());

    sim::SimulatedDataset ds;
    read_csv(imu_file, 7, [&](int, const std::vector<double>& v) {
        ImuSample s;
        s.t = from_ns(std::int64_t(v[0]));
        s.gyro = Vec3(v[1], v[2], v[3]);
        s.accel = Vec3(v[4], v[5], v[6]);
        ds.imu.push_back(s);
    });
    read_csv(gt_file, 17, [&](int, const std::vector<double>& v) {
        NavState s;
        s.t = from_ns(std::int64_t(v[0]));
        s.p = Vec3(v[1], v[2], v[3]);
        s.R_wb = Eigen::Quaterniond(v[4], v[5], v[6], v[7]).normalized().toRotationMatrix();
        s.v = Vec3(v[8], v[9], v[10]);
        s.bw = Vec3(v[11], v[12], v[13]);
        s.ba = Vec3(v[14], v[15], v[16]);
        ds.truth.push_back(s);
    });
    if (ds.imu.empty()) throw DataError(imu_file.string() + ": empty");
    if (ds.truth.empty()) throw DataError(gt_file.string() + ": empty");

    // Rebase time to the overlap of both streams.
    const double t0 = std::max(ds.imu.front().t, ds.truth.front().t);
    std::erase_if(ds.imu, [&](const ImuSample& s) { return s.t < t0; });
    std::erase_if(ds.truth, [&](const NavState& s) { return s.t < t0; });
    for (auto& s : ds.imu) s.t -= t0;
    for (auto& s : ds.truth) s.t -= t0;

    ds.gps = sim::euroc_mocap_to_gps(ds.truth, gps_sigma, gps_rate, seed);

    // Mocap frame doubles as ENU: identity alignment, zero lever arm/offset.
    double dt_sum = 0.0;
    for (std::size_t i = 1; i < ds.imu.size(); ++i) dt_sum += ds.imu[i].t - ds.imu[i - 1].t;
    ds.rig.imu_rate = (ds.imu.size() - 1) / std::max(dt_sum, 1e-9);
    ds.rig.gps_rate = gps_rate;
    ds.rig.gps_sigma = gps_sigma;
    ds.spec.duration = ds.imu.back().t;
    ds.truth_frame.initialized = true;
    ds.truth_frame.R_wb0 = ds.truth.front().R_wb;
    ds.truth_frame.p_wb0 = ds.truth.front().p;
    ds.truth_frame.R_eb0 = ds.truth_frame.R_wb0;
    ds.truth_frame.p_eb0 = ds.truth_frame.p_wb0;

    write_dataset(ds, out_dir);
}

}  // namespace gvio::io
