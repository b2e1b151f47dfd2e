#include "sbridge/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace sbridge::io {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

namespace {

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw std::invalid_argument("cannot open for writing: " + p.string());
    return f;
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::invalid_argument("cannot open for reading: " + p.string());
    return f;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("malformed number: " + s);
    return v;
}

std::string snapshot_header(int d) {
    std::string h;
    for (int c = 0; c < d; ++c) {
        if (c) h += ',';
        h += "x_" + std::to_string(c);
    }
    return h;
}

void write_points_csv(const Mat& pts, const fs::path& file) {
    auto f = open_out(file);
    f << snapshot_header(static_cast<int>(pts.cols())) << '\n';
    for (int r = 0; r < pts.rows(); ++r) {
        for (int c = 0; c < pts.cols(); ++c) {
            if (c) f << ',';
            f << fmt_double(pts(r, c));
        }
        f << '\n';
    }
}

Mat read_points_csv(const fs::path& file, int d) {
    auto f = open_in(file);
    std::string line;
    if (!std::getline(f, line) || line != snapshot_header(d))
        throw std::invalid_argument("unexpected snapshot csv header in " + file.string());
    std::vector<std::vector<double>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = split_csv(line);
        if (static_cast<int>(fields.size()) != d)
            throw std::invalid_argument("wrong column count in " + file.string());
        std::vector<double> row;
        row.reserve(fields.size());
        for (const auto& s : fields) row.push_back(parse_double(s));
        rows.push_back(std::move(row));
    }
    Mat pts(static_cast<int>(rows.size()), d);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (int c = 0; c < d; ++c) pts(static_cast<int>(r), c) = rows[r][static_cast<std::size_t>(c)];
    return pts;
}

nlohmann::json dataset_header(const SnapshotDataset& data) {
    nlohmann::json j;
    j["d"] = data.dim();
    j["gamma"] = data.gamma;
    j["times"] = data.grid.times();
    return j;
}

SnapshotDataset dataset_from_header(const nlohmann::json& j, std::vector<Mat> points, double dt) {
    const auto times = j.at("times").get<std::vector<double>>();
    const double gamma = j.at("gamma").get<double>();
    if (times.size() != points.size())
        throw std::invalid_argument("snapshot count does not match the times array");
    std::vector<Snapshot> snaps;
    snaps.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        snaps.push_back(Snapshot{static_cast<int>(i), std::move(points[i])});
    return SnapshotDataset{TimeGrid(times, dt, false), std::move(snaps), gamma};
}

}  // namespace

void save_dataset(const SnapshotDataset& data, const fs::path& dir) {
    fs::create_directories(dir);
    open_out(dir / "dataset.json") << dataset_header(data).dump(2) << '\n';
    for (std::size_t i = 0; i < data.snapshots.size(); ++i)
        write_points_csv(data.snapshots[i].points,
                         dir / ("snapshot_" + std::to_string(i) + ".csv"));
}

SnapshotDataset load_dataset(const fs::path& dir, double dt) {
    const auto header = nlohmann::json::parse(open_in(dir / "dataset.json"));
    const int d = header.at("d").get<int>();
    const auto n = header.at("times").size();
    std::vector<Mat> points;
    points.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        points.push_back(read_points_csv(dir / ("snapshot_" + std::to_string(i) + ".csv"), d));
    return dataset_from_header(header, std::move(points), dt);
}

void save_dataset_bundled(const SnapshotDataset& data, const fs::path& file) {
    nlohmann::json j = dataset_header(data);
    auto& snaps = j["snapshots"] = nlohmann::json::array();
    for (const Snapshot& s : data.snapshots) {
        nlohmann::json cloud = nlohmann::json::array();
        for (int r = 0; r < s.points.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (int c = 0; c < s.points.cols(); ++c) row.push_back(s.points(r, c));
            cloud.push_back(std::move(row));
        }
        snaps.push_back(std::move(cloud));
    }
    open_out(file) << j.dump() << '\n';
}

SnapshotDataset load_dataset_bundled(const fs::path& file, double dt) {
    const auto j = nlohmann::json::parse(open_in(file));
    const int d = j.at("d").get<int>();
    std::vector<Mat> points;
    for (const auto& cloud : j.at("snapshots")) {
        Mat pts(static_cast<int>(cloud.size()), d);
        int r = 0;
        for (const auto& row : cloud) {
            if (static_cast<int>(row.size()) != d)
                throw std::invalid_argument("bundled snapshot row has wrong dimension");
            for (int c = 0; c < d; ++c) pts(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
            ++r;
        }
        points.push_back(std::move(pts));
    }
    return dataset_from_header(j, std::move(points), dt);
}

void save_trajectories_csv(const std::vector<Trajectory>& trajs, const fs::path& file) {
    auto f = open_out(file);
    const int d = trajs.empty() ? 0 : trajs.front().dim();
    f << "traj_id,anchor_time_index,step,time," << snapshot_header(d) << '\n';
    for (std::size_t id = 0; id < trajs.size(); ++id) {
        const Trajectory& tr = trajs[id];
        for (int j = 0; j < tr.length(); ++j) {
            f << id << ',' << tr.anchor_time_index << ',' << j << ',' << fmt_double(tr.time_at(j));
            for (int c = 0; c < tr.dim(); ++c) f << ',' << fmt_double(tr.states(j, c));
            f << '\n';
        }
    }
}

nlohmann::json param_to_json(const ParamVector& theta) {
    nlohmann::json j;
    j["family"] = family_name(theta.family);
    auto& vals = j["values"] = nlohmann::json::array();
    for (int i = 0; i < theta.values.size(); ++i) vals.push_back(theta.values(i));
    return j;
}

ParamVector param_from_json(const nlohmann::json& j) {
    ParamVector theta;
    theta.family = family_from_name(j.at("family").get<std::string>());
    const auto& vals = j.at("values");
    theta.values = Vec(static_cast<int>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i)
        theta.values(static_cast<int>(i)) = vals.at(i).get<double>();
    return theta;
}

void save_history_jsonl(const std::vector<refine::RefinementState>& history,
                        const fs::path& file) {
    auto f = open_out(file);
    for (const auto& st : history) {
        nlohmann::json j;
        j["k"] = st.k;
        j["theta"] = param_to_json(st.theta);
        j["loss"] = st.loss;
        j["kl"] = st.kl;
        j["wall_seconds"] = st.wall_seconds;
        f << j.dump() << '\n';
    }
}

std::vector<refine::RefinementState> load_history_jsonl(const fs::path& file) {
    auto f = open_in(file);
    std::vector<refine::RefinementState> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        refine::RefinementState st;
        st.k = j.at("k").get<int>();
        st.theta = param_from_json(j.at("theta"));
        st.loss = j.at("loss").get<double>();
        st.kl = j.at("kl").get<double>();
        st.wall_seconds = j.at("wall_seconds").get<double>();
        out.push_back(std::move(st));
    }
    return out;
}

void save_metrics_csv(const std::vector<MetricRow>& rows, const fs::path& file) {
    auto f = open_out(file);
    f << kMetricsHeader << '\n';
    for (const MetricRow& r : rows)
        f << r.seed << ',' << r.method << ',' << r.anchor_mode << ',' << fmt_double(r.val_time)
          << ',' << fmt_double(r.emd) << ',' << fmt_double(r.mmd_sq) << '\n';
}

std::vector<MetricRow> load_metrics_csv(const fs::path& file) {
    auto f = open_in(file);
    std::string line;
    if (!std::getline(f, line) || line != kMetricsHeader)
        throw std::invalid_argument("metrics csv header mismatch in " + file.string());
    std::vector<MetricRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = split_csv(line);
        if (fields.size() != 6)
            throw std::invalid_argument("metrics csv row has wrong field count");
        MetricRow r;
        r.seed = std::stoull(fields[0]);
        r.method = fields[1];
        r.anchor_mode = fields[2];
        r.val_time = parse_double(fields[3]);
        r.emd = parse_double(fields[4]);
        r.mmd_sq = parse_double(fields[5]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace sbridge::io
