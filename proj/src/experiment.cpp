#include "sbridge/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "sbridge/metrics.hpp"
#include "sbridge/sde.hpp"

namespace sbridge::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_object(const json& j, const std::string& ctx,
                    std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw std::invalid_argument(ctx + " must be a JSON object");
    for (const auto& item : j.items()) {
        const std::string& key = item.key();
        if (std::none_of(allowed.begin(), allowed.end(),
                         [&](const char* a) { return key == a; }))
            throw std::invalid_argument("unknown key '" + key + "' in " + ctx);
    }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

Vec get_vec(const json& j) {
    Vec v(static_cast<int>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<int>(i)) = j.at(i).get<double>();
    return v;
}

datagen::InitialDistribution parse_init(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "box") {
        require_object(j, "dataset.generator.init", {"kind", "lo", "hi"});
        return datagen::InitialDistribution::Box(get_vec(j.at("lo")), get_vec(j.at("hi")));
    }
    if (kind == "disk") {
        require_object(j, "dataset.generator.init", {"kind", "center", "radius"});
        return datagen::InitialDistribution::Disk(get_vec(j.at("center")),
                                                  j.at("radius").get<double>());
    }
    throw std::invalid_argument("init.kind must be 'box' or 'disk'");
}

}  // namespace

datagen::GeneratorSpec parse_generator_spec(const json& j) {
    require_object(j, "generator spec",
                   {"system", "theta", "init", "n_times", "particles_per_time", "pooled",
                    "pool_size", "spacing", "gamma_gen", "dt", "seed"});
    datagen::GeneratorSpec spec;
    spec.system = family_from_name(j.at("system").get<std::string>());
    if (spec.system != Family::lotka_volterra && spec.system != Family::repressilator &&
        spec.system != Family::vortex)
        throw std::invalid_argument(
            "generator system must be lotka_volterra, repressilator or vortex");
    spec.theta_true.family = spec.system;
    spec.theta_true.values = get_vec(j.at("theta"));
    spec.init = parse_init(j.at("init"));
    spec.n_times = j.at("n_times").get<int>();
    spec.particles_per_time = get_or(j, "particles_per_time", spec.particles_per_time);
    spec.pooled = get_or(j, "pooled", spec.pooled);
    spec.pool_size = get_or(j, "pool_size", spec.pool_size);
    spec.spacing = get_or(j, "spacing", spec.spacing);
    spec.gamma_gen = get_or(j, "gamma_gen", spec.gamma_gen);
    spec.dt = get_or(j, "dt", spec.dt);
    spec.seed = get_or(j, "seed", spec.seed);
    return spec;
}

ExperimentConfig parse_experiment_config(const json& j) {
    require_object(j, "experiment config",
                   {"version", "name", "dataset", "method", "irr", "metrics", "anchor_mode", "out",
                    "seeds"});
    ExperimentConfig cfg;
    if (!j.contains("version") || !j.at("version").is_number_integer() ||
        j.at("version").get<int>() != 1)
        throw std::invalid_argument("config requires schema field \"version\": 1");
    cfg.name = get_or<std::string>(j, "name", "");

    const json& ds = j.at("dataset");
    require_object(ds, "dataset", {"generator", "files", "drop_last"});
    if (ds.contains("generator") == ds.contains("files"))
        throw std::invalid_argument("dataset needs exactly one of 'generator' or 'files'");
    if (ds.contains("files")) {
        cfg.dataset.from_files = true;
        cfg.dataset.files = ds.at("files").get<std::string>();
    } else {
        cfg.dataset.generator = parse_generator_spec(ds.at("generator"));
    }
    cfg.dataset.drop_last = get_or(ds, "drop_last", false);

    cfg.method = j.at("method").get<std::string>();
    if (cfg.method != "vanilla" && cfg.method != "irr")
        throw std::invalid_argument("method must be 'vanilla' or 'irr'");

    if (j.contains("irr")) {
        const json& ji = j.at("irr");
        require_object(ji, "irr",
                       {"iterations", "gamma", "dt", "family", "solver", "fit", "warm_start"});
        cfg.irr.iterations = get_or(ji, "iterations", cfg.irr.iterations);
        cfg.irr.gamma = get_or(ji, "gamma", cfg.irr.gamma);
        cfg.irr.dt = get_or(ji, "dt", cfg.irr.dt);
        if (ji.contains("family"))
            cfg.irr.family = family_from_name(ji.at("family").get<std::string>());
        if (ji.contains("solver")) {
            const json& js = ji.at("solver");
            require_object(js, "irr.solver",
                           {"ipml_iters", "lengthscale", "ridge", "max_inducing",
                            "max_fit_points"});
            cfg.irr.solver.ipml_iters = get_or(js, "ipml_iters", cfg.irr.solver.ipml_iters);
            cfg.irr.solver.regressor.lengthscale =
                get_or(js, "lengthscale", cfg.irr.solver.regressor.lengthscale);
            cfg.irr.solver.regressor.ridge = get_or(js, "ridge", cfg.irr.solver.regressor.ridge);
            cfg.irr.solver.regressor.max_inducing =
                get_or(js, "max_inducing", cfg.irr.solver.regressor.max_inducing);
            cfg.irr.solver.max_fit_points =
                get_or(js, "max_fit_points", cfg.irr.solver.max_fit_points);
        }
        if (ji.contains("fit")) {
            const json& jf = ji.at("fit");
            require_object(jf, "irr.fit", {"lr", "epochs", "max_halvings"});
            cfg.irr.fit.lr = get_or(jf, "lr", cfg.irr.fit.lr);
            cfg.irr.fit.epochs = get_or(jf, "epochs", cfg.irr.fit.epochs);
            cfg.irr.fit.max_halvings = get_or(jf, "max_halvings", cfg.irr.fit.max_halvings);
        }
        cfg.irr.warm_start = get_or(ji, "warm_start", cfg.irr.warm_start);
    }
    if (cfg.method == "irr" && (!j.contains("irr") || !j.at("irr").contains("family")))
        throw std::invalid_argument("method 'irr' requires irr.family");

    if (j.contains("metrics")) {
        cfg.want_emd = cfg.want_mmd = false;
        const json& jm = j.at("metrics");
        if (!jm.is_array() || jm.empty())
            throw std::invalid_argument("metrics must be a non-empty array");
        for (const auto& m : jm) {
            const std::string name = m.get<std::string>();
            if (name == "emd")
                cfg.want_emd = true;
            else if (name == "mmd_sq")
                cfg.want_mmd = true;
            else
                throw std::invalid_argument("unknown metric '" + name + "'");
        }
    }

    cfg.anchor_mode = get_or<std::string>(j, "anchor_mode", cfg.anchor_mode);
    if (cfg.anchor_mode != "one-time-anchor" && cfg.anchor_mode != "all-anchors")
        throw std::invalid_argument("anchor_mode must be 'one-time-anchor' or 'all-anchors'");

    cfg.out_dir = get_or<std::string>(j, "out", "");
    if (j.contains("seeds")) {
        cfg.seeds.clear();
        for (const auto& s : j.at("seeds")) cfg.seeds.push_back(s.get<std::uint64_t>());
        if (cfg.seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::invalid_argument("cannot open config: " + file.string());
    return parse_experiment_config(json::parse(in));
}

namespace {

SnapshotDataset drop_last_snapshot(const SnapshotDataset& data) {
    if (data.grid.n_times() < 3)
        throw std::invalid_argument("cannot drop a snapshot from fewer than 3");
    std::vector<double> times = data.grid.times();
    times.pop_back();
    std::vector<Snapshot> snaps(data.snapshots.begin(), data.snapshots.end() - 1);
    return SnapshotDataset{TimeGrid(std::move(times), data.grid.dt(), false), std::move(snaps),
                           data.gamma};
}

// state of each trajectory at the discrete step nearest to t (off by <= dt/2)
Mat states_at(const std::vector<Trajectory>& trajs, double t, bool first_anchor_only) {
    std::vector<int> keep;
    for (std::size_t n = 0; n < trajs.size(); ++n)
        if (!first_anchor_only || trajs[n].anchor_time_index == 0)
            keep.push_back(static_cast<int>(n));
    if (keep.empty()) throw std::invalid_argument("no trajectories to evaluate");
    Mat out(static_cast<int>(keep.size()), trajs.front().dim());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        const Trajectory& tr = trajs[static_cast<std::size_t>(keep[r])];
        auto j = static_cast<int>(std::llround((t - tr.start_time) / tr.dt));
        j = std::clamp(j, 0, tr.steps());
        out.row(static_cast<int>(r)) = tr.states.row(j);
    }
    return out;
}

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    SnapshotDataset full = [&] {
        if (cfg.dataset.from_files) return io::load_dataset(cfg.dataset.files, cfg.irr.dt);
        datagen::GeneratorSpec spec = cfg.dataset.generator;
        spec.seed = seed;
        return datagen::generate(spec).data;
    }();
    if (cfg.dataset.drop_last) full = drop_last_snapshot(full);
    auto [train, val] = datagen::split_train_val(full);

    refine::IRRConfig icfg = cfg.irr;
    icfg.seed = seed;
    if (cfg.method == "vanilla") {
        icfg.iterations = 1;
        icfg.refine = false;
        icfg.family = Family::zero;
    }
    refine::IRRResult fitres = refine::run_irr(train, icfg);

    // fresh imputation from the final drifts; child(0) cannot collide with
    // the in-loop keys child(1..K)
    SnapshotDataset itrain{TimeGrid(train.grid.times(), icfg.dt, false), train.snapshots,
                           icfg.gamma};
    std::vector<Trajectory> trajs =
        refine::impute_trajectories(itrain, *fitres.forward, *fitres.backward, icfg.gamma,
                                    rng::master(seed).child(rng::tag::impute).child(0));

    const bool first_only = cfg.anchor_mode == "one-time-anchor";
    const double qnan = std::numeric_limits<double>::quiet_NaN();
    SeedResult out;
    out.seed = seed;
    out.history = std::move(fitres.history);
    for (int v = 0; v < val.grid.n_times(); ++v) {
        const double t_v = val.grid.time(v);
        const Mat cloud = states_at(trajs, t_v, first_only);
        const Mat& truth = val.snapshots[static_cast<std::size_t>(v)].points;
        io::MetricRow row;
        row.seed = seed;
        row.method = cfg.method;
        row.anchor_mode = cfg.anchor_mode;
        row.val_time = t_v;
        row.emd = cfg.want_emd ? emd(cloud, truth) : qnan;
        row.mmd_sq = cfg.want_mmd ? mmd_sq(cloud, truth) : qnan;
        out.rows.push_back(std::move(row));
    }

    if (!cfg.out_dir.empty()) {
        const fs::path dir = cfg.out_dir / ("seed_" + std::to_string(seed));
        fs::create_directories(dir);
        io::save_history_jsonl(out.history, dir / "history.jsonl");
        io::save_dataset(full, dir / "data");
        std::vector<Trajectory> restricted;
        for (const Trajectory& tr : trajs)
            if (tr.anchor_time_index == 0) restricted.push_back(tr);
        io::save_trajectories_csv(restricted, dir / "trajectories.csv");
    }
    return out;
}

SeedResult run_seed_wrapped(const ExperimentConfig& cfg, std::uint64_t seed) {
    try {
        return run_seed(cfg, seed);
    } catch (const SimulationDiverged& e) {
        throw SeedFailure(seed, true, "seed " + std::to_string(seed) + ": " + e.what());
    } catch (const DivergedFit& e) {
        throw SeedFailure(seed, true, "seed " + std::to_string(seed) + ": " + e.what());
    } catch (const NumericalSolveError& e) {
        throw SeedFailure(seed, true, "seed " + std::to_string(seed) + ": " + e.what());
    } catch (const refine::RefinementAborted& e) {
        throw SeedFailure(seed, true, "seed " + std::to_string(seed) + ": " + e.what());
    } catch (const std::exception& e) {
        throw SeedFailure(seed, false, "seed " + std::to_string(seed) + ": " + e.what());
    }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, int threads) {
    if (cfg.seeds.empty()) throw std::invalid_argument("no seeds to run");
    if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

    const int n = static_cast<int>(cfg.seeds.size());
    ExperimentResult res;
    res.per_seed.resize(static_cast<std::size_t>(n));
    if (threads <= 1) {
        for (int i = 0; i < n; ++i)
            res.per_seed[static_cast<std::size_t>(i)] =
                run_seed_wrapped(cfg, cfg.seeds[static_cast<std::size_t>(i)]);
    } else {
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
        for (int base = 0; base < n; base += threads) {
            std::vector<std::thread> pool;
            const int hi = std::min(base + threads, n);
            for (int i = base; i < hi; ++i)
                pool.emplace_back([&, i] {
                    try {
                        res.per_seed[static_cast<std::size_t>(i)] =
                            run_seed_wrapped(cfg, cfg.seeds[static_cast<std::size_t>(i)]);
                    } catch (...) {
                        errors[static_cast<std::size_t>(i)] = std::current_exception();
                    }
                });
            for (auto& th : pool) th.join();
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    for (const SeedResult& sr : res.per_seed)
        res.rows.insert(res.rows.end(), sr.rows.begin(), sr.rows.end());
    if (!cfg.out_dir.empty()) io::save_metrics_csv(res.rows, cfg.out_dir / "metrics.csv");
    return res;
}

namespace {

struct Agg {
    std::vector<double> emd, mmd;
};

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

// minimal trajectory reader for the quick-look: per id, the (x_0, x_1) or
// (time, x_0) polyline
std::vector<std::vector<std::pair<double, double>>> read_polylines(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::invalid_argument("cannot open " + file.string());
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("empty trajectory dump");
    const bool one_dim = line == "traj_id,anchor_time_index,step,time,x_0";
    std::vector<std::vector<std::pair<double, double>>> polys;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string f;
        std::vector<std::string> fields;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (fields.size() < 5) continue;
        const auto id = static_cast<std::size_t>(std::stoul(fields[0]));
        if (polys.size() <= id) polys.resize(id + 1);
        const double t = std::stod(fields[3]);
        const double x0 = std::stod(fields[4]);
        if (one_dim)
            polys[id].emplace_back(t, x0);
        else
            polys[id].emplace_back(x0, std::stod(fields[5]));
    }
    return polys;
}

void write_quicklook_svg(const fs::path& seed_dir, const fs::path& out_file) {
    const SnapshotDataset data = io::load_dataset(seed_dir / "data", 1.0);
    auto polys = read_polylines(seed_dir / "trajectories.csv");
    const bool one_dim = data.dim() == 1;

    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
    double ylo = xlo, yhi = -xlo;
    auto grow = [&](double x, double y) {
        xlo = std::min(xlo, x);
        xhi = std::max(xhi, x);
        ylo = std::min(ylo, y);
        yhi = std::max(yhi, y);
    };
    for (std::size_t i = 0; i < data.snapshots.size(); ++i) {
        const Mat& pts = data.snapshots[i].points;
        for (int r = 0; r < pts.rows(); ++r)
            one_dim ? grow(data.grid.time(static_cast<int>(i)), pts(r, 0))
                    : grow(pts(r, 0), pts(r, 1));
    }
    for (const auto& poly : polys)
        for (const auto& [x, y] : poly) grow(x, y);
    if (!(xhi > xlo)) xhi = xlo + 1;
    if (!(yhi > ylo)) yhi = ylo + 1;

    const double W = 640, H = 480, M = 30;
    auto sx = [&](double x) { return M + (x - xlo) / (xhi - xlo) * (W - 2 * M); };
    auto sy = [&](double y) { return H - M - (y - ylo) / (yhi - ylo) * (H - 2 * M); };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f", v);
        return std::string(buf);
    };
    static const char* palette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee",
                                    "#aa3377", "#bbbbbb", "#000000", "#e07a28", "#44aa99"};

    std::ofstream f(out_file);
    if (!f) throw std::invalid_argument("cannot write " + out_file.string());
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << ' ' << H << "\">\n"
      << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    const std::size_t max_polys = 60;
    for (std::size_t id = 0; id < std::min(polys.size(), max_polys); ++id) {
        if (polys[id].size() < 2) continue;
        const std::size_t stride = std::max<std::size_t>(1, polys[id].size() / 300);
        f << "<polyline fill=\"none\" stroke=\"#555555\" stroke-width=\"1\" "
             "stroke-opacity=\"0.3\" points=\"";
        for (std::size_t j = 0; j < polys[id].size(); j += stride)
            f << num(sx(polys[id][j].first)) << ',' << num(sy(polys[id][j].second)) << ' ';
        const auto& last = polys[id].back();
        f << num(sx(last.first)) << ',' << num(sy(last.second)) << "\"/>\n";
    }
    for (std::size_t i = 0; i < data.snapshots.size(); ++i) {
        const Mat& pts = data.snapshots[i].points;
        const char* color = palette[i % (sizeof palette / sizeof *palette)];
        for (int r = 0; r < pts.rows(); ++r) {
            const double px = one_dim ? data.grid.time(static_cast<int>(i)) : pts(r, 0);
            const double py = one_dim ? pts(r, 0) : pts(r, 1);
            f << "<circle cx=\"" << num(sx(px)) << "\" cy=\"" << num(sy(py))
              << "\" r=\"2.5\" fill=\"" << color << "\" fill-opacity=\"0.8\"/>\n";
        }
    }
    f << "</svg>\n";
}

}  // namespace

void write_report(const fs::path& results_dir) {
    const auto rows = io::load_metrics_csv(results_dir / "metrics.csv");
    if (rows.empty()) throw std::invalid_argument("no metric rows in " + results_dir.string());

    // group by (method, anchor_mode, val_time) keeping first-appearance order
    std::vector<std::tuple<std::string, std::string, double>> order;
    std::map<std::tuple<std::string, std::string, double>, Agg> groups;
    for (const auto& r : rows) {
        const auto key = std::make_tuple(r.method, r.anchor_mode, r.val_time);
        if (!groups.count(key)) order.push_back(key);
        groups[key].emd.push_back(r.emd);
        groups[key].mmd.push_back(r.mmd_sq);
    }

    std::ofstream f(results_dir / "summary.csv");
    if (!f) throw std::invalid_argument("cannot write summary.csv");
    f << "method,anchor_mode,val_time,n_seeds,emd_mean,emd_std,mmd_sq_mean,mmd_sq_std\n";
    for (const auto& key : order) {
        const Agg& a = groups[key];
        f << std::get<0>(key) << ',' << std::get<1>(key) << ',' << io::fmt_double(std::get<2>(key))
          << ',' << a.emd.size() << ',' << io::fmt_double(mean_of(a.emd)) << ','
          << io::fmt_double(pop_std(a.emd)) << ',' << io::fmt_double(mean_of(a.mmd)) << ','
          << io::fmt_double(pop_std(a.mmd)) << '\n';
    }
    f.close();

    // quick-look from the numerically smallest seed directory that has a dump
    std::vector<std::pair<unsigned long long, fs::path>> seed_dirs;
    for (const auto& entry : fs::directory_iterator(results_dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_directory() && name.starts_with("seed_"))
            seed_dirs.emplace_back(std::stoull(name.substr(5)), entry.path());
    }
    std::sort(seed_dirs.begin(), seed_dirs.end());
    for (const auto& [s, dir] : seed_dirs) {
        if (fs::exists(dir / "trajectories.csv") && fs::exists(dir / "data" / "dataset.json")) {
            write_quicklook_svg(dir, results_dir / "quicklook.svg");
            return;
        }
    }
}

}  // namespace sbridge::experiment
