#include "sbridge/datagen.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

#include "sbridge/sde.hpp"

namespace sbridge::datagen {

InitialDistribution InitialDistribution::Box(Vec lo, Vec hi) {
    if (lo.size() == 0 || lo.size() != hi.size())
        throw std::invalid_argument("box bounds must be non-empty and of equal dimension");
    for (int i = 0; i < lo.size(); ++i)
        if (!(lo(i) <= hi(i)) || !std::isfinite(lo(i)) || !std::isfinite(hi(i)))
            throw std::invalid_argument("box bounds must be finite with lo <= hi");
    InitialDistribution d;
    d.kind = Kind::box;
    d.lo = std::move(lo);
    d.hi = std::move(hi);
    return d;
}

InitialDistribution InitialDistribution::Disk(Vec center, double radius) {
    if (center.size() != 2) throw std::invalid_argument("disk initial distribution is 2-D");
    if (!(radius >= 0.0) || !std::isfinite(radius))
        throw std::invalid_argument("disk radius must be finite and >= 0");
    InitialDistribution d;
    d.kind = Kind::disk;
    d.center = std::move(center);
    d.radius = radius;
    return d;
}

int InitialDistribution::dim() const {
    return static_cast<int>(kind == Kind::box ? lo.size() : center.size());
}

Vec InitialDistribution::sample_one(rng::Stream& rs) const {
    if (kind == Kind::box) {
        Vec x(lo.size());
        for (int i = 0; i < x.size(); ++i) x(i) = lo(i) + (hi(i) - lo(i)) * rs.uniform();
        return x;
    }
    // sqrt of a uniform radius fraction makes the density uniform over the disk
    const double r = radius * std::sqrt(rs.uniform());
    const double a = 2.0 * std::numbers::pi * rs.uniform();
    Vec x(2);
    x << center(0) + r * std::cos(a), center(1) + r * std::sin(a);
    return x;
}

namespace {

void check_spec(const GeneratorSpec& spec) {
    if (spec.n_times < 2) throw std::invalid_argument("generator needs at least 2 snapshot times");
    if (spec.pooled) {
        if (spec.pool_size < 1) throw std::invalid_argument("pooled generator needs pool_size >= 1");
    } else if (spec.particles_per_time < 1) {
        throw std::invalid_argument("particles_per_time must be >= 1");
    }
    if (!(spec.spacing > 0.0) || !std::isfinite(spec.spacing))
        throw std::invalid_argument("snapshot spacing must be positive and finite");
    if (!(spec.gamma_gen >= 0.0) || !std::isfinite(spec.gamma_gen))
        throw std::invalid_argument("gamma_gen must be finite and >= 0");
    if (!(spec.dt > 0.0) || !std::isfinite(spec.dt))
        throw std::invalid_argument("dt must be positive and finite");
    const int fd = family_dim(spec.system);
    if (fd != 0 && fd != spec.init.dim())
        throw std::invalid_argument("initial distribution dimension does not match the system");
}

}  // namespace

GeneratedData generate(const GeneratorSpec& spec) {
    check_spec(spec);

    std::vector<double> times(static_cast<std::size_t>(spec.n_times));
    for (int i = 0; i < spec.n_times; ++i) times[static_cast<std::size_t>(i)] = i * spec.spacing;
    TimeGrid grid(std::move(times), spec.dt);

    const int d = spec.init.dim();
    const FamilyDrift truth(spec.theta_true, d);
    const int total = spec.pooled ? spec.pool_size : spec.n_times * spec.particles_per_time;
    const rng::Key key = rng::master(spec.seed).child(rng::tag::datagen);

    std::vector<int> counts(static_cast<std::size_t>(spec.n_times), 0);
    GeneratedData out{SnapshotDataset{grid, {}, spec.gamma_gen}, {}};
    out.true_paths.reserve(static_cast<std::size_t>(total));

    for (int p = 0; p < total; ++p) {
        const int i = spec.pooled ? p % spec.n_times : p / spec.particles_per_time;
        rng::Stream rs(key.child(static_cast<std::uint64_t>(p)));
        const Vec x0 = spec.init.sample_one(rs);
        Trajectory tr =
            simulate_forward(truth, x0, 0.0, grid.total_steps(), spec.dt, spec.gamma_gen, rs);
        tr.anchor_time_index = i;
        tr.anchor_row = grid.steps_before(i);
        tr.anchor_particle = counts[static_cast<std::size_t>(i)]++;
        out.true_paths.push_back(std::move(tr));
    }

    out.data.snapshots.resize(static_cast<std::size_t>(spec.n_times));
    for (int i = 0; i < spec.n_times; ++i) {
        Snapshot& s = out.data.snapshots[static_cast<std::size_t>(i)];
        s.time_index = i;
        s.points = Mat(counts[static_cast<std::size_t>(i)], d);
    }
    for (const Trajectory& tr : out.true_paths)
        out.data.snapshots[static_cast<std::size_t>(tr.anchor_time_index)].points.row(
            tr.anchor_particle) = tr.states.row(tr.anchor_row);

    if (spec.gamma_gen > 0.0) out.data.validate();
    return out;
}

std::pair<SnapshotDataset, SnapshotDataset> split_train_val(const SnapshotDataset& data) {
    const int I = data.grid.n_times();
    if (I % 2 == 0)
        throw std::invalid_argument(
            "train/val split needs an odd number of snapshot times; drop one explicitly first");
    if (I < 3) throw std::invalid_argument("train/val split needs at least 3 snapshot times");
    if (static_cast<int>(data.snapshots.size()) != I)
        throw std::invalid_argument("need exactly one snapshot per grid time");

    std::vector<double> t_times, v_times;
    std::vector<Snapshot> t_snaps, v_snaps;
    for (int i = 0; i < I; ++i) {
        Snapshot s = data.snapshots[static_cast<std::size_t>(i)];
        auto& times = (i % 2 == 0) ? t_times : v_times;
        auto& snaps = (i % 2 == 0) ? t_snaps : v_snaps;
        s.time_index = static_cast<int>(times.size());
        times.push_back(data.grid.time(i));
        snaps.push_back(std::move(s));
    }
    SnapshotDataset train{TimeGrid(std::move(t_times), data.grid.dt(), false), std::move(t_snaps),
                          data.gamma};
    SnapshotDataset val{TimeGrid(std::move(v_times), data.grid.dt(), false), std::move(v_snaps),
                        data.gamma};
    return {std::move(train), std::move(val)};
}

}  // namespace sbridge::datagen
