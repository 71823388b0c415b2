#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dcsde/base.hpp"

namespace dcsde {

// ---------------------------------------------------------------------------
// Mixture weight u in [0,1]: the strength of the directed-chain term against
// the mean-field term.
// ---------------------------------------------------------------------------

struct MixtureWeight {
    double u = 0.0;
    MixtureWeight() = default;
    explicit MixtureWeight(double u_) : u(u_) {
        if (!(u >= 0.0 && u <= 1.0)) throw DomainError("mixture weight must lie in [0,1]");
    }
};

// ---------------------------------------------------------------------------
// Interaction kernels b(t,x,y). Built-in kinds are affine in (x,y); custom
// kernels load from a CSV grid and interpolate bilinearly.
// ---------------------------------------------------------------------------

enum class KernelKind {
    linear_mean_revert, // -(x - y)
    linear_repulsive,   // (x - y)
    affine,             // a_x x + a_y y + c
    tabulated_lipschitz,
};

struct AffineForm {
    double ax = 0.0;
    double ay = 0.0;
    double c = 0.0;
};

struct TabulatedGrid {
    std::vector<double> x;      // strictly increasing
    std::vector<double> y;      // strictly increasing
    std::vector<double> value;  // row-major: value[i*ny + j] = b(x_i, y_j)

    double at(std::size_t i, std::size_t j) const { return value[i * y.size() + j]; }

    double interpolate(double xv, double yv) const {
        if (xv < x.front() || xv > x.back() || yv < y.front() || yv > y.back())
            throw DomainError("tabulated kernel queried outside its domain");
        const auto ix = std::min<std::size_t>(
            std::upper_bound(x.begin(), x.end(), xv) - x.begin(), x.size() - 1) - 1;
        const auto iy = std::min<std::size_t>(
            std::upper_bound(y.begin(), y.end(), yv) - y.begin(), y.size() - 1) - 1;
        const double tx = (xv - x[ix]) / (x[ix + 1] - x[ix]);
        const double ty = (yv - y[iy]) / (y[iy + 1] - y[iy]);
        return (1 - tx) * (1 - ty) * at(ix, iy) + tx * (1 - ty) * at(ix + 1, iy) +
               (1 - tx) * ty * at(ix, iy + 1) + tx * ty * at(ix + 1, iy + 1);
    }
};

class DriftKernel {
  public:
    static DriftKernel linear_mean_revert() {
        return DriftKernel(KernelKind::linear_mean_revert, {-1.0, 1.0, 0.0}, 1.0, 1.0);
    }
    static DriftKernel linear_repulsive() {
        return DriftKernel(KernelKind::linear_repulsive, {1.0, -1.0, 0.0}, 1.0, 1.0);
    }
    static DriftKernel affine(double ax, double ay, double c) {
        const double lip = std::max(std::abs(ax), std::abs(ay));
        const double growth = std::max({std::abs(ax), std::abs(ay), std::abs(c), 1e-300});
        return DriftKernel(KernelKind::affine, {ax, ay, c}, lip, growth);
    }

    static DriftKernel tabulated(TabulatedGrid grid) {
        if (grid.x.size() < 2 || grid.y.size() < 2)
            throw ConfigError("tabulated kernel needs at least a 2x2 grid");
        if (grid.value.size() != grid.x.size() * grid.y.size())
            throw ConfigError("tabulated kernel value count does not match grid");
        for (std::size_t i = 1; i < grid.x.size(); ++i)
            if (!(grid.x[i] > grid.x[i - 1]))
                throw ConfigError("tabulated kernel x coordinates must strictly increase");
        for (std::size_t j = 1; j < grid.y.size(); ++j)
            if (!(grid.y[j] > grid.y[j - 1]))
                throw ConfigError("tabulated kernel y coordinates must strictly increase");
        // Lipschitz constant of the bilinear interpolant from grid differences.
        double cx = 0.0, cy = 0.0, vmax = 0.0;
        for (std::size_t i = 0; i < grid.x.size(); ++i)
            for (std::size_t j = 0; j < grid.y.size(); ++j) {
                vmax = std::max(vmax, std::abs(grid.at(i, j)));
                if (i + 1 < grid.x.size())
                    cx = std::max(cx, std::abs(grid.at(i + 1, j) - grid.at(i, j)) /
                                          (grid.x[i + 1] - grid.x[i]));
                if (j + 1 < grid.y.size())
                    cy = std::max(cy, std::abs(grid.at(i, j + 1) - grid.at(i, j)) /
                                          (grid.y[j + 1] - grid.y[j]));
            }
        DriftKernel k(KernelKind::tabulated_lipschitz, {}, std::max({cx, cy, 1e-300}),
                      std::max(vmax, 1e-300));
        k.grid_ = std::move(grid);
        return k;
    }

    // CSV grid file: header `x,y,value`, rows ordered x-major.
    static DriftKernel load_tabulated(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open kernel grid file: " + path);
        std::string line;
        if (!std::getline(in, line) || line.rfind("x,y,value", 0) != 0)
            throw ConfigError("kernel grid file must start with header `x,y,value`");
        std::vector<double> xs, ys, vs;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string fx, fy, fv;
            if (!std::getline(row, fx, ',') || !std::getline(row, fy, ',') ||
                !std::getline(row, fv))
                throw ConfigError("malformed kernel grid row: " + line);
            xs.push_back(std::stod(fx));
            ys.push_back(std::stod(fy));
            vs.push_back(std::stod(fv));
        }
        if (vs.empty()) throw ConfigError("kernel grid file has no rows");
        TabulatedGrid g;
        for (double v : ys) {
            if (!g.y.empty() && v == g.y.front()) break;
            g.y.push_back(v);
        }
        const std::size_t ny = g.y.size();
        if (ny == 0 || vs.size() % ny != 0)
            throw ConfigError("kernel grid rows do not form a row-major lattice");
        for (std::size_t i = 0; i < vs.size(); i += ny) g.x.push_back(xs[i]);
        g.value = std::move(vs);
        return tabulated(std::move(g));
    }

    KernelKind kind() const { return kind_; }
    double lipschitz_constant() const { return lipschitz_; }
    double growth_constant() const { return growth_; }

    std::optional<AffineForm> affine_form() const {
        if (kind_ == KernelKind::tabulated_lipschitz) return std::nullopt;
        return affine_;
    }

    // b(t, x, y); built-in kinds are time-homogeneous.
    double operator()(double /*t*/, double x, double y) const {
        switch (kind_) {
            case KernelKind::linear_mean_revert: return -(x - y);
            case KernelKind::linear_repulsive: return x - y;
            case KernelKind::affine: return affine_.ax * x + affine_.ay * y + affine_.c;
            case KernelKind::tabulated_lipschitz: return grid_->interpolate(x, y);
        }
        return 0.0;
    }

  private:
    DriftKernel(KernelKind kind, AffineForm affine, double lip, double growth)
        : kind_(kind), affine_(affine), lipschitz_(lip), growth_(growth) {}

    KernelKind kind_;
    AffineForm affine_;
    double lipschitz_ = 0.0;
    double growth_ = 0.0;
    std::optional<TabulatedGrid> grid_;
};

inline double eval_kernel(const DriftKernel& kernel, double t, double x, double y) {
    return kernel(t, x, y);
}

// ---------------------------------------------------------------------------
// Handle for the law term L_{X_t}: a weighted sample cloud, a known mean
// (exact for affine kernels), or the zero law.
// ---------------------------------------------------------------------------

class MeanFieldHandle {
  public:
    enum class Kind { zero, known_mean, sample_cloud };

    static MeanFieldHandle zero() { return MeanFieldHandle(); }

    static MeanFieldHandle known_mean(double m, std::string note = {}) {
        MeanFieldHandle h;
        h.kind_ = Kind::known_mean;
        h.mean_ = m;
        h.note_ = std::move(note);
        return h;
    }

    // Uniform weights when `weights` is empty.
    static MeanFieldHandle sample_cloud(std::span<const double> samples,
                                        std::span<const double> weights = {},
                                        std::string note = {}) {
        MeanFieldHandle h;
        h.kind_ = Kind::sample_cloud;
        h.samples_ = samples;
        h.weights_ = weights;
        h.note_ = std::move(note);
        if (!weights.empty()) {
            if (weights.size() != samples.size())
                throw InvalidLawError("sample cloud weights do not match samples");
            double s = 0.0;
            for (double w : weights) {
                if (w < 0.0) throw InvalidLawError("sample cloud weights must be nonnegative");
                s += w;
            }
            if (std::abs(s - 1.0) > 1e-12)
                throw InvalidLawError("sample cloud weights must sum to 1");
        }
        return h;
    }

    Kind kind() const { return kind_; }
    bool empty() const { return kind_ == Kind::sample_cloud && samples_.empty(); }
    const std::string& note() const { return note_; }

    double mean() const {
        switch (kind_) {
            case Kind::zero: return 0.0;
            case Kind::known_mean: return mean_;
            case Kind::sample_cloud: {
                if (samples_.empty()) throw InvalidLawError("empty sample cloud");
                if (weights_.empty()) return dcsde::mean(samples_);
                double s = 0.0;
                for (std::size_t i = 0; i < samples_.size(); ++i)
                    s += weights_[i] * samples_[i];
                return s;
            }
        }
        return 0.0;
    }

    // int b(t, x, y) law(dy), a plain weighted average in index order.
    double integrate_kernel(const DriftKernel& kernel, double t, double x) const {
        if (auto aff = kernel.affine_form())
            return aff->ax * x + aff->ay * mean() + aff->c;
        switch (kind_) {
            case Kind::zero: return kernel(t, x, 0.0);
            case Kind::known_mean:
                throw DomainError("known_mean law handle is exact only for affine kernels");
            case Kind::sample_cloud: {
                if (samples_.empty()) throw InvalidLawError("empty sample cloud");
                if (weights_.empty()) {
                    double s = 0.0;
                    for (double y : samples_) s += kernel(t, x, y);
                    return s / static_cast<double>(samples_.size());
                }
                double s = 0.0;
                for (std::size_t i = 0; i < samples_.size(); ++i)
                    s += weights_[i] * kernel(t, x, samples_[i]);
                return s;
            }
        }
        return 0.0;
    }

  private:
    Kind kind_ = Kind::zero;
    double mean_ = 0.0;
    std::span<const double> samples_;
    std::span<const double> weights_;
    std::string note_;
};

// ---------------------------------------------------------------------------
// Drift of the mixed equation: u b(t,x,neighbor) + (1-u) int b(t,x,y) law(dy).
// ---------------------------------------------------------------------------

inline double eval_mixed_drift(const DriftKernel& kernel, double t, double x,
                               double neighbor, const MeanFieldHandle& law,
                               MixtureWeight u) {
    if (u.u < 1.0 && law.empty())
        throw InvalidLawError("mean-field term requires a nonempty law when u < 1");
    const double chain = kernel(t, x, neighbor);
    if (u.u == 1.0) return chain;
    const double field = law.integrate_kernel(kernel, t, x);
    if (u.u == 0.0) return field;
    return u.u * chain + (1.0 - u.u) * field;
}

// Centered kernel: b(t,x,z) - int b(t,x,y) law(dy).
inline double centered_kernel(const DriftKernel& kernel, double t, double x, double z,
                              const MeanFieldHandle& law) {
    if (law.empty()) throw InvalidLawError("centered kernel requires a nonempty law");
    return kernel(t, x, z) - law.integrate_kernel(kernel, t, x);
}

} // namespace dcsde
