#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dcsde/base.hpp"
#include "dcsde/chain.hpp"
#include "dcsde/drift.hpp"

namespace dcsde {

// ---------------------------------------------------------------------------
// Weighted atom cloud on R^k.
// ---------------------------------------------------------------------------

class EmpiricalMeasure {
  public:
    EmpiricalMeasure() = default;

    // samples are flat, atom-major: samples[i*k + d].
    EmpiricalMeasure(std::size_t k, std::vector<double> samples,
                     std::vector<double> weights = {})
        : k_(k), samples_(std::move(samples)), weights_(std::move(weights)) {
        if (k_ == 0) throw DomainError("measure dimension must be >= 1");
        if (samples_.size() % k_ != 0)
            throw DomainError("sample buffer does not match dimension");
        require_finite(samples_, "measure atoms");
        const std::size_t n = size();
        if (weights_.empty()) {
            weights_.assign(n, n ? 1.0 / static_cast<double>(n) : 0.0);
        } else {
            if (weights_.size() != n) throw InvalidLawError("weight count mismatch");
            double s = 0.0;
            for (double w : weights_) {
                if (w < 0.0) throw InvalidLawError("weights must be nonnegative");
                s += w;
            }
            if (std::abs(s - 1.0) > 1e-12)
                throw InvalidLawError("weights must sum to 1 (within 1e-12)");
        }
    }

    static EmpiricalMeasure from_samples_1d(std::vector<double> samples) {
        return EmpiricalMeasure(1, std::move(samples));
    }

    std::size_t dimension() const { return k_; }
    std::size_t size() const { return k_ ? samples_.size() / k_ : 0; }
    bool empty() const { return size() == 0; }

    std::span<const double> atom(std::size_t i) const {
        return {samples_.data() + i * k_, k_};
    }
    double coordinate(std::size_t i, std::size_t d) const { return samples_[i * k_ + d]; }
    double weight(std::size_t i) const { return weights_[i]; }
    const std::vector<double>& raw_samples() const { return samples_; }
    const std::vector<double>& raw_weights() const { return weights_; }

    template <typename F>
    double integrate(F&& f) const {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i) s += weights_[i] * f(atom(i));
        return s;
    }

    double mean(std::size_t d = 0) const {
        double s = 0.0;
        for (std::size_t i = 0; i < size(); ++i) s += weights_[i] * coordinate(i, d);
        return s;
    }

    // Projection onto a coordinate subset, weights preserved.
    EmpiricalMeasure marginal(const std::vector<std::size_t>& coords) const {
        for (auto c : coords)
            if (c >= k_) throw DomainError("marginal coordinate out of range");
        std::vector<double> proj(size() * coords.size());
        for (std::size_t i = 0; i < size(); ++i)
            for (std::size_t d = 0; d < coords.size(); ++d)
                proj[i * coords.size() + d] = coordinate(i, coords[d]);
        return EmpiricalMeasure(coords.size(), std::move(proj), weights_);
    }

    // Merge exactly equal atoms.
    EmpiricalMeasure compact() const {
        std::map<std::vector<double>, double> merged;
        for (std::size_t i = 0; i < size(); ++i) {
            std::vector<double> key(atom(i).begin(), atom(i).end());
            merged[key] += weights_[i];
        }
        std::vector<double> samples, weights;
        for (const auto& [key, w] : merged) {
            samples.insert(samples.end(), key.begin(), key.end());
            weights.push_back(w);
        }
        // renormalize away accumulated round-off
        const double s = block_sum(weights);
        for (double& w : weights) w /= s;
        return EmpiricalMeasure(k_, std::move(samples), std::move(weights));
    }

    MeanFieldHandle as_mean_field(std::string note = {}) const {
        if (k_ != 1) throw DomainError("mean-field handle requires a 1-D measure");
        return MeanFieldHandle::sample_cloud(samples_, weights_, std::move(note));
    }

  private:
    std::size_t k_ = 1;
    std::vector<double> samples_;
    std::vector<double> weights_;
};

// Joint law of k consecutive particles at a grid time, with wraparound.
inline EmpiricalMeasure empirical_joint(const PathEnsemble& ensemble, double t,
                                        std::size_t k) {
    if (k < 1 || k > ensemble.particles)
        throw ConfigError("empirical_joint requires 1 <= k <= n");
    const std::size_t step = ensemble.grid.index_of(t);
    const std::size_t n = ensemble.particles;
    std::vector<double> atoms(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < k; ++d)
            atoms[i * k + d] = ensemble.value((i + d) % n, step);
    return EmpiricalMeasure(k, std::move(atoms));
}

// ---------------------------------------------------------------------------
// Exact 1-D Wasserstein-1 via quantile coupling. `truncate` applies the
// path-space metric's "wedge 1" to the transport cost.
// ---------------------------------------------------------------------------

inline double wasserstein1_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                              bool truncate = false) {
    if (mu.dimension() != 1 || nu.dimension() != 1)
        throw DomainError("wasserstein1_1d requires 1-D measures");
    if (mu.empty() || nu.empty()) throw InvalidLawError("wasserstein1_1d on empty measure");

    auto sorted = [](const EmpiricalMeasure& m) {
        std::vector<std::size_t> idx(m.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return m.coordinate(a, 0) < m.coordinate(b, 0);
        });
        return idx;
    };
    const auto ia = sorted(mu);
    const auto ib = sorted(nu);

    double cost = 0.0;
    std::size_t a = 0, b = 0;
    double wa = mu.weight(ia[0]), wb = nu.weight(ib[0]);
    while (a < ia.size() && b < ib.size()) {
        const double m = std::min(wa, wb);
        double d = std::abs(mu.coordinate(ia[a], 0) - nu.coordinate(ib[b], 0));
        if (truncate) d = std::min(d, 1.0);
        cost += m * d;
        wa -= m;
        wb -= m;
        if (wa <= 1e-15) {
            if (++a < ia.size()) wa = mu.weight(ia[a]);
        }
        if (wb <= 1e-15) {
            if (++b < ib.size()) wb = nu.weight(ib[b]);
        }
    }
    return cost;
}

// ---------------------------------------------------------------------------
// Bounded-Lipschitz test family (sup-norm <= 1, Lipschitz constant <= 1) and
// the induced lower bound of the dual metric ||mu - nu||_1.
// ---------------------------------------------------------------------------

struct BLFunction {
    std::string name;
    std::function<double(std::span<const double>)> f;
};

class TestFunctionFamily {
  public:
    static TestFunctionFamily custom(std::size_t dimension, std::vector<BLFunction> members) {
        TestFunctionFamily fam;
        fam.dim_ = dimension;
        fam.members_ = std::move(members);
        return fam;
    }

    static TestFunctionFamily defaults(std::size_t dimension) {
        TestFunctionFamily fam;
        fam.dim_ = dimension;
        for (std::size_t d = 0; d < dimension; ++d)
            for (double c : {-2.0, -1.0, 0.0, 1.0, 2.0})
                fam.members_.push_back(
                    {"clamp(x" + std::to_string(d) + "-" + std::to_string(c) + ")",
                     [d, c](std::span<const double> x) {
                         return std::clamp(x[d] - c, -1.0, 1.0);
                     }});
        for (double c : {-1.0, 0.0, 1.0})
            fam.members_.push_back({"radial(" + std::to_string(c) + ")",
                                    [c](std::span<const double> x) {
                                        double s = 0.0;
                                        for (double v : x) s += (v - c) * (v - c);
                                        return std::max(0.0, 1.0 - std::sqrt(s));
                                    }});
        return fam;
    }

    std::size_t dimension() const { return dim_; }
    const std::vector<BLFunction>& members() const { return members_; }

    // Check |f| <= 1 and |f(x)-f(y)| <= ||x-y|| on random pairs in [-box,box]^k.
    bool verify_bounds(std::uint64_t seed, std::size_t pairs = 2000, double box = 5.0) const {
        RngStream rng(seed, StreamPurpose::generic, 7);
        std::vector<double> x(dim_), y(dim_);
        for (std::size_t p = 0; p < pairs; ++p) {
            double norm = 0.0;
            for (std::size_t d = 0; d < dim_; ++d) {
                x[d] = (2.0 * rng.next_uniform() - 1.0) * box;
                y[d] = (2.0 * rng.next_uniform() - 1.0) * box;
                norm += (x[d] - y[d]) * (x[d] - y[d]);
            }
            norm = std::sqrt(norm);
            for (const auto& m : members_) {
                const double fx = m.f(x), fy = m.f(y);
                if (std::abs(fx) > 1.0 + 1e-12 || std::abs(fy) > 1.0 + 1e-12) return false;
                if (std::abs(fx - fy) > norm * (1.0 + 1e-9) + 1e-12) return false;
            }
        }
        return true;
    }

  private:
    std::size_t dim_ = 1;
    std::vector<BLFunction> members_;
};

// Lower bound of sup_f int f d(mu-nu); documented as such.
inline double bounded_lipschitz_distance(const EmpiricalMeasure& mu,
                                         const EmpiricalMeasure& nu,
                                         const TestFunctionFamily& family) {
    if (mu.dimension() != nu.dimension())
        throw DomainError("bounded_lipschitz_distance: dimension mismatch");
    if (family.members().empty()) throw DomainError("empty test function family");
    double best = 0.0;
    for (const auto& m : family.members()) {
        const double gap = std::abs(mu.integrate(m.f) - nu.integrate(m.f));
        best = std::max(best, gap);
    }
    return best;
}

// ---------------------------------------------------------------------------
// Path-space distance D_t: certified upper bounds of the Wasserstein infimum
// from explicit couplings (identity pairing, pairing after sorting by the
// terminal value, and a family of cyclic-shift pairings standing in for the
// independent coupling). The infimum itself is not computable.
// ---------------------------------------------------------------------------

struct PathDistance {
    double value = 0.0;
    std::string coupling;
    bool truncated = true;
    bool upper_bound = true; // always: reported value bounds the true infimum
};

namespace detail {

// paths: row-major n x m matrices.
inline double coupling_cost(std::span<const double> a, std::span<const double> b,
                            std::size_t m, std::size_t upto,
                            const std::vector<std::size_t>& ia,
                            const std::vector<std::size_t>& ib, bool truncate) {
    const std::size_t n = ia.size();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* pa = a.data() + ia[i] * m;
        const double* pb = b.data() + ib[i] * m;
        double sup = 0.0;
        for (std::size_t j = 0; j <= upto; ++j)
            sup = std::max(sup, std::abs(pa[j] - pb[j]));
        total += truncate ? std::min(sup, 1.0) : sup;
    }
    return total / static_cast<double>(n);
}

} // namespace detail

inline PathDistance pathspace_distance_matrices(std::span<const double> a,
                                                std::span<const double> b, std::size_t n,
                                                std::size_t m, std::size_t upto,
                                                bool truncate = true) {
    if (upto >= m) throw GridError("pathspace distance window exceeds the grid");
    std::vector<std::size_t> id(n);
    std::iota(id.begin(), id.end(), 0);

    PathDistance best;
    best.truncated = truncate;
    best.coupling = "index";
    best.value = detail::coupling_cost(a, b, m, upto, id, id, truncate);

    // sort both by terminal value, match ranks
    auto rank = [m, upto](std::span<const double> p, std::size_t count) {
        std::vector<std::size_t> idx(count);
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
            return p[x * m + upto] < p[y * m + upto];
        });
        return idx;
    };
    const double sorted_cost =
        detail::coupling_cost(a, b, m, upto, rank(a, n), rank(b, n), truncate);
    if (sorted_cost < best.value) {
        best.value = sorted_cost;
        best.coupling = "sorted-terminal";
    }

    // cyclic shifts approximate the independent coupling while staying bijective
    for (std::size_t s : {std::size_t{1}, n / 3, n / 2}) {
        if (s == 0 || s >= n) continue;
        std::vector<std::size_t> shifted(n);
        for (std::size_t i = 0; i < n; ++i) shifted[i] = (i + s) % n;
        const double c = detail::coupling_cost(a, b, m, upto, id, shifted, truncate);
        if (c < best.value) {
            best.value = c;
            best.coupling = "cyclic-shift";
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// C^2_c test functions for the generator residuals: smooth bumps and clamped
// polynomial bumps, with product form in higher dimension.
// ---------------------------------------------------------------------------

struct TestFunctionC2 {
    std::string name;
    std::function<double(double)> g, g1, g2;

    static TestFunctionC2 bump(double center, double width) {
        auto z = [center, width](double x) { return (x - center) / width; };
        auto val = [z](double x) {
            const double s = z(x);
            if (std::abs(s) >= 1.0) return 0.0;
            return std::exp(1.0 - 1.0 / (1.0 - s * s));
        };
        auto d1 = [z, val, width](double x) {
            const double s = z(x);
            if (std::abs(s) >= 1.0) return 0.0;
            const double q = 1.0 - s * s;
            return val(x) * (-2.0 * s / (q * q)) / width;
        };
        auto d2 = [z, val, width](double x) {
            const double s = z(x);
            if (std::abs(s) >= 1.0) return 0.0;
            const double q = 1.0 - s * s;
            const double a = 4.0 * s * s / (q * q * q * q);
            const double b = 2.0 * (1.0 + 3.0 * s * s) / (q * q * q);
            return val(x) * (a - b) / (width * width);
        };
        return {"bump(" + std::to_string(center) + "," + std::to_string(width) + ")", val,
                d1, d2};
    }

    static TestFunctionC2 poly_bump(double center, double width) {
        auto z = [center, width](double x) { return (x - center) / width; };
        auto val = [z](double x) {
            const double s = z(x);
            if (std::abs(s) >= 1.0) return 0.0;
            const double q = 1.0 - s * s;
            return q * q * q;
        };
        auto d1 = [z, width](double x) {
            const double s = z(x);
            if (std::abs(s) >= 1.0) return 0.0;
            const double q = 1.0 - s * s;
            return -6.0 * s * q * q / width;
        };
        auto d2 = [z, width](double x) {
            const double s = z(x);
            if (std::abs(s) >= 1.0) return 0.0;
            const double q = 1.0 - s * s;
            return (-6.0 * q * q + 24.0 * s * s * q) / (width * width);
        };
        return {"poly(" + std::to_string(center) + "," + std::to_string(width) + ")", val,
                d1, d2};
    }
};

// g(x) = prod_d g_d(x_d) on R^k.
struct ProductTestFunction {
    std::vector<TestFunctionC2> factors;

    std::size_t dimension() const { return factors.size(); }

    double value(std::span<const double> x) const {
        double p = 1.0;
        for (std::size_t d = 0; d < factors.size(); ++d) p *= factors[d].g(x[d]);
        return p;
    }
    double partial(std::size_t l, std::span<const double> x) const {
        double p = factors[l].g1(x[l]);
        for (std::size_t d = 0; d < factors.size(); ++d)
            if (d != l) p *= factors[d].g(x[d]);
        return p;
    }
    double partial2(std::size_t l, std::span<const double> x) const {
        double p = factors[l].g2(x[l]);
        for (std::size_t d = 0; d < factors.size(); ++d)
            if (d != l) p *= factors[d].g(x[d]);
        return p;
    }
};

// Time-indexed empirical measures on a common grid.
struct MeasurePath {
    TimeGrid grid;
    std::vector<EmpiricalMeasure> measures; // one per grid node

    const EmpiricalMeasure& at_step(std::size_t j) const { return measures[j]; }
    const EmpiricalMeasure& at(double t) const { return measures[grid.index_of(t)]; }
};

namespace detail {

// int b(s, y1, z) g'(y1) m(dy1) m(dz); affine kernels use the cloud mean.
inline double product_drift_term(const EmpiricalMeasure& m, const DriftKernel& kernel,
                                 double s, const TestFunctionC2& g) {
    if (auto aff = kernel.affine_form()) {
        const double mbar = m.mean(0);
        double acc = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double y = m.coordinate(i, 0);
            acc += m.weight(i) * g.g1(y) * (aff->ax * y + aff->ay * mbar + aff->c);
        }
        return acc;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double y = m.coordinate(i, 0);
        double inner = 0.0;
        for (std::size_t j = 0; j < m.size(); ++j)
            inner += m.weight(j) * kernel(s, y, m.coordinate(j, 0));
        acc += m.weight(i) * g.g1(y) * inner;
    }
    return acc;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Residual of the limiting pair integral equation at time t:
//   <m_t,g> - <m_0,g> - int_0^t [ u <M_s, b g'> + (1-u) <m_s x m_s, b g'>
//                                + 1/2 <m_s, g''> ] ds     (trapezoid in s)
// ---------------------------------------------------------------------------

inline double generator_residual(const MeasurePath& joint, const MeasurePath& marginal,
                                 const DriftKernel& kernel, MixtureWeight u,
                                 const TestFunctionC2& g, double t) {
    if (!(joint.grid == marginal.grid)) throw GridError("joint/marginal grids differ");
    const std::size_t upto = joint.grid.index_of(t);

    auto generator_at = [&](std::size_t j) {
        const auto& M = joint.at_step(j);
        const auto& m = marginal.at_step(j);
        if (M.dimension() != 2 || m.dimension() != 1)
            throw DomainError("generator_residual expects a pair joint and 1-D marginal");
        const double s = joint.grid.time(j);
        double chain_term = 0.0;
        if (u.u > 0.0)
            chain_term = M.integrate([&](std::span<const double> y) {
                return kernel(s, y[0], y[1]) * g.g1(y[0]);
            });
        double field_term = 0.0;
        if (u.u < 1.0) field_term = detail::product_drift_term(m, kernel, s, g);
        const double diffusion =
            0.5 * m.integrate([&](std::span<const double> y) { return g.g2(y[0]); });
        return u.u * chain_term + (1.0 - u.u) * field_term + diffusion;
    };

    double integral = 0.0;
    double prev = generator_at(0);
    for (std::size_t j = 1; j <= upto; ++j) {
        const double cur = generator_at(j);
        integral += 0.5 * (prev + cur) * joint.grid.dt;
        prev = cur;
    }

    auto bracket = [&](const EmpiricalMeasure& m) {
        return m.integrate([&](std::span<const double> y) { return g.g(y[0]); });
    };
    return bracket(marginal.at_step(upto)) - bracket(marginal.at_step(0)) - integral;
}

// k-tuple version. The (1-u) term integrates M^(k) x m with the independent
// coordinate in the kernel's second slot, which is the form that reduces to
// the McKean-Vlasov equation at u = 0.
inline double generator_residual_k(const MeasurePath& joint_kplus1,
                                   const MeasurePath& joint_k, const MeasurePath& marginal,
                                   const DriftKernel& kernel, MixtureWeight u,
                                   const ProductTestFunction& g, double t) {
    const std::size_t k = g.dimension();
    if (k < 2) throw DomainError("generator_residual_k requires k >= 2");
    if (!(joint_kplus1.grid == joint_k.grid) || !(joint_k.grid == marginal.grid))
        throw GridError("measure paths must share the grid");
    const std::size_t upto = joint_k.grid.index_of(t);

    auto generator_at = [&](std::size_t j) {
        const auto& Mk1 = joint_kplus1.at_step(j);
        const auto& Mk = joint_k.at_step(j);
        const auto& m = marginal.at_step(j);
        if (Mk1.dimension() != k + 1 || Mk.dimension() != k || m.dimension() != 1)
            throw DomainError("generator_residual_k: dimension mismatch");
        const double s = joint_k.grid.time(j);

        double chain_term = 0.0;
        if (u.u > 0.0)
            chain_term = Mk1.integrate([&](std::span<const double> y) {
                double acc = 0.0;
                for (std::size_t l = 0; l < k; ++l)
                    acc += kernel(s, y[l], y[l + 1]) * g.partial(l, y.first(k));
                return acc;
            });

        double field_term = 0.0;
        if (u.u < 1.0) {
            const auto aff = kernel.affine_form();
            const double mbar = m.mean(0);
            field_term = Mk.integrate([&](std::span<const double> y) {
                double acc = 0.0;
                for (std::size_t l = 0; l < k; ++l) {
                    double inner;
                    if (aff) {
                        inner = aff->ax * y[l] + aff->ay * mbar + aff->c;
                    } else {
                        inner = 0.0;
                        for (std::size_t i = 0; i < m.size(); ++i)
                            inner += m.weight(i) * kernel(s, y[l], m.coordinate(i, 0));
                    }
                    acc += inner * g.partial(l, y);
                }
                return acc;
            });
        }

        const double diffusion = 0.5 * Mk.integrate([&](std::span<const double> y) {
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += g.partial2(l, y);
            return acc;
        });
        return u.u * chain_term + (1.0 - u.u) * field_term + diffusion;
    };

    double integral = 0.0;
    double prev = generator_at(0);
    for (std::size_t j = 1; j <= upto; ++j) {
        const double cur = generator_at(j);
        integral += 0.5 * (prev + cur) * joint_k.grid.dt;
        prev = cur;
    }
    auto bracket = [&](const EmpiricalMeasure& M) {
        return M.integrate([&](std::span<const double> y) { return g.value(y); });
    };
    return bracket(joint_k.at_step(upto)) - bracket(joint_k.at_step(0)) - integral;
}

// ---------------------------------------------------------------------------
// Fluctuation study (finite chain vs nested system under coupled noise):
//   stat(n) = (1/sqrt(n)) sum_i E[ sup_{s<=T} |X_{s,i} - Xbar_{s,i}| ]
// The nested ladder closes its mean-field term with the constant limit mean,
// which is exact for affine kernels with the initial laws used here.
// ---------------------------------------------------------------------------

struct FluctuationResult {
    std::vector<std::size_t> ns;
    std::vector<double> statistic;
    double log_slope = 0.0; // slope of log stat vs log n (0 when stat vanishes)
    bool bounded = true;    // stat(n) <= 1.5 * stat(n_min)
};

inline FluctuationResult fluctuation_study(const DriftKernel& kernel, MixtureWeight u,
                                           const std::vector<std::size_t>& n_list,
                                           double horizon, double dt,
                                           std::size_t replications, std::uint64_t seed,
                                           const InitialLaw& initial = PointInitial{0.0}) {
    if (!kernel.affine_form())
        throw ConfigError("fluctuation_study requires an affine kernel (mean-field closure)");
    const auto aff = *kernel.affine_form();
    const TimeGrid grid = TimeGrid::from_horizon(dt, horizon);
    const double limit_mean = initial_mean(initial); // constant in t for affine drifts
    const double sdt = std::sqrt(dt);

    FluctuationResult out;
    out.ns = n_list;
    for (const std::size_t n : n_list) {
        std::vector<double> sup_sum(replications, 0.0);
        for (std::size_t rep = 0; rep < replications; ++rep) {
            const std::uint64_t stride = (static_cast<std::uint64_t>(rep) << 32);
            std::vector<RngStream> streams(n + 1);
            for (std::size_t i = 0; i <= n; ++i)
                streams[i] = RngStream(seed, StreamPurpose::nested_noise, stride | i);

            std::vector<double> chain(n), ladder(n + 1), sup(n, 0.0);
            for (std::size_t i = 0; i <= n; ++i) {
                RngStream init(seed, StreamPurpose::nested_init, stride | i);
                ladder[i] = draw_initial(initial, init);
                if (i < n) chain[i] = ladder[i];
            }

            std::vector<double> chain_next(n), ladder_next(n + 1), noise(n + 1);
            for (std::size_t j = 0; j < grid.steps; ++j) {
                const double t = grid.time(j);
                for (std::size_t i = 0; i <= n; ++i) noise[i] = streams[i].next_normal();
                const double s = block_sum(chain);
                const double nn = static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    const double x = chain[i];
                    const double field = aff.ax * x + aff.ay * (s / nn) + aff.c;
                    const double drift =
                        u.u * kernel(t, x, chain[(i + 1) % n]) + (1.0 - u.u) * field;
                    chain_next[i] = x + dt * drift + sdt * noise[i];
                }
                for (std::size_t i = 0; i <= n; ++i) {
                    const double x = ladder[i];
                    double drift;
                    if (i == n) {
                        // top of the ladder: the representative tail particle,
                        // closed as the u=0 (McKean-Vlasov) dynamics
                        drift = aff.ax * x + aff.ay * limit_mean + aff.c;
                    } else {
                        const double field = aff.ax * x + aff.ay * limit_mean + aff.c;
                        drift = u.u * kernel(t, x, ladder[i + 1]) + (1.0 - u.u) * field;
                    }
                    ladder_next[i] = x + dt * drift + sdt * noise[i];
                }
                chain.swap(chain_next);
                ladder.swap(ladder_next);
                for (std::size_t i = 0; i < n; ++i)
                    sup[i] = std::max(sup[i], std::abs(chain[i] - ladder[i]));
            }
            sup_sum[rep] = block_sum(sup);
        }
        const double stat = mean(sup_sum) / std::sqrt(static_cast<double>(n));
        out.statistic.push_back(stat);
    }

    // least-squares slope of log stat vs log n (left at 0 for vanishing stats)
    bool positive = true;
    for (double s : out.statistic) positive = positive && s > 0.0;
    if (positive && out.ns.size() > 1) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const double m = static_cast<double>(out.ns.size());
        for (std::size_t i = 0; i < out.ns.size(); ++i) {
            const double x = std::log(static_cast<double>(out.ns[i]));
            const double y = std::log(out.statistic[i]);
            sx += x; sy += y; sxx += x * x; sxy += x * y;
        }
        out.log_slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    }
    for (double s : out.statistic)
        if (s > 1.5 * out.statistic.front() + 1e-12) out.bounded = false;
    return out;
}

} // namespace dcsde
