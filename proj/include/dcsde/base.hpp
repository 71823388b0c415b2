#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcsde {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map configuration problems to exit code 2 and numeric failures to 3.
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class DomainError : public Error {
  public:
    using Error::Error;
};

class InvalidLawError : public Error {
  public:
    using Error::Error;
};

class GridError : public Error {
  public:
    using Error::Error;
};

class PropagationError : public Error {
  public:
    PropagationError(const std::string& msg, std::size_t index)
        : Error(msg + " (first offending index " + std::to_string(index) + ")"),
          first_index(index) {}
    std::size_t first_index;
};

class CapacityError : public Error {
  public:
    CapacityError(const std::string& msg, std::uint64_t bytes)
        : Error(msg + " (required " + std::to_string(bytes) + " bytes)"),
          required_bytes(bytes) {}
    std::uint64_t required_bytes;
};

class TruncationError : public Error {
  public:
    TruncationError(const std::string& msg, int terms)
        : Error(msg + " (required terms " + std::to_string(terms) + ")"),
          required_terms(terms) {}
    int required_terms;
};

class AccuracyError : public Error {
  public:
    AccuracyError(const std::string& msg, double achieved)
        : Error(msg + " (achieved tolerance " + std::to_string(achieved) + ")"),
          achieved_tolerance(achieved) {}
    double achieved_tolerance;
};

class ConvergenceError : public Error {
  public:
    ConvergenceError(const std::string& msg, std::vector<double> trace_)
        : Error(msg), trace(std::move(trace_)) {}
    std::vector<double> trace;
};

class DegenerateError : public Error {
  public:
    using Error::Error;
};

class NumericError : public Error {
  public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Uniform time grid t_j = j*dt, j = 0..steps.
// ---------------------------------------------------------------------------

struct TimeGrid {
    double dt = 0.0;
    std::size_t steps = 0;

    TimeGrid() = default;
    TimeGrid(double dt_, std::size_t steps_) : dt(dt_), steps(steps_) {
        if (!(dt > 0.0)) throw ConfigError("time grid requires dt > 0");
    }

    static TimeGrid from_horizon(double dt, double horizon) {
        if (!(dt > 0.0)) throw ConfigError("time grid requires dt > 0");
        if (!(horizon > 0.0)) throw ConfigError("time grid requires horizon > 0");
        if (dt > horizon + 1e-12) throw ConfigError("dt exceeds horizon");
        const auto steps = static_cast<std::size_t>(std::llround(horizon / dt));
        if (steps == 0 || std::abs(static_cast<double>(steps) * dt - horizon) > 1e-9 * std::max(1.0, horizon))
            throw ConfigError("horizon must be an integer multiple of dt");
        return TimeGrid(dt, steps);
    }

    std::size_t size() const { return steps + 1; }
    double time(std::size_t j) const { return static_cast<double>(j) * dt; }
    double horizon() const { return time(steps); }

    // Nearest grid index of t; throws GridError when t is off-grid.
    std::size_t index_of(double t) const {
        const auto j = static_cast<std::size_t>(std::llround(t / dt));
        if (j > steps || std::abs(static_cast<double>(j) * dt - t) > 1e-9 * std::max(1.0, std::abs(t)))
            throw GridError("time " + std::to_string(t) + " is not on the simulation grid");
        return j;
    }

    bool operator==(const TimeGrid& o) const { return dt == o.dt && steps == o.steps; }
};

// ---------------------------------------------------------------------------
// Deterministic reductions and light statistics helpers. Sums use fixed-size
// blocks combined in index order, so results do not depend on how work was
// scheduled across threads.
// ---------------------------------------------------------------------------

inline double block_sum(std::span<const double> x) {
    constexpr std::size_t kBlock = 4096;
    if (x.size() <= kBlock) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    std::vector<double> partial;
    partial.reserve(x.size() / kBlock + 1);
    for (std::size_t i = 0; i < x.size(); i += kBlock) {
        const std::size_t m = std::min(kBlock, x.size() - i);
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += x[i + j];
        partial.push_back(s);
    }
    return block_sum(std::span<const double>(partial.data(), partial.size()));
}

inline double mean(std::span<const double> x) {
    if (x.empty()) throw DomainError("mean of empty sample");
    return block_sum(x) / static_cast<double>(x.size());
}

struct SampleMoments {
    std::size_t n = 0;
    double mean = 0.0;
    double variance = 0.0;   // unbiased
    double m2 = 0.0;         // second central moment (biased, /n)
    double m4 = 0.0;         // fourth central moment (/n)

    // Standard error of the sample variance from the empirical fourth moment.
    double variance_stderr() const {
        if (n < 2) return 0.0;
        const double v = m4 - m2 * m2;
        return std::sqrt(std::max(v, 0.0) / static_cast<double>(n));
    }
    double mean_stderr() const {
        return n > 1 ? std::sqrt(variance / static_cast<double>(n)) : 0.0;
    }
};

inline SampleMoments sample_moments(std::span<const double> x) {
    SampleMoments r;
    r.n = x.size();
    if (r.n == 0) return r;
    r.mean = mean(x);
    std::vector<double> c2(x.size()), c4(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - r.mean;
        c2[i] = d * d;
        c4[i] = d * d * d * d;
    }
    r.m2 = block_sum(c2) / static_cast<double>(r.n);
    r.m4 = block_sum(c4) / static_cast<double>(r.n);
    r.variance = r.n > 1 ? r.m2 * static_cast<double>(r.n) / static_cast<double>(r.n - 1) : 0.0;
    return r;
}

inline void require_finite(std::span<const double> x, const char* what) {
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i]))
            throw PropagationError(std::string("non-finite value in ") + what, i);
}

} // namespace dcsde
