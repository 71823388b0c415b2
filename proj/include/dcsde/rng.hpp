#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace dcsde {

// ---------------------------------------------------------------------------
// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every draw is
// a pure function of (seed, stream, block), so simulations are reproducible
// bit-for-bit no matter how work is scheduled across threads. A stream is
// identified by a purpose tag plus a 64-bit index (particle, replica*level,
// ...); each stream has 2^32 blocks of 4x32 bits.
// ---------------------------------------------------------------------------

struct Philox4x32 {
    static constexpr std::uint32_t kM0 = 0xD2511F53u;
    static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kW0 = 0x9E3779B9u;
    static constexpr std::uint32_t kW1 = 0xBB67AE85u;

    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> c,
                                              std::array<std::uint32_t, 2> k) {
        for (int round = 0; round < 10; ++round) {
            const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
            const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
            const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
            const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
            c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
            k[0] += kW0;
            k[1] += kW1;
        }
        return c;
    }
};

// Stream purposes keep independent uses of the same index apart.
enum class StreamPurpose : std::uint32_t {
    chain_noise = 1,
    chain_init = 2,
    nested_noise = 3,
    nested_init = 4,
    picard_noise = 5,
    picard_init = 6,
    picard_resample = 7,
    kernel_streams = 8,
    fk_chain = 9,
    discrete_noise = 10,
    observation = 11,
    filter_hidden = 12,
    generic = 13,
    permutation = 14,
};

// 256-layer ziggurat tables for the standard normal (Doornik's ZIGNOR
// constants). Built once; identical on every run of the same binary.
class NormalZiggurat {
  public:
    static constexpr double kR = 3.6541528853610088;
    static constexpr double kV = 4.92867323399e-3;

    static const NormalZiggurat& instance() {
        static const NormalZiggurat z;
        return z;
    }

    double x(int i) const { return x_[i]; }
    double ratio(int i) const { return ratio_[i]; }

  private:
    NormalZiggurat() {
        auto f = [](double t) { return std::exp(-0.5 * t * t); };
        x_[0] = kV / f(kR);
        x_[1] = kR;
        x_[256] = 0.0;
        for (int i = 2; i < 256; ++i)
            x_[i] = std::sqrt(-2.0 * std::log(kV / x_[i - 1] + f(x_[i - 1])));
        for (int i = 0; i < 256; ++i) ratio_[i] = x_[i + 1] / x_[i];
    }

    double x_[257];
    double ratio_[256];
};

class RngStream {
  public:
    RngStream() = default;
    RngStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index)
        : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
          base_{0u,
                static_cast<std::uint32_t>(purpose),
                static_cast<std::uint32_t>(index),
                static_cast<std::uint32_t>(index >> 32)} {}

    std::uint64_t next_u64() {
        if (have_spare_w_) {
            have_spare_w_ = false;
            return spare_w_;
        }
        auto c = base_;
        c[0] = block_;
        ++block_;
        const auto r = Philox4x32::block(c, key_);
        spare_w_ = (static_cast<std::uint64_t>(r[2]) << 32) | r[3];
        have_spare_w_ = true;
        return (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
    }

    // Uniform in (0,1) with 53 significant bits.
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // Ziggurat normal draw; the wedge/tail slow paths fire on ~2% of draws.
    double next_normal() {
        const auto& z = NormalZiggurat::instance();
        for (;;) {
            const std::uint64_t bits = next_u64();
            const int i = static_cast<int>(bits & 0xFF);
            const double u =
                2.0 * ((static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53) - 1.0;
            if (std::abs(u) < z.ratio(i)) return u * z.x(i);
            if (i == 0) {
                // tail beyond r (Marsaglia)
                double xx, yy;
                do {
                    xx = std::log(next_uniform()) / NormalZiggurat::kR;
                    yy = std::log(next_uniform());
                } while (-2.0 * yy < xx * xx);
                return u < 0.0 ? xx - NormalZiggurat::kR : NormalZiggurat::kR - xx;
            }
            const double xv = u * z.x(i);
            const double f0 = std::exp(-0.5 * (z.x(i) * z.x(i) - xv * xv));
            const double f1 = std::exp(-0.5 * (z.x(i + 1) * z.x(i + 1) - xv * xv));
            if (f1 + next_uniform() * (f0 - f1) < 1.0) return xv;
        }
    }

    // Box-Muller reference path, kept for cross-validation of the ziggurat.
    double next_normal_boxmuller() {
        if (have_spare_n_) {
            have_spare_n_ = false;
            return spare_n_;
        }
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_n_ = r * std::sin(a);
        have_spare_n_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n).
    std::uint64_t next_index(std::uint64_t n) { return next_u64() % n; }

  private:
    std::array<std::uint32_t, 2> key_{0u, 0u};
    std::array<std::uint32_t, 4> base_{0u, 0u, 0u, 0u};
    std::uint32_t block_ = 0;
    std::uint64_t spare_w_ = 0;
    double spare_n_ = 0.0;
    bool have_spare_w_ = false;
    bool have_spare_n_ = false;
};

} // namespace dcsde
