#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dcsde/base.hpp"
#include "dcsde/chain.hpp"

namespace dcsde {

// ---------------------------------------------------------------------------
// Binary ensemble container, shared by path and law ensembles.
// Header (little-endian): magic "DCSDEBIN", u32 version, u32 kind,
// u64 n, u64 steps, f64 dt, u64 seed, i64 generation, u8 wraparound,
// u8 closure, 6 pad bytes. Body: n*(steps+1) float64, particle-major.
// ---------------------------------------------------------------------------

inline constexpr char kEnsembleMagic[8] = {'D', 'C', 'S', 'D', 'E', 'B', 'I', 'N'};
inline constexpr std::uint32_t kEnsembleVersion = 1;

enum class EnsembleKind : std::uint32_t { path = 0, law = 1 };

struct BinaryEnsemble {
    EnsembleKind kind = EnsembleKind::path;
    std::uint64_t n = 0;
    std::uint64_t steps = 0;
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::int64_t generation = -1;
    std::uint8_t wraparound = 0;
    std::uint8_t closure = 0;
    std::vector<double> data;
};

namespace detail {

inline void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& b, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(b, bits);
}
inline std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}
inline std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}
inline double get_f64(const unsigned char* p) {
    const std::uint64_t bits = get_u64(p);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace detail

inline void save_ensemble(const BinaryEnsemble& e, const std::string& path) {
    std::string header;
    header.append(kEnsembleMagic, 8);
    detail::put_u32(header, kEnsembleVersion);
    detail::put_u32(header, static_cast<std::uint32_t>(e.kind));
    detail::put_u64(header, e.n);
    detail::put_u64(header, e.steps);
    detail::put_f64(header, e.dt);
    detail::put_u64(header, e.seed);
    detail::put_u64(header, static_cast<std::uint64_t>(e.generation));
    header.push_back(static_cast<char>(e.wraparound));
    header.push_back(static_cast<char>(e.closure));
    header.append(6, '\0');

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    std::string body;
    body.reserve(e.data.size() * 8);
    for (double v : e.data) detail::put_f64(body, v);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw Error("write failed: " + path);
}

inline BinaryEnsemble load_ensemble(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open ensemble file: " + path);
    std::array<unsigned char, 64> h;
    in.read(reinterpret_cast<char*>(h.data()), 64);
    if (!in || std::memcmp(h.data(), kEnsembleMagic, 8) != 0)
        throw ConfigError("not a dcsde ensemble file: " + path);
    if (detail::get_u32(h.data() + 8) != kEnsembleVersion)
        throw ConfigError("unsupported ensemble version in " + path);
    BinaryEnsemble e;
    e.kind = static_cast<EnsembleKind>(detail::get_u32(h.data() + 12));
    e.n = detail::get_u64(h.data() + 16);
    e.steps = detail::get_u64(h.data() + 24);
    e.dt = detail::get_f64(h.data() + 32);
    e.seed = detail::get_u64(h.data() + 40);
    e.generation = static_cast<std::int64_t>(detail::get_u64(h.data() + 48));
    e.wraparound = h[56];
    e.closure = h[57];
    const std::uint64_t count = e.n * (e.steps + 1);
    e.data.resize(count);
    std::vector<unsigned char> buf(count * 8);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw ConfigError("truncated ensemble file: " + path);
    for (std::uint64_t i = 0; i < count; ++i) e.data[i] = detail::get_f64(buf.data() + 8 * i);
    return e;
}

inline void save_ensemble(const PathEnsemble& p, const std::string& path) {
    BinaryEnsemble e;
    e.kind = EnsembleKind::path;
    e.n = p.particles;
    e.steps = p.grid.steps;
    e.dt = p.grid.dt;
    e.seed = p.seed;
    e.wraparound = p.wraparound ? 1 : 0;
    e.data = p.data;
    save_ensemble(e, path);
}

inline PathEnsemble path_ensemble_from(const BinaryEnsemble& e) {
    PathEnsemble p;
    p.particles = e.n;
    p.grid = TimeGrid(e.dt, e.steps);
    p.seed = e.seed;
    p.wraparound = e.wraparound != 0;
    p.data = e.data;
    return p;
}

// ---------------------------------------------------------------------------
// CSV helpers. Numbers print with %.17g so replays compare byte-identical.
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

class CsvWriter {
  public:
    CsvWriter(const std::string& path, const std::string& header) : out_(path) {
        if (!out_) throw ConfigError("cannot open for writing: " + path);
        out_ << header << "\n";
    }
    void row(std::span<const double> values) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) out_ << ",";
            out_ << format_number(values[i]);
        }
        out_ << "\n";
    }
    void raw_row(const std::string& line) { out_ << line << "\n"; }

  private:
    std::ofstream out_;
};

inline void export_csv(const PathEnsemble& e, const std::string& path) {
    CsvWriter w(path, "t,particle,value");
    for (std::size_t i = 0; i < e.particles; ++i)
        for (std::size_t j = 0; j < e.grid.size(); ++j) {
            const double row[3] = {e.grid.time(j), static_cast<double>(i), e.value(i, j)};
            w.row(row);
        }
}

// Two-column CSV (t,value) with a header line.
inline std::pair<std::vector<double>, std::vector<double>> read_series_csv(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open CSV file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty CSV file: " + path);
    std::vector<double> t, v;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ConfigError("malformed CSV row: " + line);
        t.push_back(std::stod(line.substr(0, comma)));
        v.push_back(std::stod(line.substr(comma + 1)));
    }
    return {std::move(t), std::move(v)};
}

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4), used for manifest output checksums.
// ---------------------------------------------------------------------------

class Sha256 {
  public:
    Sha256() { reset(); }

    void reset() {
        state_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
                  0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
        total_ = 0;
        buffer_len_ = 0;
    }

    void update(const unsigned char* data, std::size_t len) {
        total_ += len;
        while (len > 0) {
            const std::size_t take = std::min<std::size_t>(64 - buffer_len_, len);
            std::memcpy(buffer_.data() + buffer_len_, data, take);
            buffer_len_ += take;
            data += take;
            len -= take;
            if (buffer_len_ == 64) {
                process(buffer_.data());
                buffer_len_ = 0;
            }
        }
    }

    std::string hex_digest() {
        const std::uint64_t bits = total_ * 8;
        unsigned char pad[72] = {0x80};
        const std::size_t pad_len = (buffer_len_ < 56) ? 56 - buffer_len_ : 120 - buffer_len_;
        update_padding(pad, pad_len, bits);
        char out[65];
        for (int i = 0; i < 8; ++i)
            std::snprintf(out + 8 * i, 9, "%08x", state_[i]);
        return std::string(out, 64);
    }

  private:
    void update_padding(unsigned char* pad, std::size_t pad_len, std::uint64_t bits) {
        unsigned char len_be[8];
        for (int i = 0; i < 8; ++i) len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
        // feed pad and length without touching total_
        std::size_t len = pad_len;
        const unsigned char* data = pad;
        while (len > 0) {
            const std::size_t take = std::min<std::size_t>(64 - buffer_len_, len);
            std::memcpy(buffer_.data() + buffer_len_, data, take);
            buffer_len_ += take;
            data += take;
            len -= take;
            if (buffer_len_ == 64) {
                process(buffer_.data());
                buffer_len_ = 0;
            }
        }
        std::memcpy(buffer_.data() + buffer_len_, len_be, 8);
        process(buffer_.data());
    }

    static std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

    void process(const unsigned char* chunk) {
        static constexpr std::uint32_t k[64] = {
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
            0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
            0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
            0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
            0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
            0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
            0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
            0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
            0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
            0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
            0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
        std::uint32_t w[64];
        for (int i = 0; i < 16; ++i)
            w[i] = (static_cast<std::uint32_t>(chunk[4 * i]) << 24) |
                   (static_cast<std::uint32_t>(chunk[4 * i + 1]) << 16) |
                   (static_cast<std::uint32_t>(chunk[4 * i + 2]) << 8) |
                   static_cast<std::uint32_t>(chunk[4 * i + 3]);
        for (int i = 16; i < 64; ++i) {
            const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        auto s = state_;
        for (int i = 0; i < 64; ++i) {
            const std::uint32_t S1 = rotr(s[4], 6) ^ rotr(s[4], 11) ^ rotr(s[4], 25);
            const std::uint32_t ch = (s[4] & s[5]) ^ (~s[4] & s[6]);
            const std::uint32_t t1 = s[7] + S1 + ch + k[i] + w[i];
            const std::uint32_t S0 = rotr(s[0], 2) ^ rotr(s[0], 13) ^ rotr(s[0], 22);
            const std::uint32_t maj = (s[0] & s[1]) ^ (s[0] & s[2]) ^ (s[1] & s[2]);
            const std::uint32_t t2 = S0 + maj;
            s[7] = s[6]; s[6] = s[5]; s[5] = s[4]; s[4] = s[3] + t1;
            s[3] = s[2]; s[2] = s[1]; s[1] = s[0]; s[0] = t1 + t2;
        }
        for (int i = 0; i < 8; ++i) state_[i] += s[i];
    }

    std::array<std::uint32_t, 8> state_;
    std::array<unsigned char, 64> buffer_;
    std::size_t buffer_len_ = 0;
    std::uint64_t total_ = 0;
};

inline std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file for hashing: " + path);
    Sha256 h;
    std::array<char, 65536> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(reinterpret_cast<const unsigned char*>(buf.data()),
                 static_cast<std::size_t>(in.gcount()));
    }
    return h.hex_digest();
}

inline std::string sha256_string(const std::string& s) {
    Sha256 h;
    h.update(reinterpret_cast<const unsigned char*>(s.data()), s.size());
    return h.hex_digest();
}

} // namespace dcsde
