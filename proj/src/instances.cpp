#include "capann/instances.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "capann/rng.hpp"
#include "json.hpp"

namespace capann::instances {

namespace {

constexpr char kMagic[8] = {'A', 'N', 'N', 'I', 'N', 'S', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::uint64_t hamming_distance(std::span<const std::uint64_t> a,
                               std::span<const std::uint64_t> b) {
    std::uint64_t acc = 0;
    for (std::size_t w = 0; w < a.size(); ++w) {
        acc += static_cast<std::uint64_t>(std::popcount(a[w] ^ b[w]));
    }
    return acc;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double t = a[i] - b[i];
        acc += t * t;
    }
    return std::sqrt(acc);
}

std::uint64_t default_dimension(std::uint64_t n) {
    const double log_n = std::log2(static_cast<double>(std::max<std::uint64_t>(n, 4)));
    const double loglog = std::log2(std::max(log_n, 2.0));
    return static_cast<std::uint64_t>(std::ceil(log_n * loglog));
}

HammingInstance gen_hamming(std::uint64_t n, std::uint64_t d, double c,
                            std::uint64_t q_count, std::uint64_t seed) {
    if (n < 1 || d < 1 || q_count < 1) {
        throw std::invalid_argument("gen_hamming: n, d, q_count must be >= 1");
    }
    if (!(c > 1.0)) {
        throw std::invalid_argument(
            "gen_hamming: c must be > 1 (flip probability 1/(2c) would be >= 1/2)");
    }
    HammingInstance inst;
    inst.n = n;
    inst.d = d;
    inst.c = c;
    inst.seed = seed;
    inst.words_per_row = static_cast<std::size_t>((d + 63) / 64);
    const std::uint64_t tail_bits = d % 64;
    const std::uint64_t tail_mask = tail_bits ? ((std::uint64_t{1} << tail_bits) - 1)
                                              : ~std::uint64_t{0};

    inst.points.resize(n * inst.words_per_row);
    for (std::uint64_t i = 0; i < n; ++i) {
        rng::Engine eng(rng::substream(seed, rng::kTagPoint, i));
        std::uint64_t* row = inst.points.data() + i * inst.words_per_row;
        for (std::size_t w = 0; w < inst.words_per_row; ++w) row[w] = eng.next_u64();
        row[inst.words_per_row - 1] &= tail_mask;
    }

    const double flip_p = 1.0 / (2.0 * c);
    inst.queries.resize(q_count * inst.words_per_row);
    inst.planted.resize(q_count);
    for (std::uint64_t j = 0; j < q_count; ++j) {
        rng::Engine pick(rng::substream(seed, rng::kTagQueryPick, j));
        const std::uint64_t id = pick.next_below(n);
        inst.planted[j] = static_cast<std::uint32_t>(id);
        const std::uint64_t* src = inst.points.data() + id * inst.words_per_row;
        std::uint64_t* dst = inst.queries.data() + j * inst.words_per_row;
        std::memcpy(dst, src, inst.words_per_row * sizeof(std::uint64_t));
        rng::Engine noise(rng::substream(seed, rng::kTagQuery, j));
        for (std::uint64_t bit = 0; bit < d; ++bit) {
            if (noise.next_unit() < flip_p) {
                dst[bit / 64] ^= std::uint64_t{1} << (bit % 64);
            }
        }
    }
    return inst;
}

namespace {

// Colatitude sampler for uniform cap queries.
//
// For q uniform on the cap {q : <p/R, q/R> >= t_min} of S^{d-1}, write
// q = R (t p^ + sqrt(1-t^2) u) with u a unit tangent. The surface measure
// factorizes, giving t density proportional to (1-t^2)^{(d-3)/2} on
// [t_min, 1]. We tabulate the normalized CDF on a fine grid (log-space
// trapezoid against the value at t_min, where the density on the cap is
// largest) and invert by binary search with in-cell linear interpolation.
// d = 2 is an arc: the angle itself is uniform.
class CapSampler {
public:
    CapSampler(std::uint64_t d, double t_min) : d_(d), t_min_(t_min) {
        if (d_ < 3) return;
        const double expo = 0.5 * (static_cast<double>(d_) - 3.0);
        const double log_ref = expo * std::log1p(-t_min_ * t_min_);
        grid_.resize(kCells + 1);
        cdf_.resize(kCells + 1);
        cdf_[0] = 0.0;
        double prev = 1.0;  // density ratio at t_min
        grid_[0] = t_min_;
        const double h = (1.0 - t_min_) / kCells;
        for (std::size_t i = 1; i <= kCells; ++i) {
            const double t = t_min_ + h * static_cast<double>(i);
            grid_[i] = t;
            const double one_minus_t2 = std::max((1.0 - t) * (1.0 + t), 0.0);
            const double val =
                one_minus_t2 > 0.0
                    ? std::exp(expo * std::log(one_minus_t2) - log_ref)
                    : 0.0;
            cdf_[i] = cdf_[i - 1] + 0.5 * (prev + val) * h;
            prev = val;
        }
        const double total = cdf_.back();
        for (double& v : cdf_) v /= total;
    }

    double sample_t(rng::Engine& eng) const {
        if (d_ == 2) {
            // theta uniform on [-theta_max, theta_max]; t = cos(theta).
            const double theta_max = std::acos(std::clamp(t_min_, -1.0, 1.0));
            const double theta = (2.0 * eng.next_unit() - 1.0) * theta_max;
            return std::cos(theta);
        }
        const double u = eng.next_unit();
        const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        std::size_t hi = std::min<std::size_t>(
            static_cast<std::size_t>(it - cdf_.begin()), kCells);
        if (hi == 0) hi = 1;
        const std::size_t lo = hi - 1;
        const double span = cdf_[hi] - cdf_[lo];
        const double frac = span > 0.0 ? (u - cdf_[lo]) / span : 0.5;
        return grid_[lo] + frac * (grid_[hi] - grid_[lo]);
    }

private:
    static constexpr std::size_t kCells = 16384;
    std::uint64_t d_;
    double t_min_;
    std::vector<double> grid_;
    std::vector<double> cdf_;
};

}  // namespace

SphereInstance gen_sphere(std::uint64_t n, std::uint64_t d, double c, double R,
                          std::uint64_t q_count, std::uint64_t seed) {
    if (n < 1 || q_count < 1) {
        throw std::invalid_argument("gen_sphere: n and q_count must be >= 1");
    }
    if (d < 2) throw std::invalid_argument("gen_sphere: d must be >= 2 (cap sampling undefined)");
    if (!(c > 1.0) || !(R > 0.0)) {
        throw std::invalid_argument("gen_sphere: require c > 1 and R > 0");
    }
    SphereInstance inst;
    inst.n = n;
    inst.d = d;
    inst.c = c;
    inst.R = R;
    inst.seed = seed;
    inst.points.resize(n * d);
    for (std::uint64_t i = 0; i < n; ++i) {
        rng::Engine eng(rng::substream(seed, rng::kTagPoint, i));
        double* row = inst.points.data() + i * d;
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (std::uint64_t k = 0; k < d; ++k) {
                row[k] = eng.next_normal();
                norm2 += row[k] * row[k];
            }
        } while (norm2 == 0.0);
        const double scale = R / std::sqrt(norm2);
        for (std::uint64_t k = 0; k < d; ++k) row[k] *= scale;
    }

    const double t_min = 1.0 - 1.0 / (c * c);  // <p,q>/R^2 at the cap boundary
    const CapSampler sampler(d, t_min);
    inst.queries.resize(q_count * d);
    inst.planted.resize(q_count);
    std::vector<double> tangent(d);
    for (std::uint64_t j = 0; j < q_count; ++j) {
        rng::Engine pick(rng::substream(seed, rng::kTagQueryPick, j));
        const std::uint64_t id = pick.next_below(n);
        inst.planted[j] = static_cast<std::uint32_t>(id);
        const double* p = inst.points.data() + id * d;
        rng::Engine eng(rng::substream(seed, rng::kTagQuery, j));
        const double t = sampler.sample_t(eng);
        // Uniform unit tangent: draw a normal vector, project out p, normalize.
        double dot = 0.0, norm2 = 0.0;
        do {
            dot = 0.0;
            for (std::uint64_t k = 0; k < d; ++k) {
                tangent[k] = eng.next_normal();
                dot += tangent[k] * p[k];
            }
            norm2 = 0.0;
            const double proj = dot / (R * R);
            for (std::uint64_t k = 0; k < d; ++k) {
                tangent[k] -= proj * p[k];
                norm2 += tangent[k] * tangent[k];
            }
        } while (norm2 == 0.0);
        const double w = std::sqrt(std::max(0.0, 1.0 - t * t)) / std::sqrt(norm2);
        double* q = inst.queries.data() + j * d;
        for (std::uint64_t k = 0; k < d; ++k) {
            q[k] = t * p[k] + w * R * tangent[k];
        }
    }
    return inst;
}

SphereInstance hamming_to_sphere(const HammingInstance& h) {
    SphereInstance s;
    s.n = h.n;
    s.d = h.d;
    s.c = std::sqrt(h.c);
    s.R = 1.0;
    s.seed = h.seed;
    s.planted = h.planted;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(h.d));
    auto expand = [&](std::span<const std::uint64_t> row, double* out) {
        for (std::uint64_t bit = 0; bit < h.d; ++bit) {
            const bool one = (row[bit / 64] >> (bit % 64)) & 1;
            out[bit] = one ? inv_sqrt_d : -inv_sqrt_d;
        }
    };
    s.points.resize(h.n * h.d);
    for (std::uint64_t i = 0; i < h.n; ++i) {
        expand(h.point_row(i), s.points.data() + i * h.d);
    }
    s.queries.resize(h.q_count() * h.d);
    for (std::uint64_t j = 0; j < h.q_count(); ++j) {
        expand(h.query_row(j), s.queries.data() + j * h.d);
    }
    return s;
}

namespace {

template <typename Inst, typename DistFn>
InstanceStats stats_impl(const Inst& inst, double threshold, double default_thr,
                         double bin_width, DistFn&& dist) {
    if (inst.q_count() < 1) throw std::invalid_argument("instance_stats: no queries");
    InstanceStats st;
    st.threshold = threshold > 0.0 ? threshold : default_thr;
    st.histogram_bin_width = bin_width;
    const std::uint64_t q = inst.q_count();
    st.planted_distance.resize(q);
    st.min_other_distance.resize(q);
    std::uint64_t unique = 0;
    double mean = 0.0;
    for (std::uint64_t j = 0; j < q; ++j) {
        const std::uint32_t planted = inst.planted[j];
        double best_other = std::numeric_limits<double>::infinity();
        double planted_dist = 0.0;
        for (std::uint64_t i = 0; i < inst.n; ++i) {
            const double dij = dist(j, i);
            if (i == planted) {
                planted_dist = dij;
            } else if (dij < best_other) {
                best_other = dij;
            }
        }
        st.planted_distance[j] = planted_dist;
        st.min_other_distance[j] = best_other;
        mean += planted_dist;
        if (planted_dist <= st.threshold && best_other > st.threshold) ++unique;
        const auto bin = static_cast<std::size_t>(planted_dist / bin_width);
        if (st.planted_histogram.size() <= bin) st.planted_histogram.resize(bin + 1, 0);
        ++st.planted_histogram[bin];
    }
    st.planted_mean = mean / static_cast<double>(q);
    st.unique_fraction = static_cast<double>(unique) / static_cast<double>(q);
    return st;
}

}  // namespace

InstanceStats instance_stats(const HammingInstance& inst, double threshold) {
    const double r = inst.nominal_r();
    const double midpoint = 0.5 * (r + static_cast<double>(inst.d) / 2.0);
    return stats_impl(inst, threshold, midpoint, 1.0, [&](std::uint64_t j, std::uint64_t i) {
        return static_cast<double>(hamming_distance(inst.query_row(j), inst.point_row(i)));
    });
}

InstanceStats instance_stats(const SphereInstance& inst, double threshold) {
    const double r = inst.nominal_r();
    const double midpoint = 0.5 * (r + 1.4142135623730951 * inst.R);
    const double bin = std::max(inst.R / 256.0, 1e-9);
    return stats_impl(inst, threshold, midpoint, bin, [&](std::uint64_t j, std::uint64_t i) {
        return euclidean_distance(inst.query_row(j), inst.point_row(i));
    });
}

namespace {

struct Writer {
    std::ofstream out;
    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw std::runtime_error("cannot open for writing: " + path);
    }
    void bytes(const void* p, std::size_t len) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(len));
    }
    template <typename T>
    void pod(const T& v) {
        bytes(&v, sizeof(T));
    }
    template <typename T>
    void vec(const std::vector<T>& v) {
        bytes(v.data(), v.size() * sizeof(T));
    }
};

struct Reader {
    std::ifstream in;
    explicit Reader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw std::runtime_error("cannot open for reading: " + path);
    }
    void bytes(void* p, std::size_t len) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(len));
        if (!in) throw std::runtime_error("truncated file");
    }
    template <typename T>
    T pod() {
        T v;
        bytes(&v, sizeof(T));
        return v;
    }
    template <typename T>
    void vec(std::vector<T>& v, std::size_t count) {
        v.resize(count);
        bytes(v.data(), count * sizeof(T));
    }
};

struct Header {
    std::uint32_t version;
    Metric metric;
    std::uint64_t n, d;
    double c, R;
    std::uint64_t seed, q_count;
};

void write_header(Writer& w, const Header& h) {
    w.bytes(kMagic, sizeof(kMagic));
    w.pod(h.version);
    w.pod(static_cast<std::uint32_t>(h.metric));
    w.pod(h.n);
    w.pod(h.d);
    w.pod(h.c);
    w.pod(h.R);
    w.pod(h.seed);
    w.pod(h.q_count);
}

Header read_header(Reader& r) {
    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not an instance file (bad magic)");
    }
    Header h;
    h.version = r.pod<std::uint32_t>();
    if (h.version != kVersion) throw std::runtime_error("unsupported instance version");
    h.metric = static_cast<Metric>(r.pod<std::uint32_t>());
    h.n = r.pod<std::uint64_t>();
    h.d = r.pod<std::uint64_t>();
    h.c = r.pod<double>();
    h.R = r.pod<double>();
    h.seed = r.pod<std::uint64_t>();
    h.q_count = r.pod<std::uint64_t>();
    return h;
}

void write_sidecar(const std::string& path, const Header& h) {
    nlohmann::json j{
        {"format", "capann-instance"},
        {"version", h.version},
        {"metric", h.metric == Metric::hamming ? "hamming" : "sphere"},
        {"n", h.n},
        {"d", h.d},
        {"c", h.c},
        {"R", h.R},
        {"seed", h.seed},
        {"queries", h.q_count},
    };
    std::ofstream out(path + ".json");
    out << j.dump(2) << "\n";
}

}  // namespace

void save_instance(const HammingInstance& inst, const std::string& path) {
    Writer w(path);
    const Header h{kVersion, Metric::hamming, inst.n, inst.d, inst.c, 0.0,
                   inst.seed, inst.q_count()};
    write_header(w, h);
    w.vec(inst.points);
    w.vec(inst.queries);
    w.vec(inst.planted);
    write_sidecar(path, h);
}

void save_instance(const SphereInstance& inst, const std::string& path) {
    Writer w(path);
    const Header h{kVersion, Metric::sphere, inst.n, inst.d, inst.c, inst.R,
                   inst.seed, inst.q_count()};
    write_header(w, h);
    w.vec(inst.points);
    w.vec(inst.queries);
    w.vec(inst.planted);
    write_sidecar(path, h);
}

Metric instance_metric(const std::string& path) {
    Reader r(path);
    return read_header(r).metric;
}

HammingInstance load_hamming(const std::string& path) {
    Reader r(path);
    const Header h = read_header(r);
    if (h.metric != Metric::hamming) throw std::runtime_error("not a Hamming instance");
    HammingInstance inst;
    inst.n = h.n;
    inst.d = h.d;
    inst.c = h.c;
    inst.seed = h.seed;
    inst.words_per_row = static_cast<std::size_t>((h.d + 63) / 64);
    r.vec(inst.points, h.n * inst.words_per_row);
    r.vec(inst.queries, h.q_count * inst.words_per_row);
    r.vec(inst.planted, h.q_count);
    return inst;
}

SphereInstance load_sphere(const std::string& path) {
    Reader r(path);
    const Header h = read_header(r);
    if (h.metric != Metric::sphere) throw std::runtime_error("not a sphere instance");
    SphereInstance inst;
    inst.n = h.n;
    inst.d = h.d;
    inst.c = h.c;
    inst.R = h.R;
    inst.seed = h.seed;
    r.vec(inst.points, h.n * h.d);
    r.vec(inst.queries, h.q_count * h.d);
    r.vec(inst.planted, h.q_count);
    return inst;
}

}  // namespace capann::instances
