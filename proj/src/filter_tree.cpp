#include "capann/filter_tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "capann/bounds.hpp"
#include "capann/gaussian_caps.hpp"
#include "capann/rng.hpp"

namespace capann::tree {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

void fill_gaussian(std::uint64_t stream, std::span<double> out) {
    rng::Engine eng(stream);
    for (double& v : out) v = eng.next_normal();
}

}  // namespace

double recall_recursion(double p, double T, std::uint32_t K) {
    double f = 1.0;
    for (std::uint32_t k = 0; k < K; ++k) {
        // (1 - p f)^T in log space; T can be large.
        f = 1.0 - std::exp(T * std::log1p(-std::min(p * f, 1.0 - 1e-15)));
    }
    return f;
}

TreeParams select_params(std::uint64_t n, double c, double R, double rho_s,
                         const SelectOptions& opts) {
    if (n < 2) throw std::invalid_argument("select_params: n must be >= 2");
    if (!(c > 1.0)) throw std::invalid_argument("select_params: c must be > 1");
    if (!(rho_s >= 1.0)) throw std::invalid_argument("select_params: rho_s must be >= 1");
    if (!(R > 0.0)) throw std::invalid_argument("select_params: R must be > 0");

    TreeParams p;
    p.R = R;
    p.rho_s = rho_s;
    p.success_factor = opts.success_factor;

    const double log2n = std::log2(static_cast<double>(n));
    p.K = static_cast<std::uint32_t>(std::max<long>(1, std::lround(std::sqrt(log2n))));
    const double tail_eta = std::pow(static_cast<double>(n), -1.0 / p.K);
    p.eta = caps::inv_tail(tail_eta);
    p.T = static_cast<std::uint64_t>(
        std::ceil(std::pow(static_cast<double>(n), rho_s / p.K)));

    // Worst planted pair: distance (sqrt(2)/c) R, inner product R^2 (1 - 1/c^2).
    const double alpha = 1.0 - 1.0 / (c * c);
    p.predicted_rho_q = bounds::tree_tradeoff_rho_q(
        c, std::min(rho_s, 1.0 / (alpha * alpha)));

    const double target = opts.success_factor / static_cast<double>(p.T);
    if (target < caps::tail(p.eta).value) {
        p.rule = EtaPrimeRule::lemma_b1;
        p.eta_prime = caps::inv_joint_cap_eta_prime(p.eta, alpha, target);
    } else {
        // The asymptotic rule is infeasible at this scale (success_factor/T
        // exceeds even the eta' -> -inf limit tail(eta)); fall back to the
        // equivalent trade-off schedule. See select_params docs.
        p.rule = EtaPrimeRule::tradeoff_schedule;
        const double tail_eta_prime = std::pow(
            static_cast<double>(n), -(rho_s - p.predicted_rho_q) / p.K);
        p.eta_prime = caps::inv_tail(std::min(tail_eta_prime, 1.0 - 1e-12));
    }

    p.joint_cap_planted = caps::joint_cap(p.eta, p.eta_prime, alpha).value;
    p.recall_estimate_single =
        recall_recursion(p.joint_cap_planted, static_cast<double>(p.T), p.K);
    p.num_trees = 1;
    if (opts.recall_target > 0.0) {
        const double f1 = std::clamp(p.recall_estimate_single, 1e-9, 1.0 - 1e-12);
        if (f1 < opts.recall_target) {
            const double L =
                std::ceil(std::log1p(-opts.recall_target) / std::log1p(-f1));
            p.num_trees = static_cast<std::uint32_t>(
                std::clamp<double>(L, 1.0, opts.max_trees));
        }
    }
    p.recall_estimate =
        1.0 - std::pow(1.0 - p.recall_estimate_single, static_cast<double>(p.num_trees));
    return p;
}

class TreeBuilder {
public:
    TreeBuilder(const instances::SphereInstance& data, const TreeParams& params,
                std::uint32_t tree_index)
        : data_(data), params_(params) {
        tree_.params_ = params;
        tree_.d_ = data.d;
        const std::uint64_t root_stream =
            rng::substream(params.seed, rng::kTagTree, tree_index);
        FilterTree::Node root;
        root.stream = root_stream;
        root.level = 0;
        tree_.nodes_.push_back(root);
        if (params.store_vectors) {
            // The root carries no filter; keep its vector slot zeroed so that
            // vectors_[i * d] always belongs to node i.
            tree_.vectors_.assign(data.d, 0.0);
        }
        std::vector<std::uint32_t> all(data.n);
        for (std::uint64_t i = 0; i < data.n; ++i) all[i] = static_cast<std::uint32_t>(i);
        z_.resize(data.d);
        grow(0, root_stream, all, 0);
    }

    FilterTree take() { return std::move(tree_); }

private:
    void grow(std::uint32_t node_idx, std::uint64_t stream,
              const std::vector<std::uint32_t>& subset, std::uint32_t level) {
        if (level == params_.K) {
            tree_.nodes_[node_idx].bucket_begin = tree_.bucket_ids_.size();
            tree_.nodes_[node_idx].bucket_len = static_cast<std::uint32_t>(subset.size());
            tree_.bucket_ids_.insert(tree_.bucket_ids_.end(), subset.begin(), subset.end());
            return;
        }
        const double threshold = params_.eta * params_.R;
        // First pass materializes surviving children contiguously so the
        // node's children occupy one index range.
        struct Pending {
            std::uint32_t child_index;
            std::uint64_t stream;
            std::vector<std::uint32_t> subset;
        };
        std::vector<Pending> pending;
        for (std::uint64_t j = 0; j < params_.T; ++j) {
            const std::uint64_t child_stream = rng::substream(stream, rng::kTagChild, j);
            fill_gaussian(child_stream, z_);
            std::vector<std::uint32_t> kept;
            for (const std::uint32_t id : subset) {
                if (dot(z_, data_.point_row(id)) >= threshold) kept.push_back(id);
            }
            if (kept.empty()) continue;
            pending.push_back({static_cast<std::uint32_t>(j), child_stream, std::move(kept)});
        }
        const std::uint32_t first =
            static_cast<std::uint32_t>(tree_.nodes_.size());
        if (tree_.nodes_.size() + pending.size() > params_.max_tree_nodes) {
            throw ResourceCapExceeded("filter tree exceeded max_tree_nodes");
        }
        tree_.nodes_[node_idx].first_child = first;
        tree_.nodes_[node_idx].child_count = static_cast<std::uint32_t>(pending.size());
        for (const auto& p : pending) {
            FilterTree::Node child;
            child.stream = p.stream;
            child.child_index = p.child_index;
            child.level = static_cast<std::uint16_t>(level + 1);
            tree_.nodes_.push_back(child);
            if (params_.store_vectors) {
                const std::size_t off = tree_.vectors_.size();
                tree_.vectors_.resize(off + data_.d);
                fill_gaussian(p.stream, {tree_.vectors_.data() + off, data_.d});
            }
        }
        for (std::uint32_t k = 0; k < pending.size(); ++k) {
            grow(first + k, pending[k].stream, pending[k].subset, level + 1);
        }
    }

    const instances::SphereInstance& data_;
    const TreeParams& params_;
    FilterTree tree_;
    std::vector<double> z_;
};

FilterTree FilterTree::build(const instances::SphereInstance& data,
                             const TreeParams& params, std::uint32_t tree_index) {
    if (data.n == 0) throw std::invalid_argument("build: empty instance");
    for (std::uint64_t i = 0; i < std::min<std::uint64_t>(data.n, 4); ++i) {
        const double norm = instances::euclidean_distance(
            data.point_row(i), std::vector<double>(data.d, 0.0));
        if (std::fabs(norm - params.R) > 1e-6 * std::max(1.0, params.R)) {
            throw std::invalid_argument("build: points are not on the sphere of radius R");
        }
    }
    TreeBuilder b(data, params, tree_index);
    return b.take();
}

void FilterTree::node_vector(std::uint32_t node_idx, std::span<double> out) const {
    if (!vectors_.empty()) {
        std::memcpy(out.data(), vectors_.data() + std::size_t{node_idx} * d_,
                    d_ * sizeof(double));
        return;
    }
    fill_gaussian(nodes_[node_idx].stream, out);
}

QueryStats FilterTree::query(const instances::SphereInstance& data,
                             std::span<const double> q, double r_threshold) const {
    QueryStats st;
    if (nodes_.empty()) return st;
    const double threshold = params_.eta_prime * params_.R;
    std::vector<std::uint32_t> stack{0};
    std::vector<double> z(d_);
    while (!stack.empty()) {
        const std::uint32_t idx = stack.back();
        stack.pop_back();
        ++st.nodes_visited;
        const Node& node = nodes_[idx];
        if (node.level == params_.K) {
            for (const std::uint32_t id : bucket(node)) {
                ++st.candidates_scanned;
                const double dist = instances::euclidean_distance(data.point_row(id), q);
                if (dist <= r_threshold) {
                    st.result = id;
                    st.distance_found = dist;
                    return st;
                }
            }
            continue;
        }
        // Push passing children in reverse so they pop in index order.
        for (std::uint32_t k = node.child_count; k-- > 0;) {
            const std::uint32_t child = node.first_child + k;
            ++st.inner_products;
            if (!vectors_.empty()) {
                const double* zv = vectors_.data() + std::size_t{child} * d_;
                if (dot({zv, d_}, q) >= threshold) stack.push_back(child);
            } else {
                fill_gaussian(nodes_[child].stream, z);
                if (dot(z, q) >= threshold) stack.push_back(child);
            }
        }
    }
    return st;
}

bool FilterTree::verify_buckets(const instances::SphereInstance& data) const {
    const double threshold = params_.eta * params_.R;
    std::vector<double> z(d_);
    // Reconstruct the subset flowing into every node and compare at leaves.
    struct Frame {
        std::uint32_t idx;
        std::vector<std::uint32_t> subset;
    };
    std::vector<Frame> stack;
    std::vector<std::uint32_t> all(data.n);
    for (std::uint64_t i = 0; i < data.n; ++i) all[i] = static_cast<std::uint32_t>(i);
    stack.push_back({0, std::move(all)});
    while (!stack.empty()) {
        Frame f = std::move(stack.back());
        stack.pop_back();
        const Node& node = nodes_[f.idx];
        if (node.level == params_.K) {
            const auto b = bucket(node);
            if (b.size() != f.subset.size()) return false;
            if (!std::equal(b.begin(), b.end(), f.subset.begin())) return false;
            continue;
        }
        for (std::uint32_t k = 0; k < node.child_count; ++k) {
            const std::uint32_t child = node.first_child + k;
            node_vector(child, z);
            std::vector<std::uint32_t> kept;
            for (const std::uint32_t id : f.subset) {
                if (dot(z, data.point_row(id)) >= threshold) kept.push_back(id);
            }
            if (kept.empty()) return false;  // materialized child must be nonempty
            stack.push_back({child, std::move(kept)});
        }
    }
    return true;
}

namespace {
constexpr char kTreeMagic[8] = {'A', 'N', 'N', 'T', 'R', 'E', 'E', '1'};
}

void FilterTree::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    auto pod = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    out.write(kTreeMagic, sizeof(kTreeMagic));
    const std::uint32_t version = 1;
    pod(version);
    pod(params_.K);
    pod(params_.T);
    pod(params_.eta);
    pod(params_.eta_prime);
    pod(params_.R);
    pod(params_.rho_s);
    pod(params_.seed);
    pod(params_.max_tree_nodes);
    pod(params_.success_factor);
    pod(params_.num_trees);
    const std::uint8_t stored = params_.store_vectors ? 1 : 0;
    pod(stored);
    const std::uint8_t rule = static_cast<std::uint8_t>(params_.rule);
    pod(rule);
    pod(params_.predicted_rho_q);
    pod(params_.joint_cap_planted);
    pod(params_.recall_estimate_single);
    pod(params_.recall_estimate);
    pod(d_);
    const std::uint64_t node_count = nodes_.size();
    pod(node_count);
    for (const Node& n : nodes_) {
        pod(n.stream);
        pod(n.first_child);
        pod(n.child_count);
        pod(n.bucket_begin);
        pod(n.bucket_len);
        pod(n.child_index);
        pod(n.level);
    }
    const std::uint64_t mass = bucket_ids_.size();
    pod(mass);
    out.write(reinterpret_cast<const char*>(bucket_ids_.data()),
              static_cast<std::streamsize>(bucket_ids_.size() * sizeof(std::uint32_t)));
    // Gaussian vectors are always regenerable from the node streams and are
    // not serialized.
}

FilterTree FilterTree::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    auto pod = [&](auto& v) {
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw std::runtime_error("truncated tree file");
    };
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kTreeMagic, sizeof(kTreeMagic)) != 0) {
        throw std::runtime_error("not a filter-tree file (bad magic)");
    }
    std::uint32_t version;
    pod(version);
    if (version != 1) throw std::runtime_error("unsupported tree version");
    FilterTree t;
    pod(t.params_.K);
    pod(t.params_.T);
    pod(t.params_.eta);
    pod(t.params_.eta_prime);
    pod(t.params_.R);
    pod(t.params_.rho_s);
    pod(t.params_.seed);
    pod(t.params_.max_tree_nodes);
    pod(t.params_.success_factor);
    pod(t.params_.num_trees);
    std::uint8_t stored;
    pod(stored);
    std::uint8_t rule;
    pod(rule);
    t.params_.store_vectors = stored != 0;
    t.params_.rule = static_cast<EtaPrimeRule>(rule);
    pod(t.params_.predicted_rho_q);
    pod(t.params_.joint_cap_planted);
    pod(t.params_.recall_estimate_single);
    pod(t.params_.recall_estimate);
    pod(t.d_);
    std::uint64_t node_count;
    pod(node_count);
    t.nodes_.resize(node_count);
    for (Node& n : t.nodes_) {
        pod(n.stream);
        pod(n.first_child);
        pod(n.child_count);
        pod(n.bucket_begin);
        pod(n.bucket_len);
        pod(n.child_index);
        pod(n.level);
    }
    std::uint64_t mass;
    pod(mass);
    t.bucket_ids_.resize(mass);
    in.read(reinterpret_cast<char*>(t.bucket_ids_.data()),
            static_cast<std::streamsize>(mass * sizeof(std::uint32_t)));
    if (!in) throw std::runtime_error("truncated tree file");
    if (t.params_.store_vectors) {
        t.vectors_.assign(t.nodes_.size() * t.d_, 0.0);
        for (std::uint32_t i = 1; i < t.nodes_.size(); ++i) {  // root slot stays zero
            fill_gaussian(t.nodes_[i].stream,
                          {t.vectors_.data() + std::size_t{i} * t.d_, t.d_});
        }
    }
    return t;
}

Forest Forest::build(const instances::SphereInstance& data, const TreeParams& params) {
    Forest f;
    f.params_ = params;
    f.trees_.reserve(params.num_trees);
    for (std::uint32_t i = 0; i < params.num_trees; ++i) {
        f.trees_.push_back(FilterTree::build(data, params, i));
    }
    return f;
}

Forest Forest::from_trees(std::vector<FilterTree> trees, const TreeParams& params) {
    Forest f;
    f.params_ = params;
    f.trees_ = std::move(trees);
    return f;
}

QueryStats Forest::query(const instances::SphereInstance& data,
                         std::span<const double> q, double r_threshold) const {
    QueryStats total;
    for (const auto& t : trees_) {
        const QueryStats st = t.query(data, q, r_threshold);
        total.nodes_visited += st.nodes_visited;
        total.inner_products += st.inner_products;
        total.candidates_scanned += st.candidates_scanned;
        if (st.found()) {
            total.result = st.result;
            total.distance_found = st.distance_found;
            break;
        }
    }
    return total;
}

std::uint64_t Forest::node_count() const {
    std::uint64_t acc = 0;
    for (const auto& t : trees_) acc += t.node_count();
    return acc;
}

std::uint64_t Forest::bucket_mass() const {
    std::uint64_t acc = 0;
    for (const auto& t : trees_) acc += t.bucket_mass();
    return acc;
}

ExponentFit measured_exponents(std::span<const LadderPoint> ladder) {
    if (ladder.size() < 3) {
        throw std::invalid_argument("measured_exponents: need at least 3 ladder points");
    }
    auto fit = [&](auto&& y_of) {
        const std::size_t m = ladder.size();
        double sx = 0, sy = 0;
        for (const auto& pt : ladder) {
            sx += std::log(static_cast<double>(pt.n));
            sy += std::log(y_of(pt));
        }
        const double mx = sx / m, my = sy / m;
        double sxx = 0, sxy = 0;
        for (const auto& pt : ladder) {
            const double dx = std::log(static_cast<double>(pt.n)) - mx;
            const double dy = std::log(y_of(pt)) - my;
            sxx += dx * dx;
            sxy += dx * dy;
        }
        const double slope = sxy / sxx;
        double rss = 0;
        for (const auto& pt : ladder) {
            const double dx = std::log(static_cast<double>(pt.n)) - mx;
            const double dy = std::log(y_of(pt)) - my;
            const double r = dy - slope * dx;
            rss += r * r;
        }
        const double stderr_slope =
            m > 2 ? std::sqrt(rss / (static_cast<double>(m) - 2.0) / sxx) : 0.0;
        return std::pair{slope, stderr_slope};
    };
    ExponentFit out;
    auto [wq, wqe] = fit([](const LadderPoint& p) { return std::max(p.mean_work, 1e-12); });
    auto [sp, spe] = fit([](const LadderPoint& p) { return std::max(p.space, 1e-12); });
    out.rho_q_hat = wq;
    out.rho_q_stderr = wqe;
    out.rho_space_hat = sp;
    out.rho_space_stderr = spe;
    return out;
}

}  // namespace capann::tree
