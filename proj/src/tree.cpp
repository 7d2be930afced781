#include "vortexlab/detail/flat_sources.hpp"
#include "vortexlab/patch_sim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace vortexlab {

namespace {

using Complex = std::complex<double>;

struct Node {
    double cx = 0, cy = 0, half = 0;
    std::size_t begin = 0, end = 0;
    int child[4] = {-1, -1, -1, -1};
    bool leaf = true;
    double delta2 = 0;        // common blob radius^2, or -1 when mixed
    std::size_t coeff = 0;    // offset into the coefficient pool
};

class QuadTree {
public:
    QuadTree(const detail::FlatSources& src, const TreeParams& params) : params_(params) {
        const std::size_t n = src.x.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        x_.resize(n);
        y_.resize(n);
        g_.resize(n);
        d2_.resize(n);
        for (std::size_t q = 0; q < n; ++q) d2_[q] = src.delta2_of(q);

        double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
        for (std::size_t q = 0; q < n; ++q) {
            xmin = std::min(xmin, src.x[q]);
            xmax = std::max(xmax, src.x[q]);
            ymin = std::min(ymin, src.y[q]);
            ymax = std::max(ymax, src.y[q]);
        }
        if (n == 0) return;
        const double half = 0.5 * std::max(xmax - xmin, ymax - ymin) * (1.0 + 1e-12) + 1e-300;
        build(idx, src, 0, n, 0.5 * (xmin + xmax), 0.5 * (ymin + ymax), half, 0);
        std::vector<double> d2sorted(n);
        for (std::size_t q = 0; q < n; ++q) {
            x_[q] = src.x[idx[q]];
            y_[q] = src.y[idx[q]];
            g_[q] = src.g[idx[q]];
            d2sorted[q] = d2_[idx[q]];
        }
        d2_ = std::move(d2sorted);
        for (auto& node : nodes_) finish(node);
    }

    void evaluate(double tx, double ty, double& ux, double& uy) const {
        ux = uy = 0.0;
        if (nodes_.empty()) return;
        int stack[256];
        int top = 0;
        stack[top++] = 0;
        const int order = params_.expansion_order;
        while (top > 0) {
            const Node& nd = nodes_[static_cast<std::size_t>(stack[--top])];
            const double dx = tx - nd.cx, dy = ty - nd.cy;
            const double r2 = dx * dx + dy * dy;
            const double r = std::sqrt(r2);
            // classic Barnes-Hut test: cell side over distance below the opening angle
            const bool far = nd.delta2 >= 0.0 && 2.0 * nd.half < params_.opening_angle * r &&
                             r > params_.blob_guard * std::sqrt(nd.delta2);
            if (far) {
                const Complex winv = 1.0 / Complex(dx, dy);
                const Complex* a = &coeffs_[nd.coeff];
                Complex s = a[order];
                for (int k = order - 1; k >= 0; --k) s = a[k] + winv * s;
                s *= winv;
                const double blob = r2 / (r2 + nd.delta2);
                ux += s.imag() * blob;
                uy += s.real() * blob;
            } else if (nd.leaf) {
                for (std::size_t q = nd.begin; q < nd.end; ++q) {
                    const double ex = tx - x_[q], ey = ty - y_[q];
                    const double rr = ex * ex + ey * ey + d2_[q];
                    const double inv = rr > 0.0 ? g_[q] / rr : 0.0;
                    ux -= ey * inv;
                    uy += ex * inv;
                }
            } else {
                for (int c = 3; c >= 0; --c) {
                    if (nd.child[c] >= 0) stack[top++] = nd.child[c];
                }
            }
        }
    }

private:
    int build(std::vector<std::size_t>& idx, const detail::FlatSources& src, std::size_t begin,
              std::size_t end, double cx, double cy, double half, int depth) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(Node{});
        Node nd;
        nd.cx = cx;
        nd.cy = cy;
        nd.half = half;
        nd.begin = begin;
        nd.end = end;
        const std::size_t count = end - begin;
        if (count > static_cast<std::size_t>(std::max(1, params_.leaf_capacity)) && depth < 60) {
            nd.leaf = false;
            auto first = idx.begin() + static_cast<std::ptrdiff_t>(begin);
            auto last = idx.begin() + static_cast<std::ptrdiff_t>(end);
            auto mid_y = std::stable_partition(first, last, [&](std::size_t q) { return src.y[q] < cy; });
            auto mid_lo = std::stable_partition(first, mid_y, [&](std::size_t q) { return src.x[q] < cx; });
            auto mid_hi = std::stable_partition(mid_y, last, [&](std::size_t q) { return src.x[q] < cx; });
            const std::size_t cuts[5] = {begin, static_cast<std::size_t>(mid_lo - idx.begin()),
                                         static_cast<std::size_t>(mid_y - idx.begin()),
                                         static_cast<std::size_t>(mid_hi - idx.begin()), end};
            const double h = 0.5 * half;
            const double ox[4] = {-h, h, -h, h}, oy[4] = {-h, -h, h, h};
            for (int c = 0; c < 4; ++c) {
                if (cuts[c] < cuts[c + 1]) {
                    nd.child[c] = build(idx, src, cuts[c], cuts[c + 1], cx + ox[c], cy + oy[c], h,
                                        depth + 1);
                }
            }
        }
        nodes_[static_cast<std::size_t>(id)] = nd;
        return id;
    }

    void finish(Node& nd) {
        const int order = params_.expansion_order;
        nd.coeff = coeffs_.size();
        coeffs_.resize(coeffs_.size() + static_cast<std::size_t>(order + 1), Complex(0.0, 0.0));
        Complex* a = &coeffs_[nd.coeff];
        nd.delta2 = d2_[nd.begin];
        for (std::size_t q = nd.begin; q < nd.end; ++q) {
            const Complex dz(x_[q] - nd.cx, y_[q] - nd.cy);
            if (d2_[q] != nd.delta2) nd.delta2 = -1.0;
            Complex p = g_[q];
            for (int k = 0; k <= order; ++k) {
                a[k] += p;
                p *= dz;
            }
        }
    }

    TreeParams params_;
    std::vector<Node> nodes_;
    std::vector<Complex> coeffs_;
    std::vector<double> x_, y_, g_, d2_;
};

}  // namespace

Matrix2X<double> detail::tree_sum(const FlatSources& src, const Matrix2X<double>& pts,
                                  const TreeParams& params, int threads) {
    if (!(params.opening_angle > 0.0 && params.opening_angle < 1.0)) {
        throw ValidationError("opening_angle must lie in (0, 1)");
    }
    if (params.leaf_capacity < 1 || params.expansion_order < 0) {
        throw ValidationError("tree needs leaf_capacity >= 1 and expansion_order >= 0");
    }
    const QuadTree tree(src, params);
    Matrix2X<double> out(2, pts.cols());
    parallel_blocks(static_cast<std::size_t>(pts.cols()), threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const auto c = static_cast<Eigen::Index>(i);
            tree.evaluate(pts(0, c), pts(1, c), out(0, c), out(1, c));
        }
    });
    return out;
}

Matrix2X<double> induced_velocity_tree(const std::vector<ParticleCloud>& clouds,
                                       const Matrix2X<double>& eval_points, double delta,
                                       const TreeParams& params, int threads) {
    if (!(delta >= 0.0)) throw ValidationError("blob radius must be >= 0");
    const auto src = detail::flatten(clouds, &delta);
    detail::check_no_coincidence(src, eval_points);
    return detail::tree_sum(src, eval_points, params, threads);
}

}  // namespace vortexlab
