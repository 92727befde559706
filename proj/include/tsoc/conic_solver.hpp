#pragma once

// Primal-dual interior-point method for second-order cone programs
//
//     minimize    c'x
//     subject to  A x = b
//                 G x + s = h,   s in K
//
// where K is a product of one nonnegative orthant followed by second-order
// cones Q^q = { (u0, u1) : ||u1|| <= u0 }. The iteration works on the
// homogeneous self-dual embedding with Nesterov-Todd scaling and a Mehrotra
// predictor-corrector step. Small problems factor the reduced normal
// equations densely; larger ones use a sparse LDL' of the quasidefinite KKT
// matrix.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace tsoc::conic {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor>;
using Triplet = Eigen::Triplet<double>;

struct ConeDims {
    int linear = 0;
    std::vector<int> soc;

    int total() const { return linear + std::accumulate(soc.begin(), soc.end(), 0); }
    int degree() const { return linear + static_cast<int>(soc.size()); }
};

struct ConeProgram {
    Vec c;
    SpMat A;  // p x n, may have zero rows
    Vec b;
    SpMat G;  // m x n
    Vec h;
    ConeDims cones;
};

enum class Status { Optimal, PrimalInfeasible, DualInfeasible, MaxIterations, NumericalError };

inline const char* to_string(Status s)
{
    switch (s) {
    case Status::Optimal: return "optimal";
    case Status::PrimalInfeasible: return "infeasible";
    case Status::DualInfeasible: return "unbounded";
    case Status::MaxIterations: return "max-iter";
    case Status::NumericalError: return "numerical-error";
    }
    return "?";
}

struct Settings {
    double feastol = 1e-9;
    double abstol = 1e-9;
    double reltol = 1e-10;
    // accepted when the iteration stalls before reaching the tolerances above
    double feastol_inacc = 1e-6;
    double abstol_inacc = 1e-6;
    double reltol_inacc = 1e-6;
    int max_iter = 100;
    double step = 0.99;
    double static_reg = 1e-11;
    int refine_steps = 4;
    double qr_switch = 1e-11;  // relative KKT residual that triggers the QR factorization
    int dense_limit = 250;  // n + p at or below this uses the dense path
};

struct Result {
    Status status = Status::NumericalError;
    bool reduced_accuracy = false;
    Vec x, y, z, s;
    double pcost = 0.0;
    double dcost = 0.0;
    double pres = 0.0;  // relative primal residual
    double dres = 0.0;  // relative dual residual
    double gap = 0.0;   // s'z
    double relgap = 0.0;
    double cone_residual = 0.0;  // largest violation of s, z in K
    int iterations = 0;
};

namespace detail {

/// Nesterov-Todd scaling of the cone K at (s, z) and the scaled point lambda = W z.
class Scaling {
public:
    explicit Scaling(const ConeDims& dims) : dims_(dims)
    {
        int off = dims.linear;
        for (int q : dims.soc) {
            offsets_.push_back(off);
            off += q;
        }
        m_ = off;
        d_.resize(dims.linear);
        eta_.resize(dims.soc.size());
        wbar_.resize(dims.soc.size());
        lambda_.resize(m_);
    }

    bool update(const Vec& s, const Vec& z)
    {
        const int l = dims_.linear;
        for (int j = 0; j < l; ++j) {
            if (!(s[j] > 0.0 && z[j] > 0.0))
                return false;
            d_[j] = std::sqrt(s[j] / z[j]);
            lambda_[j] = std::sqrt(s[j] * z[j]);
        }
        for (std::size_t b = 0; b < dims_.soc.size(); ++b) {
            const int o = offsets_[b], q = dims_.soc[b];
            const auto sb = s.segment(o, q);
            const auto zb = z.segment(o, q);
            const double sres = soc_det(sb), zres = soc_det(zb);
            if (!(sres > 0.0 && zres > 0.0 && sb[0] > 0.0 && zb[0] > 0.0))
                return false;
            const double snorm = std::sqrt(sres), znorm = std::sqrt(zres);
            const Vec sbar = sb / snorm;
            const Vec zbar = zb / znorm;
            const double g = std::sqrt(0.5 * (1.0 + sbar.dot(zbar)));
            Vec w(q);
            w[0] = (sbar[0] + zbar[0]) / (2.0 * g);
            w.tail(q - 1) = (sbar.tail(q - 1) - zbar.tail(q - 1)) / (2.0 * g);
            eta_[b] = std::sqrt(snorm / znorm);
            wbar_[b] = std::move(w);
            Vec lz(q);
            apply_block(b, zb, lz, Op::W);
            lambda_.segment(o, q) = lz;
        }
        return true;
    }

    enum class Op { W, Winv, W2, Winv2 };

    void apply(const Vec& v, Vec& out, Op op) const
    {
        out.resize(m_);
        for (int j = 0; j < dims_.linear; ++j) {
            const double d = d_[j];
            switch (op) {
            case Op::W: out[j] = d * v[j]; break;
            case Op::Winv: out[j] = v[j] / d; break;
            case Op::W2: out[j] = d * d * v[j]; break;
            case Op::Winv2: out[j] = v[j] / (d * d); break;
            }
        }
        for (std::size_t b = 0; b < dims_.soc.size(); ++b) {
            const int o = offsets_[b], q = dims_.soc[b];
            Vec tmp(q);
            apply_block(b, v.segment(o, q), tmp, op);
            out.segment(o, q) = tmp;
        }
    }

    Vec apply(const Vec& v, Op op) const
    {
        Vec out;
        apply(v, out, op);
        return out;
    }

    const Vec& lambda() const { return lambda_; }
    const Vec& d() const { return d_; }
    double eta(std::size_t b) const { return eta_[b]; }
    const Vec& wbar(std::size_t b) const { return wbar_[b]; }
    const std::vector<int>& offsets() const { return offsets_; }

    /// Dense q x q matrix of W^2 (or W^-2) for SOC block b.
    Mat block_matrix(std::size_t b, bool inverse) const
    {
        const int q = dims_.soc[b];
        Vec v = wbar_[b];
        if (inverse)
            v.tail(q - 1) = -v.tail(q - 1);
        Mat out = 2.0 * v * v.transpose();
        out(0, 0) -= 1.0;
        for (int i = 1; i < q; ++i)
            out(i, i) += 1.0;
        const double e2 = eta_[b] * eta_[b];
        return inverse ? Mat(out / e2) : Mat(out * e2);
    }

    static double soc_det(const Eigen::Ref<const Vec>& u)
    {
        return (u[0] - u.tail(u.size() - 1).norm()) * (u[0] + u.tail(u.size() - 1).norm());
    }

private:
    void apply_block(std::size_t b, const Eigen::Ref<const Vec>& v, Vec& out, Op op) const
    {
        const int q = static_cast<int>(v.size());
        const Vec& w = wbar_[b];
        const double e = eta_[b];
        const auto w1 = w.tail(q - 1);
        const auto v1 = v.tail(q - 1);
        switch (op) {
        case Op::W: {
            const double w1v1 = w1.dot(v1);
            out[0] = e * (w[0] * v[0] + w1v1);
            out.tail(q - 1) = e * (v1 + (v[0] + w1v1 / (1.0 + w[0])) * w1);
            break;
        }
        case Op::Winv: {
            const double w1v1 = w1.dot(v1);
            out[0] = (w[0] * v[0] - w1v1) / e;
            out.tail(q - 1) = (v1 + (-v[0] + w1v1 / (1.0 + w[0])) * w1) / e;
            break;
        }
        case Op::W2: {
            const double wv = w.dot(v);
            out = 2.0 * wv * w;
            out[0] -= v[0];
            out.tail(q - 1) += v1;
            out *= e * e;
            break;
        }
        case Op::Winv2: {
            // W^-2 = eta^-2 (2 (J w)(J w)' - J)
            const double jwv = w[0] * v[0] - w1.dot(v1);
            out[0] = 2.0 * jwv * w[0] - v[0];
            out.tail(q - 1) = -2.0 * jwv * w1 + v1;
            out /= e * e;
            break;
        }
        }
    }

    ConeDims dims_;
    std::vector<int> offsets_;
    int m_ = 0;
    Vec d_;
    std::vector<double> eta_;
    std::vector<Vec> wbar_;
    Vec lambda_;
};

/// Jordan product u o v for the cone K.
inline Vec cone_prod(const ConeDims& dims, const Vec& u, const Vec& v)
{
    Vec out(u.size());
    for (int j = 0; j < dims.linear; ++j)
        out[j] = u[j] * v[j];
    int o = dims.linear;
    for (int q : dims.soc) {
        out[o] = u.segment(o, q).dot(v.segment(o, q));
        out.segment(o + 1, q - 1) = u[o] * v.segment(o + 1, q - 1) + v[o] * u.segment(o + 1, q - 1);
        o += q;
    }
    return out;
}

/// Solves lambda o u = v for u.
inline Vec cone_div(const ConeDims& dims, const Vec& lambda, const Vec& v)
{
    Vec out(v.size());
    for (int j = 0; j < dims.linear; ++j)
        out[j] = v[j] / lambda[j];
    int o = dims.linear;
    for (int q : dims.soc) {
        const auto l1 = lambda.segment(o + 1, q - 1);
        const auto v1 = v.segment(o + 1, q - 1);
        const double l0 = lambda[o];
        const double det = l0 * l0 - l1.squaredNorm();
        const double u0 = (l0 * v[o] - l1.dot(v1)) / det;
        out[o] = u0;
        out.segment(o + 1, q - 1) = (v1 - u0 * l1) / l0;
        o += q;
    }
    return out;
}

inline void add_identity(const ConeDims& dims, Vec& v, double t)
{
    for (int j = 0; j < dims.linear; ++j)
        v[j] += t;
    int o = dims.linear;
    for (int q : dims.soc) {
        v[o] += t;
        o += q;
    }
}

/// Smallest "eigenvalue" of u in the Jordan algebra; u in K iff it is >= 0.
inline double cone_min_eig(const ConeDims& dims, const Vec& u)
{
    double m = std::numeric_limits<double>::infinity();
    for (int j = 0; j < dims.linear; ++j)
        m = std::min(m, u[j]);
    int o = dims.linear;
    for (int q : dims.soc) {
        m = std::min(m, u[o] - u.segment(o + 1, q - 1).norm());
        o += q;
    }
    return m;
}

/// Largest t with x + t*d in K (x in the interior); +inf if unbounded.
inline double max_step(const ConeDims& dims, const Vec& x, const Vec& d)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    double t = inf;
    for (int j = 0; j < dims.linear; ++j)
        if (d[j] < 0.0)
            t = std::min(t, -x[j] / d[j]);
    int o = dims.linear;
    for (int q : dims.soc) {
        const auto x1 = x.segment(o + 1, q - 1);
        const auto d1 = d.segment(o + 1, q - 1);
        const double a = d[o] * d[o] - d1.squaredNorm();
        const double b = x[o] * d[o] - x1.dot(d1);
        const double c = std::max(x[o] * x[o] - x1.squaredNorm(), 0.0);
        const double disc = b * b - a * c;
        double r = inf;
        if (a < 0.0) {
            const double sq = std::sqrt(std::max(disc, 0.0));
            r = b >= 0.0 ? (b + sq) / (-a) : c / (sq - b);
        } else if (b < 0.0 && disc >= 0.0) {
            r = c / (std::sqrt(disc) - b);
        }
        // guard against the far nappe when a == 0
        if (d[o] < 0.0)
            r = std::min(r, -x[o] / d[o]);
        t = std::min(t, r);
        o += q;
    }
    return t;
}

/// Solves K [dx; dy; dz] = [rx; ry; rz] with K = [0 A' G'; A 0 0; G 0 -W^2].
class KktSolver {
public:
    KktSolver(const ConeProgram& P, const Settings& st) : P_(P), st_(st)
    {
        n_ = static_cast<int>(P.c.size());
        p_ = static_cast<int>(P.b.size());
        m_ = static_cast<int>(P.h.size());
        dense_ = n_ + p_ <= st.dense_limit;
        if (dense_) {
            Ad_ = Mat(P.A);
            Gd_ = Mat(P.G);
        } else {
            build_sparse_pattern();
        }
    }

    bool factor(const Scaling& W)
    {
        W_ = &W;
        if (dense_ && !qr_mode_) {
            reg_ = st_.static_reg;
            if (factor_dense())
                return true;
            qr_mode_ = true;
        }
        double reg = st_.static_reg;
        for (int attempt = 0; attempt < 6; ++attempt, reg *= 100.0) {
            reg_ = reg;
            if (dense_ ? factor_dense() : factor_sparse())
                return true;
        }
        return false;
    }

    void solve(const Vec& rx, const Vec& ry, const Vec& rz, Vec& dx, Vec& dy, Vec& dz)
    {
        const double rn = std::max({rx.lpNorm<Eigen::Infinity>(), ry.size() ? ry.lpNorm<Eigen::Infinity>() : 0.0,
                                    rz.lpNorm<Eigen::Infinity>()});
        if (refined_solve(rx, ry, rz, dx, dy, dz) <= st_.qr_switch * (1.0 + rn) || !dense_ || qr_mode_)
            return;
        // Cholesky of the normal matrix lost too much accuracy; switch to QR
        // for the rest of this solve.
        qr_mode_ = true;
        if (factor(*W_))
            refined_solve(rx, ry, rz, dx, dy, dz);
    }

private:
    double refined_solve(const Vec& rx, const Vec& ry, const Vec& rz, Vec& dx, Vec& dy, Vec& dz) const
    {
        solve_reg(rx, ry, rz, dx, dy, dz);
        const double rn = std::max({rx.lpNorm<Eigen::Infinity>(), ry.size() ? ry.lpNorm<Eigen::Infinity>() : 0.0,
                                    rz.lpNorm<Eigen::Infinity>()});
        double en = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= st_.refine_steps; ++k) {
            Vec ex, ey, ez;
            residual(rx, ry, rz, dx, dy, dz, ex, ey, ez);
            en = std::max({ex.lpNorm<Eigen::Infinity>(), ey.size() ? ey.lpNorm<Eigen::Infinity>() : 0.0,
                           ez.lpNorm<Eigen::Infinity>()});
            if (en <= 1e-14 * (1.0 + rn) || k == st_.refine_steps)
                break;
            Vec cx, cy, cz;
            solve_reg(ex, ey, ez, cx, cy, cz);
            dx += cx;
            dy += cy;
            dz += cz;
        }
        return en;
    }

    void residual(const Vec& rx, const Vec& ry, const Vec& rz, const Vec& dx, const Vec& dy, const Vec& dz, Vec& ex,
                  Vec& ey, Vec& ez) const
    {
        if (dense_) {
            ex.noalias() = rx - Ad_.transpose() * dy - Gd_.transpose() * dz;
            ey.noalias() = ry - Ad_ * dx;
            ez.noalias() = rz - Gd_ * dx;
        } else {
            ex = rx - P_.A.transpose() * dy - P_.G.transpose() * dz;
            ey = ry - P_.A * dx;
            ez = rz - P_.G * dx;
        }
        ez += W_->apply(dz, Scaling::Op::W2);
    }

    // H = G' W^-2 G + reg I is factored as R'R: by Cholesky of H, or, once
    // that proves too inaccurate, from a QR decomposition of
    // [W^-1 G; sqrt(reg) I], which avoids squaring the condition number.
    bool factor_dense()
    {
        const auto& dims = P_.cones;
        WG_.resize(m_ + n_, n_);
        if (dims.linear > 0)
            WG_.topRows(dims.linear) = W_->d().cwiseInverse().asDiagonal() * Gd_.topRows(dims.linear);
        int o = dims.linear;
        for (std::size_t b = 0; b < dims.soc.size(); ++b) {
            const int q = dims.soc[b];
            const Vec& w = W_->wbar(b);
            const double e = W_->eta(b);
            const auto g0 = Gd_.row(o);
            const auto G1 = Gd_.middleRows(o + 1, q - 1);
            const Eigen::RowVectorXd t = w.tail(q - 1).transpose() * G1;
            WG_.row(o) = (w[0] * g0 - t) / e;
            WG_.middleRows(o + 1, q - 1) = (G1 + w.tail(q - 1) * (t / (1.0 + w[0]) - g0)) / e;
            o += q;
        }
        if (qr_mode_) {
            WG_.bottomRows(n_).setZero();
            WG_.bottomRows(n_).diagonal().setConstant(std::sqrt(reg_));
            qr_.compute(WG_);
            R_ = qr_.matrixQR().topRows(n_).triangularView<Eigen::Upper>();
        } else {
            H_.setZero(n_, n_);
            H_.selfadjointView<Eigen::Lower>().rankUpdate(WG_.topRows(m_).transpose());
            H_.diagonal().array() += reg_;
            llt_h_.compute(H_);
            if (llt_h_.info() != Eigen::Success)
                return false;
            R_ = llt_h_.matrixU();
        }
        for (int j = 0; j < n_; ++j)
            if (!(std::abs(R_(j, j)) > 0.0) || !std::isfinite(R_(j, j)))
                return false;
        if (p_ > 0) {
            RtAt_ = R_.transpose().triangularView<Eigen::Lower>().solve(Ad_.transpose());
            Mat S = RtAt_.transpose() * RtAt_;
            S.diagonal().array() += reg_;
            llt_s_.compute(S);
            if (llt_s_.info() != Eigen::Success)
                return false;
            HinvAt_ = R_.triangularView<Eigen::Upper>().solve(RtAt_);
        }
        return true;
    }

    Vec solve_h(const Vec& r) const
    {
        Vec y = R_.transpose().triangularView<Eigen::Lower>().solve(r);
        R_.triangularView<Eigen::Upper>().solveInPlace(y);
        return y;
    }

    void solve_reg(const Vec& rx, const Vec& ry, const Vec& rz, Vec& dx, Vec& dy, Vec& dz) const
    {
        if (dense_) {
            const Vec wz = W_->apply(rz, Scaling::Op::Winv2);
            const Vec rt = rx + Gd_.transpose() * wz;
            if (p_ > 0) {
                const Vec hr = solve_h(rt);
                dy = llt_s_.solve(Ad_ * hr - ry);
                dx = hr - HinvAt_ * dy;
            } else {
                dy.resize(0);
                dx = solve_h(rt);
            }
            dz = W_->apply(Vec(Gd_ * dx - rz), Scaling::Op::Winv2);
            return;
        }
        Vec rhs(n_ + p_ + m_);
        rhs << rx, ry, rz;
        const Vec sol = ldlt_.solve(rhs);
        dx = sol.head(n_);
        dy = sol.segment(n_, p_);
        dz = sol.tail(m_);
    }

    void build_sparse_pattern()
    {
        const auto& dims = P_.cones;
        const int N = n_ + p_ + m_;
        std::vector<Triplet> trip;
        trip.reserve(static_cast<std::size_t>(P_.A.nonZeros() + P_.G.nonZeros() + N));
        // upper triangle only
        for (int j = 0; j < n_; ++j)
            trip.emplace_back(j, j, 1.0);
        for (int k = 0; k < P_.A.outerSize(); ++k)
            for (SpMat::InnerIterator it(P_.A, k); it; ++it)
                trip.emplace_back(static_cast<int>(it.col()), n_ + static_cast<int>(it.row()), it.value());
        for (int k = 0; k < P_.G.outerSize(); ++k)
            for (SpMat::InnerIterator it(P_.G, k); it; ++it)
                trip.emplace_back(static_cast<int>(it.col()), n_ + p_ + static_cast<int>(it.row()), it.value());
        for (int j = 0; j < p_; ++j)
            trip.emplace_back(n_ + j, n_ + j, 1.0);
        const int zo = n_ + p_;
        for (int j = 0; j < dims.linear; ++j)
            trip.emplace_back(zo + j, zo + j, 1.0);
        int o = dims.linear;
        for (int q : dims.soc) {
            for (int a = 0; a < q; ++a)
                for (int b = a; b < q; ++b)
                    trip.emplace_back(zo + o + a, zo + o + b, 1.0);
            o += q;
        }
        K_.resize(N, N);
        K_.setFromTriplets(trip.begin(), trip.end());
        K_.makeCompressed();
        // record value slots that change each iteration
        auto slot = [&](int r, int c) {
            for (SpMat::InnerIterator it(K_, c); it; ++it)
                if (it.row() == r)
                    return static_cast<int>(&it.valueRef() - K_.valuePtr());
            return -1;
        };
        for (int j = 0; j < n_ + p_; ++j)
            diag_slots_.push_back(slot(j, j));
        for (int j = 0; j < dims.linear; ++j)
            lin_slots_.push_back(slot(zo + j, zo + j));
        o = dims.linear;
        for (int q : dims.soc) {
            std::vector<int> s;
            for (int a = 0; a < q; ++a)
                for (int b = a; b < q; ++b)
                    s.push_back(slot(zo + o + a, zo + o + b));
            soc_slots_.push_back(std::move(s));
            o += q;
        }
        ldlt_.analyzePattern(K_.selfadjointView<Eigen::Upper>());
    }

    bool factor_sparse()
    {
        const auto& dims = P_.cones;
        double* val = K_.valuePtr();
        for (int j = 0; j < n_; ++j)
            val[diag_slots_[static_cast<std::size_t>(j)]] = reg_;
        for (int j = 0; j < p_; ++j)
            val[diag_slots_[static_cast<std::size_t>(n_ + j)]] = -reg_;
        for (int j = 0; j < dims.linear; ++j) {
            const double d = W_->d()[j];
            val[lin_slots_[static_cast<std::size_t>(j)]] = -d * d - reg_;
        }
        for (std::size_t b = 0; b < dims.soc.size(); ++b) {
            const Mat W2 = W_->block_matrix(b, false);
            const int q = dims.soc[b];
            std::size_t k = 0;
            for (int a = 0; a < q; ++a)
                for (int c = a; c < q; ++c)
                    val[soc_slots_[b][k++]] = -W2(a, c) - (a == c ? reg_ : 0.0);
        }
        ldlt_.factorize(K_.selfadjointView<Eigen::Upper>());
        return ldlt_.info() == Eigen::Success;
    }

    const ConeProgram& P_;
    const Settings& st_;
    const Scaling* W_ = nullptr;
    int n_ = 0, p_ = 0, m_ = 0;
    bool dense_ = true;
    double reg_ = 0.0;

    Mat Ad_, Gd_;
    Mat WG_, R_, RtAt_, HinvAt_;
    Eigen::HouseholderQR<Mat> qr_;
    Mat H_;
    Eigen::LLT<Mat> llt_h_;
    bool qr_mode_ = false;
    Eigen::LLT<Mat> llt_s_;

    SpMat K_;
    std::vector<int> diag_slots_, lin_slots_;
    std::vector<std::vector<int>> soc_slots_;
    Eigen::SimplicialLDLT<SpMat, Eigen::Upper, Eigen::AMDOrdering<int>> ldlt_;
};

} // namespace detail

inline Result solve(const ConeProgram& P, const Settings& st = {})
{
    using detail::Scaling;
    const ConeDims& dims = P.cones;
    const int n = static_cast<int>(P.c.size());
    const int p = static_cast<int>(P.b.size());
    const int m = static_cast<int>(P.h.size());
    Result res;
    if (P.A.rows() != p || P.A.cols() != n || P.G.rows() != m || P.G.cols() != n || dims.total() != m)
        throw std::invalid_argument("conic::solve: inconsistent problem dimensions");

    const double cnorm = std::max(1.0, P.c.norm());
    const double bnorm = std::max(1.0, P.b.norm());
    const double hnorm = std::max(1.0, P.h.norm());

    detail::KktSolver kkt(P, st);
    Scaling W(dims);

    // Initial point: W = I solves give the least-squares primal point and a
    // dual point, both shifted into the cone interior.
    Vec x, y, z, s;
    {
        // identity scaling: s = z = e
        Vec e = Vec::Zero(m);
        detail::add_identity(dims, e, 1.0);
        W.update(e, e);
        if (!kkt.factor(W)) {
            res.status = Status::NumericalError;
            return res;
        }
        Vec dx, dy, dz;
        kkt.solve(Vec::Zero(n), P.b, P.h, dx, dy, dz);
        x = dx;
        s = -dz;
        kkt.solve(-P.c, Vec::Zero(p), Vec::Zero(m), dx, dy, dz);
        y = dy;
        z = dz;
        const double as = -detail::cone_min_eig(dims, s);
        if (as >= -1e-8)
            detail::add_identity(dims, s, 1.0 + as);
        const double az = -detail::cone_min_eig(dims, z);
        if (az >= -1e-8)
            detail::add_identity(dims, z, 1.0 + az);
    }
    double tau = 1.0, kappa = 1.0;
    const double deg = static_cast<double>(dims.degree());

    auto finish = [&](Status status, bool reduced) {
        res.status = status;
        res.reduced_accuracy = reduced;
        if (status == Status::Optimal || status == Status::MaxIterations || status == Status::NumericalError) {
            res.x = x / tau;
            res.y = y / tau;
            res.z = z / tau;
            res.s = s / tau;
        } else if (status == Status::PrimalInfeasible) {
            const double t = -(P.b.dot(y) + P.h.dot(z));
            res.x = Vec::Zero(n);
            res.s = Vec::Zero(m);
            res.y = y / t;
            res.z = z / t;
        } else {
            const double t = -P.c.dot(x);
            res.x = x / t;
            res.s = s / t;
            res.y = Vec::Zero(p);
            res.z = Vec::Zero(m);
        }
        res.cone_residual = std::max(0.0, -std::min(detail::cone_min_eig(dims, res.s), detail::cone_min_eig(dims, res.z)));
        return res;
    };

    // Last iterate that met the reduced tolerances, used when the solver
    // breaks down after reaching the neighbourhood of the optimum.
    struct Snapshot {
        bool valid = false;
        Vec x, y, z, s;
        double tau = 1.0, kappa = 1.0, merit = std::numeric_limits<double>::infinity();
        Result info;
    } best;
    auto fallback = [&](Status status) {
        if (!best.valid)
            return finish(status, false);
        x = best.x;
        y = best.y;
        z = best.z;
        s = best.s;
        tau = best.tau;
        kappa = best.kappa;
        const int its = res.iterations;
        res = best.info;
        res.iterations = its;
        return finish(Status::Optimal, true);
    };

    for (int it = 0;; ++it) {
        res.iterations = it;
        const Vec r1 = P.A.transpose() * y + P.G.transpose() * z + P.c * tau;
        const Vec r2 = P.A * x - P.b * tau;
        const Vec r3 = P.G * x + s - P.h * tau;
        const double cx = P.c.dot(x), by = P.b.dot(y), hz = P.h.dot(z);
        const double r4 = cx + by + hz + kappa;

        res.pcost = cx / tau;
        res.dcost = -(by + hz) / tau;
        res.pres = std::max(r2.size() ? r2.norm() / bnorm : 0.0, r3.norm() / hnorm) / tau;
        res.dres = (P.A.transpose() * y + P.G.transpose() * z + P.c * tau).norm() / cnorm / tau;
        res.gap = s.dot(z) / (tau * tau);
        const double den = std::min(std::abs(res.pcost), std::abs(res.dcost));
        res.relgap = den > 0.0 ? res.gap / den : std::numeric_limits<double>::infinity();

        auto converged = [&](double ft, double at, double rt) {
            return res.pres <= ft && res.dres <= ft && (res.gap <= at || res.relgap <= rt);
        };
        if (converged(st.feastol, st.abstol, st.reltol))
            return finish(Status::Optimal, false);
        if (converged(st.feastol_inacc, st.abstol_inacc, st.reltol_inacc)) {
            const double merit = std::max({res.pres, res.dres, std::min(res.gap, res.relgap)});
            if (merit < best.merit) {
                best.valid = true;
                best.x = x;
                best.y = y;
                best.z = z;
                best.s = s;
                best.tau = tau;
                best.kappa = kappa;
                best.merit = merit;
                best.info = res;
            }
        }

        // infeasibility certificates
        const double pinf_den = -(by + hz);
        if (pinf_den > 0.0 && tau < kappa) {
            const double pinf = (P.A.transpose() * y + P.G.transpose() * z).norm() / pinf_den;
            if (pinf <= st.feastol * std::max(1.0, hnorm))
                return finish(Status::PrimalInfeasible, false);
        }
        if (cx < 0.0 && tau < kappa) {
            const double dinf = std::max(r2.size() ? (P.A * x).norm() : 0.0, (P.G * x + s).norm()) / (-cx);
            if (dinf <= st.feastol * cnorm)
                return finish(Status::DualInfeasible, false);
        }

        if (it >= st.max_iter) {
            if (converged(st.feastol_inacc, st.abstol_inacc, st.reltol_inacc))
                return finish(Status::Optimal, true);
            return fallback(Status::MaxIterations);
        }

        if (!W.update(s, z) || !kkt.factor(W)) {
            if (converged(st.feastol_inacc, st.abstol_inacc, st.reltol_inacc))
                return finish(Status::Optimal, true);
            return fallback(Status::NumericalError);
        }
        const Vec& lam = W.lambda();

        Vec x2, y2, z2;
        kkt.solve(-P.c, P.b, P.h, x2, y2, z2);
        const double den_tau = P.c.dot(x2) + P.b.dot(y2) + P.h.dot(z2) - kappa / tau;

        // Direction for complementarity target ds, dk and residual weight psi.
        struct Dir {
            Vec dx, dy, dz, ds;
            double dtau, dkappa;
        };
        auto direction = [&](const Vec& ds, double dk, double psi) {
            Dir d;
            const Vec Wld = W.apply(detail::cone_div(dims, lam, ds), Scaling::Op::W);
            Vec x1, y1, z1;
            kkt.solve(-psi * r1, -psi * r2, Vec(-psi * r3 - Wld), x1, y1, z1);
            d.dtau = (-psi * r4 - dk / tau - (P.c.dot(x1) + P.b.dot(y1) + P.h.dot(z1))) / den_tau;
            d.dx = x1 + d.dtau * x2;
            d.dy = y1 + d.dtau * y2;
            d.dz = z1 + d.dtau * z2;
            d.ds = Wld - W.apply(d.dz, Scaling::Op::W2);
            d.dkappa = (dk - kappa * d.dtau) / tau;
            return d;
        };
        auto step_len = [&](const Dir& d) {
            double a = std::min(detail::max_step(dims, s, d.ds), detail::max_step(dims, z, d.dz));
            if (d.dtau < 0.0)
                a = std::min(a, -tau / d.dtau);
            if (d.dkappa < 0.0)
                a = std::min(a, -kappa / d.dkappa);
            return a;
        };

        const Vec ll = detail::cone_prod(dims, lam, lam);
        const Dir aff = direction(-ll, -kappa * tau, 1.0);
        const double a_aff = std::min(1.0, step_len(aff));
        const double sigma = std::clamp(std::pow(1.0 - a_aff, 3), 0.0, 1.0);
        const double mu = (s.dot(z) + kappa * tau) / (deg + 1.0);

        Vec ds = -ll - detail::cone_prod(dims, W.apply(aff.ds, Scaling::Op::Winv), W.apply(aff.dz, Scaling::Op::W));
        detail::add_identity(dims, ds, sigma * mu);
        const double dk = -kappa * tau - aff.dkappa * aff.dtau + sigma * mu;
        const Dir cmb = direction(ds, dk, 1.0 - sigma);
        const double alpha = std::min(1.0, st.step * step_len(cmb));

        x += alpha * cmb.dx;
        y += alpha * cmb.dy;
        z += alpha * cmb.dz;
        s += alpha * cmb.ds;
        tau += alpha * cmb.dtau;
        kappa += alpha * cmb.dkappa;

        if (alpha < 1e-10) {
            if (converged(st.feastol_inacc, st.abstol_inacc, st.reltol_inacc))
                return finish(Status::Optimal, true);
            return fallback(Status::NumericalError);
        }
    }
}

} // namespace tsoc::conic
