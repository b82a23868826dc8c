#include "marginflow/dynamics.hpp"

#include <cmath>
#include <limits>

namespace mf {

// --- projectors ---------------------------------------------------------------

Vector SphereProjector::apply(const Vector& g) const {
    const double vv = v.squaredNorm();
    if (!(vv > 0.0)) throw DegenerateError("projector base point has zero norm");
    return g - v * (v.dot(g) / vv);
}

Matrix SphereProjector::dense() const {
    const double vv = v.squaredNorm();
    if (!(vv > 0.0)) throw DegenerateError("projector base point has zero norm");
    return Matrix::Identity(v.size(), v.size()) - (v * v.transpose()) / vv;
}

Vector tangent_project(const Vector& u, const Vector& g, double p, double kink_tol) {
    if (u.size() != g.size()) throw ShapeError("point and gradient dims differ");
    if (u.size() == 0) throw ShapeError("empty vectors");

    Vector nu(u.size());
    if (p == 2.0) {
        nu = u;
    } else if (p == 1.0) {
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            if (std::abs(u(i)) < kink_tol)
                throw KinkError("coordinate " + std::to_string(i) +
                                " sits on the L1 constraint corner");
            nu(i) = u(i) > 0.0 ? 1.0 : -1.0;
        }
    } else if (std::isinf(p)) {
        Eigen::Index top = 0;
        double best = -1.0, second = -1.0;
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            const double a = std::abs(u(i));
            if (a > best) {
                second = best;
                best = a;
                top = i;
            } else if (a > second) {
                second = a;
            }
        }
        if (u.size() > 1 && best - second < kink_tol)
            throw KinkError("max coordinate is tied; Linf normal is not unique");
        nu.setZero();
        nu(top) = u(top) > 0.0 ? 1.0 : -1.0;
    } else if (p > 1.0) {
        // Gradient of the p-norm: nu_i = sign(u_i) (|u_i| / ||u||_p)^(p-1).
        const double nrm = std::pow(u.array().abs().pow(p).sum(), 1.0 / p);
        if (!(nrm > 0.0)) throw DegenerateError("zero point has no p-norm normal");
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            const double scaled = std::abs(u(i)) / nrm;
            const double mag = std::pow(scaled, p - 1.0);
            nu(i) = u(i) >= 0.0 ? mag : -mag;
        }
    } else {
        throw DomainError("norm order must be 1, 2, a finite p > 1, or inf");
    }
    const double nn = nu.squaredNorm();
    if (!(nn > 0.0)) throw DegenerateError("vanishing constraint normal");
    return g - nu * (nu.dot(g) / nn);
}

double lagrange_alpha(const Vector& v, const Vector& g) {
    if (v.size() != g.size()) throw ShapeError("point and increment dims differ");
    if (std::abs(v.norm() - 1.0) > 1e-9) throw DomainError("base point must be unit norm");
    const double c = v.dot(g);
    const double radicand = 1.0 - g.squaredNorm() + c * c;
    if (radicand < 0.0)
        throw StepTooLargeError("increment reaches outside the unit sphere; shrink the step");
    return std::sqrt(radicand) - c;
}

// --- batch-norm core -----------------------------------------------------------

BnBatch bn_normalize(const Vector& z, double eps) {
    if (z.size() == 0) throw ShapeError("empty batch");
    if (!(eps >= 0.0)) throw DomainError("eps must be nonnegative");
    BnBatch b;
    b.sigma2 = z.squaredNorm() / static_cast<double>(z.size());
    if (std::sqrt(b.sigma2) < 1e-12) throw DegenerateError("batch second moment vanishes");
    b.inv_std = 1.0 / std::sqrt(b.sigma2 + eps);
    b.xhat = z * b.inv_std;
    return b;
}

Vector bn_apply(const Vector& z, const Vector& g, double eps) {
    if (g.size() != z.size()) throw ShapeError("batch and gradient dims differ");
    const BnBatch b = bn_normalize(z, eps);
    const double n = static_cast<double>(z.size());
    return b.inv_std * (g - b.xhat * (b.xhat.dot(g) / n));
}

Matrix bn_jacobian(const Vector& z, double eps) {
    const BnBatch b = bn_normalize(z, eps);
    const double n = static_cast<double>(z.size());
    return b.inv_std *
           (Matrix::Identity(z.size(), z.size()) - (b.xhat * b.xhat.transpose()) / n);
}

// --- shared batch machinery -----------------------------------------------------

namespace {

constexpr double kLogInvEps = 36.04365338911715;  // -log(machine epsilon)

struct LossWeights {
    Vector w;          // exp(e_n - shift)
    double shift;      // max exponent in shifted mode, 0 in raw mode
    double log_loss;   // log sum_n exp(e_n)
};

// e_n = -(scale * yf_n); shifted mode subtracts the max exponent so the
// support term has weight 1 and nothing overflows.
LossWeights loss_weights(const Vector& scaled_yf, bool shifted) {
    const Eigen::Index n = scaled_yf.size();
    Vector e = -scaled_yf;
    const double m = e.maxCoeff();
    LossWeights lw;
    lw.shift = shifted ? m : 0.0;
    lw.w.resize(n);
    double sum_shifted = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        lw.w(i) = std::exp(e(i) - lw.shift);
        sum_shifted += std::exp(e(i) - m);
    }
    lw.log_loss = m + std::log(sum_shifted);
    return lw;
}

// Batch accumulators over a layered net evaluated at its own weights:
// fv_n = f(x_n), A = sum w_n y_n fv_n, B_k = sum w_n y_n df/dW_k(x_n).
struct DirBatch {
    Vector fv;
    double A = 0.0;
    std::vector<Matrix> B;
    LossWeights lw;
};

DirBatch eval_dir_batch(const NetworkParams& net, const Dataset& data, double rho_scale,
                        bool shifted) {
    DirBatch batch;
    const int n = data.n();
    batch.fv.resize(n);
    for (int i = 0; i < n; ++i) batch.fv(i) = forward(net, data.x.row(i).transpose());
    Vector scaled = rho_scale * (data.y.array() * batch.fv.array()).matrix();
    batch.lw = loss_weights(scaled, shifted);

    batch.B.resize(net.depth());
    for (int k = 0; k < net.depth(); ++k) batch.B[k] = Matrix::Zero(net.w[k].rows(), net.w[k].cols());
    for (int i = 0; i < n; ++i) {
        const std::vector<Matrix> g = grad_weights(net, data.x.row(i).transpose());
        const double c = batch.lw.w(i) * data.y(i);
        for (int k = 0; k < net.depth(); ++k) batch.B[k] += c * g[k];
        batch.A += c * batch.fv(i);
    }
    return batch;
}

std::vector<std::pair<int, int>> layer_shapes(const std::vector<int>& dims) {
    std::vector<std::pair<int, int>> shapes;
    for (size_t k = 0; k + 1 < dims.size(); ++k) shapes.push_back({dims[k + 1], dims[k]});
    return shapes;
}

Eigen::Index layers_size(const std::vector<std::pair<int, int>>& shapes) {
    Eigen::Index total = 0;
    for (auto [r, c] : shapes) total += static_cast<Eigen::Index>(r) * c;
    return total;
}

void pack_layers(const std::vector<Matrix>& ms, Vector& s, Eigen::Index offset) {
    for (const Matrix& m : ms) {
        s.segment(offset, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
        offset += m.size();
    }
}

std::vector<Matrix> unpack_layers(const Vector& s, Eigen::Index offset,
                                  const std::vector<std::pair<int, int>>& shapes) {
    std::vector<Matrix> ms;
    ms.reserve(shapes.size());
    for (auto [r, c] : shapes) {
        ms.push_back(Eigen::Map<const Matrix>(s.data() + offset, r, c));
        offset += static_cast<Eigen::Index>(r) * c;
    }
    return ms;
}

Vector concat_unit_dirs(const std::vector<Matrix>& ws) {
    Eigen::Index total = 0;
    for (const Matrix& m : ws) total += m.size();
    Vector d(total);
    Eigen::Index off = 0;
    for (const Matrix& m : ws) {
        const double nrm = m.norm();
        if (!(nrm > 0.0)) throw DegenerateError("zero-norm layer in direction map");
        d.segment(off, m.size()) = Eigen::Map<const Vector>(m.data(), m.size()) / nrm;
        off += m.size();
    }
    d /= d.norm();
    return d;
}

double machine_rho_for(const Vector& yf) {
    const MarginInfo info = margin_and_support(yf, 1e-3);
    double gap = info.gap2;
    if (!std::isfinite(gap) || !(gap > 0.0)) gap = std::max(std::abs(info.margin), 1e-6);
    return kLogInvEps / gap;
}

}  // namespace

double stationarity_residual(const std::vector<Matrix>& dirs, double rho, const Dataset& data) {
    NetworkParams net{dirs};
    const DirBatch b = eval_dir_batch(net, data, rho, /*shifted=*/true);
    const double total = b.lw.w.sum();
    double worst = 0.0;
    for (int k = 0; k < net.depth(); ++k)
        worst = std::max(worst, (b.B[k] - b.A * dirs[k]).norm());
    return worst / total;
}

// --- flow implementations --------------------------------------------------------

std::vector<Matrix> Flow::unprojected_dir_gradient(const Vector&) const {
    throw DomainError("this flow kind has no norm-constrained direction blocks");
}

std::vector<Matrix> Flow::dir_blocks(const Vector&) const {
    throw DomainError("this flow kind has no norm-constrained direction blocks");
}

namespace {

// Gradient flow on raw weights W_k.
class UnconstrainedFlow final : public Flow {
public:
    UnconstrainedFlow(Dataset data, FlowKind kind, std::vector<int> dims)
        : Flow(std::move(data), kind), dims_(std::move(dims)), shapes_(layer_shapes(dims_)) {}

    Eigen::Index dim() const override { return layers_size(shapes_); }
    int depth() const override { return static_cast<int>(shapes_.size()); }

    Vector pack(const NetworkParams& p) override {
        p.validate();
        if (p.dims() != dims_) throw ShapeError("initial weights do not match flow dims");
        Vector s(dim());
        pack_layers(p.w, s, 0);
        return s;
    }

    void derivative(double, double, const Vector& s, Vector& ds, double* log_dt_dtau) const override {
        const NetworkParams net{unpack_layers(s, 0, shapes_)};
        const DirBatch b = eval_dir_batch(net, data_, 1.0, kind_.log_shift);
        ds.resize(dim());
        pack_layers(b.B, ds, 0);
        if (log_dt_dtau) *log_dt_dtau = -b.lw.shift;
    }

    Vector margins(const Vector& s) const override {
        const NetworkParams net{unpack_layers(s, 0, shapes_)};
        double rho = 1.0;
        for (const Matrix& m : net.w) rho *= m.norm();
        if (!(rho > 0.0)) throw DegenerateError("zero-norm layer");
        return mf::margins(net, data_) / rho;
    }

    double rho_product(const Vector& s) const override {
        double rho = 1.0;
        for (const Matrix& m : unpack_layers(s, 0, shapes_)) rho *= m.norm();
        return rho;
    }

    Observables observe(double, double, const Vector& s) const override {
        const NetworkParams net{unpack_layers(s, 0, shapes_)};
        const DirBatch b = eval_dir_batch(net, data_, 1.0, kind_.log_shift);
        const NormalizedParams polar = decompose(net);
        Observables obs;
        obs.log_loss = b.lw.log_loss;
        obs.yf = (data_.y.array() * b.fv.array()).matrix() / polar.rho_product();
        obs.rho = polar.rho;
        obs.drho2dt.resize(depth());
        for (int k = 0; k < depth(); ++k)
            obs.drho2dt(k) = 2.0 * net.w[k].cwiseProduct(b.B[k]).sum();
        obs.stationarity = stationarity_residual(polar.dir, polar.rho_product(), data_);
        return obs;
    }

    Vector direction(const Vector& s) const override {
        return concat_unit_dirs(unpack_layers(s, 0, shapes_));
    }

private:
    std::vector<int> dims_;
    std::vector<std::pair<int, int>> shapes_;
};

// Polar-coordinate flows over (rho_k, V_k): the constrained fixed-scale flow
// (no rho block), the coupled constrained flow, and plain gradient flow
// rewritten in polar coordinates.
class PolarFlow final : public Flow {
public:
    PolarFlow(Dataset data, FlowKind kind, std::vector<int> dims)
        : Flow(std::move(data), kind),
          dims_(std::move(dims)),
          shapes_(layer_shapes(dims_)),
          has_rho_block_(kind.tag != FlowKindTag::ConstrainedFixedRho),
          fixed_rho_(kind.rho) {}

    Eigen::Index dim() const override {
        return (has_rho_block_ ? depth() : 0) + layers_size(shapes_);
    }
    int depth() const override { return static_cast<int>(shapes_.size()); }

    Vector pack(const NetworkParams& p) override {
        p.validate();
        if (p.dims() != dims_) throw ShapeError("initial weights do not match flow dims");
        const NormalizedParams polar = decompose(p);
        Vector s(dim());
        Eigen::Index off = 0;
        if (has_rho_block_) {
            s.head(depth()) = polar.rho;
            off = depth();
        }
        pack_layers(polar.dir, s, off);
        if (!has_rho_block_ && kind_.machine_rho) {
            fixed_rho_ = machine_rho_for(dir_margins(polar.dir));
            kind_.rho = fixed_rho_;
        }
        return s;
    }

    void derivative(double, double, const Vector& s, Vector& ds, double* log_dt_dtau) const override {
        const std::vector<Matrix> dirs = unpack_layers(s, rho_offset(), shapes_);
        const Vector rho = rho_of(s);
        const double rho_prod = rho.prod();
        const NetworkParams net{dirs};
        const DirBatch b = eval_dir_batch(net, data_, rho_prod, kind_.log_shift);

        ds.resize(dim());
        std::vector<Matrix> dv(depth());
        for (int k = 0; k < depth(); ++k) {
            switch (kind_.tag) {
                case FlowKindTag::ConstrainedFixedRho:
                case FlowKindTag::FullLagrange:
                    // Tangent projection applied to the accumulated gradient.
                    dv[k] = rho_prod * (b.B[k] - dirs[k] * dirs[k].cwiseProduct(b.B[k]).sum());
                    break;
                case FlowKindTag::Reparameterized:
                    // Same tangent field via the layer identity <V_k, df/dV_k> = f.
                    dv[k] = (rho_prod / (rho(k) * rho(k))) * (b.B[k] - b.A * dirs[k]);
                    break;
                default:
                    throw DomainError("unreachable polar kind");
            }
        }
        if (has_rho_block_)
            for (int k = 0; k < depth(); ++k) ds(k) = (rho_prod / rho(k)) * b.A;
        pack_layers(dv, ds, rho_offset());
        if (log_dt_dtau) *log_dt_dtau = -b.lw.shift;
    }

    void renormalize(Vector& s) const override {
        Eigen::Index off = rho_offset();
        for (auto [r, c] : shapes_) {
            const Eigen::Index sz = static_cast<Eigen::Index>(r) * c;
            const double nrm = s.segment(off, sz).norm();
            if (nrm > 0.0) s.segment(off, sz) /= nrm;
            off += sz;
        }
    }

    Vector margins(const Vector& s) const override {
        return dir_margins(unpack_layers(s, rho_offset(), shapes_));
    }

    double rho_product(const Vector& s) const override { return rho_of(s).prod(); }

    Observables observe(double, double, const Vector& s) const override {
        const std::vector<Matrix> dirs = unpack_layers(s, rho_offset(), shapes_);
        const Vector rho = rho_of(s);
        const double rho_prod = rho.prod();
        const NetworkParams net{dirs};
        const DirBatch b = eval_dir_batch(net, data_, rho_prod, kind_.log_shift);

        Observables obs;
        obs.log_loss = b.lw.log_loss;
        obs.yf = (data_.y.array() * b.fv.array()).matrix();
        obs.rho.resize(depth());
        obs.drho2dt.resize(depth());
        if (has_rho_block_) {
            obs.rho = rho;
            for (int k = 0; k < depth(); ++k)
                obs.drho2dt(k) = 2.0 * rho(k) * (rho_prod / rho(k)) * b.A;
        } else {
            // The state carries unit directions; the scale is the fixed
            // parameter and layer norms are conserved.
            for (int k = 0; k < depth(); ++k) {
                obs.rho(k) = dirs[k].norm();
                const Matrix dv =
                    rho_prod * (b.B[k] - dirs[k] * dirs[k].cwiseProduct(b.B[k]).sum());
                obs.drho2dt(k) = 2.0 * dirs[k].cwiseProduct(dv).sum();
            }
        }
        obs.stationarity = stationarity_residual(dirs, rho_prod, data_);
        return obs;
    }

    Vector direction(const Vector& s) const override {
        return concat_unit_dirs(unpack_layers(s, rho_offset(), shapes_));
    }

    std::vector<Matrix> unprojected_dir_gradient(const Vector& s) const override {
        if (kind_.tag == FlowKindTag::Reparameterized)
            return Flow::unprojected_dir_gradient(s);
        const std::vector<Matrix> dirs = unpack_layers(s, rho_offset(), shapes_);
        const double rho_prod = rho_of(s).prod();
        const DirBatch b = eval_dir_batch(NetworkParams{dirs}, data_, rho_prod, kind_.log_shift);
        std::vector<Matrix> g(depth());
        for (int k = 0; k < depth(); ++k) g[k] = rho_prod * b.B[k];
        return g;
    }

    std::vector<Matrix> dir_blocks(const Vector& s) const override {
        if (kind_.tag == FlowKindTag::Reparameterized) return Flow::dir_blocks(s);
        return unpack_layers(s, rho_offset(), shapes_);
    }

private:
    Eigen::Index rho_offset() const { return has_rho_block_ ? depth() : 0; }

    Vector rho_of(const Vector& s) const {
        if (has_rho_block_) return s.head(depth());
        return Vector::Constant(depth(), std::pow(fixed_rho_, 1.0 / depth()));
    }

    Vector dir_margins(const std::vector<Matrix>& dirs) const {
        return mf::margins(NetworkParams{dirs}, data_);
    }

    std::vector<int> dims_;
    std::vector<std::pair<int, int>> shapes_;
    bool has_rho_block_;
    double fixed_rho_;
};

// Flow over (g_k, v_k) with w_k = g_k v_k / ||v_k||. The chain rule applied
// to the raw-weight field W'_k gives
//   g'_k = <v_k, W'_k> / ||v_k||,
//   v'_k = (g_k / ||v_k||) (W'_k - v_k <v_k, W'_k> / ||v_k||^2).
// State layout: [g_1..g_K, v_1 flat, ..., v_K flat].
class WeightNormFlow final : public Flow {
public:
    WeightNormFlow(Dataset data, FlowKind kind, std::vector<int> dims)
        : Flow(std::move(data), kind), dims_(std::move(dims)), shapes_(layer_shapes(dims_)) {}

    Eigen::Index dim() const override { return depth() + layers_size(shapes_); }
    int depth() const override { return static_cast<int>(shapes_.size()); }

    Vector pack(const NetworkParams& p) override {
        p.validate();
        if (p.dims() != dims_) throw ShapeError("initial weights do not match flow dims");
        const NormalizedParams polar = decompose(p);
        Vector s(dim());
        s.head(depth()) = polar.rho;
        pack_layers(polar.dir, s, depth());
        return s;
    }

    void derivative(double, double, const Vector& s, Vector& ds, double* log_dt_dtau) const override {
        const std::vector<Matrix> v = unpack_layers(s, depth(), shapes_);
        const Vector g = s.head(depth());
        NetworkParams net;
        net.w.resize(depth());
        std::vector<double> vnorm(depth());
        for (int k = 0; k < depth(); ++k) {
            vnorm[k] = v[k].norm();
            if (!(vnorm[k] > 0.0)) throw DegenerateError("zero-norm carrier vector");
            net.w[k] = (g(k) / vnorm[k]) * v[k];
        }
        const DirBatch b = eval_dir_batch(net, data_, 1.0, kind_.log_shift);

        ds.resize(dim());
        std::vector<Matrix> dv(depth());
        for (int k = 0; k < depth(); ++k) {
            const double inner = v[k].cwiseProduct(b.B[k]).sum() / vnorm[k];
            ds(k) = inner;
            dv[k] = (g(k) / vnorm[k]) * (b.B[k] - (inner / vnorm[k]) * v[k]);
        }
        pack_layers(dv, ds, depth());
        if (log_dt_dtau) *log_dt_dtau = -b.lw.shift;
    }

    void renormalize(Vector& s) const override {
        Eigen::Index off = depth();
        for (auto [r, c] : shapes_) {
            const Eigen::Index sz = static_cast<Eigen::Index>(r) * c;
            const double nrm = s.segment(off, sz).norm();
            if (nrm > 0.0) s.segment(off, sz) /= nrm;
            off += sz;
        }
    }

    Vector margins(const Vector& s) const override {
        const NetworkParams net = materialize(s);
        double rho = 1.0;
        for (int k = 0; k < depth(); ++k) rho *= std::abs(s(k));
        if (!(rho > 0.0)) throw DegenerateError("zero gain");
        return mf::margins(net, data_) / rho;
    }

    double rho_product(const Vector& s) const override {
        double rho = 1.0;
        for (int k = 0; k < depth(); ++k) rho *= std::abs(s(k));
        return rho;
    }

    Observables observe(double, double, const Vector& s) const override {
        const NetworkParams net = materialize(s);
        const DirBatch b = eval_dir_batch(net, data_, 1.0, kind_.log_shift);
        const NormalizedParams polar = decompose(net);
        Observables obs;
        obs.log_loss = b.lw.log_loss;
        obs.yf = (data_.y.array() * b.fv.array()).matrix() / polar.rho_product();
        obs.rho = polar.rho;
        obs.drho2dt.resize(depth());
        const std::vector<Matrix> v = unpack_layers(s, depth(), shapes_);
        for (int k = 0; k < depth(); ++k) {
            const double inner = v[k].cwiseProduct(b.B[k]).sum() / v[k].norm();
            obs.drho2dt(k) = 2.0 * s(k) * inner;
        }
        obs.stationarity = stationarity_residual(polar.dir, polar.rho_product(), data_);
        return obs;
    }

    Vector direction(const Vector& s) const override {
        return concat_unit_dirs(materialize(s).w);
    }

    // Gradient on the carrier blocks before removing the radial component:
    // (g_k / ||v_k||) W'_k.
    std::vector<Matrix> unprojected_dir_gradient(const Vector& s) const override {
        const NetworkParams net = materialize(s);
        const DirBatch b = eval_dir_batch(net, data_, 1.0, kind_.log_shift);
        const std::vector<Matrix> v = unpack_layers(s, depth(), shapes_);
        std::vector<Matrix> out(depth());
        for (int k = 0; k < depth(); ++k) out[k] = (s(k) / v[k].norm()) * b.B[k];
        return out;
    }

    std::vector<Matrix> dir_blocks(const Vector& s) const override {
        return unpack_layers(s, depth(), shapes_);
    }

private:
    NetworkParams materialize(const Vector& s) const {
        const std::vector<Matrix> v = unpack_layers(s, depth(), shapes_);
        NetworkParams net;
        net.w.resize(depth());
        for (int k = 0; k < depth(); ++k) {
            const double nrm = v[k].norm();
            if (!(nrm > 0.0)) throw DegenerateError("zero-norm carrier vector");
            net.w[k] = (s(k) / nrm) * v[k];
        }
        return net;
    }

    std::vector<int> dims_;
    std::vector<std::pair<int, int>> shapes_;
};

// Direction flow of a single linear unit on the unit-p-norm sphere:
// u' = tangent_project(u, rho * sum_n w_n y_n x_n, p).
class TangentLpFlow final : public Flow {
public:
    TangentLpFlow(Dataset data, FlowKind kind)
        : Flow(std::move(data), kind), fixed_rho_(kind.rho) {}

    Eigen::Index dim() const override { return data_.dim(); }
    int depth() const override { return 1; }

    Vector pack(const NetworkParams& p) override {
        p.validate();
        if (p.depth() != 1 || p.w[0].rows() != 1 || p.w[0].cols() != data_.dim())
            throw ShapeError("flow needs a single 1 x d layer");
        Vector u = p.w[0].row(0).transpose();
        const double nrm = lp_norm(u);
        if (!(nrm > 0.0)) throw DegenerateError("zero initial direction");
        u /= nrm;
        if (kind_.machine_rho) {
            fixed_rho_ = machine_rho_for((data_.y.array() * (data_.x * u).array()).matrix());
            kind_.rho = fixed_rho_;
        }
        return u;
    }

    void derivative(double, double, const Vector& s, Vector& ds, double* log_dt_dtau) const override {
        const Vector resp = data_.x * s;
        const LossWeights lw =
            loss_weights(fixed_rho_ * (data_.y.array() * resp.array()).matrix(), kind_.log_shift);
        const Vector grad = data_.x.transpose() * (fixed_rho_ * lw.w.cwiseProduct(data_.y));
        ds = tangent_project(s, grad, kind_.p);
        if (log_dt_dtau) *log_dt_dtau = -lw.shift;
    }

    void renormalize(Vector& s) const override {
        const double nrm = lp_norm(s);
        if (nrm > 0.0) s /= nrm;
    }

    Vector margins(const Vector& s) const override {
        return (data_.y.array() * (data_.x * s).array()).matrix();
    }

    double rho_product(const Vector&) const override { return fixed_rho_; }

    Observables observe(double, double, const Vector& s) const override {
        const Vector resp = data_.x * s;
        const LossWeights lw =
            loss_weights(fixed_rho_ * (data_.y.array() * resp.array()).matrix(), kind_.log_shift);
        Observables obs;
        obs.log_loss = lw.log_loss;
        obs.yf = (data_.y.array() * resp.array()).matrix();
        obs.rho = Vector::Constant(1, lp_norm(s));  // constrained norm, drift diagnostic
        Vector ds;
        const Vector grad = data_.x.transpose() * (fixed_rho_ * lw.w.cwiseProduct(data_.y));
        ds = tangent_project(s, grad, kind_.p);
        obs.drho2dt = Vector::Constant(1, 2.0 * s.dot(ds));
        obs.stationarity = ds.norm() / (fixed_rho_ * lw.w.sum());
        return obs;
    }

    Vector direction(const Vector& s) const override { return s / s.norm(); }

private:
    double lp_norm(const Vector& u) const {
        if (kind_.p == 2.0) return u.norm();
        if (kind_.p == 1.0) return u.lpNorm<1>();
        if (std::isinf(kind_.p)) return u.lpNorm<Eigen::Infinity>();
        return std::pow(u.array().abs().pow(kind_.p).sum(), 1.0 / kind_.p);
    }

    double fixed_rho_;
};

// Linear-unit (rho, v) flow with the loss exponent rescaled by a time
// schedule alpha(t):
//   rho' = alpha(t) sum_n w_n y_n <v, x_n>,
//   v'   = (alpha(t) / rho) sum_n w_n y_n (x_n - v <v, x_n>),
// with w_n = exp(-alpha(t) rho y_n <v, x_n>). At alpha == 1 this is plain
// gradient flow in polar coordinates. State layout: [rho, v].
class RescaledAlphaFlow final : public Flow {
public:
    RescaledAlphaFlow(Dataset data, FlowKind kind) : Flow(std::move(data), kind) {}

    Eigen::Index dim() const override { return 1 + data_.dim(); }
    int depth() const override { return 1; }

    Vector pack(const NetworkParams& p) override {
        p.validate();
        if (p.depth() != 1 || p.w[0].rows() != 1 || p.w[0].cols() != data_.dim())
            throw ShapeError("flow needs a single 1 x d layer");
        const Vector w = p.w[0].row(0).transpose();
        const double nrm = w.norm();
        if (!(nrm > 0.0)) throw DegenerateError("zero initial direction");
        Vector s(dim());
        s(0) = nrm;
        s.tail(data_.dim()) = w / nrm;
        return s;
    }

    void derivative(double, double t_flow, const Vector& s, Vector& ds,
                    double* log_dt_dtau) const override {
        const double alpha = alpha_value(kind_.schedule, t_flow);
        const double rho = s(0);
        if (!(rho > 0.0)) throw DegenerateError("scale reached zero");
        const Vector v = s.tail(data_.dim());
        const Vector resp = data_.x * v;
        const LossWeights lw = loss_weights(
            alpha * rho * (data_.y.array() * resp.array()).matrix(), kind_.log_shift);
        const Vector wy = lw.w.cwiseProduct(data_.y);
        const Vector grad = data_.x.transpose() * wy;   // sum_n w_n y_n x_n
        const double a = wy.dot(resp);                  // sum_n w_n y_n <v, x_n>
        ds.resize(dim());
        ds(0) = alpha * a;
        ds.tail(data_.dim()) = (alpha / rho) * (grad - a * v);
        if (log_dt_dtau) *log_dt_dtau = -lw.shift;
    }

    void renormalize(Vector& s) const override {
        const double nrm = s.tail(data_.dim()).norm();
        if (nrm > 0.0) s.tail(data_.dim()) /= nrm;
    }

    Vector margins(const Vector& s) const override {
        return (data_.y.array() * (data_.x * s.tail(data_.dim())).array()).matrix();
    }

    double rho_product(const Vector& s) const override { return s(0); }

    double exponent_scale(double t_flow, const Vector& s) const override {
        return alpha_value(kind_.schedule, t_flow) * s(0);
    }

    Observables observe(double, double t_flow, const Vector& s) const override {
        const double alpha = alpha_value(kind_.schedule, t_flow);
        const double rho = s(0);
        const Vector v = s.tail(data_.dim());
        const Vector resp = data_.x * v;
        const LossWeights lw = loss_weights(
            alpha * rho * (data_.y.array() * resp.array()).matrix(), kind_.log_shift);
        const Vector wy = lw.w.cwiseProduct(data_.y);
        const double a = wy.dot(resp);
        Observables obs;
        obs.log_loss = lw.log_loss;
        obs.yf = (data_.y.array() * resp.array()).matrix();
        obs.rho = Vector::Constant(1, rho);
        obs.drho2dt = Vector::Constant(1, 2.0 * rho * alpha * a);
        obs.stationarity =
            (data_.x.transpose() * wy - a * v).norm() / lw.w.sum();
        return obs;
    }

    Vector direction(const Vector& s) const override {
        Vector v = s.tail(data_.dim());
        return v / v.norm();
    }
};

// Exact gradient flow of w for a linear unit read through the reduced batch
// normalizer: with z = X w, zhat = z / sqrt(mean(z^2) + eps),
// L = sum_n exp(-rho y_n zhat_n), the field is
//   w' = X^T J (rho y . w)  with  J = (sigma^2+eps)^{-1/2} (I - zhat zhat^T / n).
class BatchNormFlow final : public Flow {
public:
    BatchNormFlow(Dataset data, FlowKind kind)
        : Flow(std::move(data), kind), fixed_rho_(kind.rho) {}

    Eigen::Index dim() const override { return data_.dim(); }
    int depth() const override { return 1; }

    Vector pack(const NetworkParams& p) override {
        p.validate();
        if (p.depth() != 1 || p.w[0].rows() != 1 || p.w[0].cols() != data_.dim())
            throw ShapeError("flow needs a single 1 x d layer");
        Vector w = p.w[0].row(0).transpose();
        if (!(w.norm() > 0.0)) throw DegenerateError("zero initial weights");
        if (kind_.machine_rho) {
            const BnBatch b = bn_normalize(data_.x * w, kind_.bn_eps);
            fixed_rho_ = machine_rho_for((data_.y.array() * b.xhat.array()).matrix());
            kind_.rho = fixed_rho_;
        }
        return w;
    }

    void derivative(double, double, const Vector& s, Vector& ds, double* log_dt_dtau) const override {
        const Vector z = data_.x * s;
        const BnBatch b = bn_normalize(z, kind_.bn_eps);
        const LossWeights lw = loss_weights(
            fixed_rho_ * (data_.y.array() * b.xhat.array()).matrix(), kind_.log_shift);
        const Vector u = fixed_rho_ * lw.w.cwiseProduct(data_.y);
        const double n = static_cast<double>(data_.n());
        const Vector ju = b.inv_std * (u - b.xhat * (b.xhat.dot(u) / n));
        ds = data_.x.transpose() * ju;
        if (log_dt_dtau) *log_dt_dtau = -lw.shift;
    }

    void renormalize(Vector& s) const override {
        // The normalized response is scale-free in w; pulling w back to unit
        // norm only reparameterizes time.
        const double nrm = s.norm();
        if (nrm > 0.0) s /= nrm;
    }

    Vector margins(const Vector& s) const override {
        const BnBatch b = bn_normalize(data_.x * s, kind_.bn_eps);
        return (data_.y.array() * b.xhat.array()).matrix();
    }

    double rho_product(const Vector&) const override { return fixed_rho_; }

    Observables observe(double, double, const Vector& s) const override {
        const Vector z = data_.x * s;
        const BnBatch b = bn_normalize(z, kind_.bn_eps);
        const LossWeights lw = loss_weights(
            fixed_rho_ * (data_.y.array() * b.xhat.array()).matrix(), kind_.log_shift);
        const Vector u = fixed_rho_ * lw.w.cwiseProduct(data_.y);
        const double n = static_cast<double>(data_.n());
        const Vector ju = b.inv_std * (u - b.xhat * (b.xhat.dot(u) / n));
        const Vector field = data_.x.transpose() * ju;
        Observables obs;
        obs.log_loss = lw.log_loss;
        obs.yf = (data_.y.array() * b.xhat.array()).matrix();
        obs.rho = Vector::Constant(1, s.norm());
        obs.drho2dt = Vector::Constant(1, 2.0 * s.dot(field));
        obs.stationarity = field.norm() / (fixed_rho_ * lw.w.sum());
        return obs;
    }

    Vector direction(const Vector& s) const override { return s / s.norm(); }

private:
    double fixed_rho_;
};

}  // namespace

// --- factory and schedule helpers -------------------------------------------------

double alpha_value(AlphaSchedule s, double t) {
    switch (s) {
        case AlphaSchedule::One:
            return 1.0;
        case AlphaSchedule::InvLogT:
            if (!(t > 1.0)) throw DomainError("inverse-log schedule needs t > 1");
            return 1.0 / std::log(t);
        case AlphaSchedule::LogT:
            if (!(t > 1.0)) throw DomainError("log schedule needs t > 1");
            return std::log(t);
        case AlphaSchedule::LogLogT:
            if (!(t > 2.718281828459045)) throw DomainError("log-log schedule needs t > e");
            return std::log(std::log(t));
        case AlphaSchedule::ExpT:
            if (t > 700.0) throw DomainError("exp schedule overflows past t = 700");
            return std::exp(t);
        case AlphaSchedule::LinearT:
            if (!(t > 0.0)) throw DomainError("linear schedule needs t > 0");
            return t;
    }
    throw DomainError("unknown schedule");
}

FlowKindTag flow_tag_from_string(const std::string& s) {
    if (s == "unconstrained") return FlowKindTag::Unconstrained;
    if (s == "constrained_fixed_rho") return FlowKindTag::ConstrainedFixedRho;
    if (s == "full_lagrange") return FlowKindTag::FullLagrange;
    if (s == "reparameterized") return FlowKindTag::Reparameterized;
    if (s == "weight_norm") return FlowKindTag::WeightNorm;
    if (s == "batch_norm_core") return FlowKindTag::BatchNormCore;
    if (s == "tangent_lp") return FlowKindTag::TangentLp;
    if (s == "rescaled_alpha") return FlowKindTag::RescaledAlpha;
    throw ConfigError("unknown flow kind: " + s);
}

std::string to_string(FlowKindTag tag) {
    switch (tag) {
        case FlowKindTag::Unconstrained: return "unconstrained";
        case FlowKindTag::ConstrainedFixedRho: return "constrained_fixed_rho";
        case FlowKindTag::FullLagrange: return "full_lagrange";
        case FlowKindTag::Reparameterized: return "reparameterized";
        case FlowKindTag::WeightNorm: return "weight_norm";
        case FlowKindTag::BatchNormCore: return "batch_norm_core";
        case FlowKindTag::TangentLp: return "tangent_lp";
        case FlowKindTag::RescaledAlpha: return "rescaled_alpha";
    }
    throw DomainError("unknown flow kind tag");
}

AlphaSchedule alpha_schedule_from_string(const std::string& s) {
    if (s == "one") return AlphaSchedule::One;
    if (s == "inv_log_t") return AlphaSchedule::InvLogT;
    if (s == "log_t") return AlphaSchedule::LogT;
    if (s == "log_log_t") return AlphaSchedule::LogLogT;
    if (s == "exp_t") return AlphaSchedule::ExpT;
    if (s == "linear_t") return AlphaSchedule::LinearT;
    throw ConfigError("unknown alpha schedule: " + s);
}

std::string to_string(AlphaSchedule s) {
    switch (s) {
        case AlphaSchedule::One: return "one";
        case AlphaSchedule::InvLogT: return "inv_log_t";
        case AlphaSchedule::LogT: return "log_t";
        case AlphaSchedule::LogLogT: return "log_log_t";
        case AlphaSchedule::ExpT: return "exp_t";
        case AlphaSchedule::LinearT: return "linear_t";
    }
    throw DomainError("unknown alpha schedule");
}

std::unique_ptr<Flow> make_flow(const FlowKind& kind, const Dataset& data,
                                const std::vector<int>& dims) {
    data.validate();
    if (dims.size() < 2) throw ConfigError("dims must list at least input and output widths");
    if (dims.front() != data.dim())
        throw ShapeError("first width must equal the data dimension");
    if (dims.back() != 1) throw ShapeError("last width must be 1 (scalar output)");
    for (int w : dims)
        if (w <= 0) throw ConfigError("widths must be positive");
    if (!(kind.rho > 0.0)) throw ConfigError("scale rho must be positive");
    if (!(kind.bn_eps >= 0.0)) throw ConfigError("bn_eps must be nonnegative");
    if (kind.machine_rho && kind.tag != FlowKindTag::ConstrainedFixedRho &&
        kind.tag != FlowKindTag::TangentLp && kind.tag != FlowKindTag::BatchNormCore)
        throw ConfigError("machine_rho needs a fixed-scale flow kind");

    const bool single = dims.size() == 2;
    switch (kind.tag) {
        case FlowKindTag::Unconstrained:
            return std::make_unique<UnconstrainedFlow>(data, kind, dims);
        case FlowKindTag::ConstrainedFixedRho:
        case FlowKindTag::FullLagrange:
        case FlowKindTag::Reparameterized:
            return std::make_unique<PolarFlow>(data, kind, dims);
        case FlowKindTag::WeightNorm:
            return std::make_unique<WeightNormFlow>(data, kind, dims);
        case FlowKindTag::BatchNormCore:
            if (!single) throw ConfigError("batch_norm_core needs dims [d, 1]");
            return std::make_unique<BatchNormFlow>(data, kind);
        case FlowKindTag::TangentLp:
            if (!single) throw ConfigError("tangent_lp needs dims [d, 1]");
            if (kind.p != 1.0 && !(kind.p > 1.0))
                throw ConfigError("norm order must be 1, 2, a finite p > 1, or inf");
            return std::make_unique<TangentLpFlow>(data, kind);
        case FlowKindTag::RescaledAlpha:
            if (!single) throw ConfigError("rescaled_alpha needs dims [d, 1]");
            return std::make_unique<RescaledAlphaFlow>(data, kind);
    }
    throw ConfigError("unknown flow kind");
}

}  // namespace mf
