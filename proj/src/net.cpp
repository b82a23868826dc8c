#include "marginflow/net.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mf {

namespace {

std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

}  // namespace

void Dataset::validate() const {
    if (x.rows() == 0 || x.cols() == 0) throw DegenerateError("dataset is empty");
    if (y.size() != x.rows())
        throw ShapeError("dataset has " + std::to_string(x.rows()) + " rows but " +
                         std::to_string(y.size()) + " labels");
    if (!x.allFinite() || !y.allFinite()) throw DomainError("dataset contains non-finite values");
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y(i) != 1.0 && y(i) != -1.0)
            throw DomainError("label at row " + std::to_string(i) + " is not +1 or -1");
    }
}

std::vector<int> NetworkParams::dims() const {
    std::vector<int> d;
    if (w.empty()) return d;
    d.push_back(static_cast<int>(w.front().cols()));
    for (const Matrix& m : w) d.push_back(static_cast<int>(m.rows()));
    return d;
}

void NetworkParams::validate() const {
    if (w.empty()) throw ShapeError("network has no layers");
    for (size_t k = 0; k + 1 < w.size(); ++k) {
        if (w[k + 1].cols() != w[k].rows())
            throw ShapeError("layer " + std::to_string(k + 1) + " expects " +
                             std::to_string(w[k].rows()) + " inputs, got weight shape " +
                             shape_str(w[k + 1]));
    }
    if (w.back().rows() != 1)
        throw ShapeError("output layer must have one row, got " + shape_str(w.back()));
    for (const Matrix& m : w)
        if (!m.allFinite()) throw DomainError("weights contain non-finite values");
}

double NormalizedParams::rho_product() const {
    double p = 1.0;
    for (Eigen::Index k = 0; k < rho.size(); ++k) p *= rho(k);
    return p;
}

void NormalizedParams::validate(double tol) const {
    if (dir.empty() || rho.size() != static_cast<Eigen::Index>(dir.size()))
        throw ShapeError("normalized params need one rho per direction matrix");
    for (Eigen::Index k = 0; k < rho.size(); ++k) {
        if (!(rho(k) > 0.0)) throw DomainError("rho_" + std::to_string(k) + " must be positive");
        const double nrm = dir[k].norm();
        if (std::abs(nrm - 1.0) > tol)
            throw DomainError("dir_" + std::to_string(k) + " has Frobenius norm " +
                              std::to_string(nrm) + ", expected 1");
    }
    NetworkParams{dir}.validate();
}

double forward(const NetworkParams& p, const Vector& x, std::vector<Vector>* preacts) {
    if (x.size() != p.in_dim())
        throw ShapeError("input has dim " + std::to_string(x.size()) + ", network expects " +
                         std::to_string(p.in_dim()));
    if (preacts) preacts->clear();
    Vector a = x;
    const int K = p.depth();
    for (int k = 0; k < K - 1; ++k) {
        Vector z = p.w[k] * a;
        if (preacts) preacts->push_back(z);
        a = z.cwiseMax(0.0);
    }
    return (p.w[K - 1] * a)(0);
}

std::vector<Matrix> grad_weights(const NetworkParams& p, const Vector& x) {
    const int K = p.depth();
    if (x.size() != p.in_dim())
        throw ShapeError("input has dim " + std::to_string(x.size()) + ", network expects " +
                         std::to_string(p.in_dim()));

    // Forward pass keeping activations a_0..a_{K-1} and hidden pre-activations.
    std::vector<Vector> acts(K);
    std::vector<Vector> zs(K - 1);
    acts[0] = x;
    for (int k = 0; k < K - 1; ++k) {
        zs[k] = p.w[k] * acts[k];
        acts[k + 1] = zs[k].cwiseMax(0.0);
    }

    std::vector<Matrix> g(K);
    // delta_k = df/dz_k, seeded by the scalar output.
    Vector delta = Vector::Ones(1);
    for (int k = K - 1; k >= 0; --k) {
        g[k] = delta * acts[k].transpose();
        if (k > 0) {
            Vector back = p.w[k].transpose() * delta;
            delta = (zs[k - 1].array() > 0.0).select(back.array(), 0.0).matrix();
        }
    }
    return g;
}

Vector structural_residual(const NetworkParams& p, const Vector& x) {
    const double f = forward(p, x);
    const std::vector<Matrix> g = grad_weights(p, x);
    Vector r(p.depth());
    for (int k = 0; k < p.depth(); ++k)
        r(k) = std::abs(p.w[k].cwiseProduct(g[k]).sum() - f);
    return r;
}

double min_abs_preactivation(const NetworkParams& p, const Vector& x) {
    std::vector<Vector> zs;
    forward(p, x, &zs);
    double m = std::numeric_limits<double>::infinity();
    for (const Vector& z : zs)
        for (Eigen::Index i = 0; i < z.size(); ++i) m = std::min(m, std::abs(z(i)));
    return m;
}

double homogeneity_hessian_residual(const NetworkParams& p, const Vector& x, int k, double h) {
    if (k < 0 || k >= p.depth()) throw DomainError("layer index out of range");
    if (!(h > 0.0)) throw DomainError("scaling step must be positive");

    auto scaled = [&](double s) {
        NetworkParams q = p;
        q.w[k] *= s;
        return q;
    };
    // Scaling one layer by a positive factor must not change any activation
    // sign pattern; if it does, the point sits across a kink.
    std::vector<Vector> z0, zp, zm;
    forward(p, x, &z0);
    const NetworkParams pp = scaled(1.0 + h);
    const NetworkParams pm = scaled(1.0 - h);
    forward(pp, x, &zp);
    forward(pm, x, &zm);
    for (size_t l = 0; l < z0.size(); ++l)
        for (Eigen::Index i = 0; i < z0[l].size(); ++i) {
            const bool s0 = z0[l](i) > 0.0, sp = zp[l](i) > 0.0, sm = zm[l](i) > 0.0;
            if (s0 != sp || s0 != sm)
                throw KinkError("layer scaling crosses an activation boundary");
        }

    const std::vector<Matrix> gp = grad_weights(pp, x);
    const std::vector<Matrix> gm = grad_weights(pm, x);
    return (gp[k] - gm[k]).norm() / (2.0 * h);
}

NormalizedParams decompose(const NetworkParams& p) {
    p.validate();
    NormalizedParams q;
    q.rho.resize(p.depth());
    q.dir.resize(p.depth());
    for (int k = 0; k < p.depth(); ++k) {
        const double nrm = p.w[k].norm();
        if (!(nrm > 0.0)) throw DegenerateError("layer " + std::to_string(k) + " has zero norm");
        q.rho(k) = nrm;
        q.dir[k] = p.w[k] / nrm;
    }
    return q;
}

NetworkParams compose(const NormalizedParams& q) {
    q.validate(1e-9);
    NetworkParams p;
    p.w.resize(q.depth());
    for (int k = 0; k < q.depth(); ++k) p.w[k] = q.rho(k) * q.dir[k];
    return p;
}

NetworkParams dirs_net(const NormalizedParams& q) { return NetworkParams{q.dir}; }

MarginInfo margin_and_support(const Vector& yf, double tol_sv) {
    if (yf.size() == 0) throw DegenerateError("no samples");
    if (!(tol_sv >= 0.0)) throw DomainError("tol_sv must be nonnegative");
    MarginInfo info;
    info.yf = yf;
    info.margin = yf.minCoeff();
    const double band = info.margin + tol_sv * (std::abs(info.margin) + 1.0);
    double second = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < yf.size(); ++i) {
        if (yf(i) <= band)
            info.support.push_back(static_cast<int>(i));
        else
            second = std::min(second, yf(i));
    }
    info.gap2 = second - info.margin;
    return info;
}

double dominance_gap(const Vector& yf, double rho) {
    if (yf.size() == 0) throw DegenerateError("no samples");
    const double m = yf.minCoeff();
    const double band = rho > 0.0 ? std::log(10.0) / rho : 0.0;
    double outside = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < yf.size(); ++i)
        if (yf(i) - m > band) outside = std::min(outside, yf(i));
    return outside - m;
}

Vector margins(const NetworkParams& p, const Dataset& data) {
    if (data.dim() != p.in_dim())
        throw ShapeError("dataset dim " + std::to_string(data.dim()) + " != network input dim " +
                         std::to_string(p.in_dim()));
    Vector yf(data.n());
    for (int i = 0; i < data.n(); ++i)
        yf(i) = data.y(i) * forward(p, data.x.row(i).transpose());
    return yf;
}

MarginInfo margin_and_support(const NetworkParams& p, const Dataset& data, double tol_sv) {
    return margin_and_support(margins(p, data), tol_sv);
}

bool is_separable_at(const NetworkParams& p, const Dataset& data) {
    return margins(p, data).minCoeff() > 0.0;
}

NetworkParams init_network(const std::vector<int>& dims, std::uint64_t seed, double scale,
                           InitScheme scheme) {
    if (dims.size() < 2) throw ShapeError("need at least input and output dims");
    if (dims.back() != 1) throw ShapeError("output dim must be 1");
    for (int d : dims)
        if (d <= 0) throw ShapeError("dims must be positive");
    if (!(scale > 0.0)) throw DomainError("init scale must be positive");

    Rng rng(seed);
    NetworkParams p;
    for (size_t k = 0; k + 1 < dims.size(); ++k) {
        Matrix m(dims[k + 1], dims[k]);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.gaussian();
        if (scheme == InitScheme::UnitSphere) {
            const double nrm = m.norm();
            if (!(nrm > 0.0)) throw DegenerateError("degenerate random draw");
            m /= nrm;
        }
        p.w.push_back(scale * m);
    }
    return p;
}

}  // namespace mf
