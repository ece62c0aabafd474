#include "rotinv/spherical.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace rotinv {

namespace {

constexpr double kPi = std::numbers::pi;

int tri_index(int l, int m) { return l * (l + 1) / 2 + m; }

double binomial(int n, int k) {
    double c = 1.0;
    for (int i = 1; i <= k; ++i) {
        c *= static_cast<double>(n - k + i) / static_cast<double>(i);
    }
    return c;
}

// Chebyshev-like quadrature weights for theta_j = pi (2j+1) / (4b): exact
// for integrating polynomials of degree < 2b in cos(theta) against
// sin(theta) d(theta); they sum to 2.
Eigen::VectorXd colatitude_weights(int b) {
    const int side = 2 * b;
    Eigen::VectorXd w(side);
    for (int j = 0; j < side; ++j) {
        const double theta = kPi * (2 * j + 1) / (4.0 * b);
        double acc = 0.0;
        for (int k = 0; k < b; ++k) {
            acc += std::sin((2 * k + 1) * theta) / (2 * k + 1);
        }
        w[j] = (2.0 / b) * std::sin(theta) * acc;
    }
    return w;
}

void check_bandwidth(int b) {
    if (b < 1) throw std::invalid_argument("bandwidth must be >= 1");
}

}  // namespace

S2Grid build_s2_grid(int bandwidth) {
    check_bandwidth(bandwidth);
    S2Grid grid;
    grid.bandwidth = bandwidth;
    const int side = 2 * bandwidth;
    grid.thetas.resize(side);
    grid.phis.resize(side);
    for (int j = 0; j < side; ++j) {
        grid.thetas[j] = kPi * (2 * j + 1) / (4.0 * bandwidth);
        grid.phis[j] = kPi * j / bandwidth;
    }
    grid.theta_weights = colatitude_weights(bandwidth);
    grid.directions.resize(3, side * side);
    grid.weights.resize(side * side);
    const double phi_weight = kPi / bandwidth;  // 2*pi / (2b)
    for (int j = 0; j < side; ++j) {
        const double st = std::sin(grid.thetas[j]);
        const double ct = std::cos(grid.thetas[j]);
        for (int k = 0; k < side; ++k) {
            const Eigen::Index id = j * side + k;
            grid.directions.col(id) << st * std::cos(grid.phis[k]),
                st * std::sin(grid.phis[k]), ct;
            grid.weights[id] = grid.theta_weights[j] * phi_weight;
        }
    }
    return grid;
}

SO3Grid build_so3_grid(int bandwidth) {
    check_bandwidth(bandwidth);
    SO3Grid grid;
    grid.bandwidth = bandwidth;
    const int side = 2 * bandwidth;
    grid.alphas.resize(side);
    grid.betas.resize(side);
    grid.gammas.resize(side);
    for (int j = 0; j < side; ++j) {
        grid.alphas[j] = kPi * j / bandwidth;
        grid.betas[j] = kPi * (2 * j + 1) / (4.0 * bandwidth);
        grid.gammas[j] = kPi * j / bandwidth;
    }
    grid.beta_weights = colatitude_weights(bandwidth);
    grid.weights.resize(side * side * side);
    // Normalized Haar: the beta weights sum to 2, the alpha/gamma sums are
    // plain averages.
    const double angle_factor = 1.0 / (side * side);
    for (int j = 0; j < side; ++j) {
        for (int k = 0; k < side; ++k) {
            for (int l = 0; l < side; ++l) {
                grid.weights[(j * side + k) * side + l] =
                    0.5 * grid.beta_weights[k] * angle_factor;
            }
        }
    }
    return grid;
}

EulerZyz SO3Grid::euler_at(Eigen::Index node) const {
    const int side2 = side();
    const Eigen::Index l = node % side2;
    const Eigen::Index k = (node / side2) % side2;
    const Eigen::Index j = node / (side2 * side2);
    return EulerZyz{alphas[j], betas[k], gammas[l]};
}

Rotation SO3Grid::rotation_at(Eigen::Index node) const {
    const EulerZyz e = euler_at(node);
    return Rotation::from_euler_zyz(e.alpha, e.beta, e.gamma);
}

void normalized_legendre(int bandwidth, double cos_theta,
                         Eigen::VectorXd& out) {
    const int b = bandwidth;
    out.resize(b * (b + 1) / 2);
    const double x = cos_theta;
    const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
    out[tri_index(0, 0)] = std::sqrt(1.0 / (4.0 * kPi));
    for (int m = 1; m < b; ++m) {
        out[tri_index(m, m)] = -std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s *
                               out[tri_index(m - 1, m - 1)];
    }
    for (int m = 0; m + 1 < b; ++m) {
        out[tri_index(m + 1, m)] =
            std::sqrt(2.0 * m + 3.0) * x * out[tri_index(m, m)];
    }
    for (int m = 0; m < b; ++m) {
        for (int l = m + 2; l < b; ++l) {
            const double a =
                std::sqrt((4.0 * l * l - 1.0) /
                          (static_cast<double>(l) * l - static_cast<double>(m) * m));
            const double c =
                std::sqrt((static_cast<double>(l - 1) * (l - 1) -
                           static_cast<double>(m) * m) /
                          (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
            out[tri_index(l, m)] =
                a * (x * out[tri_index(l - 1, m)] - c * out[tri_index(l - 2, m)]);
        }
    }
}

Eigen::VectorXcd sph_harmonics(int bandwidth, double theta, double phi) {
    check_bandwidth(bandwidth);
    Eigen::VectorXd q;
    normalized_legendre(bandwidth, std::cos(theta), q);
    Eigen::VectorXcd out(s2_coeff_count(bandwidth));
    for (int l = 0; l < bandwidth; ++l) {
        out[s2_coeff_index(l, 0)] = q[tri_index(l, 0)];
        for (int m = 1; m <= l; ++m) {
            const Complex e(std::cos(m * phi), std::sin(m * phi));
            const Complex val = q[tri_index(l, m)] * e;
            out[s2_coeff_index(l, m)] = val;
            // Y_{l,-m} = (-1)^m conj(Y_lm)
            out[s2_coeff_index(l, -m)] =
                (m % 2 == 0 ? 1.0 : -1.0) * std::conj(val);
        }
    }
    return out;
}

std::vector<Eigen::MatrixXd> wigner_d_matrices(int bandwidth, double beta) {
    check_bandwidth(bandwidth);
    const double c = std::cos(0.5 * beta);
    const double s = std::sin(0.5 * beta);
    const double x = std::cos(beta);
    std::vector<Eigen::MatrixXd> d(static_cast<std::size_t>(bandwidth));
    for (int l = 0; l < bandwidth; ++l) {
        d[static_cast<std::size_t>(l)].resize(2 * l + 1, 2 * l + 1);
    }
    d[0](0, 0) = 1.0;
    for (int l = 1; l < bandwidth; ++l) {
        auto& dl = d[static_cast<std::size_t>(l)];
        for (int m = -l; m <= l; ++m) {
            for (int n = -l; n <= l; ++n) {
                const int order = std::max(std::abs(m), std::abs(n));
                if (order == l) {
                    // Closed-form boundary values in cos(beta/2), sin(beta/2).
                    double v = 0.0;
                    if (n == l) {
                        v = std::sqrt(binomial(2 * l, l + m)) *
                            std::pow(c, l + m) * std::pow(s, l - m);
                    } else if (n == -l) {
                        v = ((l + m) % 2 == 0 ? 1.0 : -1.0) *
                            std::sqrt(binomial(2 * l, l - m)) *
                            std::pow(c, l - m) * std::pow(s, l + m);
                    } else if (m == l) {
                        v = ((l - n) % 2 == 0 ? 1.0 : -1.0) *
                            std::sqrt(binomial(2 * l, l + n)) *
                            std::pow(c, l + n) * std::pow(s, l - n);
                    } else {  // m == -l
                        v = std::sqrt(binomial(2 * l, l - n)) *
                            std::pow(c, l - n) * std::pow(s, l + n);
                    }
                    dl(m + l, n + l) = v;
                    continue;
                }
                // Three-term recurrence in the degree.
                const double prev1 =
                    d[static_cast<std::size_t>(l - 1)](m + l - 1, n + l - 1);
                const double lm = static_cast<double>(l) * l -
                                  static_cast<double>(m) * m;
                const double ln = static_cast<double>(l) * l -
                                  static_cast<double>(n) * n;
                const double a = l * (2.0 * l - 1.0) / std::sqrt(lm * ln);
                const double bshift =
                    (m == 0 || n == 0)
                        ? 0.0
                        : static_cast<double>(m) * n / (l * (l - 1.0));
                double second = 0.0;
                if (l - 1 > order) {
                    const double pm = static_cast<double>(l - 1) * (l - 1) -
                                      static_cast<double>(m) * m;
                    const double pn = static_cast<double>(l - 1) * (l - 1) -
                                      static_cast<double>(n) * n;
                    second = std::sqrt(pm * pn) / ((l - 1.0) * (2.0 * l - 1.0)) *
                             d[static_cast<std::size_t>(l - 2)](m + l - 2,
                                                                n + l - 2);
                }
                dl(m + l, n + l) = a * ((x - bshift) * prev1 - second);
            }
        }
    }
    return d;
}

WignerTables wigner_d_table(int bandwidth, const Eigen::VectorXd& betas) {
    check_bandwidth(bandwidth);
    WignerTables t;
    t.bandwidth = bandwidth;
    t.betas = betas;
    t.d.reserve(static_cast<std::size_t>(betas.size()));
    for (Eigen::Index i = 0; i < betas.size(); ++i) {
        t.d.push_back(wigner_d_matrices(bandwidth, betas[i]));
    }
    return t;
}

Eigen::MatrixXcd wigner_D_matrix(int l, const EulerZyz& g) {
    const auto d = wigner_d_matrices(l + 1, g.beta);
    const Eigen::MatrixXd& dl = d[static_cast<std::size_t>(l)];
    Eigen::MatrixXcd out(2 * l + 1, 2 * l + 1);
    for (int m = -l; m <= l; ++m) {
        const Complex ea(std::cos(m * g.alpha), -std::sin(m * g.alpha));
        for (int n = -l; n <= l; ++n) {
            const Complex eg(std::cos(n * g.gamma), -std::sin(n * g.gamma));
            out(m + l, n + l) = ea * dl(m + l, n + l) * eg;
        }
    }
    return out;
}

S2Transform::S2Transform(const S2Grid& grid) : bandwidth_(grid.bandwidth) {
    const int ncoef = s2_coeff_count(bandwidth_);
    const Eigen::Index nnodes = grid.node_count();
    synthesis_.resize(nnodes, ncoef);
    analysis_.resize(ncoef, nnodes);
    const int side = grid.side();
    for (int j = 0; j < side; ++j) {
        for (int k = 0; k < side; ++k) {
            const Eigen::Index id = j * side + k;
            const Eigen::VectorXcd row =
                sph_harmonics(bandwidth_, grid.thetas[j], grid.phis[k]);
            synthesis_.row(id) = row.transpose();
            analysis_.col(id) = grid.weights[id] * row.conjugate();
        }
    }
}

S2Spectrum S2Transform::forward(const S2Function& f) const {
    if (f.bandwidth != bandwidth_ || f.values.rows() != analysis_.cols()) {
        throw std::invalid_argument("S2Transform::forward: bandwidth mismatch");
    }
    S2Spectrum spec;
    spec.bandwidth = bandwidth_;
    spec.coeffs = analysis_ * f.values.cast<Complex>();
    return spec;
}

S2Function S2Transform::inverse(const S2Spectrum& spec) const {
    if (spec.bandwidth != bandwidth_) {
        throw std::invalid_argument("S2Transform::inverse: bandwidth mismatch");
    }
    S2Function f;
    f.bandwidth = bandwidth_;
    f.values = (synthesis_ * spec.coeffs).real();
    return f;
}

namespace {

void fill_so3_matrices(const SO3Grid& grid, int limit,
                       Eigen::MatrixXcd* synthesis,
                       Eigen::MatrixXcd* analysis) {
    if (limit < 1 || limit > grid.bandwidth) {
        throw std::invalid_argument("so3 matrix bandwidth limit out of range");
    }
    const int side = grid.side();
    const int ncoef = so3_coeff_count(limit);
    const Eigen::Index nnodes = grid.node_count();
    if (synthesis != nullptr) synthesis->resize(nnodes, ncoef);
    if (analysis != nullptr) analysis->resize(ncoef, nnodes);

    const WignerTables tables = wigner_d_table(limit, grid.betas);
    // Phase tables e^{-i m alpha_j}; alpha and gamma share the same nodes.
    Eigen::MatrixXcd phase(2 * limit - 1, side);
    for (int m = -(limit - 1); m <= limit - 1; ++m) {
        for (int j = 0; j < side; ++j) {
            phase(m + limit - 1, j) = Complex(std::cos(m * grid.alphas[j]),
                                              -std::sin(m * grid.alphas[j]));
        }
    }

    for (int j = 0; j < side; ++j) {
        for (int k = 0; k < side; ++k) {
            for (int g = 0; g < side; ++g) {
                const Eigen::Index id = (j * side + k) * side + g;
                const double w = grid.weights[id];
                for (int l = 0; l < limit; ++l) {
                    const Eigen::MatrixXd& dl =
                        tables.d[static_cast<std::size_t>(k)]
                               [static_cast<std::size_t>(l)];
                    for (int m = -l; m <= l; ++m) {
                        const Complex ea = phase(m + limit - 1, j);
                        for (int n = -l; n <= l; ++n) {
                            const Complex value =
                                ea * dl(m + l, n + l) * phase(n + limit - 1, g);
                            const int idx = so3_coeff_index(l, m, n);
                            if (synthesis != nullptr) {
                                (*synthesis)(id, idx) = value;
                            }
                            if (analysis != nullptr) {
                                (*analysis)(idx, id) =
                                    (2.0 * l + 1.0) * w * std::conj(value);
                            }
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Eigen::MatrixXcd so3_synthesis_matrix(const SO3Grid& grid,
                                      int bandwidth_limit) {
    Eigen::MatrixXcd out;
    fill_so3_matrices(grid, bandwidth_limit, &out, nullptr);
    return out;
}

Eigen::MatrixXcd so3_analysis_matrix(const SO3Grid& grid, int bandwidth_limit) {
    Eigen::MatrixXcd out;
    fill_so3_matrices(grid, bandwidth_limit, nullptr, &out);
    return out;
}

SO3Transform::SO3Transform(const SO3Grid& grid) : bandwidth_(grid.bandwidth) {
    fill_so3_matrices(grid, bandwidth_, &synthesis_, &analysis_);
}

SO3Spectrum SO3Transform::forward(const SO3Function& f) const {
    if (f.bandwidth != bandwidth_ || f.values.rows() != analysis_.cols()) {
        throw std::invalid_argument("SO3Transform::forward: bandwidth mismatch");
    }
    SO3Spectrum spec;
    spec.bandwidth = bandwidth_;
    spec.coeffs = analysis_ * f.values.cast<Complex>();
    return spec;
}

SO3Function SO3Transform::inverse(const SO3Spectrum& spec) const {
    if (spec.bandwidth != bandwidth_) {
        throw std::invalid_argument("SO3Transform::inverse: bandwidth mismatch");
    }
    SO3Function f;
    f.bandwidth = bandwidth_;
    f.values = (synthesis_ * spec.coeffs).real();
    return f;
}

S2Spectrum truncate(const S2Spectrum& spec, int bandwidth_out) {
    if (bandwidth_out > spec.bandwidth) {
        throw std::invalid_argument("truncate: output bandwidth too large");
    }
    S2Spectrum out;
    out.bandwidth = bandwidth_out;
    out.coeffs = spec.coeffs.topRows(s2_coeff_count(bandwidth_out));
    return out;
}

SO3Spectrum truncate(const SO3Spectrum& spec, int bandwidth_out) {
    if (bandwidth_out > spec.bandwidth) {
        throw std::invalid_argument("truncate: output bandwidth too large");
    }
    SO3Spectrum out;
    out.bandwidth = bandwidth_out;
    out.coeffs = spec.coeffs.topRows(so3_coeff_count(bandwidth_out));
    return out;
}

SO3Spectrum pad(const SO3Spectrum& spec, int bandwidth_out) {
    if (bandwidth_out < spec.bandwidth) {
        throw std::invalid_argument("pad: output bandwidth too small");
    }
    SO3Spectrum out;
    out.bandwidth = bandwidth_out;
    out.coeffs = Eigen::MatrixXcd::Zero(so3_coeff_count(bandwidth_out),
                                        spec.coeffs.cols());
    out.coeffs.topRows(spec.coeffs.rows()) = spec.coeffs;
    return out;
}

S2Spectrum rotate(const S2Spectrum& spec, const EulerZyz& g) {
    S2Spectrum out;
    out.bandwidth = spec.bandwidth;
    out.coeffs.resizeLike(spec.coeffs);
    for (int l = 0; l < spec.bandwidth; ++l) {
        const Eigen::MatrixXcd D = wigner_D_matrix(l, g);
        out.coeffs.middleRows(s2_coeff_index(l, -l), 2 * l + 1) =
            D * spec.coeffs.middleRows(s2_coeff_index(l, -l), 2 * l + 1);
    }
    return out;
}

SO3Spectrum left_translate(const SO3Spectrum& spec, const EulerZyz& g) {
    SO3Spectrum out;
    out.bandwidth = spec.bandwidth;
    out.coeffs.resizeLike(spec.coeffs);
    for (int l = 0; l < spec.bandwidth; ++l) {
        const Eigen::MatrixXcd Dc = wigner_D_matrix(l, g).conjugate();
        const int rows = 2 * l + 1;
        for (Eigen::Index ch = 0; ch < spec.coeffs.cols(); ++ch) {
            Eigen::Map<const Eigen::Matrix<Complex, Eigen::Dynamic,
                                           Eigen::Dynamic, Eigen::RowMajor>>
                block(spec.coeffs.col(ch).data() + so3_coeff_base(l), rows,
                      rows);
            Eigen::Map<Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
                dest(out.coeffs.col(ch).data() + so3_coeff_base(l), rows, rows);
            dest = Dc * block;
        }
    }
    return out;
}

SO3Spectrum s2_pair_spectra(const S2Spectrum& f, const S2Spectrum& w, int cin,
                            int cout, int bandwidth_out) {
    if (f.bandwidth != w.bandwidth) {
        throw std::invalid_argument("s2_pair_spectra: bandwidth mismatch");
    }
    if (f.coeffs.cols() % cin != 0 || w.coeffs.cols() != cin * cout) {
        throw std::invalid_argument("s2_pair_spectra: channel mismatch");
    }
    if (bandwidth_out > f.bandwidth) {
        throw std::invalid_argument("s2_pair_spectra: output bandwidth too "
                                    "large");
    }
    // f may carry several independent items (e.g. hull points), each with
    // cin channels.
    const Eigen::Index items = f.coeffs.cols() / cin;
    SO3Spectrum out;
    out.bandwidth = bandwidth_out;
    out.coeffs = Eigen::MatrixXcd::Zero(so3_coeff_count(bandwidth_out),
                                        items * cout);
    for (int l = 0; l < bandwidth_out; ++l) {
        for (int m = -l; m <= l; ++m) {
            const int fi = s2_coeff_index(l, m);
            for (int n = -l; n <= l; ++n) {
                const int wi = s2_coeff_index(l, n);
                const int oi = so3_coeff_index(l, m, n);
                for (Eigen::Index it = 0; it < items; ++it) {
                    for (int co = 0; co < cout; ++co) {
                        Complex acc(0.0, 0.0);
                        for (int ci = 0; ci < cin; ++ci) {
                            acc += std::conj(f.coeffs(fi, it * cin + ci)) *
                                   w.coeffs(wi, ci * cout + co);
                        }
                        out.coeffs(oi, it * cout + co) = acc;
                    }
                }
            }
        }
    }
    return out;
}

SO3Spectrum so3_pair_spectra(const SO3Spectrum& f, const SO3Spectrum& w,
                             int cin, int cout, int bandwidth_out) {
    if (f.bandwidth != w.bandwidth) {
        throw std::invalid_argument("so3_pair_spectra: bandwidth mismatch");
    }
    if (f.coeffs.cols() % cin != 0 || w.coeffs.cols() != cin * cout) {
        throw std::invalid_argument("so3_pair_spectra: channel mismatch");
    }
    if (bandwidth_out > f.bandwidth) {
        throw std::invalid_argument(
            "so3_pair_spectra: output bandwidth too large");
    }
    const Eigen::Index items = f.coeffs.cols() / cin;
    SO3Spectrum out;
    out.bandwidth = bandwidth_out;
    out.coeffs = Eigen::MatrixXcd::Zero(so3_coeff_count(bandwidth_out),
                                        items * cout);
    for (int l = 0; l < bandwidth_out; ++l) {
        const double scale = 1.0 / (2.0 * l + 1.0);
        for (int m = -l; m <= l; ++m) {
            for (int n = -l; n <= l; ++n) {
                const int oi = so3_coeff_index(l, m, n);
                for (Eigen::Index it = 0; it < items; ++it) {
                    for (int co = 0; co < cout; ++co) {
                        Complex acc(0.0, 0.0);
                        for (int ci = 0; ci < cin; ++ci) {
                            for (int k = -l; k <= l; ++k) {
                                acc += f.coeffs(so3_coeff_index(l, m, k),
                                                it * cin + ci) *
                                       std::conj(w.coeffs(
                                           so3_coeff_index(l, n, k),
                                           ci * cout + co));
                            }
                        }
                        out.coeffs(oi, it * cout + co) = scale * acc;
                    }
                }
            }
        }
    }
    return out;
}

SO3Function s2_convolve(const S2Grid& grid_in, const S2Function& f,
                        const S2KernelBank& w, const SO3Grid& grid_out) {
    if (f.bandwidth != grid_in.bandwidth || w.bandwidth != grid_in.bandwidth) {
        throw std::invalid_argument("s2_convolve: bandwidth mismatch");
    }
    if (grid_out.bandwidth > grid_in.bandwidth) {
        throw std::invalid_argument(
            "s2_convolve: output bandwidth exceeds input");
    }
    if (f.channels() != w.cin) {
        throw std::invalid_argument("s2_convolve: channel mismatch");
    }
    const S2Transform tf(grid_in);
    const S2Spectrum fspec = tf.forward(f);
    const S2Spectrum wspec =
        tf.forward(S2Function{w.bandwidth, w.samples});
    const SO3Spectrum ospec =
        s2_pair_spectra(fspec, wspec, w.cin, w.cout, grid_out.bandwidth);
    return SO3Transform(grid_out).inverse(ospec);
}

SO3Function so3_convolve(const SO3Grid& grid_in, const SO3Function& f,
                         const SO3KernelBank& w, const SO3Grid& grid_out) {
    if (f.bandwidth != grid_in.bandwidth) {
        throw std::invalid_argument("so3_convolve: bandwidth mismatch");
    }
    if (w.bandwidth > grid_in.bandwidth) {
        throw std::invalid_argument(
            "so3_convolve: kernel bandwidth exceeds input");
    }
    if (grid_out.bandwidth > grid_in.bandwidth) {
        throw std::invalid_argument(
            "so3_convolve: output bandwidth exceeds input");
    }
    if (f.channels() != w.cin) {
        throw std::invalid_argument("so3_convolve: channel mismatch");
    }
    const SO3Transform tf_in(grid_in);
    const SO3Spectrum fspec = tf_in.forward(f);
    SO3Spectrum wspec;
    if (w.bandwidth == grid_in.bandwidth) {
        wspec = tf_in.forward(SO3Function{w.bandwidth, w.samples});
    } else {
        const SO3Grid wgrid = build_so3_grid(w.bandwidth);
        wspec = pad(SO3Transform(wgrid).forward(SO3Function{w.bandwidth,
                                                            w.samples}),
                    grid_in.bandwidth);
    }
    const SO3Spectrum ospec =
        so3_pair_spectra(fspec, wspec, w.cin, w.cout, grid_out.bandwidth);
    return SO3Transform(grid_out).inverse(ospec);
}

SO3Function s2_convolve_direct(const S2Grid& grid_in, const S2Function& f,
                               const S2KernelBank& w,
                               const SO3Grid& grid_out) {
    if (f.bandwidth != grid_in.bandwidth || w.bandwidth != grid_in.bandwidth) {
        throw std::invalid_argument("s2_convolve_direct: bandwidth mismatch");
    }
    if (f.channels() != w.cin) {
        throw std::invalid_argument("s2_convolve_direct: channel mismatch");
    }
    const S2Transform tf(grid_in);
    const S2Spectrum wspec = tf.forward(S2Function{w.bandwidth, w.samples});
    SO3Function out;
    out.bandwidth = grid_out.bandwidth;
    out.values =
        Eigen::MatrixXd::Zero(grid_out.node_count(), w.cout);
    for (Eigen::Index gnode = 0; gnode < grid_out.node_count(); ++gnode) {
        const Mat3 rt = grid_out.rotation_at(gnode).matrix().transpose();
        for (Eigen::Index x = 0; x < grid_in.node_count(); ++x) {
            const Vec3 dir = rt * grid_in.directions.col(x);
            const double theta =
                std::atan2(std::hypot(dir.x(), dir.y()), dir.z());
            const double phi = std::atan2(dir.y(), dir.x());
            const Eigen::VectorXcd basis =
                sph_harmonics(grid_in.bandwidth, theta, phi);
            const double quad = grid_in.weights[x];
            for (int co = 0; co < w.cout; ++co) {
                double acc = 0.0;
                for (int ci = 0; ci < w.cin; ++ci) {
                    const double wval =
                        (basis.transpose() * wspec.coeffs.col(ci * w.cout + co))
                            .value()
                            .real();
                    acc += f.values(x, ci) * wval;
                }
                out.values(gnode, co) += quad * acc;
            }
        }
    }
    return out;
}

SO3Function so3_convolve_direct(const SO3Grid& grid_in, const SO3Function& f,
                                const SO3KernelBank& w,
                                const SO3Grid& grid_out) {
    if (f.bandwidth != grid_in.bandwidth) {
        throw std::invalid_argument("so3_convolve_direct: bandwidth mismatch");
    }
    if (f.channels() != w.cin) {
        throw std::invalid_argument("so3_convolve_direct: channel mismatch");
    }
    SO3Spectrum wspec;
    {
        const SO3Grid wgrid = w.bandwidth == grid_in.bandwidth
                                  ? grid_in
                                  : build_so3_grid(w.bandwidth);
        wspec = SO3Transform(wgrid).forward(SO3Function{w.bandwidth,
                                                        w.samples});
    }
    SO3Function out;
    out.bandwidth = grid_out.bandwidth;
    out.values = Eigen::MatrixXd::Zero(grid_out.node_count(), w.cout);
    for (Eigen::Index gnode = 0; gnode < grid_out.node_count(); ++gnode) {
        const Rotation g_inv = grid_out.rotation_at(gnode).inverse();
        for (Eigen::Index h = 0; h < grid_in.node_count(); ++h) {
            const Rotation rel = g_inv * grid_in.rotation_at(h);
            const EulerZyz e = euler_zyz(rel);
            const auto dmats = wigner_d_matrices(w.bandwidth, e.beta);
            const double quad = grid_in.weights[h];
            for (int co = 0; co < w.cout; ++co) {
                for (int ci = 0; ci < w.cin; ++ci) {
                    Complex val(0.0, 0.0);
                    for (int l = 0; l < w.bandwidth; ++l) {
                        for (int m = -l; m <= l; ++m) {
                            const Complex ea(std::cos(m * e.alpha),
                                             -std::sin(m * e.alpha));
                            for (int n = -l; n <= l; ++n) {
                                const Complex eg(std::cos(n * e.gamma),
                                                 -std::sin(n * e.gamma));
                                val += wspec.coeffs(so3_coeff_index(l, m, n),
                                                    ci * w.cout + co) *
                                       ea *
                                       dmats[static_cast<std::size_t>(l)](
                                           m + l, n + l) *
                                       eg;
                            }
                        }
                    }
                    out.values(gnode, co) +=
                        quad * f.values(h, ci) * val.real();
                }
            }
        }
    }
    return out;
}

Eigen::VectorXd so3_integrate(const SO3Grid& grid, const SO3Function& f) {
    if (f.bandwidth != grid.bandwidth || f.values.rows() != grid.node_count()) {
        throw std::invalid_argument("so3_integrate: bandwidth mismatch");
    }
    return f.values.transpose() * grid.weights;
}

std::string spectrum_to_json(const S2Spectrum& spec) {
    std::ostringstream out;
    out.precision(17);
    out << "[";
    bool first = true;
    for (int l = 0; l < spec.bandwidth; ++l) {
        for (int m = -l; m <= l; ++m) {
            const Complex v = spec.coeffs(s2_coeff_index(l, m), 0);
            out << (first ? "" : ",") << "[" << l << "," << m << ","
                << v.real() << "," << v.imag() << "]";
            first = false;
        }
    }
    out << "]";
    return out.str();
}

std::string spectrum_to_json(const SO3Spectrum& spec) {
    std::ostringstream out;
    out.precision(17);
    out << "[";
    bool first = true;
    for (int l = 0; l < spec.bandwidth; ++l) {
        for (int m = -l; m <= l; ++m) {
            for (int n = -l; n <= l; ++n) {
                const Complex v = spec.coeffs(so3_coeff_index(l, m, n), 0);
                out << (first ? "" : ",") << "[" << l << "," << m << "," << n
                    << "," << v.real() << "," << v.imag() << "]";
                first = false;
            }
        }
    }
    out << "]";
    return out.str();
}

}  // namespace rotinv
