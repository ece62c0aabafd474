#pragma once

#include <Eigen/Core>

#include <complex>
#include <string>
#include <vector>

#include "rotinv/geometry.hpp"

namespace rotinv {

using Complex = std::complex<double>;

// ---------------------------------------------------------------------------
// Conventions, fixed once for the whole library:
//   * Spherical harmonics Y_lm are orthonormal and complex with the
//     Condon-Shortley phase; Y_{l,-m} = (-1)^m conj(Y_lm).
//   * Rotations act by (g.f)(x) = f(g^{-1} x) with g = Rz(alpha) Ry(beta)
//     Rz(gamma), and D^l_{mn}(g) = e^{-i m alpha} d^l_{mn}(beta) e^{-i n
//     gamma}, so that Y_lm(g^{-1} x) = sum_k D^l_{km}(g) Y_lk(x).
//   * The Haar measure on SO(3) is normalized to total mass 1; S^2 carries
//     the usual area measure of total mass 4*pi.
// ---------------------------------------------------------------------------

// Equiangular sampling of S^2: theta_j = pi (2j+1) / (4b), phi_k = pi k / b,
// j,k in [0, 2b). Per-theta weights make the quadrature exact for spherical
// polynomials of degree < 2b.
struct S2Grid {
    int bandwidth = 0;
    Eigen::VectorXd thetas;        // 2b
    Eigen::VectorXd phis;          // 2b
    Eigen::VectorXd theta_weights; // 2b, sums to 2
    Eigen::Matrix3Xd directions;   // 3 x 4b^2, node id = j*2b + k
    Eigen::VectorXd weights;       // 4b^2, sums to 4*pi

    int side() const { return 2 * bandwidth; }
    int node_count() const { return side() * side(); }
};

S2Grid build_s2_grid(int bandwidth);

// ZYZ Euler sampling of SO(3): alpha_j = pi j / b, beta_k = pi (2k+1) / (4b),
// gamma_l = pi l / b. Node weights are normalized Haar.
struct SO3Grid {
    int bandwidth = 0;
    Eigen::VectorXd alphas;       // 2b
    Eigen::VectorXd betas;        // 2b
    Eigen::VectorXd gammas;       // 2b
    Eigen::VectorXd beta_weights; // 2b, sums to 2
    Eigen::VectorXd weights;      // 8b^3, sums to 1; id = (j*2b + k)*2b + l

    int side() const { return 2 * bandwidth; }
    int node_count() const { return side() * side() * side(); }
    EulerZyz euler_at(Eigen::Index node) const;
    Rotation rotation_at(Eigen::Index node) const;
};

SO3Grid build_so3_grid(int bandwidth);

// Coefficient layouts. S^2 spectra index (l, m) with l < b, |m| <= l;
// SO(3) spectra index (l, m, n) with |m|, |n| <= l.
inline int s2_coeff_count(int b) { return b * b; }
inline int s2_coeff_index(int l, int m) { return l * l + l + m; }
inline int so3_coeff_count(int b) { return b * (2 * b - 1) * (2 * b + 1) / 3; }
inline int so3_coeff_base(int l) { return l * (2 * l - 1) * (2 * l + 1) / 3; }
inline int so3_coeff_index(int l, int m, int n) {
    return so3_coeff_base(l) + (m + l) * (2 * l + 1) + (n + l);
}

// Sampled real functions; one column per channel.
struct S2Function {
    int bandwidth = 0;
    Eigen::MatrixXd values;  // node_count x channels

    Eigen::Index channels() const { return values.cols(); }
};

struct SO3Function {
    int bandwidth = 0;
    Eigen::MatrixXd values;

    Eigen::Index channels() const { return values.cols(); }
};

// Complex coefficients; one column per channel.
struct S2Spectrum {
    int bandwidth = 0;
    Eigen::MatrixXcd coeffs;  // s2_coeff_count(b) x channels
};

struct SO3Spectrum {
    int bandwidth = 0;
    Eigen::MatrixXcd coeffs;  // so3_coeff_count(b) x channels
};

// Fully normalized associated Legendre values Q_l^m(cos theta) for
// 0 <= m <= l < b, so that Y_lm = Q_l^m e^{i m phi}. Triangular layout,
// entry l*(l+1)/2 + m.
void normalized_legendre(int bandwidth, double cos_theta, Eigen::VectorXd& out);

// Y_lm(theta, phi) for all l < b, |m| <= l, in s2_coeff_index order.
Eigen::VectorXcd sph_harmonics(int bandwidth, double theta, double phi);

// Wigner little-d matrices d^l(beta), l < b; entry (m + l, n + l) holds
// d^l_{mn}. Built by the three-term recurrence in l from closed-form seeds.
std::vector<Eigen::MatrixXd> wigner_d_matrices(int bandwidth, double beta);

struct WignerTables {
    int bandwidth = 0;
    Eigen::VectorXd betas;
    // d[b_idx][l] is the (2l+1) x (2l+1) matrix at betas[b_idx].
    std::vector<std::vector<Eigen::MatrixXd>> d;
};

WignerTables wigner_d_table(int bandwidth, const Eigen::VectorXd& betas);

// D^l(g) with entries D^l_{mn} = e^{-i m alpha} d^l_{mn}(beta) e^{-i n gamma}.
Eigen::MatrixXcd wigner_D_matrix(int l, const EulerZyz& g);

// Dense transform pair on an S^2 grid. Analysis integrates against conj(Y);
// synthesis evaluates the series at the nodes. Exact (to round-off) for
// bandlimited inputs.
class S2Transform {
public:
    explicit S2Transform(const S2Grid& grid);

    S2Spectrum forward(const S2Function& f) const;
    S2Function inverse(const S2Spectrum& spec) const;
    int bandwidth() const { return bandwidth_; }

    const Eigen::MatrixXcd& analysis() const { return analysis_; }
    const Eigen::MatrixXcd& synthesis() const { return synthesis_; }

private:
    int bandwidth_;
    Eigen::MatrixXcd analysis_;   // coeffs x nodes
    Eigen::MatrixXcd synthesis_;  // nodes x coeffs
};

// Synthesis (nodes x coeffs) and analysis (coeffs x nodes) matrices for
// degrees l < bandwidth_limit on the given grid. A limit below the grid
// bandwidth is useful when only the low-degree content is consumed: the
// matrices stay slim on oversampled grids.
Eigen::MatrixXcd so3_synthesis_matrix(const SO3Grid& grid, int bandwidth_limit);
Eigen::MatrixXcd so3_analysis_matrix(const SO3Grid& grid, int bandwidth_limit);

// Dense transform pair on an SO(3) grid under normalized Haar measure:
// fhat^l_{mn} = (2l+1) * integral of f * conj(D^l_{mn}), and synthesis is the
// plain sum over coefficients times D^l_{mn}.
class SO3Transform {
public:
    explicit SO3Transform(const SO3Grid& grid);

    SO3Spectrum forward(const SO3Function& f) const;
    SO3Function inverse(const SO3Spectrum& spec) const;
    int bandwidth() const { return bandwidth_; }

    const Eigen::MatrixXcd& analysis() const { return analysis_; }
    const Eigen::MatrixXcd& synthesis() const { return synthesis_; }

private:
    int bandwidth_;
    Eigen::MatrixXcd analysis_;
    Eigen::MatrixXcd synthesis_;
};

// Spectrum truncation to a lower bandwidth (and zero-padding back up).
S2Spectrum truncate(const S2Spectrum& spec, int bandwidth_out);
SO3Spectrum truncate(const SO3Spectrum& spec, int bandwidth_out);
SO3Spectrum pad(const SO3Spectrum& spec, int bandwidth_out);

// Spectral rotation of an S^2 function: coefficients map to D^l(g) fhat^l.
S2Spectrum rotate(const S2Spectrum& spec, const EulerZyz& g);

// Spectral left translation of an SO(3) function, (L_g F)(h) = F(g^{-1} h):
// coefficients map to conj(D^l(g)) Fhat^l.
SO3Spectrum left_translate(const SO3Spectrum& spec, const EulerZyz& g);

// Kernel banks as grid samples; column cin * cout_count + cout.
struct S2KernelBank {
    int bandwidth = 0;
    int cin = 0;
    int cout = 0;
    Eigen::MatrixXd samples;  // node_count x (cin*cout)
};

struct SO3KernelBank {
    int bandwidth = 0;
    int cin = 0;
    int cout = 0;
    Eigen::MatrixXd samples;
};

// Spectral pairing behind the convolution theorem, valid for real signals:
//   S^2:   out^l_{mn}[co] = sum_ci conj(fhat^l_m[ci]) what^l_n[ci,co]
//   SO(3): out^l_{mn}[co] = 1/(2l+1) sum_k sum_ci fhat^l_{mk}[ci]
//                            conj(what^l_{nk}[ci,co])
// truncated to l < bandwidth_out.
SO3Spectrum s2_pair_spectra(const S2Spectrum& f, const S2Spectrum& w, int cin,
                            int cout, int bandwidth_out);
SO3Spectrum so3_pair_spectra(const SO3Spectrum& f, const SO3Spectrum& w,
                             int cin, int cout, int bandwidth_out);

// (f * w)(g) = integral over S^2 of f(x) w(g^{-1} x), evaluated on the output
// rotation grid via the spectral path.
SO3Function s2_convolve(const S2Grid& grid_in, const S2Function& f,
                        const S2KernelBank& w, const SO3Grid& grid_out);

// (f * w)(g) = integral over SO(3) of f(h) w(g^{-1} h) under normalized Haar.
SO3Function so3_convolve(const SO3Grid& grid_in, const SO3Function& f,
                         const SO3KernelBank& w, const SO3Grid& grid_out);

// Reference evaluation of the same integrals by direct quadrature on the
// input grid, with the kernel read as the bandlimited interpolant of its
// samples. Slow; used to cross-check the spectral path.
SO3Function s2_convolve_direct(const S2Grid& grid_in, const S2Function& f,
                               const S2KernelBank& w, const SO3Grid& grid_out);
SO3Function so3_convolve_direct(const SO3Grid& grid_in, const SO3Function& f,
                                const SO3KernelBank& w,
                                const SO3Grid& grid_out);

// Per-channel integral against normalized Haar weights.
Eigen::VectorXd so3_integrate(const SO3Grid& grid, const SO3Function& f);

// Debug dump: JSON array of [l, m, re, im] (S^2) or [l, m, n, re, im] (SO(3))
// for channel 0.
std::string spectrum_to_json(const S2Spectrum& spec);
std::string spectrum_to_json(const SO3Spectrum& spec);

}  // namespace rotinv
