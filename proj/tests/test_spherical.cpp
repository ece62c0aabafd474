#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "oracles.hpp"
#include "rotinv/spherical.hpp"
#include "rotinv/verify.hpp"

using namespace rotinv;

namespace {

constexpr double kPi = 3.14159265358979323846;

S2Spectrum random_real_s2_spectrum(int b, Rng& rng) {
    S2Spectrum spec;
    spec.bandwidth = b;
    spec.coeffs = Eigen::MatrixXcd::Zero(s2_coeff_count(b), 1);
    for (int l = 0; l < b; ++l) {
        spec.coeffs(s2_coeff_index(l, 0), 0) = rng.gaussian();
        for (int m = 1; m <= l; ++m) {
            const Complex v(rng.gaussian(), rng.gaussian());
            spec.coeffs(s2_coeff_index(l, m), 0) = v;
            spec.coeffs(s2_coeff_index(l, -m), 0) =
                (m % 2 == 0 ? 1.0 : -1.0) * std::conj(v);
        }
    }
    return spec;
}

SO3Spectrum random_real_so3_spectrum(int b, Rng& rng) {
    SO3Spectrum spec;
    spec.bandwidth = b;
    spec.coeffs = Eigen::MatrixXcd::Zero(so3_coeff_count(b), 1);
    for (int l = 0; l < b; ++l) {
        for (int m = -l; m <= l; ++m) {
            for (int n = -l; n <= l; ++n) {
                if (std::make_pair(-m, -n) < std::make_pair(m, n)) continue;
                if (m == 0 && n == 0) {
                    spec.coeffs(so3_coeff_index(l, 0, 0), 0) = rng.gaussian();
                    continue;
                }
                const Complex v(rng.gaussian(), rng.gaussian());
                spec.coeffs(so3_coeff_index(l, m, n), 0) = v;
                spec.coeffs(so3_coeff_index(l, -m, -n), 0) =
                    ((m - n) % 2 == 0 ? 1.0 : -1.0) * std::conj(v);
            }
        }
    }
    return spec;
}

}  // namespace

TEST_CASE("s2 grid layout and weights") {
    const S2Grid g1 = build_s2_grid(1);
    CHECK(g1.node_count() == 4);
    CHECK(g1.thetas[0] == doctest::Approx(kPi / 4).epsilon(1e-15));
    CHECK(g1.thetas[1] == doctest::Approx(3 * kPi / 4).epsilon(1e-15));

    for (const int b : {1, 2, 4, 8}) {
        const S2Grid g = build_s2_grid(b);
        CHECK(std::abs(g.weights.sum() - 4.0 * kPi) < 1e-10);
    }
    CHECK_THROWS_AS(build_s2_grid(0), std::invalid_argument);
}

TEST_CASE("s2 quadrature is exact on harmonics below degree 2b") {
    for (const int b : {1, 2, 4}) {
        const S2Grid g = build_s2_grid(b);
        for (int l = 0; l < b; ++l) {
            for (int lp = 0; lp < b; ++lp) {
                for (int m = -std::min(l, lp); m <= std::min(l, lp); ++m) {
                    Complex acc(0, 0);
                    for (Eigen::Index node = 0; node < g.node_count(); ++node) {
                        const int j = static_cast<int>(node) / g.side();
                        const int k = static_cast<int>(node) % g.side();
                        acc += g.weights[node] *
                               oracle::sph_harmonic(l, m, g.thetas[j], g.phis[k]) *
                               std::conj(oracle::sph_harmonic(lp, m, g.thetas[j],
                                                              g.phis[k]));
                    }
                    const double expected = (l == lp) ? 1.0 : 0.0;
                    CHECK(std::abs(acc - Complex(expected, 0)) < 1e-10);
                }
            }
        }
    }
}

TEST_CASE("so3 grid layout and weights") {
    const SO3Grid g1 = build_so3_grid(1);
    CHECK(g1.node_count() == 8);
    CHECK(std::abs(g1.weights.sum() - 1.0) < 1e-10);
    for (const int b : {2, 4, 8}) {
        CHECK(std::abs(build_so3_grid(b).weights.sum() - 1.0) < 1e-10);
    }

    // Schur orthogonality: integral of |D^1_00|^2 = 1/3.
    const SO3Grid g2 = build_so3_grid(2);
    double acc = 0.0;
    for (Eigen::Index node = 0; node < g2.node_count(); ++node) {
        const EulerZyz e = g2.euler_at(node);
        const double d = std::cos(e.beta);
        acc += g2.weights[node] * d * d;
    }
    CHECK(acc == doctest::Approx(1.0 / 3.0).epsilon(1e-10));
}

TEST_CASE("library harmonics match the factorial-d construction") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const double theta = rng.uniform() * kPi;
        const double phi = rng.uniform() * 2.0 * kPi;
        const Eigen::VectorXcd y = sph_harmonics(8, theta, phi);
        for (int l = 0; l < 8; ++l) {
            for (int m = -l; m <= l; ++m) {
                CHECK(std::abs(y[s2_coeff_index(l, m)] -
                               oracle::sph_harmonic(l, m, theta, phi)) < 1e-12);
            }
        }
    }
}

TEST_CASE("wigner d closed forms") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const double beta = rng.uniform() * kPi;
        const auto d = wigner_d_matrices(2, beta);
        CHECK(d[0](0, 0) == 1.0);
        CHECK(d[1](1, 1) == doctest::Approx(std::cos(beta)).epsilon(1e-14));
    }
    CHECK(std::abs(wigner_d_matrices(2, kPi / 2)[1](1, 1)) < 1e-15);
}

TEST_CASE("wigner d recursion matches the factorial sum") {
    Rng rng(37);
    for (int trial = 0; trial < 10; ++trial) {
        const double beta = 1e-3 + rng.uniform() * (kPi - 2e-3);
        const auto d = wigner_d_matrices(8, beta);
        for (int l = 0; l < 8; ++l) {
            for (int m = -l; m <= l; ++m) {
                for (int n = -l; n <= l; ++n) {
                    CHECK(std::abs(d[l](m + l, n + l) -
                                   oracle::wigner_d(l, m, n, beta)) < 1e-12);
                }
            }
        }
    }
}

TEST_CASE("wigner d rows are orthonormal at b=8") {
    const SO3Grid grid = build_so3_grid(8);
    const WignerTables tables = wigner_d_table(8, grid.betas);
    for (const auto& per_beta : tables.d) {
        for (int l = 0; l < 8; ++l) {
            const Eigen::MatrixXd& dl = per_beta[l];
            const Eigen::MatrixXd gram = dl * dl.transpose();
            CHECK((gram - Eigen::MatrixXd::Identity(2 * l + 1, 2 * l + 1))
                      .cwiseAbs()
                      .maxCoeff() < 1e-10);
        }
    }
}

TEST_CASE("wigner D is a homomorphism") {
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        const Rotation r1 = random_rotation(rng);
        const Rotation r2 = random_rotation(rng);
        const EulerZyz e1 = euler_zyz(r1);
        const EulerZyz e2 = euler_zyz(r2);
        const EulerZyz e12 = euler_zyz(r1 * r2);
        for (int l = 0; l < 4; ++l) {
            const Eigen::MatrixXcd prod =
                wigner_D_matrix(l, e1) * wigner_D_matrix(l, e2);
            CHECK((prod - wigner_D_matrix(l, e12)).cwiseAbs().maxCoeff() <
                  1e-12);
        }
    }
}

TEST_CASE("rotation law: Y_lm(g^-1 x) = sum_k D^l_km(g) Y_lk(x)") {
    Rng rng(43);
    for (int trial = 0; trial < 20; ++trial) {
        const Rotation g = random_rotation(rng);
        const EulerZyz e = euler_zyz(g);
        Vec3 x(rng.gaussian(), rng.gaussian(), rng.gaussian());
        x.normalize();
        const Vec3 y = g.matrix().transpose() * x;
        const double theta_x = std::acos(std::clamp(x.z(), -1.0, 1.0));
        const double phi_x = std::atan2(x.y(), x.x());
        const double theta_y = std::acos(std::clamp(y.z(), -1.0, 1.0));
        const double phi_y = std::atan2(y.y(), y.x());
        const Eigen::VectorXcd yx = sph_harmonics(4, theta_x, phi_x);
        const Eigen::VectorXcd yy = sph_harmonics(4, theta_y, phi_y);
        for (int l = 0; l < 4; ++l) {
            const Eigen::MatrixXcd D = wigner_D_matrix(l, e);
            for (int m = -l; m <= l; ++m) {
                Complex rhs(0, 0);
                for (int k = -l; k <= l; ++k) {
                    rhs += D(k + l, m + l) * yx[s2_coeff_index(l, k)];
                }
                CHECK(std::abs(yy[s2_coeff_index(l, m)] - rhs) < 1e-12);
            }
        }
    }
}

TEST_CASE("sht of constants and cos(theta)") {
    const S2Grid grid = build_s2_grid(2);
    const S2Transform tf(grid);

    S2Function ones{2, Eigen::MatrixXd::Ones(grid.node_count(), 1)};
    const S2Spectrum s = tf.forward(ones);
    CHECK(std::abs(s.coeffs(s2_coeff_index(0, 0), 0) -
                   Complex(std::sqrt(4.0 * kPi), 0)) < 1e-12);
    for (int l = 1; l < 2; ++l) {
        for (int m = -l; m <= l; ++m) {
            CHECK(std::abs(s.coeffs(s2_coeff_index(l, m), 0)) < 1e-12);
        }
    }

    S2Function cos_theta{2, Eigen::MatrixXd(grid.node_count(), 1)};
    for (Eigen::Index node = 0; node < grid.node_count(); ++node) {
        cos_theta.values(node, 0) = grid.directions(2, node);
    }
    const S2Spectrum c = tf.forward(cos_theta);
    CHECK(std::abs(c.coeffs(s2_coeff_index(1, 0), 0) -
                   Complex(std::sqrt(4.0 * kPi / 3.0), 0)) < 1e-12);
    CHECK(std::abs(c.coeffs(s2_coeff_index(0, 0), 0)) < 1e-12);
    CHECK(std::abs(c.coeffs(s2_coeff_index(1, 1), 0)) < 1e-12);
}

TEST_CASE("sht round-trip on random bandlimited functions") {
    Rng rng(47);
    for (const int b : {1, 2, 4, 8}) {
        const S2Grid grid = build_s2_grid(b);
        const S2Transform tf(grid);
        const S2Spectrum spec = random_real_s2_spectrum(b, rng);
        const S2Function f = tf.inverse(spec);
        const S2Spectrum back = tf.forward(f);
        CHECK((back.coeffs - spec.coeffs).cwiseAbs().maxCoeff() < 1e-10);
        const S2Function f2 = tf.inverse(back);
        CHECK((f2.values - f.values).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("so3 transform: constants, cos(beta) line, round-trip") {
    const SO3Grid grid = build_so3_grid(2);
    const SO3Transform tf(grid);

    SO3Function ones{2, Eigen::MatrixXd::Ones(grid.node_count(), 1)};
    const SO3Spectrum s = tf.forward(ones);
    CHECK(std::abs(s.coeffs(so3_coeff_index(0, 0, 0), 0) - Complex(1, 0)) <
          1e-12);
    for (int idx = 1; idx < so3_coeff_count(2); ++idx) {
        CHECK(std::abs(s.coeffs(idx, 0)) < 1e-12);
    }

    SO3Function cosb{2, Eigen::MatrixXd(grid.node_count(), 1)};
    for (Eigen::Index node = 0; node < grid.node_count(); ++node) {
        cosb.values(node, 0) = std::cos(grid.euler_at(node).beta);
    }
    const SO3Spectrum cs = tf.forward(cosb);
    CHECK(std::abs(cs.coeffs(so3_coeff_index(1, 0, 0), 0) - Complex(1, 0)) <
          1e-12);
    CHECK(std::abs(cs.coeffs(so3_coeff_index(0, 0, 0), 0)) < 1e-12);
    CHECK(std::abs(cs.coeffs(so3_coeff_index(1, 1, 1), 0)) < 1e-12);
    const SO3Function back = tf.inverse(cs);
    CHECK((back.values - cosb.values).cwiseAbs().maxCoeff() < 1e-10);

    Rng rng(53);
    for (const int b : {1, 2, 4}) {
        const SO3Grid g = build_so3_grid(b);
        const SO3Transform t(g);
        const SO3Spectrum spec = random_real_so3_spectrum(b, rng);
        const SO3Function f = t.inverse(spec);
        const SO3Spectrum round = t.forward(f);
        CHECK((round.coeffs - spec.coeffs).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("transform bandwidth mismatches are rejected") {
    const S2Grid grid = build_s2_grid(2);
    const S2Transform tf(grid);
    S2Function wrong{3, Eigen::MatrixXd::Ones(36, 1)};
    CHECK_THROWS_AS(tf.forward(wrong), std::invalid_argument);
}

TEST_CASE("s2 convolution of constants is 4pi") {
    const S2Grid grid = build_s2_grid(2);
    const SO3Grid out = build_so3_grid(2);
    S2Function f{2, Eigen::MatrixXd::Ones(grid.node_count(), 1)};
    S2KernelBank w{2, 1, 1, Eigen::MatrixXd::Ones(grid.node_count(), 1)};
    const SO3Function conv = s2_convolve(grid, f, w, out);
    CHECK((conv.values.array() - 4.0 * kPi).abs().maxCoeff() < 1e-10);
}

TEST_CASE("s2 convolution of disjoint degrees vanishes") {
    const S2Grid grid = build_s2_grid(2);
    const SO3Grid out = build_so3_grid(2);
    // f pure l=1 (cos theta), w pure l=0 (constant).
    S2Function f{2, Eigen::MatrixXd(grid.node_count(), 1)};
    for (Eigen::Index node = 0; node < grid.node_count(); ++node) {
        f.values(node, 0) = grid.directions(2, node);
    }
    S2KernelBank w{2, 1, 1, Eigen::MatrixXd::Ones(grid.node_count(), 1)};
    const SO3Function conv = s2_convolve(grid, f, w, out);
    CHECK(conv.values.cwiseAbs().maxCoeff() < 1e-10);
    const SO3Function direct = s2_convolve_direct(grid, f, w, out);
    CHECK(direct.values.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("so3 convolution of constants multiplies") {
    const SO3Grid grid = build_so3_grid(2);
    SO3Function f{2, 2.5 * Eigen::MatrixXd::Ones(grid.node_count(), 1)};
    SO3KernelBank w{2, 1, 1, -1.5 * Eigen::MatrixXd::Ones(grid.node_count(), 1)};
    const SO3Function conv = so3_convolve(grid, f, w, grid);
    CHECK((conv.values.array() + 3.75).abs().maxCoeff() < 1e-10);
}

TEST_CASE("spectral convolutions match the quadrature oracle") {
    Rng rng(59);
    const int b = 2;
    const S2Grid s2 = build_s2_grid(b);
    const SO3Grid so3 = build_so3_grid(b);
    const S2Transform s2t(s2);
    const SO3Transform so3t(so3);

    for (int trial = 0; trial < 4; ++trial) {
        // S^2 case: the oracle evaluates the kernel at rotated directions by
        // synthesizing the generating spectrum with the factorial-d basis.
        const S2Spectrum fspec = random_real_s2_spectrum(b, rng);
        const S2Spectrum wspec = random_real_s2_spectrum(b, rng);
        const S2Function f = s2t.inverse(fspec);
        S2KernelBank w{b, 1, 1, s2t.inverse(wspec).values};
        const SO3Function conv = s2_convolve(s2, f, w, so3);
        for (Eigen::Index gnode = 0; gnode < so3.node_count(); ++gnode) {
            const Mat3 rt = so3.rotation_at(gnode).matrix().transpose();
            double acc = 0.0;
            for (Eigen::Index x = 0; x < s2.node_count(); ++x) {
                const Vec3 dir = rt * s2.directions.col(x);
                const double theta =
                    std::atan2(std::hypot(dir.x(), dir.y()), dir.z());
                const double phi = std::atan2(dir.y(), dir.x());
                Complex wv(0, 0);
                for (int l = 0; l < b; ++l) {
                    for (int m = -l; m <= l; ++m) {
                        wv += wspec.coeffs(s2_coeff_index(l, m), 0) *
                              oracle::sph_harmonic(l, m, theta, phi);
                    }
                }
                acc += s2.weights[x] * f.values(x, 0) * wv.real();
            }
            CHECK(std::abs(conv.values(gnode, 0) - acc) < 1e-9);
        }

        // SO(3) case.
        const SO3Spectrum gspec = random_real_so3_spectrum(b, rng);
        const SO3Spectrum wg_spec = random_real_so3_spectrum(b, rng);
        const SO3Function g = so3t.inverse(gspec);
        SO3KernelBank wg{b, 1, 1, so3t.inverse(wg_spec).values};
        const SO3Function gconv = so3_convolve(so3, g, wg, so3);
        for (Eigen::Index gnode = 0; gnode < so3.node_count(); ++gnode) {
            const Rotation ginv = so3.rotation_at(gnode).inverse();
            double acc = 0.0;
            for (Eigen::Index h = 0; h < so3.node_count(); ++h) {
                const EulerZyz rel = euler_zyz(ginv * so3.rotation_at(h));
                Complex wv(0, 0);
                for (int l = 0; l < b; ++l) {
                    for (int m = -l; m <= l; ++m) {
                        for (int n = -l; n <= l; ++n) {
                            wv += wg_spec.coeffs(so3_coeff_index(l, m, n), 0) *
                                  oracle::wigner_D(l, m, n, rel.alpha, rel.beta,
                                                   rel.gamma);
                        }
                    }
                }
                acc += so3.weights[h] * g.values(h, 0) * wv.real();
            }
            CHECK(std::abs(gconv.values(gnode, 0) - acc) < 1e-9);
        }
    }
}

TEST_CASE("convolution is linear in the signal") {
    Rng rng(61);
    const int b = 2;
    const S2Grid s2 = build_s2_grid(b);
    const SO3Grid so3 = build_so3_grid(b);
    const S2Transform s2t(s2);
    const S2Function f1 = s2t.inverse(random_real_s2_spectrum(b, rng));
    const S2Function f2 = s2t.inverse(random_real_s2_spectrum(b, rng));
    S2KernelBank w{b, 1, 1, s2t.inverse(random_real_s2_spectrum(b, rng)).values};
    const double a = 1.7;
    S2Function mix{b, a * f1.values + f2.values};
    const SO3Function lhs = s2_convolve(s2, mix, w, so3);
    const SO3Function rhs1 = s2_convolve(s2, f1, w, so3);
    const SO3Function rhs2 = s2_convolve(s2, f2, w, so3);
    CHECK((lhs.values - a * rhs1.values - rhs2.values).cwiseAbs().maxCoeff() <
          1e-12);
}

TEST_CASE("so3_integrate basics") {
    const SO3Grid grid = build_so3_grid(2);
    SO3Function ones{2, Eigen::MatrixXd::Ones(grid.node_count(), 2)};
    const Eigen::VectorXd i1 = so3_integrate(grid, ones);
    CHECK(i1[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(i1[1] == doctest::Approx(1.0).epsilon(1e-12));

    SO3Function cosb{2, Eigen::MatrixXd(grid.node_count(), 1)};
    for (Eigen::Index node = 0; node < grid.node_count(); ++node) {
        cosb.values(node, 0) = std::cos(grid.euler_at(node).beta);
    }
    CHECK(std::abs(so3_integrate(grid, cosb)[0]) < 1e-10);

    // Haar invariance through spectral left translation.
    Rng rng(67);
    const SO3Transform tf(grid);
    const SO3Spectrum spec = random_real_so3_spectrum(2, rng);
    const SO3Function f = tf.inverse(spec);
    const Eigen::VectorXd base = so3_integrate(grid, f);
    for (int trial = 0; trial < 5; ++trial) {
        const EulerZyz e = euler_zyz(random_rotation(rng));
        const SO3Function g = tf.inverse(left_translate(spec, e));
        CHECK(std::abs(so3_integrate(grid, g)[0] - base[0]) < 1e-10);
    }
}

TEST_CASE("equivariance suite passes at b=2") {
    const auto checks = verify_equivariance(2, 2, 71);
    for (const auto& c : checks) {
        INFO(c.name, " measured=", c.measured);
        CHECK(c.pass);
    }
}

TEST_CASE("spectrum JSON dump shape") {
    const S2Grid grid = build_s2_grid(1);
    const S2Transform tf(grid);
    S2Function ones{1, Eigen::MatrixXd::Ones(grid.node_count(), 1)};
    const std::string json = spectrum_to_json(tf.forward(ones));
    CHECK(json.front() == '[');
    CHECK(json.find("[0,0,") != std::string::npos);
}
