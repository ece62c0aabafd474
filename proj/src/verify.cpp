#include "rotinv/verify.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rotinv {

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Random real bandlimited S^2 function via a conjugate-symmetric spectrum.
S2Spectrum random_s2_spectrum(int bandwidth, int channels, Rng& rng) {
    S2Spectrum spec;
    spec.bandwidth = bandwidth;
    spec.coeffs = MatrixXcd::Zero(s2_coeff_count(bandwidth), channels);
    for (int ch = 0; ch < channels; ++ch) {
        for (int l = 0; l < bandwidth; ++l) {
            spec.coeffs(s2_coeff_index(l, 0), ch) = rng.gaussian();
            for (int m = 1; m <= l; ++m) {
                const Complex v(rng.gaussian(), rng.gaussian());
                spec.coeffs(s2_coeff_index(l, m), ch) = v;
                spec.coeffs(s2_coeff_index(l, -m), ch) =
                    (m % 2 == 0 ? 1.0 : -1.0) * std::conj(v);
            }
        }
    }
    return spec;
}

SO3Spectrum random_so3_spectrum(int bandwidth, int channels, Rng& rng) {
    SO3Spectrum spec;
    spec.bandwidth = bandwidth;
    spec.coeffs = MatrixXcd::Zero(so3_coeff_count(bandwidth), channels);
    for (int ch = 0; ch < channels; ++ch) {
        for (int l = 0; l < bandwidth; ++l) {
            for (int m = -l; m <= l; ++m) {
                for (int n = -l; n <= l; ++n) {
                    if (std::make_pair(-m, -n) < std::make_pair(m, n)) continue;
                    if (m == 0 && n == 0) {
                        spec.coeffs(so3_coeff_index(l, 0, 0), ch) =
                            rng.gaussian();
                        continue;
                    }
                    const Complex v(rng.gaussian(), rng.gaussian());
                    spec.coeffs(so3_coeff_index(l, m, n), ch) = v;
                    spec.coeffs(so3_coeff_index(l, -m, -n), ch) =
                        ((m - n) % 2 == 0 ? 1.0 : -1.0) * std::conj(v);
                }
            }
        }
    }
    return spec;
}

CheckResult make_check(const std::string& name, double measured,
                       double threshold) {
    return CheckResult{name, measured, threshold, measured <= threshold};
}

}  // namespace

bool all_pass(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const CheckResult& c) { return c.pass; });
}

std::string report_to_json(const std::vector<CheckResult>& results) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : results) {
        arr.push_back(nlohmann::json{{"name", c.name},
                                     {"measured", c.measured},
                                     {"threshold", c.threshold},
                                     {"pass", c.pass}});
    }
    return arr.dump(2);
}

std::vector<CheckResult> verify_transforms(const std::vector<int>& bandwidths,
                                           std::uint64_t seed) {
    std::vector<CheckResult> checks;
    Rng rng(seed);
    for (const int b : bandwidths) {
        const S2Grid s2 = build_s2_grid(b);
        const SO3Grid so3 = build_so3_grid(b);
        checks.push_back(make_check(
            "s2 quadrature mass 4pi, b=" + std::to_string(b),
            std::abs(s2.weights.sum() - 4.0 * kPi), 1e-10));
        checks.push_back(make_check("so3 quadrature mass 1, b=" +
                                        std::to_string(b),
                                    std::abs(so3.weights.sum() - 1.0), 1e-10));

        const S2Transform s2t(s2);
        const S2Spectrum fs = random_s2_spectrum(b, 2, rng);
        const S2Function f = s2t.inverse(fs);
        const S2Function f2 = s2t.inverse(s2t.forward(f));
        checks.push_back(make_check(
            "s2 round-trip, b=" + std::to_string(b),
            (f.values - f2.values).cwiseAbs().maxCoeff(), 1e-10));

        const SO3Transform so3t(so3);
        const SO3Spectrum gs = random_so3_spectrum(b, 2, rng);
        const SO3Function g = so3t.inverse(gs);
        const SO3Function g2 = so3t.inverse(so3t.forward(g));
        checks.push_back(make_check(
            "so3 round-trip, b=" + std::to_string(b),
            (g.values - g2.values).cwiseAbs().maxCoeff(), 1e-10));
    }
    return checks;
}

std::vector<CheckResult> verify_equivariance(int bandwidth, int trials,
                                             std::uint64_t seed) {
    std::vector<CheckResult> checks;
    Rng rng(seed);
    const int b = bandwidth;
    const S2Grid s2 = build_s2_grid(b);
    const SO3Grid so3_out = build_so3_grid(b);
    const SO3Grid so3_in = so3_out;
    const S2Transform s2t(s2);
    const SO3Transform so3t(so3_out);

    double s2_oracle_err = 0.0;
    double so3_oracle_err = 0.0;
    double s2_equiv_err = 0.0;
    double so3_equiv_err = 0.0;
    double invariant_err = 0.0;

    for (int trial = 0; trial < trials; ++trial) {
        // S^2 convolution: spectral vs direct quadrature.
        const S2Spectrum fspec = random_s2_spectrum(b, 1, rng);
        const S2Function f = s2t.inverse(fspec);
        S2KernelBank w;
        w.bandwidth = b;
        w.cin = 1;
        w.cout = 1;
        const S2Spectrum wspec = random_s2_spectrum(b, 1, rng);
        w.samples = s2t.inverse(wspec).values;
        const SO3Function conv = s2_convolve(s2, f, w, so3_out);
        const SO3Function conv_direct = s2_convolve_direct(s2, f, w, so3_out);
        s2_oracle_err = std::max(
            s2_oracle_err,
            (conv.values - conv_direct.values).cwiseAbs().maxCoeff());

        // SO(3) convolution: spectral vs direct quadrature.
        const SO3Spectrum gspec = random_so3_spectrum(b, 1, rng);
        const SO3Function g = so3t.inverse(gspec);
        SO3KernelBank wg;
        wg.bandwidth = b;
        wg.cin = 1;
        wg.cout = 1;
        const SO3Spectrum wgspec = random_so3_spectrum(b, 1, rng);
        wg.samples = so3t.inverse(wgspec).values;
        const SO3Function gconv = so3_convolve(so3_in, g, wg, so3_out);
        const SO3Function gconv_direct =
            so3_convolve_direct(so3_in, g, wg, so3_out);
        so3_oracle_err = std::max(
            so3_oracle_err,
            (gconv.values - gconv_direct.values).cwiseAbs().maxCoeff());

        // Left equivariance over every output-grid rotation. Rotation and
        // translation act on the spectra; values come from one cached
        // synthesis per side.
        const SO3Spectrum conv_spec = s2_pair_spectra(fspec, wspec, 1, 1, b);
        const SO3Spectrum gconv_spec =
            so3_pair_spectra(gspec, wgspec, 1, 1, b);
        const VectorXd base_integral = so3_integrate(so3_out, conv);
        for (Index node = 0; node < so3_out.node_count(); ++node) {
            const EulerZyz g0 = so3_out.euler_at(node);
            const SO3Spectrum conv_rot_spec =
                s2_pair_spectra(rotate(fspec, g0), wspec, 1, 1, b);
            const SO3Spectrum translated_spec = left_translate(conv_spec, g0);
            const SO3Function conv_rot = so3t.inverse(conv_rot_spec);
            const SO3Function translated = so3t.inverse(translated_spec);
            s2_equiv_err = std::max(
                s2_equiv_err,
                (conv_rot.values - translated.values).cwiseAbs().maxCoeff());

            const SO3Spectrum gconv_rot_spec =
                so3_pair_spectra(left_translate(gspec, g0), wgspec, 1, 1, b);
            const SO3Function gconv_rot = so3t.inverse(gconv_rot_spec);
            const SO3Function gtranslated =
                so3t.inverse(left_translate(gconv_spec, g0));
            so3_equiv_err = std::max(
                so3_equiv_err, (gconv_rot.values - gtranslated.values)
                                   .cwiseAbs()
                                   .maxCoeff());

            const VectorXd translated_integral =
                so3_integrate(so3_out, translated);
            invariant_err =
                std::max(invariant_err,
                         (translated_integral - base_integral)
                             .cwiseAbs()
                             .maxCoeff());
        }
    }
    checks.push_back(
        make_check("s2 convolution vs direct quadrature", s2_oracle_err, 1e-9));
    checks.push_back(make_check("so3 convolution vs direct quadrature",
                                so3_oracle_err, 1e-9));
    checks.push_back(
        make_check("s2 convolution left-equivariance", s2_equiv_err, 1e-9));
    checks.push_back(
        make_check("so3 convolution left-equivariance", so3_equiv_err, 1e-9));
    checks.push_back(
        make_check("invariant layer under left translation", invariant_err,
                   1e-10));
    return checks;
}

InvarianceReport verify_invariance(const Model& model,
                                   const std::vector<PointCloud>& clouds,
                                   int haar_rotations, std::uint64_t seed) {
    if (!model.config.invariant_attention) {
        throw std::invalid_argument(
            "verify_invariance: model must use invariant attention");
    }
    NetworkContext ctx(model.config);
    const SO3Grid rot_grid = build_so3_grid(model.config.s2_bandwidth_out);
    Rng rng(seed);

    InvarianceReport report;
    long long grid_total = 0, grid_agree = 0;
    long long haar_total = 0, haar_agree = 0;

    for (const PointCloud& cloud : clouds) {
        const ForwardOutput base =
            forward(model, ctx, cloud, 0, Mode::eval, nullptr);
        const int base_label = base.logits[1] > base.logits[0] ? 1 : 0;
        const double base_scale =
            std::max(base.feature.cwiseAbs().maxCoeff(), 1e-12);

        for (Index node = 0; node < rot_grid.node_count(); ++node) {
            const PointCloud rotated =
                rotate_cloud(cloud, rot_grid.rotation_at(node));
            const ForwardOutput out =
                forward(model, ctx, rotated, 0, Mode::eval, nullptr);
            const int label = out.logits[1] > out.logits[0] ? 1 : 0;
            ++grid_total;
            if (label == base_label) ++grid_agree;
            report.grid_max_feature_dev = std::max(
                report.grid_max_feature_dev,
                (out.feature - base.feature).cwiseAbs().maxCoeff() /
                    base_scale);
        }
        for (int r = 0; r < haar_rotations; ++r) {
            const PointCloud rotated = rotate_cloud(cloud, random_rotation(rng));
            const ForwardOutput out =
                forward(model, ctx, rotated, 0, Mode::eval, nullptr);
            const int label = out.logits[1] > out.logits[0] ? 1 : 0;
            ++haar_total;
            if (label == base_label) ++haar_agree;
            report.haar_max_feature_dev = std::max(
                report.haar_max_feature_dev,
                (out.feature - base.feature).cwiseAbs().maxCoeff() /
                    base_scale);
        }
    }
    report.grid_label_agreement =
        grid_total == 0 ? 1.0
                        : static_cast<double>(grid_agree) /
                              static_cast<double>(grid_total);
    report.haar_label_agreement =
        haar_total == 0 ? 1.0
                        : static_cast<double>(haar_agree) /
                              static_cast<double>(haar_total);
    report.checks.push_back(CheckResult{"grid-rotation label agreement",
                                        report.grid_label_agreement, 1.0,
                                        report.grid_label_agreement >= 1.0});
    report.checks.push_back(CheckResult{"haar-rotation label agreement",
                                        report.haar_label_agreement, 0.99,
                                        report.haar_label_agreement >= 0.99});
    return report;
}

HullReport hull_membership_report(int cloud_count, int points_per_cloud,
                                  Index k, std::uint64_t seed) {
    if (points_per_cloud < 4 || k < 1 || k > points_per_cloud) {
        throw std::invalid_argument("hull_membership_report: bad sizes");
    }
    const S2Grid grid = build_s2_grid(4);
    Rng rng(seed);
    HullReport report;
    report.clouds = 2 * cloud_count;
    long long convex_sel = 0, convex_hit = 0;
    long long general_sel = 0, general_hit = 0;
    long long argmax_hit = 0;

    auto run_cloud = [&](const PointCloud& cloud, bool convex_position) {
        const Vec3 mean = cloud.points.rowwise().mean();
        const double bounding =
            (cloud.points.colwise() - mean).colwise().norm().maxCoeff();
        const auto responses =
            build_sphere_responses(cloud.points, 0.25 * bounding, grid);
        const HullSelection sel =
            hull_downsample(responses, k);
        const auto vertices = convex_hull_vertices(cloud);
        auto is_vertex = [&](Index i) {
            return std::find(vertices.begin(), vertices.end(), i) !=
                   vertices.end();
        };
        Index top = 0;
        for (Index i = 1; i < sel.scores.size(); ++i) {
            if (sel.scores[i] > sel.scores[top]) top = i;
        }
        if (!convex_position) {
            ++general_sel;  // counts clouds for the argmax statistic
            if (is_vertex(top)) ++argmax_hit;
        }
        for (const Index s : sel.indices) {
            if (convex_position) {
                ++convex_sel;
                if (is_vertex(s)) ++convex_hit;
            } else {
                if (is_vertex(s)) ++general_hit;
            }
        }
    };

    for (int c = 0; c < cloud_count; ++c) {
        // Ellipsoid surface: every point is in convex position.
        PointCloud cloud;
        cloud.points.resize(3, points_per_cloud);
        const Vec3 axes(0.5 + rng.uniform(), 0.5 + rng.uniform(),
                        0.5 + rng.uniform());
        for (int i = 0; i < points_per_cloud; ++i) {
            Vec3 u(rng.gaussian(), rng.gaussian(), rng.gaussian());
            while (u.norm() < 1e-8) {
                u = Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
            }
            u.normalize();
            cloud.points.col(i) = axes.cwiseProduct(u);
        }
        run_cloud(cloud, true);
    }
    for (int c = 0; c < cloud_count; ++c) {
        // Uniform ball interior.
        PointCloud cloud;
        cloud.points.resize(3, points_per_cloud);
        for (int i = 0; i < points_per_cloud; ++i) {
            Vec3 p;
            do {
                p = Vec3(2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0,
                         2.0 * rng.uniform() - 1.0);
            } while (p.norm() > 1.0);
            cloud.points.col(i) = p;
        }
        run_cloud(cloud, false);
    }

    report.convex_position_fraction =
        convex_sel == 0 ? 1.0
                        : static_cast<double>(convex_hit) /
                              static_cast<double>(convex_sel);
    report.argmax_vertex_fraction =
        general_sel == 0 ? 1.0
                         : static_cast<double>(argmax_hit) /
                               static_cast<double>(general_sel);
    report.overall_vertex_fraction =
        general_sel == 0
            ? 1.0
            : static_cast<double>(general_hit) /
                  static_cast<double>(general_sel * k);
    return report;
}

}  // namespace rotinv
