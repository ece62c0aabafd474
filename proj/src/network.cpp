#include "rotinv/network.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace rotinv {

namespace {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;

using Eigen::Index;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

// Columns (node x (k*ch), col = h*ch + c)  <->  stacked ((node*k) x ch).
MatrixXd to_channel_major(const MatrixXd& m, Index k, Index ch) {
    const Index nodes = m.rows();
    MatrixXd out(nodes * k, ch);
    for (Index h = 0; h < k; ++h) {
        for (Index c = 0; c < ch; ++c) {
            out.col(c).segment(h * nodes, nodes) = m.col(h * ch + c);
        }
    }
    return out;
}

MatrixXd from_channel_major(const MatrixXd& m, Index k, Index ch) {
    const Index nodes = m.rows() / k;
    MatrixXd out(nodes, k * ch);
    for (Index h = 0; h < k; ++h) {
        for (Index c = 0; c < ch; ++c) {
            out.col(h * ch + c) = m.col(c).segment(h * nodes, nodes);
        }
    }
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (s2_bandwidth_in < 1 || s2_bandwidth_out < 1 || so3_bandwidth_in < 1 ||
        so3_bandwidth_out < 1) {
        throw std::invalid_argument("ModelConfig: bandwidths must be >= 1");
    }
    if (s2_bandwidth_out > s2_bandwidth_in ||
        so3_bandwidth_out > so3_bandwidth_in) {
        throw std::invalid_argument(
            "ModelConfig: bandwidths must not increase along the stack");
    }
    if (so3_bandwidth_in != s2_bandwidth_out) {
        throw std::invalid_argument(
            "ModelConfig: so3 input bandwidth must match s2 output bandwidth");
    }
    if (channels_in != 1) {
        throw std::invalid_argument("ModelConfig: channels_in must be 1");
    }
    if (channels_mid < 1 || channels_out < 1) {
        throw std::invalid_argument("ModelConfig: channel counts must be >= 1");
    }
    if (hull_count < 1 || attention_count < hull_count) {
        throw std::invalid_argument(
            "ModelConfig: need 1 <= hull_count <= attention_count");
    }
    if (radius_fraction <= 0.0) {
        throw std::invalid_argument("ModelConfig: radius_fraction must be > 0");
    }
    if (grid_oversample < 1) {
        throw std::invalid_argument("ModelConfig: grid_oversample must be >= 1");
    }
    if (classes != 2) {
        throw std::invalid_argument("ModelConfig: only 2 classes supported");
    }
}

ParamLayout ParamLayout::build(const ModelConfig& config) {
    config.validate();
    const Index s2_nodes = 4 * static_cast<Index>(config.s2_bandwidth_in) *
                           config.s2_bandwidth_in;
    const Index so3_kernel_side = 2 * static_cast<Index>(config.so3_bandwidth_out);
    const Index so3_kernel_nodes =
        so3_kernel_side * so3_kernel_side * so3_kernel_side;
    const Index att_dim = config.invariant_attention ? 1 : 3;

    ParamLayout layout;
    auto add = [&layout](const std::string& name,
                         std::vector<Index> shape) {
        Entry e;
        e.name = name;
        e.shape = std::move(shape);
        e.size = 1;
        for (const Index s : e.shape) e.size *= s;
        e.offset = layout.total;
        layout.total += e.size;
        layout.entries.push_back(std::move(e));
    };
    add("attention.weight", {att_dim});
    add("attention.bias", {1});
    add("s2.kernels",
        {config.channels_in, config.channels_mid, s2_nodes});
    add("bn1.gamma", {config.channels_mid});
    add("bn1.beta", {config.channels_mid});
    add("so3.kernels",
        {config.channels_mid, config.channels_out, so3_kernel_nodes});
    add("bn2.gamma", {config.channels_out});
    add("bn2.beta", {config.channels_out});
    add("fc.weight", {config.classes, config.channels_out});
    add("fc.bias", {config.classes});
    return layout;
}

const ParamLayout::Entry& ParamLayout::find(const std::string& name) const {
    for (const auto& e : entries) {
        if (e.name == name) return e;
    }
    throw std::invalid_argument("ParamLayout: unknown entry " + name);
}

RunningStats RunningStats::initial(const ModelConfig& config) {
    RunningStats s;
    s.bn1_mean = VectorXd::Zero(config.channels_mid);
    s.bn1_var = VectorXd::Ones(config.channels_mid);
    s.bn2_mean = VectorXd::Zero(config.channels_out);
    s.bn2_var = VectorXd::Ones(config.channels_out);
    return s;
}

VectorXd init_parameters(const ModelConfig& config, std::uint64_t seed) {
    const ParamLayout layout = ParamLayout::build(config);
    VectorXd params = VectorXd::Zero(layout.total);
    Rng rng(seed);
    auto fill_gaussian = [&](const std::string& name, double scale) {
        const auto& e = layout.find(name);
        for (Index i = 0; i < e.size; ++i) {
            params[e.offset + i] = scale * rng.gaussian();
        }
    };
    // Attention starts neutral (uniform confidences).
    const Index s2_nodes = layout.find("s2.kernels").shape.back();
    fill_gaussian("s2.kernels", 1.0 / std::sqrt(static_cast<double>(s2_nodes)));
    const Index so3_nodes = layout.find("so3.kernels").shape.back();
    fill_gaussian("so3.kernels",
                  1.0 / std::sqrt(static_cast<double>(so3_nodes *
                                                      config.channels_mid)));
    params.segment(layout.find("bn1.gamma").offset, config.channels_mid)
        .setOnes();
    params.segment(layout.find("bn2.gamma").offset, config.channels_out)
        .setOnes();
    fill_gaussian("fc.weight",
                  1.0 / std::sqrt(static_cast<double>(config.channels_out)));
    return params;
}

ParameterCount parameter_count(const ModelConfig& config) {
    const ParamLayout layout = ParamLayout::build(config);
    ParameterCount out;
    for (const auto& e : layout.entries) {
        out.items.push_back({e.name, e.shape, e.size});
    }
    out.total = layout.total;
    return out;
}

double response_at(const Eigen::Matrix3Xd& sub_cloud, Index center,
                   double radius, const Vec3& direction) {
    const Vec3 c = sub_cloud.col(center);
    double acc = 0.0;
    for (Index j = 0; j < sub_cloud.cols(); ++j) {
        const Vec3 diff = sub_cloud.col(j) - c;
        if (diff.norm() > radius) acc += direction.dot(diff);
    }
    return acc;
}

std::vector<SphereResponseField> build_sphere_responses(
    const Eigen::Matrix3Xd& sub_cloud, double radius, const S2Grid& grid) {
    if (sub_cloud.cols() < 2) {
        throw std::invalid_argument(
            "build_sphere_responses: need at least 2 points");
    }
    if (radius <= 0.0) {
        throw std::invalid_argument("build_sphere_responses: radius must be > 0");
    }
    std::vector<SphereResponseField> fields;
    fields.reserve(static_cast<std::size_t>(sub_cloud.cols()));
    for (Index i = 0; i < sub_cloud.cols(); ++i) {
        SphereResponseField f;
        f.center = i;
        f.radius = radius;
        // The sum is linear in the direction, so accumulate the vector once.
        Vec3 total = Vec3::Zero();
        bool any = false;
        for (Index j = 0; j < sub_cloud.cols(); ++j) {
            const Vec3 diff = sub_cloud.col(j) - sub_cloud.col(i);
            if (diff.norm() > radius) {
                total += diff;
                any = true;
            }
        }
        f.values = grid.directions.transpose() * total;
        f.empty_sum = !any;
        fields.push_back(std::move(f));
    }
    return fields;
}

HullSelection hull_downsample(const std::vector<SphereResponseField>& responses,
                              Index k) {
    const Index n = static_cast<Index>(responses.size());
    if (k < 1 || k > n) {
        throw std::invalid_argument("hull_downsample: k outside [1, |Y|]");
    }
    HullSelection sel;
    sel.scores.resize(n);
    for (Index i = 0; i < n; ++i) {
        sel.scores[i] = responses[static_cast<std::size_t>(i)].values.maxCoeff();
    }
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return sel.scores[a] > sel.scores[b];
    });
    sel.indices.assign(order.begin(), order.begin() + k);
    std::sort(sel.indices.begin(), sel.indices.end());
    return sel;
}

MatrixXd batchnorm_forward(const MatrixXd& values, const VectorXd& gamma,
                           const VectorXd& beta, Mode mode,
                           const VectorXd& running_mean,
                           const VectorXd& running_var, BatchNormCache* cache,
                           VectorXd* update_mean, VectorXd* update_var) {
    const Index ch = values.cols();
    if (gamma.size() != ch || beta.size() != ch) {
        throw std::invalid_argument("batchnorm_forward: channel mismatch");
    }
    VectorXd mean(ch), var(ch);
    if (mode == Mode::train) {
        const double m = static_cast<double>(values.rows());
        mean = values.colwise().mean().transpose();
        var = (values.colwise().squaredNorm() / m).transpose();
        var -= mean.cwiseProduct(mean);
        var = var.cwiseMax(0.0);
        if (update_mean != nullptr) {
            *update_mean = kBnMomentum * running_mean + (1.0 - kBnMomentum) * mean;
            *update_var = kBnMomentum * running_var + (1.0 - kBnMomentum) * var;
        }
    } else {
        if (running_mean.size() != ch || running_var.size() != ch) {
            throw std::invalid_argument("batchnorm_forward: stats mismatch");
        }
        mean = running_mean;
        var = running_var;
    }
    const VectorXd inv_std = (var.array() + kBnEps).sqrt().inverse().matrix();
    MatrixXd normalized = ((values.rowwise() - mean.transpose()).array().rowwise() *
                           inv_std.transpose().array())
                              .matrix();
    MatrixXd out = ((normalized.array().rowwise() * gamma.transpose().array())
                        .rowwise() +
                    beta.transpose().array())
                       .matrix();
    if (cache != nullptr) {
        cache->mean = mean;
        cache->var = var;
        cache->normalized = normalized;
    }
    return out;
}

namespace {

// Reverse of batchnorm_forward for one call; returns d(values) and
// accumulates parameter gradients.
MatrixXd batchnorm_backward(const MatrixXd& dout, const BatchNormCache& cache,
                            const VectorXd& gamma, Mode mode,
                            VectorXd& dgamma, VectorXd& dbeta) {
    dgamma += (dout.array() * cache.normalized.array())
                  .colwise()
                  .sum()
                  .matrix()
                  .transpose();
    dbeta += dout.colwise().sum().transpose();
    const VectorXd inv_std =
        (cache.var.array() + kBnEps).sqrt().inverse().matrix();
    if (mode == Mode::eval) {
        return (dout.array().rowwise() *
                (gamma.cwiseProduct(inv_std)).transpose().array())
            .matrix();
    }
    const Eigen::RowVectorXd mean_dout = dout.colwise().mean();
    const Eigen::RowVectorXd mean_dout_xhat =
        (dout.array() * cache.normalized.array()).colwise().mean().matrix();
    MatrixXd dx = dout.rowwise() - mean_dout;
    dx -= (cache.normalized.array().rowwise() * mean_dout_xhat.array()).matrix();
    dx = (dx.array().rowwise() * (gamma.cwiseProduct(inv_std)).transpose().array())
             .matrix();
    return dx;
}

}  // namespace

NetworkContext::NetworkContext(const ModelConfig& config)
    : config_(config),
      layout_(ParamLayout::build(config)),
      s2_grid_(build_s2_grid(config.s2_bandwidth_in)),
      so3_mid_grid_(
          build_so3_grid(config.s2_bandwidth_out * config.grid_oversample)),
      so3_out_grid_(
          build_so3_grid(config.so3_bandwidth_out * config.grid_oversample)),
      so3_kernel_grid_(build_so3_grid(config.so3_bandwidth_out)),
      s2_transform_(s2_grid_),
      so3_kernel_transform_(so3_kernel_grid_),
      mid_synthesis_(
          so3_synthesis_matrix(so3_mid_grid_, config.s2_bandwidth_out)),
      mid_analysis_(
          so3_analysis_matrix(so3_mid_grid_, config.so3_bandwidth_in)),
      out_synthesis_(
          so3_synthesis_matrix(so3_out_grid_, config.so3_bandwidth_out)) {}

namespace {

struct ParamView {
    Eigen::Map<const VectorXd> att_weight;
    double att_bias;
    Eigen::Map<const MatrixXd> s2_kernels;   // s2 nodes x (cin*cmid)
    Eigen::Map<const VectorXd> bn1_gamma;
    Eigen::Map<const VectorXd> bn1_beta;
    Eigen::Map<const MatrixXd> so3_kernels;  // kernel nodes x (cmid*cout)
    Eigen::Map<const VectorXd> bn2_gamma;
    Eigen::Map<const VectorXd> bn2_beta;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        fc_weight;                           // classes x cout
    Eigen::Map<const VectorXd> fc_bias;
};

ParamView view_params(const VectorXd& params, const ParamLayout& layout,
                      const ModelConfig& cfg) {
    if (params.size() != layout.total) {
        throw std::invalid_argument("parameter vector size mismatch");
    }
    const auto& aw = layout.find("attention.weight");
    const auto& s2 = layout.find("s2.kernels");
    const auto& so3 = layout.find("so3.kernels");
    const auto& fw = layout.find("fc.weight");
    return ParamView{
        {params.data() + aw.offset, aw.size},
        params[layout.find("attention.bias").offset],
        {params.data() + s2.offset, s2.shape[2],
         s2.shape[0] * s2.shape[1]},
        {params.data() + layout.find("bn1.gamma").offset, cfg.channels_mid},
        {params.data() + layout.find("bn1.beta").offset, cfg.channels_mid},
        {params.data() + so3.offset, so3.shape[2],
         so3.shape[0] * so3.shape[1]},
        {params.data() + layout.find("bn2.gamma").offset, cfg.channels_out},
        {params.data() + layout.find("bn2.beta").offset, cfg.channels_out},
        {params.data() + fw.offset, cfg.classes, cfg.channels_out},
        {params.data() + layout.find("fc.bias").offset, cfg.classes}};
}

// Attention scorer inputs for given cloud indices of a centered cloud:
// unit directions, or distances in invariant mode.
MatrixXd attention_features_for(const Eigen::Matrix3Xd& centered,
                                const std::vector<Index>& indices,
                                bool invariant) {
    MatrixXd feats(invariant ? 1 : 3, static_cast<Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Vec3 p = centered.col(indices[i]);
        const double norm = p.norm();
        if (norm == 0.0) {
            throw std::invalid_argument(
                "attention feature undefined for a point at the centroid");
        }
        if (invariant) {
            feats(0, static_cast<Index>(i)) = norm;
        } else {
            feats.col(static_cast<Index>(i)) = p / norm;
        }
    }
    return feats;
}

// Sample-local stages up to the weighted response fields.
SampleState sample_frontend(const Model& model, const NetworkContext& ctx,
                            const PointCloud& cloud,
                            const std::vector<Index>& selected_cloud_indices,
                            SelectionMode sel_mode) {
    const ModelConfig& cfg = ctx.config();
    const ParamView p = view_params(model.params, ctx.layout(), cfg);

    // Center (and optionally rescale) about the centroid.
    const Centroid centroid = compute_centroid(cloud);
    Eigen::Matrix3Xd centered = cloud.points.colwise() - centroid.coords;
    if (cfg.normalize_scale) {
        const double radius = centered.colwise().norm().maxCoeff();
        if (radius <= 0.0) {
            throw std::invalid_argument("forward: degenerate cloud");
        }
        centered /= radius;
    }

    const Index count = static_cast<Index>(selected_cloud_indices.size());
    if (count < cfg.hull_count) {
        throw std::invalid_argument("forward: selection smaller than hull_count");
    }

    SampleState st;
    st.selection.indices = selected_cloud_indices;
    st.selection.mode = sel_mode;
    st.attention_features = attention_features_for(
        centered, selected_cloud_indices, cfg.invariant_attention);
    if (cfg.attention_enabled) {
        st.selected_confidences = attention_confidences(
            st.attention_features, AttentionParams{p.att_weight, p.att_bias});
    } else {
        st.selected_confidences = VectorXd::Ones(count);
    }
    st.selection.confidences = st.selected_confidences;

    st.sub_cloud.resize(3, count);
    for (Index i = 0; i < count; ++i) {
        st.sub_cloud.col(i) =
            centered.col(selected_cloud_indices[static_cast<std::size_t>(i)]);
    }

    // Exclusion radius from the selected points' bounding sphere.
    const Vec3 sub_mean = st.sub_cloud.rowwise().mean();
    const double bounding =
        (st.sub_cloud.colwise() - sub_mean).colwise().norm().maxCoeff();
    if (bounding <= 0.0) {
        throw std::invalid_argument("forward: selected points coincide");
    }
    st.radius = cfg.radius_fraction * bounding;

    const auto responses =
        build_sphere_responses(st.sub_cloud, st.radius, ctx.s2_grid());
    for (const auto& f : responses) {
        if (f.empty_sum) ++st.empty_response_count;
    }
    const HullSelection hull = hull_downsample(responses, cfg.hull_count);
    st.hull_indices = hull.indices;
    st.hull_cloud_indices.reserve(hull.indices.size());
    for (const Index h : hull.indices) {
        st.hull_cloud_indices.push_back(
            selected_cloud_indices[static_cast<std::size_t>(h)]);
    }

    const Index k = cfg.hull_count;
    st.fields.resize(ctx.s2_grid().node_count(), k);
    for (Index j = 0; j < k; ++j) {
        st.fields.col(j) =
            responses[static_cast<std::size_t>(hull.indices[
                static_cast<std::size_t>(j)])]
                .values;
    }

    // Confidence weighting of the hull fields; gradients reach the attention
    // parameters through these factors. Normalizing over the hull set keeps
    // the weights scale-free: only relative preferences among the used
    // points carry gradient, so a task with no attention signal exerts no
    // systematic pull on the scorer.
    double conf_sum = 0.0;
    for (const Index h : hull.indices) {
        conf_sum += st.selected_confidences[h];
    }
    st.hull_weights.resize(k);
    for (Index j = 0; j < k; ++j) {
        st.hull_weights[j] =
            st.selected_confidences[hull.indices[static_cast<std::size_t>(j)]] /
            conf_sum;
    }
    return st;
}

std::vector<Index> run_attention(const Model& model, const NetworkContext& ctx,
                                 const PointCloud& cloud, std::uint64_t seed,
                                 Mode mode, SelectionMode& sel_mode_out) {
    const ModelConfig& cfg = ctx.config();
    if (cloud.size() < cfg.hull_count) {
        throw std::invalid_argument("forward: cloud smaller than hull_count");
    }
    const ParamView p = view_params(model.params, ctx.layout(), cfg);
    const Centroid centroid = compute_centroid(cloud);
    const DirectionSet dirs = unit_directions(cloud, centroid);
    const Index candidates = static_cast<Index>(dirs.candidate_indices.size());
    const Index count = std::min<Index>(cfg.attention_count, candidates);
    if (count < cfg.hull_count) {
        throw std::invalid_argument("forward: not enough candidate points");
    }

    VectorXd confidences;
    if (cfg.attention_enabled) {
        MatrixXd feats;
        if (cfg.invariant_attention) {
            feats.resize(1, candidates);
            for (Index i = 0; i < candidates; ++i) {
                feats(0, i) =
                    (cloud.points.col(dirs.candidate_indices[
                         static_cast<std::size_t>(i)]) -
                     centroid.coords)
                        .norm();
            }
            if (cfg.normalize_scale) {
                const double radius =
                    (cloud.points.colwise() - centroid.coords)
                        .colwise()
                        .norm()
                        .maxCoeff();
                feats /= radius;
            }
        } else {
            feats = dirs.directions;
        }
        confidences = attention_confidences(
            feats, AttentionParams{p.att_weight, p.att_bias});
    } else {
        confidences = VectorXd::Ones(candidates);
    }

    std::uint64_t draw_seed = seed;
    if (mode == Mode::train) {
        sel_mode_out = SelectionMode::stochastic;
    } else if (cfg.seeded_eval_selection) {
        sel_mode_out = SelectionMode::stochastic;
        draw_seed = Rng::derive(seed, 0xE7A1);
    } else {
        sel_mode_out = SelectionMode::top_k;
    }
    const AttentionSelection sel =
        select_attention(confidences, count, sel_mode_out, draw_seed);
    std::vector<Index> cloud_indices;
    cloud_indices.reserve(sel.indices.size());
    for (const Index i : sel.indices) {
        cloud_indices.push_back(
            dirs.candidate_indices[static_cast<std::size_t>(i)]);
    }
    return cloud_indices;
}

// Batched convolution stack and readout over prepared sample states.
ForwardTrace run_core(const Model& model, const NetworkContext& ctx,
                      std::vector<SampleState> states, Mode mode,
                      RunningStats* stats_io) {
    const ModelConfig& cfg = ctx.config();
    const ParamView p = view_params(model.params, ctx.layout(), cfg);
    const Index batch = static_cast<Index>(states.size());
    const Index k = cfg.hull_count;

    ForwardTrace tr;
    tr.valid = true;
    tr.mode = mode;

    MatrixXd weighted(ctx.s2_grid().node_count(), batch * k);
    for (Index b = 0; b < batch; ++b) {
        const SampleState& st = states[static_cast<std::size_t>(b)];
        weighted.middleCols(b * k, k) =
            (st.fields.array().rowwise() * st.hull_weights.transpose().array())
                .matrix();
    }

    // S^2 convolution: analysis, spectral pairing, synthesis on the mid grid.
    const S2Spectrum f1 = ctx.s2_transform().forward(
        S2Function{cfg.s2_bandwidth_in, weighted});
    const S2Spectrum w1 = ctx.s2_transform().forward(
        S2Function{cfg.s2_bandwidth_in, p.s2_kernels});
    tr.f1_spec = f1.coeffs;
    tr.w1_spec = w1.coeffs;
    const SO3Spectrum o1 = s2_pair_spectra(f1, w1, cfg.channels_in,
                                           cfg.channels_mid,
                                           cfg.s2_bandwidth_out);
    tr.conv1_pre = (ctx.mid_synthesis() * o1.coeffs).real();

    tr.relu1 = tr.conv1_pre.cwiseMax(0.0);
    {
        const MatrixXd bn_in =
            to_channel_major(tr.relu1, batch * k, cfg.channels_mid);
        VectorXd new_mean, new_var;
        const MatrixXd bn_out = batchnorm_forward(
            bn_in, p.bn1_gamma, p.bn1_beta, mode, model.stats.bn1_mean,
            model.stats.bn1_var, &tr.bn1,
            stats_io != nullptr ? &new_mean : nullptr,
            stats_io != nullptr ? &new_var : nullptr);
        if (mode == Mode::train && stats_io != nullptr) {
            stats_io->bn1_mean = new_mean;
            stats_io->bn1_var = new_var;
        }
        tr.bn1_out = from_channel_major(bn_out, batch * k, cfg.channels_mid);
    }

    // SO(3) convolution; the kernel lives on the output-bandwidth grid and is
    // read as the bandlimited function it determines there.
    SO3Spectrum f2;
    f2.bandwidth = cfg.so3_bandwidth_in;
    f2.coeffs = ctx.mid_analysis() * tr.bn1_out.cast<Complex>();
    tr.f2_spec = f2.coeffs;
    const SO3Spectrum w2 = ctx.so3_kernel_transform().forward(
        SO3Function{cfg.so3_bandwidth_out, p.so3_kernels});
    tr.w2_spec = w2.coeffs;
    const SO3Spectrum o2 =
        so3_pair_spectra(f2, pad(w2, cfg.so3_bandwidth_in), cfg.channels_mid,
                         cfg.channels_out, cfg.so3_bandwidth_out);
    tr.conv2_pre = (ctx.out_synthesis() * o2.coeffs).real();

    tr.relu2 = tr.conv2_pre.cwiseMax(0.0);
    {
        const MatrixXd bn_in =
            to_channel_major(tr.relu2, batch * k, cfg.channels_out);
        VectorXd new_mean, new_var;
        const MatrixXd bn_out = batchnorm_forward(
            bn_in, p.bn2_gamma, p.bn2_beta, mode, model.stats.bn2_mean,
            model.stats.bn2_var, &tr.bn2,
            stats_io != nullptr ? &new_mean : nullptr,
            stats_io != nullptr ? &new_var : nullptr);
        if (mode == Mode::train && stats_io != nullptr) {
            stats_io->bn2_mean = new_mean;
            stats_io->bn2_var = new_var;
        }
        tr.bn2_out = from_channel_major(bn_out, batch * k, cfg.channels_out);
    }

    // Invariant layer, maxpool, classifier per sample.
    for (Index b = 0; b < batch; ++b) {
        SampleState& st = states[static_cast<std::size_t>(b)];
        st.hull_features.resize(cfg.channels_out, k);
        for (Index j = 0; j < k; ++j) {
            for (Index c = 0; c < cfg.channels_out; ++c) {
                st.hull_features(c, j) = ctx.so3_out_grid().weights.dot(
                    tr.bn2_out.col((b * k + j) * cfg.channels_out + c));
            }
        }
        st.argmax.assign(static_cast<std::size_t>(cfg.channels_out), 0);
        st.feature.resize(cfg.channels_out);
        for (Index c = 0; c < cfg.channels_out; ++c) {
            Index best = 0;
            for (Index j = 1; j < k; ++j) {
                if (st.hull_features(c, j) > st.hull_features(c, best)) {
                    best = j;
                }
            }
            st.argmax[static_cast<std::size_t>(c)] = best;
            st.feature[c] = st.hull_features(c, best);
        }
        st.logits = p.fc_weight * st.feature + p.fc_bias;
    }
    tr.samples = std::move(states);
    return tr;
}

}  // namespace

ForwardTrace forward_batch(const Model& model, const NetworkContext& ctx,
                           const std::vector<const PointCloud*>& clouds,
                           const std::vector<std::uint64_t>& seeds, Mode mode,
                           RunningStats* stats_io) {
    if (clouds.empty() || clouds.size() != seeds.size()) {
        throw std::invalid_argument("forward_batch: clouds/seeds mismatch");
    }
    std::vector<SampleState> states;
    states.reserve(clouds.size());
    for (std::size_t b = 0; b < clouds.size(); ++b) {
        SelectionMode sel_mode;
        const std::vector<Index> indices =
            run_attention(model, ctx, *clouds[b], seeds[b], mode, sel_mode);
        states.push_back(
            sample_frontend(model, ctx, *clouds[b], indices, sel_mode));
    }
    return run_core(model, ctx, std::move(states), mode, stats_io);
}

ForwardTrace forward_batch_with_selections(
    const Model& model, const NetworkContext& ctx,
    const std::vector<const PointCloud*>& clouds,
    const std::vector<AttentionSelection>& selections, Mode mode,
    RunningStats* stats_io) {
    if (clouds.empty() || clouds.size() != selections.size()) {
        throw std::invalid_argument(
            "forward_batch_with_selections: clouds/selections mismatch");
    }
    std::vector<SampleState> states;
    states.reserve(clouds.size());
    for (std::size_t b = 0; b < clouds.size(); ++b) {
        states.push_back(sample_frontend(model, ctx, *clouds[b],
                                         selections[b].indices,
                                         selections[b].mode));
    }
    return run_core(model, ctx, std::move(states), mode, stats_io);
}

namespace {

ForwardOutput to_single_output(ForwardTrace trace) {
    ForwardOutput out;
    const SampleState& st = trace.samples.front();
    out.logits = st.logits;
    out.feature = st.feature;
    out.hull_cloud_indices = st.hull_cloud_indices;
    out.empty_response_count = st.empty_response_count;
    out.trace = std::move(trace);
    return out;
}

}  // namespace

ForwardOutput forward(const Model& model, const NetworkContext& ctx,
                      const PointCloud& cloud, std::uint64_t seed, Mode mode,
                      RunningStats* stats_io) {
    return to_single_output(
        forward_batch(model, ctx, {&cloud}, {seed}, mode, stats_io));
}

ForwardOutput forward_with_selection(const Model& model,
                                     const NetworkContext& ctx,
                                     const PointCloud& cloud,
                                     const AttentionSelection& selection,
                                     Mode mode, RunningStats* stats_io) {
    return to_single_output(forward_batch_with_selections(
        model, ctx, {&cloud}, {selection}, mode, stats_io));
}

void backward_batch(const Model& model, const NetworkContext& ctx,
                    const ForwardTrace& tr, const MatrixXd& dlogits,
                    VectorXd& grads) {
    if (!tr.valid) {
        throw std::invalid_argument("backward: forward trace not recorded");
    }
    const ModelConfig& cfg = ctx.config();
    const ParamLayout& layout = ctx.layout();
    if (grads.size() != layout.total) {
        throw std::invalid_argument("backward: gradient vector size mismatch");
    }
    const Index batch = static_cast<Index>(tr.samples.size());
    if (dlogits.rows() != cfg.classes || dlogits.cols() != batch) {
        throw std::invalid_argument("backward: dlogits shape mismatch");
    }
    const ParamView p = view_params(model.params, layout, cfg);
    const Index k = cfg.hull_count;
    const Index cmid = cfg.channels_mid;
    const Index cout = cfg.channels_out;

    auto seg = [&](const char* name) {
        const auto& e = layout.find(name);
        return grads.segment(e.offset, e.size);
    };

    // Classifier, maxpool and invariant-layer adjoints per sample.
    MatrixXd dbn2_out = MatrixXd::Zero(tr.bn2_out.rows(), tr.bn2_out.cols());
    {
        auto fw = seg("fc.weight");
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
            dW(fw.data(), cfg.classes, cout);
        auto fb = seg("fc.bias");
        for (Index b = 0; b < batch; ++b) {
            const SampleState& st = tr.samples[static_cast<std::size_t>(b)];
            const Eigen::Vector2d dl = dlogits.col(b);
            dW += dl * st.feature.transpose();
            fb += dl;
            const VectorXd dfeature = p.fc_weight.transpose() * dl;
            for (Index c = 0; c < cout; ++c) {
                const Index j = st.argmax[static_cast<std::size_t>(c)];
                dbn2_out.col((b * k + j) * cout + c) +=
                    ctx.so3_out_grid().weights * dfeature[c];
            }
        }
    }

    // batchnorm 2 / ReLU 2.
    MatrixXd drelu2;
    {
        VectorXd dgamma = VectorXd::Zero(cout);
        VectorXd dbeta = VectorXd::Zero(cout);
        const MatrixXd dx = batchnorm_backward(
            to_channel_major(dbn2_out, batch * k, cout), tr.bn2, p.bn2_gamma,
            tr.mode, dgamma, dbeta);
        seg("bn2.gamma") += dgamma;
        seg("bn2.beta") += dbeta;
        drelu2 = from_channel_major(dx, batch * k, cout);
    }
    const MatrixXd dconv2_pre =
        ((tr.conv2_pre.array() > 0.0).cast<double>() * drelu2.array()).matrix();

    // SO(3) convolution adjoint.
    const MatrixXcd dospec2 =
        ctx.out_synthesis().adjoint() * dconv2_pre.cast<Complex>();
    MatrixXcd df2 = MatrixXcd::Zero(tr.f2_spec.rows(), tr.f2_spec.cols());
    MatrixXcd dw2 = MatrixXcd::Zero(tr.w2_spec.rows(), tr.w2_spec.cols());
    for (int l = 0; l < cfg.so3_bandwidth_out; ++l) {
        const double scale = 1.0 / (2.0 * l + 1.0);
        for (int m = -l; m <= l; ++m) {
            for (int n = -l; n <= l; ++n) {
                const int oi = so3_coeff_index(l, m, n);
                for (Index it = 0; it < batch * k; ++it) {
                    for (Index co = 0; co < cout; ++co) {
                        const Complex zbar = dospec2(oi, it * cout + co);
                        for (Index ci = 0; ci < cmid; ++ci) {
                            for (int kk = -l; kk <= l; ++kk) {
                                const int fi = so3_coeff_index(l, m, kk);
                                const int wi = so3_coeff_index(l, n, kk);
                                df2(fi, it * cmid + ci) +=
                                    scale * tr.w2_spec(wi, ci * cout + co) *
                                    zbar;
                                dw2(wi, ci * cout + co) +=
                                    scale * tr.f2_spec(fi, it * cmid + ci) *
                                    std::conj(zbar);
                            }
                        }
                    }
                }
            }
        }
    }
    {
        const MatrixXd dsamples =
            (ctx.so3_kernel_transform().analysis().adjoint() * dw2).real();
        auto so3seg = seg("so3.kernels");
        Eigen::Map<MatrixXd>(so3seg.data(), dsamples.rows(), dsamples.cols()) +=
            dsamples;
    }
    const MatrixXd dbn1_out = (ctx.mid_analysis().adjoint() * df2).real();

    // batchnorm 1 / ReLU 1.
    MatrixXd drelu1;
    {
        VectorXd dgamma = VectorXd::Zero(cmid);
        VectorXd dbeta = VectorXd::Zero(cmid);
        const MatrixXd dx = batchnorm_backward(
            to_channel_major(dbn1_out, batch * k, cmid), tr.bn1, p.bn1_gamma,
            tr.mode, dgamma, dbeta);
        seg("bn1.gamma") += dgamma;
        seg("bn1.beta") += dbeta;
        drelu1 = from_channel_major(dx, batch * k, cmid);
    }
    const MatrixXd dconv1_pre =
        ((tr.conv1_pre.array() > 0.0).cast<double>() * drelu1.array()).matrix();

    // S^2 convolution adjoint.
    const MatrixXcd dospec1 =
        ctx.mid_synthesis().adjoint() * dconv1_pre.cast<Complex>();
    MatrixXcd df1 = MatrixXcd::Zero(tr.f1_spec.rows(), tr.f1_spec.cols());
    MatrixXcd dw1 = MatrixXcd::Zero(tr.w1_spec.rows(), tr.w1_spec.cols());
    for (int l = 0; l < cfg.s2_bandwidth_out; ++l) {
        for (int m = -l; m <= l; ++m) {
            const int fi = s2_coeff_index(l, m);
            for (int n = -l; n <= l; ++n) {
                const int wi = s2_coeff_index(l, n);
                const int oi = so3_coeff_index(l, m, n);
                for (Index it = 0; it < batch * k; ++it) {
                    for (Index co = 0; co < cmid; ++co) {
                        const Complex zbar = dospec1(oi, it * cmid + co);
                        // cin == 1
                        df1(fi, it) += tr.w1_spec(wi, co) * std::conj(zbar);
                        dw1(wi, co) += tr.f1_spec(fi, it) * zbar;
                    }
                }
            }
        }
    }
    // d(weighted fields) and d(kernel samples) through the S^2 analysis.
    const MatrixXd dweighted =
        (ctx.s2_transform().analysis().adjoint() * df1).real();
    const MatrixXd dw1_samples =
        (ctx.s2_transform().analysis().adjoint() * dw1).real();
    {
        auto s2seg = seg("s2.kernels");
        Eigen::Map<MatrixXd>(s2seg.data(), dw1_samples.rows(),
                             dw1_samples.cols()) += dw1_samples;
    }

    // Confidence weighting: w_j = c_{hull_j} / sum(c over the hull set).
    if (cfg.attention_enabled) {
        auto aw = seg("attention.weight");
        double& ab = grads[layout.find("attention.bias").offset];
        for (Index b = 0; b < batch; ++b) {
            const SampleState& st = tr.samples[static_cast<std::size_t>(b)];
            VectorXd dwj(k);
            double conf_sum = 0.0;
            for (Index j = 0; j < k; ++j) {
                dwj[j] = st.fields.col(j).dot(dweighted.col(b * k + j));
                conf_sum += st.selected_confidences[st.hull_indices[
                    static_cast<std::size_t>(j)]];
            }
            double cross = 0.0;
            for (Index j = 0; j < k; ++j) {
                cross += dwj[j] *
                         st.selected_confidences[st.hull_indices[
                             static_cast<std::size_t>(j)]];
            }
            const Index count = st.selected_confidences.size();
            VectorXd dc = VectorXd::Zero(count);
            for (Index j = 0; j < k; ++j) {
                dc[st.hull_indices[static_cast<std::size_t>(j)]] +=
                    dwj[j] / conf_sum - cross / (conf_sum * conf_sum);
            }
            // c = softplus(w . feat + b)
            for (Index i = 0; i < count; ++i) {
                if (dc[i] == 0.0) continue;
                const double a =
                    p.att_weight.dot(st.attention_features.col(i)) + p.att_bias;
                const double da = logistic(a) * dc[i];
                aw += st.attention_features.col(i) * da;
                ab += da;
            }
        }
    }
}

void backward(const Model& model, const NetworkContext& ctx,
              const ForwardTrace& trace, const Eigen::Vector2d& dlogits,
              VectorXd& grads) {
    backward_batch(model, ctx, trace, dlogits, grads);
}

namespace {

using nlohmann::json;

json config_to_json(const ModelConfig& c) {
    return json{{"s2_bandwidth_in", c.s2_bandwidth_in},
                {"s2_bandwidth_out", c.s2_bandwidth_out},
                {"so3_bandwidth_in", c.so3_bandwidth_in},
                {"so3_bandwidth_out", c.so3_bandwidth_out},
                {"channels_in", c.channels_in},
                {"channels_mid", c.channels_mid},
                {"channels_out", c.channels_out},
                {"hull_count", c.hull_count},
                {"attention_count", c.attention_count},
                {"radius_fraction", c.radius_fraction},
                {"invariant_attention", c.invariant_attention},
                {"normalize_scale", c.normalize_scale},
                {"attention_enabled", c.attention_enabled},
                {"seeded_eval_selection", c.seeded_eval_selection},
                {"grid_oversample", c.grid_oversample},
                {"classes", c.classes}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    static const std::vector<std::string> known = {
        "s2_bandwidth_in",  "s2_bandwidth_out", "so3_bandwidth_in",
        "so3_bandwidth_out", "channels_in",     "channels_mid",
        "channels_out",     "hull_count",       "attention_count",
        "radius_fraction",  "invariant_attention", "normalize_scale",
        "attention_enabled", "seeded_eval_selection", "grid_oversample",
        "classes"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::runtime_error("model config: unknown key '" + key + "'");
        }
    }
    c.s2_bandwidth_in = j.value("s2_bandwidth_in", c.s2_bandwidth_in);
    c.s2_bandwidth_out = j.value("s2_bandwidth_out", c.s2_bandwidth_out);
    c.so3_bandwidth_in = j.value("so3_bandwidth_in", c.so3_bandwidth_in);
    c.so3_bandwidth_out = j.value("so3_bandwidth_out", c.so3_bandwidth_out);
    c.channels_in = j.value("channels_in", c.channels_in);
    c.channels_mid = j.value("channels_mid", c.channels_mid);
    c.channels_out = j.value("channels_out", c.channels_out);
    c.hull_count = j.value("hull_count", c.hull_count);
    c.attention_count = j.value("attention_count", c.attention_count);
    c.radius_fraction = j.value("radius_fraction", c.radius_fraction);
    c.invariant_attention = j.value("invariant_attention", c.invariant_attention);
    c.normalize_scale = j.value("normalize_scale", c.normalize_scale);
    c.attention_enabled = j.value("attention_enabled", c.attention_enabled);
    c.seeded_eval_selection =
        j.value("seeded_eval_selection", c.seeded_eval_selection);
    c.grid_oversample = j.value("grid_oversample", c.grid_oversample);
    c.classes = j.value("classes", c.classes);
    c.validate();
    return c;
}

json vector_to_json(const VectorXd& v) {
    json arr = json::array();
    for (Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

VectorXd vector_from_json(const json& arr) {
    VectorXd v(static_cast<Index>(arr.size()));
    for (Index i = 0; i < v.size(); ++i) {
        v[i] = arr[static_cast<std::size_t>(i)].get<double>();
    }
    return v;
}

}  // namespace

std::string checkpoint_to_json(const Model& model) {
    const ParamLayout layout = ParamLayout::build(model.config);
    json j;
    j["format_version"] = 1;
    j["model_config"] = config_to_json(model.config);
    json params = json::object();
    for (const auto& e : layout.entries) {
        json shape = json::array();
        for (const Index s : e.shape) shape.push_back(s);
        params[e.name] = json{
            {"shape", shape},
            {"values", vector_to_json(model.params.segment(e.offset, e.size))}};
    }
    j["parameters"] = params;
    j["running_stats"] = json{{"bn1.mean", vector_to_json(model.stats.bn1_mean)},
                              {"bn1.var", vector_to_json(model.stats.bn1_var)},
                              {"bn2.mean", vector_to_json(model.stats.bn2_mean)},
                              {"bn2.var", vector_to_json(model.stats.bn2_var)}};
    return j.dump(2);
}

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint: " + path);
    }
    out << checkpoint_to_json(model) << '\n';
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint: " + path);
    }
    json j;
    in >> j;
    if (j.value("format_version", 0) != 1) {
        throw std::runtime_error("checkpoint: unsupported format_version");
    }
    Model model;
    model.config = config_from_json(j.at("model_config"));
    const ParamLayout layout = ParamLayout::build(model.config);
    model.params = VectorXd::Zero(layout.total);
    const json& params = j.at("parameters");
    for (const auto& e : layout.entries) {
        const json& entry = params.at(e.name);
        const VectorXd values = vector_from_json(entry.at("values"));
        if (values.size() != e.size) {
            throw std::runtime_error("checkpoint: size mismatch for " + e.name);
        }
        model.params.segment(e.offset, e.size) = values;
    }
    const json& stats = j.at("running_stats");
    model.stats.bn1_mean = vector_from_json(stats.at("bn1.mean"));
    model.stats.bn1_var = vector_from_json(stats.at("bn1.var"));
    model.stats.bn2_mean = vector_from_json(stats.at("bn2.mean"));
    model.stats.bn2_var = vector_from_json(stats.at("bn2.var"));
    if (model.stats.bn1_mean.size() != model.config.channels_mid ||
        model.stats.bn2_mean.size() != model.config.channels_out) {
        throw std::runtime_error("checkpoint: running stats shape mismatch");
    }
    return model;
}

}  // namespace rotinv
