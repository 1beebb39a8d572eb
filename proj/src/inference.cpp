#include "sisrnn/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sisrnn {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835607;

NodeId const_bias(Graph& g, double v) { return g.constant(Tensor::vector({v})); }

/// rows x 1 log N(value; mean, diag(scale^2)) from shared pre-activation nodes.
NodeId gauss_logdensity_rows(Graph& g, NodeId value, const GaussNodes& q, Index dim) {
    NodeId d = sub(g, value, q.mean);
    NodeId quad = row_sum(g, mul(g, mul(g, d, d), exp(g, scale(g, q.log_scale, -2.0))));
    NodeId body = add(g, scale(g, quad, -0.5), scale(g, row_sum(g, q.log_scale), -1.0));
    return add_bias(g, body, const_bias(g, -0.5 * kLog2Pi * static_cast<double>(dim)));
}

/// rows x 1 analytic KL(q || p) for diagonal Gaussians. The variance ratio
/// is taken in log space so KL(q || q) cancels to exactly zero.
NodeId gauss_kl_rows(Graph& g, const GaussNodes& q, const GaussNodes& p, Index dim) {
    NodeId logdiff = sub(g, q.log_scale, p.log_scale);
    NodeId ratio = exp(g, scale(g, logdiff, 2.0));
    NodeId dm = sub(g, q.mean, p.mean);
    NodeId dquad = mul(g, mul(g, dm, dm), exp(g, scale(g, p.log_scale, -2.0)));
    NodeId body = row_sum(g, add(g, scale(g, logdiff, -1.0), scale(g, add(g, ratio, dquad), 0.5)));
    return add_bias(g, body, const_bias(g, -0.5 * static_cast<double>(dim)));
}

/// rows x 1 log p(x | emission params).
NodeId emission_loglik_rows(Graph& g, const ModelConfig& cfg, NodeId x, const EmissionNodes& e) {
    if (e.kind == Emission::kBernoulli) {
        // x*log(p) + (1-x)*log(1-p) for p = sigmoid(a) is x*a - softplus(a).
        return row_sum(g, sub(g, mul(g, x, e.logits), softplus(g, e.logits)));
    }
    return gauss_logdensity_rows(g, x, e.gauss, cfg.obs_dim);
}
}  // namespace

RngState noise_stream(const RngState& base, uint64_t t, uint64_t role, uint64_t k, uint64_t layer) {
    return base.fork(pack_noise_tag(t, role, k, layer));
}

Tensor draw_noise_rows(const NoiseSpec& spec, Index layer, Index rows, RngState stream) {
    Tensor t = Tensor::zeros({rows, spec.dims[static_cast<size_t>(layer)]});
    for (double& v : t.values_mut())
        v = spec.kind == NoiseSpec::Kind::kBernoulli ? (stream.bernoulli(spec.p) ? 1.0 : 0.0)
                                                     : stream.normal();
    return t;
}

Tensor draw_normal_rows(Index rows, Index dim, RngState stream) {
    Tensor t = Tensor::zeros({rows, dim});
    for (double& v : t.values_mut()) v = stream.normal();
    return t;
}

std::vector<StepTrace> sequence_forward(const SisRnnModel& model, const Tensor& xs, RngState rng) {
    if (xs.rank() != 2 || xs.cols() != model.cfg.obs_dim)
        throw std::invalid_argument("sequence_forward: expected T x " + std::to_string(model.cfg.obs_dim) +
                                    " observations, got " + xs.shape_str());
    const Index T = xs.rows();
    std::vector<StepTrace> traces;
    traces.reserve(static_cast<size_t>(T));
    Tensor h = Tensor::zeros({model.cfg.hidden_dim});
    for (Index t = 0; t < T; ++t) {
        StepTrace tr;
        tr.t = static_cast<int>(t) + 1;
        tr.h_prev = h;
        Tensor x_t = Tensor::row_vector(xs.mat().row(t));
        for (Index l = 0; l < model.cfg.noise.layers(); ++l) {
            Tensor e = draw_noise_rows(model.cfg.noise, l, 1,
                                       noise_stream(rng, t, kRoleEncoderNoise, 0, l));
            tr.eps.push_back(e.reshape({e.cols()}));
        }
        tr.psi = encoder_psi(model, x_t, h, tr.eps);
        Tensor ez = draw_normal_rows(1, model.cfg.latent_dim, noise_stream(rng, t, kRoleZNoise, 0, 0));
        tr.z = reparam_sample(tr.psi, ez.reshape({ez.cols()}));
        tr.prior = prior_params(model, h);
        tr.emission = decoder_params(model, tr.z, h);
        tr.h = gru_step(model, x_t, tr.z, h);
        h = tr.h;
        traces.push_back(std::move(tr));
    }
    return traces;
}

BoundGraph build_bound_graph(const ModelConfig& cfg, int T, int K) {
    cfg.validate();
    if (T < 1) throw std::invalid_argument("build_bound_graph: T must be >= 1");
    if (K < 0) throw std::invalid_argument("build_bound_graph: K must be >= 0");

    BoundGraph bg;
    bg.T = T;
    bg.K = K;
    Graph& g = bg.graph;

    bg.h0 = g.input("h0");
    bg.beta = g.input("beta");
    bg.inv_rows = g.input("inv_rows");
    const size_t L = cfg.noise.dims.size();

    NodeId h_prev = bg.h0;
    NodeId bound_rows{}, recon_rows{}, kl_rows{}, bk_rows{};
    for (int t = 0; t < T; ++t) {
        const std::string ts = std::to_string(t);
        NodeId x = g.input("x." + ts);
        bg.x.push_back(x);

        std::vector<NodeId> enc_eps;
        for (size_t l = 0; l < L; ++l)
            enc_eps.push_back(g.input("eps_enc." + ts + "." + std::to_string(l)));
        bg.eps_enc.push_back(enc_eps);

        GaussNodes psi = encoder_nodes(g, cfg, x, h_prev, enc_eps);
        NodeId eps_z = g.input("eps_z." + ts);
        bg.eps_z.push_back(eps_z);
        NodeId z = add(g, psi.mean, mul(g, psi.scale, eps_z));

        GaussNodes prior = prior_nodes(g, cfg, h_prev);
        EmissionNodes emission = decoder_nodes(g, cfg, z, h_prev);

        NodeId recon_t = emission_loglik_rows(g, cfg, x, emission);
        NodeId kl_t = gauss_kl_rows(g, psi, prior, cfg.latent_dim);

        NodeId klterm = kl_t;
        std::vector<std::vector<NodeId>> mix_eps_t;
        if (K > 0) {
            NodeId logq0 = gauss_logdensity_rows(g, z, psi, cfg.latent_dim);
            std::vector<NodeId> comps = {logq0};
            for (int k = 1; k <= K; ++k) {
                std::vector<NodeId> eps_k;
                for (size_t l = 0; l < L; ++l)
                    eps_k.push_back(g.input("eps_mix." + ts + "." + std::to_string(k) + "." + std::to_string(l)));
                mix_eps_t.push_back(eps_k);
                GaussNodes psi_k = encoder_nodes(g, cfg, x, h_prev, eps_k);
                comps.push_back(gauss_logdensity_rows(g, z, psi_k, cfg.latent_dim));
            }
            NodeId stacked = concat(g, std::span<const NodeId>(comps));
            NodeId log_mix = add_bias(g, logsumexp_rows(g, stacked),
                                      const_bias(g, -std::log(static_cast<double>(K + 1))));
            NodeId bk_t = sub(g, logq0, log_mix);
            klterm = sub(g, kl_t, bk_t);
            bk_rows = bk_rows.valid() ? add(g, bk_rows, bk_t) : bk_t;
        }
        bg.eps_mix.push_back(std::move(mix_eps_t));

        NodeId step_row = sub(g, recon_t, scalar_mul(g, bg.beta, klterm));
        bg.step_rows.push_back(step_row);
        bound_rows = bound_rows.valid() ? add(g, bound_rows, step_row) : step_row;
        recon_rows = recon_rows.valid() ? add(g, recon_rows, recon_t) : recon_t;
        kl_rows = kl_rows.valid() ? add(g, kl_rows, kl_t) : kl_t;

        h_prev = gru_step_nodes(g, cfg, x, z, h_prev);
    }

    bg.bound_rows = bound_rows;
    bg.recon_rows = recon_rows;
    bg.kl_rows = kl_rows;
    bg.bk_rows = bk_rows;  // invalid when K = 0
    bg.objective = scalar_mul(g, bg.inv_rows, sum_all(g, bound_rows));
    bg.loss = scale(g, bg.objective, -1.0);
    return bg;
}

void bind_bound_inputs(Evaluation& ev, const BoundGraph& bg, const ModelConfig& cfg,
                       std::span<const Tensor* const> sequences, int n_z, const RngState& base,
                       double beta) {
    if (sequences.empty() || n_z < 1)
        throw std::invalid_argument("bind_bound_inputs: need at least one sequence and n_z >= 1");
    const Index rows = static_cast<Index>(sequences.size()) * n_z;
    for (const Tensor* s : sequences) {
        if (s->rank() != 2 || s->rows() != bg.T || s->cols() != cfg.obs_dim)
            throw std::invalid_argument("bind_bound_inputs: sequence shape " + s->shape_str() +
                                        " does not match T=" + std::to_string(bg.T) +
                                        ", obs=" + std::to_string(cfg.obs_dim));
    }
    const size_t L = cfg.noise.dims.size();
    for (int t = 0; t < bg.T; ++t) {
        Mat xm(rows, cfg.obs_dim);
        for (size_t s = 0; s < sequences.size(); ++s)
            for (int r = 0; r < n_z; ++r)
                xm.row(static_cast<Index>(s) * n_z + r) = sequences[s]->mat().row(t);
        ev.bind(bg.x[static_cast<size_t>(t)], Tensor::matrix(std::move(xm)));

        for (size_t l = 0; l < L; ++l)
            ev.bind(bg.eps_enc[static_cast<size_t>(t)][l],
                    draw_noise_rows(cfg.noise, static_cast<Index>(l), rows,
                                    noise_stream(base, static_cast<uint64_t>(t), kRoleEncoderNoise, 0, l)));
        ev.bind(bg.eps_z[static_cast<size_t>(t)],
                draw_normal_rows(rows, cfg.latent_dim,
                                 noise_stream(base, static_cast<uint64_t>(t), kRoleZNoise, 0, 0)));
        for (int k = 1; k <= bg.K; ++k)
            for (size_t l = 0; l < L; ++l)
                ev.bind(bg.eps_mix[static_cast<size_t>(t)][static_cast<size_t>(k - 1)][l],
                        draw_noise_rows(cfg.noise, static_cast<Index>(l), rows,
                                        noise_stream(base, static_cast<uint64_t>(t), kRoleMixtureNoise,
                                                     static_cast<uint64_t>(k), l)));
    }
    ev.bind(bg.h0, Tensor::zeros({rows, cfg.hidden_dim}));
    ev.bind(bg.beta, Tensor::scalar(beta));
    ev.bind(bg.inv_rows, Tensor::scalar(1.0 / static_cast<double>(rows)));
}

BoundEstimate read_bound(const Evaluation& ev, const BoundGraph& bg, int n_z, double beta) {
    BoundEstimate est;
    est.K = bg.K;
    est.n_z = n_z;
    est.beta = beta;
    est.total = ev.value(bg.objective).value();
    const double inv = ev.value(bg.inv_rows).value();
    est.reconstruction = ev.value(bg.recon_rows).mat().sum() * inv;
    est.kl = ev.value(bg.kl_rows).mat().sum() * inv;
    est.b_k = bg.bk_rows.valid() ? ev.value(bg.bk_rows).mat().sum() * inv : 0.0;
    if (!std::isfinite(est.total)) {
        for (size_t t = 0; t < bg.step_rows.size(); ++t)
            if (!ev.value(bg.step_rows[t]).all_finite())
                throw std::runtime_error("bound estimate is not finite at step " +
                                         std::to_string(t + 1));
        throw std::runtime_error("bound estimate is not finite");
    }
    return est;
}

BoundEstimate regularized_bound(const SisRnnModel& model, const Tensor& xs, int K, double beta,
                                const RngState& rng, int n_z) {
    if (n_z < 1) throw std::invalid_argument("regularized_bound: n_z must be >= 1");
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("regularized_bound: beta must lie in [0,1]");
    if (xs.rank() != 2) throw std::invalid_argument("regularized_bound: expected a T x obs sequence");
    if (xs.rows() == 0) {
        BoundEstimate est;
        est.K = K;
        est.n_z = n_z;
        est.beta = beta;
        return est;
    }
    BoundGraph bg = build_bound_graph(model.cfg, static_cast<int>(xs.rows()), K);
    Evaluation ev(bg.graph);
    bind_params(ev, model);
    const Tensor* seq = &xs;
    bind_bound_inputs(ev, bg, model.cfg, std::span<const Tensor* const>(&seq, 1), n_z, rng, beta);
    ev.forward();
    return read_bound(ev, bg, n_z, beta);
}

BoundEstimate elbo_lower_bound(const SisRnnModel& model, const Tensor& xs, const RngState& rng, int n_z) {
    return regularized_bound(model, xs, 0, 1.0, rng, n_z);
}

double sivi_regularizer_bk(const SisRnnModel& model, const Tensor& x_t, const Tensor& h_prev,
                           const DiagGaussian& psi, const Tensor& z, int K, const RngState& rng) {
    if (K < 0) throw std::invalid_argument("sivi_regularizer_bk: K must be >= 0");
    const double logq0 = gaussian_log_density(z, psi);
    std::vector<double> logqs = {logq0};
    for (int k = 1; k <= K; ++k) {
        std::vector<Tensor> eps;
        for (Index l = 0; l < model.cfg.noise.layers(); ++l) {
            Tensor e = draw_noise_rows(model.cfg.noise, l, 1,
                                       noise_stream(rng, 0, kRoleMixtureNoise, static_cast<uint64_t>(k), l));
            eps.push_back(e.reshape({e.cols()}));
        }
        DiagGaussian psi_k = encoder_psi(model, x_t, h_prev, eps);
        logqs.push_back(gaussian_log_density(z, psi_k));
    }
    double mx = logqs[0];
    for (double v : logqs) mx = std::max(mx, v);
    double acc = 0.0;
    for (double v : logqs) acc += std::exp(v - mx);
    // Grouped so that identical components cancel exactly to zero.
    const double log_mix = mx + (std::log(acc) - std::log(static_cast<double>(K + 1)));
    const double bk = logq0 - log_mix;
    if (!std::isfinite(bk)) throw std::runtime_error("sivi_regularizer_bk: non-finite estimate");
    return bk;
}

Tensor sample_sequence(const SisRnnModel& model, Index T, RngState rng) {
    if (T < 1) throw std::invalid_argument("sample_sequence: T must be >= 1");
    const ModelConfig& cfg = model.cfg;
    Tensor out = Tensor::zeros({T, cfg.obs_dim});
    Tensor h = Tensor::zeros({cfg.hidden_dim});
    for (Index t = 0; t < T; ++t) {
        DiagGaussian prior = prior_params(model, h);
        Tensor eps = Tensor::zeros({cfg.latent_dim});
        for (double& v : eps.values_mut()) v = rng.normal();
        Tensor z = reparam_sample(prior, eps);
        EmissionParams em = decoder_params(model, z, h);
        Tensor x = Tensor::zeros({cfg.obs_dim});
        if (em.kind == Emission::kBernoulli) {
            for (Index d = 0; d < cfg.obs_dim; ++d)
                x.mat()(0, d) = rng.bernoulli(em.probs.at(d)) ? 1.0 : 0.0;
        } else {
            for (Index d = 0; d < cfg.obs_dim; ++d)
                x.mat()(0, d) = em.gauss.mean.at(d) + em.gauss.scale.at(d) * rng.normal();
        }
        out.mat().row(t) = x.mat().row(0);
        h = gru_step(model, x, z, h);
    }
    return out;
}

Tensor sample_posterior_z1(const SisRnnModel& model, const Tensor& probe_x, Index n,
                           const RngState& rng) {
    const ModelConfig& cfg = model.cfg;
    if (probe_x.rank() != 1 || probe_x.cols() != cfg.obs_dim)
        throw std::invalid_argument("sample_posterior_z1: probe shape " + probe_x.shape_str() +
                                    " does not match obs dim " + std::to_string(cfg.obs_dim));
    if (n < 1) throw std::invalid_argument("sample_posterior_z1: n must be >= 1");

    Graph g;
    NodeId x = g.input("x");
    NodeId h0 = g.input("h0");
    std::vector<NodeId> eps;
    for (size_t l = 0; l < cfg.noise.dims.size(); ++l)
        eps.push_back(g.input("eps" + std::to_string(l)));
    GaussNodes psi = encoder_nodes(g, cfg, x, h0, eps);
    NodeId eps_z = g.input("eps_z");
    NodeId z = add(g, psi.mean, mul(g, psi.scale, eps_z));

    Evaluation ev(g);
    bind_params(ev, model);
    Mat xm(n, cfg.obs_dim);
    xm.rowwise() = probe_x.mat().row(0);
    ev.bind(x, Tensor::matrix(std::move(xm)));
    ev.bind(h0, Tensor::zeros({n, cfg.hidden_dim}));
    for (size_t l = 0; l < eps.size(); ++l)
        ev.bind(eps[l], draw_noise_rows(cfg.noise, static_cast<Index>(l), n,
                                        noise_stream(rng, 0, kRoleEncoderNoise, 0, l)));
    ev.bind(eps_z, draw_normal_rows(n, cfg.latent_dim, noise_stream(rng, 0, kRoleZNoise, 0, 0)));
    ev.forward();
    return ev.value(z);
}

Histo histogram(const std::vector<double>& samples, int bins) {
    if (samples.empty() || bins < 1) throw std::invalid_argument("histogram: empty input");
    double lo = samples[0], hi = samples[0];
    for (double v : samples) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histo h;
    h.edges.resize(static_cast<size_t>(bins) + 1);
    h.counts.assign(static_cast<size_t>(bins), 0.0);
    for (int i = 0; i <= bins; ++i)
        h.edges[static_cast<size_t>(i)] = lo + (hi - lo) * i / static_cast<double>(bins);
    for (double v : samples) {
        int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        h.counts[static_cast<size_t>(b)] += 1.0;
    }
    return h;
}

double valley_to_peak_ratio(const std::vector<double>& samples, int bins) {
    if (bins < 4) throw std::invalid_argument("valley_to_peak_ratio: need at least 4 bins");
    double lo = samples.empty() ? 0.0 : samples[0], hi = lo;
    for (double v : samples) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (samples.empty() || hi - lo < 1e-12) return 1.0;  // a point mass is unimodal

    const Histo h = histogram(samples, bins);
    std::vector<double> sm(h.counts.size());
    for (size_t i = 0; i < h.counts.size(); ++i) {
        double acc = h.counts[i];
        int cnt = 1;
        if (i > 0) { acc += h.counts[i - 1]; ++cnt; }
        if (i + 1 < h.counts.size()) { acc += h.counts[i + 1]; ++cnt; }
        sm[i] = acc / cnt;
    }
    double hmax = 0.0;
    for (double v : sm) hmax = std::max(hmax, v);
    if (hmax <= 0.0) return 1.0;

    double ratio = 1.0;
    for (size_t i = 0; i < sm.size(); ++i) {
        if (sm[i] < 0.25 * hmax) continue;
        for (size_t j = i + 2; j < sm.size(); ++j) {
            if (sm[j] < 0.25 * hmax) continue;
            double valley = sm[i + 1];
            for (size_t k = i + 1; k < j; ++k) valley = std::min(valley, sm[k]);
            ratio = std::min(ratio, valley / std::min(sm[i], sm[j]));
        }
    }
    return ratio;
}

int k_schedule(long epoch, const KSchedule& s) {
    if (s.ramp_epochs < 1 || s.k_min < 0 || s.k_max < s.k_min)
        throw std::invalid_argument("k_schedule: invalid schedule");
    if (epoch <= 0) return s.k_min;
    if (epoch >= s.ramp_epochs) return s.k_max;
    const double v = s.k_min + (s.k_max - s.k_min) * static_cast<double>(epoch) /
                                   static_cast<double>(s.ramp_epochs);
    const long k = static_cast<long>(std::floor(v + 0.5));  // round half up
    return static_cast<int>(std::clamp(k, static_cast<long>(s.k_min), static_cast<long>(s.k_max)));
}

double kl_anneal_weight(long step, const AnnealSchedule& s) {
    if (s.cycles < 1 || !(s.ramp_frac > 0.0 && s.ramp_frac <= 1.0) || s.total_steps < 1)
        throw std::invalid_argument("kl_anneal_weight: invalid schedule");
    if (step < 0) throw std::invalid_argument("kl_anneal_weight: negative step");
    const double cycle_len = static_cast<double>(s.total_steps) / static_cast<double>(s.cycles);
    const double pos = std::fmod(static_cast<double>(step), cycle_len);
    return std::min(1.0, pos / (cycle_len * s.ramp_frac));
}

}  // namespace sisrnn
