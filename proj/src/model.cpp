#include "sisrnn/model.hpp"

#include <cmath>
#include <stdexcept>

namespace sisrnn {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("ModelConfig: " + msg);
}

/// Feed-forward stack of tanh layers ending in mean / pre-scale heads.
GaussNodes gauss_head_stack(Graph& g, const std::string& prefix, NodeId in, Index in_dim,
                            std::span<const Index> widths, std::span<const NodeId> eps,
                            std::span<const Index> eps_dims, Index out_dim) {
    NodeId h = in;
    Index dim = in_dim;
    for (size_t i = 0; i < widths.size(); ++i) {
        if (!eps.empty() && eps_dims[i] > 0) {
            h = concat(g, {h, eps[i]});
            dim += eps_dims[i];
        }
        const std::string ln = prefix + ".l" + std::to_string(i);
        NodeId w = g.param(ln + ".w", {dim, widths[i]});
        NodeId b = g.param(ln + ".b", {widths[i]});
        h = tanh(g, add_bias(g, matmul(g, h, w), b));
        dim = widths[i];
    }
    NodeId mw = g.param(prefix + ".mu.w", {dim, out_dim});
    NodeId mb = g.param(prefix + ".mu.b", {out_dim});
    NodeId sw = g.param(prefix + ".s.w", {dim, out_dim});
    NodeId sb = g.param(prefix + ".s.b", {out_dim});
    NodeId mean = add_bias(g, matmul(g, h, mw), mb);
    NodeId pre = add_bias(g, matmul(g, h, sw), sb);
    return GaussNodes{mean, softplus(g, pre), log_softplus(g, pre)};
}

}  // namespace

void ModelConfig::validate() const {
    require(obs_dim >= 1, "observation dim must be positive");
    require(latent_dim >= 1, "latent dim must be positive");
    require(hidden_dim >= 1, "hidden dim must be positive");
    require(!prior_widths.empty(), "prior needs at least one layer");
    require(!enc_widths.empty(), "encoder needs at least one layer");
    require(!dec_widths.empty(), "decoder needs at least one layer");
    for (Index w : prior_widths) require(w >= 1, "prior layer width must be positive");
    for (Index w : enc_widths) require(w >= 1, "encoder layer width must be positive");
    for (Index w : dec_widths) require(w >= 1, "decoder layer width must be positive");
    require(noise.dims.size() == enc_widths.size(),
            "noise layer count must match encoder layer count");
    noise.validate();
}

Index ModelConfig::param_count() const {
    const Index O = obs_dim, Z = latent_dim, H = hidden_dim;
    Index n = 3 * ((O + Z) * H + H * H + H);
    Index in = H;
    for (Index w : prior_widths) {
        n += in * w + w;
        in = w;
    }
    n += 2 * (in * Z + Z);
    in = O + H;
    for (size_t i = 0; i < enc_widths.size(); ++i) {
        n += (in + noise.dims[i]) * enc_widths[i] + enc_widths[i];
        in = enc_widths[i];
    }
    n += 2 * (in * Z + Z);
    in = Z + H;
    for (Index w : dec_widths) {
        n += in * w + w;
        in = w;
    }
    n += (emission == Emission::kGaussian ? 2 : 1) * (in * O + O);
    return n;
}

NodeId gru_step_nodes(Graph& g, const ModelConfig& cfg, NodeId x, NodeId z, NodeId h_prev) {
    const Index I = cfg.obs_dim + cfg.latent_dim;
    const Index H = cfg.hidden_dim;
    NodeId xin = concat(g, {x, z});
    auto gate = [&](const char* tag, NodeId hpart) {
        NodeId w = g.param(std::string("gru.w") + tag, {I, H});
        NodeId u = g.param(std::string("gru.u") + tag, {H, H});
        NodeId b = g.param(std::string("gru.b") + tag, {H});
        return add_bias(g, add(g, matmul(g, xin, w), matmul(g, hpart, u)), b);
    };
    NodeId r = sigmoid(g, gate("r", h_prev));
    NodeId u = sigmoid(g, gate("u", h_prev));
    NodeId cand = tanh(g, gate("c", mul(g, r, h_prev)));
    // h' = (1-u) h + u c, written as h + u (c - h)
    return add(g, h_prev, mul(g, u, sub(g, cand, h_prev)));
}

GaussNodes prior_nodes(Graph& g, const ModelConfig& cfg, NodeId h_prev) {
    return gauss_head_stack(g, "prior", h_prev, cfg.hidden_dim, cfg.prior_widths, {}, {}, cfg.latent_dim);
}

GaussNodes encoder_nodes(Graph& g, const ModelConfig& cfg, NodeId x, NodeId h_prev, std::span<const NodeId> eps) {
    if (eps.size() != cfg.noise.dims.size())
        throw std::invalid_argument("encoder_nodes: expected " + std::to_string(cfg.noise.dims.size()) +
                                    " noise layers, got " + std::to_string(eps.size()));
    NodeId in = concat(g, {x, h_prev});
    return gauss_head_stack(g, "enc", in, cfg.obs_dim + cfg.hidden_dim, cfg.enc_widths, eps,
                            cfg.noise.dims, cfg.latent_dim);
}

EmissionNodes decoder_nodes(Graph& g, const ModelConfig& cfg, NodeId z, NodeId h_prev) {
    NodeId h = concat(g, {z, h_prev});
    Index dim = cfg.latent_dim + cfg.hidden_dim;
    for (size_t i = 0; i < cfg.dec_widths.size(); ++i) {
        const std::string ln = "dec.l" + std::to_string(i);
        NodeId w = g.param(ln + ".w", {dim, cfg.dec_widths[i]});
        NodeId b = g.param(ln + ".b", {cfg.dec_widths[i]});
        h = tanh(g, add_bias(g, matmul(g, h, w), b));
        dim = cfg.dec_widths[i];
    }
    EmissionNodes out;
    out.kind = cfg.emission;
    if (cfg.emission == Emission::kBernoulli) {
        NodeId w = g.param("dec.y.w", {dim, cfg.obs_dim});
        NodeId b = g.param("dec.y.b", {cfg.obs_dim});
        out.logits = add_bias(g, matmul(g, h, w), b);
        out.probs = sigmoid(g, out.logits);
    } else {
        NodeId mw = g.param("dec.mu.w", {dim, cfg.obs_dim});
        NodeId mb = g.param("dec.mu.b", {cfg.obs_dim});
        NodeId sw = g.param("dec.s.w", {dim, cfg.obs_dim});
        NodeId sb = g.param("dec.s.b", {cfg.obs_dim});
        NodeId pre = add_bias(g, matmul(g, h, sw), sb);
        out.gauss = GaussNodes{add_bias(g, matmul(g, h, mw), mb), softplus(g, pre), log_softplus(g, pre)};
    }
    return out;
}

void declare_params(Graph& g, const ModelConfig& cfg) {
    // Building each subnetwork once declares the full parameter set; the
    // throwaway nodes are inert unless referenced.
    NodeId x = g.input("__declare.x");
    NodeId z = g.input("__declare.z");
    NodeId h = g.input("__declare.h");
    std::vector<NodeId> eps;
    for (size_t i = 0; i < cfg.noise.dims.size(); ++i)
        eps.push_back(g.input("__declare.eps" + std::to_string(i)));
    gru_step_nodes(g, cfg, x, z, h);
    prior_nodes(g, cfg, h);
    encoder_nodes(g, cfg, x, h, eps);
    decoder_nodes(g, cfg, z, h);
}

void bind_params(Evaluation& ev, const SisRnnModel& model) {
    // Subnetwork graphs declare only their own leaves; bind what is present.
    for (const auto& [name, value] : model.params)
        if (ev.graph().find(name).valid()) ev.bind(name, value);
}

SisRnnModel init_model(const ModelConfig& cfg, RngState rng) {
    cfg.validate();
    Graph g;
    declare_params(g, cfg);

    SisRnnModel model;
    model.cfg = cfg;
    // Draw in sorted name order so the layout, the checkpoint manifest and
    // the rng consumption all agree.
    std::map<std::string, std::vector<Index>> shapes;
    for (NodeId p : g.param_ids()) shapes[g.node(p).name] = g.node(p).declared_shape;
    for (const auto& [name, shape] : shapes) {
        Tensor t = Tensor::zeros(shape);
        if (shape.size() == 2) {
            const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
            for (double& v : t.values_mut()) v = (2.0 * rng.uniform01() - 1.0) * a;
        }
        model.params[name] = std::move(t);
    }
    return model;
}

Tensor gru_step(const SisRnnModel& model, const Tensor& x, const Tensor& z, const Tensor& h_prev) {
    Graph g;
    NodeId xn = g.input("x"), zn = g.input("z"), hn = g.input("h");
    NodeId out = gru_step_nodes(g, model.cfg, xn, zn, hn);
    Evaluation ev(g);
    ev.bind(xn, x);
    ev.bind(zn, z);
    ev.bind(hn, h_prev);
    bind_params(ev, model);
    ev.forward();
    return ev.value(out);
}

DiagGaussian prior_params(const SisRnnModel& model, const Tensor& h_prev) {
    Graph g;
    NodeId hn = g.input("h");
    GaussNodes p = prior_nodes(g, model.cfg, hn);
    Evaluation ev(g);
    ev.bind(hn, h_prev);
    bind_params(ev, model);
    ev.forward();
    return DiagGaussian{ev.value(p.mean), ev.value(p.scale)};
}

DiagGaussian encoder_psi(const SisRnnModel& model, const Tensor& x, const Tensor& h_prev,
                         const std::vector<Tensor>& eps) {
    Graph g;
    NodeId xn = g.input("x"), hn = g.input("h");
    std::vector<NodeId> en;
    for (size_t i = 0; i < eps.size(); ++i) en.push_back(g.input("eps" + std::to_string(i)));
    GaussNodes q = encoder_nodes(g, model.cfg, xn, hn, en);
    Evaluation ev(g);
    ev.bind(xn, x);
    ev.bind(hn, h_prev);
    for (size_t i = 0; i < eps.size(); ++i) ev.bind(en[i], eps[i]);
    bind_params(ev, model);
    ev.forward();
    return DiagGaussian{ev.value(q.mean), ev.value(q.scale)};
}

EmissionParams decoder_params(const SisRnnModel& model, const Tensor& z, const Tensor& h_prev) {
    Graph g;
    NodeId zn = g.input("z"), hn = g.input("h");
    EmissionNodes d = decoder_nodes(g, model.cfg, zn, hn);
    Evaluation ev(g);
    ev.bind(zn, z);
    ev.bind(hn, h_prev);
    bind_params(ev, model);
    ev.forward();
    EmissionParams out;
    out.kind = d.kind;
    if (d.kind == Emission::kBernoulli) out.probs = ev.value(d.probs);
    else out.gauss = DiagGaussian{ev.value(d.gauss.mean), ev.value(d.gauss.scale)};
    return out;
}

}  // namespace sisrnn
