#pragma once

#include "sisrnn/distributions.hpp"
#include "sisrnn/graph.hpp"
#include "sisrnn/rng.hpp"
#include "sisrnn/tensor.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace sisrnn {

enum class Emission { kBernoulli, kGaussian };

/// Architecture hyperparameters. The defaults are the reference setup:
/// 64-unit GRU, two 64-wide prior layers, three 128-wide encoder layers with
/// [150,100,50]-dimensional Bernoulli noise injected per layer.
struct ModelConfig {
    Index obs_dim = 0;  // 0 until set; training configs derive it from the data
    Index latent_dim = 16;
    Index hidden_dim = 64;
    std::vector<Index> prior_widths = {64, 64};
    std::vector<Index> enc_widths = {128, 128, 128};
    NoiseSpec noise = {NoiseSpec::Kind::kBernoulli, 0.5, {150, 100, 50}};
    std::vector<Index> dec_widths = {64};
    Emission emission = Emission::kBernoulli;

    void validate() const;

    /// Closed-form learnable parameter count:
    ///   gru:     3 * ((obs+latent)*H + H*H + H)
    ///   prior:   sum_i (in_i*p_i + p_i) + 2*(p_last*latent + latent), in_0 = H
    ///   encoder: layer 0 (obs+H+n_0)*e_0 + e_0, layer k (e_{k-1}+n_k)*e_k + e_k,
    ///            plus 2*(e_last*latent + latent)
    ///   decoder: layer 0 (latent+H)*w_0 + w_0, then (w_{k-1}*w_k + w_k),
    ///            head w_last*obs + obs (doubled for the Gaussian head)
    Index param_count() const;
};

using ParamStore = std::map<std::string, Tensor>;

struct SisRnnModel {
    ModelConfig cfg;
    ParamStore params;
};

/// Glorot-uniform weights (a = sqrt(6/(fan_in+fan_out))), zero biases.
/// Deterministic per rng stream.
SisRnnModel init_model(const ModelConfig& cfg, RngState rng);

// ---- graph builders ----
// Each appends the subnetwork to `g`, declaring parameter leaves by name on
// first use. They are rank-generic: feed rank-1 nodes for a single example
// or rank-2 (batch x dim) nodes for batched evaluation.

struct GaussNodes {
    NodeId mean;
    NodeId scale;      // softplus(pre)
    NodeId log_scale;  // log_softplus(pre), shared pre-activation
};

struct EmissionNodes {
    Emission kind;
    NodeId logits;  // Bernoulli head
    NodeId probs;
    GaussNodes gauss;  // Gaussian head
};

NodeId gru_step_nodes(Graph& g, const ModelConfig& cfg, NodeId x, NodeId z, NodeId h_prev);
GaussNodes prior_nodes(Graph& g, const ModelConfig& cfg, NodeId h_prev);
GaussNodes encoder_nodes(Graph& g, const ModelConfig& cfg, NodeId x, NodeId h_prev, std::span<const NodeId> eps);
EmissionNodes decoder_nodes(Graph& g, const ModelConfig& cfg, NodeId z, NodeId h_prev);

/// Declares every parameter leaf of the model in `g`.
void declare_params(Graph& g, const ModelConfig& cfg);
void bind_params(Evaluation& ev, const SisRnnModel& model);

// ---- single-step value API ----
// Evaluates the corresponding subnetwork on rank-1 vectors through the same
// graph builders the training objective uses.

Tensor gru_step(const SisRnnModel& model, const Tensor& x, const Tensor& z, const Tensor& h_prev);
DiagGaussian prior_params(const SisRnnModel& model, const Tensor& h_prev);
DiagGaussian encoder_psi(const SisRnnModel& model, const Tensor& x, const Tensor& h_prev,
                         const std::vector<Tensor>& eps);

struct EmissionParams {
    Emission kind;
    Tensor probs;        // Bernoulli
    DiagGaussian gauss;  // Gaussian
};

EmissionParams decoder_params(const SisRnnModel& model, const Tensor& z, const Tensor& h_prev);

}  // namespace sisrnn
