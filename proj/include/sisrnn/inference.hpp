#pragma once

#include "sisrnn/model.hpp"

#include <optional>
#include <span>
#include <vector>

namespace sisrnn {

// ---- noise stream protocol ----
//
// Every stochastic draw inside a bound evaluation comes from a substream of
// the caller's RngState, derived as base.fork(pack(t, role, k, layer)):
//
//   role 0: encoder noise for psi_t            (k = 0, one stream per layer)
//   role 1: z reparameterization noise         (k = 0, layer = 0)
//   role 2: encoder noise for the k-th mixture sample psi_t^(k), k = 1..K
//
// Each stream fills its (rows x dim) tensor row-major, one value per entry.
// Streams therefore depend only on (seed, t, role, k, layer), never on K or
// the batch composition, so runs with different K share their common draws
// (paired-seed comparisons) and any draw can be reproduced independently.

constexpr uint64_t kRoleEncoderNoise = 0;
constexpr uint64_t kRoleZNoise = 1;
constexpr uint64_t kRoleMixtureNoise = 2;

inline uint64_t pack_noise_tag(uint64_t t, uint64_t role, uint64_t k, uint64_t layer) {
    return (t << 40) | (role << 36) | (k << 8) | layer;
}

RngState noise_stream(const RngState& base, uint64_t t, uint64_t role, uint64_t k, uint64_t layer);

/// Fills rows x dim with the model's noise kind from one stream.
Tensor draw_noise_rows(const NoiseSpec& spec, Index layer, Index rows, RngState stream);
/// Standard normal rows x dim from one stream.
Tensor draw_normal_rows(Index rows, Index dim, RngState stream);

// ---- sequence unrolling ----

struct StepTrace {
    int t = 0;  // 1-based
    Tensor h_prev;
    std::vector<Tensor> eps;
    DiagGaussian psi;
    Tensor z;
    DiagGaussian prior;
    EmissionParams emission;
    Tensor h;
};

/// Runs the filtering recurrence over a (T x obs) sequence, sampling the
/// posterior hierarchy at every step. Deterministic per rng. T = 0 gives an
/// empty trace list.
std::vector<StepTrace> sequence_forward(const SisRnnModel& model, const Tensor& xs, RngState rng);

// ---- the training objective ----

struct BoundEstimate {
    double total = 0.0;           // reconstruction - beta * (kl - b_k)
    double reconstruction = 0.0;  // E log p(x_t | z_t, h_{t-1}), summed over t
    double kl = 0.0;              // analytic KL(q(z|psi_t) || p(z|h_{t-1})), summed over t
    double b_k = 0.0;             // log q(z|psi_t) - log mixture, summed over t
    int K = 0;
    int n_z = 1;
    double beta = 1.0;
};

/// The unrolled objective for fixed (T, K): batched over rows, with the
/// K-sample mixture correction built from logsumexp over per-component
/// z-densities. Rebind inputs to reuse across minibatches.
struct BoundGraph {
    Graph graph;
    int T = 0;
    int K = 0;
    std::vector<NodeId> x;                            // per t, rows x obs
    std::vector<NodeId> eps_z;                        // per t, rows x latent
    std::vector<std::vector<NodeId>> eps_enc;         // [t][layer]
    std::vector<std::vector<std::vector<NodeId>>> eps_mix;  // [t][k-1][layer]
    NodeId h0, beta, inv_rows;
    std::vector<NodeId> step_rows;                    // per t, rows x 1 step contribution
    NodeId bound_rows, recon_rows, kl_rows, bk_rows;  // rows x 1 per-row sums over t
    NodeId objective;                                 // scalar: mean over rows of bound_rows
    NodeId loss;                                      // -objective
};

BoundGraph build_bound_graph(const ModelConfig& cfg, int T, int K);

/// Binds x (the same sequences replicated n_z times each; row s*n_z+r is
/// replicate r of sequence s), protocol noise, h0 = 0, beta and 1/rows.
void bind_bound_inputs(Evaluation& ev, const BoundGraph& bg, const ModelConfig& cfg,
                       std::span<const Tensor* const> sequences, int n_z, const RngState& base,
                       double beta);

/// Reads the mean per-row components out of a forwarded evaluation.
BoundEstimate read_bound(const Evaluation& ev, const BoundGraph& bg, int n_z, double beta);

/// K-sample surrogate bound, Monte Carlo over n_z replicate rows.
BoundEstimate regularized_bound(const SisRnnModel& model, const Tensor& xs, int K, double beta,
                                const RngState& rng, int n_z);

/// The K = 0 surrogate (no mixture correction), beta = 1.
BoundEstimate elbo_lower_bound(const SisRnnModel& model, const Tensor& xs, const RngState& rng, int n_z);

/// Single-step mixture correction at a drawn z: log q(z|psi) minus the
/// log density of the (K+1)-component mixture built from psi plus K fresh
/// encoder samples (same x and h, fresh noise). Exactly 0 for K = 0.
double sivi_regularizer_bk(const SisRnnModel& model, const Tensor& x_t, const Tensor& h_prev,
                           const DiagGaussian& psi, const Tensor& z, int K, const RngState& rng);

// ---- generation ----

/// Ancestral sampling: z_t from the learned conditional prior, x_t from the
/// emission head, h advanced by the transition. Returns a T x obs sequence;
/// deterministic per rng.
Tensor sample_sequence(const SisRnnModel& model, Index T, RngState rng);

// ---- posterior diagnostics ----

/// n x latent samples of z_1 from the semi-implicit hierarchy for one fixed
/// probe observation: fresh encoder noise and z noise per row, h_0 = 0.
/// Streams follow the t = 0 noise protocol above.
Tensor sample_posterior_z1(const SisRnnModel& model, const Tensor& probe_x, Index n,
                           const RngState& rng);

struct Histo {
    std::vector<double> edges;   // bins + 1
    std::vector<double> counts;  // bins
};

Histo histogram(const std::vector<double>& samples, int bins);

/// Bimodality statistic: build a `bins`-bin histogram, smooth it with a
/// 3-bin moving average, and over all pairs of separated bins that reach at
/// least 25% of the smoothed maximum take
///   min( density at the lowest bin between them / min(pair heights) ).
/// 1.0 when no separated pair qualifies (unimodal); well below 1 for two
/// separated modes.
double valley_to_peak_ratio(const std::vector<double>& samples, int bins);

// ---- schedules ----

struct KSchedule {
    int ramp_epochs = 500;
    int k_min = 1;
    int k_max = 100;
};

/// Linear ramp k_min -> k_max over the first ramp_epochs epochs (round half
/// up), constant k_max afterwards.
int k_schedule(long epoch, const KSchedule& s = {});

struct AnnealSchedule {
    int cycles = 4;
    double ramp_frac = 0.5;  // fraction of each cycle spent ramping 0 -> 1
    long total_steps = 1;
};

/// Cyclic KL annealing weight: within each of `cycles` equal spans of
/// total_steps, ramps linearly 0 -> 1 over the first ramp_frac, then holds 1.
double kl_anneal_weight(long step, const AnnealSchedule& s);

}  // namespace sisrnn
