#include "sisrnn/config.hpp"
#include "sisrnn/data.hpp"
#include "sisrnn/inference.hpp"
#include "sisrnn/svg.hpp"
#include "sisrnn/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace sisrnn;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitGradcheck = 3;

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& out_dir) {
    TrainConfig cfg = config_path.empty() ? parse_config_text("", overrides)
                                          : parse_config(config_path, overrides);
    auto [train_ds, test_ds] = load_datasets(cfg.data);
    finalize_config(cfg, train_ds);
    const std::string config_text = serialize_config(cfg);

    std::filesystem::create_directories(out_dir);
    if (cfg.data.kind == DataSpec::Kind::kSynthTwoMode) {
        export_csv(train_ds, out_dir + "/synth_train.csv");
        export_csv(test_ds, out_dir + "/synth_test.csv");
    }

    TrainResult result = train(cfg, train_ds, test_ds, out_dir, config_text);

    std::vector<double> xs, tb, eb;
    for (const MetricsRow& r : result.log) {
        xs.push_back(static_cast<double>(r.epoch));
        tb.push_back(r.train_bound);
        eb.push_back(r.eval_bound);
    }
    write_line_svg(out_dir + "/bound_curve.svg", xs, {{"train bound", tb}, {"eval bound", eb}},
                   "surrogate bound per epoch");
    std::printf("trained %ld epochs; final train bound %.6f, eval bound %.6f\n", result.final_epoch,
                result.log.back().train_bound, result.log.back().eval_bound);
    std::printf("wrote %s/metrics.csv, checkpoint.manifest, checkpoint.blob, bound_curve.svg\n",
                out_dir.c_str());
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_overrides, int n_z, int k_opt,
             const std::string& out_dir) {
    CheckpointData ck = load_checkpoint(checkpoint);
    TrainConfig cfg = parse_config_text(ck.config_text, split_commas(data_overrides));
    auto [train_ds, test_ds] = load_datasets(cfg.data);
    (void)train_ds;
    const int K = k_opt >= 0 ? k_opt : cfg.k_max;
    EvalReport report = evaluate_nll(ck.model, test_ds, n_z, K,
                                     RngState::from_seed(cfg.seed).fork(3));
    std::printf("mean NLL bound %.6f over %zu sequences (K=%d, n_z=%d)\n", report.mean_nll,
                report.per_sequence_nll.size(), K, n_z);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        std::ofstream out(out_dir + "/eval.csv");
        out << "seq_id,nll_bound\n";
        for (size_t i = 0; i < report.per_sequence_nll.size(); ++i) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, report.per_sequence_nll[i]);
            out << buf;
        }
    }
    return kExitOk;
}

int cmd_sample(const std::string& checkpoint, int n, int T, uint64_t seed, const std::string& out_dir) {
    if (n < 1 || T < 1) throw std::invalid_argument("sample: n and T must be >= 1");
    CheckpointData ck = load_checkpoint(checkpoint);
    RngState root = RngState::from_seed(seed);

    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir + "/samples.csv");
    if (!out) throw std::runtime_error("cannot open " + out_dir + "/samples.csv");
    out << "seq_id,t,dim,value\n";
    for (int s = 0; s < n; ++s) {
        Tensor xs = sample_sequence(ck.model, T, root.fork(static_cast<uint64_t>(s)));
        for (int t = 0; t < T; ++t)
            for (Index d = 0; d < ck.model.cfg.obs_dim; ++d) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "%d,%d,%lld,%.17g\n", s, t, static_cast<long long>(d),
                              xs.at(t, d));
                out << buf;
            }
    }
    std::printf("wrote %d sequences of length %d to %s/samples.csv\n", n, T, out_dir.c_str());
    return kExitOk;
}

/// Caps every dimension so central differences over the full parameter set
/// stay fast.
ModelConfig tiny_model_config(ModelConfig m) {
    m.obs_dim = m.obs_dim > 0 ? std::min<Index>(m.obs_dim, 5) : 5;
    m.latent_dim = std::min<Index>(m.latent_dim, 4);
    m.hidden_dim = std::min<Index>(m.hidden_dim, 8);
    for (Index& w : m.prior_widths) w = std::min<Index>(w, 8);
    for (Index& w : m.enc_widths) w = std::min<Index>(w, 8);
    for (Index& w : m.dec_widths) w = std::min<Index>(w, 8);
    for (Index& d : m.noise.dims) d = std::min<Index>(d, 3);
    return m;
}

int cmd_gradcheck(const std::string& config_path, uint64_t seed, bool corrupt) {
    TrainConfig cfg = config_path.empty() ? TrainConfig{} : parse_config(config_path, {});
    ModelConfig mc = tiny_model_config(cfg.model);
    const int T = 3;
    const int K = 2;
    const double tol = 1e-4;

    RngState root = RngState::from_seed(seed);
    SisRnnModel model = init_model(mc, root.fork(0));
    Tensor xs = Tensor::zeros({T, mc.obs_dim});
    RngState xrng = root.fork(1);
    for (double& v : xs.values_mut())
        v = mc.emission == Emission::kBernoulli ? (xrng.bernoulli(0.5) ? 1.0 : 0.0)
                                                : xrng.normal();
    const RngState noise = root.fork(2);

    BoundGraph bg = build_bound_graph(mc, T, K);
    Evaluation ev(bg.graph);
    bind_params(ev, model);
    const Tensor* seq = &xs;
    bind_bound_inputs(ev, bg, mc, std::span<const Tensor* const>(&seq, 1), 1, noise, 1.0);
    ev.forward();
    GradMap analytic = ev.backward(bg.loss);
    if (corrupt && !analytic.empty()) analytic.begin()->second.mat()(0, 0) += 1e-2;

    auto loss = [&](const GradMap& p) {
        SisRnnModel m2 = model;
        for (const auto& [name, t] : p) m2.params[name] = t;
        return -regularized_bound(m2, xs, K, 1.0, noise, 1).total;
    };

    // Step 1e-4: small enough for quadratic truncation, large enough that
    // subtractive cancellation stays below tolerance on near-zero entries.
    std::printf("gradcheck: T=%d K=%d params=%lld tolerance=%g\n", T, K,
                static_cast<long long>(mc.param_count()), tol);
    bool ok = true;
    for (const auto& [name, value] : model.params) {
        GradMap one{{name, value}};
        GradMap ga{{name, analytic.at(name)}};
        const double err = finite_difference_check(loss, one, ga, 1e-4);
        std::printf("  %-12s max rel err %.3e\n", name.c_str(), err);
        if (!(err < tol)) ok = false;
    }
    std::printf("gradcheck: %s\n", ok ? "PASS" : "FAIL");
    return ok ? kExitOk : kExitGradcheck;
}

int cmd_posterior(const std::string& checkpoint, long n, double probe, int bins,
                  const std::string& out_dir) {
    if (n < 1) throw std::invalid_argument("posterior: n must be >= 1");
    if (bins < 4) throw std::invalid_argument("posterior: need at least 4 bins");
    CheckpointData ck = load_checkpoint(checkpoint);
    const ModelConfig& mc = ck.model.cfg;
    TrainConfig cfg = parse_config_text(ck.config_text, {});

    Tensor samples = sample_posterior_z1(ck.model, Tensor::full({mc.obs_dim}, probe),
                                         static_cast<Index>(n),
                                         RngState::from_seed(cfg.seed).fork(4));

    std::vector<double> first_dim(static_cast<size_t>(n));
    for (Index i = 0; i < samples.rows(); ++i) first_dim[static_cast<size_t>(i)] = samples.at(i, 0);
    const Histo h = histogram(first_dim, bins);
    const double ratio = valley_to_peak_ratio(first_dim, bins);

    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir + "/posterior.csv");
    if (!out) throw std::runtime_error("cannot open " + out_dir + "/posterior.csv");
    out << "sample_id,dim,value\n";
    for (Index i = 0; i < samples.rows(); ++i)
        for (Index d = 0; d < samples.cols(); ++d) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "%lld,%lld,%.17g\n", static_cast<long long>(i),
                          static_cast<long long>(d), samples.at(i, d));
            out << buf;
        }
    write_histogram_svg(out_dir + "/posterior_hist.svg", h.edges, h.counts,
                        "posterior samples of z_1 (first dim)");
    std::ofstream stats(out_dir + "/posterior_stats.txt");
    stats << "samples " << n << "\nvalley_to_peak " << ratio << "\n";
    std::printf("posterior: %ld samples, valley-to-peak ratio %.4f\n", n, ratio);
    std::printf("wrote %s/posterior.csv, posterior_hist.svg, posterior_stats.txt\n", out_dir.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semi-implicit stochastic recurrent network toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", checkpoint, data_overrides;
    std::vector<std::string> overrides;
    int n = 1, T = 28, n_z = 16, k_opt = -1, bins = 64;
    long n_samples = 20000;
    uint64_t seed = 1;
    double probe = 0.0;
    bool corrupt = false;

    CLI::App* train = app.add_subcommand("train", "optimize a model on the configured dataset");
    train->add_option("--config", config_path, "flat key=value config file");
    train->add_option("--set", overrides, "override, key=value (repeatable)");
    train->add_option("--out", out_dir, "output directory");

    CLI::App* eval = app.add_subcommand("eval", "report the NLL bound on a test split");
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("--data", data_overrides, "comma-separated data_* overrides");
    eval->add_option("--n-z", n_z, "Monte Carlo samples per sequence");
    eval->add_option("--k", k_opt, "mixture samples (default: configured k_max)");
    eval->add_option("--out", out_dir, "optional directory for per-sequence CSV");

    CLI::App* sample = app.add_subcommand("sample", "generate sequences from the learned prior");
    sample->add_option("--checkpoint", checkpoint)->required();
    sample->add_option("-n", n, "sequences to generate");
    sample->add_option("-T", T, "sequence length");
    sample->add_option("--seed", seed);
    sample->add_option("--out", out_dir);

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "verify objective gradients at tiny dims");
    gradcheck->add_option("--config", config_path);
    gradcheck->add_option("--seed", seed);
    gradcheck->add_flag("--corrupt", corrupt)->group("");  // test hook

    CLI::App* posterior = app.add_subcommand("posterior", "sample z_1 for an ambiguous probe input");
    posterior->add_option("--checkpoint", checkpoint)->required();
    posterior->add_option("-n", n_samples, "posterior samples");
    posterior->add_option("--probe", probe, "probe observation value (broadcast)");
    posterior->add_option("--bins", bins, "histogram bins");
    posterior->add_option("--out", out_dir);

    try {
        app.parse(argc, argv);
        if (train->parsed()) return cmd_train(config_path, overrides, out_dir);
        if (eval->parsed()) return cmd_eval(checkpoint, data_overrides, n_z, k_opt,
                                            eval->count("--out") ? out_dir : "");
        if (sample->parsed()) return cmd_sample(checkpoint, n, T, seed, out_dir);
        if (gradcheck->parsed()) return cmd_gradcheck(config_path, seed, corrupt);
        if (posterior->parsed()) return cmd_posterior(checkpoint, n_samples, probe, bins, out_dir);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitOk;
}
