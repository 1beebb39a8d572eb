#include "sisrnn/training.hpp"

#include "sisrnn/config.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace sisrnn {

void adam_step(ParamStore& params, const GradMap& grads, AdamState& st) {
    st.step += 1;
    const double b1 = st.hp.beta1, b2 = st.hp.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;  // parameter outside this objective
        const Tensor& g = git->second;
        if (!g.same_shape(p))
            throw std::invalid_argument("adam_step: gradient shape " + g.shape_str() +
                                        " does not match parameter '" + name + "' " + p.shape_str());
        if (!g.all_finite())
            throw std::runtime_error("adam_step: non-finite gradient for parameter '" + name + "'");
        Tensor& m = st.m[name];
        Tensor& v = st.v[name];
        if (!m.same_shape(p)) m = Tensor::zeros(p.shape());
        if (!v.same_shape(p)) v = Tensor::zeros(p.shape());
        m.mat() = b1 * m.mat() + (1.0 - b1) * g.mat();
        v.mat().array() = b2 * v.mat().array() + (1.0 - b2) * g.mat().array().square();
        p.mat().array() -=
            st.hp.lr * (m.mat().array() / bias1) /
            ((v.mat().array() / bias2).sqrt() + st.hp.eps);
    }
}

double clip_global_norm(GradMap& grads, double clip) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.mat().squaredNorm();
    const double norm = std::sqrt(sq);
    if (clip > 0.0 && norm > clip) {
        const double s = clip / norm;
        for (auto& [name, g] : grads) g.mat() *= s;
    }
    return norm;
}

std::pair<SequenceDataset, SequenceDataset> load_datasets(const DataSpec& spec) {
    auto split_pair = [&](SequenceDataset all) {
        if (all.size() < spec.split_train + spec.split_test)
            throw std::invalid_argument("load_datasets: only " + std::to_string(all.size()) +
                                        " images for a " + std::to_string(spec.split_train) + "/" +
                                        std::to_string(spec.split_test) + " split");
        SequenceDataset tr, te;
        tr.modality = te.modality = all.modality;
        tr.split = "train";
        te.split = "test";
        tr.sequences.assign(all.sequences.begin(), all.sequences.begin() + spec.split_train);
        te.sequences.assign(all.sequences.begin() + spec.split_train,
                            all.sequences.begin() + spec.split_train + spec.split_test);
        return std::make_pair(std::move(tr), std::move(te));
    };

    switch (spec.kind) {
        case DataSpec::Kind::kSynthTwoMode: {
            SequenceDataset tr = synth_two_mode(spec.n_train, spec.T, spec.seed, spec.two_mode);
            SequenceDataset te = synth_two_mode(spec.n_test, spec.T, spec.seed + 1, spec.two_mode);
            tr.split = "train";
            te.split = "test";
            return {std::move(tr), std::move(te)};
        }
        case DataSpec::Kind::kMnistIdx: {
            SequenceDataset gray = load_mnist_idx(spec.images, spec.labels, spec.limit);
            return split_pair(apply_layout(binarize(gray, spec.binarize), spec.layout));
        }
        case DataSpec::Kind::kSynthDigits: {
            SequenceDataset gray;
            gray.modality = Modality::kReal;
            gray.sequences = synth_digit_images(spec.limit, spec.seed);
            return split_pair(apply_layout(binarize(gray, spec.binarize), spec.layout));
        }
    }
    throw std::invalid_argument("load_datasets: unknown dataset kind");
}

void TrainConfig::validate() const {
    model.validate();
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
    if (!(adam.lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
    if (k_min < 0 || k_max < k_min) throw std::invalid_argument("config: need 0 <= k_min <= k_max");
    if (!(k_ramp_frac > 0.0 && k_ramp_frac <= 1.0))
        throw std::invalid_argument("config: k_ramp_frac must lie in (0,1]");
    if (anneal_cycles < 1) throw std::invalid_argument("config: anneal_cycles must be >= 1");
    if (!(anneal_ramp > 0.0 && anneal_ramp <= 1.0))
        throw std::invalid_argument("config: anneal_ramp must lie in (0,1]");
    if (eval_n_z < 1) throw std::invalid_argument("config: eval_n_z must be >= 1");
}

KSchedule TrainConfig::k_sched() const {
    const int ramp = std::max(1, static_cast<int>(std::lround(k_ramp_frac * static_cast<double>(epochs))));
    return KSchedule{ramp, k_min, k_max};
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("metrics: cannot open " + path);
    out << kMetricsHeader << "\n";
    for (const MetricsRow& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%ld,%ld,%.17g,%.17g,%.17g,%d,%.3f\n", r.epoch, r.step,
                      r.train_bound, r.eval_bound, r.beta, r.K, r.wall_ms);
        out << buf;
    }
    if (!out) throw std::runtime_error("metrics: write failed for " + path);
}

namespace {

void check_dataset_model(const TrainConfig& cfg, const SequenceDataset& ds) {
    if (ds.size() == 0) throw std::invalid_argument("train: dataset is empty");
    if (ds.obs_dim() != cfg.model.obs_dim)
        throw std::invalid_argument("train: dataset obs dim " + std::to_string(ds.obs_dim()) +
                                    " does not match model obs dim " + std::to_string(cfg.model.obs_dim));
    const bool binary = ds.modality == Modality::kBinary;
    if (binary != (cfg.model.emission == Emission::kBernoulli))
        throw std::invalid_argument("train: dataset modality does not match emission head");
}

/// Mean bound over a dataset slice through an existing evaluation workspace.
double eval_mean_bound(Evaluation& ev, const BoundGraph& bg, const SisRnnModel& model,
                       const SequenceDataset& ds, Index limit, int n_z, const RngState& eval_rng) {
    const Index n = limit > 0 ? std::min(limit, ds.size()) : ds.size();
    double acc = 0.0;
    for (Index s = 0; s < n; ++s) {
        const Tensor* seq = &ds.sequences[static_cast<size_t>(s)];
        bind_bound_inputs(ev, bg, model.cfg, std::span<const Tensor* const>(&seq, 1), n_z,
                          eval_rng.fork(static_cast<uint64_t>(s)), 1.0);
        ev.forward();
        acc += read_bound(ev, bg, n_z, 1.0).total;
    }
    return acc / static_cast<double>(n);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const SequenceDataset& train_ds,
                  const SequenceDataset& test_ds, const std::string& out_dir,
                  const std::string& config_text) {
    cfg.validate();
    train_ds.validate();
    test_ds.validate();
    check_dataset_model(cfg, train_ds);
    check_dataset_model(cfg, test_ds);
    if (test_ds.seq_len() != train_ds.seq_len())
        throw std::invalid_argument("train: train/test sequence lengths differ");
    const int T = static_cast<int>(train_ds.seq_len());
    const Index n = train_ds.size();
    const long steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;

    const RngState root = RngState::from_seed(cfg.seed);
    SisRnnModel model = init_model(cfg.model, root.fork(0));
    AdamState opt;
    opt.hp = cfg.adam;
    const AnnealSchedule anneal{cfg.anneal_cycles, cfg.anneal_ramp, cfg.epochs * steps_per_epoch};
    const KSchedule ks = cfg.k_sched();
    const RngState eval_rng = root.fork(3);

    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    std::optional<BoundGraph> bg;
    std::optional<Evaluation> ev;
    int cur_k = -1;

    std::vector<Index> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    long gstep = 0;
    for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const int K = k_schedule(epoch - 1, ks);
        if (K != cur_k) {
            bg.emplace(build_bound_graph(cfg.model, T, K));
            ev.emplace(bg->graph);
            cur_k = K;
        }

        RngState shuffle_rng = root.fork(1).fork(static_cast<uint64_t>(epoch));
        for (Index i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[shuffle_rng.next_u64() % static_cast<uint64_t>(i + 1)]);

        double bound_acc = 0.0;
        double beta = 0.0;
        Index rows_acc = 0;
        for (Index at = 0; at < n; at += cfg.batch) {
            const Index bsz = std::min<Index>(cfg.batch, n - at);
            std::vector<const Tensor*> seqs(static_cast<size_t>(bsz));
            for (Index i = 0; i < bsz; ++i)
                seqs[static_cast<size_t>(i)] =
                    &train_ds.sequences[static_cast<size_t>(order[static_cast<size_t>(at + i)])];

            beta = kl_anneal_weight(gstep, anneal);
            bind_params(*ev, model);
            bind_bound_inputs(*ev, *bg, cfg.model, seqs, 1, root.fork(2).fork(static_cast<uint64_t>(gstep)),
                              beta);
            ev->forward();
            BoundEstimate est;
            try {
                est = read_bound(*ev, *bg, 1, beta);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("train: epoch " + std::to_string(epoch) + " step " +
                                         std::to_string(gstep) + ": " + e.what());
            }
            GradMap grads = ev->backward(bg->loss);
            clip_global_norm(grads, cfg.clip_norm);
            try {
                adam_step(model.params, grads, opt);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("train: epoch " + std::to_string(epoch) + " step " +
                                         std::to_string(gstep) + ": " + e.what());
            }
            bound_acc += est.total * static_cast<double>(bsz);
            rows_acc += bsz;
            ++gstep;
        }

        bind_params(*ev, model);
        const double eval_bound =
            eval_mean_bound(*ev, *bg, model, test_ds, cfg.eval_limit, cfg.eval_n_z, eval_rng);

        MetricsRow row;
        row.epoch = epoch;
        row.step = gstep;
        row.train_bound = bound_acc / static_cast<double>(rows_acc);
        row.eval_bound = eval_bound;
        row.beta = beta;
        row.K = K;
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(row);

        if (!out_dir.empty()) {
            write_metrics_csv(out_dir + "/metrics.csv", result.log);
            if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0)
                save_checkpoint(model, root, epoch, config_text, out_dir + "/checkpoint");
        }
    }

    if (!out_dir.empty()) save_checkpoint(model, root, cfg.epochs, config_text, out_dir + "/checkpoint");
    result.model = std::move(model);
    result.final_epoch = cfg.epochs;
    return result;
}

EvalReport evaluate_nll(const SisRnnModel& model, const SequenceDataset& ds, int n_z, int K,
                        const RngState& rng) {
    if (n_z < 1) throw std::invalid_argument("evaluate_nll: n_z must be >= 1");
    ds.validate();
    if (ds.size() == 0) throw std::invalid_argument("evaluate_nll: dataset is empty");
    BoundGraph bg = build_bound_graph(model.cfg, static_cast<int>(ds.seq_len()), K);
    Evaluation ev(bg.graph);
    bind_params(ev, model);
    EvalReport report;
    double acc = 0.0;
    for (Index s = 0; s < ds.size(); ++s) {
        const Tensor* seq = &ds.sequences[static_cast<size_t>(s)];
        bind_bound_inputs(ev, bg, model.cfg, std::span<const Tensor* const>(&seq, 1), n_z,
                          rng.fork(static_cast<uint64_t>(s)), 1.0);
        ev.forward();
        const double nll = -read_bound(ev, bg, n_z, 1.0).total;
        report.per_sequence_nll.push_back(nll);
        acc += nll;
    }
    report.mean_nll = acc / static_cast<double>(ds.size());
    return report;
}

// ---- checkpoint format ----

namespace {

void put_le64(std::ostream& out, uint64_t bits) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_le64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("checkpoint: truncated blob");
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    return bits;
}

}  // namespace

void save_checkpoint(const SisRnnModel& model, const RngState& rng, long epoch,
                     const std::string& config_text, const std::string& base_path) {
    std::ofstream man(base_path + ".manifest");
    if (!man) throw std::runtime_error("checkpoint: cannot open " + base_path + ".manifest");
    man << "sisrnn-checkpoint v1\n";
    man << "epoch " << epoch << "\n";
    man << "rng " << rng.key << " " << rng.counter << "\n";
    man << "config-begin\n" << config_text;
    if (!config_text.empty() && config_text.back() != '\n') man << "\n";
    man << "config-end\n";
    man << "params " << model.params.size() << "\n";
    uint64_t offset = 0;
    for (const auto& [name, t] : model.params) {
        man << name << " " << t.rank();
        for (Index d : t.shape()) man << " " << d;
        man << " " << offset << "\n";
        offset += static_cast<uint64_t>(t.size()) * 8;
    }
    man << "blob-bytes " << offset << "\n";
    if (!man) throw std::runtime_error("checkpoint: write failed for " + base_path + ".manifest");
    man.close();

    std::ofstream blob(base_path + ".blob", std::ios::binary);
    if (!blob) throw std::runtime_error("checkpoint: cannot open " + base_path + ".blob");
    for (const auto& [name, t] : model.params)
        for (double v : t.values()) put_le64(blob, std::bit_cast<uint64_t>(v));
    if (!blob) throw std::runtime_error("checkpoint: write failed for " + base_path + ".blob");
}

CheckpointData load_checkpoint(const std::string& base_path) {
    std::ifstream man(base_path + ".manifest");
    if (!man) throw std::runtime_error("checkpoint: cannot open " + base_path + ".manifest");
    std::string line;
    if (!std::getline(man, line) || line != "sisrnn-checkpoint v1")
        throw std::runtime_error("checkpoint: unsupported version '" + line + "'");

    CheckpointData data;
    std::string word;
    if (!(man >> word) || word != "epoch" || !(man >> data.epoch))
        throw std::runtime_error("checkpoint: malformed epoch line");
    if (!(man >> word) || word != "rng" || !(man >> data.rng.key >> data.rng.counter))
        throw std::runtime_error("checkpoint: malformed rng line");
    std::getline(man, line);
    if (!std::getline(man, line) || line != "config-begin")
        throw std::runtime_error("checkpoint: missing config block");
    std::ostringstream cfgtext;
    while (std::getline(man, line) && line != "config-end") cfgtext << line << "\n";
    if (line != "config-end") throw std::runtime_error("checkpoint: unterminated config block");
    data.config_text = cfgtext.str();

    size_t param_count = 0;
    if (!(man >> word) || word != "params" || !(man >> param_count))
        throw std::runtime_error("checkpoint: malformed params line");

    struct Entry {
        std::string name;
        std::vector<Index> shape;
        uint64_t offset;
    };
    std::vector<Entry> entries;
    uint64_t expected_offset = 0;
    for (size_t i = 0; i < param_count; ++i) {
        Entry e;
        int rank = 0;
        if (!(man >> e.name >> rank)) throw std::runtime_error("checkpoint: malformed parameter table");
        if (rank < 0 || rank > 2) throw std::runtime_error("checkpoint: bad rank in parameter table");
        Index sz = 1;
        for (int d = 0; d < rank; ++d) {
            Index dim = 0;
            if (!(man >> dim)) throw std::runtime_error("checkpoint: malformed parameter table");
            e.shape.push_back(dim);
            sz *= dim;
        }
        if (!(man >> e.offset)) throw std::runtime_error("checkpoint: malformed parameter table");
        if (e.offset != expected_offset)
            throw std::runtime_error("checkpoint: manifest/blob disagreement: parameter '" + e.name +
                                     "' offset " + std::to_string(e.offset) + ", expected " +
                                     std::to_string(expected_offset));
        expected_offset += static_cast<uint64_t>(sz) * 8;
        entries.push_back(std::move(e));
    }
    uint64_t blob_bytes = 0;
    if (!(man >> word) || word != "blob-bytes" || !(man >> blob_bytes))
        throw std::runtime_error("checkpoint: malformed blob-bytes line");
    if (blob_bytes != expected_offset)
        throw std::runtime_error("checkpoint: manifest/blob disagreement: declared " +
                                 std::to_string(blob_bytes) + " bytes, parameter table needs " +
                                 std::to_string(expected_offset));

    TrainConfig cfg = parse_config_text(data.config_text, {});
    data.model.cfg = cfg.model;

    std::ifstream blob(base_path + ".blob", std::ios::binary);
    if (!blob) throw std::runtime_error("checkpoint: cannot open " + base_path + ".blob");
    blob.seekg(0, std::ios::end);
    const uint64_t actual = static_cast<uint64_t>(blob.tellg());
    if (actual != blob_bytes)
        throw std::runtime_error("checkpoint: blob length " + std::to_string(actual) +
                                 " disagrees with manifest (" + std::to_string(blob_bytes) + ")");
    blob.seekg(0);
    for (const Entry& e : entries) {
        Tensor t = Tensor::zeros(e.shape);
        for (double& v : t.values_mut()) v = std::bit_cast<double>(get_le64(blob));
        data.model.params[e.name] = std::move(t);
    }

    // The parameter set must be exactly what the echoed config declares.
    SisRnnModel expect = init_model(cfg.model, RngState::from_seed(0));
    if (expect.params.size() != data.model.params.size())
        throw std::runtime_error("checkpoint: parameter table does not match config");
    for (const auto& [name, t] : expect.params) {
        auto it = data.model.params.find(name);
        if (it == data.model.params.end() || !it->second.same_shape(t))
            throw std::runtime_error("checkpoint: parameter table does not match config (at '" + name + "')");
    }
    return data;
}

}  // namespace sisrnn
