#pragma once

#include "sisrnn/data.hpp"
#include "sisrnn/inference.hpp"
#include "sisrnn/model.hpp"

#include <string>
#include <vector>

namespace sisrnn {

struct AdamParams {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamParams hp;
    long step = 0;
    ParamStore m;
    ParamStore v;
};

/// One bias-corrected Adam update, in place. Moments are created on first
/// use. Throws on a non-finite gradient, naming the parameter.
void adam_step(ParamStore& params, const GradMap& grads, AdamState& st);

/// Scales all gradients by clip/norm when the global L2 norm exceeds clip.
/// Returns the pre-clip norm.
double clip_global_norm(GradMap& grads, double clip);

// ---- dataset selection ----

struct DataSpec {
    enum class Kind { kSynthTwoMode, kMnistIdx, kSynthDigits };
    Kind kind = Kind::kSynthTwoMode;

    // synth2
    Index n_train = 1000;
    Index n_test = 500;
    Index T = 20;
    uint64_t seed = 7;
    TwoModeParams two_mode;

    // mnist / digits
    std::string images;
    std::string labels;
    Index limit = 1500;
    Layout layout = Layout::kRow;
    BinarizeMode binarize;
    Index split_train = 1000;
    Index split_test = 500;
};

/// Materializes the (train, test) pair a DataSpec describes.
std::pair<SequenceDataset, SequenceDataset> load_datasets(const DataSpec& spec);

// ---- configuration ----

struct TrainConfig {
    ModelConfig model;
    bool auto_emission = true;  // pick the emission head from the data modality
    DataSpec data;
    long epochs = 200;
    Index batch = 128;
    uint64_t seed = 1;
    AdamParams adam;
    double clip_norm = 5.0;
    int k_min = 1;
    int k_max = 100;
    double k_ramp_frac = 0.25;  // K ramps over this fraction of the epoch budget
    int anneal_cycles = 4;
    double anneal_ramp = 0.5;
    int eval_n_z = 1;
    Index eval_limit = 0;  // 0 = evaluate the full test split each epoch
    long checkpoint_every = 0;  // 0 = final checkpoint only

    void validate() const;
    KSchedule k_sched() const;
};

// ---- metrics ----

struct MetricsRow {
    long epoch = 0;
    long step = 0;
    double train_bound = 0.0;
    double eval_bound = 0.0;
    double beta = 0.0;
    int K = 0;
    double wall_ms = 0.0;
};

inline const char* kMetricsHeader = "epoch,step,train_bound,eval_bound,beta,K,wall_ms";
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

// ---- training / evaluation ----

struct TrainResult {
    SisRnnModel model;
    std::vector<MetricsRow> log;
    long final_epoch = 0;
};

/// Full optimization loop. Writes metrics.csv and checkpoint.{manifest,blob}
/// under out_dir when it is nonempty; config_text is echoed into the
/// checkpoint manifest. Deterministic per (seed, config, dataset) in
/// everything except the wall_ms column.
TrainResult train(const TrainConfig& cfg, const SequenceDataset& train_ds,
                  const SequenceDataset& test_ds, const std::string& out_dir,
                  const std::string& config_text);

struct EvalReport {
    std::vector<double> per_sequence_nll;  // -bound per sequence (upper bounds on NLL)
    double mean_nll = 0.0;
};

/// Reports the negative surrogate bound per sequence and its mean. The
/// reported numbers upper-bound the true NLL.
EvalReport evaluate_nll(const SisRnnModel& model, const SequenceDataset& ds, int n_z, int K,
                        const RngState& rng);

// ---- checkpointing ----

struct CheckpointData {
    int version = 1;
    std::string config_text;
    SisRnnModel model;
    RngState rng;
    long epoch = 0;
};

/// Writes <base>.manifest (text: version, config echo, parameter table with
/// byte offsets, rng state, epoch) and <base>.blob (little-endian IEEE-754
/// doubles in manifest order).
void save_checkpoint(const SisRnnModel& model, const RngState& rng, long epoch,
                     const std::string& config_text, const std::string& base_path);

CheckpointData load_checkpoint(const std::string& base_path);

}  // namespace sisrnn
