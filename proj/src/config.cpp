#include "sisrnn/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace sisrnn {

namespace {

long to_long(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        long out = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return out;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "': '" + v + "' is not an integer");
    }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return out;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "': '" + v + "' is not a nonnegative integer");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return out;
    } catch (...) {
        throw std::invalid_argument("config: key '" + key + "': '" + v + "' is not a number");
    }
}

std::vector<Index> to_index_list(const std::string& key, const std::string& v) {
    std::vector<Index> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_long(key, item));
    if (out.empty()) throw std::invalid_argument("config: key '" + key + "': empty list");
    return out;
}

std::string from_index_list(const std::vector<Index>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct KeySpec {
    const char* name;
    const char* desc;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

const std::vector<KeySpec>& registry() {
    auto positive = [](const std::string& key, long v) {
        if (v < 1) throw std::invalid_argument("config: key '" + key + "' must be >= 1");
        return v;
    };
    auto nonneg = [](const std::string& key, long v) {
        if (v < 0) throw std::invalid_argument("config: key '" + key + "' must be >= 0");
        return v;
    };
    static const std::vector<KeySpec> keys = {
        {"obs_dim", "observation dim (0 = derive from data)",
         [nonneg](TrainConfig& c, const std::string& v) { c.model.obs_dim = nonneg("obs_dim", to_long("obs_dim", v)); },
         [](const TrainConfig& c) { return std::to_string(c.model.obs_dim); }},
        {"latent", "latent dim",
         [positive](TrainConfig& c, const std::string& v) { c.model.latent_dim = positive("latent", to_long("latent", v)); },
         [](const TrainConfig& c) { return std::to_string(c.model.latent_dim); }},
        {"hidden", "GRU hidden units",
         [positive](TrainConfig& c, const std::string& v) { c.model.hidden_dim = positive("hidden", to_long("hidden", v)); },
         [](const TrainConfig& c) { return std::to_string(c.model.hidden_dim); }},
        {"prior_widths", "prior net layer widths",
         [](TrainConfig& c, const std::string& v) { c.model.prior_widths = to_index_list("prior_widths", v); },
         [](const TrainConfig& c) { return from_index_list(c.model.prior_widths); }},
        {"enc_widths", "encoder layer widths",
         [](TrainConfig& c, const std::string& v) { c.model.enc_widths = to_index_list("enc_widths", v); },
         [](const TrainConfig& c) { return from_index_list(c.model.enc_widths); }},
        {"noise_dims", "per-layer encoder noise dims",
         [](TrainConfig& c, const std::string& v) { c.model.noise.dims = to_index_list("noise_dims", v); },
         [](const TrainConfig& c) { return from_index_list(c.model.noise.dims); }},
        {"noise_kind", "bernoulli | gaussian",
         [](TrainConfig& c, const std::string& v) {
             if (v == "bernoulli") c.model.noise.kind = NoiseSpec::Kind::kBernoulli;
             else if (v == "gaussian") c.model.noise.kind = NoiseSpec::Kind::kGaussian;
             else throw std::invalid_argument("config: key 'noise_kind': expected bernoulli or gaussian");
         },
         [](const TrainConfig& c) {
             return c.model.noise.kind == NoiseSpec::Kind::kBernoulli ? "bernoulli" : "gaussian";
         }},
        {"noise_p", "Bernoulli noise success probability",
         [](TrainConfig& c, const std::string& v) { c.model.noise.p = to_double("noise_p", v); },
         [](const TrainConfig& c) { return fmt_double(c.model.noise.p); }},
        {"dec_widths", "decoder layer widths",
         [](TrainConfig& c, const std::string& v) { c.model.dec_widths = to_index_list("dec_widths", v); },
         [](const TrainConfig& c) { return from_index_list(c.model.dec_widths); }},
        {"emission", "bernoulli | gaussian | auto",
         [](TrainConfig& c, const std::string& v) {
             if (v == "auto") c.auto_emission = true;
             else if (v == "bernoulli") { c.auto_emission = false; c.model.emission = Emission::kBernoulli; }
             else if (v == "gaussian") { c.auto_emission = false; c.model.emission = Emission::kGaussian; }
             else throw std::invalid_argument("config: key 'emission': expected bernoulli, gaussian or auto");
         },
         [](const TrainConfig& c) {
             if (c.auto_emission) return std::string("auto");
             return std::string(c.model.emission == Emission::kBernoulli ? "bernoulli" : "gaussian");
         }},
        {"epochs", "training epochs",
         [positive](TrainConfig& c, const std::string& v) { c.epochs = positive("epochs", to_long("epochs", v)); },
         [](const TrainConfig& c) { return std::to_string(c.epochs); }},
        {"batch", "minibatch size",
         [positive](TrainConfig& c, const std::string& v) { c.batch = positive("batch", to_long("batch", v)); },
         [](const TrainConfig& c) { return std::to_string(c.batch); }},
        {"seed", "master seed",
         [](TrainConfig& c, const std::string& v) { c.seed = to_u64("seed", v); },
         [](const TrainConfig& c) { return std::to_string(c.seed); }},
        {"lr", "Adam learning rate",
         [](TrainConfig& c, const std::string& v) {
             c.adam.lr = to_double("lr", v);
             if (!(c.adam.lr > 0.0)) throw std::invalid_argument("config: key 'lr' must be positive");
         },
         [](const TrainConfig& c) { return fmt_double(c.adam.lr); }},
        {"clip_norm", "global gradient norm clip (0 disables)",
         [](TrainConfig& c, const std::string& v) { c.clip_norm = to_double("clip_norm", v); },
         [](const TrainConfig& c) { return fmt_double(c.clip_norm); }},
        {"k_min", "mixture samples at epoch 0",
         [nonneg](TrainConfig& c, const std::string& v) { c.k_min = static_cast<int>(nonneg("k_min", to_long("k_min", v))); },
         [](const TrainConfig& c) { return std::to_string(c.k_min); }},
        {"k_max", "mixture samples after the ramp",
         [nonneg](TrainConfig& c, const std::string& v) { c.k_max = static_cast<int>(nonneg("k_max", to_long("k_max", v))); },
         [](const TrainConfig& c) { return std::to_string(c.k_max); }},
        {"k_ramp_frac", "fraction of epochs spent ramping K",
         [](TrainConfig& c, const std::string& v) { c.k_ramp_frac = to_double("k_ramp_frac", v); },
         [](const TrainConfig& c) { return fmt_double(c.k_ramp_frac); }},
        {"anneal_cycles", "KL annealing cycles",
         [positive](TrainConfig& c, const std::string& v) {
             c.anneal_cycles = static_cast<int>(positive("anneal_cycles", to_long("anneal_cycles", v)));
         },
         [](const TrainConfig& c) { return std::to_string(c.anneal_cycles); }},
        {"anneal_ramp", "ramp fraction within each cycle",
         [](TrainConfig& c, const std::string& v) { c.anneal_ramp = to_double("anneal_ramp", v); },
         [](const TrainConfig& c) { return fmt_double(c.anneal_ramp); }},
        {"eval_n_z", "Monte Carlo samples per sequence at evaluation",
         [positive](TrainConfig& c, const std::string& v) {
             c.eval_n_z = static_cast<int>(positive("eval_n_z", to_long("eval_n_z", v)));
         },
         [](const TrainConfig& c) { return std::to_string(c.eval_n_z); }},
        {"eval_limit", "test sequences per epoch eval (0 = all)",
         [nonneg](TrainConfig& c, const std::string& v) { c.eval_limit = nonneg("eval_limit", to_long("eval_limit", v)); },
         [](const TrainConfig& c) { return std::to_string(c.eval_limit); }},
        {"checkpoint_every", "checkpoint cadence in epochs (0 = final only)",
         [nonneg](TrainConfig& c, const std::string& v) {
             c.checkpoint_every = nonneg("checkpoint_every", to_long("checkpoint_every", v));
         },
         [](const TrainConfig& c) { return std::to_string(c.checkpoint_every); }},
        {"data_kind", "synth2 | mnist | digits",
         [](TrainConfig& c, const std::string& v) {
             if (v == "synth2") c.data.kind = DataSpec::Kind::kSynthTwoMode;
             else if (v == "mnist") c.data.kind = DataSpec::Kind::kMnistIdx;
             else if (v == "digits") c.data.kind = DataSpec::Kind::kSynthDigits;
             else throw std::invalid_argument("config: key 'data_kind': expected synth2, mnist or digits");
         },
         [](const TrainConfig& c) {
             switch (c.data.kind) {
                 case DataSpec::Kind::kSynthTwoMode: return "synth2";
                 case DataSpec::Kind::kMnistIdx: return "mnist";
                 case DataSpec::Kind::kSynthDigits: return "digits";
             }
             return "synth2";
         }},
        {"data_n_train", "synth2 training sequences",
         [positive](TrainConfig& c, const std::string& v) { c.data.n_train = positive("data_n_train", to_long("data_n_train", v)); },
         [](const TrainConfig& c) { return std::to_string(c.data.n_train); }},
        {"data_n_test", "synth2 test sequences",
         [positive](TrainConfig& c, const std::string& v) { c.data.n_test = positive("data_n_test", to_long("data_n_test", v)); },
         [](const TrainConfig& c) { return std::to_string(c.data.n_test); }},
        {"data_T", "synth2 sequence length",
         [positive](TrainConfig& c, const std::string& v) { c.data.T = positive("data_T", to_long("data_T", v)); },
         [](const TrainConfig& c) { return std::to_string(c.data.T); }},
        {"data_seed", "dataset seed",
         [](TrainConfig& c, const std::string& v) { c.data.seed = to_u64("data_seed", v); },
         [](const TrainConfig& c) { return std::to_string(c.data.seed); }},
        {"data_drift", "synth2 regime slope",
         [](TrainConfig& c, const std::string& v) { c.data.two_mode.drift = to_double("data_drift", v); },
         [](const TrainConfig& c) { return fmt_double(c.data.two_mode.drift); }},
        {"data_amp", "synth2 sinusoid amplitude",
         [](TrainConfig& c, const std::string& v) { c.data.two_mode.amp = to_double("data_amp", v); },
         [](const TrainConfig& c) { return fmt_double(c.data.two_mode.amp); }},
        {"data_noise_sd", "synth2 observation noise",
         [](TrainConfig& c, const std::string& v) { c.data.two_mode.noise_sd = to_double("data_noise_sd", v); },
         [](const TrainConfig& c) { return fmt_double(c.data.two_mode.noise_sd); }},
        {"data_images", "IDX image file path",
         [](TrainConfig& c, const std::string& v) { c.data.images = v; },
         [](const TrainConfig& c) { return c.data.images; }},
        {"data_labels", "IDX label file path (optional)",
         [](TrainConfig& c, const std::string& v) { c.data.labels = v; },
         [](const TrainConfig& c) { return c.data.labels; }},
        {"data_limit", "images to load",
         [positive](TrainConfig& c, const std::string& v) { c.data.limit = positive("data_limit", to_long("data_limit", v)); },
         [](const TrainConfig& c) { return std::to_string(c.data.limit); }},
        {"data_layout", "row | pixel",
         [](TrainConfig& c, const std::string& v) {
             if (v == "row") c.data.layout = Layout::kRow;
             else if (v == "pixel") c.data.layout = Layout::kPixel;
             else throw std::invalid_argument("config: key 'data_layout': expected row or pixel");
         },
         [](const TrainConfig& c) { return c.data.layout == Layout::kRow ? "row" : "pixel"; }},
        {"data_binarize", "stochastic | threshold",
         [](TrainConfig& c, const std::string& v) {
             if (v == "stochastic") c.data.binarize.kind = BinarizeMode::Kind::kStochastic;
             else if (v == "threshold") c.data.binarize.kind = BinarizeMode::Kind::kThreshold;
             else throw std::invalid_argument("config: key 'data_binarize': expected stochastic or threshold");
         },
         [](const TrainConfig& c) {
             return c.data.binarize.kind == BinarizeMode::Kind::kStochastic ? "stochastic" : "threshold";
         }},
        {"data_binarize_seed", "stochastic binarization seed",
         [](TrainConfig& c, const std::string& v) { c.data.binarize.seed = to_u64("data_binarize_seed", v); },
         [](const TrainConfig& c) { return std::to_string(c.data.binarize.seed); }},
        {"data_threshold", "threshold binarization cutoff",
         [](TrainConfig& c, const std::string& v) { c.data.binarize.threshold = to_double("data_threshold", v); },
         [](const TrainConfig& c) { return fmt_double(c.data.binarize.threshold); }},
        {"data_split_train", "training images after split",
         [positive](TrainConfig& c, const std::string& v) {
             c.data.split_train = positive("data_split_train", to_long("data_split_train", v));
         },
         [](const TrainConfig& c) { return std::to_string(c.data.split_train); }},
        {"data_split_test", "test images after split",
         [positive](TrainConfig& c, const std::string& v) {
             c.data.split_test = positive("data_split_test", to_long("data_split_test", v));
         },
         [](const TrainConfig& c) { return std::to_string(c.data.split_test); }},
    };
    return keys;
}

size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

const KeySpec* find_key(const std::string& name) {
    for (const KeySpec& k : registry())
        if (name == k.name) return &k;
    return nullptr;
}

void apply_kv(TrainConfig& cfg, const std::string& key, const std::string& value,
              const std::string& where) {
    const KeySpec* spec = find_key(key);
    if (!spec) {
        const KeySpec* best = nullptr;
        size_t best_d = 1000;
        for (const KeySpec& k : registry()) {
            const size_t d = edit_distance(key, k.name);
            if (d < best_d) {
                best_d = d;
                best = &k;
            }
        }
        std::string msg = "config: unknown key '" + key + "'" + where;
        if (best && best_d <= 3) msg += "; did you mean '" + std::string(best->name) + "'?";
        throw std::invalid_argument(msg);
    }
    spec->set(cfg, value);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                        ": expected 'key = value', got '" + line + "'");
        apply_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
                 " (line " + std::to_string(lineno) + ")");
    }
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: override '" + ov + "' is not key=value");
        apply_kv(cfg, trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)), " (override)");
    }
    return cfg;
}

TrainConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), overrides);
}

std::string serialize_config(const TrainConfig& cfg) {
    std::string out;
    for (const KeySpec& k : registry()) {
        out += k.name;
        out += " = ";
        out += k.get(cfg);
        out += "\n";
    }
    return out;
}

void finalize_config(TrainConfig& cfg, const SequenceDataset& ds) {
    if (cfg.model.obs_dim == 0) cfg.model.obs_dim = ds.obs_dim();
    if (cfg.auto_emission) {
        cfg.model.emission =
            ds.modality == Modality::kBinary ? Emission::kBernoulli : Emission::kGaussian;
        cfg.auto_emission = false;
    }
    cfg.validate();
}

std::string config_key_help() {
    std::string out;
    for (const KeySpec& k : registry()) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "  %-20s %s\n", k.name, k.desc);
        out += buf;
    }
    return out;
}

}  // namespace sisrnn
