#pragma once

#include "sisrnn/rng.hpp"
#include "sisrnn/tensor.hpp"

#include <string>
#include <vector>

namespace sisrnn {

enum class Modality { kBinary, kReal };

struct SequenceDataset {
    std::vector<Tensor> sequences;  // uniform T x obs
    Modality modality = Modality::kReal;
    std::string split;

    Index size() const { return static_cast<Index>(sequences.size()); }
    Index obs_dim() const { return sequences.empty() ? 0 : sequences.front().cols(); }
    Index seq_len() const { return sequences.empty() ? 0 : sequences.front().rows(); }

    /// Uniform dims; binary datasets must be exactly 0/1 valued.
    void validate() const;
};

/// IDX container parsing (big-endian header, unsigned-byte pixels).
/// Returns up to `limit` 28 x 28 grayscale images normalized to [0,1];
/// an empty labels path skips label validation.
SequenceDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                               Index limit);

struct BinarizeMode {
    enum class Kind { kThreshold, kStochastic };
    Kind kind = Kind::kStochastic;
    double threshold = 0.5;
    uint64_t seed = 0;
};

/// Maps [0,1] grayscale to {0,1}: fixed threshold, or one Bernoulli(pixel)
/// draw per image per seed.
SequenceDataset binarize(const SequenceDataset& ds, const BinarizeMode& mode);

enum class Layout { kRow, kPixel };

/// Row layout: 28 steps of 28-dim rows. Pixel layout: 784 steps of 1-dim, in
/// raster order. Both carry the same 784 values.
Tensor to_sequence(const Tensor& image, Layout layout);

SequenceDataset apply_layout(const SequenceDataset& images, Layout layout);

struct TwoModeParams {
    double drift = 0.08;     // per-step regime slope
    double amp = 0.5;        // sinusoid amplitude
    double noise_sd = 0.1;   // observation noise
};

/// n sequences of length T, scalar observations. Each sequence follows one of
/// two mirrored regimes (probability 0.5, drawn once per sequence):
///   x_t = s * (drift * t + amp * sin(2 pi t / T)) + noise,  s in {+1,-1}.
SequenceDataset synth_two_mode(Index n, Index T, uint64_t seed, const TwoModeParams& p = {});

/// Writes one `seq_id,t,dim,value` row per entry.
void export_csv(const SequenceDataset& ds, const std::string& path);

/// Procedural digit-like glyphs (seven-segment strokes with jitter), 28 x 28
/// grayscale in [0,1]. A stand-in corpus for environments without IDX files.
std::vector<Tensor> synth_digit_images(Index n, uint64_t seed);

/// Bit-exact IDX writer (magic 0x00000803), inverse of load_mnist_idx.
void write_idx_images(const std::string& path, const std::vector<Tensor>& images);

}  // namespace sisrnn
