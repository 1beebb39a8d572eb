#include "sisrnn/data.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace sisrnn {

namespace {

uint32_t read_be32(std::istream& in, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("idx: " + path + ": truncated while reading " + what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void SequenceDataset::validate() const {
    const Index d = obs_dim();
    const Index t = seq_len();
    for (const Tensor& s : sequences) {
        if (s.rank() != 2 || s.cols() != d || s.rows() != t)
            throw std::invalid_argument("dataset: sequence shape " + s.shape_str() +
                                        " differs from [" + std::to_string(t) + "," + std::to_string(d) + "]");
        if (modality == Modality::kBinary)
            for (double v : s.values())
                if (v != 0.0 && v != 1.0)
                    throw std::invalid_argument("dataset: binary dataset contains non-0/1 value");
    }
}

SequenceDataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                               Index limit) {
    std::ifstream in(images_path, std::ios::binary);
    if (!in) throw std::runtime_error("idx: cannot open " + images_path);
    const uint32_t magic = read_be32(in, images_path, "magic");
    if (magic != 0x00000803u)
        throw std::runtime_error("idx: " + images_path + ": bad magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", magic);
            return std::string(buf);
        }() + ", expected 0x00000803");
    const uint32_t count = read_be32(in, images_path, "image count");
    const uint32_t rows = read_be32(in, images_path, "row dim");
    const uint32_t cols = read_be32(in, images_path, "col dim");
    if (rows != 28 || cols != 28)
        throw std::runtime_error("idx: " + images_path + ": expected 28x28 images, got " +
                                 std::to_string(rows) + "x" + std::to_string(cols));

    const Index n = std::min<Index>(limit, static_cast<Index>(count));
    SequenceDataset ds;
    ds.modality = Modality::kReal;
    ds.sequences.reserve(static_cast<size_t>(n));
    std::vector<unsigned char> px(28 * 28);
    for (Index i = 0; i < n; ++i) {
        if (!in.read(reinterpret_cast<char*>(px.data()), 28 * 28))
            throw std::runtime_error("idx: " + images_path + ": truncated pixel data at image " +
                                     std::to_string(i));
        Tensor img = Tensor::zeros({28, 28});
        auto v = img.values_mut();
        for (size_t j = 0; j < px.size(); ++j) v[j] = static_cast<double>(px[j]) / 255.0;
        ds.sequences.push_back(std::move(img));
    }

    if (!labels_path.empty()) {
        std::ifstream lin(labels_path, std::ios::binary);
        if (!lin) throw std::runtime_error("idx: cannot open " + labels_path);
        const uint32_t lmagic = read_be32(lin, labels_path, "magic");
        if (lmagic != 0x00000801u)
            throw std::runtime_error("idx: " + labels_path + ": bad magic, expected 0x00000801");
        const uint32_t lcount = read_be32(lin, labels_path, "label count");
        if (lcount != count)
            throw std::runtime_error("idx: label count " + std::to_string(lcount) +
                                     " does not match image count " + std::to_string(count));
    }
    return ds;
}

SequenceDataset binarize(const SequenceDataset& ds, const BinarizeMode& mode) {
    SequenceDataset out;
    out.modality = Modality::kBinary;
    out.split = ds.split;
    out.sequences.reserve(ds.sequences.size());
    RngState root = RngState::from_seed(mode.seed);
    for (size_t i = 0; i < ds.sequences.size(); ++i) {
        Tensor t = ds.sequences[i];
        RngState stream = root.fork(i);
        for (double& v : t.values_mut()) {
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("binarize: value " + std::to_string(v) + " outside [0,1]");
            if (mode.kind == BinarizeMode::Kind::kThreshold) v = v > mode.threshold ? 1.0 : 0.0;
            else v = stream.bernoulli(v) ? 1.0 : 0.0;
        }
        out.sequences.push_back(std::move(t));
    }
    out.validate();
    return out;
}

Tensor to_sequence(const Tensor& image, Layout layout) {
    if (image.rank() != 2 || image.rows() != 28 || image.cols() != 28)
        throw std::invalid_argument("to_sequence: expected a 28x28 image, got " + image.shape_str());
    return layout == Layout::kRow ? image : image.reshape({784, 1});
}

SequenceDataset apply_layout(const SequenceDataset& images, Layout layout) {
    SequenceDataset out;
    out.modality = images.modality;
    out.split = images.split;
    out.sequences.reserve(images.sequences.size());
    for (const Tensor& img : images.sequences) out.sequences.push_back(to_sequence(img, layout));
    return out;
}

SequenceDataset synth_two_mode(Index n, Index T, uint64_t seed, const TwoModeParams& p) {
    if (n < 1 || T < 1) throw std::invalid_argument("synth_two_mode: n and T must be >= 1");
    SequenceDataset ds;
    ds.modality = Modality::kReal;
    RngState root = RngState::from_seed(seed);
    ds.sequences.reserve(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) {
        RngState stream = root.fork(static_cast<uint64_t>(i));
        const double s = stream.bernoulli(0.5) ? 1.0 : -1.0;
        Tensor seq = Tensor::zeros({T, 1});
        for (Index t = 0; t < T; ++t) {
            const double phase = 2.0 * 3.14159265358979323846 * static_cast<double>(t + 1) /
                                 static_cast<double>(T);
            seq.mat()(t, 0) = s * (p.drift * static_cast<double>(t + 1) + p.amp * std::sin(phase)) +
                              p.noise_sd * stream.normal();
        }
        ds.sequences.push_back(std::move(seq));
    }
    return ds;
}

void export_csv(const SequenceDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_csv: cannot open " + path);
    out << "seq_id,t,dim,value\n";
    for (size_t s = 0; s < ds.sequences.size(); ++s) {
        const Tensor& seq = ds.sequences[s];
        for (Index t = 0; t < seq.rows(); ++t)
            for (Index d = 0; d < seq.cols(); ++d) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%zu,%lld,%lld,%.17g\n", s,
                              static_cast<long long>(t), static_cast<long long>(d), seq.mat()(t, d));
                out << buf;
            }
    }
    if (!out) throw std::runtime_error("export_csv: write failed for " + path);
}

std::vector<Tensor> synth_digit_images(Index n, uint64_t seed) {
    // Seven-segment layout on a 28x28 canvas:
    //   0: top bar  1: upper-left  2: upper-right  3: middle bar
    //   4: lower-left  5: lower-right  6: bottom bar
    static const int kSegments[10] = {
        0b1110111, 0b0100100, 0b1011101, 0b1101101, 0b0101110,
        0b1101011, 0b1111011, 0b0100101, 0b1111111, 0b1101111,
    };
    RngState root = RngState::from_seed(seed);
    std::vector<Tensor> images;
    images.reserve(static_cast<size_t>(n));
    for (Index i = 0; i < n; ++i) {
        RngState stream = root.fork(static_cast<uint64_t>(i));
        const int digit = static_cast<int>(i % 10);
        const int mask = kSegments[digit];
        const int dx = static_cast<int>(stream.next_u64() % 5) - 2;
        const int dy = static_cast<int>(stream.next_u64() % 5) - 2;
        const double intensity = 0.7 + 0.3 * stream.uniform01();
        Tensor img = Tensor::zeros({28, 28});
        auto hline = [&](int r, int c0, int c1) {
            for (int r2 = r; r2 < r + 2; ++r2)
                for (int c = c0; c <= c1; ++c) {
                    const int rr = r2 + dy, cc = c + dx;
                    if (rr >= 0 && rr < 28 && cc >= 0 && cc < 28) img.mat()(rr, cc) = intensity;
                }
        };
        auto vline = [&](int c, int r0, int r1) {
            for (int c2 = c; c2 < c + 2; ++c2)
                for (int r = r0; r <= r1; ++r) {
                    const int rr = r + dy, cc = c2 + dx;
                    if (rr >= 0 && rr < 28 && cc >= 0 && cc < 28) img.mat()(rr, cc) = intensity;
                }
        };
        if (mask & (1 << 0)) hline(5, 9, 18);    // top
        if (mask & (1 << 1)) vline(8, 6, 13);    // upper-left
        if (mask & (1 << 2)) vline(18, 6, 13);   // upper-right
        if (mask & (1 << 3)) hline(13, 9, 18);   // middle
        if (mask & (1 << 4)) vline(8, 14, 21);   // lower-left
        if (mask & (1 << 5)) vline(18, 14, 21);  // lower-right
        if (mask & (1 << 6)) hline(21, 9, 18);   // bottom
        for (double& v : img.values_mut()) {
            v += 0.04 * stream.uniform01();
            v = std::min(1.0, std::max(0.0, v));
        }
        images.push_back(std::move(img));
    }
    return images;
}

void write_idx_images(const std::string& path, const std::vector<Tensor>& images) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("idx: cannot open " + path + " for writing");
    write_be32(out, 0x00000803u);
    write_be32(out, static_cast<uint32_t>(images.size()));
    write_be32(out, 28);
    write_be32(out, 28);
    for (const Tensor& img : images) {
        if (img.rank() != 2 || img.rows() != 28 || img.cols() != 28)
            throw std::invalid_argument("idx: image shape " + img.shape_str() + " is not 28x28");
        unsigned char px[28 * 28];
        auto v = img.values();
        for (size_t j = 0; j < v.size(); ++j)
            px[j] = static_cast<unsigned char>(std::lround(std::min(1.0, std::max(0.0, v[j])) * 255.0));
        out.write(reinterpret_cast<const char*>(px), sizeof px);
    }
    if (!out) throw std::runtime_error("idx: write failed for " + path);
}

}  // namespace sisrnn
