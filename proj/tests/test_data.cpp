#include "sisrnn/data.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace sisrnn;

namespace {

std::string temp_dir(const char* tag) {
    auto p = std::filesystem::temp_directory_path() / (std::string("sisrnn_data_") + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

}  // namespace

TEST_CASE("idx round trip, limits and normalization") {
    const std::string dir = temp_dir("idx");
    const std::string path = dir + "/images-idx3-ubyte";
    auto images = synth_digit_images(120, 4);
    write_idx_images(path, images);

    SequenceDataset all = load_mnist_idx(path, "", 1000);
    CHECK(all.size() == 120);
    SequenceDataset limited = load_mnist_idx(path, "", 100);
    CHECK(limited.size() == 100);
    for (const Tensor& img : limited.sequences) {
        CHECK(img.shape() == std::vector<Index>{28, 28});
        CHECK(img.mat().minCoeff() >= 0.0);
        CHECK(img.mat().maxCoeff() <= 1.0);
    }
    // Byte-quantized round trip: loader values are written bytes / 255.
    for (Index i = 0; i < 28; ++i)
        for (Index j = 0; j < 28; ++j) {
            const double orig = images[0].at(i, j);
            const double back = limited.sequences[0].at(i, j);
            CHECK(std::abs(back - std::lround(orig * 255.0) / 255.0) < 1e-12);
        }
    // The loader does not mutate its source.
    const auto bytes_before = std::filesystem::file_size(path);
    (void)load_mnist_idx(path, "", 10);
    CHECK(std::filesystem::file_size(path) == bytes_before);
}

TEST_CASE("idx error paths are distinct") {
    const std::string dir = temp_dir("idxerr");
    SUBCASE("bad magic") {
        std::ofstream out(dir + "/bad", std::ios::binary);
        const unsigned char junk[16] = {0, 0, 8, 2, 0, 0, 0, 1, 0, 0, 0, 28, 0, 0, 0, 28};
        out.write(reinterpret_cast<const char*>(junk), 16);
        out.close();
        CHECK_THROWS_WITH_AS(load_mnist_idx(dir + "/bad", "", 10), doctest::Contains("magic"),
                             std::runtime_error);
    }
    SUBCASE("truncated pixel data") {
        std::ofstream out(dir + "/trunc", std::ios::binary);
        const unsigned char head[16] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28};
        out.write(reinterpret_cast<const char*>(head), 16);
        std::vector<char> pixels(28 * 28, 1);  // one image of two
        out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
        out.close();
        CHECK_THROWS_WITH_AS(load_mnist_idx(dir + "/trunc", "", 10), doctest::Contains("truncated"),
                             std::runtime_error);
    }
    SUBCASE("wrong dimensions") {
        std::ofstream out(dir + "/dims", std::ios::binary);
        const unsigned char head[16] = {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 14, 0, 0, 0, 14};
        out.write(reinterpret_cast<const char*>(head), 16);
        out.close();
        CHECK_THROWS_WITH_AS(load_mnist_idx(dir + "/dims", "", 10), doctest::Contains("28x28"),
                             std::runtime_error);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_mnist_idx(dir + "/nope", "", 10), std::runtime_error);
    }
}

TEST_CASE("binarize modes") {
    SequenceDataset ds;
    ds.modality = Modality::kReal;
    Tensor img = Tensor::zeros({28, 28});
    img.mat()(0, 0) = 128.0 / 255.0;  // just above one half
    img.mat()(0, 1) = 0.0;
    img.mat()(0, 2) = 0.73;
    ds.sequences.push_back(img);

    SUBCASE("threshold") {
        BinarizeMode mode{BinarizeMode::Kind::kThreshold, 0.5, 0};
        SequenceDataset out = binarize(ds, mode);
        CHECK(out.sequences[0].at(0, 0) == 1.0);
        CHECK(out.sequences[0].at(0, 1) == 0.0);
        CHECK(out.modality == Modality::kBinary);
    }
    SUBCASE("stochastic is deterministic per seed and fixes zeros") {
        BinarizeMode mode{BinarizeMode::Kind::kStochastic, 0.5, 9};
        SequenceDataset a = binarize(ds, mode);
        SequenceDataset b = binarize(ds, mode);
        CHECK(bit_equal(a.sequences[0], b.sequences[0]));
        CHECK(a.sequences[0].at(0, 1) == 0.0);
        BinarizeMode other{BinarizeMode::Kind::kStochastic, 0.5, 10};
        // Different seeds differ somewhere with overwhelming probability
        // once there is enough gray mass.
        SequenceDataset grayer = ds;
        grayer.sequences[0].mat().setConstant(0.5);
        CHECK_FALSE(bit_equal(binarize(grayer, mode).sequences[0],
                              binarize(grayer, other).sequences[0]));
    }
    SUBCASE("out-of-range input is rejected") {
        SequenceDataset bad = ds;
        bad.sequences[0].mat()(5, 5) = 1.5;
        CHECK_THROWS_AS(binarize(bad, BinarizeMode{}), std::invalid_argument);
    }
}

TEST_CASE("to_sequence layouts") {
    Tensor img = Tensor::zeros({28, 28});
    for (Index i = 0; i < 28; ++i)
        for (Index j = 0; j < 28; ++j) img.mat()(i, j) = static_cast<double>(i * 28 + j);

    Tensor row = to_sequence(img, Layout::kRow);
    CHECK(row.shape() == std::vector<Index>{28, 28});
    Tensor pixel = to_sequence(img, Layout::kPixel);
    CHECK(pixel.shape() == std::vector<Index>{784, 1});
    // Raster-order identity between the two layouts.
    for (Index i = 0; i < 784; ++i) CHECK(pixel.at(i, 0) == static_cast<double>(i));
    // Round trip back to the image.
    CHECK(bit_equal(pixel.reshape({28, 28}), img));
    CHECK(bit_equal(row, img));
    CHECK_THROWS_AS(to_sequence(Tensor::zeros({14, 28}), Layout::kRow), std::invalid_argument);
}

TEST_CASE("synth_two_mode") {
    SequenceDataset a = synth_two_mode(50, 20, 3);
    SequenceDataset b = synth_two_mode(50, 20, 3);
    REQUIRE(a.size() == 50);
    for (Index i = 0; i < a.size(); ++i) {
        CHECK(a.sequences[static_cast<size_t>(i)].shape() == std::vector<Index>{20, 1});
        CHECK(bit_equal(a.sequences[static_cast<size_t>(i)], b.sequences[static_cast<size_t>(i)]));
    }

    // Regime frequency over 10000 sequences stays near one half. The regime
    // sign is recovered from the late-sequence drift, where the two regimes
    // are far apart relative to the observation noise.
    TwoModeParams p;
    SequenceDataset big = synth_two_mode(10000, 20, 12345, p);
    Index plus = 0;
    for (const Tensor& s : big.sequences)
        if (s.at(19, 0) > 0.0) ++plus;
    const double freq = static_cast<double>(plus) / 10000.0;
    CHECK(freq > 0.485);
    CHECK(freq < 0.515);

    CHECK_THROWS_AS(synth_two_mode(0, 5, 1), std::invalid_argument);
}

TEST_CASE("binary dataset validation catches stray values") {
    SequenceDataset ds;
    ds.modality = Modality::kBinary;
    ds.sequences.push_back(Tensor::zeros({4, 2}));
    ds.validate();
    ds.sequences[0].mat()(1, 1) = 0.25;
    CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
}

TEST_CASE("csv export format") {
    const std::string dir = temp_dir("csv");
    SequenceDataset ds = synth_two_mode(2, 3, 7);
    export_csv(ds, dir + "/split.csv");
    std::ifstream in(dir + "/split.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "seq_id,t,dim,value");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2 * 3 * 1);
}

TEST_CASE("synthetic digit images are structured and reproducible") {
    auto a = synth_digit_images(20, 5);
    auto b = synth_digit_images(20, 5);
    REQUIRE(a.size() == 20);
    for (size_t i = 0; i < a.size(); ++i) CHECK(bit_equal(a[i], b[i]));
    // Ink mass differs across digits, so images are not trivially constant.
    CHECK(a[0].mat().sum() > 5.0);
    CHECK(std::abs(a[1].mat().sum() - a[8].mat().sum()) > 1.0);
}
