#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mgresnet/errors.hpp"
#include "mgresnet/net.hpp"
#include "mgresnet/objective.hpp"

namespace mgresnet {

enum class Split { train, test };

/// Samples as rows: inputs (p x q), one-hot labels (p x m).
struct Dataset {
    Matrix inputs;
    Matrix labels;
    Split split = Split::train;

    Eigen::Index size() const { return inputs.rows(); }
    int input_dim() const { return int(inputs.cols()); }
    int class_count() const { return int(labels.cols()); }
    BatchRef view() const { return BatchRef(inputs, labels); }

    /// Index of the 1 in row j.
    int label_of(Eigen::Index j) const {
        Eigen::Index idx = 0;
        labels.row(j).maxCoeff(&idx);
        return int(idx);
    }
};

inline Matrix one_hot(const std::vector<int>& classes, int class_count) {
    Matrix c = Matrix::Zero(Eigen::Index(classes.size()), class_count);
    for (std::size_t j = 0; j < classes.size(); ++j) {
        if (classes[j] < 0 || classes[j] >= class_count)
            throw InvalidArgument("class index " + std::to_string(classes[j]) + " out of range");
        c(Eigen::Index(j), classes[j]) = 1.0;
    }
    return c;
}

/// Rows `first .. first+count-1` as a new dataset.
inline Dataset take_rows(const Dataset& d, Eigen::Index first, Eigen::Index count) {
    if (first < 0 || count < 0 || first + count > d.size())
        throw InvalidArgument("row range outside dataset");
    return {d.inputs.middleRows(first, count), d.labels.middleRows(first, count), d.split};
}

// ---------------------------------------------------------------------------
// Co-centric circles

/// Class 1 on the annulus 2 <= |x| < 3, class 0 elsewhere.
inline int circles_class(double x0, double x1) {
    const double r = std::hypot(x0, x1);
    return (r >= 2.0 && r < 3.0) ? 1 : 0;
}

namespace detail {

inline Dataset sample_circles(std::size_t n, std::mt19937_64& rng, Split split) {
    std::uniform_real_distribution<double> coord(-3.0, 3.0);
    Dataset d;
    d.split = split;
    d.inputs.resize(Eigen::Index(n), 2);
    std::vector<int> classes(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double a = coord(rng);
        const double b = coord(rng);
        d.inputs(Eigen::Index(j), 0) = a;
        d.inputs(Eigen::Index(j), 1) = b;
        classes[j] = circles_class(a, b);
    }
    d.labels = one_hot(classes, 2);
    return d;
}

} // namespace detail

/// Uniform samples on [-3,3]^2, labelled by circles_class.
inline std::pair<Dataset, Dataset> gen_circles(std::size_t n_train = 2000, std::size_t n_test = 1000,
                                               std::uint64_t seed = 0) {
    if (n_train == 0 || n_test == 0)
        throw InvalidArgument("circles sample counts must be positive");
    std::mt19937_64 rng(seed);
    Dataset train = detail::sample_circles(n_train, rng, Split::train);
    Dataset test = detail::sample_circles(n_test, rng, Split::test);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// MNIST / IDX

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
    std::uint32_t count = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint8_t> pixels; // count * rows * cols, row-major
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IdxError(IdxErrorKind::open_failed, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
    return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
           (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(b.data(), 4);
}

} // namespace detail

inline IdxImages parse_idx_images(const std::vector<std::uint8_t>& bytes, const std::string& name = "images") {
    if (bytes.size() < 16)
        throw IdxError(IdxErrorKind::truncated, name + ": header truncated");
    if (detail::read_be32(bytes, 0) != kIdxImageMagic)
        throw IdxError(IdxErrorKind::bad_magic, name + ": bad magic, expected 0x00000803");
    IdxImages img;
    img.count = detail::read_be32(bytes, 4);
    img.rows = detail::read_be32(bytes, 8);
    img.cols = detail::read_be32(bytes, 12);
    const std::uint64_t payload = std::uint64_t(img.count) * img.rows * img.cols;
    if (bytes.size() - 16 < payload)
        throw IdxError(IdxErrorKind::truncated, name + ": payload truncated");
    img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(payload));
    return img;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& bytes,
                                                  const std::string& name = "labels") {
    if (bytes.size() < 8)
        throw IdxError(IdxErrorKind::truncated, name + ": header truncated");
    if (detail::read_be32(bytes, 0) != kIdxLabelMagic)
        throw IdxError(IdxErrorKind::bad_magic, name + ": bad magic, expected 0x00000801");
    const std::uint32_t count = detail::read_be32(bytes, 4);
    if (bytes.size() - 8 < count)
        throw IdxError(IdxErrorKind::truncated, name + ": payload truncated");
    return {bytes.begin() + 8, bytes.begin() + 8 + std::ptrdiff_t(count)};
}

inline IdxImages read_idx_images(const std::filesystem::path& path) {
    return parse_idx_images(detail::read_file(path), path.string());
}

inline std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
    return parse_idx_labels(detail::read_file(path), path.string());
}

inline void write_idx_images(const std::filesystem::path& path, const IdxImages& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IdxError(IdxErrorKind::open_failed, "cannot write " + path.string());
    detail::write_be32(out, kIdxImageMagic);
    detail::write_be32(out, img.count);
    detail::write_be32(out, img.rows);
    detail::write_be32(out, img.cols);
    out.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size()));
}

inline void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IdxError(IdxErrorKind::open_failed, "cannot write " + path.string());
    detail::write_be32(out, kIdxLabelMagic);
    detail::write_be32(out, std::uint32_t(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), std::streamsize(labels.size()));
}

/// Pixels scaled to [0,1], ten one-hot classes. No centering.
inline Dataset load_mnist(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                          Split split = Split::train) {
    const IdxImages img = read_idx_images(images_path);
    const std::vector<std::uint8_t> lab = read_idx_labels(labels_path);
    if (img.count != lab.size())
        throw IdxError(IdxErrorKind::count_mismatch, "image count " + std::to_string(img.count) +
                                                         " does not match label count " + std::to_string(lab.size()));
    const Eigen::Index q = Eigen::Index(img.rows) * img.cols;
    Dataset d;
    d.split = split;
    d.inputs.resize(img.count, q);
    for (Eigen::Index j = 0; j < Eigen::Index(img.count); ++j)
        for (Eigen::Index i = 0; i < q; ++i)
            d.inputs(j, i) = double(img.pixels[std::size_t(j * q + i)]) / 255.0;
    std::vector<int> classes(lab.begin(), lab.end());
    for (std::size_t j = 0; j < classes.size(); ++j)
        if (classes[j] > 9)
            throw IdxError(IdxErrorKind::bad_label, "label " + std::to_string(classes[j]) + " at index " +
                                                        std::to_string(j) + " is not a digit");
    d.labels = one_hot(classes, 10);
    return d;
}

/// Subtracts the per-pixel mean of `train` from both splits.
inline void center_by_train_mean(Dataset& train, Dataset& test) {
    const Eigen::RowVectorXd mean = train.inputs.colwise().mean();
    train.inputs.rowwise() -= mean;
    if (test.inputs.cols() != mean.size())
        throw InvalidArgument("train and test inputs differ in dimension");
    test.inputs.rowwise() -= mean;
}

struct MnistPaths {
    std::filesystem::path train_images;
    std::filesystem::path train_labels;
    std::filesystem::path test_images;
    std::filesystem::path test_labels;
};

/// Loads both splits, scales to [0,1] and centers with the train mean.
/// `train_limit` > 0 keeps only the first samples of the training split;
/// the mean is computed on what is kept.
inline std::pair<Dataset, Dataset> load_mnist_splits(const MnistPaths& paths, Eigen::Index train_limit = 0) {
    Dataset train = load_mnist(paths.train_images, paths.train_labels, Split::train);
    Dataset test = load_mnist(paths.test_images, paths.test_labels, Split::test);
    if (train_limit > 0 && train_limit < train.size())
        train = take_rows(train, 0, train_limit);
    center_by_train_mean(train, test);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Batching

/// One epoch's mini-batches: a shuffled copy of the data cut into contiguous
/// pieces. The last piece may be short.
class EpochBatches {
public:
    EpochBatches(Dataset shuffled, Eigen::Index batch_size) : data_(std::move(shuffled)), batch_size_(batch_size) {}

    EpochBatches(const EpochBatches&) = delete;
    EpochBatches& operator=(const EpochBatches&) = delete;

    std::size_t size() const { return std::size_t((data_.size() + batch_size_ - 1) / batch_size_); }

    BatchRef operator[](std::size_t b) const {
        const Eigen::Index begin = Eigen::Index(b) * batch_size_;
        const Eigen::Index rows = std::min(batch_size_, data_.size() - begin);
        return BatchRef(data_.inputs.middleRows(begin, rows), data_.labels.middleRows(begin, rows));
    }

    const Dataset& shuffled() const { return data_; }

private:
    Dataset data_;
    Eigen::Index batch_size_;
};

/// Sample order of epoch `epoch`, a pure function of (seed, epoch).
inline std::vector<Eigen::Index> epoch_permutation(Eigen::Index n, std::uint64_t seed, std::uint64_t epoch) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(epoch), std::uint32_t(epoch >> 32)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

inline std::unique_ptr<EpochBatches> batches(const Dataset& d, Eigen::Index batch_size, std::uint64_t seed,
                                             std::uint64_t epoch) {
    if (batch_size < 1)
        throw InvalidArgument("batch size must be at least 1");
    const auto order = epoch_permutation(d.size(), seed, epoch);
    Dataset s;
    s.split = d.split;
    s.inputs.resize(d.inputs.rows(), d.inputs.cols());
    s.labels.resize(d.labels.rows(), d.labels.cols());
    for (std::size_t j = 0; j < order.size(); ++j) {
        s.inputs.row(Eigen::Index(j)) = d.inputs.row(order[j]);
        s.labels.row(Eigen::Index(j)) = d.labels.row(order[j]);
    }
    return std::make_unique<EpochBatches>(std::move(s), batch_size);
}

} // namespace mgresnet
