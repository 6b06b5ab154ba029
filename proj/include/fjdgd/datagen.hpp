#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fjdgd/errors.hpp"
#include "fjdgd/objectives.hpp"
#include "fjdgd/rng.hpp"

// Dataset generators and loaders: the synthetic federated regime, the 2-D
// linear-classifier regime with tunable slope heterogeneity, MNIST IDX files
// with Hom/Het-2/Het-5 partitions, plus CSV import/export for cross-checks.
// Every generator is a pure function of its arguments including the seed.

namespace fjdgd {

struct HeterogeneityParams {
    double alpha = 1.0; // variance of the per-agent ground-truth shift u_i
    double beta = 1.0;  // variance of the per-agent feature-mean shift B_i
    double theta = 1.0; // slope spread of the 2-D model
};

enum class PartitionMode { hom, het2, het5 };

struct PartitionSpec {
    PartitionMode mode = PartitionMode::hom;
    int samples_per_agent = 554;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

struct TrainTest {
    AgentDataset train;
    AgentDataset test;
};

namespace detail {

inline Eigen::Index train_count(Eigen::Index total, double fraction) {
    if (!(fraction > 0.0) || !(fraction < 1.0))
        throw ConfigError("train_fraction must lie in (0,1)");
    auto t = static_cast<Eigen::Index>(std::llround(static_cast<double>(total) * fraction));
    return std::clamp<Eigen::Index>(t, 1, total - 1);
}

} // namespace detail

// Per-agent binary data with controllable statistical heterogeneity. Agent i
// draws a ground-truth shift u_i ~ N(0, alpha); its labeling rule has weights
// and bias ~ N(u_i, 1). Features center on per-coordinate means v_{i,k} ~
// N(B_i, 1) with B_i ~ N(0, beta), and coordinate k (1-based) has variance
// k^-1.2, so later coordinates carry less signal. Labels are sign(w'a + b).
inline std::vector<TrainTest> gen_synthetic_federated(int n_agents, int dim, int samples,
                                                      const HeterogeneityParams& params,
                                                      std::uint64_t seed,
                                                      double train_fraction = 0.9) {
    if (n_agents < 1 || dim < 1 || samples < 2)
        throw ConfigError("synthetic federated generator needs n_agents>=1, dim>=1, samples>=2");
    if (params.alpha < 0.0 || params.beta < 0.0)
        throw ConfigError("heterogeneity alpha/beta must be >= 0");

    Eigen::ArrayXd coord_std(dim);
    for (int k = 0; k < dim; ++k)
        coord_std(k) = std::pow(static_cast<double>(k + 1), -0.6); // sqrt(k^-1.2)

    std::vector<TrainTest> out(static_cast<std::size_t>(n_agents));
    const Eigen::Index t = detail::train_count(samples, train_fraction);
    for (int i = 0; i < n_agents; ++i) {
        Rng rng(derive_seed(seed, {0xFEDEu, static_cast<std::uint64_t>(i)}));
        double u = rng.next_normal(0.0, std::sqrt(params.alpha));
        Eigen::VectorXd w(dim);
        for (int k = 0; k < dim; ++k) w(k) = rng.next_normal(u, 1.0);
        double bias = rng.next_normal(u, 1.0);
        double big_b = rng.next_normal(0.0, std::sqrt(params.beta));
        Eigen::VectorXd v(dim);
        for (int k = 0; k < dim; ++k) v(k) = rng.next_normal(big_b, 1.0);

        Eigen::MatrixXd features(samples, dim);
        Eigen::VectorXi labels(samples);
        for (int s = 0; s < samples; ++s) {
            for (int k = 0; k < dim; ++k)
                features(s, k) = rng.next_normal(v(k), coord_std(k));
            labels(s) = (w.dot(features.row(s)) + bias > 0.0) ? +1 : -1;
        }
        auto& tt = out[static_cast<std::size_t>(i)];
        tt.train.features = features.topRows(t);
        tt.train.labels = labels.head(t);
        tt.train.split = Split::train;
        tt.test.features = features.bottomRows(samples - t);
        tt.test.labels = labels.tail(samples - t);
        tt.test.split = Split::test;
    }
    return out;
}

// 2-D binary data where agent i's labeling slope theta_i is evenly spaced on
// [-theta, +theta]. Features are uniform on [-1,1]^2; the label is -1 when
// [1 theta_i]'a + v >= 0 (v ~ N(0, noise_var)) and +1 otherwise.
inline std::vector<AgentDataset> gen_2d_linear(int n_agents, double theta, int samples,
                                               double noise_var, std::uint64_t seed) {
    if (n_agents < 2)
        throw ConfigError("2-D generator needs n_agents >= 2 to space the slopes");
    if (!(theta > 0.0) || samples < 1 || noise_var < 0.0)
        throw ConfigError("2-D generator needs theta > 0, samples >= 1, noise_var >= 0");

    std::vector<AgentDataset> out(static_cast<std::size_t>(n_agents));
    const double noise_std = std::sqrt(noise_var);
    for (int i = 0; i < n_agents; ++i) {
        double theta_i = -theta + 2.0 * theta * static_cast<double>(i) /
                                      static_cast<double>(n_agents - 1);
        Rng rng(derive_seed(seed, {0x2D11u, static_cast<std::uint64_t>(i)}));
        AgentDataset d;
        d.features.resize(samples, 2);
        d.labels.resize(samples);
        for (int s = 0; s < samples; ++s) {
            double a0 = rng.next_uniform(-1.0, 1.0);
            double a1 = rng.next_uniform(-1.0, 1.0);
            d.features(s, 0) = a0;
            d.features(s, 1) = a1;
            double v = rng.next_normal(0.0, noise_std);
            d.labels(s) = (a0 + theta_i * a1 + v >= 0.0) ? -1 : +1;
        }
        d.split = Split::train;
        out[static_cast<std::size_t>(i)] = d;
    }
    return out;
}

// --- IDX (MNIST) file format ---

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DataError(path + ": truncated IDX header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

} // namespace detail

// Reads an IDX image/label file pair into flattened [0,1]-scaled features.
inline AgentDataset load_mnist(const std::string& image_path, const std::string& label_path) {
    std::ifstream img(image_path, std::ios::binary);
    if (!img) throw IoError("cannot open image file: " + image_path);
    if (detail::read_be32(img, image_path) != 2051u)
        throw DataError(image_path + ": bad IDX magic, expected 2051 (images)");
    std::uint32_t n = detail::read_be32(img, image_path);
    std::uint32_t rows = detail::read_be32(img, image_path);
    std::uint32_t cols = detail::read_be32(img, image_path);
    if (n == 0 || rows == 0 || cols == 0)
        throw DataError(image_path + ": empty image file");
    std::size_t pixel_count = std::size_t(n) * rows * cols;
    std::vector<unsigned char> pixels(pixel_count);
    if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixel_count)))
        throw DataError(image_path + ": truncated pixel data");

    std::ifstream lab(label_path, std::ios::binary);
    if (!lab) throw IoError("cannot open label file: " + label_path);
    if (detail::read_be32(lab, label_path) != 2049u)
        throw DataError(label_path + ": bad IDX magic, expected 2049 (labels)");
    std::uint32_t n_lab = detail::read_be32(lab, label_path);
    if (n_lab != n)
        throw DataError("image/label count mismatch: " + std::to_string(n) + " images vs " +
                        std::to_string(n_lab) + " labels");
    std::vector<unsigned char> labels(n);
    if (!lab.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(n)))
        throw DataError(label_path + ": truncated label data");

    AgentDataset d;
    const Eigen::Index p = static_cast<Eigen::Index>(rows) * cols;
    d.features.resize(n, p);
    d.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < p; ++k)
            d.features(i, k) = static_cast<double>(pixels[std::size_t(i) * p + std::size_t(k)]) / 255.0;
        d.labels(i) = labels[i];
    }
    d.split = Split::train;
    return d;
}

inline void write_idx_images(const std::string& path, const std::vector<unsigned char>& pixels,
                             std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
    if (pixels.size() != std::size_t(n) * rows * cols)
        throw ContractError("pixel buffer size does not match n*rows*cols");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image file: " + path);
    detail::write_be32(out, 2051u);
    detail::write_be32(out, n);
    detail::write_be32(out, rows);
    detail::write_be32(out, cols);
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw IoError("short write: " + path);
}

inline void write_idx_labels(const std::string& path, const std::vector<unsigned char>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write label file: " + path);
    detail::write_be32(out, 2049u);
    detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
    if (!out) throw IoError("short write: " + path);
}

// Splits one big labeled pool across agents. Hom hands every agent a disjoint
// random slice of samples_per_agent, split train/test by train_fraction.
// Het-2/Het-5 then delete 2 or 5 uniformly chosen classes per agent
// (independently, from both train and test).
inline std::vector<TrainTest> partition_mnist(const AgentDataset& full, int n_agents,
                                              const PartitionSpec& spec) {
    if (n_agents < 1) throw ConfigError("partition needs n_agents >= 1");
    if (spec.samples_per_agent < 2) throw ConfigError("samples_per_agent must be >= 2");
    const Eigen::Index need = static_cast<Eigen::Index>(n_agents) * spec.samples_per_agent;
    if (need > full.m())
        throw DataError("partition needs " + std::to_string(need) + " samples but pool has " +
                        std::to_string(full.m()));

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(full.m()));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    Rng assign_rng(derive_seed(spec.seed, {0xA551u}));
    shuffle(perm, assign_rng);

    const int n_classes = full.labels.maxCoeff() + 1;
    int drop = 0;
    if (spec.mode == PartitionMode::het2) drop = 2;
    if (spec.mode == PartitionMode::het5) drop = 5;
    if (drop >= n_classes)
        throw ConfigError("cannot remove " + std::to_string(drop) + " of " +
                          std::to_string(n_classes) + " classes");

    const Eigen::Index spa = spec.samples_per_agent;
    const Eigen::Index t = detail::train_count(spa, spec.train_fraction);

    std::vector<TrainTest> out(static_cast<std::size_t>(n_agents));
    for (int i = 0; i < n_agents; ++i) {
        std::vector<char> removed(static_cast<std::size_t>(n_classes), 0);
        if (drop > 0) {
            std::vector<int> classes(static_cast<std::size_t>(n_classes));
            std::iota(classes.begin(), classes.end(), 0);
            Rng het_rng(derive_seed(spec.seed, {0x4E7u, static_cast<std::uint64_t>(i)}));
            shuffle(classes, het_rng);
            for (int k = 0; k < drop; ++k) removed[static_cast<std::size_t>(classes[k])] = 1;
        }
        auto take = [&](Eigen::Index from, Eigen::Index count, Split split) {
            std::vector<Eigen::Index> keep;
            keep.reserve(static_cast<std::size_t>(count));
            for (Eigen::Index k = 0; k < count; ++k) {
                Eigen::Index idx = perm[static_cast<std::size_t>(from + k)];
                if (!removed[static_cast<std::size_t>(full.labels(idx))]) keep.push_back(idx);
            }
            if (keep.empty())
                throw DataError("class removal emptied agent " + std::to_string(i) + "'s " +
                                (split == Split::train ? std::string("train") : std::string("test")) +
                                " set; increase samples_per_agent");
            AgentDataset d;
            d.features.resize(static_cast<Eigen::Index>(keep.size()), full.p());
            d.labels.resize(static_cast<Eigen::Index>(keep.size()));
            for (std::size_t k = 0; k < keep.size(); ++k) {
                d.features.row(static_cast<Eigen::Index>(k)) = full.features.row(keep[k]);
                d.labels(static_cast<Eigen::Index>(k)) = full.labels(keep[k]);
            }
            d.split = split;
            return d;
        };
        const Eigen::Index base = static_cast<Eigen::Index>(i) * spa;
        out[static_cast<std::size_t>(i)].train = take(base, t, Split::train);
        out[static_cast<std::size_t>(i)].test = take(base + t, spa - t, Split::test);
    }
    return out;
}

// --- CSV round trip: one row per sample, "label,feat0,feat1,..." ---

inline std::string dataset_to_csv(const AgentDataset& d) {
    std::ostringstream out;
    char buf[32];
    for (Eigen::Index j = 0; j < d.m(); ++j) {
        out << d.labels(j);
        for (Eigen::Index k = 0; k < d.p(); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", d.features(j, k));
            out << ',' << buf;
        }
        out << '\n';
    }
    return out.str();
}

inline AgentDataset dataset_from_csv(const std::string& text, Split split = Split::train) {
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ls, cell, ','))
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError("csv line " + std::to_string(line_no) + ": bad number '" + cell + "'");
            }
        if (vals.size() < 2)
            throw DataError("csv line " + std::to_string(line_no) + ": need label plus features");
        labels.push_back(static_cast<int>(std::llround(vals[0])));
        rows.emplace_back(vals.begin() + 1, vals.end());
        if (rows.back().size() != rows.front().size())
            throw DataError("csv line " + std::to_string(line_no) + ": inconsistent feature count");
    }
    if (rows.empty()) throw DataError("csv has no data rows");
    AgentDataset d;
    d.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    d.labels.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
        for (std::size_t k = 0; k < rows[j].size(); ++k)
            d.features(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = rows[j][k];
        d.labels(static_cast<Eigen::Index>(j)) = labels[j];
    }
    d.split = split;
    return d;
}

// Synthetic 28x28 10-class stand-in for when no real digit files are on disk.
// Each class is a random mixture of Gaussian blobs on the image grid; samples
// add class-specific low-rank deformations plus heavy pixel noise, dim the
// result, and quantize to uint8, so a write_idx_* / load_mnist round trip is
// lossless. The default scales are tuned so that (a) a few hundred samples
// per agent undertrain a softmax noticeably while pooled data trains well,
// and (b) the dim pixel range keeps feature norms small, so trained weight
// coordinates are large enough that scale-proportional message corruption
// saturates instead of drowning the consensus signal.
struct MnistLikeScales {
    double prototype = 55.0;   // class separation
    double deform = 28.0;      // within-class variation (low-rank)
    double pixel_noise = 170.0;
    double brightness = 0.1;   // post-clamp dimming factor applied before quantization
};

inline void gen_mnist_like(int n_samples, std::uint64_t seed, std::vector<unsigned char>& pixels,
                           std::vector<unsigned char>& labels,
                           const MnistLikeScales& scales = {}) {
    if (n_samples < 1) throw ConfigError("surrogate generator needs n_samples >= 1");
    constexpr int kSide = 28, kP = kSide * kSide, kClasses = 10, kBlobs = 12, kDeforms = 6;

    Rng proto_rng(derive_seed(seed, {0x1D07u}));
    auto random_field = [&](double scale) {
        // Sum of random Gaussian blobs: smooth, image-like spatial correlation.
        Eigen::VectorXd f = Eigen::VectorXd::Zero(kP);
        for (int b = 0; b < kBlobs; ++b) {
            double cx = proto_rng.next_uniform(4.0, kSide - 4.0);
            double cy = proto_rng.next_uniform(4.0, kSide - 4.0);
            double sig = proto_rng.next_uniform(1.5, 4.0);
            double amp = proto_rng.next_normal(0.0, scale);
            for (int r = 0; r < kSide; ++r)
                for (int c = 0; c < kSide; ++c) {
                    double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
                    f(r * kSide + c) += amp * std::exp(-d2 / (2.0 * sig * sig));
                }
        }
        return f;
    };

    std::vector<Eigen::VectorXd> prototypes, deforms;
    for (int c = 0; c < kClasses; ++c) {
        prototypes.push_back(random_field(scales.prototype));
        for (int v = 0; v < kDeforms; ++v)
            deforms.push_back(random_field(scales.deform));
    }

    pixels.assign(std::size_t(n_samples) * kP, 0);
    labels.assign(static_cast<std::size_t>(n_samples), 0);
    for (int s = 0; s < n_samples; ++s) {
        Rng rng(derive_seed(seed, {0x5A3Eu, static_cast<std::uint64_t>(s)}));
        int cls = static_cast<int>(rng.next_u64() % kClasses);
        labels[static_cast<std::size_t>(s)] = static_cast<unsigned char>(cls);
        Eigen::VectorXd img = Eigen::VectorXd::Constant(kP, 128.0) + prototypes[cls];
        for (int v = 0; v < kDeforms; ++v)
            img += rng.next_normal() * deforms[static_cast<std::size_t>(cls * kDeforms + v)];
        for (int k = 0; k < kP; ++k) {
            double val = img(k) + rng.next_normal(0.0, scales.pixel_noise);
            val = scales.brightness * std::clamp(val, 0.0, 255.0);
            pixels[std::size_t(s) * kP + std::size_t(k)] =
                static_cast<unsigned char>(std::lround(std::clamp(val, 0.0, 255.0)));
        }
    }
}

} // namespace fjdgd
