#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "fjdgd/datagen.hpp"

using namespace fjdgd;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("fjdgd_datagen_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

// Pool with a unique id in feature column 0 and round-robin labels 0..9.
AgentDataset make_pool(Eigen::Index n) {
    AgentDataset d;
    d.features.resize(n, 3);
    d.labels.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d.features(i, 0) = static_cast<double>(i);
        d.features(i, 1) = 0.5;
        d.features(i, 2) = -1.0;
        d.labels(i) = static_cast<int>(i % 10);
    }
    return d;
}

} // namespace

TEST_CASE("synthetic federated generator produces the documented shapes") {
    HeterogeneityParams hp;
    auto data = gen_synthetic_federated(10, 15, 500, hp, 42, 0.9);
    REQUIRE(data.size() == 10);
    for (const auto& tt : data) {
        CHECK(tt.train.m() == 450);
        CHECK(tt.test.m() == 50);
        CHECK(tt.train.p() == 15);
        CHECK(tt.test.p() == 15);
        CHECK(tt.train.split == Split::train);
        CHECK(tt.test.split == Split::test);
        for (Eigen::Index j = 0; j < tt.train.m(); ++j)
            CHECK((tt.train.labels(j) == 1 || tt.train.labels(j) == -1));
    }
    // Both classes occur somewhere in the population.
    bool pos = false, neg = false;
    for (const auto& tt : data)
        for (Eigen::Index j = 0; j < tt.train.m(); ++j)
            (tt.train.labels(j) == 1 ? pos : neg) = true;
    CHECK(pos);
    CHECK(neg);
}

TEST_CASE("synthetic federated generator is deterministic per seed") {
    HeterogeneityParams hp;
    auto a = gen_synthetic_federated(3, 6, 100, hp, 7, 0.9);
    auto b = gen_synthetic_federated(3, 6, 100, hp, 7, 0.9);
    auto c = gen_synthetic_federated(3, 6, 100, hp, 8, 0.9);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].train.features == b[i].train.features);
        CHECK(a[i].train.labels == b[i].train.labels);
        CHECK(a[i].test.features == b[i].test.features);
    }
    CHECK(a[0].train.features != c[0].train.features);
}

TEST_CASE("synthetic federated feature variance decays with coordinate index") {
    HeterogeneityParams hp;
    auto data = gen_synthetic_federated(1, 6, 5000, hp, 11, 0.9);
    const auto& f = data[0].train.features;
    auto var = [&](Eigen::Index k) {
        double mean = f.col(k).mean();
        return (f.col(k).array() - mean).square().sum() / static_cast<double>(f.rows() - 1);
    };
    // Coordinate k (1-based) has variance k^-1.2: ratio var(1)/var(4) = 4^1.2.
    double ratio = var(0) / var(3);
    CHECK(ratio == Catch::Approx(std::pow(4.0, 1.2)).epsilon(0.2));
    CHECK(var(0) > var(2));
    CHECK(var(2) > var(5));
}

TEST_CASE("heterogeneity knobs control the spread of agent feature means") {
    auto spread = [](double beta) {
        HeterogeneityParams hp;
        hp.alpha = 0.0;
        hp.beta = beta;
        auto data = gen_synthetic_federated(20, 5, 400, hp, 99, 0.9);
        double sum = 0.0, sumsq = 0.0;
        for (const auto& tt : data) {
            double m = tt.train.features.mean();
            sum += m;
            sumsq += m * m;
        }
        double mean = sum / 20.0;
        return std::sqrt(sumsq / 20.0 - mean * mean);
    };
    // With beta = 0 every agent's feature-mean hyperprior collapses to N(0,1);
    // beta = 100 spreads the per-agent means by an extra sd of 10.
    CHECK(spread(100.0) > 3.0 * spread(0.0));
}

TEST_CASE("synthetic federated generator validates its arguments") {
    HeterogeneityParams hp;
    CHECK_THROWS_AS(gen_synthetic_federated(0, 5, 100, hp, 1), ConfigError);
    CHECK_THROWS_AS(gen_synthetic_federated(3, 0, 100, hp, 1), ConfigError);
    CHECK_THROWS_AS(gen_synthetic_federated(3, 5, 1, hp, 1), ConfigError);
    hp.alpha = -0.5;
    CHECK_THROWS_AS(gen_synthetic_federated(3, 5, 100, hp, 1), ConfigError);
    hp.alpha = 1.0;
    CHECK_THROWS_AS(gen_synthetic_federated(3, 5, 100, hp, 1, 1.5), ConfigError);
}

TEST_CASE("2d linear labels follow the evenly spaced slopes exactly when noiseless") {
    const int n = 10;
    const double theta = 1.0;
    auto data = gen_2d_linear(n, theta, 500, 0.0, 5);
    REQUIRE(data.size() == n);
    for (int i = 0; i < n; ++i) {
        const auto& d = data[static_cast<std::size_t>(i)];
        REQUIRE(d.m() == 500);
        REQUIRE(d.p() == 2);
        double theta_i = -theta + 2.0 * theta * i / (n - 1); // endpoints are exact
        for (Eigen::Index s = 0; s < d.m(); ++s) {
            CHECK(d.features(s, 0) >= -1.0);
            CHECK(d.features(s, 0) < 1.0);
            int expect = (d.features(s, 0) + theta_i * d.features(s, 1) >= 0.0) ? -1 : +1;
            CHECK(d.labels(s) == expect);
        }
    }
}

TEST_CASE("2d linear label flips vanish as the noise does") {
    auto flips = [](double noise_var) {
        auto noisy = gen_2d_linear(4, 0.8, 500, noise_var, 21);
        int count = 0;
        for (std::size_t i = 0; i < noisy.size(); ++i) {
            double theta_i = -0.8 + 2.0 * 0.8 * static_cast<double>(i) / 3.0;
            const auto& d = noisy[i];
            for (Eigen::Index s = 0; s < d.m(); ++s) {
                int clean = (d.features(s, 0) + theta_i * d.features(s, 1) >= 0.0) ? -1 : +1;
                if (d.labels(s) != clean) ++count;
            }
        }
        return count;
    };
    int noisy = flips(0.25);
    int faint = flips(1e-8);
    CHECK(noisy > 50);
    CHECK(faint <= 2);
}

TEST_CASE("noiseless 2d data is linearly separable by a trained classifier") {
    auto data = gen_2d_linear(6, 1.0, 150, 0.0, 3);
    const auto& d = data[4];
    double gamma = 1e-6;
    ConvexityConstants k = convexity_constants(d, gamma, Task::binary);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 1);
    for (int it = 0; it < 5000; ++it)
        x -= (1.0 / k.big_l) * binary_logistic_gradient(x, d, gamma);
    CHECK(accuracy(x, d) == 1.0);
}

TEST_CASE("2d linear generator validates its arguments") {
    CHECK_THROWS_AS(gen_2d_linear(1, 1.0, 100, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(gen_2d_linear(5, 0.0, 100, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(gen_2d_linear(5, 1.0, 0, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(gen_2d_linear(5, 1.0, 100, -0.1, 1), ConfigError);
}

TEST_CASE("idx loader reads a hand-built byte fixture exactly") {
    TempDir tmp;
    // Two 2x2 images, big-endian headers written byte by byte.
    {
        std::ofstream img(tmp.file("img"), std::ios::binary);
        const unsigned char bytes[] = {
            0, 0, 8, 3,    // magic 2051
            0, 0, 0, 2,    // n = 2
            0, 0, 0, 2,    // rows
            0, 0, 0, 2,    // cols
            0, 128, 255, 64, 10, 20, 30, 40,
        };
        img.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
    }
    {
        std::ofstream lab(tmp.file("lab"), std::ios::binary);
        const unsigned char bytes[] = {0, 0, 8, 1, 0, 0, 0, 2, 7, 3};
        lab.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
    }
    AgentDataset d = load_mnist(tmp.file("img"), tmp.file("lab"));
    REQUIRE(d.m() == 2);
    REQUIRE(d.p() == 4);
    CHECK(d.features(0, 0) == 0.0);
    CHECK(d.features(0, 1) == Catch::Approx(128.0 / 255.0));
    CHECK(d.features(0, 2) == 1.0);
    CHECK(d.features(0, 3) == Catch::Approx(64.0 / 255.0));
    CHECK(d.features(1, 0) == Catch::Approx(10.0 / 255.0));
    CHECK(d.labels(0) == 7);
    CHECK(d.labels(1) == 3);

    // The writers reproduce the same bytes.
    std::vector<unsigned char> pixels = {0, 128, 255, 64, 10, 20, 30, 40};
    write_idx_images(tmp.file("img2"), pixels, 2, 2, 2);
    write_idx_labels(tmp.file("lab2"), {7, 3});
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    CHECK(slurp(tmp.file("img2")) == slurp(tmp.file("img")));
    CHECK(slurp(tmp.file("lab2")) == slurp(tmp.file("lab")));
}

TEST_CASE("idx loader handles the all-zero single-image case") {
    TempDir tmp;
    std::vector<unsigned char> pixels(784, 0);
    write_idx_images(tmp.file("img"), pixels, 1, 28, 28);
    write_idx_labels(tmp.file("lab"), {0});
    AgentDataset d = load_mnist(tmp.file("img"), tmp.file("lab"));
    REQUIRE(d.m() == 1);
    REQUIRE(d.p() == 784);
    CHECK(d.features.row(0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("idx loader rejects malformed files") {
    TempDir tmp;
    std::vector<unsigned char> pixels(8, 5);
    write_idx_images(tmp.file("img"), pixels, 2, 2, 2);
    write_idx_labels(tmp.file("lab"), {1, 2});

    SECTION("missing file") {
        CHECK_THROWS_AS(load_mnist(tmp.file("nope"), tmp.file("lab")), IoError);
        CHECK_THROWS_AS(load_mnist(tmp.file("img"), tmp.file("nope")), IoError);
    }
    SECTION("bad magic") {
        // Labels-as-images and vice versa trip the magic check.
        CHECK_THROWS_AS(load_mnist(tmp.file("lab"), tmp.file("lab")), DataError);
        write_idx_labels(tmp.file("lab_bad"), {1, 2});
        CHECK_THROWS_AS(load_mnist(tmp.file("lab_bad"), tmp.file("img")), DataError);
    }
    SECTION("truncated pixel data") {
        std::ofstream out(tmp.file("short"), std::ios::binary);
        const unsigned char bytes[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2,
                                       0, 0, 0, 2, 9, 9, 9}; // 3 of 8 pixels
        out.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
        out.close();
        CHECK_THROWS_AS(load_mnist(tmp.file("short"), tmp.file("lab")), DataError);
    }
    SECTION("image/label count mismatch") {
        write_idx_labels(tmp.file("lab3"), {1, 2, 3});
        CHECK_THROWS_AS(load_mnist(tmp.file("img"), tmp.file("lab3")), DataError);
    }
    SECTION("writer contract") {
        CHECK_THROWS_AS(write_idx_images(tmp.file("x"), pixels, 3, 2, 2), ContractError);
    }
}

TEST_CASE("hom partition hands out disjoint slices with the documented split") {
    AgentDataset pool = make_pool(1200);
    PartitionSpec spec;
    spec.mode = PartitionMode::hom;
    spec.samples_per_agent = 100;
    spec.train_fraction = 0.8;
    spec.seed = 17;
    auto parts = partition_mnist(pool, 10, spec);
    REQUIRE(parts.size() == 10);

    std::set<long> seen;
    for (const auto& tt : parts) {
        CHECK(tt.train.m() == 80);
        CHECK(tt.test.m() == 20);
        CHECK(tt.train.split == Split::train);
        CHECK(tt.test.split == Split::test);
        for (Eigen::Index j = 0; j < tt.train.m(); ++j) {
            auto id = static_cast<long>(tt.train.features(j, 0));
            CHECK(tt.train.labels(j) == static_cast<int>(id % 10)); // rows kept intact
            CHECK(seen.insert(id).second);                          // never handed out twice
        }
        for (Eigen::Index j = 0; j < tt.test.m(); ++j)
            CHECK(seen.insert(static_cast<long>(tt.test.features(j, 0))).second);
    }
    CHECK(seen.size() == 1000);
}

TEST_CASE("554-sample agents split 443 train / 111 test") {
    AgentDataset pool = make_pool(600);
    PartitionSpec spec;
    spec.samples_per_agent = 554;
    spec.train_fraction = 0.8;
    auto parts = partition_mnist(pool, 1, spec);
    CHECK(parts[0].train.m() == 443);
    CHECK(parts[0].test.m() == 111);
}

TEST_CASE("het partitions remove classes per agent") {
    AgentDataset pool = make_pool(4000);
    PartitionSpec spec;
    spec.samples_per_agent = 300;
    spec.train_fraction = 0.8;
    spec.seed = 23;

    auto distinct = [](const TrainTest& tt) {
        std::set<int> s;
        for (Eigen::Index j = 0; j < tt.train.m(); ++j) s.insert(tt.train.labels(j));
        for (Eigen::Index j = 0; j < tt.test.m(); ++j) s.insert(tt.test.labels(j));
        return s;
    };

    spec.mode = PartitionMode::het2;
    auto het2 = partition_mnist(pool, 12, spec);
    spec.mode = PartitionMode::het5;
    auto het5 = partition_mnist(pool, 12, spec);

    std::set<std::set<int>> het2_sets, het5_sets;
    for (const auto& tt : het2) {
        auto s = distinct(tt);
        CHECK(s.size() <= 8);
        het2_sets.insert(s);
    }
    for (const auto& tt : het5) {
        auto s = distinct(tt);
        CHECK(s.size() <= 5);
        het5_sets.insert(s);
    }
    // Removal is independent per agent: the surviving class sets differ.
    CHECK(het2_sets.size() > 1);
    CHECK(het5_sets.size() > 1);
}

TEST_CASE("partitioning is deterministic per seed") {
    AgentDataset pool = make_pool(500);
    PartitionSpec spec;
    spec.samples_per_agent = 40;
    spec.seed = 5;
    auto a = partition_mnist(pool, 8, spec);
    auto b = partition_mnist(pool, 8, spec);
    spec.seed = 6;
    auto c = partition_mnist(pool, 8, spec);
    CHECK(a[2].train.features == b[2].train.features);
    CHECK(a[5].test.labels == b[5].test.labels);
    CHECK(a[2].train.features != c[2].train.features);
}

TEST_CASE("partitioning validates capacity and class counts") {
    AgentDataset pool = make_pool(100);
    PartitionSpec spec;
    spec.samples_per_agent = 60;
    CHECK_THROWS_AS(partition_mnist(pool, 2, spec), DataError); // 120 > 100

    spec.samples_per_agent = 1;
    CHECK_THROWS_AS(partition_mnist(pool, 1, spec), ConfigError);

    // A 3-class pool cannot lose 5 classes.
    AgentDataset small = make_pool(100);
    for (Eigen::Index i = 0; i < small.m(); ++i) small.labels(i) = static_cast<int>(i % 3);
    spec.samples_per_agent = 30;
    spec.mode = PartitionMode::het5;
    CHECK_THROWS_AS(partition_mnist(small, 2, spec), ConfigError);

    spec.mode = PartitionMode::hom;
    spec.train_fraction = 1.5;
    CHECK_THROWS_AS(partition_mnist(pool, 2, spec), ConfigError);
}

TEST_CASE("csv round trip preserves every bit") {
    AgentDataset d;
    d.features.resize(3, 2);
    d.features << 0.1, -2.5e-17, 3.141592653589793, 1e300, -0.0, 7.0;
    d.labels.resize(3);
    d.labels << 1, -1, 9;
    std::string csv = dataset_to_csv(d);
    AgentDataset back = dataset_from_csv(csv, Split::test);
    CHECK(back.split == Split::test);
    CHECK(back.labels == d.labels);
    REQUIRE(back.features.rows() == 3);
    for (Eigen::Index i = 0; i < 3; ++i)
        for (Eigen::Index j = 0; j < 2; ++j)
            CHECK(std::memcmp(&back.features(i, j), &d.features(i, j), sizeof(double)) == 0);
}

TEST_CASE("csv parser reports malformed input with line numbers") {
    CHECK_THROWS_AS(dataset_from_csv(""), DataError);
    CHECK_THROWS_AS(dataset_from_csv("1\n"), DataError);             // label only
    CHECK_THROWS_AS(dataset_from_csv("1,2.0\n-1,x\n"), DataError);   // bad number
    CHECK_THROWS_AS(dataset_from_csv("1,2.0\n-1,1.0,2.0\n"), DataError); // ragged
    CHECK_THROWS_WITH(dataset_from_csv("1,2.0\n-1,x\n"),
                      Catch::Matchers::ContainsSubstring("line 2"));
    // Blank lines are tolerated.
    AgentDataset d = dataset_from_csv("1,2.0\n\n-1,3.0\n");
    CHECK(d.m() == 2);
}

TEST_CASE("surrogate digit pool is deterministic, covers all classes, and round-trips") {
    TempDir tmp;
    std::vector<unsigned char> pixels, labels, pixels2, labels2;
    gen_mnist_like(500, 31, pixels, labels);
    gen_mnist_like(500, 31, pixels2, labels2);
    REQUIRE(pixels.size() == 500u * 784u);
    REQUIRE(labels.size() == 500u);
    CHECK(pixels == pixels2);
    CHECK(labels == labels2);

    std::set<int> classes(labels.begin(), labels.end());
    CHECK(classes.size() == 10);
    CHECK(*classes.rbegin() == 9);

    write_idx_images(tmp.file("img"), pixels, 500, 28, 28);
    write_idx_labels(tmp.file("lab"), labels);
    AgentDataset d = load_mnist(tmp.file("img"), tmp.file("lab"));
    REQUIRE(d.m() == 500);
    for (Eigen::Index j = 0; j < 784; ++j)
        CHECK(d.features(17, j) == static_cast<double>(pixels[17 * 784 + static_cast<std::size_t>(j)]) / 255.0);
}
