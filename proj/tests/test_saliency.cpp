#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "wid/rng.hpp"
#include "wid/saliency.hpp"

using namespace wid;

TEST_CASE("fd_bin_edges hand evaluation on 1..8") {
    // IQR = 3.5, width = 7 * 8^(-1/3) = 3.5, B = ceil(7/3.5) = 2
    const std::vector<double> values = {1, 2, 3, 4, 5, 6, 7, 8};
    bool constant = false;
    const std::vector<double> edges = fd_bin_edges(values, &constant);
    CHECK_FALSE(constant);
    REQUIRE(edges.size() == 3);
    CHECK(edges[0] == 1.0);
    CHECK(edges[1] == doctest::Approx(4.5).epsilon(1e-12));
    CHECK(edges[2] == 8.0);
}

TEST_CASE("fd_bin_edges degenerate and fallback cases") {
    bool constant = false;
    const std::vector<double> edges = fd_bin_edges({2.5, 2.5, 2.5}, &constant);
    CHECK(constant);
    CHECK(edges.size() == 2);

    // zero IQR but spread extremes: Sturges fallback, B = ceil(log2 9)+1 = 5
    std::vector<double> spiky = {0, 5, 5, 5, 5, 5, 5, 5, 10};
    bool c2 = true;
    const std::vector<double> e2 = fd_bin_edges(spiky, &c2);
    CHECK_FALSE(c2);
    CHECK(e2.size() == static_cast<std::size_t>(std::ceil(std::log2(9.0))) + 2);

    CHECK_THROWS_AS(fd_bin_edges({1.0}), ParameterError);
}

TEST_CASE("fd_bin_edges cover the range and increase strictly") {
    Rng rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> values(5 + rng.next_below(200));
        for (double& v : values) v = rng.next_gaussian() * (1.0 + trial);
        const std::vector<double> edges = fd_bin_edges(values);
        const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
        CHECK(edges.front() == *lo);
        CHECK(edges.back() == *hi);
        for (std::size_t i = 1; i < edges.size(); ++i) CHECK(edges[i] > edges[i - 1]);
    }
}

TEST_CASE("half-open binning rule with a closed top bin") {
    const std::vector<double> edges = {0.0, 0.5, 1.0};
    // writer 1 values {0.1, 0.9}, writer 2 values {0.5, 0.5}
    CHECK(bin_index(0.1, edges) == 0);
    CHECK(bin_index(0.9, edges) == 1);
    CHECK(bin_index(0.5, edges) == 1); // 0.5 falls in the upper bin
    CHECK(bin_index(1.0, edges) == 1); // top edge closes into the last bin
    CHECK(bin_index(-5.0, edges) == 0);
    CHECK(bin_index(5.0, edges) == 1);
}

TEST_CASE("build_histograms counts and probabilities") {
    Rng rng(9);
    const int per_writer = 12;
    Mat alpha(2 * per_writer, 1);
    std::vector<int> writers;
    for (int i = 0; i < 2 * per_writer; ++i) {
        const int w = i < per_writer ? 1 : 2;
        writers.push_back(w);
        alpha.at(i, 0) = (w == 1 ? 0.1 : 0.5) + rng.next_double() * 0.02;
    }
    const ComponentHistogramSet set = build_histograms(alpha, writers, 0);
    REQUIRE(set.writers.size() == 2);
    REQUIRE(set.edges.size() >= 3); // clusters force at least two bins

    // recount through the binning oracle and check mass conservation
    for (std::size_t w = 0; w < 2; ++w) {
        std::vector<int> expect(set.counts[w].size(), 0);
        for (int i = 0; i < alpha.rows; ++i)
            if (writers[static_cast<std::size_t>(i)] == set.writers[w])
                expect[static_cast<std::size_t>(bin_index(alpha.at(i, 0), set.edges))]++;
        CHECK(set.counts[w] == expect);
        int total = 0;
        double mass = 0.0;
        for (std::size_t b = 0; b < set.counts[w].size(); ++b) {
            total += set.counts[w][b];
            mass += set.probs[w][b];
        }
        CHECK(total == per_writer);
        CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    }
    // the clusters land in different modal bins
    const auto argmax = [](const std::vector<int>& v) {
        return std::distance(v.begin(), std::max_element(v.begin(), v.end()));
    };
    CHECK(argmax(set.counts[0]) < argmax(set.counts[1]));

    CHECK_THROWS_AS(build_histograms(alpha, {1, 2}, 0), DimensionError);
    CHECK_THROWS_AS(build_histograms(alpha, writers, 7), ParameterError);
}

TEST_CASE("kl divergence hand values") {
    CHECK(kl_divergence({0.3, 0.7}, {0.3, 0.7}, 0.0) == 0.0);
    CHECK(kl_divergence({1.0, 0.0}, {0.5, 0.5}, 0.0) == doctest::Approx(1.0).epsilon(1e-12));

    const double pq = kl_divergence({0.8, 0.2}, {0.4, 0.6}, 0.0);
    const double qp = kl_divergence({0.4, 0.6}, {0.8, 0.2}, 0.0);
    CHECK(pq != qp); // asymmetry witnessed

    CHECK(std::isinf(kl_divergence({0.5, 0.5}, {1.0, 0.0}, 0.0)));
    CHECK(std::isfinite(kl_divergence({0.5, 0.5}, {1.0, 0.0}, 1e-6)));
    CHECK_THROWS_AS(kl_divergence({1.0}, {0.5, 0.5}, 0.0), DimensionError);
}

TEST_CASE("divergence matrix against the per-pair oracle") {
    Rng rng(2);
    Mat alpha(30, 1);
    std::vector<int> writers(30);
    for (int i = 0; i < 30; ++i) {
        writers[static_cast<std::size_t>(i)] = i % 3;
        alpha.at(i, 0) = rng.next_gaussian() + (i % 3) * 1.5;
    }
    const ComponentHistogramSet set = build_histograms(alpha, writers, 0);
    REQUIRE(set.writers.size() == 3);
    const DivergenceMatrix dm = divergence_matrix(set, 1e-6);
    REQUIRE(dm.d.rows == 3);
    REQUIRE(dm.d.cols == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(dm.d.at(i, i) == 0.0);
        for (int j = 0; j < 3; ++j) {
            CHECK(dm.d.at(i, j) >= 0.0);
            if (i != j) {
                const double oracle = kl_divergence(set.probs[static_cast<std::size_t>(i)],
                                                    set.probs[static_cast<std::size_t>(j)], 1e-6);
                CHECK(dm.d.at(i, j) == oracle);
            }
        }
    }
}

TEST_CASE("identical histograms give a zero divergence matrix") {
    Mat alpha(8, 1);
    std::vector<int> writers = {0, 0, 1, 1, 0, 0, 1, 1};
    const double vals[8] = {0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9};
    for (int i = 0; i < 8; ++i) alpha.at(i, 0) = vals[i];
    const DivergenceMatrix dm = divergence_matrix(build_histograms(alpha, writers, 0), 1e-6);
    for (double v : dm.d.a) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(average_divergence(dm) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("average divergence of a two-writer matrix is (a+b)/2") {
    DivergenceMatrix dm;
    dm.d = Mat(2, 2);
    dm.d.at(0, 1) = 0.75;
    dm.d.at(1, 0) = 0.15;
    CHECK(average_divergence(dm) == doctest::Approx((0.75 + 0.15) / 2.0).epsilon(1e-15));
}

TEST_CASE("significance weights follow the inverse law") {
    const std::vector<double> w = significance_weights({0.0, 1.0, 99.0});
    CHECK(w[0] == 1.0);
    CHECK(w[1] == 0.5);
    CHECK(w[2] == doctest::Approx(0.01).epsilon(1e-12));

    // strictly decreasing on a sorted grid
    std::vector<double> phis;
    for (int i = 0; i < 20; ++i) phis.push_back(0.3 * i);
    const std::vector<double> ws = significance_weights(phis);
    for (std::size_t i = 1; i < ws.size(); ++i) CHECK(ws[i] < ws[i - 1]);
    for (double x : ws) {
        CHECK(x > 0.0);
        CHECK(x <= 1.0);
    }

    CHECK_THROWS_AS(significance_weights({-0.1}), ParameterError);
}

TEST_CASE("weight ordering inverts divergence ordering") {
    Rng rng(3);
    std::vector<double> phis(40);
    for (double& p : phis) p = rng.next_double() * 5.0;
    const std::vector<double> w = significance_weights(phis);
    for (std::size_t i = 0; i < phis.size(); ++i)
        for (std::size_t j = 0; j < phis.size(); ++j)
            if (phis[i] < phis[j]) CHECK(w[i] > w[j]);
}

TEST_CASE("relabeling writers permutes the matrix and keeps phi") {
    Rng rng(4);
    Mat alpha(40, 1);
    std::vector<int> writers(40);
    for (int i = 0; i < 40; ++i) {
        writers[static_cast<std::size_t>(i)] = i % 4;
        alpha.at(i, 0) = rng.next_gaussian() + (i % 4);
    }
    const ComponentHistogramSet base = build_histograms(alpha, writers, 0);
    const DivergenceMatrix dm0 = divergence_matrix(base, 1e-6);

    // relabel 0,1,2,3 -> 3,0,1,2 (order in the histogram set is sorted by id)
    std::vector<int> relabeled(40);
    const int perm[4] = {3, 0, 1, 2};
    for (int i = 0; i < 40; ++i) relabeled[static_cast<std::size_t>(i)] = perm[writers[static_cast<std::size_t>(i)]];
    const DivergenceMatrix dm1 = divergence_matrix(build_histograms(alpha, relabeled, 0), 1e-6);

    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(dm1.d.at(perm[i], perm[j]) == doctest::Approx(dm0.d.at(i, j)).epsilon(1e-12));
    CHECK(average_divergence(dm1) == doctest::Approx(average_divergence(dm0)).epsilon(1e-12));
}

TEST_CASE("separated component outranks shared component in direct mode") {
    // component A: two writers draw from well-separated distributions;
    // component B: both draw from one shared distribution
    Rng rng(5);
    const int n = 120;
    Mat alpha(n, 2);
    std::vector<int> writers(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int w = i < n / 2 ? 0 : 1;
        writers[static_cast<std::size_t>(i)] = w;
        alpha.at(i, 0) = rng.next_gaussian() * 0.5 + (w == 0 ? -3.0 : 3.0);
        alpha.at(i, 1) = rng.next_gaussian();
    }

    const SaliencyWeights direct = fit_saliency(alpha, writers, 1e-6, WeightMode::kDirect);
    CHECK(direct.phi[0] > direct.phi[1]); // separation shows up as divergence
    CHECK(direct.w[0] > direct.w[1]);     // and direct mode rewards it

    // the printed inverse law maps the same divergences the other way around
    const SaliencyWeights inverse = fit_saliency(alpha, writers, 1e-6, WeightMode::kInverse);
    CHECK(inverse.w[0] < inverse.w[1]);
}

TEST_CASE("saliency fit serializes and round-trips") {
    Rng rng(6);
    Mat alpha(60, 3);
    std::vector<int> writers(60);
    for (int i = 0; i < 60; ++i) {
        writers[static_cast<std::size_t>(i)] = i % 3;
        for (int k = 0; k < 3; ++k) alpha.at(i, k) = rng.next_gaussian() + k * (i % 3);
    }
    const SaliencyWeights s = fit_saliency(alpha, writers, 1e-6);
    REQUIRE(s.w.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(s.phi[k] >= 0.0);
        CHECK(s.w[k] > 0.0);
        CHECK(s.w[k] <= 1.0);
    }

    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "wid_saliency_test.json";
    save_saliency(s, path);
    const SaliencyWeights loaded = load_saliency(path);
    CHECK(loaded.phi == s.phi);
    CHECK(loaded.w == s.w);
    CHECK(loaded.bins == s.bins);
    CHECK(loaded.epsilon == s.epsilon);
    fs::remove(path);
}
