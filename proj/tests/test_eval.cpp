#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "vbn/eval.hpp"

using namespace vbn;

TEST_CASE("confusion matrix basics") {
    // all correct: diagonal
    ConfusionMatrix cm = confusion_matrix({0, 1, 2, 1}, {0, 1, 2, 1});
    CHECK(cm.counts[0][0] == 1);
    CHECK(cm.counts[1][1] == 2);
    CHECK(cm.counts[2][2] == 1);
    CHECK(cm.trace() == 4);
    CHECK(cm.total() == 4);

    // 25 of 30 covid images identified, 5 spread over the other classes
    std::vector<int> truth(30, 1), pred(30, 1);
    for (int i = 0; i < 3; ++i) pred[static_cast<size_t>(i)] = 0;
    for (int i = 3; i < 5; ++i) pred[static_cast<size_t>(i)] = 2;
    ConfusionMatrix covid = confusion_matrix(truth, pred);
    CHECK(covid.counts[1][1] == 25);
    CHECK(covid.row_sum(1) == 30);

    // empty input: all-zero matrix, metrics refuse it
    ConfusionMatrix empty = confusion_matrix({}, {});
    CHECK(empty.total() == 0);
    CHECK_THROWS_AS(class_metrics(empty), DomainError);

    CHECK_THROWS_AS(confusion_matrix({0, 1}, {0}), DomainError);
    CHECK_THROWS_AS(confusion_matrix({0, 5}, {0, 0}), DomainError);
}

TEST_CASE("class metrics reproduce the published table rows") {
    // constructed counts hitting (P,R) = (0.94,1.00), (1.00,0.90), (0.97,1.00)
    ConfusionMatrix cm;
    cm.counts = {{{47, 0, 0}, {3, 54, 3}, {0, 0, 97}}};
    MetricsReport r = class_metrics(cm);
    REQUIRE(r.precision[0].has_value());
    CHECK(round2(*r.precision[0]) == 0.94);
    CHECK(round2(*r.recall[0]) == 1.00);
    CHECK(round2(*r.f1[0]) == 0.97);
    CHECK(round2(*r.precision[1]) == 1.00);
    CHECK(round2(*r.recall[1]) == 0.90);
    CHECK(round2(*r.f1[1]) == 0.95);
    CHECK(round2(*r.precision[2]) == 0.97);
    CHECK(round2(*r.recall[2]) == 1.00);
    CHECK(round2(*r.f1[2]) == 0.98);
}

TEST_CASE("f1 is the harmonic mean and symmetric in P and R") {
    // P=1.00, R=0.90 -> F1 = 0.947..., rounds to 0.95
    const double f1 = 2.0 * 1.0 * 0.9 / (1.0 + 0.9);
    CHECK(f1 == Catch::Approx(0.9473684).epsilon(1e-6));
    CHECK(round2(f1) == 0.95);
    // P=0.94, R=1.00 -> 0.969... -> 0.97
    const double f2 = 2.0 * 0.94 * 1.0 / (0.94 + 1.0);
    CHECK(round2(f2) == 0.97);
    // swapping P and R leaves F1 unchanged
    const double swapped = 2.0 * 0.9 * 1.0 / (0.9 + 1.0);
    CHECK(swapped == f1);
}

TEST_CASE("perfect diagonal gives all ones") {
    ConfusionMatrix cm;
    cm.counts = {{{10, 0, 0}, {0, 20, 0}, {0, 0, 30}}};
    MetricsReport r = class_metrics(cm);
    CHECK(r.accuracy == 1.0);
    for (size_t c = 0; c < kNumClasses; ++c) {
        CHECK(*r.precision[c] == 1.0);
        CHECK(*r.recall[c] == 1.0);
        CHECK(*r.f1[c] == 1.0);
    }
}

TEST_CASE("zero denominators become undefined markers, never zero") {
    // nothing predicted as class 2, class 2 has no support either
    ConfusionMatrix cm;
    cm.counts = {{{5, 1, 0}, {2, 4, 0}, {0, 0, 0}}};
    MetricsReport r = class_metrics(cm);
    CHECK_FALSE(r.precision[2].has_value());
    CHECK_FALSE(r.recall[2].has_value());
    CHECK_FALSE(r.f1[2].has_value());
    CHECK(r.precision[0].has_value());
    const std::string table = metrics_table(cm, r);
    CHECK(table.find("n/a") != std::string::npos);
}

TEST_CASE("accuracy equals the support-weighted recall") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        std::vector<int> truth, pred;
        for (int i = 0; i < 60; ++i) {
            truth.push_back(static_cast<int>(rng.next_index(3)));
            pred.push_back(static_cast<int>(rng.next_index(3)));
        }
        ConfusionMatrix cm = confusion_matrix(truth, pred);
        MetricsReport r = class_metrics(cm);
        double weighted = 0.0;
        bool defined = true;
        for (size_t c = 0; c < kNumClasses; ++c) {
            if (!r.recall[c]) {
                defined = false;
                break;
            }
            weighted += *r.recall[c] * static_cast<double>(r.support[c]);
        }
        if (defined) {
            CHECK(r.accuracy == Catch::Approx(weighted / static_cast<double>(cm.total())).epsilon(1e-12));
        }
    }
}

TEST_CASE("permuting sample order changes nothing") {
    Rng rng(4);
    std::vector<int> truth, pred;
    for (int i = 0; i < 40; ++i) {
        truth.push_back(static_cast<int>(rng.next_index(3)));
        pred.push_back(static_cast<int>(rng.next_index(3)));
    }
    ConfusionMatrix a = confusion_matrix(truth, pred);
    std::vector<size_t> order(truth.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<int> truth2, pred2;
    for (size_t i : order) {
        truth2.push_back(truth[i]);
        pred2.push_back(pred[i]);
    }
    ConfusionMatrix b = confusion_matrix(truth2, pred2);
    CHECK(a.counts == b.counts);
}

TEST_CASE("relabeling by a permutation permutes the matrix and keeps accuracy") {
    Rng rng(5);
    std::vector<int> truth, pred;
    for (int i = 0; i < 50; ++i) {
        truth.push_back(static_cast<int>(rng.next_index(3)));
        pred.push_back(static_cast<int>(rng.next_index(3)));
    }
    const int perm[3] = {2, 0, 1};
    std::vector<int> truth_p, pred_p;
    for (size_t i = 0; i < truth.size(); ++i) {
        truth_p.push_back(perm[truth[i]]);
        pred_p.push_back(perm[pred[i]]);
    }
    ConfusionMatrix a = confusion_matrix(truth, pred);
    ConfusionMatrix b = confusion_matrix(truth_p, pred_p);
    for (size_t i = 0; i < 3; ++i) {
        for (size_t j = 0; j < 3; ++j) {
            CHECK(b.counts[static_cast<size_t>(perm[i])][static_cast<size_t>(perm[j])] == a.counts[i][j]);
        }
    }
    CHECK(class_metrics(a).accuracy == class_metrics(b).accuracy);
}

TEST_CASE("round2 is half-up at two decimals") {
    CHECK(round2(0.945) == 0.95);
    CHECK(round2(0.9449) == 0.94);
    CHECK(round2(0.969072) == 0.97);
    CHECK(round2(1.0) == 1.0);
}

TEST_CASE("metrics tsv carries full precision and the confusion counts") {
    ConfusionMatrix cm;
    cm.counts = {{{47, 0, 0}, {3, 54, 3}, {0, 0, 97}}};
    MetricsReport r = class_metrics(cm);
    const std::string tsv = metrics_tsv(cm, r);
    CHECK(tsv.find("Covid\t1\t0.9\t") != std::string::npos);
    CHECK(tsv.find("confusion\t47\t0\t0\t3\t54\t3\t0\t0\t97") != std::string::npos);
}
