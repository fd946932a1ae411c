#include <doctest.h>

#include <algorithm>
#include <map>

#include "helpers.hpp"
#include "latentfair/metrics.hpp"

using namespace latentfair;

namespace {

RecallMatrix matrix_from(const std::vector<std::vector<std::size_t>>& correct,
                         const std::vector<std::vector<std::size_t>>& support) {
    RecallMatrix m;
    m.attribute = "q";
    for (std::size_t g = 0; g < correct.size(); ++g) m.groups.push_back("g" + std::to_string(g));
    m.num_classes = correct[0].size();
    m.correct = correct;
    m.support = support;
    return m;
}

// Matrix whose group sums equal `sums`, one class per group with support 10 and exact tenths.
RecallMatrix matrix_with_sums(const std::vector<double>& sums, std::size_t classes) {
    std::vector<std::vector<std::size_t>> correct, support;
    for (double s : sums) {
        std::vector<std::size_t> c(classes, 0), n(classes, 10);
        auto tenths = static_cast<std::size_t>(std::lround(s * 10));
        for (std::size_t k = 0; k < classes && tenths > 0; ++k) {
            c[k] = std::min<std::size_t>(10, tenths);
            tenths -= c[k];
        }
        correct.push_back(c);
        support.push_back(n);
    }
    return matrix_from(correct, support);
}

RecallMatrix random_matrix(Rng& rng, std::size_t groups, std::size_t classes) {
    std::vector<std::vector<std::size_t>> correct(groups), support(groups);
    for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t c = 0; c < classes; ++c) {
            const std::size_t n = 1 + rng.below(40);
            support[g].push_back(n);
            correct[g].push_back(1 + rng.below(n));
        }
    return matrix_from(correct, support);
}

// Eq. (min over groups of sum_i / sum_d), evaluated directly.
double direct_fairness(const RecallMatrix& m) {
    std::vector<double> sums;
    for (std::size_t g = 0; g < m.groups.size(); ++g) {
        double s = 0.0;
        for (std::size_t c = 0; c < m.num_classes; ++c) s += double(m.correct[g][c]) / double(m.support[g][c]);
        sums.push_back(s);
    }
    const double ref = *std::max_element(sums.begin(), sums.end());
    double f = 1.0;
    for (double s : sums) f = std::min(f, s / ref);
    return f;
}

PredictionTable two_class_table() {
    PredictionTable t;
    t.num_classes = 2;
    t.attribute_names = {"gender"};
    // group A: class 0 recall 2/2, class 1 recall 1/2
    t.rows = {{"1", 0, 0, {"A"}}, {"2", 0, 0, {"A"}}, {"3", 1, 1, {"A"}}, {"4", 1, 0, {"A"}},
              {"5", 0, 1, {"B"}}, {"6", 0, 0, {"B"}}, {"7", 1, 1, {"B"}}, {"8", 1, 1, {"B"}}};
    return t;
}

}  // namespace

TEST_CASE("recall matrix hand counts") {
    auto m = recall_matrix(two_class_table(), "gender");
    REQUIRE(m.groups == std::vector<std::string>{"A", "B"});
    CHECK(*m.recall(0, 0) == 1.0);
    CHECK(*m.recall(0, 1) == 0.5);
    CHECK(mean_classwise_accuracy(m)[0] == 0.75);
    CHECK_THROWS_AS(recall_matrix(two_class_table(), "race"), MetricsError);

    auto t = two_class_table();
    t.rows.resize(6);  // group B loses its class-1 rows
    auto partial = recall_matrix(t, "gender");
    CHECK_FALSE(partial.defined(1, 1));
    CHECK_FALSE(partial.recall(1, 1).has_value());
    auto s = fairness_score(partial);
    CHECK(s.classes_used == std::vector<std::size_t>{0});
}

TEST_CASE("recall matrix matches a per-record tally") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        PredictionTable t;
        t.num_classes = 4;
        t.attribute_names = {"q"};
        const std::size_t rows = 1 + rng.below(1000);
        for (std::size_t i = 0; i < rows; ++i)
            t.rows.push_back({std::to_string(i), rng.below(4), rng.below(4), {rng.below(2) ? "x" : "y"}});
        auto m = recall_matrix(t, "q");
        std::map<std::pair<std::string, std::size_t>, std::pair<std::size_t, std::size_t>> tally;
        for (const auto& r : t.rows) {
            auto& [hit, n] = tally[{r.attrs[0], r.true_label}];
            ++n;
            hit += r.predicted == r.true_label;
        }
        for (std::size_t g = 0; g < m.groups.size(); ++g)
            for (std::size_t c = 0; c < 4; ++c) {
                auto [hit, n] = tally[{m.groups[g], c}];
                CHECK(m.support[g][c] == n);
                CHECK(m.correct[g][c] == hit);
            }
    }
}

TEST_CASE("fairness score examples") {
    auto equal = fairness_score(matrix_with_sums({1.5, 1.5}, 3));
    CHECK(equal.fairness == 1.0);
    CHECK(equal.reference == 0);

    auto two = fairness_score(matrix_with_sums({2.4, 2.1}, 3));
    CHECK(two.reference == 0);
    CHECK(two.fairness == doctest::Approx(0.875).epsilon(1e-12));

    auto three = fairness_score(matrix_with_sums({2.0, 1.9, 1.0}, 3));
    CHECK(three.fairness == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(fairness_score(matrix_with_sums({0.0, 0.0}, 2)), MetricsError);
    auto empty = matrix_from({{1, 1}, {0, 0}}, {{2, 2}, {0, 0}});
    CHECK_THROWS_AS(fairness_score(empty), MetricsError);
}

TEST_CASE("fairness score against direct evaluation on random matrices") {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t groups = 2 + rng.below(5), classes = 1 + rng.below(7);
        auto m = random_matrix(rng, groups, classes);
        auto s = fairness_score(m);
        REQUIRE(s.fairness == direct_fairness(m));
        const auto [lo, hi] = std::minmax_element(s.group_sums.begin(), s.group_sums.end());
        CHECK((s.fairness == 1.0) == (*lo == *hi));
        CHECK(s.group_sums[s.reference] == *hi);

        // halving every recall (double support, same hits) scales all sums equally
        auto half = m;
        for (auto& row : half.support)
            for (auto& n : row) n *= 2;
        auto sh = fairness_score(half);
        CHECK(sh.fairness == s.fairness);
        CHECK(sh.reference == s.reference);

        // reversing group order permutes the report but not F
        auto rev = m;
        std::reverse(rev.correct.begin(), rev.correct.end());
        std::reverse(rev.support.begin(), rev.support.end());
        CHECK(fairness_score(rev).fairness == s.fairness);
    }
}

TEST_CASE("lowering the weakest group lowers F") {
    auto base = fairness_score(matrix_with_sums({2.4, 2.1, 2.2}, 3));
    auto lower = fairness_score(matrix_with_sums({2.4, 2.0, 2.2}, 3));
    CHECK(lower.fairness < base.fairness);
    // a non-reference group that is not the minimum leaves F unchanged
    auto mid = fairness_score(matrix_with_sums({2.4, 2.1, 2.15}, 3));
    CHECK(mid.fairness == base.fairness);
}

TEST_CASE("dominating group is the reference and ties go to the smaller name") {
    auto m = matrix_from({{3, 4}, {9, 9}}, {{10, 10}, {10, 10}});
    CHECK(fairness_score(m).reference == 1);
    auto tie = matrix_with_sums({1.2, 1.2}, 2);
    tie.groups = {"zeta", "alpha"};
    CHECK(fairness_score(tie).reference == 1);
}

TEST_CASE("intersectional report drops empty combinations") {
    PredictionTable t;
    t.num_classes = 2;
    t.attribute_names = {"gender", "race"};
    for (int i = 0; i < 8; ++i) {
        const std::string g = i % 2 ? "F" : "M", r = i % 4 < 2 ? "a" : "b";
        t.rows.push_back({std::to_string(i), std::size_t(i / 4), std::size_t(i / 4), {g, r}});
    }
    auto rep = report_for(t, "gender*race");
    CHECK(rep.matrix.groups.size() == 4);
    CHECK(rep.score.fairness == 1.0);

    auto one = t;
    one.rows.resize(1);
    CHECK_THROWS_AS(report_for(one, "gender*race"), MetricsError);
    CHECK_THROWS_AS(report_for(t, "gender*age"), MetricsError);
}

TEST_CASE("predictions round-trip and malformed rows name the line") {
    auto t = two_class_table();
    const auto text = serialize_predictions(t);
    CHECK(parse_predictions(text) == t);
    try {
        parse_predictions(text + "9\t1\n");
        FAIL("expected an error");
    } catch (const MetricsError& e) {
        CHECK(std::string(e.what()).find("line 11") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_predictions("id\ttrue\tpred\n1\tx\t0\n"), MetricsError);
}

TEST_CASE("rendered report has all tables, flags empty classes and is deterministic") {
    auto t = two_class_table();
    t.num_classes = 3;
    auto reps = std::vector<FairnessReport>{report_for(t, "gender")};
    const auto doc = render_report(reps, ReportFormat::table);
    CHECK(doc == render_report(reps, ReportFormat::table));
    CHECK(doc.find("75.0") != std::string::npos);
    CHECK(doc.find("class 2: no samples") != std::string::npos);
    CHECK(!render_report(reps, ReportFormat::csv).empty());
    CHECK_THROWS(parse_report_format("xml"));
}
