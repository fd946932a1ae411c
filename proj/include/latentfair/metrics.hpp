#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentfair {

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PredictionRow {
    std::string id;
    std::size_t true_label = 0;
    std::size_t predicted = 0;
    std::vector<std::string> attrs;  // one value per PredictionTable::attribute_names
    bool operator==(const PredictionRow&) const = default;
};

// Line-delimited prediction records. Text layout:
//   # latentfair-predictions v1 num_classes=<C>     (optional; C inferred otherwise)
//   id <TAB> true <TAB> pred <TAB> <attr1> <TAB> ...   (header)
//   <one row per record>
constexpr unsigned kPredictionsVersion = 1;

struct PredictionTable {
    std::size_t num_classes = 0;
    std::vector<std::string> attribute_names;
    std::vector<PredictionRow> rows;

    std::size_t attribute_index(const std::string& name) const;
    bool operator==(const PredictionTable&) const = default;
};

std::string serialize_predictions(const PredictionTable& table);
// Malformed rows raise MetricsError naming the line number.
PredictionTable parse_predictions(const std::string& text);
PredictionTable load_predictions(const std::filesystem::path& path);
void write_predictions(const PredictionTable& table, const std::filesystem::path& path);

// Per-group, per-class recall p(yhat = c | y = c, q = group).
struct RecallMatrix {
    std::string attribute;
    std::vector<std::string> groups;
    std::size_t num_classes = 0;
    std::vector<std::vector<std::size_t>> support;  // [group][class]
    std::vector<std::vector<std::size_t>> correct;  // [group][class]

    bool defined(std::size_t g, std::size_t c) const { return support[g][c] > 0; }
    // nullopt for zero-support cells.
    std::optional<double> recall(std::size_t g, std::size_t c) const;
    double recall_or_zero(std::size_t g, std::size_t c) const { return recall(g, c).value_or(0.0); }
};

// Groups are the attribute's observed values in lexicographic order.
RecallMatrix recall_matrix(const PredictionTable& table, const std::string& attribute);

struct FairnessScore {
    double fairness = 1.0;      // min_i sum_i / sum_d
    std::size_t reference = 0;  // d: group with the largest recall sum
    std::vector<std::size_t> classes_used;
    std::vector<double> group_sums;
};

// Sums run over classes with non-zero support in every group. Ties for the
// reference group go to the lexicographically smallest group name.
FairnessScore fairness_score(const RecallMatrix& matrix);

// Macro average of defined per-class recalls, one value per group.
std::vector<double> mean_classwise_accuracy(const RecallMatrix& matrix);

struct FairnessReport {
    std::string attribute;
    RecallMatrix matrix;
    FairnessScore score;
    std::vector<double> group_mean_accuracy;
    std::vector<std::optional<double>> expression_accuracy;  // overall recall per class
    double mean_accuracy = 0.0;                              // macro average of expression_accuracy
};

FairnessReport attribute_report(const PredictionTable& table, const std::string& attribute);
// Product attribute "a-b"; combinations without samples are dropped with a warning.
FairnessReport intersectional_report(const PredictionTable& table, const std::string& a, const std::string& b);
// "a" or "a*b".
FairnessReport report_for(const PredictionTable& table, const std::string& spec);

enum class ReportFormat { table, csv };
ReportFormat parse_report_format(const std::string& s);

// Expression-wise accuracy, per-group mean class-wise accuracy and fairness tables.
std::string render_report(const std::vector<FairnessReport>& reports, ReportFormat format,
                          const std::vector<std::string>& class_names = {});

}  // namespace latentfair
