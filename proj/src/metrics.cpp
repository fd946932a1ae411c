#include "latentfair/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace latentfair {

std::size_t PredictionTable::attribute_index(const std::string& name) const {
    auto it = std::find(attribute_names.begin(), attribute_names.end(), name);
    if (it == attribute_names.end()) throw MetricsError("unknown attribute '" + name + "' in predictions table");
    return static_cast<std::size_t>(it - attribute_names.begin());
}

std::string serialize_predictions(const PredictionTable& t) {
    std::ostringstream os;
    os << "# latentfair-predictions v" << kPredictionsVersion << " num_classes=" << t.num_classes << '\n';
    os << "id\ttrue\tpred";
    for (const auto& a : t.attribute_names) os << '\t' << a;
    os << '\n';
    for (const auto& r : t.rows) {
        os << r.id << '\t' << r.true_label << '\t' << r.predicted;
        for (const auto& v : r.attrs) os << '\t' << v;
        os << '\n';
    }
    return os.str();
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::size_t parse_label(const std::string& s, std::size_t line_no, const char* column) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size())
        throw MetricsError("line " + std::to_string(line_no) + ": column '" + column + "' is not a class index ('" +
                           s + "')");
    return static_cast<std::size_t>(v);
}

}  // namespace

PredictionTable parse_predictions(const std::string& text) {
    PredictionTable t;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    std::optional<std::size_t> declared_classes;
    std::size_t max_label = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto pos = line.find("num_classes=");
            if (pos != std::string::npos) {
                try {
                    declared_classes = std::stoul(line.substr(pos + 12));
                } catch (const std::exception&) {
                    throw MetricsError("line " + std::to_string(line_no) + ": malformed num_classes");
                }
            }
            continue;
        }
        const auto cols = split_tabs(line);
        if (!have_header) {
            if (cols.size() < 3 || cols[0] != "id" || cols[1] != "true" || cols[2] != "pred")
                throw MetricsError("line " + std::to_string(line_no) +
                                   ": expected header 'id<TAB>true<TAB>pred<TAB><attributes...>'");
            t.attribute_names.assign(cols.begin() + 3, cols.end());
            std::set<std::string> seen;
            for (const auto& a : t.attribute_names)
                if (a.empty() || !seen.insert(a).second)
                    throw MetricsError("line " + std::to_string(line_no) + ": empty or duplicate attribute column");
            have_header = true;
            continue;
        }
        if (cols.size() != 3 + t.attribute_names.size())
            throw MetricsError("line " + std::to_string(line_no) + ": expected " +
                               std::to_string(3 + t.attribute_names.size()) + " columns, found " +
                               std::to_string(cols.size()) + " (missing attribute column?)");
        PredictionRow r;
        r.id = cols[0];
        r.true_label = parse_label(cols[1], line_no, "true");
        r.predicted = parse_label(cols[2], line_no, "pred");
        r.attrs.assign(cols.begin() + 3, cols.end());
        for (std::size_t a = 0; a < r.attrs.size(); ++a)
            if (r.attrs[a].empty())
                throw MetricsError("line " + std::to_string(line_no) + ": empty value for attribute '" +
                                   t.attribute_names[a] + "'");
        max_label = std::max({max_label, r.true_label, r.predicted});
        t.rows.push_back(std::move(r));
    }
    if (!have_header) throw MetricsError("predictions table has no header line");
    t.num_classes = declared_classes.value_or(t.rows.empty() ? 0 : max_label + 1);
    if (!t.rows.empty() && max_label >= t.num_classes)
        throw MetricsError("predictions table has labels >= declared num_classes " + std::to_string(t.num_classes));
    return t;
}

PredictionTable load_predictions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MetricsError("cannot open predictions '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_predictions(buf.str());
}

void write_predictions(const PredictionTable& table, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw MetricsError("cannot write predictions '" + path.string() + "'");
    out << serialize_predictions(table);
}

std::optional<double> RecallMatrix::recall(std::size_t g, std::size_t c) const {
    if (support[g][c] == 0) return std::nullopt;
    return static_cast<double>(correct[g][c]) / static_cast<double>(support[g][c]);
}

namespace {

RecallMatrix tally(const PredictionTable& table, std::string attribute, std::vector<std::string> groups,
                   const std::vector<std::string>& group_of_row) {
    RecallMatrix m;
    m.attribute = std::move(attribute);
    m.groups = std::move(groups);
    m.num_classes = table.num_classes;
    m.support.assign(m.groups.size(), std::vector<std::size_t>(m.num_classes, 0));
    m.correct = m.support;
    std::map<std::string, std::size_t> index;
    for (std::size_t g = 0; g < m.groups.size(); ++g) index[m.groups[g]] = g;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        auto it = index.find(group_of_row[i]);
        if (it == index.end()) continue;
        const auto& r = table.rows[i];
        ++m.support[it->second][r.true_label];
        if (r.predicted == r.true_label) ++m.correct[it->second][r.true_label];
    }
    return m;
}

}  // namespace

RecallMatrix recall_matrix(const PredictionTable& table, const std::string& attribute) {
    if (table.rows.empty()) throw MetricsError("recall_matrix: empty predictions table");
    const std::size_t a = table.attribute_index(attribute);
    std::set<std::string> values;
    std::vector<std::string> group_of_row;
    for (const auto& r : table.rows) {
        values.insert(r.attrs[a]);
        group_of_row.push_back(r.attrs[a]);
    }
    return tally(table, attribute, {values.begin(), values.end()}, group_of_row);
}

FairnessScore fairness_score(const RecallMatrix& m) {
    if (m.groups.empty()) throw MetricsError("fairness_score: no groups");
    for (std::size_t g = 0; g < m.groups.size(); ++g) {
        bool any = false;
        for (std::size_t c = 0; c < m.num_classes; ++c) any = any || m.defined(g, c);
        if (!any) throw MetricsError("fairness_score: group '" + m.groups[g] + "' has no defined recall cells");
    }
    FairnessScore s;
    for (std::size_t c = 0; c < m.num_classes; ++c) {
        bool all = true;
        for (std::size_t g = 0; g < m.groups.size(); ++g) all = all && m.defined(g, c);
        if (all) s.classes_used.push_back(c);
    }
    if (s.classes_used.empty()) throw MetricsError("fairness_score: no class has support in every group");
    s.group_sums.assign(m.groups.size(), 0.0);
    for (std::size_t g = 0; g < m.groups.size(); ++g)
        for (std::size_t c : s.classes_used) s.group_sums[g] += *m.recall(g, c);
    s.reference = 0;
    for (std::size_t g = 1; g < m.groups.size(); ++g) {
        const double a = s.group_sums[g], b = s.group_sums[s.reference];
        if (a > b || (a == b && m.groups[g] < m.groups[s.reference])) s.reference = g;
    }
    const double ref = s.group_sums[s.reference];
    if (ref <= 0.0) throw MetricsError("fairness_score: reference group '" + m.groups[s.reference] + "' has zero recall");
    s.fairness = 1.0;
    for (double v : s.group_sums) s.fairness = std::min(s.fairness, v / ref);
    return s;
}

std::vector<double> mean_classwise_accuracy(const RecallMatrix& m) {
    std::vector<double> out;
    for (std::size_t g = 0; g < m.groups.size(); ++g) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t c = 0; c < m.num_classes; ++c)
            if (auto r = m.recall(g, c)) {
                sum += *r;
                ++n;
            }
        if (n == 0) throw MetricsError("mean_classwise_accuracy: group '" + m.groups[g] + "' has no defined cells");
        out.push_back(sum / static_cast<double>(n));
    }
    return out;
}

namespace {

void fill_overall(FairnessReport& rep, const PredictionTable& table) {
    std::vector<std::size_t> support(table.num_classes, 0), correct(table.num_classes, 0);
    for (const auto& r : table.rows) {
        ++support[r.true_label];
        if (r.predicted == r.true_label) ++correct[r.true_label];
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < table.num_classes; ++c) {
        if (support[c] == 0) {
            rep.expression_accuracy.push_back(std::nullopt);
            continue;
        }
        const double acc = static_cast<double>(correct[c]) / static_cast<double>(support[c]);
        rep.expression_accuracy.push_back(acc);
        sum += acc;
        ++n;
    }
    rep.mean_accuracy = n ? sum / static_cast<double>(n) : 0.0;
}

FairnessReport finish(RecallMatrix m, const PredictionTable& table) {
    FairnessReport rep;
    rep.attribute = m.attribute;
    rep.score = fairness_score(m);
    rep.group_mean_accuracy = mean_classwise_accuracy(m);
    rep.matrix = std::move(m);
    fill_overall(rep, table);
    return rep;
}

}  // namespace

FairnessReport attribute_report(const PredictionTable& table, const std::string& attribute) {
    return finish(recall_matrix(table, attribute), table);
}

FairnessReport intersectional_report(const PredictionTable& table, const std::string& a, const std::string& b) {
    if (table.rows.empty()) throw MetricsError("intersectional_report: empty predictions table");
    const std::size_t ia = table.attribute_index(a), ib = table.attribute_index(b);
    std::set<std::string> va, vb;
    std::set<std::string> present;
    std::vector<std::string> group_of_row;
    for (const auto& r : table.rows) {
        va.insert(r.attrs[ia]);
        vb.insert(r.attrs[ib]);
        group_of_row.push_back(r.attrs[ia] + "-" + r.attrs[ib]);
        present.insert(group_of_row.back());
    }
    std::vector<std::string> groups;
    for (const auto& x : va)
        for (const auto& y : vb) {
            const std::string g = x + "-" + y;
            if (present.contains(g))
                groups.push_back(g);
            else
                std::cerr << "warning: intersectional group '" << g << "' has no samples; dropped\n";
        }
    if (groups.size() < 2)
        throw MetricsError("intersectional_report: fewer than 2 non-empty groups for " + a + "*" + b);
    return finish(tally(table, a + "-" + b, std::move(groups), group_of_row), table);
}

FairnessReport report_for(const PredictionTable& table, const std::string& spec) {
    const auto star = spec.find('*');
    if (star == std::string::npos) return attribute_report(table, spec);
    return intersectional_report(table, spec.substr(0, star), spec.substr(star + 1));
}

ReportFormat parse_report_format(const std::string& s) {
    if (s == "table") return ReportFormat::table;
    if (s == "csv") return ReportFormat::csv;
    throw std::invalid_argument("unknown report format '" + s + "' (expected table|csv)");
}

namespace {

std::string fmt(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string class_label(const std::vector<std::string>& names, std::size_t c) {
    return c < names.size() ? names[c] : "class " + std::to_string(c);
}

}  // namespace

std::string render_report(const std::vector<FairnessReport>& reports, ReportFormat format,
                          const std::vector<std::string>& class_names) {
    std::ostringstream os;
    if (reports.empty()) return {};
    const FairnessReport& first = reports.front();
    if (format == ReportFormat::csv) {
        os << "table,attribute,group,class,value\n";
        for (std::size_t c = 0; c < first.expression_accuracy.size(); ++c) {
            const auto& v = first.expression_accuracy[c];
            os << "expression_accuracy,,," << class_label(class_names, c) << ','
               << (v ? fmt(100.0 * *v, 2) : "n/a") << '\n';
        }
        os << "expression_accuracy,,,mean," << fmt(100.0 * first.mean_accuracy, 2) << '\n';
        for (const auto& rep : reports) {
            for (std::size_t g = 0; g < rep.matrix.groups.size(); ++g) {
                for (std::size_t c = 0; c < rep.matrix.num_classes; ++c) {
                    auto r = rep.matrix.recall(g, c);
                    os << "recall," << rep.attribute << ',' << rep.matrix.groups[g] << ','
                       << class_label(class_names, c) << ',' << (r ? fmt(100.0 * *r, 2) : "n/a") << '\n';
                }
                os << "mean_classwise_accuracy," << rep.attribute << ',' << rep.matrix.groups[g] << ",,"
                   << fmt(100.0 * rep.group_mean_accuracy[g], 2) << '\n';
            }
            os << "fairness_ratio," << rep.attribute << ',' << rep.matrix.groups[rep.score.reference] << ",,"
               << fmt(rep.score.fairness, 4) << '\n';
            os << "fairness_percent," << rep.attribute << ',' << rep.matrix.groups[rep.score.reference] << ",,"
               << fmt(100.0 * rep.score.fairness, 2) << '\n';
        }
        return os.str();
    }

    std::vector<std::string> footnotes;
    os << "Expression-wise accuracy (%)\n";
    os << pad("Expression", 16) << "Accuracy\n";
    for (std::size_t c = 0; c < first.expression_accuracy.size(); ++c) {
        const auto& v = first.expression_accuracy[c];
        os << pad(class_label(class_names, c), 16) << (v ? fmt(100.0 * *v, 1) : "n/a*") << '\n';
        if (!v) footnotes.push_back("* " + class_label(class_names, c) + ": no samples in the evaluated set");
    }
    os << pad("Mean", 16) << fmt(100.0 * first.mean_accuracy, 1) << "\n\n";

    for (const auto& rep : reports) {
        os << "Mean class-wise accuracy by " << rep.attribute << " (%)\n";
        os << pad("Group", 24) << pad("Mean", 8);
        for (std::size_t c = 0; c < rep.matrix.num_classes; ++c) os << pad(class_label(class_names, c), 10);
        os << '\n';
        for (std::size_t g = 0; g < rep.matrix.groups.size(); ++g) {
            os << pad(rep.matrix.groups[g], 24) << pad(fmt(100.0 * rep.group_mean_accuracy[g], 1), 8);
            for (std::size_t c = 0; c < rep.matrix.num_classes; ++c) {
                auto r = rep.matrix.recall(g, c);
                os << pad(r ? fmt(100.0 * *r, 1) : "n/a*", 10);
                if (!r)
                    footnotes.push_back("* " + rep.attribute + "=" + rep.matrix.groups[g] + ", " +
                                        class_label(class_names, c) + ": no samples (excluded from fairness sums)");
            }
            os << '\n';
        }
        os << '\n';
    }

    os << "Fairness (min ratio of per-group recall sums to the best group)\n";
    os << pad("Attribute", 24) << pad("Reference", 24) << pad("Ratio", 10) << pad("Percent", 10) << "Classes\n";
    for (const auto& rep : reports) {
        std::string classes;
        for (std::size_t i = 0; i < rep.score.classes_used.size(); ++i)
            classes += (i ? "," : "") + std::to_string(rep.score.classes_used[i]);
        os << pad(rep.attribute, 24) << pad(rep.matrix.groups[rep.score.reference], 24)
           << pad(fmt(rep.score.fairness, 4), 10) << pad(fmt(100.0 * rep.score.fairness, 2), 10) << classes << '\n';
    }
    if (!footnotes.empty()) {
        os << '\n';
        for (const auto& f : footnotes) os << f << '\n';
    }
    return os.str();
}

}  // namespace latentfair
