#include "aml/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "aml/error.hpp"

namespace aml {

namespace {

bool is_illicit(const ScoredLabel& s) {
    if (s.truth == Label::Unknown) {
        throw DataError("metrics: unknown labels must be excluded before evaluation");
    }
    return s.truth == Label::Illicit;
}

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace

double accuracy(std::span<const ScoredLabel> scored, double threshold) {
    if (scored.empty()) {
        throw DataError("accuracy: no labeled records");
    }
    std::size_t correct = 0;
    for (const auto& s : scored) {
        if ((s.score > threshold) == is_illicit(s)) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(scored.size());
}

double best_accuracy_threshold(std::span<const ScoredLabel> scored) {
    if (scored.empty()) {
        throw DataError("accuracy: no labeled records");
    }
    std::vector<double> candidates{-std::numeric_limits<double>::infinity()};
    for (const auto& s : scored) candidates.push_back(s.score);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    double best_t = candidates.front();
    double best_acc = -1.0;
    for (double t : candidates) {
        const double acc = accuracy(scored, t);
        if (acc > best_acc) {
            best_acc = acc;
            best_t = t;
        }
    }
    return best_t;
}

RocResult auroc(std::span<const ScoredLabel> scored) {
    std::size_t pos = 0, neg = 0;
    for (const auto& s : scored) {
        if (!std::isfinite(s.score) && !std::isinf(s.score)) {
            throw DataError("auroc: NaN score");
        }
        (is_illicit(s) ? pos : neg) += 1;
    }
    if (pos == 0 || neg == 0) {
        throw DataError("auroc: undefined with a single class (" + std::to_string(pos) + " illicit, " +
                        std::to_string(neg) + " licit)");
    }
    std::vector<std::size_t> order(scored.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scored[a].score > scored[b].score; });

    RocResult r;
    r.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    // Twice the area times P*N, accumulated exactly in integers.
    unsigned long long twice_area = 0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scored[order[i]].score;
        const std::size_t tp0 = tp, fp0 = fp;
        while (i < order.size() && scored[order[i]].score == s) {
            (is_illicit(scored[order[i]]) ? tp : fp) += 1;
            ++i;
        }
        twice_area += static_cast<unsigned long long>(fp - fp0) * (tp + tp0);
        r.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                            static_cast<double>(tp) / static_cast<double>(pos), s});
    }
    r.auroc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return r;
}

std::string format_report_row(const ReportRow& row) {
    return row.model + ", " + fixed(row.acc_percent, 1) + ", " + fixed(row.auroc, 2);
}

std::string render_report_table(const EvaluationReport& report) {
    std::string out = "Model, ACC, AUROC\n";
    for (const auto& row : report.rows) out += format_report_row(row) + "\n";
    return out;
}

std::string render_report_csv(const EvaluationReport& report) {
    std::string out = "model,acc_percent,auroc\n";
    for (const auto& row : report.rows) {
        out += row.model + "," + fixed(row.acc_percent, 1) + "," + fixed(row.auroc, 4) + "\n";
    }
    return out;
}

std::string render_roc_csv(std::span<const RocPoint> points) {
    std::string out = "fpr,tpr,threshold\n";
    for (const auto& p : points) {
        out += format_double(p.fpr) + "," + format_double(p.tpr) + "," +
               (std::isinf(p.threshold) ? std::string(p.threshold > 0 ? "inf" : "-inf")
                                        : format_double(p.threshold)) +
               "\n";
    }
    return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write '" + path.string() + "'");
    }
    out << text;
}

std::string slug(const std::string& name) {
    std::string s;
    for (char c : name) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!s.empty() && s.back() != '_') {
            s += '_';
        }
    }
    while (!s.empty() && s.back() == '_') s.pop_back();
    return s;
}

}  // namespace

std::vector<std::filesystem::path> write_report(const EvaluationReport& report,
                                                const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    files.push_back(dir / "report.txt");
    write_text(files.back(), render_report_table(report));
    files.push_back(dir / "report.csv");
    write_text(files.back(), render_report_csv(report));
    for (std::size_t i = 0; i < report.roc.size() && i < report.rows.size(); ++i) {
        if (report.roc[i].empty()) continue;
        files.push_back(dir / ("roc_" + std::to_string(i + 1) + "_" + slug(report.rows[i].model) + ".csv"));
        write_text(files.back(), render_roc_csv(report.roc[i]));
    }
    return files;
}

EvaluationReport read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    EvaluationReport report;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1) {
            if (line != "model,acc_percent,auroc") {
                throw DataError(path.string() + ":1: expected header 'model,acc_percent,auroc'");
            }
            continue;
        }
        if (line.empty()) continue;
        const auto c2 = line.rfind(',');
        const auto c1 = c2 == std::string::npos ? c2 : line.rfind(',', c2 - 1);
        if (c1 == std::string::npos) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
        }
        ReportRow row;
        row.model = line.substr(0, c1);
        try {
            row.acc_percent = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
            row.auroc = std::stod(line.substr(c2 + 1));
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric metric");
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace aml
