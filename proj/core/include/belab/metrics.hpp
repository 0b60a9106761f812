#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "belab/common.hpp"

namespace belab {

// Exact rational on int64. Metric counts are small, so normalized
// numerators/denominators stay far from overflow.
struct Rational {
    long long num = 0;
    long long den = 1;

    Rational() = default;
    Rational(long long n, long long d);
    static Rational from_int(long long n) { return Rational(n, 1); }

    Rational operator+(const Rational& o) const;
    Rational operator-(const Rational& o) const;
    Rational operator*(const Rational& o) const;
    Rational operator/(const Rational& o) const;
    bool operator==(const Rational& o) const { return num == o.num && den == o.den; }
    bool operator<(const Rational& o) const;
    bool operator<=(const Rational& o) const { return *this < o || *this == o; }

    bool is_zero() const { return num == 0; }
    double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// Percentage string with two decimals, round-half-up on the exact value.
// Rational(7770, 10000) -> "77.70".
std::string format_percent(const Rational& r);

// Rows are actual classes, columns predicted classes.
struct ConfusionMatrix {
    std::vector<std::string> class_names;
    std::vector<long long> counts;  // C*C row-major

    int num_classes() const { return static_cast<int>(class_names.size()); }
    long long at(int actual, int predicted) const {
        return counts[static_cast<std::size_t>(actual) * class_names.size() + predicted];
    }
    long long& at(int actual, int predicted) {
        return counts[static_cast<std::size_t>(actual) * class_names.size() + predicted];
    }
    long long row_total(int actual) const;
    long long col_total(int predicted) const;
    long long total() const;
    long long trace() const;
};

ConfusionMatrix confusion(std::span<const int> actual, std::span<const int> predicted,
                          std::vector<std::string> class_names);

struct ClassMetrics {
    struct PerClass {
        Rational recall;
        Rational precision;
        Rational f1;
    };
    std::vector<PerClass> per_class;
    Rational accuracy;
};

// 0/0 recall and precision are reported as 0 by default; strict mode raises
// instead for the never-predicted / never-present class.
ClassMetrics metrics(const ConfusionMatrix& cm, bool strict_undefined = false);

// f1 = 2pr/(p+r), 0 when p+r == 0.
Rational f1_from(const Rational& recall, const Rational& precision);

// Writes report.txt, metrics.csv, confusion.csv and heatmap.csv (row-
// normalized percentages) under out_dir. Formatting is deterministic.
void write_report(const ConfusionMatrix& cm, const ClassMetrics& m,
                  const std::filesystem::path& out_dir);

std::string render_report_text(const ConfusionMatrix& cm, const ClassMetrics& m);
std::string render_metrics_csv(const ConfusionMatrix& cm, const ClassMetrics& m);
std::string render_confusion_csv(const ConfusionMatrix& cm);
std::string render_heatmap_csv(const ConfusionMatrix& cm);

}  // namespace belab
