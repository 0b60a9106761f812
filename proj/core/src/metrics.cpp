#include "belab/metrics.hpp"

#include <filesystem>
#include <numeric>
#include <sstream>

namespace belab {

namespace {

long long gcd_ll(long long a, long long b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
        long long t = a % b;
        a = b;
        b = t;
    }
    return a == 0 ? 1 : a;
}

}  // namespace

Rational::Rational(long long n, long long d) {
    if (d == 0) throw NumericError("rational with zero denominator");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    long long g = gcd_ll(n, d);
    num = n / g;
    den = d / g;
}

Rational Rational::operator+(const Rational& o) const {
    return Rational(num * o.den + o.num * den, den * o.den);
}
Rational Rational::operator-(const Rational& o) const {
    return Rational(num * o.den - o.num * den, den * o.den);
}
Rational Rational::operator*(const Rational& o) const {
    return Rational(num * o.num, den * o.den);
}
Rational Rational::operator/(const Rational& o) const {
    if (o.num == 0) throw NumericError("rational division by zero");
    return Rational(num * o.den, den * o.num);
}
bool Rational::operator<(const Rational& o) const {
    return num * o.den < o.num * den;
}

std::string format_percent(const Rational& r) {
    // Scale to hundredths of a percent and round half up, all in integers.
    long long n = r.num * 10000;
    long long d = r.den;
    long long q = n / d;
    long long rem = n % d;
    if (rem < 0) {
        rem += d;
        q -= 1;
    }
    if (2 * rem >= d) q += 1;
    bool neg = q < 0;
    if (neg) q = -q;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s%lld.%02lld", neg ? "-" : "", q / 100, q % 100);
    return buf;
}

long long ConfusionMatrix::row_total(int actual) const {
    long long s = 0;
    for (int p = 0; p < num_classes(); ++p) s += at(actual, p);
    return s;
}

long long ConfusionMatrix::col_total(int predicted) const {
    long long s = 0;
    for (int a = 0; a < num_classes(); ++a) s += at(a, predicted);
    return s;
}

long long ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0LL);
}

long long ConfusionMatrix::trace() const {
    long long s = 0;
    for (int c = 0; c < num_classes(); ++c) s += at(c, c);
    return s;
}

ConfusionMatrix confusion(std::span<const int> actual, std::span<const int> predicted,
                          std::vector<std::string> class_names) {
    if (actual.size() != predicted.size()) {
        throw DataError("confusion: actual and predicted lengths differ");
    }
    int c = static_cast<int>(class_names.size());
    ConfusionMatrix cm{std::move(class_names), std::vector<long long>(static_cast<std::size_t>(c) * c, 0)};
    for (std::size_t i = 0; i < actual.size(); ++i) {
        if (actual[i] < 0 || actual[i] >= c || predicted[i] < 0 || predicted[i] >= c) {
            throw DataError("confusion: label out of range at sample " + std::to_string(i));
        }
        cm.at(actual[i], predicted[i])++;
    }
    return cm;
}

Rational f1_from(const Rational& recall, const Rational& precision) {
    Rational sum = recall + precision;
    if (sum.is_zero()) return Rational(0, 1);
    return Rational(2, 1) * recall * precision / sum;
}

ClassMetrics metrics(const ConfusionMatrix& cm, bool strict_undefined) {
    if (cm.total() == 0) throw DataError("metrics: empty confusion matrix");
    ClassMetrics out;
    for (int c = 0; c < cm.num_classes(); ++c) {
        long long row = cm.row_total(c);
        long long col = cm.col_total(c);
        long long diag = cm.at(c, c);
        if (strict_undefined && (row == 0 || col == 0)) {
            throw DataError("metrics: undefined recall or precision for class " + cm.class_names[c]);
        }
        Rational recall = row == 0 ? Rational(0, 1) : Rational(diag, row);
        Rational precision = col == 0 ? Rational(0, 1) : Rational(diag, col);
        out.per_class.push_back({recall, precision, f1_from(recall, precision)});
    }
    out.accuracy = Rational(cm.trace(), cm.total());
    return out;
}

std::string render_metrics_csv(const ConfusionMatrix& cm, const ClassMetrics& m) {
    std::ostringstream ss;
    ss << "class,recall,precision,f1\n";
    for (int c = 0; c < cm.num_classes(); ++c) {
        const auto& pc = m.per_class[c];
        ss << cm.class_names[c] << ',' << format_percent(pc.recall) << ','
           << format_percent(pc.precision) << ',' << format_percent(pc.f1) << '\n';
    }
    ss << "accuracy," << format_percent(m.accuracy) << ",,\n";
    return ss.str();
}

std::string render_confusion_csv(const ConfusionMatrix& cm) {
    std::ostringstream ss;
    ss << "actual\\predicted";
    for (int p = 0; p < cm.num_classes(); ++p) ss << ',' << cm.class_names[p];
    ss << '\n';
    for (int a = 0; a < cm.num_classes(); ++a) {
        ss << cm.class_names[a];
        for (int p = 0; p < cm.num_classes(); ++p) ss << ',' << cm.at(a, p);
        ss << '\n';
    }
    return ss.str();
}

std::string render_heatmap_csv(const ConfusionMatrix& cm) {
    std::ostringstream ss;
    ss << "actual,predicted,count,row_percent\n";
    for (int a = 0; a < cm.num_classes(); ++a) {
        long long row = cm.row_total(a);
        for (int p = 0; p < cm.num_classes(); ++p) {
            Rational share = row == 0 ? Rational(0, 1) : Rational(cm.at(a, p), row);
            ss << cm.class_names[a] << ',' << cm.class_names[p] << ',' << cm.at(a, p) << ','
               << format_percent(share) << '\n';
        }
    }
    return ss.str();
}

std::string render_report_text(const ConfusionMatrix& cm, const ClassMetrics& m) {
    std::ostringstream ss;
    ss << "Confusion matrix (rows = actual, columns = predicted)\n";
    std::size_t w = 12;
    for (const auto& n : cm.class_names) w = std::max(w, n.size() + 2);
    auto pad = [&](const std::string& s) {
        std::string p = s;
        while (p.size() < w) p.push_back(' ');
        return p;
    };
    ss << pad("");
    for (const auto& n : cm.class_names) ss << pad(n);
    ss << '\n';
    for (int a = 0; a < cm.num_classes(); ++a) {
        ss << pad(cm.class_names[a]);
        for (int p = 0; p < cm.num_classes(); ++p) ss << pad(std::to_string(cm.at(a, p)));
        ss << '\n';
    }
    ss << '\n' << pad("Metric");
    for (const auto& n : cm.class_names) ss << pad(n);
    ss << '\n';
    auto metric_row = [&](const char* name, auto get) {
        ss << pad(name);
        for (int c = 0; c < cm.num_classes(); ++c) ss << pad(format_percent(get(m.per_class[c])) + "%");
        ss << '\n';
    };
    metric_row("Recall", [](const ClassMetrics::PerClass& p) { return p.recall; });
    metric_row("Precision", [](const ClassMetrics::PerClass& p) { return p.precision; });
    metric_row("F1-score", [](const ClassMetrics::PerClass& p) { return p.f1; });
    ss << '\n' << "Accuracy: " << format_percent(m.accuracy) << "%\n";
    return ss.str();
}

void write_report(const ConfusionMatrix& cm, const ClassMetrics& m,
                  const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create report directory: " + out_dir.string());
    write_text_file((out_dir / "report.txt").string(), render_report_text(cm, m));
    write_text_file((out_dir / "metrics.csv").string(), render_metrics_csv(cm, m));
    write_text_file((out_dir / "confusion.csv").string(), render_confusion_csv(cm));
    write_text_file((out_dir / "heatmap.csv").string(), render_heatmap_csv(cm));
}

}  // namespace belab
