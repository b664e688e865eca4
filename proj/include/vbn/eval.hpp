#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "train.hpp"

namespace vbn {

// rows = true class, columns = predicted class, order (Normal, Covid, Pneumonia)
struct ConfusionMatrix {
    std::array<std::array<size_t, kNumClasses>, kNumClasses> counts{};

    size_t total() const {
        size_t t = 0;
        for (const auto& row : counts)
            for (size_t v : row) t += v;
        return t;
    }

    size_t row_sum(size_t i) const {
        size_t t = 0;
        for (size_t v : counts[i]) t += v;
        return t;
    }

    size_t col_sum(size_t j) const {
        size_t t = 0;
        for (const auto& row : counts) t += row[j];
        return t;
    }

    size_t trace() const {
        size_t t = 0;
        for (size_t i = 0; i < kNumClasses; ++i) t += counts[i][i];
        return t;
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& true_labels, const std::vector<int>& pred_labels) {
    if (true_labels.size() != pred_labels.size()) {
        throw DomainError("label sequences differ in length: " + std::to_string(true_labels.size()) + " vs " +
                          std::to_string(pred_labels.size()));
    }
    ConfusionMatrix cm;
    for (size_t k = 0; k < true_labels.size(); ++k) {
        const int t = true_labels[k], p = pred_labels[k];
        if (t < 0 || t >= static_cast<int>(kNumClasses) || p < 0 || p >= static_cast<int>(kNumClasses)) {
            throw DomainError("label out of range at position " + std::to_string(k));
        }
        ++cm.counts[static_cast<size_t>(t)][static_cast<size_t>(p)];
    }
    return cm;
}

// Per-class precision/recall/F1 plus accuracy. A zero denominator yields an
// empty optional (an undefined marker), never a silent zero.
struct MetricsReport {
    double accuracy = 0.0;
    std::array<std::optional<double>, kNumClasses> precision;
    std::array<std::optional<double>, kNumClasses> recall;
    std::array<std::optional<double>, kNumClasses> f1;
    std::array<size_t, kNumClasses> support{};
};

inline MetricsReport class_metrics(const ConfusionMatrix& cm) {
    const size_t total = cm.total();
    if (total == 0) throw DomainError("metrics of an empty confusion matrix");
    MetricsReport r;
    r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
    for (size_t c = 0; c < kNumClasses; ++c) {
        const size_t tp = cm.counts[c][c];
        const size_t predicted = cm.col_sum(c);
        const size_t actual = cm.row_sum(c);
        r.support[c] = actual;
        if (predicted > 0) r.precision[c] = static_cast<double>(tp) / static_cast<double>(predicted);
        if (actual > 0) r.recall[c] = static_cast<double>(tp) / static_cast<double>(actual);
        if (r.precision[c] && r.recall[c]) {
            const double p = *r.precision[c], q = *r.recall[c];
            if (p + q > 0.0) r.f1[c] = 2.0 * p * q / (p + q);
        }
    }
    return r;
}

// half-up rounding to two decimals, the presentation used by the report
inline double round2(double v) { return std::floor(v * 100.0 + 0.5) / 100.0; }

inline std::string metrics_table(const ConfusionMatrix& cm, const MetricsReport& r) {
    char buf[256];
    std::string out;
    out += "confusion matrix (rows = true, cols = predicted)\n";
    out += "            Normal   Covid  Pneumonia\n";
    for (size_t i = 0; i < kNumClasses; ++i) {
        std::snprintf(buf, sizeof(buf), "%-10s %7zu %7zu %10zu\n", class_name(static_cast<ClassLabel>(i)),
                      cm.counts[i][0], cm.counts[i][1], cm.counts[i][2]);
        out += buf;
    }
    out += "\nClass       Precision  Recall  F1-Score  Support\n";
    auto cell = [](const std::optional<double>& v) -> std::string {
        if (!v) return "    n/a";
        char b[32];
        std::snprintf(b, sizeof(b), "%7.2f", round2(*v));
        return b;
    };
    for (size_t c = 0; c < kNumClasses; ++c) {
        out += std::string(class_name(static_cast<ClassLabel>(c)));
        out.append(12 - std::string(class_name(static_cast<ClassLabel>(c))).size(), ' ');
        out += cell(r.precision[c]) + " " + cell(r.recall[c]) + "  " + cell(r.f1[c]);
        std::snprintf(buf, sizeof(buf), "  %7zu\n", r.support[c]);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "\naccuracy %.4f over %zu samples\n", r.accuracy, cm.total());
    out += buf;
    return out;
}

inline std::string metrics_tsv(const ConfusionMatrix& cm, const MetricsReport& r) {
    std::string out = "class\tprecision\trecall\tf1\tsupport\n";
    auto cell = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string("n/a"); };
    for (size_t c = 0; c < kNumClasses; ++c) {
        out += std::string(class_name(static_cast<ClassLabel>(c))) + "\t" + cell(r.precision[c]) + "\t" +
               cell(r.recall[c]) + "\t" + cell(r.f1[c]) + "\t" + std::to_string(r.support[c]) + "\n";
    }
    out += "accuracy\t" + fmt_double(r.accuracy) + "\n";
    out += "confusion";
    for (size_t i = 0; i < kNumClasses; ++i)
        for (size_t j = 0; j < kNumClasses; ++j) out += "\t" + std::to_string(cm.counts[i][j]);
    out += "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Model evaluation over a manifest split: inference mode, argmax predictions
// with ties resolved to the lowest class index.
// ---------------------------------------------------------------------------

struct EvalResult {
    ConfusionMatrix cm;
    MetricsReport metrics;
    double mean_loss = 0.0;
};

inline EvalResult evaluate(Model& model, const DatasetManifest& manifest, Split split, const LoaderOptions& opts,
                           size_t batch_size = 32, size_t limit = 0) {
    std::vector<size_t> indices = manifest.split_indices(split);
    if (limit > 0 && indices.size() > limit) indices.resize(limit);
    if (indices.empty()) throw DomainError("no samples in the requested split");

    std::vector<int> truth, preds;
    double loss_acc = 0.0;
    for (size_t start = 0; start < indices.size(); start += batch_size) {
        const size_t end = std::min(indices.size(), start + batch_size);
        std::vector<size_t> chunk(indices.begin() + static_cast<ptrdiff_t>(start),
                                  indices.begin() + static_cast<ptrdiff_t>(end));
        auto [x, y] = load_batch(manifest, chunk, opts);
        Tensor probs = model_forward(model, x, Mode::Infer);
        LossResult loss = cross_entropy(probs, y);
        loss_acc += loss.loss * static_cast<double>(chunk.size());
        for (size_t i = 0; i < chunk.size(); ++i) {
            truth.push_back(y[i]);
            preds.push_back(static_cast<int>(argmax_row(probs, i)));
        }
    }
    EvalResult r;
    r.cm = confusion_matrix(truth, preds);
    r.metrics = class_metrics(r.cm);
    r.mean_loss = loss_acc / static_cast<double>(indices.size());
    return r;
}

}  // namespace vbn
