#pragma once

// Pixel-level confusion counting and precision/recall/F1 arithmetic.
// Aggregation is micro-averaged: counts are summed across images before the
// ratios are derived. Undefined ratios (zero denominators) are flagged, not
// thrown.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "stenoseg/tensor.hpp"

namespace stenoseg {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
};

inline ConfusionCounts confusion(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& gt) {
    if (pred.size() != gt.size()) throw ShapeError("confusion: mask size mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] > 1 || gt[i] > 1) throw ShapeError("confusion: masks must be binary");
        if (pred[i] && gt[i])
            ++c.tp;
        else if (pred[i] && !gt[i])
            ++c.fp;
        else if (!pred[i] && gt[i])
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

struct Metric {
    double value = 0.0;
    bool defined = false;
};

struct PRF {
    Metric precision, recall, f1;
};

inline PRF precision_recall_f1(const ConfusionCounts& c) {
    PRF m;
    if (c.tp + c.fp > 0) m.precision = {double(c.tp) / double(c.tp + c.fp), true};
    if (c.tp + c.fn > 0) m.recall = {double(c.tp) / double(c.tp + c.fn), true};
    if (m.precision.defined && m.recall.defined && m.precision.value + m.recall.value > 0)
        m.f1 = {2.0 * m.precision.value * m.recall.value /
                    (m.precision.value + m.recall.value),
                true};
    return m;
}

struct MetricsReport {
    std::string model;
    std::size_t params = 0;
    std::vector<ConfusionCounts> per_image;
    ConfusionCounts aggregate_counts;
    PRF aggregate_metrics;
};

// Micro-average: both-empty images contribute zero tp/fp/fn counts, which is
// neutral in the sum.
inline MetricsReport aggregate(const std::vector<ConfusionCounts>& per_image,
                               const std::string& model = "", std::size_t params = 0) {
    if (per_image.empty()) throw ShapeError("aggregate: need at least one image");
    MetricsReport r;
    r.model = model;
    r.params = params;
    r.per_image = per_image;
    for (const auto& c : per_image) r.aggregate_counts += c;
    r.aggregate_metrics = precision_recall_f1(r.aggregate_counts);
    return r;
}

// Foreground where the softmax foreground probability >= tau (inclusive:
// equal-probability pixels stay foreground). logits: [2,H,W] or [B,2,H,W].
template <class T>
inline std::vector<std::uint8_t> thresholded_mask(const Tensor<T>& logits, double tau = 0.5) {
    std::size_t classes, hw, batch;
    if (logits.rank() == 3) {
        classes = logits.extent(0);
        hw = logits.extent(1) * logits.extent(2);
        batch = 1;
    } else if (logits.rank() == 4) {
        batch = logits.extent(0);
        classes = logits.extent(1);
        hw = logits.extent(2) * logits.extent(3);
    } else {
        throw ShapeError("thresholded_mask: expected [2,H,W] or [B,2,H,W]");
    }
    if (classes != 2) throw ShapeError("thresholded_mask: expected 2-class logits");
    std::vector<std::uint8_t> mask(batch * hw);
    const auto& v = logits.values();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
            const double l0 = double(v[b * 2 * hw + i]);
            const double l1 = double(v[b * 2 * hw + hw + i]);
            const double p_fg = 1.0 / (1.0 + std::exp(std::min(40.0, l0 - l1)));
            mask[b * hw + i] = p_fg >= tau ? 1 : 0;
        }
    return mask;
}

inline std::string metrics_csv_header() { return "model,params,precision,recall,f1"; }

inline std::string metrics_csv_row(const MetricsReport& r) {
    auto fmt = [](const Metric& m) {
        if (!m.defined) return std::string("undefined");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", m.value);
        return std::string(buf);
    };
    return r.model + "," + std::to_string(r.params) + "," + fmt(r.aggregate_metrics.precision) +
           "," + fmt(r.aggregate_metrics.recall) + "," + fmt(r.aggregate_metrics.f1);
}

}  // namespace stenoseg
