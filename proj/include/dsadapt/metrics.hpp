#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsadapt/tensor.hpp"

namespace dsadapt {

// Rows are ground truth, columns are prediction; ignore-labeled pixels are
// never counted.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    void accumulate(const Tensor& prediction, const Tensor& label, int ignore_index);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    int num_classes() const { return k_; }
    std::uint64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
    std::uint64_t& at(int truth, int pred) { return counts_[static_cast<std::size_t>(truth) * k_ + pred]; }
    std::uint64_t total() const;

    std::uint64_t tp(int cls) const;
    std::uint64_t fp(int cls) const;
    std::uint64_t fn(int cls) const;

private:
    int k_;
    std::vector<std::uint64_t> counts_;
};

// IoU_i = tp/(tp+fp+fn); F1_i = 2tp/(2tp+fp+fn). Classes absent from both
// truth and prediction yield NaN and are excluded from the means.
double iou(const ConfusionMatrix& cm, int cls);
double f1(const ConfusionMatrix& cm, int cls);

struct EvalReport {
    std::vector<std::string> class_names;
    std::vector<double> iou;  // NaN marks a degenerate class
    std::vector<double> f1;
    double miou = 0.0;
    double mf1 = 0.0;
    std::uint64_t scored_pixels = 0;
};

EvalReport summarize(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

std::string report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace dsadapt
