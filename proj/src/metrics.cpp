#include "dsadapt/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace dsadapt {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
    if (num_classes < 1) throw std::invalid_argument("ConfusionMatrix: need >= 1 class");
    counts_.assign(static_cast<std::size_t>(k_) * k_, 0);
}

void ConfusionMatrix::accumulate(const Tensor& prediction, const Tensor& label, int ignore_index) {
    check_same_shape(prediction, label, "ConfusionMatrix::accumulate");
    for (std::size_t i = 0; i < prediction.numel(); ++i) {
        int truth = static_cast<int>(label[i]);
        if (truth == ignore_index) continue;
        int pred = static_cast<int>(prediction[i]);
        if (truth < 0 || truth >= k_)
            throw std::invalid_argument("accumulate: label id " + std::to_string(truth) +
                                        " out of range");
        if (pred < 0 || pred >= k_)
            throw std::invalid_argument("accumulate: prediction id " + std::to_string(pred) +
                                        " out of range");
        ++at(truth, pred);
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw std::invalid_argument("ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::tp(int cls) const { return at(cls, cls); }

std::uint64_t ConfusionMatrix::fp(int cls) const {
    std::uint64_t s = 0;
    for (int t = 0; t < k_; ++t)
        if (t != cls) s += at(t, cls);
    return s;
}

std::uint64_t ConfusionMatrix::fn(int cls) const {
    std::uint64_t s = 0;
    for (int p = 0; p < k_; ++p)
        if (p != cls) s += at(cls, p);
    return s;
}

double iou(const ConfusionMatrix& cm, int cls) {
    std::uint64_t tp = cm.tp(cls), denom = tp + cm.fp(cls) + cm.fn(cls);
    if (denom == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(tp) / static_cast<double>(denom);
}

double f1(const ConfusionMatrix& cm, int cls) {
    std::uint64_t tp = cm.tp(cls), denom = 2 * tp + cm.fp(cls) + cm.fn(cls);
    if (denom == 0) return std::numeric_limits<double>::quiet_NaN();
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

EvalReport summarize(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    if (static_cast<int>(class_names.size()) != cm.num_classes())
        throw std::invalid_argument("summarize: class name count mismatch");
    EvalReport r;
    r.class_names = class_names;
    r.scored_pixels = cm.total();
    double iou_sum = 0.0, f1_sum = 0.0;
    int valid = 0;
    for (int c = 0; c < cm.num_classes(); ++c) {
        double i = iou(cm, c), f = f1(cm, c);
        r.iou.push_back(i);
        r.f1.push_back(f);
        if (!std::isnan(i)) {
            iou_sum += i;
            f1_sum += f;
            ++valid;
        }
    }
    r.miou = valid > 0 ? iou_sum / valid : std::numeric_limits<double>::quiet_NaN();
    r.mf1 = valid > 0 ? f1_sum / valid : std::numeric_limits<double>::quiet_NaN();
    return r;
}

std::string report_to_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["classes"] = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < report.class_names.size(); ++c) {
        nlohmann::ordered_json cls;
        cls["name"] = report.class_names[c];
        if (std::isnan(report.iou[c])) {
            cls["iou"] = nullptr;
            cls["f1"] = nullptr;
        } else {
            cls["iou"] = report.iou[c];
            cls["f1"] = report.f1[c];
        }
        j["classes"].push_back(std::move(cls));
    }
    j["miou"] = report.miou;
    j["mf1"] = report.mf1;
    j["scored_pixels"] = report.scored_pixels;
    return j.dump(2);
}

std::string report_to_table(const EvalReport& report) {
    std::string out;
    char line[128];
    std::snprintf(line, sizeof(line), "%-20s %8s %8s\n", "class", "IoU", "F1");
    out += line;
    out += std::string(38, '-') + "\n";
    for (std::size_t c = 0; c < report.class_names.size(); ++c) {
        if (std::isnan(report.iou[c]))
            std::snprintf(line, sizeof(line), "%-20s %8s %8s\n", report.class_names[c].c_str(),
                          "n/a", "n/a");
        else
            std::snprintf(line, sizeof(line), "%-20s %8.4f %8.4f\n", report.class_names[c].c_str(),
                          report.iou[c], report.f1[c]);
        out += line;
    }
    out += std::string(38, '-') + "\n";
    std::snprintf(line, sizeof(line), "%-20s %8.4f %8.4f\n", "mean", report.miou, report.mf1);
    out += line;
    return out;
}

}  // namespace dsadapt
