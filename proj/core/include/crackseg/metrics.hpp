#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crackseg/dataset.hpp"
#include "crackseg/model.hpp"
#include "crackseg/noise.hpp"

namespace crackseg {

struct ConfusionCounts {
  uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  uint64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion(std::span<const uint8_t> pred, std::span<const uint8_t> gt);

enum class Granularity { Micro, Macro };

struct MetricReport {
  double precision = 0.0, recall = 0.0, f1 = 0.0, iou = 0.0;
  ConfusionCounts counts;
  Granularity granularity = Granularity::Micro;
  int noise_case = 0;  // 0 = clean
};

/// Pr/Re/F1/IoU from pixel counts. Degenerate cases: both masks empty gives
/// all four 1.0; empty ground truth with predictions gives Pr=0, Re=1, F1=0,
/// IoU=0.
MetricReport metrics(const ConfusionCounts& counts);

std::string report_table(const MetricReport& report);
/// key = value record with exactly the fields precision, recall, f1, iou,
/// tp, fp, fn, tn, granularity, noise_case.
void write_report_record(const MetricReport& report, const std::string& path);

/// Runs the model over every sample (optionally corrupting the image, never
/// the mask), binarizes at 0.5 and accumulates counts (micro) or per-image
/// metrics (macro).
MetricReport evaluate_dataset(const Model& model, const std::vector<SampleRecord>& samples,
                              const std::optional<NoiseSpec>& noise, Granularity granularity);

/// Applies a corruption to the quantized [0,1] float image of a sample.
std::vector<float> corrupt_sample_image(const SampleRecord& sample, const NoiseSpec& spec);

}  // namespace crackseg
