#include "crackseg/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace crackseg {

ConfusionCounts confusion(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  if (pred.size() != gt.size())
    throw ShapeError("confusion: mask sizes differ, " + std::to_string(pred.size()) + " vs " +
                     std::to_string(gt.size()));
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool y = gt[i] != 0;
    if (p && y)
      ++c.tp;
    else if (p && !y)
      ++c.fp;
    else if (!p && y)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

MetricReport metrics(const ConfusionCounts& counts) {
  MetricReport r;
  r.counts = counts;
  const double tp = static_cast<double>(counts.tp);
  const double fp = static_cast<double>(counts.fp);
  const double fn = static_cast<double>(counts.fn);
  if (counts.tp == 0 && counts.fp == 0 && counts.fn == 0) {
    r.precision = r.recall = r.f1 = r.iou = 1.0;  // both masks empty
    return r;
  }
  r.precision = counts.tp + counts.fp > 0 ? tp / (tp + fp) : 0.0;
  r.recall = counts.tp + counts.fn > 0 ? tp / (tp + fn) : 1.0;  // empty gt, nonempty pred
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                      : 0.0;
  r.iou = tp / (tp + fp + fn);
  return r;
}

std::string report_table(const MetricReport& report) {
  std::ostringstream os;
  os << "metric     value\n";
  os << "---------  --------\n";
  char line[64];
  std::snprintf(line, sizeof line, "precision  %.6f\n", report.precision);
  os << line;
  std::snprintf(line, sizeof line, "recall     %.6f\n", report.recall);
  os << line;
  std::snprintf(line, sizeof line, "f1         %.6f\n", report.f1);
  os << line;
  std::snprintf(line, sizeof line, "iou        %.6f\n", report.iou);
  os << line;
  os << "tp=" << report.counts.tp << " fp=" << report.counts.fp << " fn=" << report.counts.fn
     << " tn=" << report.counts.tn << "\n";
  os << "granularity=" << (report.granularity == Granularity::Micro ? "micro" : "macro")
     << " noise_case=" << report.noise_case << "\n";
  return os.str();
}

void write_report_record(const MetricReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report to " + path);
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return std::string(buf);
  };
  out << "precision = " << fmt(report.precision) << "\n";
  out << "recall = " << fmt(report.recall) << "\n";
  out << "f1 = " << fmt(report.f1) << "\n";
  out << "iou = " << fmt(report.iou) << "\n";
  out << "tp = " << report.counts.tp << "\n";
  out << "fp = " << report.counts.fp << "\n";
  out << "fn = " << report.counts.fn << "\n";
  out << "tn = " << report.counts.tn << "\n";
  out << "granularity = " << (report.granularity == Granularity::Micro ? "micro" : "macro") << "\n";
  out << "noise_case = " << report.noise_case << "\n";
}

std::vector<float> corrupt_sample_image(const SampleRecord& sample, const NoiseSpec& spec) {
  const int64_t pixels = static_cast<int64_t>(sample.height) * sample.width;
  ImageU8 u8{sample.width, sample.height, 3,
             std::vector<uint8_t>(static_cast<std::size_t>(3) * pixels)};
  for (int64_t p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c)
      u8.pixels[p * 3 + c] =
          static_cast<uint8_t>(std::lround(sample.image[c * pixels + p] * 255.0f));
  ImageU8 corrupted = apply_noise(u8, spec);
  std::vector<float> out(sample.image.size());
  for (int64_t p = 0; p < pixels; ++p)
    for (int c = 0; c < 3; ++c)
      out[c * pixels + p] = static_cast<float>(corrupted.pixels[p * 3 + c]) / 255.0f;
  return out;
}

MetricReport evaluate_dataset(const Model& model, const std::vector<SampleRecord>& samples,
                              const std::optional<NoiseSpec>& noise, Granularity granularity) {
  if (samples.empty()) throw ContractError("evaluate_dataset: empty dataset");
  ConfusionCounts total;
  double mp = 0.0, mr = 0.0, mf = 0.0, mi = 0.0;
  for (const SampleRecord& sample : samples) {
    std::vector<float> image =
        noise ? corrupt_sample_image(sample, *noise) : sample.image;
    Tape tape = Tape::inference();
    auto logits = model_forward(tape, model,
                                make_tensor({3, sample.height, sample.width}, std::move(image)));
    auto prob = crack_probability(tape, logits);
    auto pred = binarize_threshold(*prob, 0.5f);
    ConfusionCounts c = confusion(pred, sample.mask);
    total += c;
    if (granularity == Granularity::Macro) {
      MetricReport r = metrics(c);
      mp += r.precision;
      mr += r.recall;
      mf += r.f1;
      mi += r.iou;
    }
  }
  MetricReport report;
  if (granularity == Granularity::Micro) {
    report = metrics(total);
  } else {
    const double n = static_cast<double>(samples.size());
    report.precision = mp / n;
    report.recall = mr / n;
    report.f1 = mf / n;
    report.iou = mi / n;
    report.counts = total;
  }
  report.granularity = granularity;
  report.noise_case = noise ? noise->case_id : 0;
  return report;
}

}  // namespace crackseg
