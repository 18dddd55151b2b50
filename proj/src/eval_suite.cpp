#include "inbiased/eval_suite.hpp"

#include "inbiased/error.hpp"
#include "inbiased/shape_extraction.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>

namespace inbiased {
namespace {

using nlohmann::json;
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pipeline inputs for the checkpoint's inference network.
Tensor<float> inference_inputs(const Checkpoint& ckpt, const Tensor<float>& images) {
  const Model& model = ckpt.inference_model();
  return match_channels(ckpt.inference_pipeline().inference(images), model.spec().input.channels);
}

enum class Axis { rows, cols };

void transform(ComplexMatrix& m, Axis axis, bool inverse, Eigen::FFT<double>& fft) {
  const Index lines = axis == Axis::rows ? m.rows() : m.cols();
  const Index len = axis == Axis::rows ? m.cols() : m.rows();
  std::vector<Complex> in(static_cast<std::size_t>(len));
  std::vector<Complex> out;
  for (Index l = 0; l < lines; ++l) {
    for (Index k = 0; k < len; ++k) in[static_cast<std::size_t>(k)] = axis == Axis::rows ? m(l, k) : m(k, l);
    if (inverse) {
      fft.inv(out, in);
    } else {
      fft.fwd(out, in);
    }
    for (Index k = 0; k < len; ++k) (axis == Axis::rows ? m(l, k) : m(k, l)) = out[static_cast<std::size_t>(k)];
  }
}

/// Signed frequency of DFT index k for length n, matching an fftshift that
/// puts the zero frequency at n/2.
int frequency(int k, int n) { return (k + n / 2) % n - n / 2; }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}

}  // namespace

std::string to_string(Group group) {
  switch (group) {
    case Group::blond_female: return "B-F";
    case Group::nonblond_male: return "NB-M";
    case Group::blond_male: return "B-M";
    case Group::nonblond_female: return "NB-F";
    case Group::none: break;
  }
  return "none";
}

AccuracyTable accuracy_table(const RowMatrix<float>& scores, std::span<const int> labels, std::span<const Group> groups) {
  if (static_cast<Index>(labels.size()) != scores.rows()) throw ShapeError("accuracy: labels do not match predictions");
  if (!groups.empty() && groups.size() != labels.size()) throw ShapeError("accuracy: groups do not match predictions");
  AccuracyTable t;
  t.samples = scores.rows();
  Index correct = 0;
  std::map<std::string, Index> hits;
  for (Index i = 0; i < scores.rows(); ++i) {
    Index arg = 0;
    scores.row(i).maxCoeff(&arg);
    const bool ok = arg == labels[static_cast<std::size_t>(i)];
    correct += ok ? 1 : 0;
    if (!groups.empty()) {
      const auto name = to_string(groups[static_cast<std::size_t>(i)]);
      ++t.groups[name].count;
      hits[name] += ok ? 1 : 0;
    }
  }
  t.accuracy = t.samples == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(t.samples);
  for (auto& [name, g] : t.groups) g.accuracy = static_cast<double>(hits[name]) / static_cast<double>(g.count);
  return t;
}

AccuracyTable evaluate(const Checkpoint& ckpt, const ImageBatch<float>& data, bool by_group) {
  if (data.size() == 0) throw EmptyDatasetError("evaluation on an empty dataset");
  const Model& model = ckpt.inference_model();
  InputPipeline identity;
  const RowMatrix<float> probs = predict(model, identity, inference_inputs(ckpt, data.images));
  return accuracy_table(probs, data.labels, by_group ? std::span<const Group>(data.groups) : std::span<const Group>());
}

AccuracyTable evaluate(const Checkpoint& ckpt, const Dataset& dataset, bool by_group) {
  return evaluate(ckpt, dataset.data, by_group);
}

std::string AccuracyTable::to_csv() const {
  std::ostringstream out;
  out << "group,count,accuracy\n";
  out << "all," << samples << ',' << fmt(accuracy) << '\n';
  for (const auto& [name, g] : groups) out << name << ',' << g.count << ',' << fmt(g.accuracy) << '\n';
  return out.str();
}

json AccuracyTable::to_json() const {
  json j{{"accuracy", accuracy}, {"samples", samples}};
  if (!groups.empty()) {
    json g = json::object();
    for (const auto& [name, v] : groups) g[name] = {{"accuracy", v.accuracy}, {"count", v.count}};
    j["groups"] = g;
  }
  return j;
}

double fourier_cutoff(int side, int severity) {
  if (severity < 0) throw InvalidArgument("severity must be >= 0");
  if (severity == 0) return std::numeric_limits<double>::infinity();
  return side / std::ldexp(1.0, severity + 1);
}

template <typename Scalar>
Tensor<Scalar> lowpass(const Tensor<Scalar>& images, double radius, bool clamp) {
  const Dims d = images.dims;
  if (d.height != d.width) throw InvalidArgument("Fourier filtering needs square images, got " + to_string(d));
  if (!(radius >= 0.0)) throw InvalidArgument("Fourier radius must be >= 0");
  const int n = d.height;
  RowMatrix<double> keep(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double fy = frequency(y, n);
      const double fx = frequency(x, n);
      keep(y, x) = std::sqrt(fy * fy + fx * fx) <= radius ? 1.0 : 0.0;
    }
  }
  Eigen::FFT<double> fft;
  Tensor<Scalar> out(images.batch(), d);
  ComplexMatrix spectrum(n, n);
  for (Index i = 0; i < images.batch(); ++i) {
    for (int c = 0; c < d.channels; ++c) {
      spectrum = images.plane(i, c).template cast<double>().template cast<Complex>();
      transform(spectrum, Axis::rows, false, fft);
      transform(spectrum, Axis::cols, false, fft);
      spectrum = spectrum.cwiseProduct(keep.cast<Complex>());
      transform(spectrum, Axis::cols, true, fft);
      transform(spectrum, Axis::rows, true, fft);
      RowMatrix<double> real = spectrum.real();
      if (clamp) real = real.cwiseMax(0.0).cwiseMin(1.0);
      out.plane(i, c) = real.cast<Scalar>();
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> fourier_lowpass(const Tensor<Scalar>& images, int severity, bool clamp) {
  if (severity < 0 || severity > kMaxSeverity) {
    throw InvalidArgument("Fourier severity must lie in 0.." + std::to_string(kMaxSeverity));
  }
  if (images.dims.height != images.dims.width) {
    throw InvalidArgument("Fourier filtering needs square images, got " + to_string(images.dims));
  }
  if (severity == 0) return images;
  return lowpass(images, fourier_cutoff(images.dims.height, severity), clamp);
}

template <typename Scalar>
ImageBatch<Scalar> fourier_lowpass(const ImageBatch<Scalar>& batch, int severity, bool clamp) {
  return {fourier_lowpass(batch.images, severity, clamp), batch.labels, batch.groups};
}

template Tensor<float> lowpass(const Tensor<float>&, double, bool);
template Tensor<double> lowpass(const Tensor<double>&, double, bool);
template Tensor<float> fourier_lowpass(const Tensor<float>&, int, bool);
template Tensor<double> fourier_lowpass(const Tensor<double>&, int, bool);
template ImageBatch<float> fourier_lowpass(const ImageBatch<float>&, int, bool);
template ImageBatch<double> fourier_lowpass(const ImageBatch<double>&, int, bool);

FourierTable fourier_robustness(const Checkpoint& ckpt, const ImageBatch<float>& data, int max_severity) {
  FourierTable t;
  for (int s = 0; s <= max_severity; ++s) {
    const auto filtered = fourier_lowpass(data, s);
    t.rows.push_back({s, fourier_cutoff(data.images.dims.height, s), evaluate(ckpt, filtered, false).accuracy});
  }
  return t;
}

int FourierTable::inversions(double tolerance) const {
  int count = 0;
  for (std::size_t k = 1; k < rows.size(); ++k) count += rows[k].accuracy > rows[k - 1].accuracy + tolerance ? 1 : 0;
  return count;
}

double FourierTable::max_rise() const {
  double rise = 0.0;
  for (std::size_t k = 1; k < rows.size(); ++k) rise = std::max(rise, rows[k].accuracy - rows[k - 1].accuracy);
  return rise;
}

std::string FourierTable::to_csv() const {
  std::ostringstream out;
  out << "severity,cutoff,accuracy\n";
  for (const auto& r : rows) out << r.severity << ',' << (std::isinf(r.cutoff) ? "full" : fmt(r.cutoff)) << ',' << fmt(r.accuracy) << '\n';
  return out.str();
}

json FourierTable::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"severity", r.severity},
                         {"cutoff", std::isinf(r.cutoff) ? json("full") : json(r.cutoff)},
                         {"accuracy", r.accuracy}});
  }
  return {{"rows", rows_json}};
}

int calibration_bin(double confidence, int bins) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) throw InvalidArgument("confidence must lie in [0,1]");
  int b = static_cast<int>(std::ceil(confidence * bins)) - 1;
  b = std::clamp(b, 0, bins - 1);
  // settle rounding at the edges against the exact boundaries
  while (b > 0 && confidence <= static_cast<double>(b) / bins) --b;
  while (b < bins - 1 && confidence > static_cast<double>(b + 1) / bins) ++b;
  return b;
}

ReliabilityReport reliability(std::span<const double> confidence, std::span<const std::uint8_t> correct, int bins) {
  if (confidence.size() != correct.size()) throw ShapeError("calibration: confidences and outcomes differ in length");
  if (bins < 1) throw InvalidArgument("calibration needs at least one bin");
  ReliabilityReport r;
  r.samples = static_cast<Index>(confidence.size());
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> hit_sum(static_cast<std::size_t>(bins), 0.0);
  for (int b = 0; b < bins; ++b) {
    r.bins.push_back({static_cast<double>(b) / bins, static_cast<double>(b + 1) / bins, 0, 0.0, 0.0});
  }
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const auto b = static_cast<std::size_t>(calibration_bin(confidence[i], bins));
    ++r.bins[b].count;
    conf_sum[b] += confidence[i];
    hit_sum[b] += correct[i] != 0 ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < r.bins.size(); ++b) {
    auto& bin = r.bins[b];
    if (bin.count == 0) continue;
    bin.confidence = conf_sum[b] / static_cast<double>(bin.count);
    bin.accuracy = hit_sum[b] / static_cast<double>(bin.count);
    r.ece += static_cast<double>(bin.count) / static_cast<double>(r.samples) * std::abs(bin.accuracy - bin.confidence);
  }
  return r;
}

ReliabilityReport reliability(const RowMatrix<float>& probabilities, std::span<const int> labels, int bins) {
  if (static_cast<Index>(labels.size()) != probabilities.rows()) throw ShapeError("calibration: labels do not match predictions");
  std::vector<double> conf;
  std::vector<std::uint8_t> hits;
  for (Index i = 0; i < probabilities.rows(); ++i) {
    Index arg = 0;
    const double top = probabilities.row(i).maxCoeff(&arg);
    conf.push_back(std::clamp(top, 0.0, 1.0));
    hits.push_back(arg == labels[static_cast<std::size_t>(i)] ? 1 : 0);
  }
  return reliability(conf, hits, bins);
}

ReliabilityReport calibration(const Checkpoint& ckpt, const ImageBatch<float>& data) {
  if (data.size() == 0) throw EmptyDatasetError("calibration on an empty dataset");
  InputPipeline identity;
  return reliability(predict(ckpt.inference_model(), identity, inference_inputs(ckpt, data.images)), data.labels);
}

std::string ReliabilityReport::to_csv() const {
  std::ostringstream out;
  out << "lower,upper,count,confidence,accuracy\n";
  for (const auto& b : bins) {
    out << fmt(b.lower) << ',' << fmt(b.upper) << ',' << b.count << ',' << fmt(b.confidence) << ',' << fmt(b.accuracy) << '\n';
  }
  return out.str();
}

json ReliabilityReport::to_json() const {
  json b = json::array();
  for (const auto& bin : bins) {
    b.push_back({{"lower", bin.lower}, {"upper", bin.upper}, {"count", bin.count}, {"confidence", bin.confidence},
                 {"accuracy", bin.accuracy}});
  }
  return {{"ece", ece}, {"samples", samples}, {"bins", b}};
}

Tensor<float> match_channels(const Tensor<float>& images, int channels) {
  const int have = images.dims.channels;
  if (have == channels) return images;
  Dims d = images.dims;
  d.channels = channels;
  Tensor<float> out(images.batch(), d);
  if (have == 3 && channels == 1) {
    for (Index i = 0; i < images.batch(); ++i) out.plane(i, 0) = imaging::luminance(images, i);
  } else if (have == 1 && channels == 3) {
    for (Index i = 0; i < images.batch(); ++i) {
      for (int c = 0; c < 3; ++c) out.plane(i, c) = images.plane(i, 0);
    }
  } else {
    throw ShapeError("cannot adapt " + std::to_string(have) + "-channel images to " + std::to_string(channels) + " channels");
  }
  return out;
}

AccuracyTable folder_eval(const Checkpoint& ckpt, const fs::path& folder, int image_size) {
  const Dims& input = ckpt.inference_model().spec().input;
  if (image_size == 0) image_size = input.height;
  const Dataset data = load_image_folder(folder, image_size, &ckpt.classes);
  return evaluate(ckpt, data.data);
}

namespace {

std::string svg_header(int w, int h, const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  return s.str();
}

}  // namespace

std::string reliability_svg(const ReliabilityReport& report, const std::string& title) {
  const int w = 420;
  const int h = 420;
  const double x0 = 50;
  const double y0 = 370;
  const double span = 320;
  std::ostringstream s;
  s << svg_header(w, h, title);
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 + span << "\" y2=\"" << y0 - span
    << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  for (const auto& b : report.bins) {
    if (b.count == 0) continue;
    const double bx = x0 + b.lower * span;
    const double bw = (b.upper - b.lower) * span;
    s << "<rect x=\"" << bx << "\" y=\"" << y0 - b.accuracy * span << "\" width=\"" << bw << "\" height=\""
      << b.accuracy * span << "\" fill=\"steelblue\" stroke=\"black\"/>\n";
    const double gap_top = std::max(b.accuracy, b.confidence);
    const double gap = std::abs(b.accuracy - b.confidence);
    s << "<rect x=\"" << bx << "\" y=\"" << y0 - gap_top * span << "\" width=\"" << bw << "\" height=\"" << gap * span
      << "\" fill=\"salmon\" fill-opacity=\"0.5\"/>\n";
  }
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 + span << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y0 - span << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << x0 + span / 2 << "\" y=\"" << y0 + 30 << "\" text-anchor=\"middle\">confidence</text>\n"
    << "<text x=\"15\" y=\"" << y0 - span / 2 << "\" transform=\"rotate(-90 15 " << y0 - span / 2
    << ")\" text-anchor=\"middle\">accuracy</text>\n"
    << "<text x=\"" << x0 + 10 << "\" y=\"" << y0 - span + 15 << "\">ECE = " << fmt(report.ece * 100.0).substr(0, 5)
    << "%</text>\n</svg>\n";
  return s.str();
}

std::string fourier_svg(const FourierTable& table, const std::string& title) {
  const int w = 420;
  const int h = 320;
  const double x0 = 50;
  const double y0 = 270;
  const double xs = 320;
  const double ys = 220;
  std::ostringstream s;
  s << svg_header(w, h, title);
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 + xs << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y0 - ys << "\" stroke=\"black\"/>\n";
  const double last = std::max<std::size_t>(1, table.rows.size() - 1);
  std::ostringstream points;
  for (std::size_t k = 0; k < table.rows.size(); ++k) {
    const double px = x0 + xs * static_cast<double>(k) / last;
    const double py = y0 - ys * table.rows[k].accuracy;
    points << px << ',' << py << ' ';
    s << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"steelblue\"/>\n"
      << "<text x=\"" << px << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << table.rows[k].severity << "</text>\n";
  }
  s << "<polyline points=\"" << points.str() << "\" fill=\"none\" stroke=\"steelblue\"/>\n"
    << "<text x=\"" << x0 + xs / 2 << "\" y=\"" << y0 + 36 << "\" text-anchor=\"middle\">severity</text>\n"
    << "<text x=\"15\" y=\"" << y0 - ys / 2 << "\" transform=\"rotate(-90 15 " << y0 - ys / 2
    << ")\" text-anchor=\"middle\">accuracy</text>\n</svg>\n";
  return s.str();
}

}  // namespace inbiased
