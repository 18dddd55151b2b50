#pragma once

#include "inbiased/data_factory.hpp"
#include "inbiased/trainer.hpp"

#include <json.hpp>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace inbiased {

std::string to_string(Group group);

struct GroupAccuracy {
  double accuracy = 0.0;
  Index count = 0;
};

struct AccuracyTable {
  double accuracy = 0.0;
  Index samples = 0;
  std::map<std::string, GroupAccuracy> groups;  // empty for ungrouped data

  [[nodiscard]] std::string to_csv() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

/// Accuracy of class-probability (or logit) rows against labels, split by
/// group when `groups` is non-empty.
AccuracyTable accuracy_table(const RowMatrix<float>& scores, std::span<const int> labels,
                             std::span<const Group> groups = {});

/// Accuracy of the checkpoint's inference network.
AccuracyTable evaluate(const Checkpoint& ckpt, const ImageBatch<float>& data, bool by_group = true);
AccuracyTable evaluate(const Checkpoint& ckpt, const Dataset& dataset, bool by_group = true);

/// Keep radius of the radial low-pass filter at a severity: 0 keeps the
/// whole spectrum, r >= 1 keeps frequencies within side / 2^(r+1).
double fourier_cutoff(int side, int severity);
inline constexpr int kMaxSeverity = 4;

/// Per channel: 2-D DFT, zero every coefficient farther than `radius` from
/// the centred zero frequency, inverse DFT, real part, optionally clamp to
/// [0,1]. Images must be square.
template <typename Scalar>
Tensor<Scalar> lowpass(const Tensor<Scalar>& images, double radius, bool clamp = true);

/// Severity 0 returns the input unchanged.
template <typename Scalar>
Tensor<Scalar> fourier_lowpass(const Tensor<Scalar>& images, int severity, bool clamp = true);

template <typename Scalar>
ImageBatch<Scalar> fourier_lowpass(const ImageBatch<Scalar>& batch, int severity, bool clamp = true);

struct FourierRow {
  int severity = 0;
  double cutoff = 0.0;
  double accuracy = 0.0;
};

struct FourierTable {
  std::vector<FourierRow> rows;

  [[nodiscard]] std::string to_csv() const;
  [[nodiscard]] nlohmann::json to_json() const;
  /// Severity steps at which accuracy rises by more than `tolerance`.
  [[nodiscard]] int inversions(double tolerance = 0.0) const;
  /// Largest accuracy rise between consecutive severities (0 if none).
  [[nodiscard]] double max_rise() const;
};

FourierTable fourier_robustness(const Checkpoint& ckpt, const ImageBatch<float>& data, int max_severity = kMaxSeverity);

inline constexpr int kCalibrationBins = 15;

struct ReliabilityBin {
  double lower = 0.0;  // exclusive, except for the first bin
  double upper = 0.0;  // inclusive
  Index count = 0;
  double confidence = 0.0;  // mean confidence in the bin
  double accuracy = 0.0;
};

struct ReliabilityReport {
  std::vector<ReliabilityBin> bins;
  double ece = 0.0;
  Index samples = 0;

  [[nodiscard]] std::string to_csv() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

/// Bin index of a confidence: bins are (k/B, (k+1)/B], with 0 in the first.
int calibration_bin(double confidence, int bins = kCalibrationBins);

ReliabilityReport reliability(std::span<const double> confidence, std::span<const std::uint8_t> correct,
                              int bins = kCalibrationBins);
/// Confidence = top softmax probability of each row.
ReliabilityReport reliability(const RowMatrix<float>& probabilities, std::span<const int> labels,
                              int bins = kCalibrationBins);

ReliabilityReport calibration(const Checkpoint& ckpt, const ImageBatch<float>& data);

/// Accuracy on an image folder whose class directories are resolved against
/// the checkpoint's class list.
AccuracyTable folder_eval(const Checkpoint& ckpt, const fs::path& folder, int image_size = 0);

/// Adapts the channel count of raw images to what a network expects
/// (RGB -> luminance, or gray replicated to three channels).
Tensor<float> match_channels(const Tensor<float>& images, int channels);

/// Static plots.
std::string reliability_svg(const ReliabilityReport& report, const std::string& title);
std::string fourier_svg(const FourierTable& table, const std::string& title);

}  // namespace inbiased
