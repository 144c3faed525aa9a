#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "railpdm/access.hpp"
#include "railpdm/dsp.hpp"
#include "railpdm/ledger.hpp"
#include "railpdm/simkit.hpp"

/// Spectral features, baseline scoring, direction of travel, pre/post
/// comparison, nearest-centroid classification and recommendations.
namespace railpdm::analysis {

inline constexpr int kBands = 8;
inline constexpr int kFeatures = kBands + 2;
inline constexpr double kRolloffFraction = 0.95;
inline constexpr double kStdEpsilon = 1e-9;
inline constexpr double kDefaultAlarmThreshold = 4.0;

using BandVector = Eigen::Matrix<double, kBands, 1>;
using FeatureArray = Eigen::Matrix<double, kFeatures, 1>;

struct FeatureVector {
  ledger::FrameRef frame_ref;
  BandVector band_energy = BandVector::Zero();
  double spectral_centroid = 0.0;    // Hz
  double spectral_rolloff_95 = 0.0;  // Hz
  std::array<int, 3> peak_bins{-1, -1, -1};

  /// 8 band energies, centroid, rolloff.
  FeatureArray values() const {
    FeatureArray v;
    v << band_energy, spectral_centroid, spectral_rolloff_95;
    return v;
  }
};

/// First bin of each band over bins 1..N/2 (DC excluded); entry kBands is
/// one past the last bin.
std::array<Eigen::Index, kBands + 1> band_edges(Eigen::Index n_bins);

/// Features of a one-sided magnitude spectrum with bin spacing `bin_hz`.
template <typename Derived>
FeatureVector features_from_magnitudes(const Eigen::MatrixBase<Derived>& mag, double bin_hz) {
  FeatureVector fv;
  const Eigen::Index n = mag.size();
  const Eigen::VectorXd m = mag.template cast<double>();
  const auto edges = band_edges(n);
  for (int b = 0; b < kBands; ++b) {
    const Eigen::Index len = edges[b + 1] - edges[b];
    fv.band_energy[b] = len > 0 ? m.segment(edges[b], len).squaredNorm() / static_cast<double>(len) : 0.0;
  }
  const double total_mag = m.sum();
  if (total_mag > 0.0) {
    const Eigen::VectorXd freq = Eigen::VectorXd::LinSpaced(n, 0.0, static_cast<double>(n - 1)) * bin_hz;
    fv.spectral_centroid = freq.dot(m) / total_mag;
    const double total_energy = m.squaredNorm();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      acc += m[k] * m[k];
      if (acc >= kRolloffFraction * total_energy) {
        fv.spectral_rolloff_95 = static_cast<double>(k) * bin_hz;
        break;
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) order[static_cast<std::size_t>(k)] = k;
  const auto top = std::min<std::size_t>(3, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](Eigen::Index a, Eigen::Index b) { return m[a] > m[b] || (m[a] == m[b] && a < b); });
  for (std::size_t i = 0; i < top; ++i) fv.peak_bins[i] = static_cast<int>(order[i]);
  return fv;
}

FeatureVector extract_features(const dsp::SpectralFrame& frame, ledger::FrameRef ref = {});

// Baseline / anomaly scoring ------------------------------------------------

struct BaselineModel {
  std::string sensor_id;
  FeatureArray mean = FeatureArray::Zero();
  FeatureArray stddev = FeatureArray::Zero();  // population
  std::uint64_t n_frames = 0;
};

BaselineModel fit_baseline(std::span<const FeatureVector> frames, std::string sensor_id = {});
BaselineModel fit_baseline(std::span<const dsp::SpectralFrame> frames);

/// max_i |x_i - mean_i| / max(std_i, 1e-9)
double anomaly_score(const FeatureVector& features, const BaselineModel& baseline);
inline double anomaly_score(const dsp::SpectralFrame& frame, const BaselineModel& baseline) {
  return anomaly_score(extract_features(frame), baseline);
}
inline bool is_alarm(double score, double threshold = kDefaultAlarmThreshold) {
  return score > threshold;
}

// Direction of travel ------------------------------------------------------

struct DirectionEstimate {
  simkit::Direction direction = simkit::Direction::a_to_b;
  double delta_t = 0.0;  // s, positive when subunit B fires after A
  double speed_estimate = 0.0;
};

/// Rectify, then moving average over `window` samples.
Eigen::VectorXd smoothed_envelope(const Eigen::VectorXf& samples, Eigen::Index window);

/// Cross-correlates the smoothed (1/100 s) envelopes of both subunits, each
/// less its quiet floor (5th percentile).
/// Throws ErrorKind::indeterminate_direction when the lag is under one sample.
DirectionEstimate detect_direction(const simkit::TrackPassEvent& event);

// Pre/post maintenance ------------------------------------------------------

struct PrePostReport {
  BandVector band_ratio = BandVector::Ones();  // mean post energy / mean pre energy
  double delta_score = 0.0;                     // max |log2 ratio|
};

/// Non-finite ratios (energy appearing in an empty band) serialize as "inf".
nlohmann::json to_json(const PrePostReport& r);

PrePostReport compare_pre_post(std::span<const dsp::SpectralFrame> pre,
                               std::span<const dsp::SpectralFrame> post);
PrePostReport compare_pre_post(std::span<const FeatureVector> pre, std::span<const FeatureVector> post);

// Classification ------------------------------------------------------------

struct LabeledSample {
  FeatureVector features;
  std::string label;  // event kind
};

/// Classifier input: band energies on a log1p scale (they span decades),
/// centroid and rolloff as-is.
inline FeatureArray classifier_input(const FeatureVector& f) {
  FeatureArray v = f.values();
  v.head<kBands>() = v.head<kBands>().array().log1p().matrix();
  return v;
}

struct ClassifierModel {
  std::vector<std::string> classes;
  Eigen::MatrixXd centroids;  // one row per class, standardized space
  FeatureArray mean = FeatureArray::Zero();
  FeatureArray stddev = FeatureArray::Ones();

  FeatureArray standardize(const FeatureArray& x) const {
    return (x - mean).cwiseQuotient(stddev);
  }
};

struct Prediction {
  std::string predicted_class;
  double confidence = 0.0;
  Eigen::VectorXd distances;
  Eigen::VectorXd probabilities;
};

/// Needs at least two classes with at least two samples each; otherwise
/// throws ErrorKind::insufficient_data listing what is missing.
ClassifierModel train_classifier(std::span<const LabeledSample> samples,
                                 std::span<const std::string> required_classes = {});
Prediction predict(const ClassifierModel& model, const FeatureVector& features);

// Model files ---------------------------------------------------------------

nlohmann::json to_json(const ClassifierModel& model);
nlohmann::json to_json(const BaselineModel& model);
/// Both loaders reject files whose fingerprint does not match their content
/// (ErrorKind::verification).
ClassifierModel classifier_from_json(const nlohmann::json& j);
BaselineModel baseline_from_json(const nlohmann::json& j);
/// Hex SHA-256 of the canonical model JSON without the fingerprint field.
std::string fingerprint(const ClassifierModel& model);
std::string fingerprint(const BaselineModel& model);

// Recommendations ------------------------------------------------------------

struct RecommendationCandidate {
  std::string predicted_issue;
  double confidence = 0.0;
};

struct Recommendation {
  std::string rec_id;
  std::string subject;
  std::string predicted_issue;
  double confidence = 0.0;
  std::vector<ledger::FrameRef> evidence;
  std::int64_t created_at = 0;
  std::string model_fingerprint;
};

nlohmann::json to_json(const Recommendation& r);
Recommendation recommendation_from_json(const nlohmann::json& j);
std::string recommendations_key(const std::string& subject);

/// Per-frame predictions aggregated for one subject: the most frequent
/// non-`normal_class` prediction becomes the issue, its frames the evidence
/// and their mean confidence the confidence. Empty when every frame is normal.
std::optional<std::pair<RecommendationCandidate, std::vector<ledger::FrameRef>>> aggregate_predictions(
    const ClassifierModel& model, std::span<const FeatureVector> frames,
    const std::string& normal_class = "normal");

/// Appends under `recommendations/<subject>`. Throws ErrorKind::reference when
/// the evidence is empty or names a frame missing from the ledger.
Recommendation publish_recommendation(const RecommendationCandidate& candidate,
                                      const std::vector<ledger::FrameRef>& evidence,
                                      const std::string& subject,
                                      const std::string& model_fingerprint, ledger::Ledger& store,
                                      const Principal& author);

/// Every published recommendation for `subject` (all subjects when empty),
/// newest first.
std::vector<Recommendation> recommendations(const ledger::Ledger& store,
                                            const std::string& subject = {});

}  // namespace railpdm::analysis
