#include "railpdm/analysis.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "railpdm/errors.hpp"

namespace railpdm::analysis {

using nlohmann::json;

std::array<Eigen::Index, kBands + 1> band_edges(Eigen::Index n_bins) {
  // Bins 1..n_bins-1 split into kBands contiguous, near-equal groups.
  const Eigen::Index usable = std::max<Eigen::Index>(n_bins - 1, 0);
  std::array<Eigen::Index, kBands + 1> edges{};
  for (int b = 0; b <= kBands; ++b) edges[b] = 1 + usable * b / kBands;
  return edges;
}

FeatureVector extract_features(const dsp::SpectralFrame& frame, ledger::FrameRef ref) {
  FeatureVector fv = features_from_magnitudes(
      dsp::dequantize(frame), static_cast<double>(frame.sample_rate) / frame.window_len);
  fv.frame_ref = std::move(ref);
  return fv;
}

// ---------------------------------------------------------------------------

namespace {

std::pair<FeatureArray, FeatureArray> moments(std::span<const FeatureArray> rows) {
  FeatureArray mean = FeatureArray::Zero();
  for (const auto& r : rows) mean += r;
  mean /= static_cast<double>(rows.size());
  FeatureArray var = FeatureArray::Zero();
  for (const auto& r : rows) var += (r - mean).array().square().matrix();
  var /= static_cast<double>(rows.size());
  return {mean, var.cwiseSqrt()};
}

constexpr const char* kClassifierInput = "log1p_bands";

json to_array(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

FeatureArray feature_array(const json& j, const char* name) {
  const auto& a = j.at(name);
  if (!a.is_array() || a.size() != kFeatures) {
    fail(ErrorKind::validation, std::string("model field ") + name + " must have 10 entries");
  }
  FeatureArray v;
  for (int i = 0; i < kFeatures; ++i) v[i] = a[static_cast<std::size_t>(i)].get<double>();
  return v;
}

std::string digest_of(json j) {
  j.erase("fingerprint");
  return to_hex(sha256(as_bytes(j.dump())));
}

void check_fingerprint(const json& j) {
  if (!j.contains("fingerprint") || !j["fingerprint"].is_string()) {
    fail(ErrorKind::verification, "model file has no fingerprint");
  }
  if (digest_of(j) != j["fingerprint"].get<std::string>()) {
    fail(ErrorKind::verification, "model fingerprint does not match its content");
  }
}

}  // namespace

BaselineModel fit_baseline(std::span<const FeatureVector> frames, std::string sensor_id) {
  if (frames.size() < 2) {
    fail(ErrorKind::insufficient_data, "baseline needs at least 2 frames, got " +
                                           std::to_string(frames.size()));
  }
  BaselineModel b;
  b.sensor_id = std::move(sensor_id);
  std::vector<FeatureArray> rows;
  rows.reserve(frames.size());
  for (const auto& f : frames) rows.push_back(f.values());
  std::tie(b.mean, b.stddev) = moments(rows);
  b.n_frames = frames.size();
  return b;
}

BaselineModel fit_baseline(std::span<const dsp::SpectralFrame> frames) {
  std::vector<FeatureVector> fv;
  fv.reserve(frames.size());
  for (const auto& f : frames) fv.push_back(extract_features(f));
  return fit_baseline(fv, frames.empty() ? std::string{} : frames.front().sensor_id);
}

double anomaly_score(const FeatureVector& features, const BaselineModel& baseline) {
  const FeatureArray z = (features.values() - baseline.mean).cwiseAbs().cwiseQuotient(
      baseline.stddev.cwiseMax(kStdEpsilon));
  return z.maxCoeff();
}

// ---------------------------------------------------------------------------

Eigen::VectorXd smoothed_envelope(const Eigen::VectorXf& samples, Eigen::Index window) {
  window = std::max<Eigen::Index>(window, 1);
  const Eigen::Index n = samples.size();
  Eigen::VectorXd out(n);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += std::abs(static_cast<double>(samples[i]));
    if (i >= window) acc -= std::abs(static_cast<double>(samples[i - window]));
    out[i] = acc / static_cast<double>(window);
  }
  return out;
}

namespace {

/// 5th percentile of the envelope: the level of the quiet pre- and post-roll.
double envelope_floor(const Eigen::VectorXd& env) {
  std::vector<double> v(env.data(), env.data() + env.size());
  const auto nth = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 20);
  std::nth_element(v.begin(), nth, v.end());
  return *nth;
}

}  // namespace

DirectionEstimate detect_direction(const simkit::TrackPassEvent& event) {
  const auto& a = event.subunit_a_waveform;
  const auto& b = event.subunit_b_waveform;
  if (a.samples.size() == 0 || b.samples.size() == 0) {
    fail(ErrorKind::parameter, "track pass waveforms must be non-empty");
  }
  if (a.sample_rate != b.sample_rate || a.sample_rate == 0) {
    fail(ErrorKind::parameter, "track pass waveforms must share a positive sample rate");
  }
  if (!(event.subunit_spacing > 0.0)) fail(ErrorKind::parameter, "subunit_spacing must be positive");
  const double fs = a.sample_rate;
  const auto window = static_cast<Eigen::Index>(std::llround(fs / 100.0));
  Eigen::VectorXd ea = smoothed_envelope(a.samples, window);
  Eigen::VectorXd eb = smoothed_envelope(b.samples, window);
  // Drop the quiet-floor level so idle stretches do not correlate with each other.
  ea.array() -= envelope_floor(ea);
  eb.array() -= envelope_floor(eb);

  const Eigen::VectorXd r = dsp::cross_correlate(ea, eb);
  Eigen::Index best = 0;
  r.maxCoeff(&best);
  const Eigen::Index lag = best - (ea.size() - 1);
  if (lag == 0) {
    fail(ErrorKind::indeterminate_direction, "subunit envelopes align within one sample");
  }
  DirectionEstimate est;
  est.delta_t = static_cast<double>(lag) / fs;
  est.direction = lag > 0 ? simkit::Direction::a_to_b : simkit::Direction::b_to_a;
  est.speed_estimate = event.subunit_spacing / std::abs(est.delta_t);
  return est;
}

// ---------------------------------------------------------------------------

json to_json(const PrePostReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json("inf"); };
  json ratios = json::array();
  for (int b = 0; b < kBands; ++b) ratios.push_back(num(r.band_ratio[b]));
  return {{"band_ratio", ratios}, {"delta_score", num(r.delta_score)}};
}

PrePostReport compare_pre_post(std::span<const FeatureVector> pre, std::span<const FeatureVector> post) {
  if (pre.empty() || post.empty()) {
    fail(ErrorKind::insufficient_data, "pre/post comparison needs frames on both sides");
  }
  auto mean_bands = [](std::span<const FeatureVector> set) {
    BandVector acc = BandVector::Zero();
    for (const auto& f : set) acc += f.band_energy;
    return BandVector(acc / static_cast<double>(set.size()));
  };
  const BandVector e_pre = mean_bands(pre);
  const BandVector e_post = mean_bands(post);
  PrePostReport rep;
  for (int b = 0; b < kBands; ++b) {
    if (e_pre[b] == 0.0) {
      rep.band_ratio[b] = e_post[b] == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    } else {
      rep.band_ratio[b] = e_post[b] / e_pre[b];
    }
    rep.delta_score = std::max(rep.delta_score, std::abs(std::log2(rep.band_ratio[b])));
  }
  return rep;
}

PrePostReport compare_pre_post(std::span<const dsp::SpectralFrame> pre,
                               std::span<const dsp::SpectralFrame> post) {
  auto features = [](std::span<const dsp::SpectralFrame> frames) {
    std::vector<FeatureVector> out;
    for (const auto& f : frames) out.push_back(extract_features(f));
    return out;
  };
  const auto a = features(pre);
  const auto b = features(post);
  return compare_pre_post(std::span<const FeatureVector>(a), std::span<const FeatureVector>(b));
}

// ---------------------------------------------------------------------------

ClassifierModel train_classifier(std::span<const LabeledSample> samples,
                                 std::span<const std::string> required_classes) {
  std::map<std::string, std::vector<const LabeledSample*>> groups;
  for (const auto& s : samples) groups[s.label].push_back(&s);
  for (const auto& c : required_classes) groups.try_emplace(c);

  std::string missing;
  for (const auto& [label, members] : groups) {
    if (members.size() < 2) missing += (missing.empty() ? "" : ", ") + label;
  }
  if (!missing.empty()) {
    fail(ErrorKind::insufficient_data, "need >= 2 samples for classes: " + missing);
  }
  if (groups.size() < 2) {
    fail(ErrorKind::insufficient_data,
         "need >= 2 classes, have " + std::to_string(groups.size()));
  }

  std::vector<FeatureArray> all;
  all.reserve(samples.size());
  for (const auto& s : samples) all.push_back(classifier_input(s.features));
  ClassifierModel m;
  std::tie(m.mean, m.stddev) = moments(all);
  m.stddev = m.stddev.cwiseMax(kStdEpsilon);

  m.centroids.resize(static_cast<Eigen::Index>(groups.size()), kFeatures);
  Eigen::Index row = 0;
  for (const auto& [label, members] : groups) {
    m.classes.push_back(label);
    FeatureArray acc = FeatureArray::Zero();
    for (const auto* s : members) acc += m.standardize(classifier_input(s->features));
    m.centroids.row(row++) = (acc / static_cast<double>(members.size())).transpose();
  }
  return m;
}

Prediction predict(const ClassifierModel& model, const FeatureVector& features) {
  const Eigen::RowVectorXd z = model.standardize(classifier_input(features)).transpose();
  Prediction p;
  p.distances = (model.centroids.rowwise() - z).rowwise().norm();
  const double nearest = p.distances.minCoeff();
  // exp(-d_c) / Σ exp(-d), shifted by the minimum for stability.
  p.probabilities = (-(p.distances.array() - nearest)).exp().matrix();
  p.probabilities /= p.probabilities.sum();
  Eigen::Index best = 0;
  p.distances.minCoeff(&best);
  p.predicted_class = model.classes[static_cast<std::size_t>(best)];
  p.confidence = p.probabilities[best];
  return p;
}

// ---------------------------------------------------------------------------

namespace {

json classifier_body(const ClassifierModel& m) {
  json centroids = json::array();
  for (Eigen::Index r = 0; r < m.centroids.rows(); ++r) {
    centroids.push_back(to_array(m.centroids.row(r).transpose()));
  }
  return {{"type", "classifier"},
          {"input", kClassifierInput},
          {"classes", m.classes},
          {"centroids", centroids},
          {"mean", to_array(m.mean)},
          {"stddev", to_array(m.stddev)}};
}

json baseline_body(const BaselineModel& b) {
  return {{"type", "baseline"},
          {"sensor_id", b.sensor_id},
          {"mean", to_array(b.mean)},
          {"stddev", to_array(b.stddev)},
          {"n_frames", b.n_frames}};
}

}  // namespace

std::string fingerprint(const ClassifierModel& model) { return digest_of(classifier_body(model)); }
std::string fingerprint(const BaselineModel& model) { return digest_of(baseline_body(model)); }

json to_json(const ClassifierModel& model) {
  json j = classifier_body(model);
  j["fingerprint"] = digest_of(j);
  return j;
}

json to_json(const BaselineModel& model) {
  json j = baseline_body(model);
  j["fingerprint"] = digest_of(j);
  return j;
}

ClassifierModel classifier_from_json(const json& j) {
  try {
    if (j.value("type", "") != "classifier") fail(ErrorKind::validation, "not a classifier model");
    check_fingerprint(j);
    if (j.value("input", "") != kClassifierInput) {
      fail(ErrorKind::validation, std::string("classifier input must be ") + kClassifierInput);
    }
    ClassifierModel m;
    m.classes = j.at("classes").get<std::vector<std::string>>();
    const auto& rows = j.at("centroids");
    if (rows.size() != m.classes.size()) fail(ErrorKind::validation, "one centroid per class required");
    m.centroids.resize(static_cast<Eigen::Index>(rows.size()), kFeatures);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != kFeatures) fail(ErrorKind::validation, "centroid must have 10 entries");
      for (int c = 0; c < kFeatures; ++c) {
        m.centroids(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)].get<double>();
      }
    }
    m.mean = feature_array(j, "mean");
    m.stddev = feature_array(j, "stddev");
    if ((m.stddev.array() <= 0.0).any()) fail(ErrorKind::validation, "stddev entries must be positive");
    return m;
  } catch (const json::exception& e) {
    fail(ErrorKind::validation, std::string("malformed classifier model: ") + e.what());
  }
}

BaselineModel baseline_from_json(const json& j) {
  try {
    if (j.value("type", "") != "baseline") fail(ErrorKind::validation, "not a baseline model");
    check_fingerprint(j);
    BaselineModel b;
    b.sensor_id = j.at("sensor_id").get<std::string>();
    b.mean = feature_array(j, "mean");
    b.stddev = feature_array(j, "stddev");
    b.n_frames = j.at("n_frames").get<std::uint64_t>();
    return b;
  } catch (const json::exception& e) {
    fail(ErrorKind::validation, std::string("malformed baseline model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

json to_json(const Recommendation& r) {
  json ev = json::array();
  for (const auto& ref : r.evidence) ev.push_back(ledger::to_json(ref));
  return {{"rec_id", r.rec_id},
          {"subject", r.subject},
          {"predicted_issue", r.predicted_issue},
          {"confidence", r.confidence},
          {"evidence", ev},
          {"created_at", r.created_at},
          {"model_fingerprint", r.model_fingerprint}};
}

Recommendation recommendation_from_json(const json& j) {
  Recommendation r;
  r.rec_id = j.at("rec_id").get<std::string>();
  r.subject = j.at("subject").get<std::string>();
  r.predicted_issue = j.at("predicted_issue").get<std::string>();
  r.confidence = j.at("confidence").get<double>();
  for (const auto& e : j.at("evidence")) r.evidence.push_back(ledger::ref_from_json(e));
  r.created_at = j.at("created_at").get<std::int64_t>();
  r.model_fingerprint = j.at("model_fingerprint").get<std::string>();
  return r;
}

std::string recommendations_key(const std::string& subject) { return "recommendations/" + subject; }

std::optional<std::pair<RecommendationCandidate, std::vector<ledger::FrameRef>>> aggregate_predictions(
    const ClassifierModel& model, std::span<const FeatureVector> frames,
    const std::string& normal_class) {
  std::map<std::string, std::pair<double, std::vector<ledger::FrameRef>>> by_class;
  for (const auto& f : frames) {
    const Prediction p = predict(model, f);
    if (p.predicted_class == normal_class) continue;
    auto& slot = by_class[p.predicted_class];
    slot.first += p.confidence;
    slot.second.push_back(f.frame_ref);
  }
  if (by_class.empty()) return std::nullopt;
  auto best = by_class.begin();
  for (auto it = by_class.begin(); it != by_class.end(); ++it) {
    if (it->second.second.size() > best->second.second.size()) best = it;
  }
  RecommendationCandidate c;
  c.predicted_issue = best->first;
  c.confidence = best->second.first / static_cast<double>(best->second.second.size());
  auto evidence = std::move(best->second.second);
  std::sort(evidence.begin(), evidence.end());
  return std::make_pair(c, std::move(evidence));
}

Recommendation publish_recommendation(const RecommendationCandidate& candidate,
                                      const std::vector<ledger::FrameRef>& evidence,
                                      const std::string& subject,
                                      const std::string& model_fingerprint, ledger::Ledger& store,
                                      const Principal& author) {
  if (subject.empty()) throw ValidationError("subject", "must be non-empty");
  if (!(candidate.confidence >= 0.0 && candidate.confidence <= 1.0)) {
    throw ValidationError("confidence", "must lie in [0, 1]");
  }
  if (evidence.empty()) fail(ErrorKind::reference, "a recommendation needs at least one evidence frame");
  for (const auto& ref : evidence) {
    if (!store.get_version(ref.key, ref.version)) {
      fail(ErrorKind::reference,
           "evidence " + ref.key + "@" + std::to_string(ref.version) + " is not in the ledger");
    }
  }
  Recommendation rec;
  store.append_built(recommendations_key(subject), author.id, author.mac_key,
                     [&](std::uint64_t version) {
                       rec.rec_id = subject + "-r" + std::to_string(version);
                       rec.subject = subject;
                       rec.predicted_issue = candidate.predicted_issue;
                       rec.confidence = candidate.confidence;
                       rec.evidence = evidence;
                       rec.created_at = ledger::now_micros();
                       rec.model_fingerprint = model_fingerprint;
                       const std::string s = to_json(rec).dump();
                       return Bytes(s.begin(), s.end());
                     });
  return rec;
}

std::vector<Recommendation> recommendations(const ledger::Ledger& store, const std::string& subject) {
  std::vector<std::pair<std::uint64_t, Recommendation>> all;
  const auto keys = subject.empty() ? store.keys("recommendations/")
                                    : std::vector<std::string>{recommendations_key(subject)};
  for (const auto& key : keys) {
    for (const auto& rec : store.history(key)) {
      all.emplace_back(rec.seq, recommendation_from_json(json::parse(rec.payload.begin(), rec.payload.end())));
    }
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Recommendation> out;
  out.reserve(all.size());
  for (auto& [_, r] : all) out.push_back(std::move(r));
  return out;
}

}  // namespace railpdm::analysis
