#pragma once

// Text-encoder diagnostics: attribute bias, EOT-padding similarity curves, the
// omega histogram, PCA projection and the embedding-swap constructors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "magnet/binding.hpp"
#include "magnet/error.hpp"
#include "magnet/parallel.hpp"
#include "magnet/probes.hpp"
#include "magnet/text_encoder.hpp"

namespace magnet {

// 6 significant digits, for every human-readable number.
inline std::string fmt6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// ---- attribute bias ----

struct BiasRow {
  std::string attribute;
  double euclidean_word = 0.0;
  double cosine_word = 0.0;
  double euclidean_eot = 0.0;
  double cosine_eot = 0.0;
};

struct BiasReport {
  std::string object;
  std::vector<BiasRow> rows;
  double bias_score_word = 0.0;
  double bias_score_eot = 0.0;
};

inline double spread(const std::vector<BiasRow>& rows, double BiasRow::*col) {
  if (rows.empty()) return 0.0;
  double lo = rows.front().*col, hi = lo;
  for (const auto& r : rows) {
    lo = std::min(lo, r.*col);
    hi = std::max(hi, r.*col);
  }
  return hi - lo;
}

// Compares "{attribute} {object}" against "{object}" at the object's last
// sub-token and at the first end-of-text row. Distances are raw (unnormalized).
inline BiasReport attribute_bias(const std::string& object, const std::vector<std::string>& attributes,
                                 const TextEncoder& encoder, unsigned threads = 1) {
  const auto obj = detail::split_words(object);
  if (obj.empty()) throw InputError("attribute_bias needs an object");
  BiasReport report;
  report.object = ConceptPair::join(obj);
  const EmbeddingSequence base = encoder.encode(probe_text({}, obj));
  const Vec base_word = extract_word_embedding(obj, base);
  const Vec base_eot = extract_eot(base);
  report.rows.resize(attributes.size());
  parallel_for(attributes.size(), threads, [&](std::size_t i) {
    const auto attr = detail::split_words(attributes[i]);
    const EmbeddingSequence ctx = encoder.encode(probe_text(attr, obj));
    const Vec w = extract_word_embedding(obj, ctx);
    const Vec e = extract_eot(ctx);
    report.rows[i] = {ConceptPair::join(attr), euclidean(w, base_word), cosine(w, base_word), euclidean(e, base_eot),
                      cosine(e, base_eot)};
  });
  report.bias_score_word = spread(report.rows, &BiasRow::cosine_word);
  report.bias_score_eot = spread(report.rows, &BiasRow::cosine_eot);
  return report;
}

inline void write_csv(std::ostream& out, const BiasReport& r) {
  out << "object,attribute,euclidean_word,cosine_word,euclidean_eot,cosine_eot\n";
  out.precision(17);
  for (const auto& row : r.rows)
    out << r.object << "," << row.attribute << "," << row.euclidean_word << "," << row.cosine_word << ","
        << row.euclidean_eot << "," << row.cosine_eot << "\n";
}

inline nlohmann::json to_json(const BiasReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"attribute", row.attribute},
                    {"euclidean_word", row.euclidean_word},
                    {"cosine_word", row.cosine_word},
                    {"euclidean_eot", row.euclidean_eot},
                    {"cosine_eot", row.cosine_eot}});
  return {{"object", r.object}, {"rows", rows}, {"bias_score_word", r.bias_score_word}, {"bias_score_eot", r.bias_score_eot}};
}

// ---- EOT-padding curve ----

struct PaddingCurve {
  std::string prompt;
  int n_word_tokens = 0;
  std::vector<double> values;  // values[l-1] = cos(EOT, pad_l)

  double min() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }
};

inline PaddingCurve padding_curve(const EmbeddingSequence& e) {
  PaddingCurve c;
  c.prompt = e.source.cleaned_text;
  c.n_word_tokens = e.source.n_word_tokens;
  for (int r = e.eot_index + 1; r < kContextLength; ++r) c.values.push_back(cosine(e.row(e.eot_index), e.row(r)));
  return c;
}

inline PaddingCurve padding_curve(const std::string& prompt, const TextEncoder& encoder) {
  PaddingCurve c = padding_curve(encoder.encode(prompt));
  c.prompt = prompt;
  return c;
}

// Long format: one row per (prompt, l).
inline void write_csv(std::ostream& out, const std::vector<PaddingCurve>& curves) {
  out << "prompt,l,cosine\n";
  out.precision(17);
  for (const auto& c : curves)
    for (std::size_t l = 0; l < c.values.size(); ++l) out << '"' << c.prompt << "\"," << l + 1 << "," << c.values[l] << "\n";
}

inline nlohmann::json to_json(const PaddingCurve& c) {
  return {{"prompt", c.prompt}, {"n_word_tokens", c.n_word_tokens}, {"values", c.values}, {"min", c.min()}};
}

// ---- omega histogram ----

inline constexpr int kOmegaBins = 64;

struct OmegaSample {
  std::string object;
  std::string attribute;
  double omega = 0.0;
};

struct OmegaHistogram {
  std::array<double, kOmegaBins + 1> bin_edges{};
  std::array<long long, kOmegaBins> counts{};
  long long sample_count = 0;
  long long clamped = 0;  // samples outside [0,1] folded into the edge bins
  double mode_bin_center = 0.0;
  std::vector<OmegaSample> samples;

  double fraction_in(double lo, double hi) const {
    if (samples.empty()) return 0.0;
    long long n = 0;
    for (const auto& s : samples) n += (s.omega >= lo && s.omega <= hi) ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(samples.size());
  }
};

inline int omega_bin(double omega) {
  const int b = static_cast<int>(std::floor(omega * kOmegaBins));
  return std::clamp(b, 0, kOmegaBins - 1);
}

inline OmegaHistogram histogram_of(std::vector<OmegaSample> samples) {
  OmegaHistogram h;
  for (int b = 0; b <= kOmegaBins; ++b) h.bin_edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / kOmegaBins;
  for (const auto& s : samples) {
    if (s.omega < 0.0 || s.omega > 1.0) ++h.clamped;
    ++h.counts[static_cast<std::size_t>(omega_bin(s.omega))];
  }
  h.sample_count = static_cast<long long>(samples.size());
  const auto mode = std::max_element(h.counts.begin(), h.counts.end()) - h.counts.begin();
  h.mode_bin_center = (static_cast<double>(mode) + 0.5) / kOmegaBins;
  h.samples = std::move(samples);
  return h;
}

inline OmegaHistogram omega_histogram(const std::vector<std::string>& objects, const std::vector<std::string>& attributes,
                                      const TextEncoder& encoder, unsigned threads = 1) {
  if (objects.empty() || attributes.empty()) throw InputError("omega_histogram needs non-empty object and attribute lists");
  const std::size_t n = objects.size() * attributes.size();
  std::vector<OmegaSample> samples(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const auto& o = objects[i / attributes.size()];
    const auto& a = attributes[i % attributes.size()];
    const auto prompt = probe_text(detail::split_words(a), detail::split_words(o));
    samples[i] = {o, a, eot_pad_cosine(encoder.encode(prompt))};
  });
  return histogram_of(std::move(samples));
}

inline void write_csv(std::ostream& out, const OmegaHistogram& h) {
  out << "bin,lower,upper,center,count\n";
  out.precision(17);
  for (int b = 0; b < kOmegaBins; ++b)
    out << b << "," << h.bin_edges[static_cast<std::size_t>(b)] << "," << h.bin_edges[static_cast<std::size_t>(b) + 1]
        << "," << (b + 0.5) / kOmegaBins << "," << h.counts[static_cast<std::size_t>(b)] << "\n";
}

inline void write_samples_csv(std::ostream& out, const OmegaHistogram& h) {
  out << "object,attribute,omega\n";
  out.precision(17);
  for (const auto& s : h.samples) out << s.object << "," << s.attribute << "," << s.omega << "\n";
}

inline nlohmann::json to_json(const OmegaHistogram& h) {
  return {{"bin_edges", h.bin_edges},         {"counts", h.counts},
          {"sample_count", h.sample_count},   {"clamped", h.clamped},
          {"mode_bin_center", h.mode_bin_center}, {"fraction_in_0.5_0.9", h.fraction_in(0.5, 0.9)}};
}

// ---- PCA ----

struct PcaModel {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;   // [d, k], columns are unit eigenvectors
  Eigen::VectorXd eigenvalues;  // all d, descending
};

// Covariance (n - 1 normalization) eigendecomposition of the fit rows. Each
// kept eigenvector is flipped so its largest-magnitude entry is positive.
inline PcaModel pca_fit(const Eigen::MatrixXd& fit, int components = 2) {
  const auto n = fit.rows();
  if (components < 1) throw InputError("components must be at least 1");
  if (n < components) throw ValidationError("PCA needs at least as many fit vectors as components");
  if (fit.cols() < components) throw ValidationError("PCA cannot keep more components than dimensions");
  PcaModel m;
  m.mean = fit.colwise().mean();
  const Eigen::MatrixXd centered = fit.rowwise() - m.mean;
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw ValidationError("covariance eigendecomposition failed");
  // Eigen returns ascending order
  m.eigenvalues = solver.eigenvalues().reverse();
  const auto d = fit.cols();
  m.components.resize(d, components);
  for (int k = 0; k < components; ++k) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    m.components.col(k) = v;
  }
  return m;
}

inline Eigen::MatrixXd pca_transform(const PcaModel& m, const Eigen::MatrixXd& x) {
  if (x.cols() != m.mean.cols()) throw InputError("PCA transform dimension does not match the fit");
  return (x.rowwise() - m.mean) * m.components;
}

inline Eigen::MatrixXd pca_project(const Eigen::MatrixXd& fit, const Eigen::MatrixXd& transform, int components = 2) {
  return pca_transform(pca_fit(fit, components), transform);
}

// ---- embedding swap cases ----

enum class SwapCase { k1, k2, k3, k4, kA, kB, kC };

inline SwapCase swap_case_from_string(const std::string& s) {
  if (s == "1") return SwapCase::k1;
  if (s == "2") return SwapCase::k2;
  if (s == "3") return SwapCase::k3;
  if (s == "4") return SwapCase::k4;
  if (s == "A" || s == "a") return SwapCase::kA;
  if (s == "B" || s == "b") return SwapCase::kB;
  if (s == "C" || s == "c") return SwapCase::kC;
  throw InputError("unknown swap case '" + s + "' (expected 1, 2, 3, 4, A, B or C)");
}

inline std::string to_string(SwapCase c) {
  static const char* names[] = {"1", "2", "3", "4", "A", "B", "C"};
  return names[static_cast<int>(c)];
}

inline const std::array<SwapCase, 7> kAllSwapCases = {SwapCase::k1, SwapCase::k2, SwapCase::k3, SwapCase::k4,
                                                      SwapCase::kA, SwapCase::kB, SwapCase::kC};

struct SwapCaseSpec {
  SwapCase case_id = SwapCase::k1;
  std::string attribute;
  std::string object;
};

// Groups over the EOT/padding rows, counted from the EOT (offset 0 = EOT,
// offset l = pad_l).
struct RowGroup {
  char name;
  int first_offset;
  int last_offset;
};
inline constexpr std::array<RowGroup, 3> kSwapGroups = {{{'X', 0, 23}, {'Y', 24, 49}, {'Z', 50, 73}}};

// Group left contextualized (taken from the attributed encoding) by A/B/C.
inline char kept_group(SwapCase c) {
  switch (c) {
    case SwapCase::kA: return 'Z';
    case SwapCase::kB: return 'Y';
    case SwapCase::kC: return 'X';
    default: return 0;
  }
}

struct RowSource {
  bool from_attributed = true;  // false = row comes from the bare-object encoding
  int row = 0;
};

struct SwapCaseResult {
  EmbeddingSequence embedding;
  EmbeddingSequence attributed;  // encode("{attribute} {object}")
  EmbeddingSequence bare;        // encode("{object}")
  std::vector<RowSource> sources;  // per output row
};

inline SwapCaseResult build_swap_case(const SwapCaseSpec& spec, const TextEncoder& encoder) {
  const auto attr = detail::split_words(spec.attribute);
  const auto obj = detail::split_words(spec.object);
  if (attr.empty() || obj.empty()) throw InputError("swap case needs an attribute and an object");
  SwapCaseResult r;
  r.attributed = encoder.encode(probe_text(attr, obj));
  r.bare = encoder.encode(probe_text({}, obj));
  r.sources.resize(kContextLength);
  for (int i = 0; i < kContextLength; ++i) r.sources[static_cast<std::size_t>(i)] = {true, i};

  if (spec.case_id != SwapCase::k1) {
    const auto& ts = r.attributed.source;
    if (ts.word_spans.size() != 2 || ts.n_word_tokens != 2)
      throw UnsupportedCaseError("swap case " + to_string(spec.case_id) +
                                 " needs a single-token attribute and a single-token object");
    const int word_row = object_row(r.attributed.source, obj);
    const int bare_word_row = object_row(r.bare.source, obj);
    const int eot_a = r.attributed.eot_index;
    const int eot_b = r.bare.eot_index;
    auto replace_offsets = [&](int first, int last) {
      for (int t = first; t <= last && eot_a + t < kContextLength; ++t)
        r.sources[static_cast<std::size_t>(eot_a + t)] = {false, eot_b + t};
    };
    const bool word = spec.case_id == SwapCase::k2 || spec.case_id == SwapCase::k4;
    if (word) r.sources[static_cast<std::size_t>(word_row)] = {false, bare_word_row};
    if (spec.case_id == SwapCase::k3 || spec.case_id == SwapCase::k4) replace_offsets(0, kContextLength - 1 - eot_a);
    if (const char keep = kept_group(spec.case_id)) {
      for (const auto& g : kSwapGroups)
        if (g.name != keep) replace_offsets(g.first_offset, g.last_offset);
    }
  }

  r.embedding = r.attributed;
  for (int i = 0; i < kContextLength; ++i) {
    const auto& s = r.sources[static_cast<std::size_t>(i)];
    if (!s.from_attributed) r.embedding.hidden.row(i) = r.bare.hidden.row(s.row);
  }
  return r;
}

inline nlohmann::json to_json(const SwapCaseSpec& spec, const SwapCaseResult& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.sources) rows.push_back({{"source", s.from_attributed ? "attributed" : "bare"}, {"row", s.row}});
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : kSwapGroups)
    groups.push_back({{"group", std::string(1, g.name)},
                      {"first_row", r.attributed.eot_index + g.first_offset},
                      {"last_row", std::min(r.attributed.eot_index + g.last_offset, kContextLength - 1)},
                      {"kept_contextualized", kept_group(spec.case_id) == g.name}});
  return {{"case", to_string(spec.case_id)},
          {"attribute", spec.attribute},
          {"object", spec.object},
          {"attributed_prompt", r.attributed.source.cleaned_text},
          {"bare_prompt", r.bare.source.cleaned_text},
          {"groups", groups},
          {"row_sources", rows}};
}

}  // namespace magnet
