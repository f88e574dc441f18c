#pragma once

// Candidate object nouns and their unit-normalized word embeddings, queried
// with exact brute-force cosine top-K.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "magnet/error.hpp"
#include "magnet/parallel.hpp"
#include "magnet/probes.hpp"
#include "magnet/safetensors.hpp"
#include "magnet/text_encoder.hpp"

namespace magnet {

struct CandidateIndex {
  std::vector<std::string> names;
  RowMatrix vectors;  // [R, d], unit rows
  std::string encoder_fingerprint;
  std::string build_timestamp;

  std::size_t size() const { return names.size(); }
  int dim() const { return static_cast<int>(vectors.cols()); }
  std::span<const float> row(std::size_t r) const {
    return {vectors.data() + static_cast<std::ptrdiff_t>(r) * vectors.cols(), static_cast<std::size_t>(vectors.cols())};
  }
};

struct IndexBuildReport {
  std::vector<std::string> duplicates;
  std::vector<std::string> skipped;  // "name: reason"
};

struct Neighbor {
  std::string name;
  double cosine = 0.0;
};

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    out.push_back(line.substr(b, line.find_last_not_of(" \t") - b + 1));
  }
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Encodes each candidate alone ("truck") and keeps the normalized hidden state
// of its last word sub-token; the end-of-text row is not used.
inline CandidateIndex build_index(const std::vector<std::string>& candidates, const TextEncoder& encoder,
                                  unsigned threads = 1, IndexBuildReport* report = nullptr) {
  std::vector<std::string> unique;
  std::set<std::string> seen;
  for (const auto& raw : candidates) {
    const std::string c = clean_text(raw);
    if (c.empty()) continue;
    if (!seen.insert(c).second) {
      if (report) report->duplicates.push_back(c);
      continue;
    }
    unique.push_back(c);
  }

  std::vector<Vec> rows(unique.size());
  std::vector<std::string> errors(unique.size());
  parallel_for(unique.size(), threads, [&](std::size_t i) {
    try {
      const auto probe = encoder.encode(unique[i]);
      rows[i] = extract_word_embedding(detail::split_words(unique[i]), probe);
    } catch (const PromptTooLongError& e) {
      errors[i] = e.what();
    } catch (const InputError& e) {
      errors[i] = e.what();
    }
  });

  CandidateIndex index;
  index.encoder_fingerprint = encoder.fingerprint();
  index.build_timestamp = utc_timestamp();
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < unique.size(); ++i) {
    if (errors[i].empty() && norm(rows[i]) == 0.0) errors[i] = "zero embedding";
    if (!errors[i].empty()) {
      if (report) report->skipped.push_back(unique[i] + ": " + errors[i]);
      continue;
    }
    kept.push_back(i);
  }
  if (kept.empty()) throw ValidationError("candidate index would be empty");
  index.vectors.resize(static_cast<Eigen::Index>(kept.size()), encoder.dim());
  for (std::size_t r = 0; r < kept.size(); ++r) {
    const Vec& v = rows[kept[r]];
    const double n = norm(v);
    for (int c = 0; c < encoder.dim(); ++c)
      index.vectors(static_cast<Eigen::Index>(r), c) = static_cast<float>(static_cast<double>(v[static_cast<std::size_t>(c)]) / n);
    index.names.push_back(unique[kept[r]]);
  }
  return index;
}

// The k candidates with the highest cosine to `query`, best first; ties keep
// candidate order. k > R returns all R and sets *truncated.
inline std::vector<Neighbor> top_k(std::span<const float> query, std::size_t k, const CandidateIndex& index,
                                   bool* truncated = nullptr) {
  if (k == 0) throw InputError("k must be at least 1");
  if (static_cast<int>(query.size()) != index.dim())
    throw InputError("query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                     std::to_string(index.dim()));
  const double qn = norm(query);
  if (qn == 0.0) throw InputError("query vector is zero");
  const std::size_t R = index.size();
  std::vector<double> cos(R);
  for (std::size_t r = 0; r < R; ++r) cos[r] = std::clamp(dot(index.row(r), query) / qn, -1.0, 1.0);
  std::vector<std::size_t> order(R);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cos[a] > cos[b]; });
  if (truncated) *truncated = k > R;
  k = std::min(k, R);
  std::vector<Neighbor> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back({index.names[order[i]], cos[order[i]]});
  return out;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& archive) {
  auto p = archive;
  p.replace_extension(".json");
  return p;
}

// Writes `<path>` (tensor "candidate_vectors") and its sidecar `<stem>.json`.
inline void save_index(const CandidateIndex& index, const std::filesystem::path& path) {
  SafeTensorWriter w;
  w.add("candidate_vectors", {static_cast<std::int64_t>(index.size()), index.dim()},
        std::span<const float>(index.vectors.data(), static_cast<std::size_t>(index.vectors.size())));
  w.set_metadata("encoder_fingerprint", index.encoder_fingerprint);
  w.write(path);
  nlohmann::json side = {{"names", index.names},
                         {"encoder_fingerprint", index.encoder_fingerprint},
                         {"build_timestamp", index.build_timestamp}};
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot write " + sidecar_path(path).string());
  out << side.dump(2) << "\n";
}

inline CandidateIndex load_index(const std::filesystem::path& path) {
  SafeTensorReader reader(path);
  Tensor t = reader.read("candidate_vectors");
  if (t.shape.size() != 2) throw FormatError(path.string(), 0, "candidate_vectors must be 2-D");
  const auto side_path = sidecar_path(path);
  nlohmann::json side;
  try {
    std::ifstream in(side_path);
    if (!in) throw IoError("missing index sidecar " + side_path.string());
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side_path.string(), 0, e.what());
  }
  CandidateIndex index;
  index.names = side.at("names").get<std::vector<std::string>>();
  index.encoder_fingerprint = side.value("encoder_fingerprint", "");
  index.build_timestamp = side.value("build_timestamp", "");
  if (static_cast<std::int64_t>(index.names.size()) != t.shape[0])
    throw ValidationError("index sidecar lists " + std::to_string(index.names.size()) + " names for " +
                          std::to_string(t.shape[0]) + " vectors");
  if (index.names.empty()) throw ValidationError("index is empty");
  if (std::set<std::string>(index.names.begin(), index.names.end()).size() != index.names.size())
    throw ValidationError("index names are not unique");
  index.vectors = Eigen::Map<const RowMatrix>(t.data.data(), t.shape[0], t.shape[1]);
  for (std::size_t r = 0; r < index.size(); ++r)
    if (std::abs(norm(index.row(r)) - 1.0) > 1e-5) throw ValidationError("index row '" + index.names[r] + "' is not unit-norm");
  return index;
}

}  // namespace magnet
