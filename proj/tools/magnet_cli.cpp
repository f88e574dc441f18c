// magnet: command-line front end over the header library.
//
//   magnet encode --prompt "a red chair" --weights W --out DIR
//   magnet bind --prompt "a red car and a yellow cat" --index DIR/index.safetensors --out DIR
//   magnet <subcommand> --help
//
// Every subcommand writes under --out and prints one summary line. Errors go
// to stderr (one JSON object per line with --json) and exit nonzero.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "magnet/magnet.hpp"

#ifndef MAGNET_DATA_DIR
#define MAGNET_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace magnet;

namespace {

const fs::path kData = MAGNET_DATA_DIR;

struct Common {
  std::string weights;
  std::string vocab = (kData / "clip" / "vocab.json").string();
  std::string merges = (kData / "clip" / "merges.txt").string();
  std::string lexicon = (kData / "lexicon").string();
  unsigned threads = 1;
  std::optional<int> heads;
  std::optional<std::string> activation;
  bool json_errors = false;
};

struct Hint : Error {
  Hint(std::string kind, const std::string& msg, std::string hint) : Error(std::move(kind), msg), hint(std::move(hint)) {}
  std::string hint;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw InputError(what + " path is empty");
  if (!fs::is_regular_file(path)) throw IoError(what + " not found: " + path);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path prepare_out(const std::string& dir) {
  if (dir.empty()) throw InputError("--out is required");
  fs::create_directories(dir);
  return dir;
}

TextEncoder open_encoder(const Common& c) {
  if (c.weights.empty())
    throw Hint("input_error", "no weights given", "pass --weights PATH or set MAGNET_WEIGHTS");
  require_file(c.weights, "weights archive");
  require_file(c.vocab, "vocabulary");
  require_file(c.merges, "merges file");
  LoadOptions opt;
  opt.n_heads = c.heads;
  if (c.activation) opt.activation = activation_from_string(*c.activation);
  return TextEncoder::open(c.weights, c.vocab, c.merges, opt);
}

std::vector<std::string> list_file(const std::string& path, const std::string& what) {
  require_file(path, what);
  auto lines = read_lines(path);
  if (lines.empty()) throw InputError(what + " is empty: " + path);
  return lines;
}

json sequence_json(const EmbeddingSequence& e, const std::string& prompt, const std::string& fingerprint) {
  std::vector<TokenId> ids(e.source.ids.begin(), e.source.ids.end());
  return {{"prompt", prompt},
          {"cleaned_text", e.source.cleaned_text},
          {"token_ids", ids},
          {"n_word_tokens", e.source.n_word_tokens},
          {"eot_index", e.eot_index},
          {"shape", {1, kContextLength, e.dim()}},
          {"encoder_fingerprint", fingerprint}};
}

struct IndexSource {
  std::string index;
  std::string candidates = (kData / "lists" / "objects614.txt").string();
};

void add_index_options(CLI::App* sub, IndexSource& s) {
  auto* idx = sub->add_option("--index", s.index, "Prebuilt candidate index (.safetensors from index-build)");
  sub->add_option("--candidates", s.candidates, "Candidate noun list, embedded on the fly when --index is absent")
      ->capture_default_str()
      ->excludes(idx);
}

CandidateIndex obtain_index(const IndexSource& s, const TextEncoder& enc, unsigned threads) {
  if (!s.index.empty()) {
    require_file(s.index, "candidate index");
    CandidateIndex idx = load_index(s.index);
    if (idx.dim() != enc.dim())
      throw ValidationError("index dimension " + std::to_string(idx.dim()) + " does not match encoder dimension " +
                            std::to_string(enc.dim()));
    if (!idx.encoder_fingerprint.empty() && idx.encoder_fingerprint != enc.fingerprint())
      std::cerr << "magnet: warning: index was built with a different encoder\n";
    return idx;
  }
  return build_index(list_file(s.candidates, "candidate list"), enc, threads);
}

// ---- subcommands ----

int run_encode(const Common& c, const std::string& prompt, const std::string& out_dir) {
  const TextEncoder enc = open_encoder(c);
  const fs::path out = prepare_out(out_dir);
  const EmbeddingSequence e = enc.encode(prompt);
  write_embedding_archive(out / "embedding.safetensors", e, nullptr, sequence_json(e, prompt, enc.fingerprint()));
  std::cout << "encoded \"" << prompt << "\": " << e.source.n_word_tokens << " word tokens, eot at " << e.eot_index
            << ", [1, 77, " << e.dim() << "] -> " << (out / "embedding.safetensors").string() << "\n";
  return 0;
}

struct BindArgs {
  std::string prompt;
  std::string concepts;
  std::string semantic;
  std::string patch_mode = "last_subtoken";
  std::string aggregation = "mean";
  std::optional<double> alpha;
  std::optional<double> beta;
  double lambda = 0.6;
  int k = 5;
  IndexSource source;
  std::string out;
};

int run_bind(const Common& c, const BindArgs& a) {
  MagnetConfig cfg;
  cfg.lambda = a.lambda;
  cfg.k_neighbors = a.k;
  cfg.patch_mode = patch_mode_from_string(a.patch_mode);
  cfg.negative_aggregation = aggregation_from_string(a.aggregation);
  cfg.alpha_override = a.alpha;
  cfg.beta_override = a.beta;
  cfg.threads = c.threads;
  cfg.validate();
  if (!a.semantic.empty()) {
    require_file(a.semantic, "semantic neighbor file");
    cfg.semantic_neighbors = load_semantic_neighbors(a.semantic);
  }
  std::optional<std::string> override_spec;
  if (!a.concepts.empty()) override_spec = a.concepts;

  // parse before any encoding so a concept-free prompt fails fast
  Lexicon lexicon;
  if (!override_spec) {
    lexicon = load_lexicon(c.lexicon);
    if (parse(a.prompt, lexicon).empty())
      throw Hint("parse_error", "no attribute-object concepts found in \"" + a.prompt + "\"",
                 "name them explicitly, e.g. --concepts \"red:car,yellow:cat\"");
  } else {
    parse_override(*override_spec, a.prompt);
  }

  const TextEncoder enc = open_encoder(c);
  const fs::path out = prepare_out(a.out);
  std::optional<CandidateIndex> index;
  if (!a.source.index.empty() || !a.source.candidates.empty()) index = obtain_index(a.source, enc, c.threads);
  const MagnetResult r = run_magnet(a.prompt, cfg, lexicon, index ? &*index : nullptr, enc, override_spec);

  const json plan = plan_to_json(r, cfg, enc.fingerprint());
  write_embedding_archive(out / "original.safetensors", r.original, nullptr,
                          sequence_json(r.original, a.prompt, enc.fingerprint()));
  write_embedding_archive(out / "patched.safetensors", r.patched, &r.original, plan, &r.plan);
  for (const auto& w : r.warnings) std::cerr << "magnet: warning: " << w << "\n";

  std::ostringstream s;
  s << "bound " << r.plan.entries.size() << " concept(s) in \"" << a.prompt << "\":";
  for (const auto& e : r.plan.entries) {
    const auto& cp = e.concept_pair;
    s << " [" << (cp.has_attribute() ? cp.attribute_text() + " " : "") << cp.object_text() << " alpha="
      << fmt6(e.alpha) << " beta=" << fmt6(e.beta) << " omega=" << (e.omega ? fmt6(*e.omega) : "none") << "]";
  }
  std::cout << s.str() << " -> " << out.string() << "\n";
  return 0;
}

int run_index_build(const Common& c, const std::string& candidates, const std::string& out_dir) {
  const auto names = list_file(candidates, "candidate list");
  const TextEncoder enc = open_encoder(c);
  const fs::path out = prepare_out(out_dir);
  IndexBuildReport rep;
  const CandidateIndex idx = build_index(names, enc, c.threads, &rep);
  save_index(idx, out / "index.safetensors");
  for (const auto& d : rep.duplicates) std::cerr << "magnet: warning: duplicate candidate dropped: " << d << "\n";
  for (const auto& s : rep.skipped) std::cerr << "magnet: warning: candidate skipped: " << s << "\n";
  std::cout << "indexed " << idx.size() << " candidates (" << rep.duplicates.size() << " duplicates, "
            << rep.skipped.size() << " skipped), d=" << idx.dim() << " -> " << (out / "index.safetensors").string()
            << "\n";
  return 0;
}

int run_neighbors(const Common& c, const std::string& object, int k, const IndexSource& src, const std::string& out_dir) {
  if (k < 1) throw InputError("--k must be at least 1");
  const auto obj = detail::split_words(object);
  if (obj.empty()) throw InputError("--object is empty");
  const TextEncoder enc = open_encoder(c);
  const fs::path out = prepare_out(out_dir);
  const CandidateIndex idx = obtain_index(src, enc, c.threads);
  const Vec q = extract_word_embedding(obj, enc.encode(probe_text({}, obj)));
  bool truncated = false;
  const auto nn = top_k(q, static_cast<std::size_t>(k), idx, &truncated);
  if (truncated) std::cerr << "magnet: warning: k exceeds the index size; returning " << nn.size() << "\n";

  std::ostringstream csv;
  csv.precision(17);
  csv << "rank,name,cosine\n";
  json rows = json::array();
  for (std::size_t i = 0; i < nn.size(); ++i) {
    csv << i + 1 << "," << nn[i].name << "," << nn[i].cosine << "\n";
    rows.push_back({{"rank", i + 1}, {"name", nn[i].name}, {"cosine", nn[i].cosine}});
  }
  write_text(out / "neighbors.csv", csv.str());
  write_json(out / "neighbors.json", {{"object", ConceptPair::join(obj)}, {"k", k}, {"neighbors", rows}});
  std::cout << "neighbors of \"" << ConceptPair::join(obj) << "\":";
  for (const auto& n : nn) std::cout << " " << n.name << "=" << fmt6(n.cosine);
  std::cout << "\n";
  return 0;
}

int run_bias(const Common& c, std::vector<std::string> objects, const std::string& objects_file,
             const std::string& attributes, const std::string& out_dir) {
  if (!objects_file.empty())
    for (auto& o : list_file(objects_file, "object list")) objects.push_back(o);
  if (objects.empty()) throw InputError("give --object or --objects");
  const auto attrs = list_file(attributes, "attribute list");
  const TextEncoder enc = open_encoder(c);
  const fs::path out = prepare_out(out_dir);
  std::ostringstream csv;
  json reports = json::array();
  std::string summary;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const BiasReport r = attribute_bias(objects[i], attrs, enc, c.threads);
    std::ostringstream one;
    write_csv(one, r);
    std::string text = one.str();
    if (i > 0) text.erase(0, text.find('\n') + 1);
    csv << text;
    reports.push_back(to_json(r));
    summary += " " + r.object + "(word=" + fmt6(r.bias_score_word) + ", eot=" + fmt6(r.bias_score_eot) + ")";
  }
  write_text(out / "bias.csv", csv.str());
  write_json(out / "bias.json", reports);
  std::cout << "attribute bias over " << attrs.size() << " attributes:" << summary << "\n";
  return 0;
}

int run_padding(const Common& c, const std::vector<std::string>& prompts, const std::string& out_dir) {
  if (prompts.empty()) throw InputError("give at least one --prompt");
  const TextEncoder enc = open_encoder(c);
  const fs::path out = prepare_out(out_dir);
  std::vector<PaddingCurve> curves(prompts.size());
  parallel_for(prompts.size(), c.threads, [&](std::size_t i) { curves[i] = padding_curve(prompts[i], enc); });
  std::ostringstream csv;
  write_csv(csv, curves);
  write_text(out / "padding.csv", csv.str());
  json arr = json::array();
  for (const auto& cv : curves) arr.push_back(to_json(cv));
  write_json(out / "padding.json", arr);
  std::cout << "padding curves:";
  for (const auto& cv : curves) std::cout << " \"" << cv.prompt << "\" min=" << fmt6(cv.min());
  std::cout << "\n";
  return 0;
}

int run_omega(const Common& c, const std::string& objects, const std::string& attributes, const std::string& out_dir) {
  const auto objs = list_file(objects, "object list");
  const auto attrs = list_file(attributes, "attribute list");
  const TextEncoder enc = open_encoder(c);
  const fs::path out = prepare_out(out_dir);
  const OmegaHistogram h = omega_histogram(objs, attrs, enc, c.threads);
  std::ostringstream hist, samples;
  write_csv(hist, h);
  write_samples_csv(samples, h);
  write_text(out / "omega_histogram.csv", hist.str());
  write_text(out / "omega_samples.csv", samples.str());
  write_json(out / "omega.json", to_json(h));
  std::cout << "omega over " << h.sample_count << " prompts: mode bin center " << fmt6(h.mode_bin_center)
            << ", fraction in [0.5, 0.9] " << fmt6(h.fraction_in(0.5, 0.9)) << ", clamped " << h.clamped << "\n";
  return 0;
}

int run_pca(const Common& c, const std::string& objects, const std::string& attributes, int components,
            const std::string& out_dir) {
  const auto objs = list_file(objects, "object list");
  const auto attrs = list_file(attributes, "attribute list");
  const TextEncoder enc = open_encoder(c);
  const fs::path out = prepare_out(out_dir);
  const auto n_obj = objs.size();
  const auto n_ctx = objs.size() * attrs.size();
  const int d = enc.dim();
  Eigen::MatrixXd fit_word(n_obj, d), fit_eot(n_obj, d), ctx_word(n_ctx, d), ctx_eot(n_ctx, d);
  auto put = [d](Eigen::MatrixXd& m, std::size_t r, const Vec& v) {
    for (int k = 0; k < d; ++k) m(static_cast<Eigen::Index>(r), k) = v[static_cast<std::size_t>(k)];
  };
  parallel_for(n_obj + n_ctx, c.threads, [&](std::size_t i) {
    if (i < n_obj) {
      const auto obj = detail::split_words(objs[i]);
      const auto e = enc.encode(probe_text({}, obj));
      put(fit_word, i, extract_word_embedding(obj, e));
      put(fit_eot, i, extract_eot(e));
    } else {
      const std::size_t j = i - n_obj;
      const auto obj = detail::split_words(objs[j / attrs.size()]);
      const auto e = enc.encode(probe_text(detail::split_words(attrs[j % attrs.size()]), obj));
      put(ctx_word, j, extract_word_embedding(obj, e));
      put(ctx_eot, j, extract_eot(e));
    }
  });

  std::ostringstream csv;
  csv.precision(17);
  csv << "embedding,set,object,attribute";
  for (int k = 1; k <= components; ++k) csv << ",pc" << k;
  csv << "\n";
  json summary = json::object();
  std::string line;
  for (const auto& [kind, fit, ctx] : {std::tuple{"word", &fit_word, &ctx_word}, std::tuple{"eot", &fit_eot, &ctx_eot}}) {
    const PcaModel m = pca_fit(*fit, components);
    const Eigen::MatrixXd pf = pca_transform(m, *fit);
    const Eigen::MatrixXd pc = pca_transform(m, *ctx);
    auto emit = [&](const char* set, const Eigen::MatrixXd& p, Eigen::Index r, const std::string& obj,
                    const std::string& attr) {
      csv << kind << "," << set << "," << obj << "," << attr;
      for (int k = 0; k < components; ++k) csv << "," << p(r, k);
      csv << "\n";
    };
    for (std::size_t i = 0; i < n_obj; ++i) emit("fit", pf, static_cast<Eigen::Index>(i), objs[i], "");
    for (std::size_t j = 0; j < n_ctx; ++j)
      emit("transform", pc, static_cast<Eigen::Index>(j), objs[j / attrs.size()], attrs[j % attrs.size()]);
    const double total = m.eigenvalues.sum();
    std::vector<double> ratio;
    for (int k = 0; k < components; ++k) ratio.push_back(total > 0 ? m.eigenvalues(k) / total : 0.0);
    // spread of the contextualized points around their centroid in PC space
    const Eigen::RowVectorXd centroid = pc.colwise().mean();
    const double spread = std::sqrt((pc.rowwise() - centroid).rowwise().squaredNorm().mean());
    summary[kind] = {{"explained_variance_ratio", ratio},
                     {"eigenvalues", std::vector<double>(m.eigenvalues.data(), m.eigenvalues.data() + components)},
                     {"transform_rms_spread", spread}};
    line += std::string(" ") + kind + ": explained " + fmt6(std::accumulate(ratio.begin(), ratio.end(), 0.0)) +
            ", spread " + fmt6(spread) + ";";
  }
  summary["fit_count"] = n_obj;
  summary["transform_count"] = n_ctx;
  write_text(out / "pca.csv", csv.str());
  write_json(out / "pca.json", summary);
  line.pop_back();
  std::cout << "pca fit on " << n_obj << " objects, " << n_ctx << " transformed:" << line << "\n";
  return 0;
}

int run_swap(const Common& c, const std::string& case_id, const std::string& attribute, const std::string& object,
             const std::string& out_dir) {
  SwapCaseSpec spec{swap_case_from_string(case_id), attribute, object};
  const TextEncoder enc = open_encoder(c);
  const fs::path out = prepare_out(out_dir);
  const SwapCaseResult r = build_swap_case(spec, enc);
  const fs::path path = out / ("swap_" + to_string(spec.case_id) + ".safetensors");
  json side = to_json(spec, r);
  side["encoder_fingerprint"] = enc.fingerprint();
  write_embedding_archive(path, r.embedding, nullptr, side);
  int swapped = 0;
  for (const auto& s : r.sources) swapped += s.from_attributed ? 0 : 1;
  std::cout << "swap case " << to_string(spec.case_id) << " on \"" << r.attributed.source.cleaned_text << "\": "
            << swapped << " of 77 rows from \"" << r.bare.source.cleaned_text << "\" -> " << path.string() << "\n";
  return 0;
}

int run_convert(const Common& c, const std::string& input, const std::string& out_dir) {
  require_file(input, "source weights");
  const fs::path out = prepare_out(out_dir);
  std::optional<Activation> act;
  if (c.activation) act = activation_from_string(*c.activation);
  const fs::path path = out / "text_encoder.safetensors";
  const ConvertReport rep = convert_weights(input, path, c.heads, act);
  std::cout << "converted " << rep.source_layout << " layout: " << rep.n_layers << " layers, d=" << rep.d_model
            << ", " << rep.n_heads << " heads, " << rep.tensors_written << " tensors -> " << path.string() << "\n";
  return 0;
}

void report_error(const Common& c, const std::string& kind, const std::string& message, const std::string& hint) {
  if (c.json_errors) {
    json j = {{"error", kind}, {"message", message}};
    if (!hint.empty()) j["hint"] = hint;
    std::cerr << j.dump() << "\n";
  } else {
    std::cerr << "magnet: " << kind << ": " << message << "\n";
    if (!hint.empty()) std::cerr << "  hint: " << hint << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute binding for CLIP text embeddings"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML file; keys fill unset flags, [subcommand] sections apply to that subcommand");

  Common c;
  app.add_option("--weights", c.weights, "CLIP text encoder weights (.safetensors)")->envname("MAGNET_WEIGHTS");
  app.add_option("--vocab", c.vocab, "BPE vocabulary (vocab.json)")->capture_default_str();
  app.add_option("--merges", c.merges, "BPE merge list (merges.txt)")->capture_default_str();
  app.add_option("--lexicon", c.lexicon, "Directory with adjectives.txt, nouns.txt, stopwords.txt")->capture_default_str();
  app.add_option("--threads", c.threads, "Upper bound on worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));
  app.add_option("--heads", c.heads, "Override the attention head count");
  app.add_option("--activation", c.activation, "Override the MLP activation")->check(CLI::IsMember({"quick_gelu", "gelu"}));
  app.add_flag("--json", c.json_errors, "Emit errors as one JSON object per line on stderr");

  std::string out, prompt;
  auto* encode = app.add_subcommand("encode", "Encode a prompt to a [1, 77, d] embedding archive");
  encode->add_option("--prompt", prompt, "Prompt text")->required();
  encode->add_option("--out", out, "Output directory")->required();

  BindArgs b;
  auto* bind = app.add_subcommand("bind", "Estimate binding vectors and patch the prompt embedding");
  bind->add_option("--prompt", b.prompt, "Prompt text")->required();
  bind->add_option("--lambda", b.lambda, "Strength hyperparameter lambda")->capture_default_str();
  bind->add_option("--k", b.k, "Neighbor objects per concept")->capture_default_str();
  add_index_options(bind, b.source);
  bind->add_option("--concepts", b.concepts, "Explicit concepts \"attr:object,...\" in prompt order (skips the parser)");
  bind->add_option("--semantic-neighbors", b.semantic, "File of \"object: n1, n2\" lines replacing retrieval");
  bind->add_option("--patch-mode", b.patch_mode, "Rows patched per concept")
      ->capture_default_str()
      ->check(CLI::IsMember({"last_subtoken", "all_subtokens"}));
  bind->add_option("--aggregation", b.aggregation, "Negative vector aggregation")
      ->capture_default_str()
      ->check(CLI::IsMember({"mean", "sum"}));
  bind->add_option("--alpha", b.alpha, "Fixed positive strength (replaces the adaptive value)");
  bind->add_option("--beta", b.beta, "Fixed negative strength (replaces the adaptive value)");
  bind->add_option("--out", b.out, "Output directory")->required();

  std::string candidates = (kData / "lists" / "objects614.txt").string();
  auto* index_build = app.add_subcommand("index-build", "Embed a candidate noun list into a neighbor index");
  index_build->add_option("--candidates", candidates, "Candidate noun list")->capture_default_str();
  index_build->add_option("--out", out, "Output directory")->required();

  std::string object;
  int k = 5;
  IndexSource nsrc;
  auto* neighbors = app.add_subcommand("neighbors", "Top-K candidate objects by word-embedding cosine");
  neighbors->add_option("--object", object, "Query object")->required();
  neighbors->add_option("--k", k, "Number of neighbors")->capture_default_str();
  add_index_options(neighbors, nsrc);
  neighbors->add_option("--out", out, "Output directory")->required();

  std::vector<std::string> bias_objects;
  std::string objects_file, attributes = (kData / "lists" / "colors7.txt").string();
  auto* bias = app.add_subcommand("analyze-bias", "Attribute bias of objects under a list of attributes");
  bias->add_option("--object", bias_objects, "Object (repeatable)");
  bias->add_option("--objects", objects_file, "Object list file");
  bias->add_option("--attributes", attributes, "Attribute list file")->capture_default_str();
  bias->add_option("--out", out, "Output directory")->required();

  std::vector<std::string> prompts;
  auto* padding = app.add_subcommand("analyze-padding", "cos(EOT, padding) curves");
  padding->add_option("--prompt", prompts, "Prompt (repeatable)")->required();
  padding->add_option("--out", out, "Output directory")->required();

  std::string omega_objects = (kData / "lists" / "objects614.txt").string();
  std::string omega_attrs = (kData / "lists" / "attributes32.txt").string();
  auto* omega = app.add_subcommand("analyze-omega", "Histogram of omega over an object x attribute grid");
  omega->add_option("--objects", omega_objects, "Object list file")->capture_default_str();
  omega->add_option("--attributes", omega_attrs, "Attribute list file")->capture_default_str();
  omega->add_option("--out", out, "Output directory")->required();

  std::string pca_objects = (kData / "lists" / "objects60.txt").string();
  std::string pca_attrs = (kData / "lists" / "attributes16.txt").string();
  int components = 2;
  auto* pca = app.add_subcommand("analyze-pca", "PCA fit on bare objects, applied to attributed prompts");
  pca->add_option("--objects", pca_objects, "Object list file (fit set)")->capture_default_str();
  pca->add_option("--attributes", pca_attrs, "Attribute list file (transform set is objects x attributes)")
      ->capture_default_str();
  pca->add_option("--components", components, "Principal components kept")->capture_default_str()->check(CLI::PositiveNumber);
  pca->add_option("--out", out, "Output directory")->required();

  std::string case_id, attribute, swap_object;
  auto* swap = app.add_subcommand("swap-case", "Mix rows of \"{attribute} {object}\" and \"{object}\" encodings");
  swap->add_option("--case", case_id, "1, 2, 3, 4, A, B or C")->required();
  swap->add_option("--attribute", attribute, "Attribute word")->required();
  swap->add_option("--object", swap_object, "Object word")->required();
  swap->add_option("--out", out, "Output directory")->required();

  std::string convert_input;
  auto* convert = app.add_subcommand("convert-weights", "Rewrite OpenAI/open_clip text weights to the loader layout");
  convert->add_option("--input", convert_input, "Source .safetensors")->required();
  convert->add_option("--out", out, "Output directory")->required();

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(c, "usage_error", e.what(), "see magnet --help");
    return 2;
  }

  try {
    if (*encode) return run_encode(c, prompt, out);
    if (*bind) return run_bind(c, b);
    if (*index_build) return run_index_build(c, candidates, out);
    if (*neighbors) return run_neighbors(c, object, k, nsrc, out);
    if (*bias) return run_bias(c, bias_objects, objects_file, attributes, out);
    if (*padding) return run_padding(c, prompts, out);
    if (*omega) return run_omega(c, omega_objects, omega_attrs, out);
    if (*pca) return run_pca(c, pca_objects, pca_attrs, components, out);
    if (*swap) return run_swap(c, case_id, attribute, swap_object, out);
    if (*convert) return run_convert(c, convert_input, out);
  } catch (const Hint& e) {
    report_error(c, e.kind(), e.what(), e.hint);
  } catch (const Error& e) {
    report_error(c, e.kind(), e.what(), "");
  } catch (const fs::filesystem_error& e) {
    report_error(c, "io_error", e.what(), "");
  } catch (const std::exception& e) {
    report_error(c, "internal_error", e.what(), "");
  }
  return 1;
}
