// Acceptance run: one PASS / FAIL / SKIP line per criterion.
//
//   acceptance                 all criteria; exit 1 on any FAIL, 77 if any SKIP
//   acceptance --only <id>     one criterion; exit 0 / 1 / 77
//   acceptance --list
//
// Criteria that need trained CLIP ViT-L/14 text weights read them from
// MAGNET_WEIGHTS and are skipped when it is unset. Checks that are properties
// of the pipeline rather than of the weights run on the real encoder when it
// is available and on the synthetic ViT-L-shaped tower otherwise; the line
// names which one was used. INFO lines are surrogates and never count as a
// pass.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "test_env.hpp"

using namespace magnet;
namespace mt = magnet::testing;
namespace fs = std::filesystem;

namespace {

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome fail(std::string d) { return {Status::kFail, std::move(d)}; }
Outcome skip(std::string d) { return {Status::kSkip, std::move(d)}; }
Outcome judge(bool ok, std::string d) { return {ok ? Status::kPass : Status::kFail, std::move(d)}; }

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void info(const std::string& id, const std::string& text) { std::cout << "[INFO] " << id << ": " << text << "\n"; }

fs::path out_dir() {
  fs::path p = MAGNET_ACCEPTANCE_OUT;
  fs::create_directories(p);
  return p;
}

unsigned threads() {
  if (const char* t = std::getenv("MAGNET_THREADS"); t && *t) return static_cast<unsigned>(std::max(1, std::atoi(t)));
  return std::max(1u, std::thread::hardware_concurrency());
}

const char* kNoWeights = "MAGNET_WEIGHTS not set; needs trained CLIP ViT-L/14 text weights";

// Real encoder when given, else the synthetic ViT-L tower.
std::pair<const TextEncoder*, std::string> pipeline_encoder() {
  if (const TextEncoder* e = mt::real_encoder()) return {e, "real ViT-L/14 weights"};
  return {&mt::vitl_synthetic_encoder(), "synthetic ViT-L weights"};
}

double max_abs_diff(const float* a, const float* b, std::size_t n) {
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

// ---- criteria ----

Outcome tokenizer_parity() {
  const auto fx = mt::read_json(mt::fixture("tokenizer_ids.json"));
  Stopwatch sw;
  const Vocabulary vocab = load_vocabulary(mt::vocab_path(), mt::merges_path());
  int match = 0, total = 0;
  std::string first_miss;
  for (const auto& p : fx["prompts"]) {
    ++total;
    const auto seq = tokenize(p["prompt"].get<std::string>(), vocab);
    const auto want = p["ids"].get<std::vector<int>>();
    if (std::equal(want.begin(), want.end(), seq.ids.begin()) && seq.n_word_tokens == p["n_word_tokens"].get<int>())
      ++match;
    else if (first_miss.empty())
      first_miss = p["prompt"].get<std::string>();
  }
  bool rejects = false;
  try {
    tokenize(fx["too_long"]["prompt"].get<std::string>(), vocab);
  } catch (const PromptTooLongError&) {
    rejects = true;
  }
  const double t = sw.seconds();
  std::ostringstream d;
  d << match << "/" << total << " prompts match the reference ids, over-long prompt "
    << (rejects ? "rejected" : "NOT rejected") << ", " << fmt6(t) << " s including vocabulary load (limit 1 s)";
  if (!first_miss.empty()) d << "; first mismatch: \"" << first_miss << "\"";
  return judge(total == 200 && match == total && rejects && t < 1.0, d.str());
}

Outcome encoder_parity() {
  {
    // surrogate: same transformer code, synthetic weights, HF reference
    const auto fx = mt::read_json(mt::fixture("encoder_vitl_synthetic.json"));
    SafeTensorReader ref(mt::fixture("encoder_vitl_synthetic.safetensors"));
    const Tensor h = ref.read("hidden_states");
    const auto& enc = mt::vitl_synthetic_encoder();
    Stopwatch sw;
    double worst = 0.0;
    std::size_t i = 0;
    for (const auto& p : fx["prompts"]) {
      const auto e = enc.encode(p.get<std::string>());
      worst = std::max(worst, max_abs_diff(e.hidden.data(), h.data.data() + i++ * 77 * 768, 77 * 768));
    }
    info("encoder-parity", "surrogate on synthetic ViT-L weights vs the Hugging Face reference: max|diff| " +
                               fmt6(worst) + " over 20 prompts in " + fmt6(sw.seconds()) + " s");
  }
  const TextEncoder* real = mt::real_encoder();
  if (!real) return skip(kNoWeights);
  const fs::path ref_path = mt::fixture("encoder_vitl_real.safetensors");
  if (!fs::exists(ref_path))
    return skip("no frozen reference for the real weights; run tests/oracle/encoder_oracle.py $MAGNET_WEIGHTS "
                "encoder_vitl_real");
  const auto fx = mt::read_json(mt::fixture("encoder_vitl_real.json"));
  if (fx["weights_sha256"].get<std::string>() != real->fingerprint())
    return fail("frozen reference was made from different weights than MAGNET_WEIGHTS");
  SafeTensorReader ref(ref_path);
  const Tensor h = ref.read("hidden_states");
  if (real->dim() != 768) return fail("MAGNET_WEIGHTS is not a 768-wide text tower");
  Stopwatch sw;
  double worst = 0.0;
  std::size_t i = 0;
  for (const auto& p : fx["prompts"]) {
    const auto e = real->encode(p.get<std::string>());
    worst = std::max(worst, max_abs_diff(e.hidden.data(), h.data.data() + i++ * 77 * 768, 77 * 768));
  }
  const double t = sw.seconds();
  return judge(i == 20 && worst < 1e-3 && t < 60.0,
               "max|diff| " + fmt6(worst) + " (limit 1e-3) over " + std::to_string(i) + " prompts x 77 x 768, " +
                   fmt6(t) + " s (limit 60 s)");
}

Outcome strength_law() {
  const double at_pivot = adaptive_alpha(0.6, 0.6);
  bool decreasing = true;
  double prev = adaptive_alpha(-1.0, 0.6);
  for (int i = 1; i <= 2000; ++i) {
    const double a = adaptive_alpha(-1.0 + i * 1e-3, 0.6);
    decreasing = decreasing && a < prev;
    prev = a;
  }
  bool beta_range = true;
  for (int i = 0; i <= 1000; ++i) {
    const double b = adaptive_beta(i * 1e-3);
    beta_range = beta_range && b >= 0.0 && b <= 1.0;
  }
  const bool beta_one = adaptive_beta(1.0) == 0.0;
  std::ostringstream d;
  d << "alpha(0.6, 0.6) = " << at_pivot << (at_pivot == 1.0 ? " exactly" : "") << ", alpha strictly decreasing on "
    << "2001 samples: " << (decreasing ? "yes" : "no") << ", beta(1) = " << adaptive_beta(1.0)
    << ", beta in [0,1] on [0,1]: " << (beta_range ? "yes" : "no");
  return judge(at_pivot == 1.0 && decreasing && beta_one && beta_range, d.str());
}

Outcome reduction() {
  const auto [enc, label] = pipeline_encoder();
  const auto candidates = read_lines(mt::list_path("objects60.txt"));
  const CandidateIndex index = build_index(candidates, *enc, threads());
  const std::vector<std::string> objects = {"bear", "apple", "chair", "car", "cat", "dog", "bird", "banana", "horse", "table"};
  const std::vector<std::string> attrs = {"red", "blue", "green", "yellow", "white", "black", "pink", "purple", "brown", "gray"};
  MagnetConfig cfg;
  cfg.k_neighbors = 1;
  cfg.threads = threads();
  double worst = 0.0;
  int self_first = 0, tested = 0;
  std::string missing;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string& o = objects[i];
    if (std::find(index.names.begin(), index.names.end(), o) == index.names.end()) {
      missing += " " + o;
      continue;
    }
    ++tested;
    // two concepts so the negative vector is non-trivial
    const std::string other = objects[(i + 1) % objects.size()];
    const std::string a = attrs[i], b = attrs[(i + 3) % attrs.size()];
    const std::string prompt = "a " + a + " " + o + " and a " + b + " " + other;
    const ConceptSet cs = parse_override(a + ":" + o + "," + b + ":" + other, prompt);
    const BindingPlan plan = estimate_vectors(cs, &index, cfg, *enc);
    const BindingEntry& e = plan.entries[0];
    if (e.neighbors_used.size() == 1 && e.neighbors_used[0] == o) ++self_first;

    // direct single-object estimate
    auto word = [&](const std::string& text) {
      const auto s = enc->encode(text);
      return s.row_copy(s.eot_index - 1);
    };
    const Vec base = word(o), pos = word(a + " " + o), neg = word(b + " " + o);
    for (int c = 0; c < enc->dim(); ++c) {
      const auto k = static_cast<std::size_t>(c);
      const double vp = static_cast<double>(pos[k]) - base[k];
      const double vn = static_cast<double>(neg[k]) - base[k];
      worst = std::max({worst, std::abs(vp - e.v_pos[k]), std::abs(vn - e.v_neg[k])});
    }
  }
  std::ostringstream d;
  d << tested << " objects in the candidate set, self ranked first for " << self_first << ", max|diff| "
    << fmt6(worst) << " per component (limit 1e-6), " << label;
  if (!missing.empty()) d << "; not in candidates:" << missing;
  return judge(tested == 10 && self_first == 10 && worst <= 1e-6, d.str());
}

Outcome pivot_cancellation() {
  const auto [enc, label] = pipeline_encoder();
  MagnetConfig cfg;
  cfg.threads = threads();
  int checks = 0, ok = 0;
  auto all_zero = [](const Vec& v) { return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; }); };
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"a dog and a red car", ":dog,red:car"},
      {"a cat", ":cat"},
      {"a red chair", "red:chair"},
      {"a blue apple", "blue:apple"},
      {"a bear next to a green bench and a bird", ":bear,green:bench,:bird"},
  };
  for (const auto& [prompt, spec] : cases) {
    const ConceptSet cs = parse_override(spec, prompt);
    const BindingPlan plan = estimate_vectors(cs, nullptr, cfg, *enc);
    for (const auto& e : plan.entries) {
      if (!e.concept_pair.has_attribute()) {
        ++checks;
        ok += all_zero(e.v_pos) ? 1 : 0;
      }
      if (plan.entries.size() == 1) {
        ++checks;
        ok += all_zero(e.v_neg) ? 1 : 0;
      }
    }
  }
  // also through the neighbor path
  const CandidateIndex index = build_index(read_lines(mt::list_path("objects60.txt")), *enc, threads());
  for (const auto& [prompt, spec] : cases) {
    const BindingPlan plan = estimate_vectors(parse_override(spec, prompt), &index, cfg, *enc);
    for (const auto& e : plan.entries) {
      if (!e.concept_pair.has_attribute()) {
        ++checks;
        ok += all_zero(e.v_pos) ? 1 : 0;
      }
      if (plan.entries.size() == 1) {
        ++checks;
        ok += all_zero(e.v_neg) ? 1 : 0;
      }
    }
  }
  return judge(checks > 0 && ok == checks, std::to_string(ok) + "/" + std::to_string(checks) +
                                               " vectors exactly zero (attribute-less v_pos, single-concept v_neg), " +
                                               label);
}

Outcome patch_locality() {
  const auto [enc, label] = pipeline_encoder();
  const auto fx = mt::read_json(mt::fixture("tokenizer_ids.json"));
  std::vector<std::string> prompts;
  for (const auto& p : fx["prompts"]) {
    const auto s = p["prompt"].get<std::string>();
    if (detail::prompt_words(s).size() >= 2 && p["n_word_tokens"].get<int>() <= 40) prompts.push_back(s);
  }
  std::mt19937_64 rng(20240617);
  std::uniform_real_distribution<float> val(-1.0f, 1.0f);
  std::uniform_real_distribution<double> strength(0.0, 2.0);
  int good = 0, plans = 0;
  long long changed_inside = 0;
  for (int t = 0; t < 50; ++t) {
    const std::string prompt = prompts[rng() % prompts.size()];
    const EmbeddingSequence full = enc->encode(prompt);
    const auto& spans = full.source.word_spans;
    // pick 1..3 distinct words as targets
    const int n = static_cast<int>(spans.size());
    std::set<int> words;
    const int want = 1 + static_cast<int>(rng() % 3);
    while (static_cast<int>(words.size()) < std::min(want, n)) words.insert(static_cast<int>(rng() % n));
    BindingPlan plan;
    plan.dim = enc->dim();
    MagnetConfig cfg;
    cfg.patch_mode = rng() % 2 ? PatchMode::kAllSubtokens : PatchMode::kLastSubtoken;
    for (int w : words) {
      const auto& sp = spans[static_cast<std::size_t>(w)];
      if (sp.core_end <= sp.start) continue;
      BindingEntry e;
      e.concept_pair.object = {sp.text};
      e.target_start = sp.start;
      e.target_last = sp.core_end - 1;
      e.v_pos.resize(static_cast<std::size_t>(plan.dim));
      e.v_neg.resize(static_cast<std::size_t>(plan.dim));
      for (auto& x : e.v_pos) x = val(rng);
      for (auto& x : e.v_neg) x = val(rng);
      e.alpha = strength(rng);
      e.beta = strength(rng);
      plan.entries.push_back(std::move(e));
    }
    if (plan.entries.empty()) continue;
    ++plans;
    const EmbeddingSequence out = apply_plan(full, plan, cfg);
    std::set<int> allowed;
    for (const auto& e : plan.entries)
      for (int r : patched_rows(e, cfg.patch_mode)) allowed.insert(r);
    bool clean = true;
    for (int r = 0; r < kContextLength; ++r) {
      for (int c = 0; c < plan.dim; ++c) {
        const bool same = out.hidden(r, c) == full.hidden(r, c);
        if (!allowed.count(r) && !same) clean = false;
        if (allowed.count(r) && !same) ++changed_inside;
      }
    }
    good += clean ? 1 : 0;
  }
  return judge(plans == 50 && good == plans && changed_inside > 0,
               std::to_string(good) + "/" + std::to_string(plans) +
                   " randomized plans leave every row outside the target spans bit-identical, " +
                   std::to_string(changed_inside) + " values changed inside, " + label);
}

Outcome omega_statistics() {
  const TextEncoder* real = mt::real_encoder();
  if (!real) {
    auto objs = read_lines(mt::list_path("objects60.txt"));
    auto attrs = read_lines(mt::list_path("colors7.txt"));
    objs.resize(20);
    attrs.resize(3);
    const auto h = omega_histogram(objs, attrs, mt::vitl_synthetic_encoder(), threads());
    info("omega-statistics", "surrogate 20 x 3 grid on synthetic weights (not meaningful for the claim): mode " +
                                 fmt6(h.mode_bin_center) + ", fraction in [0.5, 0.9] " + fmt6(h.fraction_in(0.5, 0.9)));
    return skip(kNoWeights);
  }
  const auto objs = read_lines(mt::list_path("objects614.txt"));
  const auto attrs = read_lines(mt::list_path("attributes32.txt"));
  Stopwatch sw;
  const OmegaHistogram h = omega_histogram(objs, attrs, *real, threads());
  const double t = sw.seconds();
  {
    std::ofstream hist(out_dir() / "omega_histogram.csv"), samples(out_dir() / "omega_samples.csv");
    write_csv(hist, h);
    write_samples_csv(samples, h);
  }
  const double frac = h.fraction_in(0.5, 0.9);
  std::ostringstream d;
  d << objs.size() << " x " << attrs.size() << " = " << h.sample_count << " prompts: fraction in [0.5, 0.9] "
    << fmt6(frac) << " (need >= 0.8), mode bin center " << fmt6(h.mode_bin_center) << " (need [0.6, 0.8]), "
    << fmt6(t) << " s on " << threads() << " thread(s) (limit 900 s)";
  return judge(frac >= 0.8 && h.mode_bin_center >= 0.6 && h.mode_bin_center <= 0.8 && t <= 900.0, d.str());
}

Outcome padding_ordering() {
  const std::vector<std::string> prompts = {"a blue apple", "a red chair"};
  auto curves_of = [&](const TextEncoder& enc) {
    std::vector<PaddingCurve> c;
    for (const auto& p : prompts) c.push_back(padding_curve(p, enc));
    return c;
  };
  {
    const auto c = curves_of(mt::vitl_synthetic_encoder());
    std::ofstream out(out_dir() / "padding_curves_synthetic.csv");
    write_csv(out, c);
    info("padding-ordering", "surrogate on synthetic weights (not meaningful for the claim): min blue apple " +
                                 fmt6(c[0].min()) + ", min red chair " + fmt6(c[1].min()));
  }
  const TextEncoder* real = mt::real_encoder();
  if (!real) return skip(kNoWeights);
  const auto c = curves_of(*real);
  const fs::path csv = out_dir() / "padding_curves.csv";
  {
    std::ofstream out(csv);
    write_csv(out, c);
  }
  return judge(c[0].min() < c[1].min(), "min_l cos(EOT, pad_l): \"a blue apple\" " + fmt6(c[0].min()) +
                                            ", \"a red chair\" " + fmt6(c[1].min()) + "; curves in " + csv.string());
}

Outcome swap_conservation() {
  const auto [enc, label] = pipeline_encoder();
  const EmbeddingSequence vanilla = enc->encode("red chair");
  int cases = 0, conserved = 0;
  bool case1_exact = false;
  for (const SwapCase id : kAllSwapCases) {
    const SwapCaseResult r = build_swap_case({id, "red", "chair"}, *enc);
    ++cases;
    bool all = true;
    for (int i = 0; i < kContextLength; ++i) {
      bool found = false;
      for (const RowMatrix* src : {&r.attributed.hidden, &r.bare.hidden})
        for (int j = 0; j < kContextLength && !found; ++j) found = r.embedding.hidden.row(i) == src->row(j);
      all = all && found;
    }
    conserved += all ? 1 : 0;
    if (id == SwapCase::k1) case1_exact = r.embedding.hidden == vanilla.hidden;
  }
  return judge(cases == 7 && conserved == 7 && case1_exact,
               std::to_string(conserved) + "/7 cases have every row bit-identical to a source row, case 1 " +
                   (case1_exact ? "equals" : "DIFFERS from") + " encode(\"red chair\") bit-exactly, " + label);
}

Outcome concept_parser() {
  const auto fx = mt::read_json(mt::fixture("parser_gold.json"));
  using PairSet = std::set<std::pair<std::string, std::string>>;
  auto got = [](const std::string& prompt) {
    PairSet s;
    for (const auto& p : parse(prompt, mt::lexicon()).pairs) s.insert({p.attribute_text(), p.object_text()});
    return s;
  };
  auto gold = [](const nlohmann::json& pairs) {
    PairSet s;
    for (const auto& p : pairs) s.insert({p[0].get<std::string>(), p[1].get<std::string>()});
    return s;
  };
  int quoted = 0, quoted_ok = 0, corpus = 0, corpus_ok = 0;
  for (const auto& e : fx["quoted_examples"]) {
    ++quoted;
    quoted_ok += got(e["prompt"]) == gold(e["pairs"]) ? 1 : 0;
  }
  for (const auto& e : fx["corpus"]) {
    ++corpus;
    corpus_ok += got(e["prompt"]) == gold(e["pairs"]) ? 1 : 0;
  }
  const double acc = corpus ? static_cast<double>(corpus_ok) / corpus : 0.0;
  return judge(quoted_ok == quoted && corpus == 50 && acc >= 0.9,
               "quoted examples " + std::to_string(quoted_ok) + "/" + std::to_string(quoted) + " (need all), corpus " +
                   std::to_string(corpus_ok) + "/" + std::to_string(corpus) + " = " + fmt6(acc) + " (need >= 0.9)");
}

Outcome archive_roundtrip() {
  const auto [enc, label] = pipeline_encoder();
  const CandidateIndex index = build_index(read_lines(mt::list_path("objects60.txt")), *enc, threads());
  MagnetConfig cfg;
  cfg.threads = threads();
  const fs::path dir = mt::temp_dir("acceptance");
  std::vector<std::string> bytes[2];
  bool exact = true;
  for (int run = 0; run < 2; ++run) {
    const MagnetResult r = run_magnet("a red car and a yellow cat", cfg, mt::lexicon(), &index, *enc);
    const fs::path path = dir / ("run" + std::to_string(run)) / "patched.safetensors";
    fs::create_directories(path.parent_path());
    write_embedding_archive(path, r.patched, &r.original, plan_to_json(r, cfg, enc->fingerprint()), &r.plan);
    const auto [patched, original] = read_embedding_archive(path);
    exact = exact && patched == r.patched.hidden && original && *original == r.original.hidden;
    bytes[run] = {mt::read_bytes(path), mt::read_bytes(sidecar_path(path))};
  }
  fs::remove_all(dir);
  const bool identical = bytes[0] == bytes[1];
  return judge(exact && identical, std::string("reload ") + (exact ? "bit-exact" : "DIFFERS") +
                                       ", two runs " + (identical ? "byte-identical" : "DIFFER") +
                                       " (archive and sidecar), " + label);
}

struct Criterion {
  const char* id;
  const char* title;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all = {
      {"tokenizer-parity", "tokenizer matches the reference CLIP tokenizer", tokenizer_parity},
      {"encoder-parity", "encoder matches reference hidden states on real ViT-L/14", encoder_parity},
      {"strength-law", "adaptive strength law", strength_law},
      {"reduction", "K=1 neighbor estimate equals the single-object estimate", reduction},
      {"pivot-cancellation", "exact zeros for attribute-less and single concepts", pivot_cancellation},
      {"patch-locality", "patching touches only target rows", patch_locality},
      {"omega-statistics", "omega distribution on the 614 x 32 grid", omega_statistics},
      {"padding-ordering", "blue apple padding curve dips below red chair", padding_ordering},
      {"swap-conservation", "swap cases only move rows between source encodings", swap_conservation},
      {"concept-parser", "concept parser accuracy", concept_parser},
      {"archive-roundtrip", "bind archives round-trip and are deterministic", archive_roundtrip},
  };
  return all;
}

Status run_one(const Criterion& c) {
  Stopwatch sw;
  Outcome o;
  try {
    o = c.run();
  } catch (const std::exception& e) {
    o = fail(std::string("exception: ") + e.what());
  }
  static const char* tags[] = {"[PASS]", "[FAIL]", "[SKIP]"};
  std::cout << tags[static_cast<int>(o.status)] << " " << c.id << ": " << o.detail << "  (" << fmt6(sw.seconds())
            << " s)\n"
            << std::flush;
  return o.status;
}

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--list") {
      for (const auto& c : criteria()) std::cout << c.id << "  " << c.title << "\n";
      return 0;
    }
    if (a == "--only" && i + 1 < argc) {
      only = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--list] [--only <id>]\n";
      return 2;
    }
  }
  int passed = 0, failed = 0, skipped = 0;
  for (const auto& c : criteria()) {
    if (!only.empty() && only != c.id) continue;
    switch (run_one(c)) {
      case Status::kPass: ++passed; break;
      case Status::kFail: ++failed; break;
      case Status::kSkip: ++skipped; break;
    }
  }
  if (passed + failed + skipped == 0) {
    std::cerr << "unknown criterion '" << only << "' (see --list)\n";
    return 2;
  }
  std::cout << passed << " passed, " << failed << " failed, " << skipped << " skipped\n";
  if (failed) return 1;
  return skipped ? 77 : 0;
}
