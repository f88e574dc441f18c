// Library use without the CLI: parse, estimate, patch, save.
//
//   bind_prompt WEIGHTS "a red car and a yellow cat" OUT_DIR

#include <iostream>

#include "magnet/magnet.hpp"

int main(int argc, char** argv) {
  if (argc != 4) {
    std::cerr << "usage: bind_prompt WEIGHTS PROMPT OUT_DIR\n";
    return 2;
  }
  const std::filesystem::path data = MAGNET_DATA_DIR;
  try {
    const auto encoder = magnet::TextEncoder::open(argv[1], data / "clip" / "vocab.json", data / "clip" / "merges.txt");
    const auto lexicon = magnet::load_lexicon(data / "lexicon");
    const auto index = magnet::build_index(magnet::read_lines(data / "lists" / "objects60.txt"), encoder);

    magnet::MagnetConfig config;  // lambda 0.6, K 5
    const auto result = magnet::run_magnet(argv[2], config, lexicon, &index, encoder);
    for (const auto& e : result.plan.entries)
      std::cout << e.concept_pair.attribute_text() << " " << e.concept_pair.object_text()
                << ": alpha=" << magnet::fmt6(e.alpha) << " beta=" << magnet::fmt6(e.beta) << "\n";

    const std::filesystem::path out = argv[3];
    std::filesystem::create_directories(out);
    magnet::write_embedding_archive(out / "patched.safetensors", result.patched, &result.original,
                                    magnet::plan_to_json(result, config, encoder.fingerprint()), &result.plan);
  } catch (const magnet::Error& e) {
    std::cerr << e.kind() << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
