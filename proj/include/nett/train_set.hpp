#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nett/error.hpp"
#include "nett/grid.hpp"
#include "nett/io.hpp"

namespace nett {

enum class PairKind { artifact, clean };

inline std::string to_string(PairKind k) { return k == PairKind::artifact ? "artifact" : "clean"; }

struct TrainPair {
  Image input;
  Image target;
  PairKind kind = PairKind::clean;
  std::uint64_t seed = 0;
};

/// (input, target) pairs for the artifact detector. Clean pairs have a zero
/// target; artifact pairs have target = phantom - reconstruction.
struct TrainSet {
  std::vector<TrainPair> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
  std::size_t count(PairKind k) const {
    std::size_t n = 0;
    for (const auto& p : pairs) n += p.kind == k;
    return n;
  }
};

/*
 * On disk: DIR/manifest.txt with one line per pair
 *     index kind input_path target_path seed
 * (paths relative to DIR) and the images in NETT grid format.
 */
inline void save_train_set(const std::filesystem::path& dir, const TrainSet& set) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("cannot write manifest in " + dir.string());
  manifest << "# index kind input target seed\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    char in_name[32], tg_name[32];
    std::snprintf(in_name, sizeof in_name, "input_%04zu.nett", i);
    std::snprintf(tg_name, sizeof tg_name, "target_%04zu.nett", i);
    save_grid(dir / in_name, set.pairs[i].input);
    save_grid(dir / tg_name, set.pairs[i].target);
    manifest << i << ' ' << to_string(set.pairs[i].kind) << ' ' << in_name << ' ' << tg_name << ' '
             << set.pairs[i].seed << '\n';
  }
}

inline TrainSet load_train_set(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("no manifest.txt in " + dir.string());
  TrainSet set;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t index = 0;
    std::string kind, in_name, tg_name;
    std::uint64_t seed = 0;
    if (!(ls >> index >> kind >> in_name >> tg_name >> seed))
      throw FormatError("malformed manifest line: " + line);
    if (kind != "artifact" && kind != "clean") throw FormatError("unknown pair kind " + kind);
    set.pairs.push_back({load_image(dir / in_name), load_image(dir / tg_name),
                         kind == "artifact" ? PairKind::artifact : PairKind::clean, seed});
  }
  if (set.empty()) throw FormatError("empty training set in " + dir.string());
  return set;
}

}  // namespace nett
