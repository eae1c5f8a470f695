#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "semnav/rng.hpp"

namespace semnav {

// --- Visual primitives -----------------------------------------------------

// A patch is described by a small discrete feature tuple.  The cross product
// of the three ranges (8 * 8 * 4 = 256) is exactly the visual token
// vocabulary, so every tuple corresponds to one token.
struct FeatureTuple {
  int surface = 0;  // [0, 8)
  int color = 0;    // [0, 8)
  int object = 0;   // [0, 4)
  auto operator<=>(const FeatureTuple&) const = default;
};

inline constexpr int kSurfaceCount = 8;
inline constexpr int kColorCount = 8;
inline constexpr int kObjectCount = 4;
inline constexpr int kFeatureTupleCount =
    kSurfaceCount * kColorCount * kObjectCount;  // 256

inline constexpr int kPatchGridSide = 4;
inline constexpr int kPatchesPerView = kPatchGridSide * kPatchGridSide;  // 16

inline constexpr int kHeadingSectors = 12;
inline constexpr int kElevationBands = 3;
inline constexpr int kViewsPerPanorama = kHeadingSectors * kElevationBands;

int tuple_index(const FeatureTuple& t);        // [0, 256)
FeatureTuple tuple_from_index(int index);

// One directional view: a 4x4 grid of patches in row-major order plus the
// camera pose it was taken at.
struct View {
  std::vector<FeatureTuple> patches;  // size kPatchesPerView
  double heading = 0.0;               // [0, 2*pi)
  double elevation = 0.0;             // one of {-pi/6, 0, pi/6}
};

// Full panorama at a node: 36 views, heading-major (sector 0 bands 0..2,
// sector 1 bands 0..2, ...).  Band 1 is eye level.
struct Panorama {
  int node = -1;
  std::vector<View> views;  // size kViewsPerPanorama
};

inline int view_index(int sector, int band) {
  return sector * kElevationBands + band;
}
double sector_heading(int sector);
double band_elevation(int band);
// Nearest heading sector for an arbitrary angle (wraps into [0, 12)).
int heading_sector(double heading);

inline constexpr int kEyeLevelBand = 1;

// --- Environment -----------------------------------------------------------

struct NodeRecord {
  int id = 0;
  int x = 0;  // column
  int y = 0;  // row; headings treat +y as north
  int room = 0;
};

// A procedurally generated indoor environment: a 4-connected grid of
// navigation nodes partitioned into 2x2-cell rooms, with a deterministic
// feature tuple for every (node, view, patch) slot.  Everything is a pure
// function of (seed, grid_size).
class Environment {
 public:
  static Environment generate(std::uint64_t seed, int grid_size);

  std::uint64_t seed() const { return seed_; }
  int grid_size() const { return grid_size_; }
  int side() const { return 2 * grid_size_; }  // nodes per side
  int node_count() const { return static_cast<int>(nodes_.size()); }
  int room_count() const { return grid_size_ * grid_size_; }

  const std::vector<NodeRecord>& nodes() const { return nodes_; }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<int>& neighbors(int node) const;  // ascending id
  int room_of(int node) const;
  int room_color(int room) const;  // [0, kColorCount)

  FeatureTuple feature(int node, int sector, int band, int patch) const;
  View view_at(int node, int sector, int band) const;
  Panorama panorama(int node) const;

  // Round-trip support: an Environment can be rebuilt from serialized parts.
  static Environment from_parts(std::uint64_t seed, int grid_size,
                                std::vector<int> room_colors,
                                std::vector<FeatureTuple> features);
  const std::vector<int>& room_colors() const { return room_colors_; }
  const std::vector<FeatureTuple>& raw_features() const { return features_; }

 private:
  Environment() = default;

  std::uint64_t seed_ = 0;
  int grid_size_ = 0;
  std::vector<NodeRecord> nodes_;
  std::vector<std::pair<int, int>> edges_;       // (lo, hi), lexicographic
  std::vector<std::vector<int>> adjacency_;      // per node, ascending
  std::vector<int> room_colors_;                 // per room
  std::vector<FeatureTuple> features_;           // node-major, view, patch
};

// BFS over the navigation graph; unreachable nodes get -1 (cannot happen for
// generated environments, which are connected by construction).
std::vector<int> bfs_distances(const Environment& env, int from);

// Lexicographically smallest shortest path from a to b (inclusive).
std::vector<int> shortest_path(const Environment& env, int a, int b);

// --- Candidates and episodes ----------------------------------------------

// One admissible action at a node.  node == -1 encodes STOP; its view is a
// placeholder with no patches and is never fed to the encoder.
struct Candidate {
  int node = -1;
  View view;
};

// Movement candidates ordered by ascending neighbor id, then STOP last.  A
// movement candidate carries the eye-level view toward that neighbor.
std::vector<Candidate> navigable_candidates(const Environment& env, int node);

// Heading from one node toward an adjacent node.
double heading_between(const Environment& env, int from, int to);

// --- Instruction vocabulary ------------------------------------------------

inline constexpr int kWordVocabSize = 128;
inline constexpr int kPadWordId = 0;
inline constexpr int kClsWordId = 1;
inline constexpr int kMaskWordId = 2;
inline constexpr int kSepWordId = 3;
inline constexpr int kMaxInstructionWords = 32;
inline constexpr int kMaxHistorySteps = 8;

const std::vector<std::string>& word_vocabulary();  // size kWordVocabSize
int word_id(const std::string& word);               // throws on unknown word
const std::string& word_text(int id);

// --- Episodes --------------------------------------------------------------

// A supervised navigation episode on a concrete environment.  The path is the
// lexicographically smallest shortest path between two nodes at graph
// distance 3..6; the instruction is a templated rendering of that path.
struct Episode {
  std::vector<int> instruction;                    // word ids, <= 32
  std::vector<int> path;                           // node ids
  std::vector<Panorama> panoramas;                 // one per path node
  std::vector<std::vector<Candidate>> candidates;  // one list per step
  std::vector<int> teacher_actions;                // index into candidates
};

Episode sample_episode(const Environment& env, std::uint64_t rng_seed);

// Instruction rendering for an explicit path (exposed for tests).
std::vector<int> render_instruction(const Environment& env,
                                    const std::vector<int>& path);

// Heading the agent faces at a step of the teacher path: the heading of the
// edge taken to arrive there (step 0 faces the first edge instead).
double facing_heading(const Episode& ep, int step);

// The view the teacher action at `step` looks at: the chosen candidate's view
// for movement actions, the current facing eye-level view for STOP.
const View& teacher_target_view(const Episode& ep, int step);

// --- Serialization ---------------------------------------------------------

inline constexpr const char* kWorldSchema = "semnav-world/1";

std::string environment_to_json(const Environment& env);
Environment environment_from_json(const std::string& text);
void save_environment(const Environment& env, const std::string& path);
Environment load_environment(const std::string& path);

}  // namespace semnav
