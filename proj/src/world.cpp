#include "semnav/world.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "semnav/errors.hpp"

namespace semnav {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSectorStep = 2.0 * kPi / kHeadingSectors;  // pi/6

// Directions on the node grid.  +y is north; headings grow clockwise from
// north, so east (+x) sits at pi/2.
struct Dir {
  int dx, dy;
  int word;  // filled lazily from the vocabulary
};

int direction_word(int dx, int dy) {
  if (dx == 0 && dy == 1) return word_id("north");
  if (dx == 1 && dy == 0) return word_id("east");
  if (dx == 0 && dy == -1) return word_id("south");
  if (dx == -1 && dy == 0) return word_id("west");
  throw std::logic_error("direction_word: nodes are not adjacent");
}

const char* const kColorWords[kColorCount] = {
    "red", "green", "blue", "yellow", "purple", "orange", "white", "gray"};

}  // namespace

int tuple_index(const FeatureTuple& t) {
  return (t.surface * kColorCount + t.color) * kObjectCount + t.object;
}

FeatureTuple tuple_from_index(int index) {
  if (index < 0 || index >= kFeatureTupleCount)
    throw std::invalid_argument("tuple_from_index: index out of range");
  FeatureTuple t;
  t.object = index % kObjectCount;
  t.color = (index / kObjectCount) % kColorCount;
  t.surface = index / (kObjectCount * kColorCount);
  return t;
}

double sector_heading(int sector) { return sector * kSectorStep; }

double band_elevation(int band) { return (band - 1) * (kPi / 6.0); }

// --- Environment -----------------------------------------------------------

Environment Environment::generate(std::uint64_t seed, int grid_size) {
  if (grid_size < 4)
    throw std::invalid_argument("Environment::generate: grid_size must be >= 4");
  Environment env;
  env.seed_ = seed;
  env.grid_size_ = grid_size;

  const int side = 2 * grid_size;
  env.nodes_.reserve(side * side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      NodeRecord n;
      n.id = y * side + x;
      n.x = x;
      n.y = y;
      n.room = (y / 2) * grid_size + (x / 2);
      env.nodes_.push_back(n);
    }
  }

  env.adjacency_.resize(env.nodes_.size());
  for (const NodeRecord& n : env.nodes_) {
    if (n.x + 1 < side) env.edges_.emplace_back(n.id, n.id + 1);
    if (n.y + 1 < side) env.edges_.emplace_back(n.id, n.id + side);
  }
  for (auto [a, b] : env.edges_) {
    env.adjacency_[a].push_back(b);
    env.adjacency_[b].push_back(a);
  }
  for (auto& adj : env.adjacency_) std::sort(adj.begin(), adj.end());

  env.room_colors_.resize(env.room_count());
  for (int r = 0; r < env.room_count(); ++r) {
    env.room_colors_[r] = static_cast<int>(
        derive_seed(seed, "room-color", static_cast<std::uint64_t>(r)) %
        kColorCount);
  }

  // Every patch feature is a pure function of (seed, x, y, sector, band,
  // patch).  Roughly half of all patches take the room's color, which gives
  // instructions a visual correlate to latch onto.
  env.features_.resize(env.nodes_.size() * kViewsPerPanorama * kPatchesPerView);
  std::size_t slot = 0;
  for (const NodeRecord& n : env.nodes_) {
    const int room_color = env.room_colors_[n.room];
    for (int sector = 0; sector < kHeadingSectors; ++sector) {
      for (int band = 0; band < kElevationBands; ++band) {
        for (int patch = 0; patch < kPatchesPerView; ++patch) {
          std::uint64_t h = fnv1a("cell-feature");
          h = fnv1a_u64(seed, h);
          h = fnv1a_u64(static_cast<std::uint64_t>(n.x), h);
          h = fnv1a_u64(static_cast<std::uint64_t>(n.y), h);
          h = fnv1a_u64(static_cast<std::uint64_t>(sector), h);
          h = fnv1a_u64(static_cast<std::uint64_t>(band), h);
          h = fnv1a_u64(static_cast<std::uint64_t>(patch), h);
          h = mix64(h);
          FeatureTuple t;
          t.surface = static_cast<int>(h & 7);
          t.object = static_cast<int>((h >> 3) & 3);
          const bool use_room_color = ((h >> 8) & 1) == 0;
          t.color = use_room_color ? room_color
                                   : static_cast<int>((h >> 5) & 7);
          env.features_[slot++] = t;
        }
      }
    }
  }
  return env;
}

Environment Environment::from_parts(std::uint64_t seed, int grid_size,
                                    std::vector<int> room_colors,
                                    std::vector<FeatureTuple> features) {
  Environment env = Environment::generate(seed, grid_size);
  if (room_colors.size() != env.room_colors_.size() ||
      features.size() != env.features_.size())
    throw std::invalid_argument("Environment::from_parts: size mismatch");
  env.room_colors_ = std::move(room_colors);
  env.features_ = std::move(features);
  return env;
}

const std::vector<int>& Environment::neighbors(int node) const {
  return adjacency_.at(static_cast<std::size_t>(node));
}

int Environment::room_of(int node) const {
  return nodes_.at(static_cast<std::size_t>(node)).room;
}

int Environment::room_color(int room) const {
  return room_colors_.at(static_cast<std::size_t>(room));
}

FeatureTuple Environment::feature(int node, int sector, int band,
                                  int patch) const {
  const std::size_t slot =
      ((static_cast<std::size_t>(node) * kHeadingSectors + sector) *
           kElevationBands +
       band) *
          kPatchesPerView +
      patch;
  return features_.at(slot);
}

View Environment::view_at(int node, int sector, int band) const {
  View v;
  v.heading = sector_heading(sector);
  v.elevation = band_elevation(band);
  v.patches.reserve(kPatchesPerView);
  for (int p = 0; p < kPatchesPerView; ++p)
    v.patches.push_back(feature(node, sector, band, p));
  return v;
}

Panorama Environment::panorama(int node) const {
  if (node < 0 || node >= node_count())
    throw std::invalid_argument("panorama: node out of range");
  Panorama pano;
  pano.node = node;
  pano.views.reserve(kViewsPerPanorama);
  for (int sector = 0; sector < kHeadingSectors; ++sector)
    for (int band = 0; band < kElevationBands; ++band)
      pano.views.push_back(view_at(node, sector, band));
  return pano;
}

// --- Graph search ----------------------------------------------------------

std::vector<int> bfs_distances(const Environment& env, int from) {
  std::vector<int> dist(env.node_count(), -1);
  std::deque<int> queue;
  dist.at(from) = 0;
  queue.push_back(from);
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    for (int v : env.neighbors(u)) {
      if (dist[v] == -1) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

std::vector<int> shortest_path(const Environment& env, int a, int b) {
  std::vector<int> dist = bfs_distances(env, b);
  if (dist.at(a) == -1)
    throw std::invalid_argument("shortest_path: nodes not connected");
  std::vector<int> path{a};
  int cur = a;
  while (cur != b) {
    // Neighbors are stored in ascending id order, so taking the first one
    // that moves closer yields the lexicographically smallest shortest path.
    for (int v : env.neighbors(cur)) {
      if (dist[v] == dist[cur] - 1) {
        cur = v;
        break;
      }
    }
    path.push_back(cur);
  }
  return path;
}

// --- Candidates ------------------------------------------------------------

double heading_between(const Environment& env, int from, int to) {
  const NodeRecord& f = env.nodes().at(from);
  const NodeRecord& t = env.nodes().at(to);
  const int dx = t.x - f.x;
  const int dy = t.y - f.y;
  if (dx == 0 && dy == 1) return sector_heading(0);
  if (dx == 1 && dy == 0) return sector_heading(3);
  if (dx == 0 && dy == -1) return sector_heading(6);
  if (dx == -1 && dy == 0) return sector_heading(9);
  throw std::invalid_argument("heading_between: nodes are not adjacent");
}

int heading_sector(double heading) {
  const int sector =
      static_cast<int>(std::lround(heading / kSectorStep)) % kHeadingSectors;
  return sector < 0 ? sector + kHeadingSectors : sector;
}

std::vector<Candidate> navigable_candidates(const Environment& env, int node) {
  std::vector<Candidate> cands;
  for (int nbr : env.neighbors(node)) {
    Candidate c;
    c.node = nbr;
    c.view = env.view_at(node, heading_sector(heading_between(env, node, nbr)),
                         1);
    cands.push_back(std::move(c));
  }
  cands.push_back(Candidate{});  // STOP, placeholder view
  return cands;
}

// --- Vocabulary ------------------------------------------------------------

namespace {
std::vector<std::string> build_vocabulary() {
  std::vector<std::string> words = {"[pad]", "[cls]", "[mask]", "[sep]",
                                    "go",    "north", "east",   "south",
                                    "west",  "enter", "the",    "room",
                                    "stop"};
  for (const char* c : kColorWords) words.emplace_back(c);
  while (words.size() < kWordVocabSize) {
    std::ostringstream name;
    name << "w" << words.size();
    words.push_back(name.str());
  }
  return words;
}

const std::map<std::string, int>& word_index() {
  static const std::map<std::string, int> index = [] {
    std::map<std::string, int> m;
    const auto& words = word_vocabulary();
    for (int i = 0; i < static_cast<int>(words.size()); ++i) m[words[i]] = i;
    return m;
  }();
  return index;
}
}  // namespace

const std::vector<std::string>& word_vocabulary() {
  static const std::vector<std::string> words = build_vocabulary();
  return words;
}

int word_id(const std::string& word) {
  auto it = word_index().find(word);
  if (it == word_index().end())
    throw std::invalid_argument("word_id: unknown word '" + word + "'");
  return it->second;
}

const std::string& word_text(int id) {
  return word_vocabulary().at(static_cast<std::size_t>(id));
}

// --- Episodes --------------------------------------------------------------

std::vector<int> render_instruction(const Environment& env,
                                    const std::vector<int>& path) {
  std::vector<int> words;
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const NodeRecord& f = env.nodes().at(path[i]);
    const NodeRecord& t = env.nodes().at(path[i + 1]);
    words.push_back(word_id("go"));
    words.push_back(direction_word(t.x - f.x, t.y - f.y));
    if (f.room != t.room) {
      words.push_back(word_id("enter"));
      words.push_back(word_id("the"));
      words.push_back(word_id(kColorWords[env.room_color(t.room)]));
      words.push_back(word_id("room"));
    }
  }
  words.push_back(word_id("stop"));
  return words;
}

Episode sample_episode(const Environment& env, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  constexpr int kMinDistance = 3;
  constexpr int kMaxDistance = 6;
  constexpr int kMaxAttempts = 1000;

  std::vector<int> path;
  std::vector<int> instruction;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const int start = static_cast<int>(rng.next_below(env.node_count()));
    const std::vector<int> dist = bfs_distances(env, start);
    std::vector<int> goals;
    for (int v = 0; v < env.node_count(); ++v)
      if (dist[v] >= kMinDistance && dist[v] <= kMaxDistance)
        goals.push_back(v);
    if (goals.empty()) continue;
    const int goal = goals[rng.next_below(goals.size())];
    path = shortest_path(env, start, goal);
    instruction = render_instruction(env, path);
    // Paths crossing many room boundaries can over-run the instruction
    // budget; resample rather than truncate.
    if (static_cast<int>(instruction.size()) <= kMaxInstructionWords) break;
    path.clear();
  }
  if (path.empty())
    throw std::runtime_error("sample_episode: no admissible episode found");

  Episode ep;
  ep.path = std::move(path);
  ep.instruction = std::move(instruction);
  ep.panoramas.reserve(ep.path.size());
  ep.candidates.reserve(ep.path.size());
  ep.teacher_actions.reserve(ep.path.size());
  for (std::size_t i = 0; i < ep.path.size(); ++i) {
    ep.panoramas.push_back(env.panorama(ep.path[i]));
    ep.candidates.push_back(navigable_candidates(env, ep.path[i]));
    const auto& cands = ep.candidates.back();
    if (i + 1 < ep.path.size()) {
      int action = -1;
      for (int c = 0; c < static_cast<int>(cands.size()); ++c)
        if (cands[c].node == ep.path[i + 1]) action = c;
      if (action < 0)
        throw std::logic_error("sample_episode: path edge has no candidate");
      ep.teacher_actions.push_back(action);
    } else {
      ep.teacher_actions.push_back(static_cast<int>(cands.size()) - 1);
    }
  }
  return ep;
}

double facing_heading(const Episode& ep, int step) {
  if (ep.path.size() < 2) return 0.0;
  // Arrival heading: the heading of the candidate chosen at the previous
  // step.  The first step faces the edge it is about to take.
  const int src = step == 0 ? 0 : step - 1;
  const int action = ep.teacher_actions.at(src);
  return ep.candidates.at(src).at(action).view.heading;
}

const View& teacher_target_view(const Episode& ep, int step) {
  const int action = ep.teacher_actions.at(step);
  const auto& cands = ep.candidates.at(step);
  if (cands.at(action).node >= 0) return cands.at(action).view;
  // STOP: the eye-level view along the current facing.
  const int sector = heading_sector(facing_heading(ep, step));
  return ep.panoramas.at(step).views.at(view_index(sector, 1));
}

// --- Serialization ---------------------------------------------------------

std::string environment_to_json(const Environment& env) {
  nlohmann::json j;
  j["schema"] = kWorldSchema;
  j["seed"] = env.seed();
  j["grid_size"] = env.grid_size();
  j["room_colors"] = env.room_colors();
  std::vector<int> packed;
  packed.reserve(env.raw_features().size());
  for (const FeatureTuple& t : env.raw_features())
    packed.push_back(tuple_index(t));
  j["features"] = std::move(packed);
  return j.dump();
}

Environment environment_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("environment_from_json: ") + e.what());
  }
  if (!j.contains("schema") || j["schema"] != kWorldSchema)
    throw IoError("environment_from_json: unsupported schema");
  const auto packed = j.at("features").get<std::vector<int>>();
  std::vector<FeatureTuple> features;
  features.reserve(packed.size());
  for (int idx : packed) features.push_back(tuple_from_index(idx));
  return Environment::from_parts(
      j.at("seed").get<std::uint64_t>(), j.at("grid_size").get<int>(),
      j.at("room_colors").get<std::vector<int>>(), std::move(features));
}

void save_environment(const Environment& env, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_environment: cannot open " + path);
  out << environment_to_json(env);
  if (!out) throw IoError("save_environment: write failed for " + path);
}

Environment load_environment(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_environment: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return environment_from_json(buf.str());
}

}  // namespace semnav
