#include "dres/superpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <tuple>

#include "dres/error.hpp"
#include "dres/kdtree.hpp"

namespace dres {

namespace {

struct Edge {
  double weight;
  int a;  // a < b
  int b;

  bool operator<(const Edge& o) const {
    return std::tie(weight, a, b) < std::tie(o.weight, o.a, o.b);
  }
};

class DisjointSets {
public:
  explicit DisjointSets(int n) : parent_(static_cast<std::size_t>(n)), size_(static_cast<std::size_t>(n), 1),
                                 internal_(static_cast<std::size_t>(n), 0.0), count_(n) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }

  int find(int x) {
    while (parent_[static_cast<std::size_t>(x)] != x) {
      auto& p = parent_[static_cast<std::size_t>(x)];
      p = parent_[static_cast<std::size_t>(p)];
      x = p;
    }
    return x;
  }

  /// Joins the sets of a and b; the smaller root index becomes the representative.
  int join(int a, int b, double weight) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (b < a) std::swap(a, b);
    parent_[static_cast<std::size_t>(b)] = a;
    size_[static_cast<std::size_t>(a)] += size_[static_cast<std::size_t>(b)];
    internal_[static_cast<std::size_t>(a)] =
        std::max({internal_[static_cast<std::size_t>(a)], internal_[static_cast<std::size_t>(b)], weight});
    --count_;
    return a;
  }

  int size(int root) const { return size_[static_cast<std::size_t>(root)]; }
  double internal(int root) const { return internal_[static_cast<std::size_t>(root)]; }
  int count() const { return count_; }

private:
  std::vector<int> parent_;
  std::vector<int> size_;
  std::vector<double> internal_;
  int count_;
};

double edge_weight(const Point& p, const Point& q, double color_weight) {
  const double ds = std::sqrt((p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y) +
                              (p.z - q.z) * (p.z - q.z));
  const double dc = std::sqrt((p.r - q.r) * (p.r - q.r) + (p.g - q.g) * (p.g - q.g) +
                              (p.b - q.b) * (p.b - q.b));
  return ds + color_weight * dc;
}

/// Adds the shortest link from every component to a foreign point until the graph is
/// connected (Boruvka rounds).
void connect_components(const Scene& scene, const KdTree& tree, double color_weight,
                        std::vector<Edge>& edges) {
  const int n = static_cast<int>(scene.size());
  DisjointSets sets(n);
  for (const auto& e : edges) sets.join(e.a, e.b, 0.0);
  while (sets.count() > 1) {
    std::vector<int> root(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) root[static_cast<std::size_t>(i)] = sets.find(i);
    // best link per component: (spatial distance, a, b)
    std::vector<std::tuple<double, int, int>> best(static_cast<std::size_t>(n),
                                                   {std::numeric_limits<double>::infinity(), -1, -1});
    for (int i = 0; i < n; ++i) {
      const int r = root[static_cast<std::size_t>(i)];
      const int j = tree.nearest_if(tree.point(i), [&](int p) { return root[static_cast<std::size_t>(p)] != r; });
      const auto& pi = tree.point(i);
      const auto& pj = tree.point(j);
      const double d = (pi[0] - pj[0]) * (pi[0] - pj[0]) + (pi[1] - pj[1]) * (pi[1] - pj[1]) +
                       (pi[2] - pj[2]) * (pi[2] - pj[2]);
      const std::tuple<double, int, int> cand{d, std::min(i, j), std::max(i, j)};
      if (cand < best[static_cast<std::size_t>(r)]) best[static_cast<std::size_t>(r)] = cand;
    }
    for (int r = 0; r < n; ++r) {
      const auto& [d, a, b] = best[static_cast<std::size_t>(r)];
      if (a < 0) continue;
      const auto& pts = scene.points;
      const Edge e{edge_weight(pts[static_cast<std::size_t>(a)], pts[static_cast<std::size_t>(b)], color_weight), a, b};
      if (sets.find(a) != sets.find(b)) {
        sets.join(a, b, 0.0);
      }
      edges.push_back(e);
    }
  }
}

}  // namespace

std::vector<int> SuperpointPartition::sizes() const {
  std::vector<int> out(static_cast<std::size_t>(num_superpoints), 0);
  for (int s : assignment) ++out[static_cast<std::size_t>(s)];
  return out;
}

SuperpointPartition SuperpointPartition::identity(std::string scene_id, std::size_t num_points) {
  SuperpointPartition p;
  p.scene_id = std::move(scene_id);
  p.assignment.resize(num_points);
  std::iota(p.assignment.begin(), p.assignment.end(), 0);
  p.num_superpoints = static_cast<int>(num_points);
  return p;
}

std::string OversegConfig::hash() const {
  char canon[256];
  std::snprintf(canon, sizeof canon, "knn=%d;color_weight=%.17g;threshold=%.17g;min_size=%d;target_max=%d",
                knn, color_weight, threshold, min_size, target_max_superpoints);
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (const char* c = canon; *c; ++c) {
    h ^= static_cast<unsigned char>(*c);
    h *= 1099511628211ULL;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

SuperpointPartition oversegment(const Scene& scene, const OversegConfig& cfg) {
  const int n = static_cast<int>(scene.size());
  if (n == 0) throw Error(ErrorCode::DegenerateScene, "scene " + scene.scene_id + " has no points");
  if (n == 1) return SuperpointPartition::identity(scene.scene_id, 1);

  const auto& first = scene.points.front();
  const bool coincident = std::all_of(scene.points.begin(), scene.points.end(), [&](const Point& p) {
    return p.x == first.x && p.y == first.y && p.z == first.z;
  });
  if (coincident) throw Error(ErrorCode::DegenerateScene, "all points of " + scene.scene_id + " coincide");

  std::vector<KdTree::Vec3> coords;
  coords.reserve(scene.size());
  for (const auto& p : scene.points) coords.push_back({p.x, p.y, p.z});
  const KdTree tree(std::move(coords));

  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j : tree.knn(i, cfg.knn)) {
      const int a = std::min(i, j), b = std::max(i, j);
      edges.push_back({edge_weight(scene.points[static_cast<std::size_t>(a)],
                                   scene.points[static_cast<std::size_t>(b)], cfg.color_weight),
                       a, b});
    }
  }
  connect_components(scene, tree, cfg.color_weight, edges);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](const Edge& x, const Edge& y) { return x.a == y.a && x.b == y.b; }),
              edges.end());

  DisjointSets sets(n);
  // Adaptive threshold merge.
  for (const auto& e : edges) {
    const int ra = sets.find(e.a), rb = sets.find(e.b);
    if (ra == rb) continue;
    const double ta = sets.internal(ra) + cfg.threshold / sets.size(ra);
    const double tb = sets.internal(rb) + cfg.threshold / sets.size(rb);
    if (e.weight <= std::min(ta, tb)) sets.join(ra, rb, e.weight);
  }
  // Absorb undersized regions.
  for (const auto& e : edges) {
    const int ra = sets.find(e.a), rb = sets.find(e.b);
    if (ra != rb && (sets.size(ra) < cfg.min_size || sets.size(rb) < cfg.min_size)) {
      sets.join(ra, rb, e.weight);
    }
  }
  // Cap the region count.
  if (cfg.target_max_superpoints > 0) {
    for (const auto& e : edges) {
      if (sets.count() <= cfg.target_max_superpoints) break;
      sets.join(e.a, e.b, e.weight);
    }
  }

  SuperpointPartition part;
  part.scene_id = scene.scene_id;
  part.assignment.resize(static_cast<std::size_t>(n));
  std::vector<int> label_of_root(static_cast<std::size_t>(n), -1);
  for (int i = 0; i < n; ++i) {
    auto& label = label_of_root[static_cast<std::size_t>(sets.find(i))];
    if (label < 0) label = part.num_superpoints++;
    part.assignment[static_cast<std::size_t>(i)] = label;
  }
  return part;
}

Matrix sp_pool(const Matrix& point_features, const SuperpointPartition& part) {
  if (static_cast<std::size_t>(point_features.rows()) != part.num_points()) {
    throw Error(ErrorCode::ShapeMismatch, "sp_pool: " + std::to_string(point_features.rows()) +
                                              " feature rows for " +
                                              std::to_string(part.num_points()) + " points");
  }
  Matrix pooled = Matrix::Zero(part.num_superpoints, point_features.cols());
  std::vector<double> counts(static_cast<std::size_t>(part.num_superpoints), 0.0);
  for (std::size_t i = 0; i < part.num_points(); ++i) {
    const int s = part.assignment[i];
    pooled.row(s) += point_features.row(static_cast<Eigen::Index>(i));
    counts[static_cast<std::size_t>(s)] += 1.0;
  }
  for (int s = 0; s < part.num_superpoints; ++s) {
    if (counts[static_cast<std::size_t>(s)] > 0) pooled.row(s) /= counts[static_cast<std::size_t>(s)];
  }
  return pooled;
}

ProjectedFeatures project_features(const Matrix& pooled, const Matrix& w1, const Matrix& w2) {
  if (w1.rows() != pooled.cols() || w2.rows() != pooled.cols() || w1.cols() != w2.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "project_features: pooled width " +
                                              std::to_string(pooled.cols()) + ", W1 " +
                                              std::to_string(w1.rows()) + "x" + std::to_string(w1.cols()) +
                                              ", W2 " + std::to_string(w2.rows()) + "x" +
                                              std::to_string(w2.cols()));
  }
  return {pooled * w1, pooled * w2};
}

PointMask broadcast_mask(const SuperpointBits& spmask, const SuperpointPartition& part) {
  if (static_cast<int>(spmask.size()) != part.num_superpoints) {
    throw Error(ErrorCode::ShapeMismatch, "broadcast_mask: " + std::to_string(spmask.size()) +
                                              " bits for " + std::to_string(part.num_superpoints) +
                                              " superpoints");
  }
  PointMask out(part.scene_id, part.num_points());
  for (std::size_t i = 0; i < part.num_points(); ++i) {
    if (spmask[static_cast<std::size_t>(part.assignment[i])]) out.set(i);
  }
  return out;
}

SuperpointBits pool_gt_mask(const PointMask& gt, const SuperpointPartition& part, double threshold) {
  if (gt.size() != part.num_points() || gt.scene_id() != part.scene_id) {
    throw Error(ErrorCode::ShapeMismatch, "pool_gt_mask: mask over " + gt.scene_id() + "[" +
                                              std::to_string(gt.size()) + "], partition over " +
                                              part.scene_id + "[" + std::to_string(part.num_points()) + "]");
  }
  std::vector<int> positive(static_cast<std::size_t>(part.num_superpoints), 0);
  for (std::size_t i = 0; i < part.num_points(); ++i) {
    if (gt.test(i)) ++positive[static_cast<std::size_t>(part.assignment[i])];
  }
  const auto sizes = part.sizes();
  SuperpointBits out(static_cast<std::size_t>(part.num_superpoints));
  for (std::size_t s = 0; s < out.size(); ++s) {
    out[s] = static_cast<double>(positive[s]) / static_cast<double>(sizes[s]) >= threshold;
  }
  return out;
}

void write_partition(const std::filesystem::path& path, const SuperpointPartition& part,
                     const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
  out << "# dres superpoints v1\n";
  out << "scene_id " << part.scene_id << '\n';
  out << "num_points " << part.num_points() << '\n';
  out << "num_superpoints " << part.num_superpoints << '\n';
  out << "config_hash " << config_hash << '\n';
  for (std::size_t i = 0; i < part.num_points(); ++i) out << i << ' ' << part.assignment[i] << '\n';
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
}

std::pair<SuperpointPartition, std::string> read_partition(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileUnreadable, path.string());
  SuperpointPartition part;
  std::string hash;
  std::size_t num_points = 0;
  std::string line;
  std::size_t line_no = 0;
  auto malformed = [&](const std::string& why) {
    return Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::string key;
    if (line.rfind("scene_id", 0) == 0) {
      row >> key >> part.scene_id;
    } else if (line.rfind("num_points", 0) == 0) {
      row >> key >> num_points;
      part.assignment.assign(num_points, -1);
    } else if (line.rfind("num_superpoints", 0) == 0) {
      row >> key >> part.num_superpoints;
    } else if (line.rfind("config_hash", 0) == 0) {
      row >> key >> hash;
    } else {
      std::size_t i = 0;
      int s = 0;
      if (!(row >> i >> s)) throw malformed("expected 'point_index superpoint_index'");
      if (i >= num_points || s < 0 || s >= part.num_superpoints) throw malformed("index out of range");
      part.assignment[i] = s;
    }
  }
  if (std::find(part.assignment.begin(), part.assignment.end(), -1) != part.assignment.end()) {
    throw malformed("unassigned points");
  }
  const auto sizes = part.sizes();
  if (std::find(sizes.begin(), sizes.end(), 0) != sizes.end()) throw malformed("empty superpoint");
  return {std::move(part), std::move(hash)};
}

}  // namespace dres
