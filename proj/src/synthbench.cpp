#include "dres/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include "dres/error.hpp"
#include "dres/kdtree.hpp"
#include "dres/rng.hpp"

namespace dres {

namespace {

constexpr std::uint64_t kDescriptionSalt = 0x6465736372697074ULL;
constexpr std::uint64_t kProjectionSalt = 0x70726f6a65637421ULL;

struct PlacedObject {
  int category;
  int cell;
};

struct Layout {
  std::vector<PlacedObject> objects;
};

/// Categories and cells for scene `index`, drawn from `rng` (which then continues into point sampling).
Layout make_layout(const SynthConfig& cfg, Rng& rng) {
  Layout layout;
  const int n_objects = static_cast<int>(rng.uniform_int(cfg.objects_per_scene.min, cfg.objects_per_scene.max));
  const int n_cells = cfg.grid_size * cfg.grid_size;
  std::vector<int> cells(static_cast<std::size_t>(n_cells));
  std::iota(cells.begin(), cells.end(), 0);
  rng.shuffle(cells.begin(), cells.end());
  std::vector<int> cats(cfg.vocabulary.size());
  std::iota(cats.begin(), cats.end(), 0);
  rng.shuffle(cats.begin(), cats.end());

  const bool adjacent_pair = n_objects >= 2 && rng.bernoulli(cfg.adjacent_same_category_fraction);
  std::vector<bool> used(static_cast<std::size_t>(n_cells), false);
  std::size_t next_cell = 0;
  auto take_cell = [&] {
    while (used[static_cast<std::size_t>(cells[next_cell])]) ++next_cell;
    const int c = cells[next_cell];
    used[static_cast<std::size_t>(c)] = true;
    return c;
  };
  std::size_t next_cat = 0;
  for (int o = 0; o < n_objects; ++o) {
    if (adjacent_pair && o == 1) {
      // Same category as object 0, in a free neighboring cell when one exists.
      const int base = layout.objects[0].cell;
      const int bx = base % cfg.grid_size, by = base / cfg.grid_size;
      int chosen = -1;
      const int dirs[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
      for (const auto& d : dirs) {
        const int x = bx + d[0], y = by + d[1];
        if (x < 0 || y < 0 || x >= cfg.grid_size || y >= cfg.grid_size) continue;
        const int c = y * cfg.grid_size + x;
        if (!used[static_cast<std::size_t>(c)]) {
          chosen = c;
          break;
        }
      }
      if (chosen >= 0) {
        used[static_cast<std::size_t>(chosen)] = true;
        layout.objects.push_back({layout.objects[0].category, chosen});
        continue;
      }
    }
    const int cat = cats[next_cat % cats.size()];
    ++next_cat;
    layout.objects.push_back({cat, take_cell()});
  }
  return layout;
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

std::string relation(const std::array<double, 3>& from, const std::array<double, 3>& to) {
  const double dx = to[0] - from[0];
  const double dy = to[1] - from[1];
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? "to the left of" : "to the right of";
  return dy > 0 ? "in front of" : "behind";
}

const std::vector<std::string>& fillers() {
  static const std::vector<std::string> f{
      "the room is bright and the walls are painted in a pale shade",
      "there is a window on the far side which lets in plenty of light",
      "the floor is made of wood and looks quite clean",
      "it is placed in a quiet corner away from the door",
      "you can see it easily when you walk into the space",
      "several small items are scattered around on the ground",
  };
  return f;
}

}  // namespace

std::vector<Category> default_vocabulary() {
  return {
      {"chair", "chairs", {0.9, 0.1, 0.1}},
      {"table", "tables", {0.1, 0.9, 0.1}},
      {"sofa", "sofas", {0.1, 0.1, 0.9}},
      {"lamp", "lamps", {0.9, 0.9, 0.1}},
      {"bed", "beds", {0.9, 0.1, 0.9}},
      {"cabinet", "cabinets", {0.1, 0.9, 0.9}},
      {"washing machine", "washing machines", {0.9, 0.9, 0.9}},
      {"trash can", "trash cans", {0.1, 0.1, 0.1}},
  };
}

void SynthConfig::validate() const {
  auto bad = [](const std::string& why) { return Error(ErrorCode::ConfigInfeasible, why); };
  for (const auto& [name, r] : {std::pair{"objects_per_scene", objects_per_scene},
                                std::pair{"points_per_object", points_per_object},
                                std::pair{"phrases_per_description", phrases_per_description}}) {
    if (r.min < 1 || r.max < r.min) throw bad(std::string(name) + " range is empty");
  }
  if (num_scenes < 0 || descriptions_per_scene < 0 || floor_points < 0) throw bad("negative count");
  for (double f : {long_text_fraction, adjacent_same_category_fraction, sentence_level_fraction}) {
    if (!(f >= 0.0 && f <= 1.0)) throw bad("fractions must lie in [0,1]");
  }
  if (grid_size < 1 || objects_per_scene.max > grid_size * grid_size) {
    throw bad("arena has " + std::to_string(grid_size * grid_size) + " cells for up to " +
              std::to_string(objects_per_scene.max) + " objects");
  }
  if (vocabulary.empty()) throw bad("empty vocabulary");
  if (!(object_size > 0) || !(cluster_gap >= 0)) throw bad("object_size must be positive");
}

std::string synth_scene_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth%04d", index);
  return buf;
}

Scene gen_scene(const SynthConfig& cfg, int index) {
  cfg.validate();
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  const Layout layout = make_layout(cfg, rng);
  Scene scene;
  scene.scene_id = synth_scene_id(index);
  const double pitch = cfg.object_size + cfg.cluster_gap;
  for (std::size_t o = 0; o < layout.objects.size(); ++o) {
    const auto& obj = layout.objects[o];
    const auto& base = cfg.vocabulary[static_cast<std::size_t>(obj.category)].color;
    std::array<double, 3> color{};
    for (int ch = 0; ch < 3; ++ch) color[static_cast<std::size_t>(ch)] = clamp01(base[static_cast<std::size_t>(ch)] + rng.uniform(-cfg.color_jitter, cfg.color_jitter));
    const double sx = cfg.object_size * rng.uniform(0.6, 1.0);
    const double sy = cfg.object_size * rng.uniform(0.6, 1.0);
    const double sz = cfg.object_size * rng.uniform(0.5, 1.0);
    const double x0 = (obj.cell % cfg.grid_size) * pitch + (cfg.object_size - sx) / 2;
    const double y0 = (obj.cell / cfg.grid_size) * pitch + (cfg.object_size - sy) / 2;
    const int n = static_cast<int>(rng.uniform_int(cfg.points_per_object.min, cfg.points_per_object.max));
    for (int i = 0; i < n; ++i) {
      Point p;
      p.x = x0 + rng.uniform() * sx;
      p.y = y0 + rng.uniform() * sy;
      p.z = rng.uniform() * sz;
      p.r = clamp01(color[0] + rng.uniform(-0.02, 0.02));
      p.g = clamp01(color[1] + rng.uniform(-0.02, 0.02));
      p.b = clamp01(color[2] + rng.uniform(-0.02, 0.02));
      scene.points.push_back(p);
      scene.instance_labels.push_back(static_cast<std::int64_t>(o));
    }
  }
  const double extent = cfg.grid_size * pitch;
  for (int i = 0; i < cfg.floor_points; ++i) {
    Point p;
    p.x = rng.uniform(0, extent);
    p.y = rng.uniform(0, extent);
    p.z = -0.05;
    p.r = p.g = p.b = 0.5;
    scene.points.push_back(p);
    scene.instance_labels.push_back(kUnlabeled);
  }
  return scene;
}

std::vector<AnnotatedDescription> gen_dataset(const SynthConfig& cfg, const std::vector<Scene>& scenes) {
  cfg.validate();
  std::vector<AnnotatedDescription> out;
  for (std::size_t index = 0; index < scenes.size(); ++index) {
    const Scene& scene = scenes[index];
    if (scene.scene_id != synth_scene_id(static_cast<int>(index))) {
      throw Error(ErrorCode::ConfigInfeasible, "scene " + scene.scene_id + " is not synthetic scene " +
                                                   std::to_string(index));
    }
    Rng layout_rng(mix_seed(cfg.seed, index));
    const Layout layout = make_layout(cfg, layout_rng);

    // Instances per category, and instance centroids.
    std::map<int, std::vector<std::int64_t>> by_category;
    for (std::size_t o = 0; o < layout.objects.size(); ++o) {
      by_category[layout.objects[o].category].push_back(static_cast<std::int64_t>(o));
    }
    std::vector<std::array<double, 3>> centroid(layout.objects.size(), {0, 0, 0});
    std::vector<int> counts(layout.objects.size(), 0);
    for (std::size_t i = 0; i < scene.size(); ++i) {
      const auto label = scene.instance_labels[i];
      if (label < 0) continue;
      auto& c = centroid[static_cast<std::size_t>(label)];
      c[0] += scene.points[i].x;
      c[1] += scene.points[i].y;
      c[2] += scene.points[i].z;
      ++counts[static_cast<std::size_t>(label)];
    }
    for (std::size_t o = 0; o < centroid.size(); ++o) {
      for (auto& v : centroid[o]) v /= std::max(1, counts[o]);
    }
    std::vector<int> present;
    for (const auto& [cat, _] : by_category) present.push_back(cat);
    const int max_k = std::min<int>(cfg.phrases_per_description.max, static_cast<int>(present.size()));
    if (max_k < cfg.phrases_per_description.min) {
      throw Error(ErrorCode::ConfigInfeasible,
                  scene.scene_id + " has " + std::to_string(present.size()) + " categories, need " +
                      std::to_string(cfg.phrases_per_description.min) + " phrases");
    }

    Rng rng(mix_seed(cfg.seed ^ kDescriptionSalt, index));
    for (int j = 0; j < cfg.descriptions_per_scene; ++j) {
      const int k = static_cast<int>(rng.uniform_int(cfg.phrases_per_description.min, max_k));
      auto order = present;
      rng.shuffle(order.begin(), order.end());
      order.resize(static_cast<std::size_t>(k));

      AnnotatedDescription d;
      d.scene_id = scene.scene_id;
      d.description_id = scene.scene_id + "_" + std::to_string(j);
      auto push_words = [&](const std::string& text) {
        for (auto& w : tokenize(text)) d.tokens.push_back(std::move(w));
      };
      static const char* openers[] = {"find", "locate", "look at", "there is"};
      push_words(openers[rng.uniform_int(0, 3)]);
      for (int p = 0; p < k; ++p) {
        const int cat = order[static_cast<std::size_t>(p)];
        const auto& ids = by_category[cat];
        if (p > 0) {
          const auto& prev = centroid[static_cast<std::size_t>(by_category[order[static_cast<std::size_t>(p - 1)]].front())];
          const auto& cur = centroid[static_cast<std::size_t>(ids.front())];
          push_words(p > 1 ? "and" : by_category[order[0]].size() > 1 ? "that are" : "that is");
          push_words(relation(prev, cur));
        }
        const auto& vocab = cfg.vocabulary[static_cast<std::size_t>(cat)];
        PhraseTarget phrase;
        phrase.start = d.length();
        push_words("the");
        push_words(ids.size() > 1 ? vocab.plural : vocab.singular);
        phrase.end = d.length() - 1;
        phrase.head_index = phrase.end;
        phrase.target_ids = {ids.begin(), ids.end()};
        d.phrases.push_back(std::move(phrase));
      }
      push_words(".");
      if (rng.bernoulli(cfg.long_text_fraction)) {
        while (!is_long(d.length())) {
          push_words(fillers()[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(fillers().size()) - 1))]);
          push_words(".");
        }
      }
      if (rng.bernoulli(cfg.sentence_level_fraction)) {
        d.sentence_target = make_sentence_target(d.length(), d.phrases.front().target_ids);
      }
      out.push_back(std::move(d));
    }
  }
  return out;
}

Matrix point_features(const Scene& scene, const PointFeatureProvider& provider) {
  if (provider.kind == PointFeatureProvider::Kind::FileLoaded) {
    const auto path = provider.table_dir / (scene.scene_id + ".feat");
    if (!std::filesystem::exists(path)) throw Error(ErrorCode::FeatureFileMissing, path.string());
    Matrix m = read_feature_table(path, scene.scene_id);
    if (static_cast<std::size_t>(m.rows()) != scene.size() || m.cols() != provider.dims) {
      throw Error(ErrorCode::ShapeMismatch, path.string() + " is " + std::to_string(m.rows()) + "x" +
                                                std::to_string(m.cols()));
    }
    return m;
  }

  constexpr int kRaw = 14;
  const auto n = static_cast<Eigen::Index>(scene.size());
  Matrix raw(n, kRaw);
  std::vector<KdTree::Vec3> coords;
  coords.reserve(scene.size());
  for (const auto& p : scene.points) coords.push_back({p.x, p.y, p.z});
  const KdTree tree(coords);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = scene.points[static_cast<std::size_t>(i)];
    auto nb = tree.knn(static_cast<int>(i), provider.neighbors);
    std::sort(nb.begin(), nb.end(), [&](int a, int b) {
      const auto& u = scene.points[static_cast<std::size_t>(a)];
      const auto& v = scene.points[static_cast<std::size_t>(b)];
      return std::tie(u.x, u.y, u.z, u.r, u.g, u.b) < std::tie(v.x, v.y, v.z, v.r, v.g, v.b);
    });
    double off[3] = {0, 0, 0}, col[3] = {p.r, p.g, p.b}, spread = 0;
    for (int j : nb) {
      const auto& q = scene.points[static_cast<std::size_t>(j)];
      off[0] += q.x - p.x;
      off[1] += q.y - p.y;
      off[2] += q.z - p.z;
      spread += (q.x - p.x) * (q.x - p.x) + (q.y - p.y) * (q.y - p.y) + (q.z - p.z) * (q.z - p.z);
      col[0] += q.r;
      col[1] += q.g;
      col[2] += q.b;
    }
    const double cnt = static_cast<double>(nb.size());
    for (double& v : off) v = cnt > 0 ? v / cnt : 0.0;
    for (double& v : col) v /= cnt + 1.0;
    spread = cnt > 0 ? std::sqrt(spread / cnt) : 0.0;
    raw.row(i) << p.x, p.y, p.z, p.r, p.g, p.b, off[0], off[1], off[2], spread, col[0], col[1], col[2], 1.0;
  }
  Rng rng(mix_seed(provider.seed, kProjectionSalt));
  Matrix projection(kRaw, provider.dims);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kRaw));
  for (Eigen::Index k = 0; k < projection.size(); ++k) projection.data()[k] = rng.normal() * scale;
  Matrix out(n, provider.dims);
  for (Eigen::Index i = 0; i < n; ++i) out.row(i).noalias() = raw.row(i) * projection;
  return out;
}

Matrix token_features(const std::vector<std::string>& tokens, const TokenFeatureProvider& provider) {
  const auto rows = static_cast<Eigen::Index>(tokens.size() + 2);
  Matrix out(rows, provider.dims);
  auto embed = [&](Eigen::Index row, std::string_view key) {
    Rng rng(mix_seed(provider.seed, stable_hash(key)));
    for (Eigen::Index c = 0; c < provider.dims; ++c) out(row, c) = rng.normal();
    out.row(row).normalize();
  };
  // Specials use a key no whitespace-split token can produce.
  embed(0, "\x01special cls");
  for (std::size_t t = 0; t < tokens.size(); ++t) embed(static_cast<Eigen::Index>(t + 1), tokens[t]);
  embed(rows - 1, "\x01special end");
  return out;
}

void write_feature_table(const std::filesystem::path& path, const std::string& scene_id,
                         const Matrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
  out << "# dres features v1\n";
  out << "scene_id " << scene_id << '\n';
  out << "num_points " << features.rows() << '\n';
  out << "dims " << features.cols() << '\n';
  char buf[32];
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", features(r, c));
      out << (c ? " " : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::PathUnwritable, path.string());
}

Matrix read_feature_table(const std::filesystem::path& path, const std::string& expected_scene_id) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FeatureFileMissing, path.string());
  std::string line, key, scene_id;
  Eigen::Index rows = -1, cols = -1;
  Matrix m;
  Eigen::Index r = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    if (line.rfind("scene_id", 0) == 0) {
      row >> key >> scene_id;
    } else if (line.rfind("num_points", 0) == 0) {
      row >> key >> rows;
    } else if (line.rfind("dims", 0) == 0) {
      row >> key >> cols;
      if (rows < 0 || cols < 0) throw Error(ErrorCode::MalformedRecord, path.string() + ": header order");
      m.resize(rows, cols);
    } else {
      if (r >= rows) throw Error(ErrorCode::MalformedRecord, path.string() + ": too many rows");
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (!(row >> m(r, c))) throw Error(ErrorCode::MalformedRecord, path.string() + ": short row");
      }
      ++r;
    }
  }
  if (scene_id != expected_scene_id) {
    throw Error(ErrorCode::MalformedRecord, path.string() + ": scene_id " + scene_id + ", expected " +
                                                expected_scene_id);
  }
  if (r != rows) throw Error(ErrorCode::MalformedRecord, path.string() + ": missing rows");
  return m;
}

}  // namespace dres
