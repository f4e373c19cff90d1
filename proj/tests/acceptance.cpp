// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "hqf/hqf.hpp"
#include "oracles.hpp"
#include "toy.hpp"

using namespace hqf;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HQF_CLI_PATH) + " " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// 1 ------------------------------------------------------------------------
Outcome mask_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 g(101);
  std::uniform_int_distribution<std::size_t> len(1, 64);
  std::size_t bad = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const auto types = oracle::random_types(g, len(g));
    const auto m = build_cross_type_mask(types);
    for (std::size_t i = 0; i < types.size(); ++i) {
      for (std::size_t j = 0; j < types.size(); ++j) {
        const bool open = i == j || types[i] != types[j];
        bad += m.blocked(i, j) == open;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 1.0, std::to_string(bad) + " mismatched entries, " + fmt(secs) + " s"};
}

// 2 ------------------------------------------------------------------------
Outcome masked_attention_oracle() {
  std::mt19937_64 g(202);
  std::uniform_int_distribution<std::size_t> len(1, 32), width(1, 8), head_pick(0, 3);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t heads = std::size_t{1} << head_pick(g);
    const std::size_t d = 8 * width(g);  // divisible by every head count, ≤ 64
    const std::size_t n = len(g);
    const Matrix q = oracle::random_matrix(g, n, d);
    const auto types = oracle::random_types(g, n);
    const auto mha = oracle::random_mha(g, d);
    const auto ffn = oracle::random_ffn(g, d);
    const auto got = qmix_attention(q, types, mha, ffn, heads);
    const auto want = oracle::qmix(oracle::to_rows(q), types, mha, ffn, heads);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, oracle::rel_err(got.queries(i, k), want.out[i][k]));
      for (std::size_t j = 0; j < n; ++j) worst = std::max(worst, oracle::rel_err(got.attn(i, j), want.attn[i][j]));
    }
  }
  return {worst <= 1e-9, "max relative error " + fmt(worst)};
}

// 3 ------------------------------------------------------------------------
Outcome same_type_suppression() {
  const RunConfig c = resolve_run_config("paper-default", std::nullopt, {});
  const PreparedInputs in = prepare_inputs(c);
  const auto layers = decode(in.features, in.queries, weights_for(c), c.decoder, {false});
  const auto& types = in.queries.types;
  double worst = 0.0;
  bool all_layers = layers.size() == c.decoder.layers;
  for (const auto& lo : layers) {
    if (!lo.qmix_attn) {
      all_layers = false;
      continue;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < types.size(); ++i) {
      for (std::size_t j = 0; j < types.size(); ++j) {
        if (i != j && types[i] == types[j]) sum += (*lo.qmix_attn)(i, j);
      }
    }
    worst = std::max(worst, sum);
  }
  return {all_layers && worst <= 1e-12,
          std::to_string(layers.size()) + " layers, " + std::to_string(types.size()) +
              " queries, max same-type mass " + fmt(worst)};
}

// 4 ------------------------------------------------------------------------
Outcome qswap_constraints() {
  std::mt19937_64 g(404);
  std::uniform_real_distribution<double> coord(-12.0, 12.0), size(0.5, 5.0), u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> count(2, 16);
  std::normal_distribution<double> s(0.0, 1.0);
  const QSwapConfig defaults;
  std::size_t violations = 0, shared_total = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t n = count(g);
    std::vector<Vec3> pos(n);
    std::vector<BoxState> boxes(n);
    std::vector<SampleSet> base(n);
    Matrix aff(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = {coord(g), coord(g), 0.0};
      boxes[i] = {size(g), size(g), 1.5, 0.0};
      for (std::size_t k = 0; k < defaults.k_base; ++k) {
        SamplePoint p;
        p.offset = {s(g), s(g)};
        p.score = s(g);
        p.owner = p.source = i;
        base[i].points.push_back(p);
      }
      double z = 0;
      for (std::size_t j = 0; j < n; ++j) z += aff(i, j) = u(g);
      for (std::size_t j = 0; j < n; ++j) aff(i, j) /= z;
    }
    for (QSwapMode mode : {QSwapMode::append, QSwapMode::replace}) {
      QSwapConfig cfg;
      cfg.mode = mode;
      std::vector<std::vector<std::size_t>> nbrs(n);
      for (std::size_t i = 0; i < n; ++i) nbrs[i] = select_neighbors(i, aff.row(i), boxes, pos, cfg);
      const auto out = swap_samples(base, pos, nbrs, aff, cfg);
      for (std::size_t i = 0; i < n; ++i) {
        // Top-N affinity set by a full sort.
        std::vector<std::size_t> order;
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i) order.push_back(j);
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
          return aff(i, a) > aff(i, b) || (aff(i, a) == aff(i, b) && a < b);
        });
        order.resize(std::min(order.size(), cfg.num_neighbors));
        const std::set<std::size_t> top(order.begin(), order.end());
        for (std::size_t j : nbrs[i]) violations += !top.count(j);

        const double r = 1.5 * std::sqrt(boxes[i].w * boxes[i].w + boxes[i].l * boxes[i].l);
        std::map<std::size_t, std::size_t> per;
        std::size_t shared = 0;
        for (const auto& p : out[i].points) {
          if (p.origin != SampleOrigin::shared) continue;
          ++shared;
          ++per[p.source];
          violations += !top.count(p.source);
          violations += std::hypot(pos[i][0] - pos[p.source][0], pos[i][1] - pos[p.source][1]) > r;
        }
        for (const auto& [src, k] : per) violations += k > 2;
        violations += shared > 4;
        violations += mode == QSwapMode::append ? out[i].points.size() > 24 : out[i].points.size() != 20;
        shared_total += shared;
      }
    }
  }
  return {violations == 0 && shared_total > 0,
          std::to_string(violations) + " violations, " + std::to_string(shared_total) + " shared points checked"};
}

// 5 ------------------------------------------------------------------------
Outcome selection_oracle() {
  std::mt19937_64 g(505);
  std::uniform_int_distribution<std::size_t> size(0, 12), nb(0, 5);
  std::normal_distribution<double> s(0.0, 2.0);
  std::size_t mismatches = 0;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<SwapCandidate> pool(size(g));
    for (std::size_t t = 0; t < pool.size(); ++t) pool[t] = {nb(g), t, s(g)};  // continuous, so distinct
    auto got = accept_shared(pool, 2, 4);
    std::sort(got.begin(), got.end());
    mismatches += got != oracle::best_selection(pool, 2, 4);
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 200 instances differ"};
}

// 6 ------------------------------------------------------------------------
Outcome shared_score_arithmetic() {
  const double err = std::abs(score_shared_points(0.5, 0.1, 1.0) - (0.5 + std::log(0.1)));
  bool identity = true;
  for (double s : {-3.0, 0.0, 0.5, 7.25}) {
    for (double a : {0.0, 1e-12, 0.1, 1.0}) identity = identity && score_shared_points(s, a, 0.0) == s;
  }
  return {err <= 1e-12 && identity, "error " + fmt(err) + (identity ? ", lambda=0 is identity" : ", lambda=0 changed s")};
}

// 7 ------------------------------------------------------------------------
Outcome sampling_oracles() {
  std::mt19937_64 g(707);
  FeatureGrid grid(GridConfig::symmetric(12.8, 0.8), 5, GridKind::img_bev);
  for (double& v : grid.data) v = std::normal_distribution<double>(0.0, 1.0)(g);
  std::uniform_real_distribution<double> inside(-12.8, 12.8), outside(12.81, 40.0), sign(-1.0, 1.0);
  double bil = 0.0;
  std::size_t nonzero_outside = 0;
  for (int k = 0; k < 1000; ++k) {
    const double x = inside(g), y = inside(g);
    const Vector got = bilinear_sample(grid, x, y);
    const auto want = oracle::bilinear(grid, x, y);
    for (std::size_t c = 0; c < grid.dim; ++c) bil = std::max(bil, std::abs(got[c] - want[c]));
    const double ox = (sign(g) < 0 ? -1 : 1) * outside(g);
    for (double v : bilinear_sample(grid, ox, y)) nonzero_outside += v != 0.0;
    for (double v : bilinear_sample(grid, x, ox)) nonzero_outside += v != 0.0;
  }

  const CameraRig rig = make_surround_rig({});
  std::uniform_real_distribution<double> wide(-60.0, 60.0), height(-3.0, 5.0);
  double proj = 0.0;
  std::size_t validity = 0, visible = 0;
  for (int k = 0; k < 1000; ++k) {
    const Vec3 p{wide(g), wide(g), height(g)};
    for (const auto& cam : rig.cameras) {
      const auto got = project_to_view(p, cam);
      const auto want = oracle::project(p, cam);
      if (got.has_value() != want.valid) {
        ++validity;
        continue;
      }
      if (!got) continue;
      ++visible;
      proj = std::max({proj, std::abs(got->u - want.u) / std::max(1.0, std::abs(want.u)),
                       std::abs(got->v - want.v) / std::max(1.0, std::abs(want.v)),
                       std::abs(got->depth - want.depth) / std::max(1.0, want.depth)});
    }
  }
  return {bil <= 1e-9 && proj <= 1e-9 && validity == 0 && nonzero_outside == 0 && visible > 0,
          "bilinear " + fmt(bil) + ", projection " + fmt(proj) + " over " + std::to_string(visible) +
              " visible hits, " + std::to_string(validity) + " visibility disagreements, " +
              std::to_string(nonzero_outside) + " nonzero out-of-extent values"};
}

// 8 ------------------------------------------------------------------------
Outcome planted_evidence() {
  const std::size_t d = 32, kb = 20;
  const GridConfig layout = GridConfig::symmetric(25.6, 0.8);

  SceneConfig sc;
  sc.extent = 25.6;
  sc.num_objects = 2;
  sc.feature_dim = d;
  Scene scene = generate_scene(8, sc);
  FeatureGrid probe(layout, 1, GridKind::img_bev);
  const Vec3 a_center = probe.cell_center(32, 40);  // object A, seen by the image query
  const Vec3 b_center = probe.cell_center(32, 48);  // object B, 6.4 m away, seen by radar
  scene.objects[0].center = {a_center[0], a_center[1], 0.8};
  scene.objects[1].center = {b_center[0], b_center[1], 0.8};

  RadarConfig rc;
  rc.pos_noise = 0.0;
  rc.vel_noise = 0.0;
  rc.clutter_count = 0;
  RadarBev rb = encode_radar_bev(simulate_radar_points(scene, 8, rc), layout, d);
  SceneFeatures features{render_image_bev(scene, layout, {0.0, 0.0}), rb.grid, render_pv_features(scene, {16, 0.0}),
                         scene.rig};

  // Radar query from the heatmap peak; image query placed 3.2 m short of B,
  // i.e. with a depth error that moved it off object A.
  QuerySet rad = init_radar_queries(rb.heatmap, rb.grid, 1);
  QuerySet img = QuerySet::empty(d);
  img.embeddings = Matrix(1, d);
  img.types = {QueryType::img};
  img.positions = {{a_center[0] + 3.2, a_center[1], 0.8}};
  img.init_scores = {0.9};
  img.boxes = {BoxState{}};
  QuerySet q = concat_query_sets(img, rad, QuerySet::empty(d));
  const std::size_t i = 0, j = 1;
  // One-hot embeddings let a linear head give each query its own samples.
  q.embeddings = Matrix(2, d);
  q.embeddings(i, 0) = 1.0;
  q.embeddings(j, 1) = 1.0;

  DecoderConfig cfg;
  cfg.dim = d;
  cfg.heads = 4;
  cfg.qswap.k_base = kb;
  DecoderWeights w = DecoderWeights::zeros(cfg);
  const double range = w.bev_img.range(0, 0);
  SamplingHead& head = w.bev_img;
  for (std::size_t k = 0; k < kb; ++k) {
    // Query i looks away from A; query j's first point lands on A.
    head.w(3 * k, 0) = 0.0;
    head.w(3 * k + 1, 0) = (3.0 + 0.1 * static_cast<double>(k)) / range;
    head.w(3 * k + 1, 1) = -(3.0 + 0.1 * static_cast<double>(k)) / range;
  }
  head.w(0, 1) = (a_center[0] - q.positions[j][0]) / range;
  head.w(1, 1) = (a_center[1] - q.positions[j][1]) / range;
  head.w(2, 1) = 3.0;
  w.bev_rad = head;

  const auto sa = shared_self_attention(q.embeddings, q.positions, w, cfg.heads);
  std::array<std::vector<SampleSet>, 2> sets;
  std::vector<std::vector<std::size_t>> nbrs(2);
  for (std::size_t t = 0; t < 2; ++t) nbrs[t] = select_neighbors(t, sa.affinity.row(t), q.boxes, q.positions, cfg.qswap);
  for (std::size_t g = 0; g < 2; ++g) {
    const GridKind kind = g == 0 ? GridKind::img_bev : GridKind::rad_bev;
    sets[g].resize(2);
    for (std::size_t t = 0; t < 2; ++t) {
      sets[g][t].points = predict_base_samples(q.embeddings.row(t), g == 0 ? w.bev_img : w.bev_rad, kind, t);
    }
    sets[g] = swap_samples(sets[g], q.positions, nbrs, sa.affinity, cfg.qswap);
    for (auto& s : sets[g]) normalize_sample_scores(s);
  }
  const std::array<SampleSet, 2> mine{sets[0][i], sets[1][i]};
  const auto tokens = sample_features(q.embeddings.row(i), q.positions[i], mine, features, w);

  // The image query's own samples miss A; only the shared point should carry its signature.
  const auto& sig = scene.signatures[0];
  const auto cosine = [&](const Vector& v) {
    const double n = std::sqrt(dot(v, v) * dot(sig, sig));
    return n == 0.0 ? 0.0 : dot(v, sig) / n;
  };
  std::size_t k_img = 0;
  double best_cos = -1.0, best_weight = 0.0, err = 1e300, own_coef = -1.0;
  bool from_shared = false;
  for (const auto& t : tokens) {
    if (t.source != TokenSource::img_bev) continue;
    const auto& p = mine[0].points[k_img++];
    const double c = cosine(t.value);
    if (p.origin == SampleOrigin::base) own_coef = std::max(own_coef, dot(t.value, sig) / dot(sig, sig));
    if (c > best_cos) {
      best_cos = c;
      best_weight = t.weight;
      from_shared = p.origin == SampleOrigin::shared && p.source == j;
      err = 0.0;
      for (std::size_t k = 0; k < d; ++k) err = std::max(err, std::abs(t.value[k] - sig[k]));
    }
  }
  const double mean_weight = 1.0 / static_cast<double>(mine[0].points.size());
  const bool ok = from_shared && err <= 1e-9 && best_weight > mean_weight && own_coef < 0.01 &&
                  std::find(nbrs[i].begin(), nbrs[i].end(), j) != nbrs[i].end();
  return {ok, std::string(from_shared ? "signature token shared by the radar query" : "signature token not shared") +
                  ", own samples carry " + fmt(own_coef) + " of it" + ", max deviation " + fmt(err) + ", weight " + fmt(best_weight) + " vs mean " + fmt(mean_weight)};
}

// 9 ------------------------------------------------------------------------
Outcome permutation_equivariance() {
  const toy::Setup s = toy::make(30, 32, 6, 909);
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(99));
  const auto a = decode(s.features, s.queries, s.weights, s.cfg);
  const auto b = decode(s.features, toy::permute(s.queries, perm), s.weights, s.cfg);
  const double err = toy::permutation_error(a, b, perm);
  return {err <= 1e-9, "6 layers, max deviation " + fmt(err)};
}

// 10 -----------------------------------------------------------------------
Outcome run_determinism() {
  const fs::path dir = fs::temp_directory_path();
  const fs::path a = dir / "hqf_accept_run_a.json", b = dir / "hqf_accept_run_b.json";
  const int ra = run_cli("run -o " + a.string());
  const int rb = run_cli("run -o " + b.string());
  const std::string x = slurp(a), y = slurp(b);
  fs::remove(a);
  fs::remove(b);
  return {ra == 0 && rb == 0 && !x.empty() && x == y,
          "exit codes " + std::to_string(ra) + "/" + std::to_string(rb) + ", " + std::to_string(x.size()) + " bytes" +
              (x == y ? ", identical" : ", different")};
}

// 11 -----------------------------------------------------------------------
Outcome ablation_smoke() {
  const fs::path out = fs::temp_directory_path() / "hqf_accept_ablate.csv";
  const auto t0 = Clock::now();
  const int rc = run_cli("ablate -o " + out.string());
  const double secs = seconds_since(t0);
  std::istringstream in(slurp(out));
  fs::remove(out);
  std::string line;
  bool note = false, shape = false;
  std::vector<std::string> variants;
  std::size_t invalid = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      note = note || line.find("untrained") != std::string::npos;
      shape = shape || line.find("queries=900 layers=6 grid=128x128") != std::string::npos;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (header.empty()) {
      header = cells;
      continue;
    }
    const auto col = std::find(header.begin(), header.end(), "mAP_center") - header.begin();
    if (static_cast<std::size_t>(col) >= cells.size()) {
      ++invalid;
      continue;
    }
    const double map = std::stod(cells[static_cast<std::size_t>(col)]);
    invalid += !(map >= 0.0 && map <= 1.0);
    variants.push_back(cells[0] + "/" + cells[1]);
  }
  const std::vector<std::string> want{"ladder/QInit",        "ladder/+QMix",          "ladder/+QMix+QSwap",
                                      "placement/pre_agg",   "placement/post_self",   "placement/post_self_cross",
                                      "placement/post_agg"};
  const bool ok = rc == 0 && secs < 60.0 && note && shape && invalid == 0 && variants == want;
  return {ok, std::to_string(variants.size()) + " variants in " + fmt(secs) + " s, " + std::to_string(invalid) +
                  " invalid mAP values" + (note ? "" : ", missing untrained note") +
                  (shape ? "" : ", unexpected run shape")};
}

// 12 -----------------------------------------------------------------------
Outcome statistics_correctness() {
  using QT = QueryType;
  const std::vector<QT> types{QT::img, QT::img, QT::rad, QT::world};
  const auto from = [](const double (&v)[4][4]) {
    Matrix m(4, 4);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 4; ++j) m(i, j) = v[i][j];
    }
    return m;
  };
  struct Case {
    Matrix attn;
    std::vector<QT> types;
    TypeMatrix mass, mpk;
  };
  const double uniform[4][4] = {{.25, .25, .25, .25}, {.25, .25, .25, .25}, {.25, .25, .25, .25}, {.25, .25, .25, .25}};
  const double identity[4][4] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  const double masked[4][4] = {{.4, 0, .35, .25}, {0, .6, .1, .3}, {.2, .3, .5, 0}, {.1, .2, .3, .4}};
  // Key counts are (img 2, rad 1, w 1).
  const std::vector<Case> cases{
      {from(uniform), types, {{{.5, .25, .25}, {.5, .25, .25}, {.5, .25, .25}}},
       {{{.25, .25, .25}, {.25, .25, .25}, {.25, .25, .25}}}},
      {from(identity), types, {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}}, {{{.5, 0, 0}, {0, 1, 0}, {0, 0, 1}}}},
      {from(masked), types, {{{.5, .225, .275}, {.5, .5, 0}, {.3, .3, .4}}},
       {{{.25, .225, .275}, {.25, .5, 0}, {.15, .3, .4}}}},
  };
  double worst = 0.0;
  for (const auto& c : cases) {
    const auto s = attention_type_stats(c.attn, c.types);
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 3; ++b) {
        worst = std::max(worst, std::abs(s.mass[a][b] - c.mass[a][b]));
        worst = std::max(worst, std::abs(s.mean_per_key[a][b] - c.mpk[a][b]));
      }
    }
  }
  return {worst <= 1e-12, "3 matrices, max deviation " + fmt(worst)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"cross-type mask matches predicate", mask_correctness},
      {"masked attention matches dense oracle", masked_attention_oracle},
      {"same-type attention is exactly suppressed", same_type_suppression},
      {"qswap constraint suite", qswap_constraints},
      {"greedy selection matches brute force", selection_oracle},
      {"shared-point score arithmetic", shared_score_arithmetic},
      {"bilinear and projection oracles", sampling_oracles},
      {"planted evidence reaches the image query", planted_evidence},
      {"decode is permutation equivariant", permutation_equivariance},
      {"run reports are byte-identical", run_determinism},
      {"ablation harness smoke", ablation_smoke},
      {"attention statistics hand cases", statistics_correctness},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2zu %s  %s (%s)\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
