#include <doctest.h>

#include <map>
#include <mutex>

#include "helpers.hpp"
#include "tscn/checkpoint.hpp"
#include "tscn/errors.hpp"
#include "tscn/optim.hpp"
#include "tscn/rng.hpp"

using namespace tscn;

namespace {

BaseModelParams scalar_params(double v) {
  // Smallest shape; the test only uses coordinate 0 of the flat vector.
  BaseModelParams p(ModelShape{1, 1, 1});
  p.data().setConstant(v);
  return p;
}

Dataset tiny_dataset(std::uint64_t seed, int n = 8) {
  SynthConfig cfg;
  cfg.num_train = n;
  cfg.num_val = 1;
  cfg.num_classes = 3;
  cfg.feature_dim = 6;
  cfg.T_range = {20, 30};
  cfg.segments_per_video = {1, 2};
  cfg.segment_length = {4, 8};
  cfg.seed = seed;
  return generate_synthetic(cfg).train;
}

TrainConfig tiny_train(int epochs, int iterations) {
  TrainConfig cfg;
  cfg.epochs_per_iteration = epochs;
  cfg.refinement_iterations = iterations;
  cfg.seed = 17;
  return cfg;
}

}  // namespace

TEST_CASE("adamw: zero gradient without decay changes nothing") {
  BaseModelParams p = scalar_params(0.7);
  const BaseModelParams before = p;
  AdamWState st;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(p, scalar_params(0.0), st, cfg);
  CHECK(p == before);
  CHECK(st.m.isZero(0.0));
  CHECK(st.v.isZero(0.0));
  CHECK(st.step_count == 1);
}

TEST_CASE("adamw: first step moves by about lr * sign(g)") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  for (double g : {3.0, -0.02, 1e-3}) {
    BaseModelParams p = scalar_params(0.0);
    AdamWState st;
    adamw_step(p, scalar_params(g), st, cfg);
    const double expect = -cfg.lr * g / (std::abs(g) + cfg.eps);
    CHECK(p.data()(0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(std::abs(p.data()(0) + cfg.lr * (g > 0 ? 1 : -1)) < 1e-8);
  }
}

TEST_CASE("adamw: pure decay shrinks by (1 - lr wd)") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.01;
  BaseModelParams p = scalar_params(2.5);
  AdamWState st;
  adamw_step(p, scalar_params(0.0), st, cfg);
  CHECK(p.data()(0) == doctest::Approx(2.5 * (1.0 - cfg.lr * cfg.weight_decay)).epsilon(1e-15));
}

TEST_CASE("adamw: second step against a hand trace") {
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  BaseModelParams p = scalar_params(1.0);
  AdamWState st;
  adamw_step(p, scalar_params(2.0), st, cfg);
  adamw_step(p, scalar_params(-1.0), st, cfg);
  // Independent trace.
  double x = 1.0, m = 0.0, v = 0.0;
  const double gs[] = {2.0, -1.0};
  for (int t = 1; t <= 2; ++t) {
    const double g = gs[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.5 * x);
  }
  CHECK(p.data()(0) == doctest::Approx(x).epsilon(1e-14));
  CHECK(st.step_count == 2);
}

TEST_CASE("adamw: shape mismatch") {
  BaseModelParams p = scalar_params(1.0);
  AdamWState st;
  CHECK_THROWS_AS(adamw_step(p, BaseModelParams(ModelShape{2, 1, 1}), st, AdamWConfig{}), ValidationError);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.refinement_iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.adamw.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.adamw.beta2 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = {};
  cfg.ema_weight = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("zero epochs return the initialization") {
  const Dataset ds = tiny_dataset(1);
  const TrainConfig cfg = tiny_train(0, 1);
  const Checkpoint c = train_base(ds, cfg);
  const ModelShape shape = cfg.model_shape(ds.feature_dim, ds.num_classes);
  CHECK(c.rgb == init_params(shape, derive_seed(cfg.seed, 1, 0)));
  CHECK(c.flow == init_params(shape, derive_seed(cfg.seed, 1, 1)));
  CHECK_FALSE(c.rgb == c.flow);
  CHECK(c.refinement_iteration == 0);
}

TEST_CASE("training is deterministic and lowers the classification loss") {
  const Dataset ds = tiny_dataset(2, 16);
  const TrainConfig cfg = tiny_train(6, 1);
  std::vector<TrainLogEntry> log;
  const Checkpoint a = train_base(ds, cfg, &log);
  const Checkpoint b = train_base(ds, cfg);
  CHECK(a.rgb == b.rgb);
  CHECK(a.flow == b.flow);

  TrainConfig parallel = cfg;
  parallel.workers = 3;
  const Checkpoint c = train_base(ds, parallel);
  CHECK(a.rgb == c.rgb);
  CHECK(a.flow == c.flow);

  REQUIRE(log.size() == 2 * 6 * ds.videos.size());
  std::map<int, double> sum;
  for (const auto& e : log) sum[e.epoch] += e.loss.cls;
  CHECK(sum[5] < sum[0]);

  // Log lines are self-contained JSON records.
  const std::string line = to_json_line(log.front());
  CHECK(line.find("\"stream\":\"rgb\"") != std::string::npos);
  CHECK(line.find("\"pseudo\":null") != std::string::npos);
}

TEST_CASE("one iteration returns only the base checkpoint") {
  const Dataset ds = tiny_dataset(3);
  const TrainConfig cfg = tiny_train(1, 1);
  const Checkpoint c0 = train_base(ds, cfg);
  const auto all = refine_loop(ds, c0, cfg);
  REQUIRE(all.size() == 1);
  CHECK(all[0].rgb == c0.rgb);
}

TEST_CASE("refinement: shared pseudo ground truth, fresh optimizer, warm start") {
  const Dataset ds = tiny_dataset(4);
  const TrainConfig cfg = tiny_train(2, 3);
  const Checkpoint c0 = train_base(ds, cfg);

  std::map<int, std::vector<PseudoGT>> seen_gt;
  std::mutex mu;
  std::map<std::tuple<int, int, int>, std::vector<long>> steps;  // (iteration, stream, epoch) -> step counts
  std::vector<std::string> gt_mismatch;
  auto observer = [&](const StepInfo& s) {
    std::lock_guard lock(mu);
    steps[{s.iteration, static_cast<int>(s.stream), s.epoch}].push_back(s.optimizer.step_count);
    if (s.iteration > 0) {
      const auto& gts = seen_gt.at(s.iteration);
      std::size_t idx = 0;
      while (ds.videos[idx].meta.id != s.video.meta.id) ++idx;
      if (!(s.pseudo_gt && *s.pseudo_gt == gts[idx].g)) gt_mismatch.push_back(s.video.meta.id);
    } else if (s.pseudo_gt) {
      gt_mismatch.push_back("base step saw a pseudo target");
    }
  };
  auto on_gt = [&](int iteration, const std::vector<PseudoGT>& gts) {
    std::lock_guard lock(mu);
    seen_gt[iteration] = gts;
  };
  TrainConfig parallel = cfg;
  parallel.workers = 2;
  const auto ckpts = refine_loop(ds, c0, parallel, nullptr, observer, on_gt);

  REQUIRE(ckpts.size() == 3);
  CHECK(ckpts[1].refinement_iteration == 1);
  CHECK(ckpts[2].refinement_iteration == 2);
  CHECK(gt_mismatch.empty());

  // Pseudo ground truth is recomputed from the latest checkpoint.
  REQUIRE(seen_gt.count(1));
  const auto expect1 = generate_pseudo_gt(ds, ckpts[0], cfg.fusion, 1);
  const auto expect2 = generate_pseudo_gt(ds, ckpts[1], cfg.fusion, 1);
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    CHECK(seen_gt[1][i].g == expect1[i].g);
    CHECK(seen_gt[2][i].g == expect2[i].g);
    CHECK(seen_gt[1][i].source_iteration == 0);
    CHECK(((seen_gt[1][i].g.array() == 0.0) || (seen_gt[1][i].g.array() == 1.0)).all());
  }

  // Each stream's optimizer restarts at every iteration and counts only its own steps.
  const long n = static_cast<long>(ds.videos.size());
  for (int it = 1; it <= 2; ++it) {
    for (int s = 0; s < 2; ++s) {
      const auto& e0 = steps[{it, s, 0}];
      const auto& e1 = steps[{it, s, 1}];
      REQUIRE(e0.size() == ds.videos.size());
      CHECK(e0.front() == 1);
      CHECK(e0.back() == n);
      CHECK(e1.back() == 2 * n);
    }
  }

  // Serial and parallel refinement agree.
  const auto serial = refine_loop(ds, c0, cfg);
  CHECK(serial[2].rgb == ckpts[2].rgb);
  CHECK(serial[2].flow == ckpts[2].flow);
}

TEST_CASE("ema ensemble") {
  SUBCASE("0 then 1 with weight 0.2 gives exactly 0.2") {
    Checkpoint a{scalar_params(0.0), scalar_params(0.0), 0};
    Checkpoint b{scalar_params(1.0), scalar_params(1.0), 1};
    const Checkpoint e = ema_ensemble({a, b}, 0.2);
    CHECK((e.rgb.data().array() == 0.2).all());
    CHECK((e.flow.data().array() == 0.2).all());
    CHECK(e.is_ensemble());
  }
  SUBCASE("identical checkpoints are a fixed point") {
    BaseModelParams p(ModelShape{4, 3, 2});
    p.data().setLinSpaced(p.data().size(), -1.3, 2.9);
    Checkpoint c{p, p, 0};
    const Checkpoint e = ema_ensemble({c, c, c, c, c}, 0.2);
    CHECK(e.rgb == p);
    CHECK(e.flow == p);
  }
  SUBCASE("single checkpoint") {
    Checkpoint c{scalar_params(0.3), scalar_params(-0.3), 0};
    const Checkpoint e = ema_ensemble({c}, 0.2);
    CHECK(e.rgb == c.rgb);
    CHECK(e.flow == c.flow);
  }
  SUBCASE("chronological order") {
    std::vector<Checkpoint> cs;
    for (double v : {1.0, 2.0, 4.0}) cs.push_back({scalar_params(v), scalar_params(v), 0});
    const double expect = 0.8 * (0.8 * 1.0 + 0.2 * 2.0) + 0.2 * 4.0;
    CHECK(ema_ensemble(cs, 0.2).rgb.data()(0) == doctest::Approx(expect).epsilon(1e-15));
  }
  SUBCASE("convex hull on random checkpoints") {
    Rng rng(5);
    std::vector<Checkpoint> cs;
    for (int n = 0; n < 5; ++n) {
      BaseModelParams p(ModelShape{3, 2, 2});
      for (auto& v : p.data()) v = rng.normal();
      cs.push_back({p, p, n});
    }
    const Checkpoint e = ema_ensemble(cs, 0.2);
    for (Eigen::Index i = 0; i < e.rgb.data().size(); ++i) {
      double lo = cs[0].rgb.data()(i), hi = lo;
      for (const auto& c : cs) {
        lo = std::min(lo, c.rgb.data()(i));
        hi = std::max(hi, c.rgb.data()(i));
      }
      CHECK(e.rgb.data()(i) >= lo);
      CHECK(e.rgb.data()(i) <= hi);
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(ema_ensemble({}, 0.2), ValidationError);
    Checkpoint a{scalar_params(0.0), scalar_params(0.0), 0};
    Checkpoint b{BaseModelParams(ModelShape{2, 1, 1}), scalar_params(0.0), 1};
    CHECK_THROWS_AS(ema_ensemble({a, b}, 0.2), ValidationError);
    CHECK_THROWS_AS(ema_ensemble({a}, 1.5), ValidationError);
  }
}

TEST_CASE("checkpoint files round trip") {
  testutil::TempDir dir;
  Rng rng(6);
  BaseModelParams rgb(ModelShape{4, 3, 2});
  BaseModelParams flow(ModelShape{4, 5, 2, Activation::Relu});
  for (auto& v : rgb.data()) v = rng.normal();
  for (auto& v : flow.data()) v = rng.normal();
  const Checkpoint c{rgb, flow, 3};
  CHECK(checkpoint_filename(c) == "ckpt_iter3.bin");
  save_checkpoint(c, dir / "c.bin");
  const Checkpoint back = load_checkpoint(dir / "c.bin");
  CHECK(back.rgb == rgb);
  CHECK(back.flow == flow);
  CHECK(back.refinement_iteration == 3);

  const Checkpoint e = ema_ensemble({c}, 0.2);
  CHECK(checkpoint_filename(e) == "ckpt_ensemble.bin");

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), IoError);
  std::string bytes = testutil::slurp(dir / "c.bin");
  testutil::spit(dir / "short.bin", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS(load_checkpoint(dir / "short.bin"));
  testutil::spit(dir / "junk.bin", "not a checkpoint\n");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), ValidationError);
}
