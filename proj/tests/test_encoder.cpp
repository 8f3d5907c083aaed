#include "sbtrack/encoder.hpp"
#include "sbtrack/gradcheck.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace sbtrack;
using namespace sbtrack::testing;

namespace {

using Vec = std::vector<double>;

double lg(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec to_vec(const Eigen::VectorXd& v) { return Vec(v.data(), v.data() + v.size()); }

// y = M x with explicit loops over an Eigen matrix read element by element.
Vec matvec(const Eigen::MatrixXd& m, const Vec& x) {
  Vec y(static_cast<std::size_t>(m.rows()), 0.0);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) y[r] += m(r, c) * x[c];
  }
  return y;
}

Vec oracle_embed(const Eigen::VectorXd& raw, const ModelParams& p) {
  Vec y = matvec(p.w.embed_w, to_vec(raw));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i] + p.w.embed_b(i));
  return y;
}

struct OracleLstm {
  Vec h, c;
};

OracleLstm oracle_step(const Vec& phi, const OracleLstm& s, const ModelParams& p) {
  const std::size_t H = phi.size();
  const Vec ax = matvec(p.w.lstm_wx, phi);
  const Vec ah = matvec(p.w.lstm_wh, s.h);
  OracleLstm out{Vec(H), Vec(H)};
  for (std::size_t k = 0; k < H; ++k) {
    const double i = lg(ax[k] + ah[k] + p.w.lstm_b(k));
    const double f = lg(ax[H + k] + ah[H + k] + p.w.lstm_b(H + k));
    const double g = std::tanh(ax[2 * H + k] + ah[2 * H + k] + p.w.lstm_b(2 * H + k));
    const double o = lg(ax[3 * H + k] + ah[3 * H + k] + p.w.lstm_b(3 * H + k));
    out.c[k] = f * s.c[k] + i * g;
    out.h[k] = o * std::tanh(out.c[k]);
  }
  return out;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec oracle_attend(const std::vector<Vec>& hist, const Vec& cur) {
  Vec logits;
  for (const auto& h : hist) logits.push_back(dot(h, cur));
  double m = logits[0];
  for (double l : logits) m = std::max(m, l);
  double z = 0;
  for (double& l : logits) z += (l = std::exp(l - m));
  Vec c(cur.size(), 0.0);
  for (std::size_t j = 0; j < hist.size(); ++j) {
    for (std::size_t i = 0; i < cur.size(); ++i) c[i] += logits[j] / z * hist[j][i];
  }
  return c;
}

// Non-incremental forward pass over the whole detection list.
double oracle_score(const std::vector<Eigen::VectorXd>& feats, const ModelParams& p) {
  const std::size_t H = static_cast<std::size_t>(p.config.hidden);
  Vec readout;
  if (p.config.uses_lstm()) {
    OracleLstm s{Vec(H, 0.0), Vec(H, 0.0)};
    std::vector<Vec> hist;
    for (const auto& f : feats) {
      s = oracle_step(oracle_embed(f, p), s, p);
      hist.push_back(s.h);
    }
    readout = p.config.variant == EncoderVariant::recurrent ? s.h : oracle_attend(hist, s.h);
  } else {
    std::vector<Vec> x, q, k, v;
    for (std::size_t t = 0; t < feats.size(); ++t) {
      Vec xt = oracle_embed(feats[t], p);
      for (std::size_t i = 0; i < H; ++i) xt[i] += p.w.pos(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
      x.push_back(xt);
      q.push_back(matvec(p.w.attn_wq, xt));
      k.push_back(matvec(p.w.attn_wk, xt));
      v.push_back(matvec(p.w.attn_wv, xt));
    }
    readout.assign(H, 0.0);
    for (std::size_t t = 0; t < feats.size(); ++t) {
      Vec logits;
      for (std::size_t j = 0; j <= t; ++j) logits.push_back(dot(q[t], k[j]) / std::sqrt(static_cast<double>(H)));
      double m = logits[0];
      for (double l : logits) m = std::max(m, l);
      double z = 0;
      for (double& l : logits) z += (l = std::exp(l - m));
      for (std::size_t i = 0; i < H; ++i) {
        double a = 0;
        for (std::size_t j = 0; j <= t; ++j) a += logits[j] / z * v[j][i];
        readout[i] += std::tanh(x[t][i]) * std::tanh(a) / static_cast<double>(feats.size());
      }
    }
  }
  double s = p.w.head_b(0);
  for (std::size_t i = 0; i < H; ++i) s += p.w.head_w(static_cast<Eigen::Index>(i)) * readout[i];
  return s;
}

ModelParams random_params(EncoderVariant v, std::uint64_t seed, int din = 5, int h = 6, int nmax = 8) {
  EncoderConfig c;
  c.input_dim = din;
  c.hidden = h;
  c.max_len = nmax;
  c.variant = v;
  ModelParams p = ModelParams::init(c, seed);
  // widen the head so scores are not tiny
  Rng rng(seed ^ 0xABC);
  for (Eigen::Index i = 0; i < p.w.head_w.size(); ++i) p.w.head_w(i) = rng.normal(0.0, 1.0);
  return p;
}

std::vector<DetectionPtr> random_dets(Rng& rng, int n, int dim, int first_frame = 1) {
  std::vector<DetectionPtr> out;
  for (int i = 0; i < n; ++i) out.push_back(det_with_feature(first_frame + i, 1, random_vector(rng, dim)));
  return out;
}

const EncoderVariant kVariants[] = {EncoderVariant::recurrent, EncoderVariant::recurrent_attention,
                                    EncoderVariant::self_attention};

}  // namespace

TEST(Embed, ZeroWeightsGiveZero) {
  EncoderConfig c;
  c.input_dim = 4;
  c.hidden = 3;
  ModelParams p{c, Weights::zeros(c)};
  EXPECT_EQ(embed(Eigen::VectorXd::Constant(4, 2.5), p), Eigen::VectorXd::Zero(3));
}

TEST(Embed, IdentityWeightsGiveTanh) {
  EncoderConfig c;
  c.input_dim = 4;
  c.hidden = 4;
  ModelParams p{c, Weights::zeros(c)};
  p.w.embed_w = Eigen::MatrixXd::Identity(4, 4);
  Eigen::VectorXd x(4);
  x << -2, -0.5, 0.3, 4;
  const auto y = embed(x, p);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y(i), std::tanh(x(i)));
}

TEST(Embed, MatchesLoopOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_params(EncoderVariant::recurrent, 100 + trial, 7, 5);
    const auto x = random_vector(rng, 7);
    const Vec want = oracle_embed(x, p);
    const auto got = embed(x, p);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(got(i), want[i], 1e-12);
  }
}

TEST(Embed, RejectsDimensionMismatch) {
  const auto p = random_params(EncoderVariant::recurrent, 1);
  EXPECT_THROW(embed(Eigen::VectorXd::Zero(3), p), std::invalid_argument);
}

TEST(Step, ZeroEverythingStaysZero) {
  EncoderConfig c;
  c.hidden = 4;
  ModelParams p{c, Weights::zeros(c)};
  const auto s = step(Eigen::VectorXd::Zero(4), LstmState::zeros(4), p);
  EXPECT_EQ(s.hidden, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(s.cell, Eigen::VectorXd::Zero(4));
  EXPECT_EQ(s.history.size(), 1u);
}

TEST(Step, HalfForgetGateOnCellTwo) {
  EncoderConfig c;
  c.hidden = 3;
  ModelParams p{c, Weights::zeros(c)};
  LstmState s0 = LstmState::zeros(3);
  s0.cell = Eigen::VectorXd::Constant(3, 2.0);
  const auto s = step(Eigen::VectorXd::Zero(3), s0, p);
  for (int i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(s.cell(i), 1.0);
    EXPECT_NEAR(s.hidden(i), 0.5 * std::tanh(1.0), 1e-15);
    EXPECT_NEAR(s.hidden(i), 0.38080, 1e-5);
  }
}

TEST(Step, MatchesStraightLineOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_params(EncoderVariant::recurrent, 200 + trial, 4, 6);
    LstmState s = LstmState::zeros(6);
    s.hidden = random_vector(rng, 6, 0.5);
    s.cell = random_vector(rng, 6, 0.5);
    const auto phi = random_vector(rng, 6);
    const auto got = step(phi, s, p);
    const auto want = oracle_step(to_vec(phi), {to_vec(s.hidden), to_vec(s.cell)}, p);
    for (int i = 0; i < 6; ++i) {
      EXPECT_NEAR(got.hidden(i), want.h[i], 1e-12);
      EXPECT_NEAR(got.cell(i), want.c[i], 1e-12);
    }
  }
}

TEST(Step, RefusesSelfAttentionModel) {
  const auto p = random_params(EncoderVariant::self_attention, 3);
  EXPECT_THROW(step(Eigen::VectorXd::Zero(6), LstmState::zeros(6), p), std::invalid_argument);
}

TEST(Attend, SingleStepReturnsIt) {
  Eigen::VectorXd h(3);
  h << 1, -2, 0.5;
  std::vector<Eigen::VectorXd> hist{h};
  EXPECT_EQ(attend(hist, h), h);
}

TEST(Attend, IdenticalVectorsSplitEvenly) {
  Eigen::VectorXd h(2);
  h << 0.3, 0.7;
  std::vector<Eigen::VectorXd> hist{h, h};
  const auto a = attention_weights(hist, h);
  EXPECT_DOUBLE_EQ(a(0), 0.5);
  EXPECT_DOUBLE_EQ(a(1), 0.5);
  EXPECT_NEAR((attend(hist, h) - h).norm(), 0.0, 1e-15);
}

TEST(Attend, MatchesDirectOracleAndWeightsSumToOne) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(8));
    std::vector<Eigen::VectorXd> hist;
    std::vector<Vec> vhist;
    for (int j = 0; j < n; ++j) {
      hist.push_back(random_vector(rng, 5, 2.0));
      vhist.push_back(to_vec(hist.back()));
    }
    const auto got = attend(hist, hist.back());
    const Vec want = oracle_attend(vhist, vhist.back());
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(got(i), want[i], 1e-12);
    const auto a = attention_weights(hist, hist.back());
    EXPECT_NEAR(a.sum(), 1.0, 1e-12);
    EXPECT_GE(a.minCoeff(), 0.0);
  }
}

TEST(Attend, EmptyHistoryIsRejected) {
  std::vector<Eigen::VectorXd> hist;
  EXPECT_THROW(attend(hist, Eigen::VectorXd::Zero(2)), std::invalid_argument);
}

TEST(Score, ZeroHeadGivesBias) {
  Rng rng(5);
  for (auto v : kVariants) {
    auto p = random_params(v, 7);
    p.w.head_w.setZero();
    p.w.head_b(0) = -1.25;
    for (int n = 1; n <= 5; ++n) EXPECT_DOUBLE_EQ(score(tracklet_of(random_dets(rng, n, 5)), p).first, -1.25);
  }
}

TEST(Score, MatchesFullForwardOracle) {
  Rng rng(6);
  for (auto v : kVariants) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto p = random_params(v, 300 + trial);
      const auto dets = random_dets(rng, 4, 5);
      std::vector<Eigen::VectorXd> feats;
      for (const auto& d : dets) feats.push_back(d->feature);
      EXPECT_NEAR(score(tracklet_of(dets), p).first, oracle_score(feats, p), 1e-10) << to_string(v);
    }
  }
}

TEST(Score, IncrementalEqualsFromScratch) {
  Rng rng(7);
  for (auto v : kVariants) {
    const auto p = random_params(v, 8);
    for (int trial = 0; trial < 10; ++trial) {
      const auto dets = random_dets(rng, 8, 5);
      Tracklet inc;
      for (const auto& d : dets) {
        inc = score(extend(inc, d), p).second;
        Tracklet fresh = inc;
        fresh.encoder_cache.reset();
        EXPECT_NEAR(inc.score, score(fresh, p).first, 1e-10) << to_string(v);
      }
    }
  }
}

TEST(Score, WindowKeepsLastMaxLenDetections) {
  Rng rng(8);
  for (auto v : kVariants) {
    const auto p = random_params(v, 9, 5, 6, 4);
    const auto dets = random_dets(rng, 7, 5);
    const std::vector<DetectionPtr> tail(dets.end() - 4, dets.end());
    Tracklet inc;
    for (const auto& d : dets) inc = score(extend(inc, d), p).second;
    EXPECT_NEAR(inc.score, score(tracklet_of(tail), p).first, 1e-12) << to_string(v);
    EXPECT_NEAR(score(tracklet_of(dets), p).first, inc.score, 1e-12);
  }
}

TEST(Score, DeterministicBitForBit) {
  Rng rng(9);
  for (auto v : kVariants) {
    const auto p = random_params(v, 10);
    const auto t = tracklet_of(random_dets(rng, 6, 5));
    EXPECT_EQ(score(t, p).first, score(t, p).first);
  }
}

TEST(Score, NoLeakageBetweenTracklets) {
  Rng rng(10);
  for (auto v : kVariants) {
    const auto p = random_params(v, 11);
    const auto a = random_dets(rng, 4, 5);
    const auto b = random_dets(rng, 4, 5);
    const auto c = tracklet_of(random_dets(rng, 4, 5));
    const double before = score(c, p).first;
    // score a and b, then swap one feature between them and score again
    score(tracklet_of(a), p);
    score(tracklet_of(b), p);
    auto a2 = a, b2 = b;
    std::swap(a2[2], b2[2]);
    score(tracklet_of(a2), p);
    score(tracklet_of(b2), p);
    EXPECT_EQ(score(c, p).first, before);
  }
}

TEST(Score, MissingFeatureIsRejected) {
  const auto p = random_params(EncoderVariant::recurrent, 12);
  const Tracklet t(det(1, BBox(0, 0, 1, 1)));
  EXPECT_THROW(score(t, p), std::invalid_argument);
  EXPECT_THROW(score(Tracklet{}, p), std::invalid_argument);
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  Rng rng(11);
  for (auto v : kVariants) {
    const auto p = random_params(v, 13);
    const auto t = score(tracklet_of(random_dets(rng, 3, 5)), p).second;
    std::vector<EncoderCache> leaves{t.encoder_cache};
    std::vector<double> up{0.0};
    auto g = backward(leaves, up, p);
    for (const auto& view : g.views()) {
      for (Eigen::Index i = 0; i < view.size(); ++i) EXPECT_EQ(view.data[i], 0.0);
    }
  }
}

TEST(Backward, ZeroHeadSingleStep) {
  Rng rng(12);
  for (auto v : kVariants) {
    auto p = random_params(v, 14);
    p.w.head_w.setZero();
    const auto t = score(tracklet_of(random_dets(rng, 1, 5)), p).second;
    std::vector<EncoderCache> leaves{t.encoder_cache};
    std::vector<double> up{1.7};
    const auto g = backward(leaves, up, p);
    const Eigen::VectorXd r = detail::readout(*t.encoder_cache, p);
    EXPECT_NEAR((g.head_w - 1.7 * r).norm(), 0.0, 1e-15);
    EXPECT_DOUBLE_EQ(g.head_b(0), 1.7);
    for (const auto& view : g.views()) {
      if (view.name == "head_w" || view.name == "head_b") continue;
      for (Eigen::Index i = 0; i < view.size(); ++i) EXPECT_EQ(view.data[i], 0.0) << view.name;
    }
  }
}

TEST(Backward, CountMismatchIsRejected) {
  Rng rng(13);
  const auto p = random_params(EncoderVariant::recurrent, 15);
  const auto t = score(tracklet_of(random_dets(rng, 2, 5)), p).second;
  std::vector<EncoderCache> leaves{t.encoder_cache};
  std::vector<double> up{1.0, 2.0};
  EXPECT_THROW(backward(leaves, up, p), std::invalid_argument);
}

namespace {

// Weighted sum of scores of several tracklets sharing prefixes; smooth in
// the parameters, so no discrete choices are involved.
LossFunction weighted_scores(const std::vector<Tracklet>& ts, const std::vector<double>& w) {
  return [ts, w](const ModelParams& q, bool with_grad) {
    LossProbe probe;
    std::vector<EncoderCache> leaves;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      Tracklet fresh = ts[i];
      fresh.encoder_cache.reset();
      auto [s, scored] = score(fresh, q);
      probe.value += w[i] * s;
      leaves.push_back(scored.encoder_cache);
    }
    if (with_grad) probe.grad = backward(leaves, w, q);
    return probe;
  };
}

}  // namespace

TEST(Backward, MatchesFiniteDifferencesWithSharedPrefixes) {
  Rng rng(14);
  for (auto v : kVariants) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto p = random_params(v, 400 + trial);
      const auto base = random_dets(rng, 3, 5);
      const auto tails = random_dets(rng, 3, 5, 4);
      std::vector<Tracklet> ts;
      for (const auto& d : tails) ts.push_back(extend(tracklet_of(base), d));
      ts.push_back(tracklet_of(base));
      std::vector<double> w{0.7, -1.3, 0.4, 2.0};
      const auto rep = grad_check(p, weighted_scores(ts, w), 1e-5);
      EXPECT_LT(rep.max_rel_error, 1e-4) << to_string(v);
      EXPECT_EQ(rep.skipped, 0);
      EXPECT_EQ(rep.checked, p.w.parameter_count());
    }
  }
}

TEST(GradCheck, ConstantSurfaceHasZeroError) {
  const auto p = random_params(EncoderVariant::recurrent, 16);
  LossFunction constant = [&](const ModelParams& q, bool with_grad) {
    LossProbe probe;
    probe.value = 3.0;
    if (with_grad) probe.grad = Weights::zeros(q.config);
    return probe;
  };
  const auto rep = grad_check(p, constant, 1e-5);
  EXPECT_EQ(rep.max_rel_error, 0.0);
  EXPECT_EQ(rep.checked, p.w.parameter_count());
}

TEST(GradCheck, DoubledStepRoughlyQuadruplesTruncationError) {
  Rng rng(15);
  const auto p = random_params(EncoderVariant::recurrent_attention, 17);
  const auto dets = random_dets(rng, 4, 5);
  const auto f = weighted_scores({tracklet_of(dets)}, {1.0});
  GradCheckOptions opt;
  opt.max_coords = 1;
  opt.seed = 3;
  const double e1 = grad_check(p, f, 1e-2, opt).max_abs_error;
  const double e2 = grad_check(p, f, 2e-2, opt).max_abs_error;
  ASSERT_GT(e1, 1e-10);
  EXPECT_NEAR(e2 / e1, 4.0, 0.5);
}

TEST(GradCheck, RejectsNonPositiveStepAndNonFiniteLoss) {
  const auto p = random_params(EncoderVariant::recurrent, 18);
  LossFunction nan_loss = [](const ModelParams& q, bool) {
    LossProbe probe;
    probe.value = std::nan("");
    probe.grad = Weights::zeros(q.config);
    return probe;
  };
  EXPECT_THROW(grad_check(p, nan_loss, 1e-5), NumericError);
  EXPECT_THROW(grad_check(p, nan_loss, 0.0), std::invalid_argument);
}

TEST(Params, InitIsSeededAndShaped) {
  for (auto v : kVariants) {
    EncoderConfig c;
    c.variant = v;
    const auto a = ModelParams::init(c, 1);
    const auto b = ModelParams::init(c, 1);
    const auto d = ModelParams::init(c, 2);
    EXPECT_TRUE(a.shape_ok());
    EXPECT_EQ(a.w.head_w, b.w.head_w);
    EXPECT_NE(a.w.head_w, d.w.head_w);
    const double r = 1.0 / std::sqrt(32.0);
    EXPECT_LE(a.w.embed_w.cwiseAbs().maxCoeff(), r);
    if (c.uses_lstm()) EXPECT_EQ(a.w.lstm_b.segment(32, 32), Eigen::VectorXd::Ones(32));
    else EXPECT_DOUBLE_EQ(a.w.pos(0, 1), 1.0);  // cos(0)
  }
}
