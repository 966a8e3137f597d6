#include "laduree/denoiser.hpp"

#include "laduree/errors.hpp"

#include <gtest/gtest.h>

#include <vector>

namespace laduree {
namespace {

constexpr EmbeddingKind kEmbeddings[] = {EmbeddingKind::GRF, EmbeddingKind::EDF, EmbeddingKind::LET,
                                         EmbeddingKind::MLP};
constexpr ConditioningKind kConditionings[] = {ConditioningKind::ICC, ConditioningKind::CA,
                                               ConditioningKind::CAG, ConditioningKind::ALNZ};

DenoiserConfig small_config(EmbeddingKind emb = EmbeddingKind::GRF,
                            ConditioningKind cond = ConditioningKind::CAG) {
  DenoiserConfig c;
  c.depth = 1;
  c.hidden = 8;
  c.num_heads = 2;
  c.patch_size = 2;
  c.latent_shape = {1, 4, 4};
  c.embedding = emb;
  c.conditioning = cond;
  c.num_images = 5;
  c.embed_seed = 3;
  return c;
}

Vector random_vector(std::int64_t n, Rng& rng) {
  Vector v(n);
  rng.fill_normal({v.data(), static_cast<std::size_t>(n)});
  return v;
}

void randomize(Denoiser& model, Rng& rng, double scale = 0.3) {
  for (auto& [name, p] : model.parameters()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = scale * rng.normal();
  }
}

TEST(DenoiserTest, ParamCountGrid) {
  int checked = 0;
  for (auto emb : kEmbeddings) {
    for (auto cond : kConditionings) {
      for (int depth : {1, 2}) {
        DenoiserConfig c = small_config(emb, cond);
        c.depth = depth;
        const Denoiser model = build_denoiser(c, 1);
        EXPECT_EQ(total_param_count(c), model.trainable_count()) << to_string(emb) << "/" << to_string(cond);
        ++checked;
      }
    }
  }
  EXPECT_EQ(checked, 32);
}

TEST(DenoiserTest, ParamCountDifferences) {
  DenoiserConfig icc = small_config(EmbeddingKind::GRF, ConditioningKind::ICC);
  icc.depth = 3;
  DenoiserConfig cag = icc;
  cag.conditioning = ConditioningKind::CAG;
  EXPECT_EQ(build_denoiser(cag, 0).trainable_count() - build_denoiser(icc, 0).trainable_count(),
            (4 * 8 * 8 + 5 * 8) * 3);
  DenoiserConfig grf = small_config();
  grf.num_images = 100;
  DenoiserConfig let = grf;
  let.embedding = EmbeddingKind::LET;
  EXPECT_EQ(build_denoiser(let, 0).trainable_count() - build_denoiser(grf, 0).trainable_count(), 100 * 8);
}

TEST(DenoiserTest, ConfigValidation) {
  DenoiserConfig bad = small_config();
  bad.patch_size = 3;
  EXPECT_THROW((void)build_denoiser(bad, 0), ValidationError);
  bad = small_config();
  bad.num_heads = 3;
  EXPECT_THROW((void)build_denoiser(bad, 0), ValidationError);
  bad = small_config();
  bad.hidden = 7;
  bad.num_heads = 1;
  EXPECT_THROW((void)build_denoiser(bad, 0), ValidationError);
}

TEST(DenoiserTest, PatchifyLayoutAndInverse) {
  const Shape3 shape{2, 4, 6};
  Rng rng(1);
  const Vector latent = random_vector(shape.numel(), rng);
  const Matrix tokens = patchify(latent, shape, 2);
  ASSERT_EQ(tokens.rows(), 6);
  ASSERT_EQ(tokens.cols(), 8);
  const Tensor3 t(shape, latent);
  // Token 4 is grid cell (1, 1); its entry (c=1, dy=1, dx=0) is pixel (1, 3, 2).
  EXPECT_EQ(tokens(4, 1 * 4 + 1 * 2 + 0), t.at(1, 3, 2));
  EXPECT_EQ(unpatchify(tokens, shape, 2), latent);
  EXPECT_EQ(unpatchify(patchify(latent, shape, 1), shape, 1), latent);
}

TEST(DenoiserTest, FreshModelPredictsZero) {
  for (auto cond : kConditionings) {
    const Denoiser model = build_denoiser(small_config(EmbeddingKind::GRF, cond), 2);
    Rng rng(2);
    const Vector x = random_vector(16, rng);
    const Vector out = model.predict_x0(x, 7, 1);
    EXPECT_EQ(out.size(), 16);
    EXPECT_EQ(out, Vector::Zero(16));
  }
}

TEST(DenoiserTest, GatedModelsIgnoreIndexAtInit) {
  for (auto cond : {ConditioningKind::CAG, ConditioningKind::ALNZ}) {
    Denoiser model = build_denoiser(small_config(EmbeddingKind::GRF, cond), 2);
    Rng rng(3);
    for (auto& [name, p] : model.parameters()) {
      if (name.rfind("head.", 0) == 0) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = rng.normal();
      }
    }
    const Vector x = random_vector(16, rng);
    const Vector a = model.predict_x0(x, 5, 0), b = model.predict_x0(x, 5, 4);
    EXPECT_NE(a, Vector::Zero(16));
    EXPECT_EQ(a, b);
  }
}

TEST(DenoiserTest, BuildIsDeterministic) {
  const auto a = build_denoiser(small_config(EmbeddingKind::EDF, ConditioningKind::CA), 9).export_tensors();
  const auto b = build_denoiser(small_config(EmbeddingKind::EDF, ConditioningKind::CA), 9).export_tensors();
  const auto c = build_denoiser(small_config(EmbeddingKind::EDF, ConditioningKind::CA), 10).export_tensors();
  ASSERT_EQ(a.size(), b.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(a[i].data, b[i].data);
    if (a[i].data != c[i].data) any_diff = true;
    if (i > 0) EXPECT_LT(a[i - 1].name, a[i].name);
  }
  EXPECT_TRUE(any_diff);
}

TEST(DenoiserTest, ExportImportRoundTrip) {
  Denoiser src = build_denoiser(small_config(EmbeddingKind::LET, ConditioningKind::ICC), 1);
  Rng rng(4);
  randomize(src, rng);
  Denoiser dst = build_denoiser(small_config(EmbeddingKind::LET, ConditioningKind::ICC), 2);
  dst.import_tensors(src.export_tensors());
  const Vector x = random_vector(16, rng);
  // Weights pass through float32, so compare against a float-rounded source.
  Denoiser rounded = build_denoiser(small_config(EmbeddingKind::LET, ConditioningKind::ICC), 3);
  rounded.import_tensors(src.export_tensors());
  EXPECT_EQ(dst.predict_x0(x, 3, 2), rounded.predict_x0(x, 3, 2));
  EXPECT_TRUE(dst.predict_x0(x, 3, 2).isApprox(src.predict_x0(x, 3, 2), 1e-5));

  auto tensors = src.export_tensors();
  tensors[0].name = "zzz";
  EXPECT_THROW(dst.import_tensors(tensors), CorruptInputError);
  tensors = src.export_tensors();
  tensors.pop_back();
  EXPECT_THROW(dst.import_tensors(tensors), CorruptInputError);
}

TEST(DenoiserTest, ShapeMismatchRejected) {
  const Denoiser model = build_denoiser(small_config(), 1);
  EXPECT_THROW((void)model.predict_x0(Vector::Zero(15), 1, 0), ValidationError);
  EXPECT_THROW((void)model.predict_x0(Tensor3(Shape3{1, 2, 8}), 1, 0), ValidationError);
}

TEST(DenoiserTest, TensorPredictKeepsShape) {
  DenoiserConfig c = small_config();
  c.latent_shape = {3, 4, 8};
  const Denoiser model = build_denoiser(c, 1);
  const Tensor3 out = model.predict_x0(Tensor3(c.latent_shape), 2, 0);
  EXPECT_EQ(out.shape, c.latent_shape);
}

TEST(DenoiserTest, FiniteDifferenceGradient) {
  for (auto cond : kConditionings) {
    DenoiserConfig c = small_config(EmbeddingKind::EDF, cond);
    Denoiser model = build_denoiser(c, 5);
    Rng rng(6);
    randomize(model, rng);
    const std::vector<Vector> xs{random_vector(16, rng), random_vector(16, rng)};
    const std::vector<int> ts{3, 17};
    const std::vector<std::int64_t> ys{0, 4};
    Matrix target(8, 4);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = 0.1 * rng.normal();
    const auto loss_fn = [&](Tape& tape) { return ag::mse(model.forward(tape, xs, ts, ys), target); };
    Tape tape;
    const Var loss = loss_fn(tape);
    tape.backward(loss);
    int checked = 0;
    for (auto& [name, p] : model.parameters()) {
      const Matrix* g = tape.gradient(*p);
      ASSERT_NE(g, nullptr) << name;
      // A few entries per tensor keep the test fast.
      for (Eigen::Index i = 0; i < p->value.size(); i += 1 + p->value.size() / 4) {
        const double saved = p->value.data()[i], h = 1e-6;
        p->value.data()[i] = saved + h;
        Tape up(false);
        const double lu = loss_fn(up).value()(0, 0);
        p->value.data()[i] = saved - h;
        Tape down(false);
        const double ld = loss_fn(down).value()(0, 0);
        p->value.data()[i] = saved;
        const double numeric = (lu - ld) / (2 * h), analytic = g->data()[i];
        EXPECT_LE(std::abs(analytic - numeric), 1e-4 * (std::abs(analytic) + std::abs(numeric)) + 1e-9)
            << to_string(cond) << " " << name << "[" << i << "]";
        ++checked;
      }
    }
    EXPECT_GT(checked, 20);
  }
}

TEST(DenoiserTest, PositionTable) {
  const Matrix p = position_table(2, 3, 8);
  EXPECT_EQ(p.rows(), 6);
  EXPECT_EQ(p.cols(), 8);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < i; ++j) EXPECT_NE(p.row(i), p.row(j));
  }
  EXPECT_LE(p.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_EQ(position_table(2, 2, 6).rows(), 4);
}

TEST(DenoiserTest, DefaultHeadsNearestDivisorOfTwelfth) {
  EXPECT_EQ(default_num_heads(96), 8);
  EXPECT_EQ(default_num_heads(144), 12);
  EXPECT_EQ(default_num_heads(108), 9);
  EXPECT_EQ(default_num_heads(240), 20);
  EXPECT_EQ(default_num_heads(8), 1);
  EXPECT_EQ(default_num_heads(30), 2);  // 2 and 3 are equally close
  for (int h = 1; h <= 300; ++h) EXPECT_EQ(h % default_num_heads(h), 0) << h;
  EXPECT_THROW((void)default_num_heads(0), ValidationError);
}

}  // namespace
}  // namespace laduree
