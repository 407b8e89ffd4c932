#include <sdlto/surrogate.hpp>

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace sdlto;

namespace {

Vector random_vector (int n, std::mt19937& rng, double lo, double hi)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    Vector v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

TrainingSettings quick_settings (std::uint64_t seed = 1)
{
    TrainingSettings s;
    s.hidden = {64, 64};
    s.epochs = 800;
    s.patience = 100;
    s.seed = seed;
    return s;
}

}  // namespace


TEST(Envelope, SingletonAndExtremes)
{
    LookbackBuffer buf(3);
    EXPECT_THROW((void)envelope(buf), std::invalid_argument);
    Vector const d = (Vector(3) << 0.1, 0.5, 0.9).finished();
    buf.push(d);
    auto e = envelope(buf);
    EXPECT_EQ(e.lower, d);
    EXPECT_EQ(e.upper, d);

    LookbackBuffer two(1);
    two.push(Vector::Zero(4));
    two.push(Vector::Ones(4));
    e = envelope(two);
    EXPECT_EQ(e.lower, Vector::Zero(4));
    EXPECT_EQ(e.upper, Vector::Ones(4));
    EXPECT_EQ(e.midpoint(), Vector::Constant(4, 0.5));
}

TEST(Envelope, MatchesBruteForceScan)
{
    std::mt19937 rng(3);
    LookbackBuffer buf(2);
    std::vector<Vector> ds;
    for (int k = 0; k < 3; ++k) {
        ds.push_back(random_vector(10, rng, 0, 1));
        buf.push(ds.back());
    }
    auto const e = envelope(buf);
    for (int i = 0; i < 10; ++i) {
        double lo = 2, hi = -1;
        for (auto const& d : ds) { lo = std::min(lo, d[i]); hi = std::max(hi, d[i]); }
        EXPECT_EQ(e.lower[i], lo);
        EXPECT_EQ(e.upper[i], hi);
    }
}

TEST(Envelope, GrowsMonotonicallyUntilWindowIsFull)
{
    std::mt19937 rng(4);
    LookbackBuffer buf(6);
    buf.push(random_vector(20, rng, 0, 1));
    auto prev = envelope(buf);
    while (!buf.full()) {
        buf.push(random_vector(20, rng, 0, 1));
        auto const e = envelope(buf);
        EXPECT_TRUE((e.lower.array() <= prev.lower.array()).all());
        EXPECT_TRUE((e.upper.array() >= prev.upper.array()).all());
        EXPECT_TRUE((e.lower.array() <= e.upper.array()).all());
        prev = e;
    }
    EXPECT_EQ(buf.size(), 7);
    buf.push(random_vector(20, rng, 0, 1));
    EXPECT_EQ(buf.size(), 7);
}

TEST(Sampler, DegenerateSigmaReturnsMidpoint)
{
    Envelope const env{Vector::Constant(8, 0.2), Vector::Constant(8, 0.6)};
    SamplerConfig const cfg{1e-12, 16, 9};
    for (auto const& s : draw_samples(env, cfg)) {
        EXPECT_LT((s - env.midpoint()).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Sampler, EmpiricalMeanAndClipping)
{
    Envelope const env{Vector::Zero(12), Vector::Ones(12)};
    auto const samples = draw_samples(env, {0.05, 10000, 21});
    ASSERT_EQ(samples.size(), 10000u);
    Vector mean = Vector::Zero(12);
    for (auto const& s : samples) {
        EXPECT_GE(s.minCoeff(), 0.0);
        EXPECT_LE(s.maxCoeff(), 1.0);
        mean += s;
    }
    mean /= 10000.0;
    EXPECT_LT((mean.array() - 0.5).abs().maxCoeff(), 0.01);

    // wide sigma near the bounds exercises the clip
    Envelope const edge{Vector::Zero(5), Vector::Constant(5, 0.1)};
    for (auto const& s : draw_samples(edge, {0.5, 200, 1})) {
        EXPECT_GE(s.minCoeff(), 0.0);
        EXPECT_LE(s.maxCoeff(), 1.0);
    }
}

TEST(Sampler, DeterministicPerSeedAndStream)
{
    Envelope const env{Vector::Constant(6, 0.3), Vector::Constant(6, 0.5)};
    SamplerConfig const cfg{0.05, 4, 77};
    auto const a = draw_samples(env, cfg, 3);
    auto const b = draw_samples(env, cfg, 3);
    auto const c = draw_samples(env, cfg, 4);
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k], b[k]);
        EXPECT_NE(a[k], c[k]);
    }
    EXPECT_THROW((void)draw_samples(env, {0.0, 4, 1}), std::invalid_argument);
}

TEST(Cosine, DistanceExamples)
{
    Vector const a = (Vector(3) << 1, 2, 3).finished();
    EXPECT_NEAR(cosine_distance(a, a), 0.0, 1e-15);
    EXPECT_NEAR(cosine_distance((Vector(2) << 1, 0).finished(), (Vector(2) << 0, 1).finished()), 1.0, 1e-15);
    EXPECT_NEAR(cosine_distance(a, Vector(-a)), 2.0, 1e-15);
    EXPECT_THROW((void)cosine_distance(a, Vector::Zero(3)), std::invalid_argument);
}

TEST(Trigger, Examples)
{
    std::mt19937 rng(8);
    Vector const ref = random_vector(10, rng, 0.1, 0.9);
    EXPECT_FALSE(should_relearn(ref, {0.01, ref}));
    Vector const e0 = (Vector(2) << 1, 0).finished();
    Vector const e1 = (Vector(2) << 0, 1).finished();
    EXPECT_TRUE(should_relearn(e1, {0.5, e0}));
    for (int k = 0; k < 20; ++k) {
        Vector const x = random_vector(10, rng, 0.0, 1.0);
        EXPECT_FALSE(should_relearn(x, {2.0, ref}));
    }
    EXPECT_THROW((void)should_relearn(ref, {0.1, Vector{}}), std::invalid_argument);
    EXPECT_THROW((TriggerConfig{2.5, ref}.validate()), std::invalid_argument);
}

TEST(Trigger, MonotoneAlongSegmentFromReference)
{
    std::mt19937 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        Vector const ref = random_vector(30, rng, 0.0, 1.0);
        Vector const x = random_vector(30, rng, 0.0, 1.0);
        double prev = 0.0;
        for (int k = 1; k <= 20; ++k) {
            Vector const xt = ref + (k / 20.0) * (x - ref);
            double const d = cosine_distance(xt, ref);
            EXPECT_GE(d, prev - 1e-12);
            prev = d;
        }
        double const lambda = cosine_distance(x, ref) + 1e-9;
        for (int k = 0; k <= 10; ++k) {
            EXPECT_FALSE(should_relearn(Vector(ref + (k / 10.0) * (x - ref)), {lambda, ref}));
        }
    }
}

TEST(GradientNet, ConstantTargetsFallBackToConstantPredictor)
{
    std::mt19937 rng(5);
    Vector const g = random_vector(16, rng, -2.0, -0.1);
    std::vector<TrainingPair> pairs;
    for (int k = 0; k < 12; ++k) pairs.push_back({random_vector(16, rng, 0.4, 0.6), g});
    TrainingReport rep;
    auto const net = train(pairs, GradientNet::for_design_size(16, {32, 32}, 1), quick_settings(), &rep);
    EXPECT_TRUE(rep.constant_fallback);
    Vector const p = net.predict(Vector::Constant(16, 0.5));
    EXPECT_LT((p - g).norm(), 1e-3 * g.norm());
}

TEST(GradientNet, LearnsLinearMapWithinFivePercent)
{
    int const n = 32;
    std::mt19937 rng(17);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix a(n, n);
    for (auto& v : a.reshaped()) v = normal(rng);
    Envelope const env{Vector::Constant(n, 0.4), Vector::Constant(n, 0.6)};
    auto const designs = draw_samples(env, {0.05, 160, 3});
    std::vector<TrainingPair> fit, held;
    for (std::size_t k = 0; k < designs.size(); ++k) {
        (k < 128 ? fit : held).push_back({designs[k], a * designs[k]});
    }
    TrainingSettings s;
    s.seed = 2;
    TrainingReport rep;
    auto const net = train(fit, GradientNet::for_design_size(n, s.hidden, 4), s, &rep);
    double err = 0, ref = 0;
    for (auto const& h : held) {
        err += (net.predict(h.design) - h.gradient).squaredNorm();
        ref += h.gradient.squaredNorm();
    }
    double const rel = std::sqrt(err / ref);
    EXPECT_LE(rel, 0.05) << "held-out relative error " << rel;
    EXPECT_LT(rep.final_loss, rep.initial_loss);
}

TEST(GradientNet, TrainingReducesLossAndFitsTrainingPairs)
{
    int const n = 24;
    std::mt19937 rng(9);
    std::vector<TrainingPair> pairs;
    Envelope const env{Vector::Constant(n, 0.3), Vector::Constant(n, 0.7)};
    for (auto const& d : draw_samples(env, {0.05, 40, 11})) {
        Vector g = -(1.0 + d.array().square()).matrix();
        g[0] += 3.0 * std::sin(10 * d[1]);
        pairs.push_back({d, g});
    }
    TrainingReport rep;
    auto const net = train(pairs, GradientNet::for_design_size(n, {64, 64}, 3), quick_settings(), &rep);
    EXPECT_LT(rep.final_loss, rep.initial_loss);
    EXPECT_GT(rep.epochs_run, 0);
    for (auto const& p : pairs) {
        EXPECT_GE(cosine_similarity(net.predict(p.design), p.gradient), 0.95);
    }
    Vector const q = Vector::Constant(n, 0.5);
    EXPECT_EQ(net.predict(q), net.predict(q));
}

TEST(GradientNet, ErrorsOnBadUse)
{
    auto const net = GradientNet::for_design_size(4, {8}, 1);
    EXPECT_FALSE(net.trained());
    EXPECT_THROW((void)net.predict(Vector::Zero(4)), SurrogateError);
    std::vector<TrainingPair> one{{Vector::Zero(4), Vector::Ones(4)}};
    EXPECT_THROW((void)train(one, net, quick_settings()), std::invalid_argument);
    std::vector<TrainingPair> bad{{Vector::Zero(4), Vector::Ones(4)},
                                  {Vector::Zero(4), Vector::Constant(4, std::nan(""))}};
    EXPECT_THROW((void)train(bad, net, quick_settings()), SurrogateError);
    EXPECT_THROW(GradientNet({4, 8, 5}, 1), std::invalid_argument);
}

TEST(GradientNet, SerializationRoundTripPredictsIdentically)
{
    int const n = 10;
    std::mt19937 rng(2);
    std::vector<TrainingPair> pairs;
    for (int k = 0; k < 12; ++k) {
        Vector d = random_vector(n, rng, 0.2, 0.8);
        pairs.push_back({d, Vector(-d.array().exp())});
    }
    auto s = quick_settings();
    s.epochs = 50;
    auto const net = train(pairs, GradientNet::for_design_size(n, {16, 16}, 7), s);
    std::stringstream buf;
    write_net(buf, net);
    auto const back = read_net(buf);
    EXPECT_EQ(back.layer_dims(), net.layer_dims());
    for (auto const& p : pairs) EXPECT_EQ(back.predict(p.design), net.predict(p.design));

    std::stringstream junk("sdlto-gradnet 2\n");
    EXPECT_THROW((void)read_net(junk), Error);
}
