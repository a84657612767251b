#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "microcep/errors.hpp"
#include "microcep/tinyol.hpp"

using namespace microcep;
using namespace microcep::tinyol;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) out(i++) = d;
    return out;
}

Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
    return v;
}

Model identity_model(Eigen::Index d) {
    Model m = make_model("id", d, {{d, Activation::Linear}}, 0, Loss::Mse, 1);
    m.layers[0].weights = Matrix::Identity(d, d);
    m.layers[0].bias.setZero();
    return m;
}

std::vector<unsigned char> bytes_of(const Layer& l) {
    std::vector<unsigned char> out(sizeof(double) * static_cast<std::size_t>(l.weights.size() + l.bias.size()));
    std::memcpy(out.data(), l.weights.data(), sizeof(double) * static_cast<std::size_t>(l.weights.size()));
    std::memcpy(out.data() + sizeof(double) * static_cast<std::size_t>(l.weights.size()), l.bias.data(),
                sizeof(double) * static_cast<std::size_t>(l.bias.size()));
    return out;
}

}  // namespace

TEST(Preprocess, IdentityAndArithmetic) {
    Model m = identity_model(3);
    const Vector x = vec({1.5, -2, 7});
    EXPECT_EQ(preprocess(m, x), x);

    Model one = identity_model(1);
    one.mean = vec({2});
    one.std = vec({2});
    EXPECT_EQ(preprocess(one, vec({4})), vec({1}));
    EXPECT_THROW(preprocess(one, vec({1, 2})), DimensionMismatch);
}

TEST(Preprocess, InverseRecoversInput) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 200; ++t) {
        Model m = identity_model(6);
        m.mean = random_vector(rng, 6, 10.0);
        m.std = random_vector(rng, 6, 3.0).cwiseAbs().array() + 0.1;
        const Vector x = random_vector(rng, 6, 50.0);
        const Vector back = (preprocess(m, x).array() * m.std.array()).matrix() + m.mean;
        EXPECT_LE((back - x).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Infer, IdentityNetwork) {
    Model m = identity_model(4);
    m.mean = vec({1, 1, 1, 1});
    const Vector x = vec({3, 4, 5, 6});
    EXPECT_EQ(infer(m, x), preprocess(m, x));
}

TEST(Infer, SoftmaxSumsToOne) {
    std::mt19937_64 rng(5);
    const Model m = make_model("cls", 5, {{7, Activation::Relu}, {4, Activation::Softmax}}, 1, Loss::CrossEntropy, 11);
    for (int t = 0; t < 500; ++t) {
        const Vector y = infer(m, random_vector(rng, 5, 20.0));
        EXPECT_NEAR(y.sum(), 1.0, 1e-9);
        EXPECT_GE(y.minCoeff(), 0.0);
    }
}

TEST(Infer, HandComputedTwoLayerNetwork) {
    Model m = make_model("hand", 2, {{2, Activation::Relu}, {1, Activation::Sigmoid}}, 1, Loss::Mse, 0);
    m.mean = vec({1, 0});
    m.std = vec({2, 1});
    m.layers[0].weights << 1.0, -2.0, 0.5, 0.25;
    m.layers[0].bias << 0.1, -0.3;
    m.layers[1].weights << 0.7, -1.1;
    m.layers[1].bias << 0.2;
    // x = (3, 1) -> x' = (1, 1); h = relu(1 - 2 + 0.1, 0.5 + 0.25 - 0.3) = (0, 0.45)
    // z = 0.7*0 - 1.1*0.45 + 0.2 = -0.295; y = 1 / (1 + e^0.295)
    const double expected = 1.0 / (1.0 + std::exp(0.295));
    EXPECT_NEAR(infer(m, vec({3, 1}))(0), expected, 1e-9);
}

TEST(Infer, IsPure) {
    const Model m = make_model("p", 3, {{5, Activation::Sigmoid}, {2, Activation::Linear}}, 0, Loss::Mse, 2);
    const Vector x = vec({0.3, -1, 2});
    const Vector a = infer(m, x);
    const Vector b = infer(m, x);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * 2), 0);
}

TEST(TrainStep, ZeroLearningRateKeepsWeights) {
    Model m = make_model("z", 3, {{4, Activation::Relu}, {2, Activation::Linear}}, 1, Loss::Mse, 9);
    const Model before = m;
    Trainer tr{0.0, 0};
    Metrics met;
    const StepResult r = train_step(m, tr, met, vec({1, 2, 3}), vec({0.5, -0.5}));
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        EXPECT_EQ(bytes_of(m.layers[l]), bytes_of(before.layers[l]));
    }
    EXPECT_GT(r.loss, 0.0);
    EXPECT_EQ(met.sample_count, 1u);
    EXPECT_DOUBLE_EQ(met.running_loss_mean, r.loss);
    EXPECT_EQ(tr.step_count, 1u);
}

TEST(TrainStep, Errors) {
    Model frozen = make_model("f", 2, {{2, Activation::Linear}}, 1, Loss::Mse, 1);
    Trainer tr;
    Metrics met;
    EXPECT_THROW(train_step(frozen, tr, met, vec({1, 2}), vec({1, 2})), FrozenOnlyModel);
    Model m = make_model("m", 2, {{2, Activation::Linear}}, 0, Loss::Mse, 1);
    EXPECT_THROW(train_step(m, tr, met, vec({1, 2, 3}), vec({1, 2})), DimensionMismatch);
    EXPECT_THROW(train_step(m, tr, met, vec({1, 2}), vec({1})), DimensionMismatch);
    EXPECT_EQ(met.sample_count, 0u);
}

// Central finite differences on the loss surface versus backprop.
TEST(TrainStep, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(17);
    const Activation hidden[] = {Activation::Linear, Activation::Relu, Activation::Sigmoid};
    const double h = 1e-5;
    double worst = 0.0;
    for (int cfg = 0; cfg < 20; ++cfg) {
        const Eigen::Index in = 2 + static_cast<Eigen::Index>(rng() % 4);
        const Eigen::Index mid = 2 + static_cast<Eigen::Index>(rng() % 5);
        const Eigen::Index out = 1 + static_cast<Eigen::Index>(rng() % 3);
        const bool classify = cfg % 3 == 2;
        const bool with_frozen = cfg % 2 == 0;
        std::vector<LayerSpec> specs;
        if (with_frozen) specs.push_back({in, hidden[rng() % 3]});
        specs.push_back({mid, hidden[rng() % 3]});
        specs.push_back({classify ? out + 1 : out, classify ? Activation::Softmax : hidden[rng() % 3]});
        Model m = make_model("g", in, specs, with_frozen ? 1 : 0, classify ? Loss::CrossEntropy : Loss::Mse, rng());
        for (Layer& l : m.layers) l.bias = random_vector(rng, l.out_dim(), 0.3);
        const Vector x = random_vector(rng, in);
        Vector y = classify ? Vector(Vector::Zero(m.output_dim())) : random_vector(rng, out);
        if (classify) y(static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(y.size()))) = 1.0;

        const Gradients g = gradients(m, x, y);
        ASSERT_EQ(g.weights.size(), m.layers.size() - m.frozen_count);
        auto check = [&](double& param, double analytic) {
            const double saved = param;
            param = saved + h;
            const double up = loss_value(m, x, y);
            param = saved - h;
            const double down = loss_value(m, x, y);
            param = saved;
            const double numeric = (up - down) / (2 * h);
            const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
            const double rel = std::fabs(analytic - numeric) / scale;
            worst = std::max(worst, rel);
            EXPECT_LE(rel, 1e-4) << "config " << cfg << " analytic " << analytic << " numeric " << numeric;
        };
        for (std::size_t k = 0; k < g.weights.size(); ++k) {
            Layer& layer = m.layers[m.frozen_count + k];
            for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
                for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) check(layer.weights(r, c), g.weights[k](r, c));
                check(layer.bias(r), g.bias[k](r));
            }
        }
    }
    RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(TrainStep, FrozenPrefixIsByteIdentical) {
    std::mt19937_64 rng(23);
    Model m = make_model("fz", 4, {{6, Activation::Relu}, {5, Activation::Sigmoid}, {3, Activation::Linear}}, 2,
                         Loss::Mse, 4);
    const auto l0 = bytes_of(m.layers[0]);
    const auto l1 = bytes_of(m.layers[1]);
    const auto l2 = bytes_of(m.layers[2]);
    Trainer tr{0.05, 0};
    Metrics met;
    for (int i = 0; i < 1000; ++i) train_step(m, tr, met, random_vector(rng, 4), random_vector(rng, 3));
    EXPECT_EQ(bytes_of(m.layers[0]), l0);
    EXPECT_EQ(bytes_of(m.layers[1]), l1);
    EXPECT_NE(bytes_of(m.layers[2]), l2);
}

TEST(TrainStep, OnlineRunHalvesWindowedLoss) {
    std::mt19937_64 rng(31);
    Model m = make_model("lin", 4, {{8, Activation::Linear}, {2, Activation::Linear}}, 1, Loss::Mse, 8);
    Matrix target(2, 4);
    target << 0.5, -1.0, 0.25, 2.0, -0.75, 0.3, 1.2, -0.4;
    Trainer tr;
    Metrics met;
    std::vector<double> losses;
    for (int i = 0; i < 500; ++i) {
        const Vector x = random_vector(rng, 4);
        losses.push_back(train_step(m, tr, met, x, target * x).loss);
    }
    double first = 0;
    double last = 0;
    for (int i = 0; i < 50; ++i) {
        first += losses[static_cast<std::size_t>(i)];
        last += losses[losses.size() - 50 + static_cast<std::size_t>(i)];
    }
    EXPECT_LT(last / 50, 0.5 * (first / 50));
}

TEST(Metrics, StreamingMeanEqualsBatchMean) {
    std::mt19937_64 rng(37);
    Model m = make_model("s", 3, {{3, Activation::Sigmoid}, {2, Activation::Softmax}}, 0, Loss::CrossEntropy, 5);
    Trainer tr;
    Metrics met;
    double sum = 0;
    int correct = 0;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
        const Vector x = random_vector(rng, 3);
        const Vector y = x(0) > 0 ? vec({1, 0}) : vec({0, 1});
        const StepResult r = train_step(m, tr, met, x, y);
        sum += r.loss;
        Eigen::Index pi = 0;
        r.prediction.maxCoeff(&pi);
        correct += (pi == (x(0) > 0 ? 0 : 1)) ? 1 : 0;
    }
    EXPECT_NEAR(met.running_loss_mean, sum / n, 1e-9);
    EXPECT_NEAR(met.running_accuracy, static_cast<double>(correct) / n, 1e-9);
    EXPECT_EQ(met.sample_count, static_cast<std::uint64_t>(n));
}

TEST(AnomalyScore, IdentityIsZero) {
    std::mt19937_64 rng(41);
    const Model m = identity_model(16);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(anomaly_score(m, random_vector(rng, 16, 100.0)), 0.0);
}

TEST(AnomalyScore, ConstantOffsetGivesOne) {
    Model m = identity_model(5);
    m.layers[0].bias.setConstant(1.0);
    EXPECT_DOUBLE_EQ(anomaly_score(m, vec({1, 2, 3, 4, 5})), 1.0);
}

TEST(AnomalyScore, MatchesDirectComputation) {
    std::mt19937_64 rng(43);
    for (int t = 0; t < 100; ++t) {
        Model m = make_model("ae", 6, {{3, Activation::Relu}, {6, Activation::Linear}}, 1, Loss::Mse, rng());
        m.mean = random_vector(rng, 6);
        m.std = random_vector(rng, 6).cwiseAbs().array() + 0.5;
        const Vector x = random_vector(rng, 6, 4.0);
        // Independent forward pass.
        const Vector xp = ((x - m.mean).array() / m.std.array()).matrix();
        const Vector h = (m.layers[0].weights * xp + m.layers[0].bias).cwiseMax(0.0);
        const Vector out = m.layers[1].weights * h + m.layers[1].bias;
        double sse = 0;
        for (Eigen::Index i = 0; i < 6; ++i) sse += (out(i) - xp(i)) * (out(i) - xp(i));
        EXPECT_NEAR(anomaly_score(m, x), sse / 6, 1e-12);
    }
}

TEST(AnomalyScore, RejectsNonAutoencoder) {
    const Model m = make_model("c", 4, {{2, Activation::Linear}}, 0, Loss::Mse, 1);
    EXPECT_THROW(anomaly_score(m, vec({1, 2, 3, 4})), NotAutoencoder);
}

TEST(ModelFile, RoundTripIsByteExact) {
    std::mt19937_64 rng(47);
    for (int t = 0; t < 50; ++t) {
        Model m = make_model("rt" + std::to_string(t), 5, {{4, Activation::Relu}, {3, Activation::Softmax}}, 1,
                             Loss::CrossEntropy, rng());
        m.mean = random_vector(rng, 5, 1e3);
        m.std = random_vector(rng, 5).cwiseAbs().array() + 1e-9;
        for (Layer& l : m.layers) l.bias = random_vector(rng, l.out_dim(), 1e-7);
        const std::string first = save_model(m);
        const Model back = load_model(first);
        EXPECT_EQ(save_model(back), first);
        for (std::size_t l = 0; l < m.layers.size(); ++l) EXPECT_EQ(bytes_of(back.layers[l]), bytes_of(m.layers[l]));
        EXPECT_EQ(back.frozen_count, m.frozen_count);
        EXPECT_EQ(back.init_seed, m.init_seed);
    }
}

TEST(ModelFile, ValidationErrors) {
    Model m = make_model("v", 2, {{3, Activation::Relu}, {1, Activation::Linear}}, 1, Loss::Mse, 3);
    const std::string good = save_model(m);

    std::string zero_std = good;
    const auto pos = zero_std.find("\"std\"");
    ASSERT_NE(pos, std::string::npos);
    const auto one = zero_std.find('1', pos);
    zero_std[one] = '0';
    EXPECT_THROW(load_model(zero_std), InvariantViolation);

    Model chain = m;
    chain.layers[1].weights = Matrix::Zero(1, 2);
    EXPECT_THROW(validate(chain), InvariantViolation);

    std::string bad_dims = good;
    const auto in_pos = bad_dims.rfind("\"in_dim\": 3");
    ASSERT_NE(in_pos, std::string::npos);
    bad_dims.replace(in_pos, 11, "\"in_dim\": 2");
    EXPECT_THROW(load_model(bad_dims), InvariantViolation);

    try {
        std::string missing = good;
        missing.replace(missing.find("\"activation\""), 12, "\"activatio\"");
        load_model(missing);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.path(), "$.layers[0].activation");
    }
    EXPECT_THROW(load_model("{ not json"), FormatError);
    EXPECT_THROW(load_model("[]"), FormatError);

    Model over = m;
    over.frozen_count = 3;
    EXPECT_THROW(validate(over), InvariantViolation);
    EXPECT_THROW(make_model("s", 2, {{2, Activation::Softmax}, {1, Activation::Linear}}, 0, Loss::Mse, 1),
                 InvariantViolation);
}

TEST(ModelPool, HostsModelsById) {
    ModelPool pool;
    pool.add(identity_model(2));
    EXPECT_TRUE(pool.contains("id"));
    EXPECT_THROW(pool.add(identity_model(2)), InvariantViolation);
    EXPECT_THROW(pool.get("missing"), OutOfRange);
    EXPECT_EQ(pool.ids(), std::vector<std::string>{"id"});
    EXPECT_EQ(pool.get("id").trainer.learning_rate, 0.01);
}
