#include <doctest.h>

#include <cmath>

#include "ict/autodiff.hpp"
#include "ict/checkpoint.hpp"
#include "ict/optim.hpp"
#include "ict/rng.hpp"

#include "fd_check.hpp"

using namespace ict;
using ad::Tape;
using ad::Var;
using testing::fd_max_rel_error;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.normal(0.0, scale);
    return t;
}

// Reduce an arbitrary op output to a scalar through fixed random weights
// so every output element influences the loss.
Var probe(Tape& tape, Var out, Rng& rng) {
    Tensor w = random_tensor(out->value.shape, rng);
    return ad::sum_all(ad::mul(out, tape.leaf(std::move(w))));
}

constexpr double kTol = 1e-5;

}  // namespace

TEST_CASE("finite differences validate every op") {
    for (uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(seed + 100);
        ParamStore ps;
        ps.add("a", random_tensor({3, 4}, rng));
        ps.add("b", random_tensor({3, 4}, rng));
        ps.add("m", random_tensor({4, 5}, rng));
        ps.add("v", random_tensor({4}, rng));
        ps.add("gain", random_tensor({4}, rng, 0.3));
        Tensor cstep = random_tensor({3, 4}, rng);
        Rng probe_rng(seed + 900);

        auto check = [&](const char* what, testing::LossFn f) {
            CAPTURE(what);
            CAPTURE(seed);
            CHECK(fd_max_rel_error(ps, f) < kTol);
        };

        check("add", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::add(t.param("a", p.at("a")), t.param("b", p.at("b"))), pr);
        });
        check("sub", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::sub(t.param("a", p.at("a")), t.param("b", p.at("b"))), pr);
        });
        check("mul", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::mul(t.param("a", p.at("a")), t.param("b", p.at("b"))), pr);
        });
        check("scale", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::scale(t.param("a", p.at("a")), -1.7), pr);
        });
        check("add_rowvec", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::add_rowvec(t.param("a", p.at("a")), t.param("v", p.at("v"))),
                         pr);
        });
        check("matmul", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::matmul(t.param("a", p.at("a")), t.param("m", p.at("m"))), pr);
        });
        check("transpose", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::transpose(t.param("a", p.at("a"))), pr);
        });
        check("tanh", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::tanh_op(t.param("a", p.at("a"))), pr);
        });
        check("gelu", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::gelu(t.param("a", p.at("a"))), pr);
        });
        check("softmax_rows", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::softmax_rows(t.param("a", p.at("a"))), pr);
        });
        check("layer_norm", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t,
                         ad::layer_norm(t.param("a", p.at("a")), t.param("gain", p.at("gain")),
                                        t.param("v", p.at("v"))),
                         pr);
        });
        check("embedding", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::embedding(t.param("m", p.at("m")), {0, 2, 1, 2}), pr);
        });
        check("slice_cols", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::slice_cols(t.param("a", p.at("a")), 1, 2), pr);
        });
        check("concat_cols", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            Var a = t.param("a", p.at("a"));
            return probe(t, ad::concat_cols({a, ad::scale(a, 2.0)}), pr);
        });
        check("add_const", [&](Tape& t, const ParamStore& p) {
            Rng pr = probe_rng;
            return probe(t, ad::add_const(t.param("a", p.at("a")), cstep), pr);
        });
        check("sum_all", [&](Tape& t, const ParamStore& p) {
            return ad::sum_all(t.param("a", p.at("a")));
        });
        check("mean_all", [&](Tape& t, const ParamStore& p) {
            return ad::mean_all(ad::mul(t.param("a", p.at("a")), t.param("b", p.at("b"))));
        });
        check("cross_entropy_sum", [&](Tape& t, const ParamStore& p) {
            return ad::cross_entropy_sum(t.param("m", p.at("m")), {{0, 1}, {2, 0}, {3, 4}});
        });
    }
}

TEST_CASE("sum_all gradient is exactly ones") {
    Rng rng(7);
    ParamStore ps;
    ps.add("x", random_tensor({2, 3}, rng));
    Tape tape;
    Var loss = ad::sum_all(tape.param("x", ps.at("x")));
    tape.backward(loss);
    auto grads = tape.collect_grads(ps);
    for (double g : grads[0].second.data) CHECK(g == 1.0);
}

TEST_CASE("squared norm gradient is exactly 2x") {
    Rng rng(8);
    ParamStore ps;
    ps.add("x", random_tensor({4}, rng));
    Tape tape;
    Var x = tape.param("x", ps.at("x"));
    tape.backward(ad::sum_all(ad::mul(x, x)));
    auto grads = tape.collect_grads(ps);
    for (size_t i = 0; i < 4; ++i)
        CHECK(grads[0].second.data[i] == 2.0 * ps.at("x").data[i]);
}

TEST_CASE("backward twice errors") {
    ParamStore ps;
    ps.add("x", Tensor::row({1.0, 2.0}));
    Tape tape;
    Var loss = ad::sum_all(tape.param("x", ps.at("x")));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), ContractError);
}

TEST_CASE("backward rejects non-scalar loss") {
    ParamStore ps;
    ps.add("x", Tensor::row({1.0, 2.0}));
    Tape tape;
    Var x = tape.param("x", ps.at("x"));
    CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("unreachable parameters receive exact zero gradients") {
    Rng rng(9);
    ParamStore ps;
    ps.add("used", random_tensor({2, 2}, rng));
    ps.add("unused", random_tensor({3, 3}, rng));
    Tape tape;
    Var loss = ad::sum_all(tape.param("used", ps.at("used")));
    tape.param("unused", ps.at("unused"));
    tape.backward(loss);
    auto grads = tape.collect_grads(ps);
    REQUIRE(grads[1].first == "unused");
    for (double g : grads[1].second.data) CHECK(g == 0.0);
}

TEST_CASE("shape mismatches are contract errors") {
    Tape tape;
    Var a = tape.leaf(Tensor::zeros({2, 3}), true);
    Var b = tape.leaf(Tensor::zeros({3, 2}), true);
    CHECK_THROWS_AS(ad::add(a, b), ContractError);
    CHECK_THROWS_AS(ad::mul(a, b), ContractError);
    CHECK_THROWS_AS(ad::matmul(a, a), ContractError);
    CHECK_THROWS_AS(ad::slice_cols(a, 2, 5), ContractError);
    CHECK_THROWS_AS(ad::embedding(a, {5}), ContractError);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(11);
    Tape tape;
    Var s = ad::softmax_rows(tape.leaf(random_tensor({3, 5}, rng, 3.0)));
    for (int64_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (int64_t c = 0; c < 5; ++c) sum += s->value.at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("dropout p=0 is the identity, p>0 scales survivors") {
    Rng rng(12);
    Tensor x = random_tensor({4, 4}, rng);
    Tape tape;
    Var in = tape.leaf(x);
    Var out0 = ad::dropout(in, 0.0, rng);
    CHECK(out0 == in);

    double p = 0.5;
    Var outp = ad::dropout(in, p, rng);
    for (size_t i = 0; i < x.data.size(); ++i) {
        double v = outp->value.data[i];
        bool kept = v != 0.0;
        if (kept) CHECK(v == doctest::Approx(x.data[i] / (1.0 - p)).epsilon(1e-12));
    }
}

TEST_CASE("repeated backward from identical seeds is bitwise deterministic") {
    auto run = [] {
        Rng rng(13);
        ParamStore ps;
        ps.add("a", random_tensor({3, 3}, rng));
        ps.add("m", random_tensor({3, 3}, rng));
        Tape tape;
        Var loss = ad::sum_all(
            ad::gelu(ad::matmul(tape.param("a", ps.at("a")), tape.param("m", ps.at("m")))));
        tape.backward(loss);
        return tape.collect_grads(ps);
    };
    auto g1 = run();
    auto g2 = run();
    REQUIRE(g1.size() == g2.size());
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i].second.data == g2[i].second.data);
}

TEST_CASE("ten SGD steps on a quadratic contract x by 0.8 each step") {
    // f(x) = x^2/2, lr = 0.2: x <- 0.8 x, so x_10 = 0.8^10 x_0.
    ParamStore ps;
    ps.add("x", Tensor::scalar(1.0));
    for (int i = 0; i < 10; ++i) {
        Tape tape;
        Var x = tape.param("x", ps.at("x"));
        tape.backward(ad::scale(ad::mul(x, x), 0.5));
        sgd_step(ps, tape.collect_grads(ps), 0.2);
    }
    CHECK(ps.at("x").item() == doctest::Approx(std::pow(0.8, 10)).epsilon(1e-12));
}

TEST_CASE("zero gradients leave SGD parameters bit-identical") {
    Rng rng(14);
    ParamStore ps;
    ps.add("x", random_tensor({5}, rng));
    ParamStore before = ps;
    GradStore zeros{{"x", Tensor::zeros({5})}};
    sgd_step(ps, zeros, 0.3);
    CHECK(ps.bitwise_equal(before));
}

TEST_CASE("adam step matches the hand formula") {
    ParamStore ps;
    ps.add("x", Tensor::scalar(2.0));
    AdamState st = AdamState::init(ps);
    AdamConfig cfg;
    double g = 0.5, lr = 0.1;
    adam_step(ps, st, {{"x", Tensor::scalar(g)}}, lr, cfg);
    double m = (1 - cfg.beta1) * g, v = (1 - cfg.beta2) * g * g;
    double mhat = m / (1 - cfg.beta1), vhat = v / (1 - cfg.beta2);
    double expect = 2.0 - lr * mhat / (std::sqrt(vhat) + cfg.eps);
    CHECK(ps.at("x").item() == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("non-finite gradients raise divergence") {
    ParamStore ps;
    ps.add("x", Tensor::scalar(1.0));
    Optimizer opt(Optimizer::Kind::Sgd, 0.1, ps);
    GradStore bad{{"x", Tensor::scalar(std::nan(""))}};
    CHECK_THROWS_AS(opt.step(ps, bad), DivergenceError);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng(15);
    ParamStore ps;
    ps.add("w", random_tensor({3, 7}, rng));
    ps.add("b", random_tensor({7}, rng));
    ps.at("b").data[0] = -0.0;
    ps.at("b").data[1] = 1e-310;  // subnormal
    ps.step_count = 42;

    auto dir = std::filesystem::temp_directory_path() / "ict_ckpt_test";
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "model", ps, {{"note", "t"}});
    Checkpoint ck = load_checkpoint(dir / "model");
    CHECK(ck.params.bitwise_equal(ps));
    CHECK(ck.params.step_count == 42);
    CHECK(ck.meta.at("note") == "t");
    CHECK(std::signbit(ck.params.at("b").data[0]));
}
