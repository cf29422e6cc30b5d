#include <doctest.h>

#include <cmath>
#include <vector>

#include "ict/lm.hpp"

using namespace ict;

namespace {

LmConfig tiny_config() {
    LmConfig c;
    c.vocab_size = 11;
    c.d_model = 8;
    c.n_heads = 1;
    c.n_layers = 1;
    c.d_ff = 16;
    c.max_context = 12;
    c.dropout = 0.0;
    return c;
}

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
    Mat m(size_t(t.rows()), std::vector<double>(size_t(t.cols())));
    for (int64_t r = 0; r < t.rows(); ++r)
        for (int64_t c = 0; c < t.cols(); ++c) m[size_t(r)][size_t(c)] = t.at(r, c);
    return m;
}

Mat matmul_ref(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t k = 0; k < b.size(); ++k)
            for (size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

void add_row_ref(Mat& m, const std::vector<double>& v) {
    for (auto& row : m)
        for (size_t j = 0; j < v.size(); ++j) row[j] += v[j];
}

Mat layer_norm_ref(const Mat& x, const std::vector<double>& g, const std::vector<double>& b) {
    Mat out = x;
    for (auto& row : out) {
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= double(row.size());
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= double(row.size());
        double inv = 1.0 / std::sqrt(var + 1e-5);
        for (size_t j = 0; j < row.size(); ++j)
            row[j] = (row[j] - mean) * inv * g[j] + b[j];
    }
    return out;
}

double gelu_ref(double x) {
    return 0.5 * x *
           (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

// Straight-line reimplementation of the single-layer single-head forward
// pass, sharing nothing with the library code.
Mat forward_ref(const LmConfig& cfg, const ParamStore& p, const std::vector<int64_t>& toks) {
    size_t L = toks.size(), D = size_t(cfg.d_model);
    Mat tok = to_mat(p.at("tok_emb")), pos = to_mat(p.at("pos_emb"));
    Mat x(L, std::vector<double>(D));
    for (size_t i = 0; i < L; ++i)
        for (size_t j = 0; j < D; ++j) x[i][j] = tok[size_t(toks[i])][j] + pos[i][j];

    Mat h = layer_norm_ref(x, p.at("l0.ln1.g").data, p.at("l0.ln1.b").data);
    Mat qkv = matmul_ref(h, to_mat(p.at("l0.attn.wqkv")));
    add_row_ref(qkv, p.at("l0.attn.bqkv").data);
    Mat q(L, std::vector<double>(D)), k = q, v = q;
    for (size_t i = 0; i < L; ++i)
        for (size_t j = 0; j < D; ++j) {
            q[i][j] = qkv[i][j];
            k[i][j] = qkv[i][D + j];
            v[i][j] = qkv[i][2 * D + j];
        }
    Mat att(L, std::vector<double>(D, 0.0));
    double scale = 1.0 / std::sqrt(double(D));
    for (size_t i = 0; i < L; ++i) {
        std::vector<double> w(i + 1);
        double mx = -1e300;
        for (size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (size_t d = 0; d < D; ++d) s += q[i][d] * k[j][d];
            w[j] = s * scale;
            mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (double& wv : w) {
            wv = std::exp(wv - mx);
            z += wv;
        }
        for (size_t j = 0; j <= i; ++j)
            for (size_t d = 0; d < D; ++d) att[i][d] += (w[j] / z) * v[j][d];
    }
    Mat ao = matmul_ref(att, to_mat(p.at("l0.attn.wo")));
    add_row_ref(ao, p.at("l0.attn.bo").data);
    for (size_t i = 0; i < L; ++i)
        for (size_t j = 0; j < D; ++j) x[i][j] += ao[i][j];

    Mat h2 = layer_norm_ref(x, p.at("l0.ln2.g").data, p.at("l0.ln2.b").data);
    Mat mid = matmul_ref(h2, to_mat(p.at("l0.mlp.w1")));
    add_row_ref(mid, p.at("l0.mlp.b1").data);
    for (auto& row : mid)
        for (double& vv : row) vv = gelu_ref(vv);
    Mat mo = matmul_ref(mid, to_mat(p.at("l0.mlp.w2")));
    add_row_ref(mo, p.at("l0.mlp.b2").data);
    for (size_t i = 0; i < L; ++i)
        for (size_t j = 0; j < D; ++j) x[i][j] += mo[i][j];

    Mat hf = layer_norm_ref(x, p.at("lnf.g").data, p.at("lnf.b").data);
    Mat logits = matmul_ref(hf, to_mat(p.at("out.w")));
    add_row_ref(logits, p.at("out.b").data);
    return logits;
}

// A model with non-degenerate output head, for tests that need
// distinguishable logits.
LanguageModel warmed_model(uint64_t seed) {
    LanguageModel m = LanguageModel::init(tiny_config(), seed);
    Rng rng = Rng(seed).split("warm");
    for (double& v : m.params.at("out.w").data) v = rng.normal(0.0, 0.3);
    for (double& v : m.params.at("out.b").data) v = rng.normal(0.0, 0.3);
    return m;
}

std::vector<double> log_softmax_ref(const std::vector<double>& row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    double lz = mx + std::log(z);
    std::vector<double> out(row.size());
    for (size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lz;
    return out;
}

}  // namespace

TEST_CASE("init is deterministic for a fixed seed") {
    LanguageModel a = LanguageModel::init(tiny_config(), 5);
    LanguageModel b = LanguageModel::init(tiny_config(), 5);
    LanguageModel c = LanguageModel::init(tiny_config(), 6);
    CHECK(a.params.bitwise_equal(b.params));
    CHECK(!a.params.bitwise_equal(c.params));
}

TEST_CASE("untrained model predicts the uniform distribution") {
    LanguageModel m = LanguageModel::init(tiny_config(), 3);
    double nll = nll_of_answer_eval(m.config, m.params, {1, 4, 2}, {7});
    CHECK(nll == doctest::Approx(std::log(double(m.config.vocab_size))).epsilon(1e-12));

    Tensor logits = forward_logits_eval(m.config, m.params, {1, 4, 2});
    for (double v : logits.data) CHECK(v == 0.0);
}

TEST_CASE("forward matches a straight-line reference implementation") {
    for (uint64_t seed : {21, 22, 23}) {
        LanguageModel m = warmed_model(seed);
        std::vector<int64_t> toks{3, 1, 4, 1, 5, 9};
        Tensor got = forward_logits_eval(m.config, m.params, toks);
        Mat want = forward_ref(m.config, m.params, toks);
        for (int64_t r = 0; r < got.rows(); ++r)
            for (int64_t c = 0; c < got.cols(); ++c)
                CHECK(got.at(r, c) ==
                      doctest::Approx(want[size_t(r)][size_t(c)]).epsilon(1e-10));
    }
}

TEST_CASE("causal mask: later tokens cannot change earlier logits") {
    LanguageModel m = warmed_model(31);
    std::vector<int64_t> a{2, 5, 7, 1, 8};
    std::vector<int64_t> b = a;
    b[3] = 9;
    b[4] = 0;
    Tensor la = forward_logits_eval(m.config, m.params, a);
    Tensor lb = forward_logits_eval(m.config, m.params, b);
    for (int64_t r = 0; r < 3; ++r)
        for (int64_t c = 0; c < la.cols(); ++c) CHECK(la.at(r, c) == lb.at(r, c));
    bool row3_differs = false;
    for (int64_t c = 0; c < la.cols(); ++c)
        if (la.at(3, c) != lb.at(3, c)) row3_differs = true;
    CHECK(row3_differs);
}

TEST_CASE("nll_of_answer equals the per-position chain rule oracle") {
    LanguageModel m = warmed_model(41);
    std::vector<int64_t> prompt{1, 2, 3};
    std::vector<int64_t> answer{7, 4};
    std::vector<int64_t> full{1, 2, 3, 7};  // last answer token not fed back
    Tensor logits = forward_logits_eval(m.config, m.params, full);

    double want = 0.0;
    for (size_t i = 0; i < answer.size(); ++i) {
        std::vector<double> row(size_t(logits.cols()));
        for (int64_t c = 0; c < logits.cols(); ++c)
            row[size_t(c)] = logits.at(int64_t(prompt.size()) - 1 + int64_t(i), c);
        want -= log_softmax_ref(row)[size_t(answer[i])];
    }
    CHECK(nll_of_answer_eval(m.config, m.params, prompt, answer) ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("score_candidates equals -nll for each candidate") {
    LanguageModel m = warmed_model(51);
    std::vector<int64_t> prompt{4, 2, 6};
    std::vector<std::vector<int64_t>> cands{{1}, {9}, {3, 8}, {5, 5, 2}};
    auto scores = score_candidates(m.config, m.params, prompt, cands);
    for (size_t i = 0; i < cands.size(); ++i)
        CHECK(scores[i] ==
              doctest::Approx(-nll_of_answer_eval(m.config, m.params, prompt, cands[i]))
                  .epsilon(1e-12));
}

TEST_CASE("single-token scoring fast path agrees with the general path") {
    LanguageModel m = warmed_model(61);
    std::vector<int64_t> prompt{0, 3, 10};
    std::vector<std::vector<int64_t>> singles{{2}, {5}, {8}};
    std::vector<std::vector<int64_t>> mixed{{2}, {5}, {8}, {1, 1}};
    auto fast = score_candidates(m.config, m.params, prompt, singles);
    auto slow = score_candidates(m.config, m.params, prompt, mixed);
    for (size_t i = 0; i < singles.size(); ++i)
        CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-12));
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    CHECK(argmax_candidate({0.5, 0.5, 0.2}) == 0);
    CHECK(argmax_candidate({0.1, 0.7, 0.7}) == 1);
    CHECK(argmax_candidate({-1.0}) == 0);
}

TEST_CASE("contract violations are rejected") {
    LanguageModel m = LanguageModel::init(tiny_config(), 71);
    std::vector<int64_t> too_long(size_t(m.config.max_context) + 1, 1);
    CHECK_THROWS_AS(forward_logits_eval(m.config, m.params, too_long), ContractError);
    CHECK_THROWS_AS(forward_logits_eval(m.config, m.params, {1, 99}), ContractError);
    CHECK_THROWS_AS(forward_logits_eval(m.config, m.params, {}), ContractError);

    LmConfig bad = tiny_config();
    bad.d_model = 7;
    bad.n_heads = 2;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("multi-head forward still satisfies causality and finiteness") {
    LmConfig c = tiny_config();
    c.n_heads = 2;
    c.n_layers = 2;
    LanguageModel m = LanguageModel::init(c, 81);
    Rng rng(82);
    for (double& v : m.params.at("out.w").data) v = rng.normal(0.0, 0.2);
    std::vector<int64_t> a{1, 2, 3, 4};
    std::vector<int64_t> b{1, 2, 3, 8};
    Tensor la = forward_logits_eval(m.config, m.params, a);
    Tensor lb = forward_logits_eval(m.config, m.params, b);
    CHECK(la.all_finite());
    for (int64_t r = 0; r < 3; ++r)
        for (int64_t col = 0; col < la.cols(); ++col) CHECK(la.at(r, col) == lb.at(r, col));
}
