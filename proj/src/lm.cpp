#include "ict/lm.hpp"

#include <cmath>
#include <string>

#include "ict/errors.hpp"

namespace ict {

using ad::Var;

namespace {
constexpr double kInitStd = 0.02;
constexpr double kMaskedOut = -1e30;

std::string lname(int64_t layer, const char* suffix) {
    return "l" + std::to_string(layer) + "." + suffix;
}

Tensor normal_init(std::vector<int64_t> shape, Rng& rng, double std_dev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.normal(0.0, std_dev);
    return t;
}

Tensor causal_mask(int64_t len) {
    Tensor m = Tensor::zeros({len, len});
    for (int64_t r = 0; r < len; ++r)
        for (int64_t c = r + 1; c < len; ++c) m.at(r, c) = kMaskedOut;
    return m;
}
}  // namespace

void LmConfig::validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_heads <= 0 || n_layers <= 0 ||
        d_ff <= 0 || max_context <= 0)
        throw ConfigError("LmConfig: all dimensions must be positive");
    if (d_model % n_heads != 0)
        throw ConfigError("LmConfig: d_model (" + std::to_string(d_model) +
                          ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("LmConfig: dropout must be in [0,1)");
}

nlohmann::ordered_json LmConfig::to_json() const {
    return nlohmann::ordered_json{{"vocab_size", vocab_size}, {"d_model", d_model},
                                  {"n_heads", n_heads},       {"n_layers", n_layers},
                                  {"d_ff", d_ff},             {"max_context", max_context},
                                  {"dropout", dropout}};
}

LmConfig LmConfig::from_json(const nlohmann::ordered_json& j) {
    LmConfig c;
    c.vocab_size = j.at("vocab_size").get<int64_t>();
    c.d_model = j.at("d_model").get<int64_t>();
    c.n_heads = j.at("n_heads").get<int64_t>();
    c.n_layers = j.at("n_layers").get<int64_t>();
    c.d_ff = j.at("d_ff").get<int64_t>();
    c.max_context = j.at("max_context").get<int64_t>();
    c.dropout = j.at("dropout").get<double>();
    c.validate();
    return c;
}

LanguageModel LanguageModel::init(const LmConfig& config, uint64_t seed) {
    config.validate();
    Rng rng = Rng(seed).split("lm-init");
    LanguageModel m;
    m.config = config;
    auto& p = m.params;
    int64_t D = config.d_model, F = config.d_ff, V = config.vocab_size;
    p.add("tok_emb", normal_init({V, D}, rng, kInitStd));
    p.add("pos_emb", normal_init({config.max_context, D}, rng, kInitStd));
    for (int64_t l = 0; l < config.n_layers; ++l) {
        p.add(lname(l, "ln1.g"), Tensor::full({D}, 1.0));
        p.add(lname(l, "ln1.b"), Tensor::zeros({D}));
        p.add(lname(l, "attn.wqkv"), normal_init({D, 3 * D}, rng, kInitStd));
        p.add(lname(l, "attn.bqkv"), Tensor::zeros({3 * D}));
        p.add(lname(l, "attn.wo"), normal_init({D, D}, rng, kInitStd));
        p.add(lname(l, "attn.bo"), Tensor::zeros({D}));
        p.add(lname(l, "ln2.g"), Tensor::full({D}, 1.0));
        p.add(lname(l, "ln2.b"), Tensor::zeros({D}));
        p.add(lname(l, "mlp.w1"), normal_init({D, F}, rng, kInitStd));
        p.add(lname(l, "mlp.b1"), Tensor::zeros({F}));
        p.add(lname(l, "mlp.w2"), normal_init({F, D}, rng, kInitStd));
        p.add(lname(l, "mlp.b2"), Tensor::zeros({D}));
    }
    p.add("lnf.g", Tensor::full({D}, 1.0));
    p.add("lnf.b", Tensor::zeros({D}));
    p.add("out.w", Tensor::zeros({D, V}));
    p.add("out.b", Tensor::zeros({V}));
    return m;
}

Var forward_logits(ad::Tape& tape, const LmConfig& config, const ParamStore& params,
                   const std::vector<int64_t>& tokens, bool training, Rng* dropout_rng) {
    if (tokens.empty()) throw ContractError("forward_logits: empty token sequence");
    int64_t L = int64_t(tokens.size());
    if (L > config.max_context)
        throw ContractError("forward_logits: sequence length " + std::to_string(L) +
                            " exceeds max_context " + std::to_string(config.max_context) +
                            "; caller must shorten the prompt");
    for (int64_t id : tokens)
        if (id < 0 || id >= config.vocab_size)
            throw ContractError("forward_logits: token id " + std::to_string(id) +
                                " outside vocab of size " + std::to_string(config.vocab_size));

    bool drop = training && config.dropout > 0.0;
    if (drop && !dropout_rng)
        throw ContractError("forward_logits: dropout enabled but no rng supplied");

    int64_t D = config.d_model;
    int64_t H = config.n_heads;
    int64_t dh = D / H;
    double att_scale = 1.0 / std::sqrt(double(dh));

    auto P = [&](const std::string& name) { return tape.param(name, params.at(name)); };

    std::vector<int64_t> positions(static_cast<size_t>(L));
    for (int64_t i = 0; i < L; ++i) positions[size_t(i)] = i;

    Var x = ad::add(ad::embedding(P("tok_emb"), tokens),
                    ad::embedding(P("pos_emb"), positions));
    if (drop) x = ad::dropout(x, config.dropout, *dropout_rng);

    Tensor mask = causal_mask(L);
    for (int64_t l = 0; l < config.n_layers; ++l) {
        Var h = ad::layer_norm(x, P(lname(l, "ln1.g")), P(lname(l, "ln1.b")));
        Var qkv = ad::add_rowvec(ad::matmul(h, P(lname(l, "attn.wqkv"))),
                                 P(lname(l, "attn.bqkv")));
        std::vector<Var> heads;
        heads.reserve(size_t(H));
        for (int64_t hd = 0; hd < H; ++hd) {
            Var q = ad::slice_cols(qkv, hd * dh, dh);
            Var k = ad::slice_cols(qkv, D + hd * dh, dh);
            Var v = ad::slice_cols(qkv, 2 * D + hd * dh, dh);
            Var scores = ad::scale(ad::matmul(q, ad::transpose(k)), att_scale);
            Var att = ad::softmax_rows(ad::add_const(scores, mask));
            heads.push_back(ad::matmul(att, v));
        }
        Var attn_out = ad::add_rowvec(ad::matmul(ad::concat_cols(heads), P(lname(l, "attn.wo"))),
                                      P(lname(l, "attn.bo")));
        if (drop) attn_out = ad::dropout(attn_out, config.dropout, *dropout_rng);
        x = ad::add(x, attn_out);

        Var h2 = ad::layer_norm(x, P(lname(l, "ln2.g")), P(lname(l, "ln2.b")));
        Var mid = ad::gelu(ad::add_rowvec(ad::matmul(h2, P(lname(l, "mlp.w1"))),
                                          P(lname(l, "mlp.b1"))));
        Var mlp_out = ad::add_rowvec(ad::matmul(mid, P(lname(l, "mlp.w2"))),
                                     P(lname(l, "mlp.b2")));
        if (drop) mlp_out = ad::dropout(mlp_out, config.dropout, *dropout_rng);
        x = ad::add(x, mlp_out);
    }

    Var hf = ad::layer_norm(x, P("lnf.g"), P("lnf.b"));
    return ad::add_rowvec(ad::matmul(hf, P("out.w")), P("out.b"));
}

Var forward_logits(ad::Tape& tape, const LanguageModel& model,
                   const std::vector<int64_t>& tokens, bool training, Rng* dropout_rng) {
    return forward_logits(tape, model.config, model.params, tokens, training, dropout_rng);
}

Var nll_of_answer(ad::Tape& tape, const LmConfig& config, const ParamStore& params,
                  const std::vector<int64_t>& prompt_tokens,
                  const std::vector<int64_t>& answer_tokens, bool training,
                  Rng* dropout_rng) {
    if (prompt_tokens.empty()) throw ContractError("nll_of_answer: empty prompt");
    if (answer_tokens.empty()) throw ContractError("nll_of_answer: empty answer");
    std::vector<int64_t> full = prompt_tokens;
    full.insert(full.end(), answer_tokens.begin(), answer_tokens.end());
    if (int64_t(full.size()) > config.max_context)
        throw ContractError("nll_of_answer: prompt+answer length " +
                            std::to_string(full.size()) + " exceeds max_context " +
                            std::to_string(config.max_context));
    // Position i predicts token i+1; the last answer token contributes no row.
    full.pop_back();
    Var logits = forward_logits(tape, config, params, full, training, dropout_rng);
    std::vector<std::pair<int64_t, int64_t>> targets;
    targets.reserve(answer_tokens.size());
    int64_t p = int64_t(prompt_tokens.size());
    for (size_t i = 0; i < answer_tokens.size(); ++i)
        targets.emplace_back(p - 1 + int64_t(i), answer_tokens[i]);
    return ad::cross_entropy_sum(logits, targets);
}

Tensor forward_logits_eval(const LmConfig& config, const ParamStore& params,
                           const std::vector<int64_t>& tokens) {
    ad::Tape tape;
    Var logits = forward_logits(tape, config, params, tokens, false, nullptr);
    return logits->value;
}

double nll_of_answer_eval(const LmConfig& config, const ParamStore& params,
                          const std::vector<int64_t>& prompt_tokens,
                          const std::vector<int64_t>& answer_tokens) {
    ad::Tape tape;
    return nll_of_answer(tape, config, params, prompt_tokens, answer_tokens)->value.item();
}

std::vector<double> score_candidates(const LmConfig& config, const ParamStore& params,
                                     const std::vector<int64_t>& prompt_tokens,
                                     const std::vector<std::vector<int64_t>>& candidates) {
    if (candidates.empty()) throw ContractError("score_candidates: empty candidate list");
    if (prompt_tokens.empty()) throw ContractError("score_candidates: empty prompt");

    bool all_single = true;
    for (const auto& c : candidates) {
        if (c.empty()) throw ContractError("score_candidates: empty candidate");
        if (c.size() != 1) all_single = false;
    }

    std::vector<double> scores(candidates.size(), 0.0);
    if (all_single) {
        Tensor logits = forward_logits_eval(config, params, prompt_tokens);
        int64_t V = logits.cols();
        auto ls = ad::log_softmax_row(
            logits.data.data() + (logits.rows() - 1) * V, V);
        for (size_t i = 0; i < candidates.size(); ++i)
            scores[i] = ls[size_t(candidates[i][0])];
        return scores;
    }

    for (size_t i = 0; i < candidates.size(); ++i) {
        const auto& cand = candidates[i];
        std::vector<int64_t> seq = prompt_tokens;
        seq.insert(seq.end(), cand.begin(), cand.end() - 1);
        Tensor logits = forward_logits_eval(config, params, seq);
        int64_t V = logits.cols();
        double s = 0.0;
        int64_t p = int64_t(prompt_tokens.size());
        for (size_t j = 0; j < cand.size(); ++j) {
            auto ls = ad::log_softmax_row(logits.data.data() + (p - 1 + int64_t(j)) * V, V);
            s += ls[size_t(cand[j])];
        }
        scores[i] = s;
    }
    return scores;
}

size_t argmax_candidate(const std::vector<double>& scores) {
    if (scores.empty()) throw ContractError("argmax_candidate: empty scores");
    size_t best = 0;
    for (size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

}  // namespace ict
