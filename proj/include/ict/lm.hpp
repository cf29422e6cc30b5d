#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "ict/autodiff.hpp"
#include "ict/params.hpp"
#include "ict/rng.hpp"

namespace ict {

struct LmConfig {
    int64_t vocab_size = 0;
    int64_t d_model = 0;
    int64_t n_heads = 0;
    int64_t n_layers = 0;
    int64_t d_ff = 0;
    int64_t max_context = 0;
    double dropout = 0.0;

    void validate() const;

    nlohmann::ordered_json to_json() const;
    static LmConfig from_json(const nlohmann::ordered_json& j);
};

// Decoder-only causal transformer with learned absolute positional
// embeddings and a pre-norm block layout. The output projection is
// zero-initialized, so an untrained model predicts the uniform
// distribution over the vocabulary.
struct LanguageModel {
    LmConfig config;
    ParamStore params;

    static LanguageModel init(const LmConfig& config, uint64_t seed);
};

// Builds the forward graph on the given tape; logits shape (len, vocab).
// Rejects sequences longer than max_context (no silent truncation).
// Dropout is applied only when training=true and config.dropout > 0.
ad::Var forward_logits(ad::Tape& tape, const LmConfig& config, const ParamStore& params,
                       const std::vector<int64_t>& tokens, bool training = false,
                       Rng* dropout_rng = nullptr);

ad::Var forward_logits(ad::Tape& tape, const LanguageModel& model,
                       const std::vector<int64_t>& tokens, bool training = false,
                       Rng* dropout_rng = nullptr);

// Sum over answer positions of the cross-entropy of the gold token, each
// answer token conditioned on the prompt plus preceding answer tokens.
ad::Var nll_of_answer(ad::Tape& tape, const LmConfig& config, const ParamStore& params,
                      const std::vector<int64_t>& prompt_tokens,
                      const std::vector<int64_t>& answer_tokens, bool training = false,
                      Rng* dropout_rng = nullptr);

// Gradient-free forward for evaluation.
Tensor forward_logits_eval(const LmConfig& config, const ParamStore& params,
                           const std::vector<int64_t>& tokens);

double nll_of_answer_eval(const LmConfig& config, const ParamStore& params,
                          const std::vector<int64_t>& prompt_tokens,
                          const std::vector<int64_t>& answer_tokens);

// Log-probability of each candidate answer continuation after the prompt.
// Single-token candidates share one forward pass.
std::vector<double> score_candidates(const LmConfig& config, const ParamStore& params,
                                     const std::vector<int64_t>& prompt_tokens,
                                     const std::vector<std::vector<int64_t>>& candidates);

// Deterministic argmax with ties broken toward the lowest index.
size_t argmax_candidate(const std::vector<double>& scores);

}  // namespace ict
