#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hin/autodiff.hpp"
#include "hin/errors.hpp"
#include "hin/params.hpp"
#include "hin/random.hpp"

namespace hin {

using ad::Var;

// Per-pass state shared by every layer: the tape, whether dropout is live,
// and whether parameter leaves should accumulate gradients.
struct Context {
  ad::Tape& tape;
  bool training = false;
  bool track_grads = true;
  SeedStream* dropout_rng = nullptr;

  Var bind(Parameter& p) const {
    return track_grads ? tape.param(p) : tape.param(static_cast<const Parameter&>(p));
  }
};

// ---------------------------------------------------------------------------
// Parameter layout. Layers describe their parameters as specs so the full
// model's name set and sizes are a pure function of the configuration.

enum class Init { kUniform, kZero, kLstmBias, kWordTable };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::kUniform;
  std::size_t fan_in = 1;
  bool frozen = false;

  std::size_t size() const { return shape_size(shape); }
};

using Layout = std::vector<ParamSpec>;

inline std::size_t count_parameters(const Layout& layout) {
  std::size_t n = 0;
  for (const auto& s : layout) n += s.size();
  return n;
}

// Creates the parameters of `layout` in `set` and initializes them from
// `rng` in layout order.
inline void allocate(ParameterSet& set, const Layout& layout, SeedStream& rng) {
  for (const ParamSpec& spec : layout) {
    Parameter& p = set.add(spec.name, spec.shape, spec.frozen);
    switch (spec.init) {
      case Init::kUniform:
      case Init::kWordTable:
        init_uniform(p.value, spec.fan_in, rng);
        break;
      case Init::kZero:
        break;
      case Init::kLstmBias: {
        // gate order (input, forget, cell, output); forget bias starts at 1
        const std::size_t h = p.size() / 4;
        for (std::size_t j = h; j < 2 * h; ++j) p.value[j] = 1.0;
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Embedding table

struct EmbeddingTable {
  Parameter* weights = nullptr;

  std::size_t rows() const { return weights->value.shape()[0]; }
  std::size_t dim() const { return weights->value.shape()[1]; }
  bool frozen() const { return weights->frozen; }
};

inline void embedding_layout(Layout& out, const std::string& name, std::size_t rows,
                             std::size_t dim, bool frozen = false) {
  out.push_back({name, Shape{rows, dim}, Init::kUniform, dim, frozen});
}

inline EmbeddingTable bind_embedding(ParameterSet& set, const std::string& name) {
  return EmbeddingTable{&set.at(name)};
}

inline Var embedding_lookup(const Context& ctx, const EmbeddingTable& table,
                            std::vector<std::size_t> ids) {
  return ad::gather_rows(ctx.bind(*table.weights), std::move(ids), table.weights->name);
}

inline Var embedding_row(const Context& ctx, const EmbeddingTable& table, std::size_t id) {
  return ad::lookup_row(ctx.bind(*table.weights), id, table.weights->name);
}

// ---------------------------------------------------------------------------
// Bidirectional LSTM

struct LstmDirection {
  Parameter* w_ih = nullptr;  // [4h x in]
  Parameter* w_hh = nullptr;  // [4h x h]
  Parameter* bias = nullptr;  // [4h]
};

struct LstmParams {
  LstmDirection forward;
  LstmDirection backward;
  std::size_t hidden = 0;
};

inline void lstm_layout(Layout& out, const std::string& prefix, std::size_t in, std::size_t hidden) {
  for (const char* dir : {"fwd", "bwd"}) {
    const std::string p = prefix + "." + dir;
    out.push_back({p + ".w_ih", Shape{4 * hidden, in}, Init::kUniform, in});
    out.push_back({p + ".w_hh", Shape{4 * hidden, hidden}, Init::kUniform, hidden});
    out.push_back({p + ".bias", Shape{4 * hidden}, Init::kLstmBias, 1});
  }
}

inline LstmParams bind_lstm(ParameterSet& set, const std::string& prefix) {
  LstmParams p;
  p.forward = {&set.at(prefix + ".fwd.w_ih"), &set.at(prefix + ".fwd.w_hh"),
               &set.at(prefix + ".fwd.bias")};
  p.backward = {&set.at(prefix + ".bwd.w_ih"), &set.at(prefix + ".bwd.w_hh"),
                &set.at(prefix + ".bwd.bias")};
  p.hidden = p.forward.w_hh->value.shape()[1];
  return p;
}

// [n x in] -> [n x 2h]. Row t is [forward state after tokens 0..t ;
// backward state after tokens n-1..t], both starting from zero state.
inline Var bilstm_forward(const Context& ctx, Var seq, const LstmParams& params) {
  const Tensor& sv = seq.value();
  if (sv.rank() != 2 || sv.shape()[0] == 0) {
    throw DimensionError("bilstm_forward: empty or non-matrix input " + shape_str(sv.shape()));
  }
  const std::size_t n = sv.shape()[0];
  const std::size_t h = params.hidden;

  auto run = [&](const LstmDirection& dir, bool reverse) {
    Var gates = ad::affine(seq, ctx.bind(*dir.w_ih), ctx.bind(*dir.bias));
    Var w_hh = ctx.bind(*dir.w_hh);
    std::vector<Var> states(n);
    std::optional<Var> prev;
    for (std::size_t step = 0; step < n; ++step) {
      const std::size_t t = reverse ? n - 1 - step : step;
      Var hc = ad::lstm_step(gates, t, prev, w_hh);
      states[t] = hc;
      prev = hc;
    }
    return ad::stack_rows(states, 0, h);
  };

  Var fwd = run(params.forward, false);
  Var bwd = run(params.backward, true);
  return ad::concat({fwd, bwd});
}

// ---------------------------------------------------------------------------
// Additive attention pooling: score_t = u^T tanh(W h_t + b)

struct AttentionParams {
  Parameter* query = nullptr;  // u [d]
  Parameter* proj = nullptr;   // W [d x d]
  Parameter* bias = nullptr;   // b [d]
};

inline void attention_layout(Layout& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".query", Shape{d}, Init::kUniform, d});
  out.push_back({prefix + ".proj", Shape{d, d}, Init::kUniform, d});
  out.push_back({prefix + ".bias", Shape{d}, Init::kZero, 1});
}

inline AttentionParams bind_attention(ParameterSet& set, const std::string& prefix) {
  return {&set.at(prefix + ".query"), &set.at(prefix + ".proj"), &set.at(prefix + ".bias")};
}

struct AttentionResult {
  Var pooled;   // [d]
  Var weights;  // [n]
};

inline AttentionResult additive_attention_pool(const Context& ctx, Var states,
                                               const AttentionParams& params,
                                               std::vector<bool> mask = {}) {
  const Tensor& hv = states.value();
  if (hv.rank() != 2) {
    throw DimensionError("additive_attention_pool: states must be [n x d], got " +
                         shape_str(hv.shape()));
  }
  if (mask.empty()) mask.assign(hv.shape()[0], true);
  Var hidden = ad::tanh(ad::affine(states, ctx.bind(*params.proj), ctx.bind(*params.bias)));
  Var scores = ad::matvec(hidden, ctx.bind(*params.query));
  Var weights = ad::masked_softmax(scores, std::move(mask));
  return {ad::weighted_sum(weights, states), weights};
}

// ---------------------------------------------------------------------------
// Feed-forward net: affine + ReLU on hidden layers, affine output.

struct FfnnParams {
  std::vector<Parameter*> weights;
  std::vector<Parameter*> biases;
};

inline void ffnn_layout(Layout& out, const std::string& prefix, const std::vector<std::size_t>& widths) {
  if (widths.size() < 2) throw ConfigError("ffnn '" + prefix + "' needs at least two widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::string p = prefix + ".layer" + std::to_string(i);
    out.push_back({p + ".weight", Shape{widths[i + 1], widths[i]}, Init::kUniform, widths[i]});
    out.push_back({p + ".bias", Shape{widths[i + 1]}, Init::kZero, 1});
  }
}

inline FfnnParams bind_ffnn(ParameterSet& set, const std::string& prefix) {
  FfnnParams p;
  for (std::size_t i = 0; set.contains(prefix + ".layer" + std::to_string(i) + ".weight"); ++i) {
    const std::string name = prefix + ".layer" + std::to_string(i);
    p.weights.push_back(&set.at(name + ".weight"));
    p.biases.push_back(&set.at(name + ".bias"));
  }
  for (std::size_t i = 1; i < p.weights.size(); ++i) {
    if (p.weights[i]->value.shape()[1] != p.weights[i - 1]->value.shape()[0]) {
      throw ConfigError("ffnn '" + prefix + "': widths of layers " + std::to_string(i - 1) +
                        " and " + std::to_string(i) + " disagree");
    }
  }
  return p;
}

inline Var dropout_apply(const Context& ctx, Var x, double p) {
  return ad::dropout(x, p, ctx.training, ctx.dropout_rng);
}

// Works on a single vector [in] or row-wise on [n x in].
inline Var ffnn_relu(const Context& ctx, Var x, const FfnnParams& params, double hidden_dropout = 0.0) {
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    x = ad::affine(x, ctx.bind(*params.weights[i]), ctx.bind(*params.biases[i]));
    if (i + 1 < params.weights.size()) {
      x = dropout_apply(ctx, ad::relu(x), hidden_dropout);
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Bi-affine tensor product: out_i = a^T R[:, :, i] b

inline void biaffine_layout(Layout& out, const std::string& name, std::size_t d) {
  out.push_back({name, Shape{d, d, d}, Init::kUniform, d});
}

inline Var biaffine(const Context& ctx, Var a, Var b, Parameter& tensor) {
  return ad::bilinear(a, ctx.bind(tensor), b);
}

}  // namespace hin
