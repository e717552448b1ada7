#pragma once

// Parameterised building blocks shared by the codec, the denoiser and the
// probe classifier. Initialisers write float32 entries into a ParamStore;
// forward helpers read them back through a Tape by name.

#include <string>

#include "tidm/autograd.hpp"
#include "tidm/ops.hpp"
#include "tidm/rng.hpp"

namespace tidm::layers {

enum class Init { fan_in, zero };

/// `<name>/weight` [out,in,k,k] and `<name>/bias` [out].
void init_conv(ParamStore<float>& p, const std::string& name, int in, int out, int kernel, Rng& rng,
               Init init = Init::fan_in);
/// `<name>/weight` [out,in] and `<name>/bias` [out].
void init_linear(ParamStore<float>& p, const std::string& name, int in, int out, Rng& rng, Init init = Init::fan_in);
/// `<name>/gamma` = 1, `<name>/beta` = 0.
void init_norm(ParamStore<float>& p, const std::string& name, int channels);

/// Residual block: norm-silu-conv, optional time projection, norm-silu-conv,
/// plus a 1x1 skip when the width changes.
void init_resblock(ParamStore<float>& p, const std::string& name, int in, int out, int time_dim, Rng& rng);
/// Cross-attention from spatial queries to a context sequence (bias-free
/// query/key/value projections).
void init_cross_attention(ParamStore<float>& p, const std::string& name, int channels, int context_dim, Rng& rng);

/// GroupNorm group count used for a given width.
int norm_groups(int channels);

template <std::floating_point Real>
Var<Real> conv(Tape<Real>& tape, const std::string& name, const Var<Real>& x, int stride = 1);
template <std::floating_point Real>
Var<Real> dense(Tape<Real>& tape, const std::string& name, const Var<Real>& x);  // bias optional
template <std::floating_point Real>
Var<Real> norm(Tape<Real>& tape, const std::string& name, const Var<Real>& x);

/// `time` may be undefined for blocks without a time projection.
template <std::floating_point Real>
Var<Real> resblock(Tape<Real>& tape, const std::string& name, const Var<Real>& x, const Var<Real>& time);
/// x + out(attn(q(norm x), k(ctx), v(ctx)))
template <std::floating_point Real>
Var<Real> cross_attention(Tape<Real>& tape, const std::string& name, const Var<Real>& x, const Var<Real>& context);

}  // namespace tidm::layers
