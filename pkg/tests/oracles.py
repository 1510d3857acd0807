"""Independent reference computations used as test oracles.

Nothing here imports the code under test's math: the network oracle works
from a plain dict of numpy parameters with explicit per-token, per-head loops.
"""

import itertools
import math
from fractions import Fraction

import numpy as np


# --- network -----------------------------------------------------------------

def _gelu(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def _linear(P, name, x):
    W, b = P[name + ".weight"], P[name + ".bias"]
    out = np.zeros(W.shape[0])
    for o in range(W.shape[0]):
        acc = b[o]
        for i in range(W.shape[1]):
            acc += W[o, i] * x[i]
        out[o] = acc
    return out


def _layer_norm(P, name, x, eps):
    mean = sum(x) / len(x)
    var = sum((xi - mean) ** 2 for xi in x) / len(x)
    w, b = P[name + ".weight"], P[name + ".bias"]
    return np.array([(x[i] - mean) / math.sqrt(var + eps) * w[i] + b[i] for i in range(len(x))])


def _attention(P, name, xs, ctx, heads, allowed=None):
    qs = [_linear(P, name + ".q", x) for x in xs]
    ks = [_linear(P, name + ".k", c) for c in ctx]
    vs = [_linear(P, name + ".v", c) for c in ctx]
    d = len(qs[0])
    hd = d // heads
    outs = []
    for i, q in enumerate(qs):
        y = np.zeros(d)
        for h in range(heads):
            sl = slice(h * hd, (h + 1) * hd)
            js = [j for j in range(len(ks)) if allowed is None or allowed(i, j)]
            scores = [float(np.dot(q[sl], ks[j][sl])) / math.sqrt(hd) for j in js]
            m = max(scores)
            e = [math.exp(s - m) for s in scores]
            z = sum(e)
            for w, j in zip(e, js):
                y[sl] += (w / z) * vs[j][sl]
        outs.append(_linear(P, name + ".out", y))
    return outs


def scalar_mlp(P, name, value, tokens, d_model):
    hidden = [_gelu(P[name + ".fc1.weight"][k, 0] * value + P[name + ".fc1.bias"][k])
              for k in range(P[name + ".fc1.bias"].shape[0])]
    flat = _linear(P, name + ".fc2", np.array(hidden))
    return [flat[t * d_model:(t + 1) * d_model] for t in range(tokens)]


def block(P, prefix, hs, e_v, e_a, heads, eps, valid=None, causal=False):
    def allowed(i, j):
        if valid is not None and not valid[j]:
            return False
        return not causal or j <= i

    n = len(hs)
    x = [_layer_norm(P, prefix + "ln_self", h, eps) for h in hs]
    sa = _attention(P, prefix + "self_attn", x, x, heads, allowed)
    hs = [hs[i] + sa[i] for i in range(n)]
    cv = _attention(P, prefix + "cross_valence", [_layer_norm(P, prefix + "ln_valence", h, eps) for h in hs], e_v, heads)
    hs = [hs[i] + cv[i] for i in range(n)]
    ca = _attention(P, prefix + "cross_arousal", [_layer_norm(P, prefix + "ln_arousal", h, eps) for h in hs], e_a, heads)
    hs = [hs[i] + ca[i] for i in range(n)]
    out = []
    for h in hs:
        mid = np.array([_gelu(v) for v in _linear(P, prefix + "ffn_in", _layer_norm(P, prefix + "ln_ffn", h, eps))])
        out.append(h + _linear(P, prefix + "ffn_out", mid))
    return out


def eit(P, cfg, f_n, valence, arousal, causal=False):
    """Full forward for one unpadded (seq_len, d_prompt) input."""
    P = {k: np.asarray(v, dtype=np.float64) for k, v in P.items()}
    e_v = scalar_mlp(P, "va_encoder.valence", valence, cfg["emo_tokens"], cfg["d_model"])
    e_a = scalar_mlp(P, "va_encoder.arousal", arousal, cfg["emo_tokens"], cfg["d_model"])
    f_n = np.asarray(f_n, dtype=np.float64)
    hs = [_linear(P, "p_in", f_n[t]) + P["pos_emb"][t] for t in range(f_n.shape[0])]
    for b in range(cfg["num_blocks"]):
        hs = block(P, f"blocks.{b}.", hs, e_v, e_a, cfg["num_heads"], cfg["ln_epsilon"], causal=causal)
    return np.stack([
        _linear(P, "p_out", _layer_norm(P, "ln_out", hs[t], cfg["ln_epsilon"])) + f_n[t]
        for t in range(len(hs))
    ])


# --- statistics ----------------------------------------------------------------

def tau_b_pairs(x, y):
    """Kendall tau-b by explicit pair classification."""
    n = len(x)
    conc = disc = tie_x = tie_y = 0
    for i, j in itertools.combinations(range(n), 2):
        dx, dy = x[i] - x[j], y[i] - y[j]
        if dx == 0:
            tie_x += 1
        if dy == 0:
            tie_y += 1
        if dx * dy > 0:
            conc += 1
        elif dx * dy < 0:
            disc += 1
    pairs = n * (n - 1) // 2
    return (conc - disc) / math.sqrt((pairs - tie_x) * (pairs - tie_y))


def signed_rank_enumeration(diffs):
    """Two-sided p by listing all 2^n sign assignments of the midranks."""
    d = [x for x in diffs if x != 0]
    absd = sorted(abs(x) for x in d)
    # midranks by hand
    rank_of = {}
    i = 0
    while i < len(absd):
        j = i
        while j + 1 < len(absd) and absd[j + 1] == absd[i]:
            j += 1
        rank_of[absd[i]] = Fraction(i + 1 + j + 1, 2)
        i = j + 1
    ranks = [rank_of[abs(x)] for x in d]
    t_obs = sum(r for r, x in zip(ranks, d) if x > 0)
    lower = upper = 0
    for signs in itertools.product((0, 1), repeat=len(ranks)):
        t = sum(r for r, s in zip(ranks, signs) if s)
        lower += t <= t_obs
        upper += t >= t_obs
    total = 2 ** len(ranks)
    return min(1.0, float(Fraction(2 * min(lower, upper), total)))


# --- density -----------------------------------------------------------------

def gaussian_kde_point(samples, h_v, h_a, v, a):
    total = 0.0
    for sv, sa in samples:
        total += math.exp(-0.5 * (((v - sv) / h_v) ** 2 + ((a - sa) / h_a) ** 2)) / (2 * math.pi * h_v * h_a)
    return total / len(samples)


def sample_std(xs):
    n = len(xs)
    m = sum(xs) / n
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (n - 1))
