"""Hot loops, each in two flavours: a numba ``@njit`` kernel and a numpy path.

The backend is picked once at import from ``MUSICSIM_BACKEND`` (``numba`` or
``numpy``; default ``numba`` when it imports). Both flavours are always
reachable through :data:`IMPLEMENTATIONS` so tests and the benchmark can run
them side by side.

Integer kernels (pair counting, merging, ranking) agree exactly between
backends. The float kernels agree to rounding; each is bitwise reproducible
on its own.
"""

from __future__ import annotations

import logging
import math
import os

import numpy as np

log = logging.getLogger(__name__)

try:
    import numba as nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    nb = None
    HAVE_NUMBA = False

_requested = os.environ.get("MUSICSIM_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(f"MUSICSIM_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
if _requested == "numba" and not HAVE_NUMBA:
    log.warning("numba not importable, falling back to numpy kernels")
    _requested = "numpy"
BACKEND = _requested


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return nb.njit(cache=True, nogil=True)(fn)


SEP = -1  # sequence separator inside concatenated token arrays

# --------------------------------------------------------------------------
# adjacent pair statistics


def _np_best_pair(seq, word_len, max_len, vocab_size):
    left = seq[:-1]
    right = seq[1:]
    ok = (left >= 0) & (right >= 0)
    left = left[ok]
    right = right[ok]
    ok = word_len[left] + word_len[right] <= max_len
    if not ok.any():
        return -1, -1, 0
    codes = left[ok] * vocab_size + right[ok]
    uniq, counts = np.unique(codes, return_counts=True)
    k = int(np.argmax(counts))  # first max = smallest (left, right)
    code = int(uniq[k])
    return code // vocab_size, code % vocab_size, int(counts[k])


def _nb_best_pair(seq, word_len, max_len, vocab_size):
    n = seq.shape[0]
    codes = np.empty(max(n - 1, 0), dtype=np.int64)
    m = 0
    for i in range(n - 1):
        a = seq[i]
        b = seq[i + 1]
        if a < 0 or b < 0:
            continue
        if word_len[a] + word_len[b] > max_len:
            continue
        codes[m] = a * vocab_size + b
        m += 1
    if m == 0:
        return -1, -1, 0
    codes = np.sort(codes[:m])
    best_code = codes[0]
    best_count = 0
    run = 1
    for i in range(1, m + 1):
        if i < m and codes[i] == codes[i - 1]:
            run += 1
            continue
        if run > best_count:
            best_count = run
            best_code = codes[i - 1]
        run = 1
    return best_code // vocab_size, best_code % vocab_size, best_count


def _np_merge_pair(seq, left, right, new_id):
    if seq.shape[0] < 2:
        return seq.copy()
    hit = (seq[:-1] == left) & (seq[1:] == right)
    pos = np.flatnonzero(hit)
    if pos.size == 0:
        return seq.copy()
    if left == right:
        # runs like a a a: take every other match from the start of each run
        breaks = np.ones(pos.size, dtype=bool)
        breaks[1:] = pos[1:] != pos[:-1] + 1
        run_start = np.maximum.accumulate(np.where(breaks, np.arange(pos.size), 0))
        pos = pos[(np.arange(pos.size) - run_start) % 2 == 0]
    out = seq.copy()
    out[pos] = new_id
    return np.delete(out, pos + 1)


def _nb_merge_pair(seq, left, right, new_id):
    n = seq.shape[0]
    out = np.empty(n, dtype=seq.dtype)
    i = 0
    m = 0
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out[m] = new_id
            i += 2
        else:
            out[m] = seq[i]
            i += 1
        m += 1
    return out[:m].copy()


# --------------------------------------------------------------------------
# ranks and similarities


def _np_rank_average(x):
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    new_group = np.ones(n, dtype=bool)
    new_group[1:] = xs[1:] != xs[:-1]
    starts = np.flatnonzero(new_group)
    ends = np.append(starts[1:], n) - 1
    group_rank = 0.5 * (starts + ends) + 1.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(group_rank, ends - starts + 1)
    return ranks


def _nb_rank_average(x):
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and x[order[j + 1]] == x[order[i]]:
            j += 1
        r = 0.5 * (i + j) + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = r
        i = j + 1
    return ranks


def _np_pair_cosines(emb, ia, ib):
    a = emb[ia]
    b = emb[ib]
    dot = np.einsum("ij,ij->i", a, b)
    norms = np.sqrt(np.einsum("ij,ij->i", a, a)) * np.sqrt(np.einsum("ij,ij->i", b, b))
    zero = norms == 0.0
    out = np.zeros(ia.shape[0], dtype=np.float64)
    np.divide(dot, norms, out=out, where=~zero)
    return np.clip(out, -1.0, 1.0), int(zero.sum())


def _nb_pair_cosines(emb, ia, ib):
    m = ia.shape[0]
    h = emb.shape[1]
    out = np.zeros(m, dtype=np.float64)
    zeros = 0
    for p in range(m):
        a = ia[p]
        b = ib[p]
        dot = 0.0
        na = 0.0
        nb_ = 0.0
        for d in range(h):
            dot += emb[a, d] * emb[b, d]
            na += emb[a, d] * emb[a, d]
            nb_ += emb[b, d] * emb[b, d]
        denom = math.sqrt(na) * math.sqrt(nb_)
        if denom == 0.0:
            zeros += 1
            continue
        c = dot / denom
        out[p] = min(1.0, max(-1.0, c))
    return out, zeros


# --------------------------------------------------------------------------
# decoder-only transformer forward pass (pre-LN, learned positions)

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def _np_layernorm(x, g, b):
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float32)
    cen = x - mean
    var = (cen * cen).mean(axis=-1, keepdims=True, dtype=np.float32)
    return cen / np.sqrt(var + np.float32(LN_EPS)) * g + b


def _np_gelu(x):
    c = np.float32(_GELU_C)
    return np.float32(0.5) * x * (np.float32(1.0) + np.tanh(c * (x + np.float32(0.044715) * x * x * x)))


def _np_forward(ids, tok, pos, ln1_g, ln1_b, wq, wk, wv, wo,
                ln2_g, ln2_b, w1, b1, w2, b2, lnf_g, lnf_b, heads, final_norm_last):
    n = ids.shape[0]
    n_layers, h = ln1_g.shape
    dh = h // heads
    scale = np.float32(1.0 / math.sqrt(dh))
    future = np.triu(np.ones((n, n), dtype=bool), k=1)
    out = np.empty((n_layers, n, h), dtype=np.float32)
    x = tok[ids] + pos[:n]
    for l in range(n_layers):
        a = _np_layernorm(x, ln1_g[l], ln1_b[l])
        q = (a @ wq[l]).reshape(n, heads, dh).transpose(1, 0, 2)
        k = (a @ wk[l]).reshape(n, heads, dh).transpose(1, 0, 2)
        v = (a @ wv[l]).reshape(n, heads, dh).transpose(1, 0, 2)
        scores = (q @ k.transpose(0, 2, 1)) * scale
        scores[:, future] = -np.inf
        scores = scores - scores.max(axis=-1, keepdims=True)
        p = np.exp(scores)
        p = p / p.sum(axis=-1, keepdims=True)
        att = (p @ v).transpose(1, 0, 2).reshape(n, h)
        x = x + att @ wo[l]
        a2 = _np_layernorm(x, ln2_g[l], ln2_b[l])
        x = x + _np_gelu(a2 @ w1[l] + b1[l]) @ w2[l] + b2[l]
        if l == n_layers - 1 and final_norm_last:
            out[l] = _np_layernorm(x, lnf_g, lnf_b)
        else:
            out[l] = x
    return out


def _nb_layernorm_rows(x, g, b, out):
    n, h = x.shape
    eps = np.float32(LN_EPS)
    for t in range(n):
        s = np.float32(0.0)
        for d in range(h):
            s += x[t, d]
        mean = s / np.float32(h)
        s2 = np.float32(0.0)
        for d in range(h):
            c = x[t, d] - mean
            s2 += c * c
        inv = np.float32(1.0) / np.sqrt(s2 / np.float32(h) + eps)
        for d in range(h):
            out[t, d] = (x[t, d] - mean) * inv * g[d] + b[d]


def _nb_matmul_rows(a, w, out):
    # out[t, j] = sum_i a[t, i] * w[i, j], summed in increasing i
    n, k = a.shape
    m = w.shape[1]
    for t in range(n):
        for j in range(m):
            out[t, j] = np.float32(0.0)
        for i in range(k):
            ai = a[t, i]
            for j in range(m):
                out[t, j] += ai * w[i, j]


def _nb_forward(ids, tok, pos, ln1_g, ln1_b, wq, wk, wv, wo,
                ln2_g, ln2_b, w1, b1, w2, b2, lnf_g, lnf_b, heads, final_norm_last):
    n = ids.shape[0]
    n_layers, h = ln1_g.shape
    f = w1.shape[2]
    dh = h // heads
    scale = np.float32(1.0 / math.sqrt(dh))
    half = np.float32(0.5)
    one = np.float32(1.0)
    gc = np.float32(_GELU_C)
    gk = np.float32(0.044715)

    out = np.empty((n_layers, n, h), dtype=np.float32)
    x = np.empty((n, h), dtype=np.float32)
    for t in range(n):
        for d in range(h):
            x[t, d] = tok[ids[t], d] + pos[t, d]
    a = np.empty((n, h), dtype=np.float32)
    q = np.empty((n, h), dtype=np.float32)
    k = np.empty((n, h), dtype=np.float32)
    v = np.empty((n, h), dtype=np.float32)
    att = np.empty((n, h), dtype=np.float32)
    proj = np.empty((n, h), dtype=np.float32)
    hid = np.empty((n, f), dtype=np.float32)
    p = np.empty(n, dtype=np.float32)

    for l in range(n_layers):
        _nb_layernorm_rows(x, ln1_g[l], ln1_b[l], a)
        _nb_matmul_rows(a, wq[l], q)
        _nb_matmul_rows(a, wk[l], k)
        _nb_matmul_rows(a, wv[l], v)
        for hd in range(heads):
            base = hd * dh
            for t in range(n):
                mx = -np.inf
                for s in range(t + 1):
                    sc = np.float32(0.0)
                    for d in range(dh):
                        sc += q[t, base + d] * k[s, base + d]
                    sc = sc * scale
                    p[s] = sc
                    if sc > mx:
                        mx = sc
                tot = np.float32(0.0)
                for s in range(t + 1):
                    e = np.exp(p[s] - mx)
                    p[s] = e
                    tot += e
                for d in range(dh):
                    acc = np.float32(0.0)
                    for s in range(t + 1):
                        acc += (p[s] / tot) * v[s, base + d]
                    att[t, base + d] = acc
        _nb_matmul_rows(att, wo[l], proj)
        for t in range(n):
            for d in range(h):
                x[t, d] = x[t, d] + proj[t, d]
        _nb_layernorm_rows(x, ln2_g[l], ln2_b[l], a)
        _nb_matmul_rows(a, w1[l], hid)
        for t in range(n):
            for j in range(f):
                z = hid[t, j] + b1[l, j]
                hid[t, j] = half * z * (one + np.tanh(gc * (z + gk * z * z * z)))
        _nb_matmul_rows(hid, w2[l], proj)
        for t in range(n):
            for d in range(h):
                x[t, d] = x[t, d] + (proj[t, d] + b2[l, d])
        if l == n_layers - 1 and final_norm_last:
            _nb_layernorm_rows(x, lnf_g, lnf_b, a)
            out[l] = a
        else:
            out[l] = x
    return out


if HAVE_NUMBA:
    _nb_layernorm_rows = _njit(_nb_layernorm_rows)
    _nb_matmul_rows = _njit(_nb_matmul_rows)

IMPLEMENTATIONS = {
    "numpy": {
        "best_pair": _np_best_pair,
        "merge_pair": _np_merge_pair,
        "rank_average": _np_rank_average,
        "pair_cosines": _np_pair_cosines,
        "forward": _np_forward,
    },
    "numba": {
        "best_pair": _njit(_nb_best_pair),
        "merge_pair": _njit(_nb_merge_pair),
        "rank_average": _njit(_nb_rank_average),
        "pair_cosines": _njit(_nb_pair_cosines),
        "forward": _njit(_nb_forward),
    },
}

_active = IMPLEMENTATIONS[BACKEND]
best_pair = _active["best_pair"]
merge_pair = _active["merge_pair"]
rank_average = _active["rank_average"]
pair_cosines = _active["pair_cosines"]
forward = _active["forward"]
