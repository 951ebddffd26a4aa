"""Shared test utilities: finite-difference oracles and tiny fixtures."""

from __future__ import annotations

import numpy as np

from freqrec import model as M
from freqrec import objective as obj
from freqrec import autodiff as ad
from freqrec.objective import LossConfig

# Null-gradient tensors (e.g. the attention key bias, cancelled by softmax
# shift invariance) make a bare relative metric degenerate: both sides are
# pure roundoff (analytic ~1e-17, central differences ~1e-10 at step 1e-5).
# The denominator floor sits far above that noise and far below any real
# gradient norm in these tests (>= 1e-3).
FD_FLOOR = 1e-5


def finite_difference_grads(loss_fn, params: M.ModelParams, eps: float = 1e-5):
    """Central finite differences of loss_fn() w.r.t. every parameter entry."""
    fd = {}
    for name, t in params.tensors.items():
        g = np.zeros_like(t.data)
        it = np.nditer(t.data, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = t.data[ix]
            t.data[ix] = orig + eps
            lp = loss_fn()
            t.data[ix] = orig - eps
            lm = loss_fn()
            t.data[ix] = orig
            g[ix] = (lp - lm) / (2.0 * eps)
            it.iternext()
        fd[name] = g
    return fd


def relative_tensor_error(analytic: np.ndarray, fd: np.ndarray) -> float:
    num = np.linalg.norm(analytic - fd)
    den = max(np.linalg.norm(analytic), np.linalg.norm(fd), FD_FLOOR)
    return num / den


def full_objective_loss(params, model_cfg, seqs, targets, views1, views2, lam, loss_cfg):
    """The complete weighted objective on fixed inputs (no stochasticity)."""
    idx, lens = M.pad_batch(seqs)
    h0 = M.encode_batch(M.embed_batch(idx, params), lens, params, model_cfg, "eval")
    rec = obj.rec_loss_batch(h0, params["item_emb"], np.asarray(targets))
    vidx, vlens = M.pad_batch(list(views1) + list(views2))
    H = M.encode_batch(M.embed_batch(vidx, params), vlens, params, model_cfg, "eval")
    B = len(seqs)
    h1 = ad.take_at(H, (np.arange(B),))
    h2 = ad.take_at(H, (np.arange(B, 2 * B),))
    cl = obj.infonce_batch(h1, h2, loss_cfg)
    return obj.total_loss_batch(rec, cl, np.asarray(lam), loss_cfg)


def random_fd_case(seed: int, num_items: int = 20, batch: int = 4, max_len: int = 8):
    """Deterministic random sequences/views/targets for gradient checks."""
    gen = np.random.Generator(np.random.PCG64(seed))
    seqs = [
        tuple(int(x) for x in gen.integers(0, num_items, size=int(gen.integers(2, max_len + 1))))
        for _ in range(batch)
    ]
    targets = [int(gen.integers(0, num_items)) for _ in range(batch)]
    views1 = [tuple(int(x) for x in gen.integers(0, num_items, size=len(s))) for s in seqs]
    views2 = [
        tuple(int(x) for x in gen.integers(0, num_items, size=max(1, len(s) - 1))) for s in seqs
    ]
    lam = gen.uniform(0.5, 2.0, size=batch)
    return seqs, targets, views1, views2, lam
