"""Finite-difference verification of every analytic gradient in the package.

Relative error is measured norm-wise, ``|a - n| / max(|a|, |n|)``, between
the analytic and the central-difference gradient of one case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .embed import (DEFAULT_TAU, ContrastiveBatch, EmbeddingHead, backprop_head, contrastive_grad,
                    contrastive_loss, head_forward)
from .kernels import DeformableParams, FeatureMap, build_pyramid, deformable_fuse, \
    deformable_fuse_grad


@dataclass
class CheckResult:
    suite: str
    case: int
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < self.tol)


def rel_error(a: np.ndarray, n: np.ndarray) -> float:
    a, n = np.ravel(a), np.ravel(n)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def central_diff(f: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def random_contrastive_batch(rng: np.random.Generator, n_max: int = 16, dim: int = 8
                             ) -> ContrastiveBatch:
    n_inst = int(rng.integers(2, n_max // 2 + 1))
    ids = np.repeat(np.arange(n_inst), 2)
    views = np.tile([1, 2], n_inst)
    extra = int(rng.integers(0, n_max - 2 * n_inst + 1))
    if extra:
        ids = np.concatenate([ids, rng.integers(0, n_inst + 2, size=extra)])
        views = np.concatenate([views, rng.integers(1, 3, size=extra)])
    perm = rng.permutation(len(ids))
    return ContrastiveBatch(rng.standard_normal((len(ids), dim)), ids[perm], views[perm])


def check_contrastive(n_cases: int = 10, seed: int = 0, tau: float = DEFAULT_TAU,
                      h: float = 1e-5, tol: float = 1e-4) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for case in range(n_cases):
        b = random_contrastive_batch(rng)

        def f(e):
            return contrastive_loss(ContrastiveBatch(e, b.instance_ids, b.view_ids), tau).total

        num = central_diff(f, b.embeddings, h)
        out.append(CheckResult("contrastive", case, rel_error(contrastive_grad(b, tau), num), tol))
    return out


def check_head(n_cases: int = 5, seed: int = 0, h: float = 1e-6, tol: float = 1e-4
               ) -> list[CheckResult]:
    out = []
    for case in range(n_cases):
        rng = np.random.default_rng([seed, case])
        head = EmbeddingHead.init(6, 5, 7, seed=seed * 100 + case)
        head = head.with_params([p + 0.1 * rng.standard_normal(p.shape) for p in head.params()])
        x = rng.standard_normal((4, 6))
        up = rng.standard_normal((4, 5))
        grads = backprop_head(head, x, up)
        params = head.params()
        errs = []
        for k, p in enumerate(params):
            def f(v, k=k):
                ps = list(params)
                ps[k] = v
                return float(np.sum(up * head_forward(head.with_params(ps), x)))
            errs.append(rel_error(grads[k], central_diff(f, p, h)))
        out.append(CheckResult("head", case, max(errs), tol))
    return out


def _safe_deformable_case(rng: np.random.Generator, margin: float = 0.01):
    """Random pyramid/params whose sample points stay ``margin`` away from cell edges."""
    base = FeatureMap(16, rng.standard_normal((6, 6, 3)))
    pyr = build_pyramid(base)
    while True:
        params = DeformableParams.grid3x3(
            4, offsets=rng.uniform(-1.5, 1.5, size=(4, 9, 2)),
            modulation_logits=rng.standard_normal((4, 9)),
            weights=rng.standard_normal(9), ref_level=1)
        p = rng.uniform(2.0, 9.0, size=2)
        frac_ok = True
        for j, lv in enumerate(pyr.levels):
            pj = (p + 0.5) * 8 / lv.stride - 0.5
            pos = pj + params.base_offsets + params.offsets[j]
            fr = pos - np.floor(pos)
            if np.any((fr < margin) | (fr > 1 - margin)):
                frac_ok = False
                break
        if frac_ok:
            return pyr, params, p


def check_deformable(n_cases: int = 5, seed: int = 0, h: float = 1e-4, tol: float = 1e-3
                     ) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for case in range(n_cases):
        pyr, prm, p = _safe_deformable_case(rng)
        g = deformable_fuse_grad(pyr, prm, p)
        up = rng.standard_normal(pyr.levels[0].channels)

        def fuse_with(**kw):
            fields = dict(base_offsets=prm.base_offsets, weights=prm.weights,
                          offsets=prm.offsets, modulation=prm.modulation,
                          ref_level=prm.ref_level)
            fields.update(kw)
            return float(up @ deformable_fuse(pyr, DeformableParams(**fields), p))

        errs = [
            rel_error(np.tensordot(up, g.offsets, 1),
                      central_diff(lambda v: fuse_with(offsets=v), prm.offsets, h)),
            rel_error(np.tensordot(up, g.modulation, 1),
                      central_diff(lambda v: fuse_with(modulation=v), prm.modulation, h)),
            rel_error(np.tensordot(up, g.weights, 1),
                      central_diff(lambda v: fuse_with(weights=v), prm.weights, h)),
        ]
        out.append(CheckResult("deformable", case, max(errs), tol))
    return out


def run_all(seed: int = 0) -> list[CheckResult]:
    return check_contrastive(seed=seed) + check_head(seed=seed) + check_deformable(seed=seed)
