"""Loss family over positive/queue similarity logits.

Four losses share one layout: for each of the N queries, candidate slot 0
holds the positive similarity and slots 1..M hold similarities against a
queue snapshot of M momentum embeddings.

 - info_nce: (M+1)-way softmax cross-entropy with the positive as label.
 - ressl:    cross-entropy between sharpened target relations and online
             relations, both with the positive/self slot excluded.
 - ceil:     log-ratio of negative mass to total mass.
 - sce:      cross-entropy against a convex mix of the positive one-hot
             (weight lam) and the target relations (weight 1 - lam); equals
             lam * info_nce + (1 - lam) * (ressl + ceil).

Target-side quantities are plain float64 arrays and never carry gradient;
only the online embedding z1 is differentiated through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class ObjectiveConfig:
    lam: float = 0.5
    mu: float | None = None        # defaults to 1 - lam
    eta: float | None = None       # defaults to 1 - lam
    tau: float = 0.1
    tau_m: float = 0.05
    mask_self_in_target: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.tau <= 0 or self.tau_m <= 0:
            raise ValueError(
                f"temperatures must be positive, got tau={self.tau}, "
                f"tau_m={self.tau_m}"
            )
        if self.mu is not None and self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")
        if self.eta is not None and self.eta < 0:
            raise ValueError(f"eta must be nonnegative, got {self.eta}")

    @property
    def mu_eff(self) -> float:
        return 1.0 - self.lam if self.mu is None else self.mu

    @property
    def eta_eff(self) -> float:
        return 1.0 - self.lam if self.eta is None else self.eta


@dataclass
class LogitsBlock:
    """Positive similarities (length N) and queue similarities (N x M)."""

    pos: Tensor
    neg: Tensor

    @property
    def n(self) -> int:
        return self.pos.data.shape[0]

    @property
    def m(self) -> int:
        return self.neg.data.shape[1]

    def stacked(self) -> Tensor:
        return ad.concat_cols([ad.reshape(self.pos, (self.n, 1)), self.neg])


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=None)


def similarity_logits(a, b_pos, queue_snapshot) -> LogitsBlock:
    """pos_i = a_i . b_pos_i, neg = a @ queue^T. Gradient flows from ``a``."""
    a = _as_tensor(a)
    b_pos = _as_tensor(b_pos)
    q = _as_tensor(queue_snapshot)
    if a.data.shape != b_pos.data.shape:
        raise ad.ShapeError(
            f"embedding shape mismatch: {a.data.shape} vs {b_pos.data.shape}"
        )
    if q.data.shape[1] != a.data.shape[1]:
        raise ad.ShapeError(
            f"queue dim {q.data.shape[1]} != embedding dim {a.data.shape[1]}"
        )
    pos = ad.row_dot(a, b_pos)
    neg = ad.matmul(a, Tensor(q.data.T.copy(), dtype=None))
    return LogitsBlock(pos=pos, neg=neg)


def _full_mask(n, m, mask_slot0: bool, extra_mask=None):
    """Boolean N x (M+1) exclusion mask, or None if nothing is masked."""
    if not mask_slot0 and extra_mask is None:
        return None
    mask = np.zeros((n, m + 1), dtype=bool)
    if mask_slot0:
        mask[:, 0] = True
    if extra_mask is not None:
        mask[:, 1:] |= np.asarray(extra_mask, dtype=bool)
    return mask


def info_nce_loss(logits: LogitsBlock, tau: float, extra_mask=None) -> Tensor:
    mask = _full_mask(logits.n, logits.m, False, extra_mask)
    lse = ad.logsumexp_rows(logits.stacked(), tau, mask=mask)
    return ad.tmean(ad.add(lse, ad.scale(logits.pos, -1.0 / tau)))


def target_relations(z2, queue_snapshot, tau_m: float, mask_self: bool = True,
                     extra_mask=None) -> np.ndarray:
    """Sharpened target similarity distribution p2, shape N x (M+1), float64.

    With ``mask_self`` the self slot 0 gets exactly zero probability and is
    excluded from the normalizer; otherwise the self slot enters the softmax
    with a raw logit of zero. The result carries no gradient.
    """
    z2 = np.asarray(z2.data if isinstance(z2, Tensor) else z2, dtype=np.float64)
    q = np.asarray(
        queue_snapshot.data if isinstance(queue_snapshot, Tensor) else queue_snapshot,
        dtype=np.float64,
    )
    n, m = z2.shape[0], q.shape[0]
    if m == 0 and mask_self:
        raise ad.DegenerateRowError("empty queue with self slot masked")
    sims = np.concatenate([np.zeros((n, 1)), z2 @ q.T], axis=1)
    mask = _full_mask(n, m, mask_self, extra_mask)
    with ad.Tape():
        p2 = ad.softmax_rows(Tensor(sims, dtype=None), tau_m, mask=mask)
    return p2.data


def online_relations_masked(z1, z2, queue_snapshot, tau: float,
                            extra_mask=None) -> Tensor:
    """Online relation distribution with the positive slot excluded (N x (M+1))."""
    logits = similarity_logits(z1, _detach(z2), queue_snapshot)
    mask = _full_mask(logits.n, logits.m, True, extra_mask)
    return ad.softmax_rows(logits.stacked(), tau, mask=mask)


def sce_online(z1, z2, queue_snapshot, tau: float, extra_mask=None) -> Tensor:
    """Online similarity distribution over all M+1 slots (no exclusion)."""
    logits = similarity_logits(z1, _detach(z2), queue_snapshot)
    mask = _full_mask(logits.n, logits.m, False, extra_mask)
    return ad.softmax_rows(logits.stacked(), tau, mask=mask)


def _detach(z):
    if isinstance(z, Tensor):
        return Tensor(z.data, dtype=None)
    return Tensor(np.asarray(z), dtype=None)


def ressl_loss(p2: np.ndarray, p1_ressl: Tensor) -> Tensor:
    if p2.shape != p1_ressl.data.shape:
        raise ad.ShapeError(
            f"relation shape mismatch: {p2.shape} vs {p1_ressl.data.shape}"
        )
    if np.any((p2 > 0) & (p1_ressl.data == 0)):
        raise ValueError("target places mass on a slot the online mask excludes")
    return ad.cross_entropy_rows(p2, p1_ressl)


def sce_target(p2: np.ndarray, lam: float) -> np.ndarray:
    """Convex mix w2 = lam * one_hot(slot 0) + (1 - lam) * p2."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    w2 = (1.0 - lam) * np.asarray(p2, dtype=np.float64)
    w2[:, 0] += lam
    return w2


def sce_loss(w2: np.ndarray, p1: Tensor) -> Tensor:
    return ad.cross_entropy_rows(w2, p1)


def ceil_loss(logits: LogitsBlock, tau: float, extra_mask=None) -> Tensor:
    """-(1/N) sum log(negative mass / total mass); always positive."""
    lse_all = ad.logsumexp_rows(logits.stacked(), tau,
                                mask=_full_mask(logits.n, logits.m, False,
                                                extra_mask))
    lse_neg = ad.logsumexp_rows(logits.stacked(), tau,
                                mask=_full_mask(logits.n, logits.m, True,
                                                extra_mask))
    return ad.tmean(ad.add(lse_all, ad.scale(lse_neg, -1.0)))


def compute_losses(z1, z2, queue_snapshot, cfg: ObjectiveConfig,
                   extra_mask=None) -> dict[str, Tensor]:
    """All four losses plus the weighted combination on shared logits.

    Returns a dict with keys infonce, ressl, ceil, sce, combined. Gradient
    flows only from z1.
    """
    logits = similarity_logits(z1, _detach(z2), queue_snapshot)
    p2 = target_relations(z2, queue_snapshot, cfg.tau_m,
                          mask_self=cfg.mask_self_in_target,
                          extra_mask=extra_mask)
    w2 = sce_target(p2, cfg.lam)

    mask_excl = _full_mask(logits.n, logits.m, True, extra_mask)
    mask_all = _full_mask(logits.n, logits.m, False, extra_mask)
    stacked = logits.stacked()
    p1 = ad.softmax_rows(stacked, cfg.tau, mask=mask_all)
    p1_excl = ad.softmax_rows(stacked, cfg.tau, mask=mask_excl)

    l_info = info_nce_loss(logits, cfg.tau, extra_mask=extra_mask)
    # target distribution with a live self slot cannot pair with the
    # exclusion-masked online distribution
    p2_for_ressl = p2 if cfg.mask_self_in_target else _mask_slot0(p2)
    l_ressl = ressl_loss(p2_for_ressl, p1_excl)
    l_ceil = ceil_loss(logits, cfg.tau, extra_mask=extra_mask)
    l_sce = sce_loss(w2, p1)
    combined = ad.add(
        ad.add(ad.scale(l_info, cfg.lam), ad.scale(l_ressl, cfg.mu_eff)),
        ad.scale(l_ceil, cfg.eta_eff),
    )
    return {
        "infonce": l_info,
        "ressl": l_ressl,
        "ceil": l_ceil,
        "sce": l_sce,
        "combined": combined,
    }


def _mask_slot0(p2: np.ndarray) -> np.ndarray:
    out = p2.copy()
    out[:, 0] = 0.0
    s = out.sum(axis=1, keepdims=True)
    return out / np.maximum(s, 1e-300)


def combined_loss(z1, z2, queue_snapshot, cfg: ObjectiveConfig,
                  extra_mask=None) -> Tensor:
    return compute_losses(z1, z2, queue_snapshot, cfg, extra_mask)["combined"]


def random_unit_rows(rng, n, d, dtype=np.float32) -> np.ndarray:
    x = rng.standard_normal((n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x.astype(dtype)


def verify_decomposition(
    trials: int = 100,
    n_values=(2, 8, 32),
    m_values=(1, 8, 64),
    d_values=(8, 64),
    lambda_grid=tuple(round(0.1 * i, 1) for i in range(11)),
    tau: float = 0.1,
    tau_m: float = 0.05,
    seed: int = 0,
    use_f64: bool = False,
) -> dict:
    """Numerically check sce = lam*infonce + (1-lam)*(ressl + ceil).

    Random unit-norm embeddings and queues are drawn per trial; the residual
    is relative to max(1, |sce|). Passes iff the max residual is below 1e-5
    for f32 inputs, 1e-10 for f64 inputs.
    """
    rng = np.random.default_rng(seed)
    dtype = np.float64 if use_f64 else np.float32
    tol = 1e-10 if use_f64 else 1e-5
    worst = 0.0
    worst_case = None
    cases = [(n, m, d) for n in n_values for m in m_values for d in d_values]
    for t in range(trials):
        n, m, d = cases[t % len(cases)]
        z1 = random_unit_rows(rng, n, d, dtype)
        z2 = random_unit_rows(rng, n, d, dtype)
        queue = random_unit_rows(rng, m, d, dtype)
        for lam in lambda_grid:
            cfg = ObjectiveConfig(lam=lam, tau=tau, tau_m=tau_m)
            with ad.Tape():
                losses = compute_losses(Tensor(z1, dtype=None), z2, queue, cfg)
            lhs = float(losses["sce"].data)
            rhs = (
                lam * float(losses["infonce"].data)
                + (1 - lam) * (float(losses["ressl"].data)
                               + float(losses["ceil"].data))
            )
            res = abs(lhs - rhs) / max(1.0, abs(lhs))
            if res > worst:
                worst = res
                worst_case = {"n": n, "m": m, "d": d, "lam": lam, "trial": t}
    return {
        "trials": trials,
        "max_residual": worst,
        "worst_case": worst_case,
        "tolerance": tol,
        "dtype": "float64" if use_f64 else "float32",
        "passed": worst <= tol,
    }
