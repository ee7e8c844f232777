"""Self-check suites: the loss decomposition identity and end-to-end
gradient checks through encoder, projector and each loss."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import engine, models, objectives
from .autodiff import Tensor

LOSS_NAMES = ("infonce", "ressl", "ceil", "sce")


def small_specs():
    enc = models.EncoderSpec(in_channels=3, in_size=8, widths=(4, 8))
    proj = models.ProjectorSpec(in_dim=8, hidden_dim=16, out_dim=8)
    return enc, proj


def composite_grad_check(loss_name: str, n_probes: int = 20, seed: int = 0,
                         tol: float = 1e-3, h: float = 1e-4) -> dict:
    """Finite-difference check of d(loss)/d(params) through a small
    encoder -> projector -> loss pipeline.

    The pipeline is evaluated in float64: central differences through a
    multi-layer network need more forward precision than the float32
    training path carries, while the analytic backward rules under test
    are dtype-independent.
    """
    if loss_name not in LOSS_NAMES:
        raise ValueError(f"unknown loss {loss_name!r}")
    enc_spec, proj_spec = small_specs()
    rng = np.random.default_rng(seed)
    state = engine.init_state(enc_spec, proj_spec, queue_size=8, seed=seed)
    for t in state.online.values():
        t.data = t.data.astype(np.float64)
    images = rng.uniform(0.0, 1.0, size=(4, 3, 8, 8))
    z2 = objectives.random_unit_rows(rng, 4, proj_spec.out_dim).astype(np.float64)
    queue = objectives.random_unit_rows(rng, 6, proj_spec.out_dim).astype(np.float64)
    cfg = objectives.ObjectiveConfig(lam=0.5, tau=0.1, tau_m=0.05)

    def f(params):
        z1 = engine.embed(params, state, Tensor(images, dtype=None),
                          train=True, update_running=False)
        return objectives.compute_losses(z1, z2, queue, cfg)[loss_name]

    return ad.grad_check(f, state.online, h=h, tol=tol,
                         rng=np.random.default_rng(seed + 1),
                         n_probes=n_probes)


def grad_check_suite(n_probes: int = 20, seed: int = 0, tol: float = 1e-3) -> dict:
    reports = {name: composite_grad_check(name, n_probes=n_probes, seed=seed,
                                          tol=tol)
               for name in LOSS_NAMES}
    return {
        "per_loss": {k: {"max_rel_err": r["max_rel_err"], "passed": r["passed"]}
                     for k, r in reports.items()},
        "passed": all(r["passed"] for r in reports.values()),
        "tolerance": tol,
    }


def full_verify(trials: int = 200, use_f64: bool = False, seed: int = 0) -> dict:
    decomposition = objectives.verify_decomposition(
        trials=trials, seed=seed, use_f64=use_f64
    )
    gradients = grad_check_suite(seed=seed)
    return {
        "decomposition": decomposition,
        "gradients": gradients,
        "passed": decomposition["passed"] and gradients["passed"],
    }
