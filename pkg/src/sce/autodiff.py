"""Minimal reverse-mode automatic differentiation on numpy arrays.

Values are stored as float32 by default; reductions accumulate in float64.
Probability-producing ops (softmax, cross-entropy, logsumexp) compute and
store in float64 so that loss-identity checks are tight at f32 inputs.
Tapes are built fresh per training step and consumed by a single backward
pass; there is no graph reuse.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class DegenerateRowError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """Dense n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        arr = np.asarray(data)
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of op nodes; backward traverses it once, in reverse."""

    def __init__(self):
        self.nodes = []
        self._consumed = False

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self
        return False

    def record(self, out, inputs, backward_fn):
        self.nodes.append((out, inputs, backward_fn))


def _current_tape():
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def _make_out(data, inputs, backward_fn):
    """Create an op output and record it on the active tape if needed."""
    tracked = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=tracked, dtype=None)
    out._leaf = False
    tape = _current_tape()
    if tracked and tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def _cast_like(grad, tensor):
    return grad.astype(tensor.data.dtype, copy=False)


def backward(tape: Tape, loss: Tensor):
    """Reverse-accumulate gradients of a scalar loss over the tape.

    Sets ``.grad`` on every requires_grad tensor reached from the loss.
    A tape can be walked only once.
    """
    if tape._consumed:
        raise TapeError("tape already consumed by a previous backward pass")
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape._consumed = True

    grads: dict[int, np.ndarray] = {
        id(loss): np.ones_like(loss.data, dtype=np.float64)
    }
    leaf_grads: dict[int, tuple[Tensor, np.ndarray]] = {}
    for out, inputs, fn in reversed(tape.nodes):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        for t, g in zip(inputs, fn(g_out)):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if t._leaf:
                if key in leaf_grads:
                    leaf_grads[key] = (t, leaf_grads[key][1] + g)
                else:
                    leaf_grads[key] = (t, np.asarray(g, dtype=np.float64))
            elif key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = np.asarray(g, dtype=np.float64)
    for t, g in leaf_grads.values():
        gc = _cast_like(g, t)
        t.grad = gc if t.grad is None else t.grad + gc


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make_out(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make_out(data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * s

    def bwd(g):
        return (g * s,)

    return _make_out(data, (a,), bwd)


def _unbroadcast(g, shape):
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul shape mismatch: {a.data.shape} x {b.data.shape}"
        )
    data = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _make_out(data, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w.T + b with w of shape (out, in)."""
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear shape mismatch: {x.data.shape} x {w.data.shape}")
    data = x.data @ w.data.T + b.data

    def bwd(g):
        return (
            g @ w.data,
            g.T @ x.data,
            g.sum(axis=0, dtype=np.float64),
        )

    return _make_out(data, (x, w, b), bwd)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def bwd(g):
        return (g * (x.data > 0),)

    return _make_out(data, (x,), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape
    data = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(old),)

    return _make_out(data, (x,), bwd)


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row dot product of two N x D batches -> length-N vector."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"row_dot shape mismatch: {a.data.shape} vs {b.data.shape}")
    data = np.einsum("nd,nd->n", a.data.astype(np.float64), b.data.astype(np.float64))

    def bwd(g):
        return g[:, None] * b.data, g[:, None] * a.data

    return _make_out(data.astype(_promote(a, b)), (a, b), bwd)


def concat_cols(parts: list[Tensor]) -> Tensor:
    """Concatenate 2-D blocks along axis 1."""
    datas = [p.data for p in parts]
    data = np.concatenate(datas, axis=1)
    widths = [d.shape[1] for d in datas]

    def bwd(g):
        out, off = [], 0
        for w in widths:
            out.append(g[:, off:off + w])
            off += w
        return tuple(out)

    return _make_out(data, tuple(parts), bwd)


def _promote(*tensors):
    return np.result_type(*[t.data.dtype for t in tensors])


def tsum(x: Tensor) -> Tensor:
    data = np.array(x.data.sum(dtype=np.float64), dtype=x.data.dtype)

    def bwd(g):
        return (np.broadcast_to(g, x.data.shape),)

    return _make_out(data, (x,), bwd)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    data = np.array(x.data.sum(dtype=np.float64) / n, dtype=x.data.dtype)

    def bwd(g):
        return (np.broadcast_to(g / n, x.data.shape),)

    return _make_out(data, (x,), bwd)


# ---------------------------------------------------------------------------
# normalization / probability ops


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    norms = np.sqrt(
        np.einsum("nd,nd->n", x.data.astype(np.float64), x.data.astype(np.float64))
    )
    denom = np.maximum(norms, eps)
    y = x.data / denom[:, None].astype(x.data.dtype)

    def bwd(g):
        # d(x/n)/dx = (I - y y^T)/n on rows where the norm is live; plain
        # scaling where the eps guard fired.
        gy = np.einsum("nd,nd->n", g, y.astype(np.float64))
        live = (norms >= eps)[:, None]
        gx = (g - np.where(live, gy[:, None] * y, 0.0)) / denom[:, None]
        return (gx,)

    return _make_out(y, (x,), bwd)


def softmax_rows(logits: Tensor, temperature: float, mask=None) -> Tensor:
    """Row-wise softmax of logits/temperature.

    ``mask`` marks entries excluded from the distribution: they receive
    exactly zero probability and do not enter the normalizer (they are
    dropped before max-subtraction). Output is float64.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = logits.data.astype(np.float64) / temperature
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise ShapeError(f"mask shape {mask.shape} != logits shape {z.shape}")
        if np.any(mask.all(axis=1)):
            raise DegenerateRowError("softmax row with every entry masked")
        z = np.where(mask, -np.inf, z)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = np.einsum("nk,nk->n", g, p)
        gl = p * (g - dot[:, None]) / temperature
        return (gl,)

    return _make_out(p, (logits,), bwd)


def logsumexp_rows(logits: Tensor, temperature: float, mask=None) -> Tensor:
    """Row-wise log-sum-exp of logits/temperature; float64 output."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = logits.data.astype(np.float64) / temperature
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if np.any(mask.all(axis=1)):
            raise DegenerateRowError("logsumexp row with every entry masked")
        z = np.where(mask, -np.inf, z)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s)).ravel()
    p = e / s

    def bwd(g):
        return (g[:, None] * p / temperature,)

    return _make_out(out, (logits,), bwd)


def cross_entropy_rows(target, pred: Tensor, eps: float = 1e-12) -> Tensor:
    """-(1/N) sum target * log(max(pred, eps)); gradient flows to pred only."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    t = t.astype(np.float64)
    if t.shape != pred.data.shape:
        raise ShapeError(
            f"cross_entropy shape mismatch: target {t.shape} vs pred {pred.data.shape}"
        )
    n = t.shape[0]
    p = np.maximum(pred.data.astype(np.float64), eps)
    val = -(t * np.log(p)).sum(dtype=np.float64) / n

    def bwd(g):
        return (-g * t / (p * n),)

    return _make_out(np.float64(val), (pred,), bwd)


# ---------------------------------------------------------------------------
# convolution / pooling / batchnorm


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with FCkhkw weights."""
    n, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise ShapeError(f"conv2d channel mismatch: input {c}, weight {cw}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d output would be empty for input {x.data.shape}, "
            f"kernel {(kh, kw)}, stride {stride}, padding {padding}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, kh, kw, stride, oh, ow)  # (n*oh*ow, c*kh*kw)
    wr = w.data.reshape(f, -1)
    out = (cols @ wr.T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def bwd(g):
        gr = g.transpose(0, 2, 3, 1).reshape(-1, f)  # (n*oh*ow, f)
        dw = (gr.T @ cols).reshape(w.data.shape)
        dcols = gr @ wr
        dxp = _col2im(dcols, xp.shape, kh, kw, stride, oh, ow)
        if padding:
            dx = dxp[:, :, padding:-padding, padding:-padding]
        else:
            dx = dxp
        return dx, dw

    return _make_out(np.ascontiguousarray(out), (x, w), bwd)


def _im2col(xp, kh, kw, stride, oh, ow):
    n, c, _, _ = xp.shape
    s0, s1, s2, s3 = xp.strides
    shape = (n, c, kh, kw, oh, ow)
    strides = (s0, s1, s2, s3, s2 * stride, s3 * stride)
    patches = np.lib.stride_tricks.as_strided(xp, shape=shape, strides=strides)
    return np.ascontiguousarray(patches.transpose(0, 4, 5, 1, 2, 3)).reshape(
        n * oh * ow, c * kh * kw
    )


def _col2im(dcols, xp_shape, kh, kw, stride, oh, ow):
    n, c = xp_shape[0], xp_shape[1]
    dxp = np.zeros(xp_shape, dtype=np.float64)
    d = dcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += d[:, :, i, j]
    return dxp


def avg_pool2d(x: Tensor, k: int = 2) -> Tensor:
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d needs dims divisible by {k}, got {(h, w)}")
    data = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def bwd(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (gx,)

    return _make_out(data, (x,), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    data = x.data.mean(axis=(2, 3), dtype=np.float64).astype(x.data.dtype)

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape),)

    return _make_out(data, (x,), bwd)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_running: bool = True,
) -> Tensor:
    """Batch normalization over N x D (per column) or N x C x H x W (per channel).

    Train mode normalizes by batch statistics and, when ``update_running``,
    refreshes the running stats in place; eval mode uses the running stats.
    """
    if x.data.ndim == 2:
        axes, view = (0,), (1, -1)
    elif x.data.ndim == 4:
        axes, view = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.data.shape}")
    count = int(np.prod([x.data.shape[a] for a in axes]))
    if train and x.data.shape[0] < 2:
        raise ShapeError("batchnorm train mode requires a batch of at least 2")

    if train:
        mean = x.data.mean(axis=axes, dtype=np.float64)
        var = x.data.var(axis=axes, dtype=np.float64)
        if update_running:
            running_mean.data[...] = (
                (1 - momentum) * running_mean.data + momentum * mean
            ).astype(running_mean.data.dtype)
            running_var.data[...] = (
                (1 - momentum) * running_var.data + momentum * var
            ).astype(running_var.data.dtype)
    else:
        mean = running_mean.data.astype(np.float64)
        var = running_var.data.astype(np.float64)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(view)) * inv.reshape(view)
    out = (gamma.data.reshape(view) * xhat + beta.data.reshape(view)).astype(
        x.data.dtype
    )

    def bwd(g):
        gv = gamma.data.reshape(view)
        dgamma = (g * xhat).sum(axis=axes, dtype=np.float64)
        dbeta = g.sum(axis=axes, dtype=np.float64)
        gxhat = g * gv
        if train:
            # batch statistics participate in the forward pass
            m1 = gxhat.sum(axis=axes, dtype=np.float64).reshape(view)
            m2 = (gxhat * xhat).sum(axis=axes, dtype=np.float64).reshape(view)
            dx = (gxhat - m1 / count - xhat * m2 / count) * inv.reshape(view)
        else:
            dx = gxhat * inv.reshape(view)
        return dx, dgamma, dbeta

    return _make_out(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# verification harness


def grad_check(f, params: dict, h: float = 1e-3, tol: float = 1e-4, rng=None,
               n_probes: int = 0):
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` builds a fresh tape and returns a scalar Tensor given ``params``
    (a dict of name -> Tensor). When ``n_probes`` > 0, only that many random
    coordinates per parameter are probed (full sweep otherwise). Returns a
    report dict with per-parameter max relative error and a pass flag.
    """
    rng = rng or np.random.default_rng(0)
    for t in params.values():
        t.zero_grad()
    with Tape() as tape:
        loss = f(params)
    backward(tape, loss)
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items() if t.requires_grad}

    report = {"per_param": {}, "passed": True, "tol": tol, "h": h}
    worst = 0.0
    for name, t in params.items():
        if not t.requires_grad:
            continue
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if n_probes and flat.size > n_probes:
            idx = rng.choice(flat.size, size=n_probes, replace=False)
        max_err = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            with Tape():
                lp = float(f(params).data)
            flat[i] = orig - h
            with Tape():
                lm = float(f(params).data)
            flat[i] = orig
            num = (np.float64(lp) - np.float64(lm)) / (2 * h)
            ana = analytic[name].reshape(-1)[i]
            denom = max(abs(num), abs(ana), 1e-8)
            max_err = max(max_err, abs(num - ana) / denom)
        report["per_param"][name] = max_err
        worst = max(worst, max_err)
        if max_err > tol:
            report["passed"] = False
    report["max_rel_err"] = worst
    return report
