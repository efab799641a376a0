"""Central-difference gradient oracle for the reverse-mode engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    tol: float
    n_entries: int

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28s} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.0e} n={self.n_entries}"


def numeric_grad(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float) -> list[np.ndarray]:
    out = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*inputs).item()
            flat[i] = orig - h
            fm = f(*inputs).item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        out.append(g)
    return out


def analytic_grad(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    y = f(*inputs)
    if y.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {y.shape}")
    y.backward()
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]


def relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """``max|a - n| / max(max|a|, max|n|)`` over all inputs jointly."""
    a = np.concatenate([x.ravel() for x in analytic])
    n = np.concatenate([x.ravel() for x in numeric])
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    name: str = "f",
    tamper: Callable[[list[np.ndarray]], list[np.ndarray]] | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f`` with central differences.

    ``tamper`` rewrites the analytic gradients before comparison; the CLI uses it
    as a sentinel to prove the check can fail.
    """
    ana = analytic_grad(f, inputs)
    if tamper is not None:
        ana = tamper(ana)
    num = numeric_grad(f, inputs, h)
    return GradCheckReport(name, relative_error(ana, num), tol, sum(t.size for t in inputs))


# -- the standard suite -------------------------------------------------------------
#
# Each case builds one random instance from a generator and returns the scalar
# function plus its inputs. Inputs are drawn away from kinks (relu at 0, clamp
# edges, zero-norm vectors, integer sample positions) where central differences
# straddle a non-differentiable point.


def _project(y: Tensor, gen: np.random.Generator) -> Tensor:
    """Scalar ``sum(y * R)`` with a fixed random ``R``, so every output entry matters."""
    return (y * gen.standard_normal(y.shape)).sum()


def _away_from_zero(gen, shape, lo=0.2, hi=1.5):
    return gen.uniform(lo, hi, shape) * gen.choice((-1.0, 1.0), shape)


def _unary_case(op, sampler):
    def make(gen):
        x = Tensor(sampler(gen))
        R = gen.standard_normal(op(Tensor(x.data)).shape)
        return (lambda x: (op(x) * R).sum()), [x]

    return make


def _binary_case(op, sa, sb):
    def make(gen):
        a, b = Tensor(sa(gen)), Tensor(sb(gen))
        R = gen.standard_normal(op(Tensor(a.data), Tensor(b.data)).shape)
        return (lambda a, b: (op(a, b) * R).sum()), [a, b]

    return make


def standard_cases() -> dict[str, Callable[[np.random.Generator], tuple]]:
    """Every differentiable kernel and loss, keyed by a report name."""
    from . import kernels as K
    from . import losses as L
    from .geometry import direction_field, normalize_sdm, signed_distance_map

    n = lambda shape: (lambda g: g.standard_normal(shape))  # noqa: E731
    cases: dict[str, Callable] = {}

    cases["add (broadcast)"] = _binary_case(lambda a, b: a + b, n((3, 4)), n((4,)))
    cases["mul (broadcast)"] = _binary_case(lambda a, b: a * b, n((3, 4)), n((3, 1)))
    cases["div"] = _binary_case(lambda a, b: a / b, n((3, 4)), lambda g: _away_from_zero(g, (3, 4), 0.5, 2.0))
    cases["matmul"] = _binary_case(K.matmul, n((5, 4)), n((4, 3)))
    cases["matmul (batched)"] = _binary_case(K.matmul, n((2, 3, 4)), n((4, 2)))

    def linear(gen):
        x, w, b = Tensor(gen.standard_normal((2, 3, 4))), Tensor(gen.standard_normal((4, 5))), Tensor(gen.standard_normal(5))
        R = gen.standard_normal((2, 3, 5))
        return (lambda x, w, b: (K.linear(x, w, b) * R).sum()), [x, w, b]

    cases["linear / pwconv"] = linear

    def softmax(gen):
        x = Tensor(gen.standard_normal((3, 5)))
        mask = gen.random((3, 5)) >= 0.3  # True keeps the entry
        mask[:, 0] = True
        R = gen.standard_normal((3, 5))
        return (lambda x: (K.softmax(x, -1, mask) * R).sum()), [x]

    cases["softmax (masked)"] = softmax

    def layernorm(gen):
        x, g_, b = Tensor(gen.standard_normal((3, 6))), Tensor(gen.standard_normal(6)), Tensor(gen.standard_normal(6))
        R = gen.standard_normal((3, 6))
        return (lambda x, g_, b: (K.layernorm(x, g_, b) * R).sum()), [x, g_, b]

    cases["layernorm"] = layernorm
    cases["tanh"] = _unary_case(K.tanh, n((4, 3)))
    cases["sigmoid"] = _unary_case(K.sigmoid, n((4, 3)))
    cases["relu"] = _unary_case(K.relu, lambda g: _away_from_zero(g, (4, 3)))
    cases["gelu"] = _unary_case(K.gelu, n((4, 3)))
    cases["exp"] = _unary_case(K.exp, n((4, 3)))
    cases["square"] = _unary_case(K.square, n((4, 3)))
    cases["sqrt"] = _unary_case(K.sqrt, lambda g: g.uniform(0.3, 2.0, (4, 3)))
    cases["clip"] = _unary_case(lambda x: K.clip(x, -0.5, 0.5), lambda g: np.where(g.random((4, 3)) < 0.5, g.uniform(-0.4, 0.4, (4, 3)), _away_from_zero(g, (4, 3), 0.7, 1.5)))
    cases["norm"] = _unary_case(K.norm, lambda g: _away_from_zero(g, (4, 3)))
    cases["acos_sq"] = _unary_case(K.acos_sq, lambda g: g.uniform(-0.95, 0.95, (4, 3)))
    cases["sum / mean"] = _unary_case(lambda x: K.concat([x.sum(axis=0).reshape(1, 3), x.mean(axis=0).reshape(1, 3)], axis=0), n((4, 3)))
    cases["reshape / transpose"] = _unary_case(lambda x: x.reshape(2, 6).transpose(1, 0), n((4, 3)))
    cases["index (basic, fancy)"] = _unary_case(lambda x: K.concat([x[1:3], x[np.array([0, 0, 3])]], axis=0), n((4, 3)))
    cases["concat"] = _binary_case(lambda a, b: K.concat([a, b], axis=-1), n((3, 2)), n((3, 4)))
    cases["roll2d"] = _unary_case(lambda x: K.roll2d(x, (1, -2)), n((4, 5, 2)))

    def conv(gen):
        x, w, b = Tensor(gen.standard_normal((5, 4, 2))), Tensor(gen.standard_normal((3, 3, 2, 3))), Tensor(gen.standard_normal(3))
        R = gen.standard_normal((5, 4, 3))
        return (lambda x, w, b: (K.conv3x3(x, w, b) * R).sum()), [x, w, b]

    cases["conv3x3"] = conv
    cases["upsample nearest"] = _unary_case(lambda x: K.upsample_nearest(x, 2), n((3, 2, 2)))
    cases["upsample bilinear"] = _unary_case(lambda x: K.upsample_bilinear(x, 4), n((3, 2, 2)))

    def warp(gen):
        z = Tensor(gen.standard_normal((5, 5, 2)))
        # fractional parts kept clear of 0 so no sample sits on a cell edge
        frac = gen.uniform(0.2, 0.8, (5, 5, 2))
        whole = gen.integers(-1, 1, (5, 5, 2))
        rows, cols = np.meshgrid(np.arange(5), np.arange(5), indexing="ij")
        pos = np.stack([cols, rows], axis=-1) + whole + frac
        pos = np.where(pos > 3.8, pos - 1.0, np.where(pos < 0.2, pos + 1.0, pos))
        off = Tensor(pos - np.stack([cols, rows], axis=-1))
        R = gen.standard_normal((5, 5, 2))
        return (lambda z, off: (K.grid_sample(z, off) * R).sum()), [z, off]

    cases["grid_sample"] = warp

    def window_attention(gen):
        from .net import Init, WindowAttention, swmsa
        from .tensor import Rng

        attn = WindowAttention(4, 2, Init(Rng(int(gen.integers(1 << 30)))))
        for p in attn.parameters():
            p.data = gen.standard_normal(p.shape) * 0.5
        x = Tensor(gen.standard_normal((4, 4, 4)))
        R = gen.standard_normal((4, 4, 4))
        return (lambda x: (swmsa(x, attn, 2, 1) * R).sum()), [x]

    cases["shifted window attention"] = window_attention

    def masks(gen, size):
        while True:
            m = gen.random((size, size)) < 0.5
            if m.any() and not m.all():
                return m

    def l_sdm(gen):
        s = int(gen.integers(6, 10))
        pred, tgt = Tensor(gen.standard_normal((s, s))), gen.standard_normal((s, s))
        return (lambda p: L.loss_sdm(p, tgt)), [pred]

    def l_df(gen):
        s = int(gen.integers(6, 10))
        m = masks(gen, s)
        tgt = direction_field(m).as_array()
        pred = Tensor(_away_from_zero(gen, (s, s, 2), 0.3, 3.0))
        return (lambda p: L.loss_df(p, tgt)), [pred]

    def l_ds(gen):
        s = int(gen.integers(6, 10))
        m = masks(gen, s)
        fld = direction_field(m)
        pred = Tensor(gen.random((s, s)))
        return (lambda p: L.loss_ds(p, m, fld)), [pred]

    cases["loss sdm"] = l_sdm
    cases["loss df"] = l_df
    cases["loss smoothness"] = l_ds
    return cases


@dataclass
class SuiteResult:
    reports: list[GradCheckReport]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def lines(self) -> list[str]:
        return [r.line() for r in self.reports]


def flip_sign(grads: list[np.ndarray]) -> list[np.ndarray]:
    """Sentinel tamper: negate the first analytic gradient."""
    return [-grads[0]] + list(grads[1:])


def run_suite(seed: int = 0, instances: int = 10, tol: float = 1e-4, tamper=None, names=None) -> SuiteResult:
    """Check every case on ``instances`` random draws; each report keeps the worst error."""
    from .tensor import Rng

    cases = standard_cases()
    reports = []
    for idx, (name, make) in enumerate(cases.items()):
        if names is not None and name not in names:
            continue
        gen = Rng(seed, stream=idx).generator()
        worst, entries = 0.0, 0
        for _ in range(instances):
            f, inputs = make(gen)
            rep = grad_check(f, inputs, tol=tol, name=name, tamper=tamper)
            worst = max(worst, rep.max_rel_err)
            entries += rep.n_entries
        reports.append(GradCheckReport(f"{name} x{instances}", worst, tol, entries))
    return SuiteResult(reports)
