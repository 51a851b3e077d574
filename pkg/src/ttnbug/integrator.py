"""
Rank-adaptive Basis-Update & Galerkin integrator for tree tensor networks.

One step is augment (recursive basis update and Galerkin core update on the
augmented subspaces) followed by recursive rank truncation from the root to
the leaves.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tree as tr
from .ode import OdeConfig, solve
from .operators import (EnvBundle, LeafOperator, NodeOperator, ReducedOp, Rhs, expectation,
                        parent_context, reduce_operator, root_operator)
from .tensor_core import (matricize, mode_product, multi_mode_product, orthonormal_range, qr_thin,
                          svd_reduced, tensorize)
from .ttn import TTN, is_orthonormal, max_rank, norm, orthonormalize, param_count, ranks

MODES = ("adaptive", "fixed_rank")


@dataclass(frozen=True)
class StepConfig:
    """
    h: step size; theta: truncation tolerance; rank_cap: largest retained rank (0 = no cap).

    relative_root_tol divides the tolerance at the root by the root core's norm.
    reorthonormalize restores an orthonormal representation after truncation.
    """
    h: float = 0.01
    theta: float = 1e-8
    rank_cap: int = 0
    ode: OdeConfig = OdeConfig()
    mode: str = "adaptive"
    relative_root_tol: bool = False
    reorthonormalize: bool = True

    def __post_init__(self):
        if not np.isfinite(self.h) or self.h <= 0:
            raise ValueError("h must be positive and finite")
        if not np.isfinite(self.theta) or self.theta < 0:
            raise ValueError("theta must be nonnegative and finite")
        if int(self.rank_cap) != self.rank_cap or self.rank_cap < 0:
            raise ValueError("rank_cap must be a nonnegative integer")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class AugmentedNodeResult:
    """
    Augmented orthonormal sub-network `basis` and ``m_hat = <basis, old child>``.
    For internal nodes also the augmented cores at the end and start of the step.
    """
    basis: TTN
    m_hat: np.ndarray
    c_hat_1: Optional[np.ndarray] = None
    c_hat_0: Optional[np.ndarray] = None


@dataclass(frozen=True)
class NodeTrace:
    """
    Record of one node of an augmentation: the starting value `y0` and the
    augmented network at the start of the step `y_hat_0` (core c_hat_0).
    """
    address: tuple
    y0: TTN
    y_hat_0: TTN
    input_ranks: tuple
    augmented_ranks: tuple


# ----------------------------------------------------------------------------
# augmentation

def _new_basis(new, old, mode: str):
    if mode == "fixed_rank":
        q, _ = qr_thin(new)
        return q
    return orthonormal_range(np.hstack([new, old]))


def phi_subtree(ctx, op: ReducedOp, t0: float, t1: float, cfg: StepConfig,
                bundle: EnvBundle, trace: Optional[list] = None) -> AugmentedNodeResult:
    """
    Update and augment the basis of child ``ctx.i`` of the node in `ctx`.
    """
    child = ctx.x.children[ctx.i]
    sub = reduce_operator(op, ctx, bundle)
    s_t = ctx.r
    if child.is_leaf:
        u0 = child.data
        y1 = solve(LeafOperator(sub), s_t @ u0.T, t0, t1, cfg.ode)
        u_hat = _new_basis(y1.T, u0, cfg.mode)
        return AugmentedNodeResult(child.replace(data=u_hat), u_hat.conj().T @ u0)
    y0 = child.replace(data=mode_product(child.data, 0, s_t))
    x_hat, c_hat_0, m_hats = step_augment(y0, sub, t0, t1, cfg, bundle, trace)
    q_hat = _new_basis(matricize(x_hat.data, 0).T, matricize(c_hat_0, 0).T, cfg.mode)
    core = tensorize(q_hat.T, 0, (q_hat.shape[1],) + x_hat.data.shape[1:])
    old = multi_mode_product(child.data, {k + 1: m for k, m in enumerate(m_hats)})
    m_hat = matricize(core, 0).conj() @ matricize(old, 0).T
    return AugmentedNodeResult(x_hat.replace(data=core), m_hat, x_hat.data, c_hat_0)


def step_augment(y0: TTN, op: ReducedOp, t0: float, t1: float, cfg: StepConfig,
                 bundle: Optional[EnvBundle] = None, trace: Optional[list] = None):
    """
    Rank-augmenting step on the subtree `y0` (children orthonormal, mode 0 arbitrary).

    Returns the augmented network at `t1`, the augmented core at `t0`, and the
    list of child matrices ``M_hat_i``.
    """
    if y0.is_leaf:
        raise ValueError("augmentation starts at an internal node")
    bundle = EnvBundle() if bundle is None else bundle
    results = [phi_subtree(parent_context(y0, i), op, t0, t1, cfg, bundle, trace)
               for i in range(len(y0.children))]
    m_hats = [r.m_hat for r in results]
    c_hat_0 = multi_mode_product(y0.data, {k + 1: m for k, m in enumerate(m_hats)})
    children = tuple(r.basis for r in results)
    c_hat_1 = solve(NodeOperator(op, list(children), bundle), c_hat_0, t0, t1, cfg.ode)
    if trace is not None:
        trace.append(NodeTrace(op.address, y0, y0.replace(data=c_hat_0, children=children),
                               y0.data.shape[1:], c_hat_0.shape[1:]))
    return y0.replace(data=c_hat_1, children=children), c_hat_0, m_hats


# ----------------------------------------------------------------------------
# truncation

@dataclass
class TruncationReport:
    """
    Retained ranks and discarded singular-value tails per child address, the
    theta used, and the certified error bound (valid unless `capped`).
    """
    theta: float
    ranks: dict = field(default_factory=dict)
    tails: dict = field(default_factory=dict)
    capped: bool = False
    root_norm: float = 0.0
    vertices: int = 0
    relative_root: bool = False

    @property
    def constant(self) -> float:
        if self.relative_root:
            return float(self.vertices)
        return self.root_norm * (self.vertices - 1) + 1.0

    @property
    def bound(self) -> float:
        return self.constant * self.theta

    @property
    def certified(self) -> bool:
        return not self.capped

    @property
    def tail_sum(self) -> float:
        return float(sum(self.tails.values()))


def retained_rank(s, theta: float, cap: int = 0):
    """
    Smallest rank whose discarded tail has l2 norm at most `theta` (at least 1),
    then limited by `cap`. Returns (rank, tail, capped).
    """
    s = np.asarray(s, dtype=float)
    tails = np.sqrt(np.cumsum((s ** 2)[::-1])[::-1])  # tails[k] = ||s[k:]||
    tails = np.append(tails, 0.0)
    r = int(np.argmax(tails <= theta))
    r = max(r, 1)
    capped = False
    if cap and r > cap:
        r, capped = cap, True
    r = min(r, len(s))
    return r, float(tails[r]), capped


def _truncate_node(x: TTN, theta: float, cap: int, report: TruncationReport, address: tuple,
                   targets: Optional[dict], root_theta: Optional[float] = None) -> TTN:
    c = x.data
    th = theta if root_theta is None else root_theta
    children = []
    projections = {}
    for i, child in enumerate(x.children):
        p, s, _ = svd_reduced(matricize(c, i + 1))
        a = address + (i,)
        if targets is not None:
            r = max(1, min(targets[a], len(s)))
            tail, capped = float(np.linalg.norm(s[r:])), False
        else:
            r, tail, capped = retained_rank(s, th, cap)
        report.ranks[a] = r
        report.tails[a] = tail
        report.capped |= capped
        p = p[:, :r]
        projections[i + 1] = p.conj().T
        if child.is_leaf:
            children.append(child.replace(data=child.data @ p))
        else:
            sub = child.replace(data=mode_product(child.data, 0, p.T))
            children.append(_truncate_node(sub, theta, cap, report, a, targets))
    return x.replace(data=multi_mode_product(c, projections), children=tuple(children))


def truncate(x_hat: TTN, theta: float, rank_cap: int = 0, relative_root: bool = False,
             target_ranks: Optional[dict] = None):
    """
    Recursive rank truncation of an orthonormal network, root to leaves.

    With `target_ranks` (address -> rank) the listed ranks are kept instead of
    applying the tolerance rule. Returns (network, TruncationReport); the
    output is not re-orthonormalized.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    report = TruncationReport(theta=theta, vertices=tr.vertex_count(x_hat.tree), relative_root=relative_root)
    if x_hat.is_leaf:
        report.root_norm = float(np.linalg.norm(x_hat.data))
        return x_hat, report
    root_theta = None
    if relative_root:
        nc = np.linalg.norm(x_hat.data)
        root_theta = theta / nc if nc > 0 else theta
    out = _truncate_node(x_hat, theta, rank_cap, report, (), target_ranks, root_theta)
    report.root_norm = float(np.linalg.norm(out.data))
    return out, report


# ----------------------------------------------------------------------------
# full step and time loop

@dataclass
class StepReport:
    t: float
    norm: float
    energy: Optional[float]
    observables: dict
    max_rank: int
    param_count: int
    ranks: dict
    augmented_ranks: dict
    input_ranks: dict
    truncation: TruncationReport
    augmented_norm: float
    augmented_energy: Optional[float]
    augmented: Optional[TTN] = None
    trace: Optional[list] = None

    @property
    def rank_growth_ok(self) -> bool:
        return all(self.augmented_ranks[a] <= 2 * self.input_ranks[a] for a in self.input_ranks)


def _energy(rhs: Rhs, x: TTN):
    if rhs.op is None:
        return None
    return float(expectation(rhs.op, x).real)


def step(y0: TTN, rhs: Rhs, t0: float, t1: float, cfg: StepConfig, observables: Optional[dict] = None,
         keep_augmented: bool = False, keep_trace: bool = False):
    """
    One step ``t0 -> t1`` from an orthonormal network. Returns (network, StepReport).
    """
    if y0.is_leaf:
        raise ValueError("the network needs at least one internal node")
    trace = [] if keep_trace else None
    op = root_operator(rhs, y0.tree)
    bundle = EnvBundle()
    x_hat, _, _ = step_augment(y0, op, t0, t1, cfg, bundle, trace)
    old = ranks(y0)
    aug = ranks(x_hat)
    if cfg.mode == "fixed_rank":
        y1, rep = truncate(x_hat, 0.0, 0, target_ranks=old)
    else:
        y1, rep = truncate(x_hat, cfg.theta, cfg.rank_cap, cfg.relative_root_tol)
    if cfg.reorthonormalize:
        y1 = orthonormalize(y1)
    obs = {name: complex(expectation(o, y1)) / norm(y1) ** 2 for name, o in (observables or {}).items()}
    report = StepReport(
        t=t1, norm=norm(y1), energy=_energy(rhs, y1), observables=obs,
        max_rank=max_rank(y1), param_count=param_count(y1), ranks=ranks(y1),
        augmented_ranks=aug, input_ranks=old, truncation=rep,
        augmented_norm=norm(x_hat), augmented_energy=_energy(rhs, x_hat),
        augmented=x_hat if keep_augmented else None, trace=trace)
    return y1, report


def step_count(t0: float, t_end: float, h: float) -> int:
    n = (t_end - t0) / h
    k = int(round(n))
    if k < 0 or abs(n - k) > 1e-9 * max(1.0, abs(n)):
        raise ValueError(f"interval [{t0}, {t_end}] is not a whole number of steps of size {h}")
    return k


def integrate(y0: TTN, rhs: Rhs, t0: float, t_end: float, cfg: StepConfig,
              observables: Optional[dict] = None, callback=None, keep_augmented: bool = False):
    """
    March from `t0` to `t_end` with steps of size `cfg.h`.

    Returns (final network, list of StepReport). `callback(k, state, report)` is
    called after every step. Numerical failures are re-raised with the step index.
    """
    n = step_count(t0, t_end, cfg.h)
    y = y0 if is_orthonormal(y0) else orthonormalize(y0)
    reports = []
    for k in range(n):
        ta, tb = t0 + k * cfg.h, t0 + (k + 1) * cfg.h
        try:
            y, rep = step(y, rhs, ta, tb, cfg, observables, keep_augmented)
        except FloatingPointError as err:
            raise FloatingPointError(f"step {k + 1} (t={tb:g}): {err}") from err
        if not np.isfinite(rep.norm):
            raise FloatingPointError(f"step {k + 1} (t={tb:g}): non-finite norm")
        reports.append(rep)
        if callback is not None:
            callback(k + 1, y, rep)
    return y, reports

