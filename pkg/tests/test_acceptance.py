"""
Acceptance suite. Each test prints one PASS/FAIL line for its criterion; the
lines are repeated in the terminal summary.
"""
import time

import numpy as np
import pytest

from ttnbug import tree as tr
from ttnbug.dense_reference import reference_step
from ttnbug.integrator import StepConfig, integrate, step, truncate
from ttnbug.ode import OdeConfig
from ttnbug.operators import KroneckerSumOp, energy, expectation, explicit, gradient, schrodinger
from ttnbug.spin import (IsingSpec, all_up_state, exact_reference, gradient_shift, ising_hamiltonian,
                         magnetization_operator)
from ttnbug.ttn import dense_basis, orthonormalize, param_count, random_ttn, ranks, to_full

from conftest import crandn, make_random_tree, record

ISING10 = IsingSpec(10, 1.0)


def closed_form_count(x):
    """Sum of n_l r_l over leaves plus the product of dimensions of every core."""
    r = ranks(x)

    def count(t, a):
        if isinstance(t, tr.Leaf):
            return t.dim * r[a]
        return r[a] * int(np.prod([r[a + (k,)] for k in range(len(t.children))])) + \
            sum(count(c, a + (k,)) for k, c in enumerate(t.children))

    return count(x.tree, ())


class Accounting:
    """Collects rank growth and parameter count checks from every run in this module."""
    steps = 0
    growth_failures = 0
    count_failures = 0

    @classmethod
    def callback(cls, k, y, rep):
        cls.steps += 1
        cls.growth_failures += not rep.rank_growth_ok
        cls.count_failures += param_count(y) != closed_form_count(y) or rep.param_count != param_count(y)


def run(x, rhs, t_end, cfg, **kw):
    started = time.perf_counter()
    y, reps = integrate(x, rhs, 0.0, t_end, cfg, callback=Accounting.callback, **kw)
    return y, reps, time.perf_counter() - started


# ----------------------------------------------------------------------------

def test_criterion_01_truncation_bound():
    rng = np.random.default_rng(101)
    started = time.perf_counter()
    checked, worst = 0, 0.0
    for case in range(200):
        d = int(rng.integers(2, 7))
        t = make_random_tree(d, rng)
        x = random_ttn(t, int(rng.integers(1, 3)), seed=int(rng.integers(1 << 30)))
        h_op = ising_hamiltonian(IsingSpec(d, float(rng.uniform(0, 2))))
        _, rep = step(x, schrodinger(h_op), 0.0, 0.05, StepConfig(h=0.05, theta=0.0), keep_augmented=True)
        x_hat = rep.augmented
        assert max(ranks(x_hat).values()) <= 4
        full = to_full(x_hat)
        for theta in (1e-2, 1e-4, 1e-8):
            y, trep = truncate(x_hat, theta)
            bound = (np.linalg.norm(y.data) * (tr.vertex_count(t) - 1) + 1) * theta
            worst = max(worst, np.linalg.norm(to_full(y) - full) / bound)
            checked += 1
    elapsed = time.perf_counter() - started
    ok = worst <= 1.0 and elapsed < 120
    record(1, ok, f"{checked} truncations, max error/bound {worst:.3f}, {elapsed:.1f}s")
    assert ok


def _random_op(rng, t):
    dims = {l.label: l.dim for l in tr.leaves(t)}
    labels = sorted(dims)
    terms = []
    for _ in range(len(labels)):
        sites = rng.choice(labels, size=min(2, len(labels)), replace=False)
        ops = {}
        for s in sites:
            a = crandn(rng, dims[s], dims[s])
            ops[int(s)] = a + a.conj().T
        terms.append((float(rng.uniform(0.2, 1.0)), ops))
    return KroneckerSumOp(dims, terms)


def test_criteria_02_03_dense_oracle_and_start_value():
    rng = np.random.default_rng(202)
    started = time.perf_counter()
    worst_step, worst_oracle_start, worst_trace = 0.0, 0.0, 0.0
    cases = 0
    sizes = set()
    while cases < 60:
        n = int(rng.choice([2, 2, 3]))
        d = int(rng.integers(2, 13 if n == 2 else 8))
        if n ** d > 4096:
            continue
        t = make_random_tree(d, rng, n)
        x = random_ttn(t, int(rng.integers(1, 4)), seed=int(rng.integers(1 << 30)))
        op = ising_hamiltonian(IsingSpec(d, float(rng.uniform(0, 2)))) if n == 2 else _random_op(rng, t)
        schr = bool(rng.integers(2))
        rhs, pre, h = (schrodinger(op), -1j, 0.02) if schr else (gradient(op), -2.0, 0.005)
        theta = float(rng.choice([0.0, 1e-8, 1e-4]))
        starts = []
        ref, _ = reference_step(x, op, pre, h, theta, 1, starts)
        y, rep = step(x, rhs, 0.0, h, StepConfig(h=h, theta=theta, reorthonormalize=False), keep_trace=True)
        worst_step = max(worst_step, np.linalg.norm(to_full(y) - ref) / np.linalg.norm(ref))
        worst_oracle_start = max(worst_oracle_start, max(starts))
        for node in rep.trace:
            worst_trace = max(worst_trace, np.linalg.norm(dense_basis(node.y_hat_0) - dense_basis(node.y0)))
        sizes.add(n ** d)
        cases += 1
    elapsed = time.perf_counter() - started
    ok2 = worst_step <= 1e-10 and elapsed < 300
    ok3 = worst_trace <= 1e-11 and worst_oracle_start <= 1e-11
    record(2, ok2, f"{cases} cases up to {max(sizes)} entries, max relative difference {worst_step:.2e}, "
                   f"{elapsed:.1f}s")
    record(3, ok3, f"max start-value mismatch {worst_trace:.2e} (oracle {worst_oracle_start:.2e})")
    assert ok2 and ok3


# ----------------------------------------------------------------------------
# Ising d=10, balanced tree, T=5

CONSERVATION_ODE = OdeConfig("rk4", 4)


@pytest.fixture(scope="module")
def ising10_runs():
    t = tr.build_balanced_binary(2, 10)
    h_op = ising_hamiltonian(ISING10)
    x = all_up_state(t)
    out = {"e0": energy(h_op, x)}
    for mode in ("adaptive", "fixed_rank"):
        cfg = StepConfig(h=0.01, theta=1e-8, ode=CONSERVATION_ODE, mode=mode)
        out[mode] = run(x, schrodinger(h_op), 5.0, cfg)
    return out


def _drift(reps, e0):
    return (max(abs(r.norm - 1.0) for r in reps), max(abs(r.energy - e0) for r in reps))


def test_criterion_04_norm_energy_conservation(ising10_runs):
    _, reps, elapsed = ising10_runs["adaptive"]
    dn, de = _drift(reps, ising10_runs["e0"])
    ok = len(reps) == 500 and dn <= 1e-6 and de <= 1e-6 and elapsed < 600
    record(4, ok, f"norm drift {dn:.2e}, energy drift {de:.2e}, max rank {max(r.max_rank for r in reps)}, "
                  f"{elapsed:.1f}s")
    assert ok


def test_criterion_05_fixed_rank_drift(ising10_runs):
    e0 = ising10_runs["e0"]
    an, ae = _drift(ising10_runs["adaptive"][1], e0)
    fn, fe = _drift(ising10_runs["fixed_rank"][1], e0)
    ratio = max(fn / an if an else np.inf, fe / ae if ae else np.inf)
    ok = ratio >= 10
    record(5, ok, f"fixed-rank drift norm {fn:.2e} energy {fe:.2e} vs adaptive {an:.2e} {ae:.2e}, "
                  f"ratio {ratio:.2e}")
    assert ok


def _magnetization_errors(h, theta):
    t = tr.build_balanced_binary(2, 10)
    x = all_up_state(t)
    ref = exact_reference(ISING10, to_full(x).reshape(-1), h, 5.0, keep_states=False)
    cfg = StepConfig(h=h, theta=theta)
    _, reps, _ = run(x, schrodinger(ising_hamiltonian(ISING10)), 5.0, cfg,
                     observables={"m": magnetization_operator(10)})
    errors = np.array([abs(r.observables["m"].real - m) for r, m in zip(reps, ref.magnetization[1:])])
    times = np.array([r.t for r in reps])
    return times, errors


def test_criterion_06_magnetization_accuracy():
    results = {theta: _magnetization_errors(0.01, theta) for theta in (1e-4, 1e-6, 1e-8)}
    max_err = {theta: float(e.max()) for theta, (_, e) in results.items()}
    # nonincreasing as theta decreases; 5% slack for run-to-run noise once the floor is reached
    order = [max_err[1e-4], max_err[1e-6], max_err[1e-8]]
    monotone = all(b <= 1.05 * a for a, b in zip(order, order[1:]))
    times, errors = results[1e-8]
    err_t1 = float(errors[np.argmin(abs(times - 1.0))])
    _, errors_half = _magnetization_errors(0.005, 1e-8)
    factor = max_err[1e-8] / float(errors_half.max())
    ok = monotone and err_t1 < 1e-2 and factor >= 1.8
    record(6, ok, "max error " + ", ".join(f"theta={k:g}: {v:.2e}" for k, v in max_err.items())
           + f"; error at T=1 {err_t1:.2e}; h-halving factor {factor:.2f} (need 1.8)")
    assert monotone, "max error not nonincreasing in theta"
    assert err_t1 < 1e-2
    assert factor >= 1.8, f"halving h reduced the theta=1e-8 error only by {factor:.2f}"


# ----------------------------------------------------------------------------

def _with_leaves(x, fn):
    if x.is_leaf:
        return x.replace(data=fn(x.tree.label, x.data))
    return x.replace(children=tuple(_with_leaves(c, fn) for c in x.children))


def _edge_singular_values(full, t, address):
    """Singular values of the unfolding separating the leaves below `address` from the rest."""
    sub = tr.leaf_labels(tr.subtree(t, address))
    rows = [l - 1 for l in sorted(sub)]
    cols = [k for k in range(full.ndim) if k not in rows]
    m = np.transpose(full, rows + cols).reshape(int(np.prod([full.shape[k] for k in rows])), -1)
    return np.linalg.svd(m, compute_uv=False)


def test_criterion_07_exactness():
    from scipy.linalg import expm

    rng = np.random.default_rng(707)
    t = tr.build_balanced_binary(3, 6)
    base = random_ttn(t, 2, seed=7)
    gens = {}
    for l in range(1, 7):
        a = crandn(rng, 3, 3)
        gens[l] = 0.25j * (a + a.conj().T)
    c1 = crandn(rng, *base.data.shape)

    def path(s):
        return _with_leaves(base, lambda l, u: expm(s * gens[l]) @ u).replace(data=base.data + s * c1)

    def deriv(s, _a):
        y = path(s)
        out = to_full(y.replace(data=c1))
        for l in gens:
            out = out + to_full(_with_leaves(y, lambda k, u: gens[k] @ u if k == l else u))
        return out

    theta = 1e-9  # above the ODE error, far below the retained singular values
    y1, rep = step(orthonormalize(path(0.0)), explicit(deriv), 0.0, 0.1,
                   StepConfig(h=0.1, theta=theta, ode=OdeConfig("rk4", 20)))
    ref = to_full(path(0.1))
    err = np.linalg.norm(to_full(y1) - ref) / np.linalg.norm(ref)
    smallest = min(_edge_singular_values(ref, t, a)[r - 1] for a, r in ranks(base).items() if a)
    ok = err <= 1e-8 and ranks(y1) == ranks(base) and theta < smallest
    record(7, ok, f"relative error {err:.2e}, ranks kept {ranks(y1) == ranks(base)}, "
                  f"theta {theta:g} below smallest retained singular value {smallest:.2e}")
    assert ok


def test_criterion_08_gradient_dissipation():
    d = 6
    spec = IsingSpec(d, 1.0)
    h_s = ising_hamiltonian(spec).shifted(gradient_shift(spec))
    h_sq = h_s.compose(h_s)
    x = random_ttn(tr.build_balanced_binary(2, d), 2, seed=808)
    e0 = energy(h_s, x)

    _, reps, _ = run(x, gradient(h_s), 5.0, StepConfig(h=0.01, theta=0.0))
    energies = [e0] + [r.energy for r in reps]
    increases = sum(b > a for a, b in zip(energies, energies[1:]))

    excess = []
    y = x
    cfg = StepConfig(h=0.01, theta=1e-8)
    for k in range(500):
        e_prev = energy(h_s, y)
        y, rep = step(y, gradient(h_s), k * 0.01, (k + 1) * 0.01, cfg, keep_augmented=True)
        Accounting.callback(k + 1, y, rep)
        grad = [2 * np.sqrt(max(expectation(h_sq, z).real, 0.0)) for z in (y, rep.augmented)]
        allowed = max(grad) * rep.truncation.constant * cfg.theta
        excess.append(max(rep.energy - rep.augmented_energy - allowed, rep.energy - e_prev - allowed))
    ok = len(reps) == 500 and increases == 0 and max(excess) <= 1e-14
    record(8, ok, f"theta=0: {increases} energy increases in 500 steps; theta=1e-8: max excess over "
                  f"beta*c*theta {max(excess):.2e}")
    assert ok


# ----------------------------------------------------------------------------

TREE_COMPARISON_T = 1.0


def test_criterion_09_tree_comparison():
    d = 16
    h_op = ising_hamiltonian(IsingSpec(d, 1.0))
    started = time.perf_counter()
    final = {}
    for theta in (1e-5, 1e-8):
        for name, t in (("balanced", tr.build_balanced_binary(2, d)), ("mps", tr.build_tt_tree(2, d))):
            cfg = StepConfig(h=0.01, theta=theta, rank_cap=200)
            _, reps, _ = run(all_up_state(t), schrodinger(h_op), TREE_COMPARISON_T, cfg)
            final[theta, name] = (reps[-1].max_rank, reps[-1].param_count)
    elapsed = time.perf_counter() - started
    ok_rank = all(final[th, "balanced"][0] <= final[th, "mps"][0] for th in (1e-5, 1e-8))
    ok_count = final[1e-8, "balanced"][1] < final[1e-8, "mps"][1]
    ok = ok_rank and ok_count and elapsed < 1800
    record(9, ok, "; ".join(f"theta={th:g}: balanced rank {final[th, 'balanced'][0]} params "
                            f"{final[th, 'balanced'][1]}, mps rank {final[th, 'mps'][0]} params "
                            f"{final[th, 'mps'][1]}" for th in (1e-5, 1e-8)) + f"; {elapsed:.0f}s")
    assert ok


def test_criterion_10_rank_bound_and_accounting():
    # runs last in this module and sees every step taken above
    x = random_ttn(make_random_tree(7, np.random.default_rng(10)), 3, seed=10)
    ok_static = param_count(x) == closed_form_count(x)
    ok = Accounting.steps > 0 and Accounting.growth_failures == 0 and Accounting.count_failures == 0 and ok_static
    record(10, ok, f"{Accounting.steps} steps checked, {Accounting.growth_failures} rank-growth violations, "
                   f"{Accounting.count_failures} parameter-count mismatches")
    assert ok
