"""
Command-line experiment runner.

    python -m ttnbug run CONFIG [--set key=value ...]
    python -m ttnbug compare-trees CONFIG [--trees balanced tt] [--out table.csv]
    python -m ttnbug verify [--cases N]

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tree as tr
from .config import ConfigError, RunConfig, build_tree, format_config, load_config, parse_config, parse_operator
from .integrator import StepConfig, integrate, step_count
from .ode import OdeConfig
from .operators import KroneckerSumOp, expectation, gradient, schrodinger
from .spin import (IsingSpec, all_up_state, exact_reference, gradient_shift, ising_hamiltonian,
                   magnetization_operator)
from .ttn import max_rank, norm, param_count, random_ttn, save_ttn, to_full

COLUMNS = ["t", "norm", "energy", "magnetization", "max_rank", "param_count",
           "truncation_tail_sum", "certified_bound_flag"]


@dataclass
class RunOutput:
    columns: list
    rows: list
    summary: dict
    state: object = None


def _num(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _hamiltonian(cfg: RunConfig) -> KroneckerSumOp:
    if cfg.model == "ising":
        return ising_hamiltonian(IsingSpec(cfg.d, cfg.omega))
    return parse_operator(cfg.operator, cfg.d, cfg.n)


def _shift(cfg: RunConfig) -> float:
    if cfg.gradient_shift != "auto":
        return float(cfg.gradient_shift)
    if cfg.model == "ising":
        return gradient_shift(IsingSpec(cfg.d, cfg.omega))
    # Gershgorin-type bound: sum of spectral norms of all terms
    op = parse_operator(cfg.operator, cfg.d, cfg.n)
    return float(sum(abs(c) * np.prod([np.linalg.norm(a, 2) for a in ops.values()]) for c, ops in op.terms))


def run(cfg: RunConfig, write: bool = True) -> RunOutput:
    """
    Integrate the configured problem; returns the rows and summary and, if
    `write`, stores them at ``cfg.csv`` and ``cfg.summary``.
    """
    started = time.perf_counter()
    t = build_tree(cfg)
    h_op = _hamiltonian(cfg)
    shift = 0.0
    if cfg.mode == "schrodinger":
        rhs = schrodinger(h_op)
    else:
        shift = _shift(cfg)
        h_op = h_op.shifted(shift)
        rhs = gradient(h_op)
    if cfg.initial == "all_up":
        if cfg.n != 2:
            raise ConfigError("initial: all_up needs n = 2")
        y0 = all_up_state(t)
    else:
        y0 = random_ttn(t, cfg.initial_rank, seed=cfg.seed)
    step_cfg = StepConfig(h=cfg.h, theta=cfg.theta, rank_cap=cfg.rank_cap,
                          ode=OdeConfig(cfg.ode_method, cfg.ode_substeps), mode=cfg.integrator,
                          relative_root_tol=cfg.relative_root_tol)
    n_steps = step_count(0.0, cfg.T, cfg.h)
    spins = all(l.dim == 2 for l in tr.leaves(t))
    mag_op = magnetization_operator(cfg.d) if spins else None

    ref = None
    columns = list(COLUMNS)
    if cfg.reference == "exact_diag":
        if cfg.model != "ising" or cfg.mode != "schrodinger":
            raise ConfigError("reference: exact_diag is available for the Ising Schrodinger problem")
        ref = exact_reference(IsingSpec(cfg.d, cfg.omega), to_full(y0).reshape(-1), cfg.h, cfg.T,
                              keep_states=False)
        columns.append("reference_error")

    def observe(k, y, tail, certified):
        nrm = norm(y)
        mag = float((expectation(mag_op, y) / nrm ** 2).real) if spins else float("nan")
        row = [k * cfg.h, nrm, float(expectation(h_op, y).real), mag, max_rank(y), param_count(y),
               tail, int(certified)]
        if ref is not None:
            row.append(abs(mag - ref.magnetization[k]))
        return row

    rows = [observe(0, y0, 0.0, True)]
    certified = [True]

    def callback(k, y, rep):
        rows.append(observe(k, y, rep.truncation.tail_sum, rep.truncation.certified))
        certified.append(rep.truncation.certified)

    y, reports = integrate(y0, rhs, 0.0, cfg.T, step_cfg, callback=callback)
    wall = time.perf_counter() - started
    final = dict(zip(columns, rows[-1]))
    summary = {
        "config": asdict(cfg),
        "steps": n_steps,
        "final": final,
        "max_rank_history": [r[4] for r in rows],
        "augmented_rank_bound_ok": all(r.rank_growth_ok for r in reports),
        "all_certified": all(certified),
        "gradient_shift": shift,
        "wall_time_s": wall,
    }
    if ref is not None:
        summary["max_reference_error"] = max(r[-1] for r in rows)
    out = RunOutput(columns, rows, summary, y)
    if write:
        write_csv(out, cfg.csv)
        with open(cfg.summary, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2)
        if cfg.checkpoint:
            save_ttn(y, cfg.checkpoint)
    return out


def write_csv(out: RunOutput, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(out.columns)
        for row in out.rows:
            w.writerow([_num(v) for v in row])


def compare_trees(cfg_a: RunConfig, cfg_b: RunConfig, write: bool = False):
    """
    Run the same problem on two trees. Returns (header, rows, verdict) where each
    row is ``t, max_rank_a, param_count_a, max_rank_b, param_count_b``.
    """
    same = {k: v for k, v in asdict(cfg_a).items() if k not in ("tree", "csv", "summary", "checkpoint")}
    other = {k: v for k, v in asdict(cfg_b).items() if k not in ("tree", "csv", "summary", "checkpoint")}
    if same != other:
        diff = sorted(k for k in same if same[k] != other[k])
        if any(k in ("h", "T") for k in diff):
            raise ConfigError("time grids differ: " + ", ".join(diff))
        raise ConfigError("configurations differ in more than the tree: " + ", ".join(diff))
    out_a = run(cfg_a, write)
    out_b = run(cfg_b, write)
    if len(out_a.rows) != len(out_b.rows):
        raise ConfigError("misaligned time grids")
    header = ["t", "max_rank_a", "param_count_a", "max_rank_b", "param_count_b"]
    rows = [[ra[0], ra[4], ra[5], rb[4], rb[5]] for ra, rb in zip(out_a.rows, out_b.rows)]
    last = rows[-1]
    verdict = {
        "tree_a": cfg_a.tree, "tree_b": cfg_b.tree,
        "final_max_rank_a": last[1], "final_max_rank_b": last[3],
        "final_param_count_a": last[2], "final_param_count_b": last[4],
        "max_rank_a_le_b": last[1] <= last[3],
        "param_count_a_lt_b": last[2] < last[4],
    }
    return header, rows, verdict


# ----------------------------------------------------------------------------
# verify: a quick self-check against the dense reference

def verify(cases: int = 10, seed: int = 0, stream=sys.stdout) -> bool:
    from .dense_reference import reference_step
    from .integrator import step, truncate

    rng = np.random.default_rng(seed)
    ok_all = True

    def report(name, ok, detail):
        nonlocal ok_all
        ok_all &= bool(ok)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=stream)

    worst_step, worst_trunc, worst_start = 0.0, 0.0, 0.0
    for k in range(cases):
        d = int(rng.integers(3, 8))
        t = random_tree(d, rng)
        spec = IsingSpec(d, float(rng.uniform(0, 2)))
        x = random_ttn(t, int(rng.integers(1, 4)), seed=int(rng.integers(1 << 30)))
        h_op = ising_hamiltonian(spec)
        trace = []
        ref, _ = reference_step(x, h_op, -1j, 0.02, 1e-6, 1, trace)
        y, rep = step(x, schrodinger(h_op), 0.0, 0.02, StepConfig(h=0.02, theta=1e-6), keep_augmented=True)
        worst_step = max(worst_step, np.linalg.norm(to_full(y) - ref) / np.linalg.norm(ref))
        worst_start = max(worst_start, max(trace))
        xt, trep = truncate(rep.augmented, 1e-3)
        err = np.linalg.norm(to_full(xt) - to_full(rep.augmented))
        worst_trunc = max(worst_trunc, err / trep.bound)
    report("step matches dense reference", worst_step <= 1e-10, f"max relative difference {worst_step:.2e}")
    report("augmented start reproduces step input", worst_start <= 1e-11, f"max difference {worst_start:.2e}")
    report("truncation error within certified bound", worst_trunc <= 1.0, f"max error/bound {worst_trunc:.3f}")
    return ok_all


def random_tree(d: int, rng, n: int = 2) -> tr.Tree:
    """
    Random ordered tree over leaves 1..d with arities 2 or 3.
    """
    def build(labels):
        if len(labels) == 1:
            return tr.Leaf(labels[0], n)
        m = int(rng.integers(2, min(3, len(labels)) + 1))
        cuts = sorted(rng.choice(np.arange(1, len(labels)), size=m - 1, replace=False))
        parts = np.split(np.array(labels), cuts)
        return tr.Node(tuple(build([int(v) for v in p]) for p in parts))
    return build(list(range(1, d + 1)))


# ----------------------------------------------------------------------------

def _overrides(pairs):
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ttnbug", description="Rank-adaptive TTN time integration")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="integrate one configuration")
    p_run.add_argument("config")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    p_cmp = sub.add_parser("compare-trees", help="run one configuration on two trees")
    p_cmp.add_argument("config")
    p_cmp.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_cmp.add_argument("--trees", nargs=2, default=["balanced", "tt"])
    p_cmp.add_argument("--out", default="compare.csv")
    p_ver = sub.add_parser("verify", help="check the integrator against the dense reference")
    p_ver.add_argument("--cases", type=int, default=10)
    p_ver.add_argument("--seed", type=int, default=0)
    p_fmt = sub.add_parser("show-config", help="print a configuration with defaults filled in")
    p_fmt.add_argument("config", nargs="?")
    p_fmt.add_argument("--set", action="append", metavar="KEY=VALUE")
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config, _overrides(args.set))
            out = run(cfg)
            print(json.dumps(out.summary["final"]))
        elif args.command == "compare-trees":
            base = load_config(args.config, _overrides(args.set))
            a, b = (replace(base, tree=x, csv=_tagged(base.csv, tag), summary=_tagged(base.summary, tag))
                    for tag, x in zip("ab", args.trees))
            header, rows, verdict = compare_trees(a, b, write=True)
            with open(args.out, "w", encoding="utf-8", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([_num(v) for v in row])
            print(json.dumps(verdict))
        elif args.command == "verify":
            return 0 if verify(args.cases, args.seed) else 3
        else:
            over = _overrides(args.set)
            cfg = load_config(args.config, over) if args.config else parse_config("", over)
            sys.stdout.write(format_config(cfg))
    except (ConfigError, ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (FloatingPointError, MemoryError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    return 0


def _tagged(path: str, tag: str) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{tag}{p.suffix}"))


if __name__ == "__main__":
    sys.exit(main())
