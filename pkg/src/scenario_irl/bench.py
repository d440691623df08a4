"""Config-driven truncated-LQG experiments: sweeps, confidence estimates, CSV and SVG output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import binomtest

from .basis import basis_from_spec, default_joint_quadrature, default_state_quadrature, normalization_row
from .complexity import (CertificateInputs, certificate_table, scenario_mass, scenario_size_campi,
                         scenario_size_exact, theta_thresholds)
from .forward import (DiscreteModel, Grid, certify_eps_optimality, lqg_true_cost, value_iteration)
from .inverse_lp import (LinearCost, MembershipTable, ResidualEvaluator, ScenarioStream, assemble_sip,
                         assemble_sip_sampled, check_membership, compute_reference_pairings, solve_lp,
                         solve_lp_streaming)
from .mdp_core import LQGParams, next_state_pools, rollout_batch, truncated_lqg_model

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    # truncated LQG model
    A: float = -1.5
    B: float = 1.0
    Q: float = 1.0
    R: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0
    L: float = 10.0
    gamma: float = 0.9
    # bases
    theta: float = 1.0
    cost_basis: object = "lqg_poly_c9"
    value_basis: object = "lqg_poly_u3"
    constraint_style: str = "l1"
    # sweep
    mode: str = "known"  # known | sampled
    N: list = field(default_factory=lambda: [100, 1000])
    eps: list = field(default_factory=lambda: [1e-6])
    delta: float = 0.1
    campi_eps: float = 0.99
    k_constant: float = 1.0
    sampled_pairs: list = field(default_factory=list)  # [N, k] or [N, k, m, n]
    horizon: Optional[int] = None
    repetitions: int = 100
    seed: int = 0
    workers: int = 1
    materialize_limit: int = 20000
    # checks
    grid_step: float = 0.05
    reference_method: str = "auto"  # auto | nystrom | monte-carlo
    reference_tol: float = 5e-4
    n_state: int = 201
    n_action: int = 201
    vi_tol: float = 1e-10
    certify: bool = True
    # output
    output_dir: str = "results"
    variation_delta: float = 1e-7  # reported only; no documented role
    name: str = "experiment"

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.mode not in ("known", "sampled"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.mode == "sampled" and not self.sampled_pairs:
            raise ValueError("sampled mode needs sampled_pairs")
        if any(e < 0 for e in self.eps):
            raise ValueError("probe eps must be nonnegative")
        # resolve basis names early so a bad name fails at load time
        self.bases()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        flat = {}
        for key, val in d.items():
            if isinstance(val, dict):
                flat.update(val)
            else:
                flat[key] = val
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(flat) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**flat)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with path.open("rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data)

    def paper_scale(self) -> "ExperimentConfig":
        return dataclasses.replace(self, gamma=0.99, repetitions=1000)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def model(self):
        p = LQGParams(self.A, self.B, self.Q, self.R, self.mu, self.sigma, self.L)
        return truncated_lqg_model(p, self.gamma)

    def bases(self):
        m = self.model()
        return (basis_from_spec(self.cost_basis, m, self.theta, "cost"),
                basis_from_spec(self.value_basis, m, self.theta, "value"))

    def certificate_inputs(self, epsilon: float, delta: Optional[float] = None) -> CertificateInputs:
        m = self.model()
        C, U = self.bases()
        L_c = max(self.Q, self.R) * 2 * self.L
        return CertificateInputs(len(C), len(U), self.theta, self.gamma, L_c, U.L_max, m.lip_P, C.K_inf,
                                 U.K_inf, m.dx + m.da, self.L, epsilon, self.delta if delta is None else delta,
                                 self.k_constant)

    def campi_N(self, epsilon: Optional[float] = None, delta: Optional[float] = None) -> int:
        inp = self.certificate_inputs(self.campi_eps if epsilon is None else epsilon, delta)
        g = scenario_mass(inp)
        return scenario_size_campi(inp.n_c + inp.n_u + 1, g, inp.delta)

    def resolved_N(self) -> list:
        out = []
        for n in self.N:
            out.append(self.campi_N() if n == "campi" else int(n))
        return sorted(set(out))

    def probe_eps(self) -> list:
        eps = sorted(set(float(e) for e in self.eps))
        if "campi" in self.N and self.campi_eps not in eps:
            eps.append(float(self.campi_eps))
        return sorted(eps)

    def settings(self) -> list:
        if self.mode == "known":
            return [(N, 0, 0, 0) for N in self.resolved_N()]
        out = []
        for pair in self.sampled_pairs:
            N, k = int(pair[0]), int(pair[1])
            m = int(pair[2]) if len(pair) > 2 else k
            n = int(pair[3]) if len(pair) > 3 else k
            out.append((N, k, m, n))
        return out


# ---------------------------------------------------------------------------
# shared context


@dataclass
class Context:
    config: ExperimentConfig
    model: object
    cost_set: object
    value_set: object
    state_quad: object
    joint_quad: object
    norm_row: np.ndarray
    disc: DiscreteModel
    expert_grid: object
    expert: object
    reference: object
    table: MembershipTable
    evaluator: ResidualEvaluator
    horizon: int
    build_seconds: float = 0.0


def _child(ss: np.random.SeedSequence, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(keys))


def build_context(cfg: ExperimentConfig) -> Context:
    t0 = time.perf_counter()
    model = cfg.model()
    C, U = cfg.bases()
    sq = default_state_quadrature(model)
    jq = default_joint_quadrature(model)
    root = np.random.SeedSequence(cfg.seed)
    if cfg.constraint_style == "l1":
        thr = theta_thresholds(cfg.gamma, model.dx + model.da, jq.weights.sum())["leb"]
        if cfg.theta <= thr:
            raise ValueError(f"theta={cfg.theta} must exceed {thr:.6g}")
    norm = normalization_row(model, C, U, jq, sq)
    grid = Grid.uniform(model, cfg.n_state, cfg.n_action)
    disc = DiscreteModel.build(model, grid)
    vi = value_iteration(model, lqg_true_cost(model), grid, cfg.vi_tol, disc=disc)
    expert = vi.policy.as_policy()
    ref = compute_reference_pairings(model, expert, C, U, cfg.reference_tol, _child(root, 0), sq,
                                     method=cfg.reference_method)
    table = MembershipTable.build(model, C, U, cfg.grid_step, sq)
    H = cfg.horizon if cfg.horizon is not None else int(math.ceil(math.log(2 / 0.1) / (1 - cfg.gamma)))
    ctx = Context(cfg, model, C, U, sq, jq, norm, disc, vi.policy, expert, ref, table,
                  ResidualEvaluator(model, C, U, sq), H)
    ctx.build_seconds = time.perf_counter() - t0
    return ctx


# ---------------------------------------------------------------------------
# sweeps


RECORD_FIELDS = ["mode", "N", "k", "m", "n", "rep", "status", "eps_tilde", "l1_alpha", "l1_beta",
                 "worst_pointwise", "pairing_value", "L_row", "gap", "expert_value", "optimal_value"]


@dataclass
class SweepResult:
    config: ExperimentConfig
    settings: list
    probe_eps: list
    records: list = field(default_factory=list)
    alphas: dict = field(default_factory=dict)  # setting -> (R, n_c) recovered weights
    summaries: dict = field(default_factory=dict)  # setting -> averaged-cost values
    context_info: dict = field(default_factory=dict)

    def columns(self) -> list:
        cols = list(RECORD_FIELDS)
        cols += [f"member@{e:g}" for e in self.probe_eps]
        cols += [f"certified@{e:g}" for e in self.probe_eps]
        return cols + ["wall_time"]

    def for_setting(self, setting) -> list:
        N, k = setting[0], setting[1] if len(setting) > 1 else 0
        return [r for r in self.records if r["N"] == N and r["k"] == k]


def _evaluate(ctx: Context, sol, probe_eps, setting, rep, t0) -> tuple:
    cfg = ctx.config
    N, k, m, n = setting
    rec = {"mode": cfg.mode, "N": N, "k": k, "m": m, "n": n, "rep": rep, "status": sol.status}
    nan = float("nan")
    if not sol.optimal:
        rec.update({f: nan for f in RECORD_FIELDS if f not in rec})
        for e in probe_eps:
            rec[f"member@{e:g}"] = 0
            rec[f"certified@{e:g}"] = 0
        rec["wall_time"] = time.perf_counter() - t0
        return rec, np.full(len(ctx.cost_set), np.nan)
    cost = LinearCost(sol.alpha, ctx.cost_set, sol.instance_hash)
    base = check_membership(ctx.model, cost, sol.beta, sol.eps_tilde, cfg.grid_step, ctx.reference,
                            ctx.state_quad, ctx.value_set, ctx.table)
    rec.update({"eps_tilde": sol.eps_tilde, "l1_alpha": float(np.abs(sol.alpha).sum()),
                "l1_beta": float(np.abs(sol.beta).sum()), "worst_pointwise": base["worst_pointwise"],
                "pairing_value": base["pairing_value"], "L_row": base["L_row"]})
    cert = None
    if cfg.certify:
        cert = certify_eps_optimality(ctx.model, cost, ctx.expert_grid, sol.eps_tilde, ctx.disc,
                                      vi_tol=cfg.vi_tol, num_tol=1e-10)
        rec.update({"gap": cert.gap, "expert_value": cert.expert_value, "optimal_value": cert.optimal_value})
    else:
        rec.update({"gap": nan, "expert_value": nan, "optimal_value": nan})
    g = cfg.gamma
    tol = 1e-9
    for e in probe_eps:
        level = sol.eps_tilde + e
        member = base["pairing_value"] <= level + tol and base["worst_pointwise"] >= -level - tol
        rec[f"member@{e:g}"] = int(member)
        if cert is not None:
            rec[f"certified@{e:g}"] = int(cert.gap <= (2 - g) / (1 - g) * level + cert.tolerance)
        else:
            rec[f"certified@{e:g}"] = 0
    rec["wall_time"] = time.perf_counter() - t0
    return rec, sol.alpha


def _run_known_rep(ctx: Context, rep: int, rep_ss) -> list:
    cfg = ctx.config
    settings = cfg.settings()
    probe = cfg.probe_eps()
    stream = ScenarioStream(ctx.model, _child(rep_ss, 0))
    small = [s for s in settings if s[0] <= cfg.materialize_limit]
    n_mat = max((s[0] for s in small), default=0)
    full = None
    if n_mat:
        pts = stream.points(0, n_mat)
        full = assemble_sip(ctx.model, ctx.cost_set, ctx.value_set, ctx.reference, pts, ctx.joint_quad,
                            ctx.state_quad, cfg.constraint_style, ctx.norm_row)
    template = assemble_sip(ctx.model, ctx.cost_set, ctx.value_set, ctx.reference, np.zeros((0, 2)),
                            ctx.joint_quad, ctx.state_quad, cfg.constraint_style, ctx.norm_row)
    out = []
    for s in settings:
        t0 = time.perf_counter()
        try:
            if s[0] <= cfg.materialize_limit:
                sol = solve_lp(full.prefix(s[0]))
            else:
                sol = solve_lp_streaming(template, ctx.evaluator, stream, s[0])
            out.append(_evaluate(ctx, sol, probe, s, rep, t0))
        except Exception as exc:  # recorded, never fatal for the sweep
            log.warning("cell N=%s rep=%s failed: %s", s[0], rep, exc)
            out.append(_failed(ctx, s, rep, probe, t0, str(exc)))
    return out


def _run_sampled_rep(ctx: Context, rep: int, rep_ss) -> list:
    """Sample-based cells of one repetition on nested draws.

    Trajectories, initial states, scenario points and next-state pools are
    drawn once at the largest sizes; each cell uses prefixes, as the
    known-model cells use prefixes of one scenario stream.
    """
    cfg = ctx.config
    probe = cfg.probe_eps()
    settings = cfg.settings()
    N_max = max(s[0] for s in settings)
    k_max = max(s[1] for s in settings)
    m_max = max(s[2] for s in settings)
    n_max = max(s[3] for s in settings)
    full = rollout_batch(ctx.model, ctx.expert, m_max, ctx.horizon, _child(rep_ss, 0), n_initial=n_max)
    pts = ScenarioStream(ctx.model, _child(rep_ss, 1)).points(0, N_max)
    pools = next_state_pools(ctx.model, pts, k_max, np.random.Generator(np.random.PCG64(_child(rep_ss, 2))))
    out = []
    for s in settings:
        N, k, m, n = s
        t0 = time.perf_counter()
        try:
            batch = dataclasses.replace(full, states=full.states[:m], actions=full.actions[:m],
                                        initial_samples=full.initial_samples[:n])
            inst = assemble_sip_sampled(batch, ctx.cost_set, ctx.value_set, pts[:N], pools[:N, :k],
                                        ctx.joint_quad, cfg.gamma, cfg.constraint_style)
            sol = solve_lp(inst)
            out.append(_evaluate(ctx, sol, probe, s, rep, t0))
        except Exception as exc:
            log.warning("cell N=%s k=%s rep=%s failed: %s", N, k, rep, exc)
            out.append(_failed(ctx, s, rep, probe, t0, str(exc)))
    return out


def _failed(ctx, s, rep, probe, t0, msg):
    N, k, m, n = s
    rec = {f: float("nan") for f in RECORD_FIELDS}
    rec.update({"mode": ctx.config.mode, "N": N, "k": k, "m": m, "n": n, "rep": rep, "status": "error"})
    for e in probe:
        rec[f"member@{e:g}"] = 0
        rec[f"certified@{e:g}"] = 0
    rec["wall_time"] = time.perf_counter() - t0
    return rec, np.full(len(ctx.cost_set), np.nan)


_CTX: Optional[Context] = None


def _rep_worker(rep: int):
    ctx = _CTX
    rep_ss = _child(np.random.SeedSequence(ctx.config.seed), 1, rep)
    if ctx.config.mode == "known":
        return _run_known_rep(ctx, rep, rep_ss)
    return _run_sampled_rep(ctx, rep, rep_ss)


def run_sweep(config: ExperimentConfig, context: Optional[Context] = None, progress=None) -> SweepResult:
    """Run every (setting, repetition) cell.

    Repetition ``r`` draws all of its randomness from child ``(1, r)`` of the
    config seed, so results do not depend on ``workers``.
    """
    global _CTX
    ctx = context or build_context(config)
    if ctx.config is not config:
        ctx = dataclasses.replace(ctx, config=config)
    _CTX = ctx
    settings = config.settings()
    probe = config.probe_eps()
    result = SweepResult(config, settings, probe)
    reps = range(config.repetitions)
    if config.workers > 1:
        import multiprocessing as mp

        with ProcessPoolExecutor(config.workers, mp_context=mp.get_context("fork")) as pool:
            per_rep = list(pool.map(_rep_worker, reps))
    else:
        per_rep = []
        for r in reps:
            per_rep.append(_rep_worker(r))
            if progress:
                progress(r + 1, config.repetitions)
    alphas = {s: [] for s in settings}
    for rep_out in per_rep:
        for (rec, alpha), s in zip(rep_out, settings):
            result.records.append(rec)
            alphas[s].append(alpha)
    result.alphas = {s: np.array(v) for s, v in alphas.items()}
    result.records.sort(key=lambda r: (r["N"], r["k"], r["rep"]))
    if config.certify:
        result.summaries = averaged_cost_values(ctx, result)
    result.context_info = {"build_seconds": ctx.build_seconds, "reference_occupancy": ctx.reference.occupancy.tolist(),
                           "reference_half_width": ctx.reference.occupancy_half_width.tolist(),
                           "reference_method": ctx.reference.source,
                           "variation_delta": config.variation_delta, "horizon": ctx.horizon}
    return result


def averaged_cost_values(ctx: Context, result: SweepResult) -> dict:
    """Expert and optimal values under the repetition-averaged recovered cost."""
    out = {}
    for s, A in result.alphas.items():
        ok = A[np.all(np.isfinite(A), axis=1)] if A.size else A
        if not len(ok):
            continue
        cost = LinearCost(ok.mean(axis=0), ctx.cost_set, "average")
        cert = certify_eps_optimality(ctx.model, cost, ctx.expert_grid, 0.0, ctx.disc,
                                      vi_tol=ctx.config.vi_tol, num_tol=1e-10)
        out[s] = {"expert_value": cert.expert_value, "optimal_value": cert.optimal_value, "gap": cert.gap}
    return out


# ---------------------------------------------------------------------------
# confidence


def wilson_interval(successes: int, trials: int, level: float = 0.95):
    if trials < 1:
        raise ValueError("no repetitions")
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def empirical_confidence(result, setting, eps: float, kind: str = "member") -> dict:
    """Fraction of repetitions whose cost passed at ``eps_tilde + eps``, with a Wilson 95% interval.

    ``result`` is a :class:`SweepResult` or a list of record dicts (as read
    back from ``records.csv``); ``setting`` is ``N`` or ``(N, k)``.
    """
    records = result.records if isinstance(result, SweepResult) else result
    N, k = (setting, 0) if np.ndim(setting) == 0 else (setting[0], setting[1])
    rows = [r for r in records if int(r["N"]) == int(N) and int(r["k"]) == int(k)]
    if not rows:
        raise ValueError(f"no records for setting N={N}, k={k}")
    key = f"{kind}@{eps:g}"
    if key not in rows[0]:
        raise KeyError(f"eps={eps:g} was not probed")
    hits = sum(int(float(r[key])) for r in rows)
    lo, hi = wilson_interval(hits, len(rows))
    return {"N": int(N), "k": int(k), "eps": eps, "fraction": hits / len(rows), "successes": hits,
            "repetitions": len(rows), "wilson_low": lo, "wilson_high": hi}


def read_records(path) -> list:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_records(result: SweepResult, path) -> Path:
    path = Path(path)
    cols = result.columns()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in result.records:
            w.writerow([_fmt(r.get(c, "")) for c in cols])
    return path


def aggregate(result: SweepResult) -> list:
    rows = []
    for s in result.settings:
        recs = result.for_setting(s)
        if not recs:
            continue
        et = np.array([r["eps_tilde"] for r in recs], dtype=float)
        gaps = np.array([r["gap"] for r in recs], dtype=float)
        row = {"N": s[0], "k": s[1], "m": s[2], "n": s[3], "repetitions": len(recs),
               "optimal": sum(r["status"] == "optimal" for r in recs),
               "eps_tilde_mean": float(np.nanmean(et)) if np.isfinite(et).any() else float("nan"),
               "eps_tilde_std": float(np.nanstd(et)) if np.isfinite(et).any() else float("nan"),
               "gap_mean": float(np.nanmean(gaps)) if np.isfinite(gaps).any() else float("nan")}
        for e in result.probe_eps:
            c = empirical_confidence(result, (s[0], s[1]), e)
            row[f"confidence@{e:g}"] = c["fraction"]
            row[f"wilson_low@{e:g}"] = c["wilson_low"]
            row[f"wilson_high@{e:g}"] = c["wilson_high"]
            row[f"certified_rate@{e:g}"] = empirical_confidence(result, (s[0], s[1]), e, "certified")["fraction"]
        summ = result.summaries.get(s)
        if summ:
            row.update({"avg_cost_expert_value": summ["expert_value"],
                        "avg_cost_optimal_value": summ["optimal_value"]})
        rows.append(row)
    return rows


def _aggregate_columns(result: SweepResult) -> list:
    cols = ["N", "k", "m", "n", "repetitions", "optimal", "eps_tilde_mean", "eps_tilde_std", "gap_mean"]
    for e in result.probe_eps:
        cols += [f"confidence@{e:g}", f"wilson_low@{e:g}", f"wilson_high@{e:g}", f"certified_rate@{e:g}"]
    return cols + ["avg_cost_expert_value", "avg_cost_optimal_value"]


def theory_curves(config: ExperimentConfig, eps_values=None, deltas=(0.01, 0.05, 0.1)) -> dict:
    """Scenario bound ``N(n_c + n_u + 1, g(eps / L_Lambda), delta)`` (closed form) per delta."""
    eps_values = np.geomspace(0.05, 0.99, 12) if eps_values is None else np.asarray(eps_values)
    out = {}
    for d in deltas:
        vals = []
        for e in eps_values:
            inp = config.certificate_inputs(float(e), d)
            vals.append(scenario_size_campi(inp.n_c + inp.n_u + 1, scenario_mass(inp), d))
        out[d] = (eps_values, np.array(vals, dtype=float))
    return out


def emit_outputs(result: SweepResult, config: ExperimentConfig, outdir=None) -> list:
    """Write ``records.csv``, ``aggregate.csv``, ``summary.json`` and SVG plots."""
    outdir = Path(outdir or config.output_dir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {outdir}: {exc}") from exc
    files = [write_records(result, outdir / "records.csv")]
    agg = aggregate(result)
    cols = _aggregate_columns(result)
    with (outdir / "aggregate.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in agg:
            w.writerow([_fmt(row.get(c, "")) for c in cols])
    files.append(outdir / "aggregate.csv")
    summary = {"config": config.to_dict(), "settings": [list(s) for s in result.settings],
               "probe_eps": result.probe_eps, "context": result.context_info}
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str))
    files.append(outdir / "summary.json")
    if result.records:
        files += _plots(result, config, agg, outdir)
    return files


def _plots(result, config, agg, outdir) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "scenario-irl"
    meta = {"Date": None, "Creator": "scenario_irl"}
    files = []
    xs = np.array([r["N"] for r in agg], dtype=float)
    label = "N" if config.mode == "known" else "N (k = m = n varies)"

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for e in result.probe_eps:
        ax.plot(xs, [r[f"confidence@{e:g}"] for r in agg], marker="o", label=f"eps={e:g}")
    ax.axhline(1 - config.delta, color="grey", ls="--", lw=0.8)
    ax.set_xscale("log")
    ax.set_xlabel(label)
    ax.set_ylabel("empirical confidence")
    ax.legend(fontsize=7)
    fig.tight_layout()
    files.append(outdir / "confidence_vs_N.svg")
    fig.savefig(files[-1], metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    mean = np.array([r["eps_tilde_mean"] for r in agg])
    std = np.array([r["eps_tilde_std"] for r in agg])
    ax.plot(xs, mean, marker="o")
    ax.fill_between(xs, mean - std, mean + std, alpha=0.3)
    ax.set_xscale("log")
    ax.set_xlabel(label)
    ax.set_ylabel("mean optimal eps")
    fig.tight_layout()
    files.append(outdir / "eps_tilde_vs_N.svg")
    fig.savefig(files[-1], metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for d, (ev, nv) in theory_curves(config).items():
        ax.plot(ev, nv, label=f"delta={d:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("scenario bound N")
    ax.legend(fontsize=7)
    fig.tight_layout()
    files.append(outdir / "theory_N_vs_eps.svg")
    fig.savefig(files[-1], metadata=meta)
    plt.close(fig)

    if any("avg_cost_expert_value" in r for r in agg):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(xs, [r.get("avg_cost_expert_value", np.nan) for r in agg], marker="o", label="expert")
        ax.plot(xs, [r.get("avg_cost_optimal_value", np.nan) for r in agg], marker="s", label="optimal")
        ax.set_xscale("log")
        ax.set_xlabel(label)
        ax.set_ylabel("value under averaged recovered cost")
        ax.legend(fontsize=7)
        fig.tight_layout()
        files.append(outdir / "value_gap.svg")
        fig.savefig(files[-1], metadata=meta)
        plt.close(fig)
    return files


def certify_report(config: ExperimentConfig, epsilon: Optional[float] = None) -> dict:
    """All certificate constants and sample sizes for a config."""
    eps = config.campi_eps if epsilon is None else epsilon
    inp = config.certificate_inputs(eps)
    model = config.model()
    leb = float(np.prod(model.hi - model.lo))
    out = certificate_table(inp, leb)
    out["variation_delta"] = config.variation_delta
    return out
