"""Closed-loop simulation of the plant/optimizer interconnection and strategy sweeps.

Per step ``t`` the loop applies, in order: ``u_t`` as the first block of the
optimizer state, one plant step (full two-timescale plant, or the reduced
plant for the benchmark strategies), then the optimizer update on the new
state after a receding-horizon warm-start shift. The prediction model inside
the optimizer is always the reduced map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .plant import PlantModel, equilibrium_extra, _as_vector
from .ocp import (
    OcpSpec,
    SolverConfig,
    first_input,
    horizon_for_delta,
    make_ocp_spec,
    solve_optimal,
    solver_map,
    warm_start_shift,
)

__all__ = [
    "Strategy",
    "STRATEGIES",
    "SimConfig",
    "SimTrace",
    "RateFit",
    "simulate",
    "fit_rate",
    "compare_strategies",
    "write_trace_csv",
    "write_comparison_csv",
    "write_gnuplot_script",
    "TRACE_HEADER",
    "COMPARISON_HEADER",
]

TRACE_HEADER = "step,time_s,theta,omega,current,u,err_norm,err_theta,stage_cost,solver_iters,pg_norm"
COMPARISON_HEADER = "delta,plant,solver,final_err_theta,rate_per_s,r2,mean_iters,diverged"


@dataclass(frozen=True)
class Strategy:
    """Plant/solver pairing for one closed-loop run.

    The three benchmark settings are: the proposed scheme drives the full
    two-timescale plant with the fixed-budget solver; the two reference
    settings drive the reduced plant (so the prediction model is exact)
    with the fixed-budget and the solve-to-tolerance solver respectively.
    """

    plant_kind: str   # "full_order" | "reduced_order"
    solver_kind: str  # "suboptimal" | "optimal"

    def __post_init__(self):
        if self.plant_kind not in ("full_order", "reduced_order"):
            raise ValueError(f"plant_kind must be 'full_order' or 'reduced_order', got {self.plant_kind!r}")
        if self.solver_kind not in ("suboptimal", "optimal"):
            raise ValueError(f"solver_kind must be 'suboptimal' or 'optimal', got {self.solver_kind!r}")

    @property
    def label(self) -> str:
        return f"{'full' if self.plant_kind == 'full_order' else 'reduced'}/{self.solver_kind}"


# Sweep order: proposed, then the two reduced-plant benchmarks.
STRATEGIES: dict[str, Strategy] = {
    "proposed": Strategy("full_order", "suboptimal"),
    "subopt-full": Strategy("reduced_order", "suboptimal"),
    "opt-full": Strategy("reduced_order", "optimal"),
}


@dataclass(frozen=True)
class SimConfig:
    delta: float
    duration_s: float = 10.0
    x0: tuple[float, ...] = (1.0, 0.0)
    xi0: tuple[float, ...] = (0.0,)
    z0: np.ndarray | None = None
    strategy: Strategy = STRATEGIES["proposed"]
    seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0.0:
            raise ValueError(f"duration_s must be positive, got {self.duration_s}")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")

    @property
    def steps(self) -> int:
        return max(1, int(math.floor(self.duration_s / self.delta + 0.5)))


@dataclass
class RateFit:
    """Log-linear decay fit ln|err_t| = ln(a) + r * t over retained steps."""

    amplitude: float
    rate_per_step: float
    rate_per_second: float
    r_squared: float
    samples_used: int


@dataclass
class SimTrace:
    """Per-step closed-loop record plus terminal summary."""

    delta: float
    strategy: Strategy
    step: np.ndarray          # (T,)
    time_s: np.ndarray        # (T,)
    x: np.ndarray             # (T, n) state before the step
    xi: np.ndarray            # (T, p)
    u: np.ndarray             # (T, m) applied input
    err_norm: np.ndarray      # (T,) ||x - x_star||
    err_theta: np.ndarray     # (T,) |x_0 - x_star_0|
    stage_cost: np.ndarray    # (T,)
    solver_iters: np.ndarray  # (T,)
    pg_norm: np.ndarray       # (T,)
    final_x: np.ndarray
    final_xi: np.ndarray
    x_star: np.ndarray = field(default_factory=lambda: np.zeros(2))
    diverged: bool = False
    diverged_at: int | None = None

    @property
    def final_err_norm(self) -> float:
        return float(np.linalg.norm(self.final_x - self.x_star))

    @property
    def final_err_theta(self) -> float:
        return float(abs(self.final_x[0] - self.x_star[0]))

    @property
    def mean_abs_err_theta(self) -> float:
        return float(np.mean(self.err_theta)) if self.err_theta.size else math.nan

    @property
    def mean_solver_iters(self) -> float:
        return float(np.mean(self.solver_iters)) if self.solver_iters.size else math.nan


def simulate(model: PlantModel, spec: OcpSpec, solver_config: SolverConfig, sim_config: SimConfig) -> SimTrace:
    """Run the closed loop and record one row per simulated step.

    The optimizer always predicts with the reduced map; the plant is stepped
    with the full two-timescale dynamics or with the reduced map according to
    the strategy. For reduced-plant runs the recorded fast state is the
    equilibrium value at the current state and input. A non-finite state halts
    the run and marks the trace as diverged.
    """
    delta = float(sim_config.delta)
    if abs(delta - spec.delta) > 1e-15:
        raise ValueError(f"sim delta {delta} does not match OCP delta {spec.delta}")
    strategy = sim_config.strategy
    n, p, m = model.n, model.p, model.m
    x = _as_vector(sim_config.x0, n, "x0")
    xi = _as_vector(sim_config.xi0, p, "xi0")
    nz = spec.horizon_N * m
    z = np.zeros(nz) if sim_config.z0 is None else np.asarray(sim_config.z0, dtype=float).reshape(nz).copy()
    x_star = model.x_star
    Q, Rw = spec.state_weight, spec.input_weight

    steps = sim_config.steps
    cols = {
        name: np.zeros(steps)
        for name in ("time_s", "err_norm", "err_theta", "stage_cost", "solver_iters", "pg_norm")
    }
    xs = np.zeros((steps, n))
    xis = np.zeros((steps, p))
    us = np.zeros((steps, m))
    diverged = False
    diverged_at = None

    t_done = 0
    for t in range(steps):
        u = first_input(z, m)
        xs[t] = x
        xis[t] = xi if strategy.plant_kind == "full_order" else equilibrium_extra(model, x, u)
        us[t] = u
        err = x - x_star
        cols["time_s"][t] = t * delta
        with np.errstate(over="ignore", invalid="ignore"):
            cols["err_norm"][t] = float(np.linalg.norm(err))
            cols["err_theta"][t] = float(abs(err[0]))
            cols["stage_cost"][t] = float(err @ Q @ err) + float(u @ Rw @ u)
            if strategy.plant_kind == "full_order":
                x_next = model.target_map(x, xi, u, delta)
                xi = model.extra_map(xi, x, u, delta)
            else:
                x_next = model.reduced_map(x, u, delta)
        x = x_next
        t_done = t + 1
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            diverged = True
            diverged_at = t
            break

        z_shifted = warm_start_shift(z, m)
        try:
            if strategy.solver_kind == "suboptimal":
                state = solver_map(spec, model, solver_config, x, z_shifted)
            else:
                state = solve_optimal(spec, model, solver_config, x, z_shifted)
        except FloatingPointError:
            # prediction rollout overflowed: the loop has left any sane region
            diverged = True
            diverged_at = t
            break
        z = state.z
        cols["solver_iters"][t] = state.iterations_used
        cols["pg_norm"][t] = state.projected_gradient_norm

    kept = slice(0, t_done if not diverged else diverged_at + 1)
    idx = np.arange(steps)[kept]
    final_xi = xi if strategy.plant_kind == "full_order" else equilibrium_extra(model, xs[idx[-1]], us[idx[-1]])
    return SimTrace(
        delta=delta,
        strategy=strategy,
        step=idx,
        time_s=cols["time_s"][kept],
        x=xs[kept],
        xi=xis[kept],
        u=us[kept],
        err_norm=cols["err_norm"][kept],
        err_theta=cols["err_theta"][kept],
        stage_cost=cols["stage_cost"][kept],
        solver_iters=cols["solver_iters"][kept],
        pg_norm=cols["pg_norm"][kept],
        final_x=x.copy(),
        final_xi=np.atleast_1d(final_xi).copy(),
        x_star=x_star.copy(),
        diverged=diverged,
        diverged_at=diverged_at,
    )


def fit_rate(trace: SimTrace, skip_fraction: float = 0.1) -> RateFit:
    """Least-squares fit of ln|err_theta| = ln(a) + r * step over retained samples.

    The initial ``skip_fraction`` of the trace is dropped, then only strictly
    positive error samples are kept. Refuses (raises ValueError) with fewer
    than 10 usable samples.
    """
    if not 0.0 <= skip_fraction < 1.0:
        raise ValueError(f"skip_fraction must lie in [0, 1), got {skip_fraction}")
    e = trace.err_theta
    t = trace.step.astype(float)
    start = int(skip_fraction * e.size)
    keep = (np.arange(e.size) >= start) & (e > 0.0)
    if int(np.count_nonzero(keep)) < 10:
        raise ValueError(
            f"rate fit refused: only {int(np.count_nonzero(keep))} positive-error samples "
            f"after skipping the first {skip_fraction:.0%} (need >= 10)"
        )
    tt = t[keep]
    le = np.log(e[keep])
    design = np.vstack([np.ones_like(tt), tt]).T
    coef, *_ = np.linalg.lstsq(design, le, rcond=None)
    pred = design @ coef
    ss_res = float(np.sum((le - pred) ** 2))
    ss_tot = float(np.sum((le - np.mean(le)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    rate = float(coef[1])
    return RateFit(
        amplitude=float(np.exp(coef[0])),
        rate_per_step=rate,
        rate_per_second=rate / trace.delta,
        r_squared=r2,
        samples_used=int(np.count_nonzero(keep)),
    )


@dataclass
class ComparisonRow:
    delta: float
    plant: str
    solver: str
    final_err_theta: float
    rate_per_s: float
    r2: float
    mean_iters: float
    diverged: bool
    mean_abs_err_theta: float
    trace: SimTrace | None = None


def compare_strategies(
    model: PlantModel,
    spec_template: OcpSpec,
    solver_config: SolverConfig,
    base_config: SimConfig,
    deltas: list[float],
    skip_fraction: float = 0.1,
    keep_traces: bool = False,
) -> list[ComparisonRow]:
    """Run each strategy at each timescale and tabulate errors and fitted rates.

    The horizon is recomputed per timescale from the fixed prediction window.
    Divergence is recorded in the row rather than raised; traces with no
    usable decay samples get a zero rate (all-zero equilibrium runs) or NaN.
    """
    if not deltas:
        raise ValueError("deltas must be a nonempty list")
    rows: list[ComparisonRow] = []
    for delta in deltas:
        spec = spec_template.with_delta(delta, horizon_for_delta(delta))
        for strategy in STRATEGIES.values():
            cfg = replace(base_config, delta=float(delta), strategy=strategy)
            trace = simulate(model, spec, solver_config, cfg)
            try:
                fit = fit_rate(trace, skip_fraction)
                rate, r2 = fit.rate_per_second, fit.r_squared
            except ValueError:
                if np.all(trace.err_theta == 0.0):
                    rate, r2 = 0.0, 0.0
                else:
                    rate, r2 = math.nan, math.nan
            rows.append(
                ComparisonRow(
                    delta=float(delta),
                    plant="full" if strategy.plant_kind == "full_order" else "reduced",
                    solver=strategy.solver_kind,
                    final_err_theta=trace.final_err_theta,
                    rate_per_s=rate,
                    r2=r2,
                    mean_iters=trace.mean_solver_iters,
                    diverged=trace.diverged,
                    mean_abs_err_theta=trace.mean_abs_err_theta,
                    trace=trace if keep_traces else None,
                )
            )
    return rows


def _fmt(value: float) -> str:
    return repr(float(value))


def write_trace_csv(trace: SimTrace, path) -> None:
    """One row per step: pendulum-shaped schema (theta, omega, current, u)."""
    if trace.x.shape[1] != 2 or trace.xi.shape[1] != 1 or trace.u.shape[1] != 1:
        raise ValueError("trace CSV schema expects n=2, p=1, m=1 (pendulum layout)")
    lines = [TRACE_HEADER]
    for i in range(trace.step.size):
        lines.append(
            ",".join(
                [
                    str(int(trace.step[i])),
                    _fmt(trace.time_s[i]),
                    _fmt(trace.x[i, 0]),
                    _fmt(trace.x[i, 1]),
                    _fmt(trace.xi[i, 0]),
                    _fmt(trace.u[i, 0]),
                    _fmt(trace.err_norm[i]),
                    _fmt(trace.err_theta[i]),
                    _fmt(trace.stage_cost[i]),
                    str(int(trace.solver_iters[i])),
                    _fmt(trace.pg_norm[i]),
                ]
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_comparison_csv(rows: list[ComparisonRow], path) -> None:
    lines = [COMPARISON_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                [
                    _fmt(r.delta),
                    r.plant,
                    r.solver,
                    _fmt(r.final_err_theta),
                    _fmt(r.rate_per_s),
                    _fmt(r.r2),
                    _fmt(r.mean_iters),
                    str(int(r.diverged)),
                ]
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_gnuplot_script(path, trace_csv: str | None = None, comparison_csv: str | None = None) -> None:
    """Emit a gnuplot script plotting the written CSVs (states + semilog error)."""
    lines = [
        "# gnuplot script generated alongside the CSV outputs",
        "set datafile separator ','",
        "set key outside",
    ]
    if trace_csv is not None:
        lines += [
            "set multiplot layout 2,1",
            "set xlabel 'time [s]'",
            "set ylabel 'state'",
            f"plot '{trace_csv}' using 2:3 with lines title 'theta', '' using 2:4 with lines title 'omega'",
            "set logscale y",
            "set ylabel '|theta error|'",
            f"plot '{trace_csv}' using 2:8 with lines title 'angle error'",
            "unset logscale y",
            "unset multiplot",
        ]
    if comparison_csv is not None:
        lines += [
            "set xlabel 'delta [s]'",
            "set ylabel 'final |theta error|'",
            "set logscale y",
            f"plot '{comparison_csv}' using 1:4 with points pt 7 title 'final error'",
            "unset logscale y",
        ]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
