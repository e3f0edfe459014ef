"""Closed-loop simulation driver, relay baseline, metrics, and file I/O.

A scenario couples the nonlinear plant with one controller (mixed-integer
MPC, penalty-homotopy MPC, or the relay baseline).  Every fast substep of
the plant is recorded; controller decisions, CPU time (wall clock around
the controller call only), and objective values are recorded once per
control interval on the row holding the state the controller saw.

Trace CSV schema: ``t_s,u,cpu_ms,objective,nbar_e,n_edge,x0..x{n-1}`` with
one row per substep and decision-only columns empty elsewhere.  All
numbers are serialized with 17 significant digits so a written trace reads
back bit-identically.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bnb import BnbConfig, MiMpcController
from .ocp import (PathConstraint, ReferenceSignal, Weights, default_weights,
                  greenwald_constraint, greenwald_limit, line_avg_profile)
from .plasma import (DEFAULT_NODES, DeviceParams, PelletSpec, PlasmaProfileState,
                     RadialGrid, TransportCoefficients, default_coefficients,
                     default_initial_state, pellet_source, rk4_step, vector_field)
from .prediction import CondensedPrediction, build_extended_model, condense
from .pth import PthMpcController, PthSchedule

log = logging.getLogger(__name__)

CONTROLLERS = ("mi", "pth", "relay")


@dataclass
class ScenarioConfig:
    """Full description of one closed-loop run; JSON-serializable."""

    # device
    a: float = 2.0
    R0: float = 6.2
    I_p: float = 15.0
    lam: float = 0.1
    # transport
    D_n: float = 0.25
    nu: float = 0.05
    chi: float = 2.0
    eta_scale: float = 2.8e-8
    S_Te: float = 3.2e21
    bp_drift_enabled: bool = False
    T_floor: float = 0.01
    n_floor: float = 1e10
    # grid
    nodes: list | None = None
    # pellet
    pellet_atoms: float = 6e21
    deposit_radius: float = 1.7
    # control
    controller: str = "mi"
    horizon: int = 5
    T_s: float = 0.1
    T_s_zoh: float = 0.005
    t_start: float = 0.0
    t_end: float = 10.0
    constraint_radius: float = 1.8
    include_drift: bool = True
    n_scale: float = 1e20
    # reference
    reference_breakpoints: list = field(default_factory=lambda: [0.0, 2.0, 6.0])
    reference_levels: list = field(default_factory=lambda: [1e20, 2e20, 1e20])
    # initial condition
    nbar0: float = 1e20
    T_core0: float = 15.0
    # homotopy schedule overrides (None -> derived defaults)
    beta_init: float | None = None
    beta_inc: float = 3.0
    gamma_init: float | None = None
    gamma_inc: float | None = None
    epsilon: float = 1e-3
    j_max: int = 25
    # branch and bound
    abs_gap: float = 0.0
    rel_gap: float = 1e-9
    max_nodes: int = 100_000
    # bookkeeping
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        ratio = self.T_s / self.T_s_zoh
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("T_s must be an integer multiple of T_s_zoh")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")

    @property
    def tau(self) -> int:
        return int(round(self.T_s / self.T_s_zoh))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config file must hold a single JSON object")
        return cls.from_dict(data)


def relay_step(nbar: float, nbar_ref: float) -> int:
    """Fire iff the line-averaged density is strictly below its reference."""
    return 1 if nbar < nbar_ref else 0


class RelayController:
    """Reference-chasing relay; ignores the density limit entirely."""

    def __init__(self, grid: RadialGrid, reference: ReferenceSignal):
        self.grid = grid
        self.reference = reference

    def control_step(self, x0: np.ndarray, t: float) -> tuple[int, dict]:
        nbar = line_avg_profile(np.asarray(x0)[: self.grid.n_nodes], self.grid)
        return relay_step(nbar, self.reference.level_at(t)), {"objective": math.nan}


@dataclass
class Scenario:
    """Everything needed to run and audit one closed loop."""

    cfg: ScenarioConfig
    grid: RadialGrid
    device: DeviceParams
    coeffs: TransportCoefficients
    pellet: PelletSpec
    reference: ReferenceSignal
    weights: Weights
    constraint: PathConstraint
    n_gw: float
    x0: PlasmaProfileState
    controller: object
    pred: CondensedPrediction | None = None


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    device = DeviceParams(a=cfg.a, R0=cfg.R0, I_p=cfg.I_p, lam=cfg.lam)
    nodes = DEFAULT_NODES if cfg.nodes is None else cfg.nodes
    grid = RadialGrid(np.asarray(nodes, dtype=float), device.a + device.lam)
    coeffs = default_coefficients(
        grid, device, D_n=cfg.D_n, nu=cfg.nu, chi=cfg.chi, eta_scale=cfg.eta_scale,
        S_Te=cfg.S_Te, bp_drift_enabled=cfg.bp_drift_enabled,
        T_floor=cfg.T_floor, n_floor=cfg.n_floor)
    pellet = PelletSpec(atoms=cfg.pellet_atoms, deposit_radius=cfg.deposit_radius,
                        ablation_duration=cfg.T_s_zoh)
    reference = ReferenceSignal(np.asarray(cfg.reference_breakpoints, dtype=float),
                                np.asarray(cfg.reference_levels, dtype=float))
    x0 = default_initial_state(grid, device, cfg.nbar0, cfg.T_core0)
    n_gw = greenwald_limit(device.I_p, device.a)
    constraint = greenwald_constraint(grid, n_gw, cfg.constraint_radius)
    weights = default_weights(grid, cfg.n_scale)
    pred = None
    if cfg.controller in ("mi", "pth"):
        f = vector_field(grid, coeffs, device, pellet)
        typical = np.concatenate((np.full(grid.n_nodes, cfg.n_scale),
                                  np.ones(grid.n_nodes)))
        model = build_extended_model(f, x0.as_vector(), u_eq=0.0, T_s=cfg.T_s,
                                     T_s_zoh=cfg.T_s_zoh, x_typical=typical,
                                     include_drift=cfg.include_drift)
        pred = condense(model, cfg.horizon)
    if cfg.controller == "mi":
        controller = MiMpcController(
            pred, weights, constraint, reference,
            BnbConfig(abs_gap=cfg.abs_gap, rel_gap=cfg.rel_gap, max_nodes=cfg.max_nodes),
            constraint_scale=cfg.n_scale)
    elif cfg.controller == "pth":
        schedule = PthSchedule.for_horizon(
            cfg.horizon, beta_init=cfg.beta_init, beta_inc=cfg.beta_inc,
            gamma_init=cfg.gamma_init, gamma_inc=cfg.gamma_inc,
            epsilon=cfg.epsilon, j_max=cfg.j_max)
        controller = PthMpcController(pred, weights, constraint, reference, schedule,
                                      constraint_scale=cfg.n_scale)
    else:
        controller = RelayController(grid, reference)
    return Scenario(cfg=cfg, grid=grid, device=device, coeffs=coeffs, pellet=pellet,
                    reference=reference, weights=weights, constraint=constraint,
                    n_gw=n_gw, x0=x0, controller=controller, pred=pred)


@dataclass
class ClosedLoopTrace:
    """Per-substep record of one run; decision columns are NaN off-decision."""

    t: np.ndarray
    states: np.ndarray               # (rows, n) stacked density/temperature
    nbar: np.ndarray
    n_edge: np.ndarray
    u: np.ndarray
    cpu_ms: np.ndarray
    objective: np.ndarray
    solver_stats: list = field(default_factory=list)
    aborted: bool = False

    @property
    def n_rows(self) -> int:
        return self.t.size

    def decision_mask(self) -> np.ndarray:
        return ~np.isnan(self.u)

    def sampling_mask(self) -> np.ndarray:
        """Decision instants plus the final state: the 100 ms sampling comb."""
        mask = self.decision_mask()
        if mask.size:
            mask = mask.copy()
            mask[-1] = True
        return mask


def run_closed_loop(cfg_or_scenario) -> ClosedLoopTrace:
    """Simulate the scenario; full-state feedback, one decision per T_s."""
    sc = cfg_or_scenario if isinstance(cfg_or_scenario, Scenario) \
        else build_scenario(cfg_or_scenario)
    cfg = sc.cfg
    tau = cfg.tau
    n_steps = int(math.floor((cfg.t_end - cfg.t_start) / cfg.T_s + 1e-9))
    nn = sc.grid.n_nodes
    edge_idx = sc.grid.node_index(cfg.constraint_radius)
    if n_steps == 0:
        empty = np.zeros(0)
        return ClosedLoopTrace(empty, np.zeros((0, 2 * nn)), empty.copy(), empty.copy(),
                               empty.copy(), empty.copy(), empty.copy())
    rows = 1 + n_steps * tau
    t_arr = cfg.t_start + np.arange(rows) * cfg.T_s_zoh
    states = np.empty((rows, 2 * nn))
    nbar = np.empty(rows)
    n_edge = np.empty(rows)
    u_arr = np.full(rows, np.nan)
    cpu_arr = np.full(rows, np.nan)
    obj_arr = np.full(rows, np.nan)
    stats: list = []

    zero_src = np.zeros(nn)
    pellet_src = pellet_source(sc.pellet, sc.grid, sc.device)
    state = sc.x0
    aborted = False

    def record(row: int, st: PlasmaProfileState) -> None:
        states[row] = st.as_vector()
        nbar[row] = line_avg_profile(st.n_e, sc.grid)
        n_edge[row] = st.n_e[edge_idx]

    record(0, state)
    row = 0
    for k in range(n_steps):
        t = cfg.t_start + k * cfg.T_s
        x = state.as_vector()
        tic = time.perf_counter()
        u, diag = sc.controller.control_step(x, t)
        cpu_arr[row] = (time.perf_counter() - tic) * 1e3
        u_arr[row] = float(u)
        obj_arr[row] = float(diag.get("objective", math.nan))
        stats.append(diag)
        for j in range(tau):
            src = pellet_src if (u == 1 and j == 0) else zero_src
            try:
                state = rk4_step(state, src, cfg.T_s_zoh, sc.grid, sc.coeffs, sc.device)
            except FloatingPointError as exc:
                log.error("simulation aborted at t = %.3f s: %s", t, exc)
                aborted = True
                break
            row += 1
            record(row, state)
        if aborted:
            break
    if aborted:
        rows = row + 1
        return ClosedLoopTrace(t_arr[:rows], states[:rows], nbar[:rows], n_edge[:rows],
                               u_arr[:rows], cpu_arr[:rows], obj_arr[:rows],
                               solver_stats=stats, aborted=True)
    return ClosedLoopTrace(t_arr, states, nbar, n_edge, u_arr, cpu_arr, obj_arr,
                           solver_stats=stats)


@dataclass
class MetricsReport:
    """Tracking, timing, and constraint statistics for one run.

    Error windows are fixed: reachable [0, 2) u [6, 10], unreachable
    [2, 6), matching the default reference staircase.  Sampling-instant
    violations allow a 1e-6 relative numerical margin on the limit.
    """

    mean_pct_error_reachable: float
    mean_pct_error_unreachable: float
    cpu_max_ms: float
    cpu_mean_ms: float
    violations_at_sampling: int
    worst_relative_excess: float
    violations_at_substeps: int
    pellet_count: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


REACHABLE_WINDOWS = ((0.0, 2.0), (6.0, 10.0 + 1e-9))
UNREACHABLE_WINDOW = (2.0, 6.0)


def compute_metrics(trace: ClosedLoopTrace, reference: ReferenceSignal,
                    n_gw: float | None = None) -> MetricsReport:
    if trace.n_rows == 0:
        raise ValueError("trace is empty")
    ref = np.array([reference.level_at(t) for t in trace.t])
    pct = 100.0 * np.abs(trace.nbar - ref) / ref
    reach = np.zeros(trace.n_rows, dtype=bool)
    for lo, hi in REACHABLE_WINDOWS:
        reach |= (trace.t >= lo) & (trace.t < hi)
    unreach = (trace.t >= UNREACHABLE_WINDOW[0]) & (trace.t < UNREACHABLE_WINDOW[1])
    err_reach = float(pct[reach].mean()) if reach.any() else math.nan
    err_unreach = float(pct[unreach].mean()) if unreach.any() else math.nan
    dec = trace.decision_mask()
    cpu = trace.cpu_ms[dec]
    cpu_max = float(cpu.max()) if cpu.size else math.nan
    cpu_mean = float(cpu.mean()) if cpu.size else math.nan
    pellets = int(np.nansum(trace.u)) if dec.any() else 0
    if n_gw is None:
        v_samp, v_sub, worst = 0, 0, math.nan
    else:
        samp = trace.sampling_mask()
        v_samp = int(np.sum(trace.n_edge[samp] > n_gw * (1.0 + 1e-6)))
        v_sub = int(np.sum(trace.n_edge > n_gw * (1.0 + 1e-6)))
        worst = float(max(np.max(trace.n_edge / n_gw - 1.0), 0.0))
    return MetricsReport(err_reach, err_unreach, cpu_max, cpu_mean,
                         v_samp, worst, v_sub, pellets)


# ---------------------------------------------------------------------------
# serialization: 17-significant-digit CSV and JSON


def _fmt(x: float) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    xf = float(x)
    if math.isnan(xf):
        return ""
    return format(xf, ".17g")


def write_trace(trace: ClosedLoopTrace, path: str) -> None:
    n = trace.states.shape[1]
    header = "t_s,u,cpu_ms,objective,nbar_e,n_edge," + ",".join(f"x{i}" for i in range(n))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for i in range(trace.n_rows):
            cells = [_fmt(trace.t[i]), _fmt(trace.u[i]), _fmt(trace.cpu_ms[i]),
                     _fmt(trace.objective[i]), _fmt(trace.nbar[i]), _fmt(trace.n_edge[i])]
            cells.extend(_fmt(v) for v in trace.states[i])
            fh.write(",".join(cells) + "\n")


def read_trace(path: str) -> ClosedLoopTrace:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    n = len(header) - 6

    def col(j: int) -> np.ndarray:
        return np.array([float(r[j]) if r[j] else math.nan for r in rows])

    states = np.empty((len(rows), n))
    for i, r in enumerate(rows):
        states[i] = [float(v) for v in r[6:]]
    return ClosedLoopTrace(t=col(0), states=states, nbar=col(4), n_edge=col(5),
                           u=col(1), cpu_ms=col(2), objective=col(3))


def _json_value(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end_pad = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return "null"
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple, np.ndarray)):
        items = [_json_value(v, indent, level + 1) for v in obj]
        if not items:
            return "[]"
        return "[\n" + ",\n".join(pad + it for it in items) + "\n" + end_pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(pad + it for it in items) + "\n" + end_pad + "}"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def json_dumps_17(obj, indent: int = 2) -> str:
    """JSON text with every float rendered to 17 significant digits."""
    return _json_value(obj, indent, 0)


def write_summary(metrics: MetricsReport, cfg: ScenarioConfig, path: str,
                  extra: dict | None = None) -> None:
    payload = {"version": __version__, "config": cfg.to_dict(),
               "metrics": metrics.to_dict()}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json_dumps_17(payload) + "\n")
