"""Nonlinear 1D cylindrical drift-diffusion plasma plant.

Electron density ``n_e`` [m^-3] and temperature ``T_e`` [keV] evolve on a
fixed radial grid under particle diffusion, a pinch drift, thermo-diffusion,
an optional poloidal-field drift contribution, and heat diffusion, with a
fired fuel pellet entering as a single-node particle source.

Space is discretized conservatively: two-point fluxes on control volumes
for the diffusive terms and first-order upwinding for the pinch.  The axis
row is the control-volume integral of the usual cylindrical axis limit, so
the discrete flux through r = 0 is exactly zero.  The outer boundary is a
perfect sink: a virtual node at r = a + lambda holds both profiles at zero.
Time stepping is classical RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KEV_TO_JOULE = 1.602176634e-16
MU0 = 4.0e-7 * math.pi

#: Radial node layout used throughout: uniform 0.2 m spacing up to 1.6 m,
#: then 0.1 m spacing out to the minor radius at 2.0 m (13 nodes).
DEFAULT_NODES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.7, 1.8, 1.9, 2.0)


@dataclass
class DeviceParams:
    """Machine geometry and current. Lengths in metres, ``I_p`` in MA."""

    a: float = 2.0
    R0: float = 6.2
    I_p: float = 15.0
    lam: float = 0.1          # scrape-off width; the sink node sits at a + lam

    def __post_init__(self):
        if not (self.a > 0 and self.R0 > self.a and self.I_p > 0 and self.lam > 0):
            raise ValueError("DeviceParams requires a > 0, R0 > a, I_p > 0, lam > 0")


@dataclass
class RadialGrid:
    """Radial node positions plus derived control-volume geometry.

    ``interfaces`` are the control-volume faces (axis, node midpoints, and
    the midpoint between the last node and the virtual sink node),
    ``widths`` the control-volume widths, ``volumes`` the cell measures
    int r dr (multiply by 4 pi^2 R0 for the physical shell volume), and
    ``gaps`` the node-to-node distances including the last-node-to-virtual
    gap used by the boundary stencil.
    """

    nodes: np.ndarray
    virtual_edge: float
    interfaces: np.ndarray = field(init=False, repr=False)
    widths: np.ndarray = field(init=False, repr=False)
    volumes: np.ndarray = field(init=False, repr=False)
    gaps: np.ndarray = field(init=False, repr=False)
    line_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = np.asarray(self.nodes, dtype=float)
        if r.ndim != 1 or r.size < 3:
            raise ValueError("grid needs at least 3 nodes")
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise ValueError("nodes must start at 0 and increase strictly")
        if not self.virtual_edge > r[-1]:
            raise ValueError("virtual_edge must lie beyond the last node")
        self.nodes = r
        mid = 0.5 * (r[:-1] + r[1:])
        self.interfaces = np.concatenate(([0.0], mid, [0.5 * (r[-1] + self.virtual_edge)]))
        self.widths = np.diff(self.interfaces)
        self.volumes = 0.5 * np.diff(self.interfaces**2)
        self.gaps = np.append(np.diff(r), self.virtual_edge - r[-1])
        # trapezoid weights on [0, a]; exact for linear profiles
        w = np.empty(r.size)
        w[0] = 0.5 * (r[1] - r[0])
        w[1:-1] = 0.5 * (r[2:] - r[:-2])
        w[-1] = 0.5 * (r[-1] - r[-2])
        self.line_weights = w

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    def node_index(self, radius: float, tol: float = 1e-9) -> int:
        """Index of the node at ``radius``; raises if it is not on the grid."""
        idx = int(np.argmin(np.abs(self.nodes - radius)))
        if abs(self.nodes[idx] - radius) > tol:
            raise ValueError(f"radius {radius} m is not a grid node")
        return idx


def default_grid(device: DeviceParams | None = None, nodes=DEFAULT_NODES) -> RadialGrid:
    device = device or DeviceParams()
    return RadialGrid(np.asarray(nodes, dtype=float), device.a + device.lam)


@dataclass
class PlasmaProfileState:
    """Density and temperature per node; also used as a rate container.

    The flat vector form stacks densities first, then temperatures.
    """

    n_e: np.ndarray
    T_e: np.ndarray

    def __post_init__(self):
        self.n_e = np.asarray(self.n_e, dtype=float)
        self.T_e = np.asarray(self.T_e, dtype=float)
        if self.n_e.shape != self.T_e.shape or self.n_e.ndim != 1:
            raise ValueError("n_e and T_e must be 1-D arrays of equal length")

    def as_vector(self) -> np.ndarray:
        return np.concatenate((self.n_e, self.T_e))

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "PlasmaProfileState":
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size % 2:
            raise ValueError("state vector must have even length")
        half = x.size // 2
        return cls(x[:half].copy(), x[half:].copy())


@dataclass
class TransportCoefficients:
    """Transport constants, the static poloidal field, and numerical floors.

    ``eta_scale`` sets the Spitzer resistivity eta = eta_scale * T_e^-1.5
    (T_e floored first).  The poloidal-field drift contribution is carried
    with its exact coefficient; since the magnetic diffusivity is
    eta / mu0, the prefactor D_B / (4 eta) collapses to 1 / (4 mu0) and the
    resistivity only matters through the explicit 1 / T_e factor.  The term
    is switchable because it is independent of density and overwhelms the
    cold-edge particle flux for the transport constants used here.
    """

    B_p_profile: np.ndarray
    D_n: float = 0.25
    nu: float = 0.05
    chi: float = 2.0
    eta_scale: float = 2.8e-8
    mu0: float = MU0
    S_Te: float = 3.2e21
    bp_drift_enabled: bool = False
    T_floor: float = 0.01
    n_floor: float = 1e10

    def __post_init__(self):
        self.B_p_profile = np.asarray(self.B_p_profile, dtype=float)
        if not np.all(np.isfinite(self.B_p_profile)):
            raise ValueError("B_p_profile must be finite at every node")
        if self.D_n < 0 or self.chi < 0 or self.T_floor <= 0 or self.n_floor <= 0:
            raise ValueError("require D_n >= 0, chi >= 0 and positive floors")


def spitzer_resistivity(T_e: np.ndarray, coeffs: TransportCoefficients) -> np.ndarray:
    """Parallel resistivity eta_scale * T^-3/2 with the temperature floored."""
    return coeffs.eta_scale * np.maximum(T_e, coeffs.T_floor) ** -1.5


def uniform_current_bp(grid: RadialGrid, device: DeviceParams) -> np.ndarray:
    """B_p(r) for a uniform current-density cylinder carrying I_p; finite at r=0."""
    return MU0 * (device.I_p * 1e6) * grid.nodes / (2.0 * math.pi * device.a**2)


def default_coefficients(grid: RadialGrid, device: DeviceParams, **overrides) -> TransportCoefficients:
    values = dict(B_p_profile=uniform_current_bp(grid, device))
    values.update(overrides)
    return TransportCoefficients(**values)


@dataclass
class PelletSpec:
    """Fixed-size fuel pellet deposited at a single grid node."""

    atoms: float = 6e21
    deposit_radius: float = 1.7
    ablation_duration: float = 0.005

    def __post_init__(self):
        if self.atoms < 0 or self.ablation_duration <= 0:
            raise ValueError("atoms must be >= 0 and ablation_duration > 0")


def pellet_source(pellet: PelletSpec, grid: RadialGrid, device: DeviceParams) -> np.ndarray:
    """Constant ablation-rate density source [m^-3 s^-1], one node wide.

    The deposit shell volume is 4 pi^2 R0 r dr_eff with dr_eff the node's
    control-volume width, so rate * V_shell * duration recovers the pellet
    inventory exactly.
    """
    idx = grid.node_index(pellet.deposit_radius)
    if idx == 0:
        raise ValueError("cannot deposit on the axis node")
    v_shell = 4.0 * math.pi**2 * device.R0 * grid.nodes[idx] * grid.widths[idx]
    src = np.zeros(grid.n_nodes)
    src[idx] = pellet.atoms / (v_shell * pellet.ablation_duration)
    return src


def shell_volume(grid: RadialGrid, device: DeviceParams, radius: float) -> float:
    """4 pi^2 R0 r dr_eff for the node at ``radius``."""
    idx = grid.node_index(radius)
    return 4.0 * math.pi**2 * device.R0 * grid.nodes[idx] * grid.widths[idx]


def _bp_drift_term(T_floored: np.ndarray, grid: RadialGrid, coeffs: TransportCoefficients) -> np.ndarray:
    """Interface values of the poloidal-field drift entry of the density flux.

    Literal form D_B/(4 eta) * B_p (B_p + r dB_p/dr) / (T_e r) with
    D_B/(4 eta) = 1/(4 mu0) and T_e converted from keV to joules.  B_p is
    interpolated to interfaces; the outermost interface extrapolates with
    the last interior slope (the virtual node carries no field value).
    """
    bp = coeffs.B_p_profile
    r_if = grid.interfaces[1:]
    dbp = np.empty(grid.n_nodes)
    dbp[:-1] = np.diff(bp) / np.diff(grid.nodes)
    dbp[-1] = dbp[-2]
    bp_if = np.empty(grid.n_nodes)
    bp_if[:-1] = 0.5 * (bp[:-1] + bp[1:])
    bp_if[-1] = bp[-1] + (r_if[-1] - grid.nodes[-1]) * dbp[-1]
    tf_if = np.empty(grid.n_nodes)
    tf_if[:-1] = 0.5 * (T_floored[:-1] + T_floored[1:])
    tf_if[-1] = 0.5 * (T_floored[-1] + coeffs.T_floor)
    coef = 0.25 / (coeffs.mu0 * KEV_TO_JOULE)
    return coef * bp_if * (bp_if + r_if * dbp) / (tf_if * r_if)


def _density_rflux(n: np.ndarray, T: np.ndarray, grid: RadialGrid,
                   coeffs: TransportCoefficients) -> np.ndarray:
    """r * Gamma at every interface (axis first, sink face last).

    Gamma collects the bracket of the density equation: diffusion,
    thermo-diffusion, the optional B_p drift, and the upwinded pinch.
    The axis entry is identically zero; the sink face uses the zero-valued
    virtual node in its two-point differences.
    """
    tf = np.maximum(T, coeffs.T_floor)
    n_ext = np.concatenate((n, (0.0,)))
    T_ext = np.concatenate((T, (0.0,)))
    tf_ext = np.concatenate((tf, (coeffs.T_floor,)))
    g = grid.gaps
    dn = np.diff(n_ext) / g
    dT = np.diff(T_ext) / g
    ratio = n_ext / tf_ext
    f_brk = dn + 0.5 * (ratio[:-1] + ratio[1:]) * dT
    if coeffs.bp_drift_enabled:
        f_brk = f_brk + _bp_drift_term(tf, grid, coeffs)
    gam = coeffs.D_n * f_brk
    if coeffs.nu > 0.0:        # pinch advects inward: donor cell sits outboard
        gam = gam + coeffs.nu * n_ext[1:]
    elif coeffs.nu < 0.0:
        gam = gam + coeffs.nu * n_ext[:-1]
    out = np.empty(n.size + 1)
    out[0] = 0.0
    out[1:] = grid.interfaces[1:] * gam
    return out


def _heat_rflux(n: np.ndarray, T: np.ndarray, grid: RadialGrid,
                coeffs: TransportCoefficients) -> np.ndarray:
    """r * n * chi * dT/dr at every interface, zero through the axis."""
    n_ext = np.concatenate((n, (0.0,)))
    T_ext = np.concatenate((T, (0.0,)))
    dT = np.diff(T_ext) / grid.gaps
    n_if = 0.5 * (n_ext[:-1] + n_ext[1:])
    out = np.empty(n.size + 1)
    out[0] = 0.0
    out[1:] = grid.interfaces[1:] * coeffs.chi * n_if * dT
    return out


def _rates(n: np.ndarray, T: np.ndarray, source_n: np.ndarray, grid: RadialGrid,
           coeffs: TransportCoefficients) -> tuple[np.ndarray, np.ndarray]:
    dn = source_n + np.diff(_density_rflux(n, T, grid, coeffs)) / grid.volumes
    dT = (np.diff(_heat_rflux(n, T, grid, coeffs)) / grid.volumes + coeffs.S_Te) \
        / (3.0 * np.maximum(n, coeffs.n_floor))
    return dn, dT


def rhs(state: PlasmaProfileState, source_n: np.ndarray, grid: RadialGrid,
        coeffs: TransportCoefficients, device: DeviceParams | None = None) -> PlasmaProfileState:
    """Time derivative of the profiles for a given particle source.

    ``device`` is accepted for interface symmetry with the other plant
    operations; the flux stencils depend only on the grid and coefficients.
    """
    n, T = state.n_e, state.T_e
    source_n = np.asarray(source_n, dtype=float)
    if n.shape != (grid.n_nodes,) or source_n.shape != n.shape:
        raise ValueError("state/source dimensions do not match the grid")
    if not (np.all(np.isfinite(n)) and np.all(np.isfinite(T)) and np.all(np.isfinite(source_n))):
        raise ValueError("non-finite input to rhs")
    dn, dT = _rates(n, T, source_n, grid, coeffs)
    return PlasmaProfileState(dn, dT)


def density_rflux(state: PlasmaProfileState, grid: RadialGrid,
                  coeffs: TransportCoefficients) -> np.ndarray:
    """Public audit hook: r*Gamma at the interfaces for the current state."""
    return _density_rflux(state.n_e, state.T_e, grid, coeffs)


def particle_balance(state: PlasmaProfileState, source_n: np.ndarray, grid: RadialGrid,
                     coeffs: TransportCoefficients,
                     device: DeviceParams | None = None) -> tuple[float, float, float]:
    """Volume-weighted density-rate sum, total source, and boundary outflux.

    The scheme satisfies sum(V dn/dt) = sum(V s) - outflux identically; all
    three terms are returned in the int r dr measure.
    """
    rate = rhs(state, source_n, grid, coeffs, device)
    rflux = _density_rflux(state.n_e, state.T_e, grid, coeffs)
    dN = float(grid.volumes @ rate.n_e)
    src = float(grid.volumes @ np.asarray(source_n, dtype=float))
    outflux = -float(rflux[-1])
    return dN, src, outflux


def _require_finite_stage(n: np.ndarray, T: np.ndarray) -> None:
    if not (np.all(np.isfinite(n)) and np.all(np.isfinite(T))):
        raise FloatingPointError("non-finite RK4 stage; time step is unstable")


def rk4_step(state: PlasmaProfileState, source_n: np.ndarray, dt: float, grid: RadialGrid,
             coeffs: TransportCoefficients, device: DeviceParams | None = None) -> PlasmaProfileState:
    """One classical RK4 step with the source held constant over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    source_n = np.asarray(source_n, dtype=float)
    n0, T0 = state.n_e, state.T_e
    _require_finite_stage(n0, T0)
    k1n, k1T = _rates(n0, T0, source_n, grid, coeffs)
    n_s, T_s = n0 + 0.5 * dt * k1n, T0 + 0.5 * dt * k1T
    _require_finite_stage(n_s, T_s)
    k2n, k2T = _rates(n_s, T_s, source_n, grid, coeffs)
    n_s, T_s = n0 + 0.5 * dt * k2n, T0 + 0.5 * dt * k2T
    _require_finite_stage(n_s, T_s)
    k3n, k3T = _rates(n_s, T_s, source_n, grid, coeffs)
    n_s, T_s = n0 + dt * k3n, T0 + dt * k3T
    _require_finite_stage(n_s, T_s)
    k4n, k4T = _rates(n_s, T_s, source_n, grid, coeffs)
    n1 = n0 + (dt / 6.0) * (k1n + 2.0 * k2n + 2.0 * k3n + k4n)
    T1 = T0 + (dt / 6.0) * (k1T + 2.0 * k2T + 2.0 * k3T + k4T)
    _require_finite_stage(n1, T1)
    return PlasmaProfileState(n1, T1)


def simulate_control_interval(state: PlasmaProfileState, fire: int, pellet: PelletSpec,
                              grid: RadialGrid, coeffs: TransportCoefficients,
                              device: DeviceParams, T_s: float = 0.1,
                              T_s_zoh: float = 0.005) -> PlasmaProfileState:
    """Advance the plant by one control interval.

    The pellet ablates at a constant rate during the first zero-order-hold
    substep iff ``fire`` is 1; the remaining substeps run source-free.
    """
    ratio = T_s / T_s_zoh
    tau = int(round(ratio))
    if tau < 1 or abs(ratio - tau) > 1e-9:
        raise ValueError("T_s must be an integer multiple of T_s_zoh")
    if fire not in (0, 1, False, True):
        raise ValueError("fire must be binary")
    if abs(pellet.ablation_duration - T_s_zoh) > 1e-12:
        raise ValueError("pellet ablation_duration must equal T_s_zoh")
    zero = np.zeros(grid.n_nodes)
    src = pellet_source(pellet, grid, device) if fire else zero
    out = rk4_step(state, src, T_s_zoh, grid, coeffs, device)
    for _ in range(tau - 1):
        out = rk4_step(out, zero, T_s_zoh, grid, coeffs, device)
    return out


def default_initial_state(grid: RadialGrid, device: DeviceParams,
                          nbar0: float = 1e20, T_core: float = 15.0) -> PlasmaProfileState:
    """Parabolic flat-top profiles vanishing at the virtual sink node.

    The density parabola is scaled so its line average over [0, a] equals
    ``nbar0``; the temperature parabola peaks at ``T_core``.
    """
    base = 1.0 - (grid.nodes / grid.virtual_edge) ** 2
    a = grid.nodes[-1]
    n0 = nbar0 / float(grid.line_weights @ base / a)
    return PlasmaProfileState(n0 * base, T_core * base)


def vector_field(grid: RadialGrid, coeffs: TransportCoefficients, device: DeviceParams,
                 pellet: PelletSpec):
    """Stacked-state vector field f(x, u) with u scaling one nominal pellet.

    u = 1 means the full pellet ablation-rate source; the input enters the
    dynamics affinely.
    """
    src_unit = pellet_source(pellet, grid, device)
    nn = grid.n_nodes

    def f(x: np.ndarray, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u_val = float(np.atleast_1d(np.asarray(u, dtype=float))[0])
        dn, dT = _rates(x[:nn], x[nn:], u_val * src_unit, grid, coeffs)
        return np.concatenate((dn, dT))

    return f
