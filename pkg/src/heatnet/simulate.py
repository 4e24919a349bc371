"""Implicit-midpoint integration of the transport DAE.

The differential state is the vector of cell energy densities; the
algebraic flow variables are eliminated inside every Newton iterate
(consumer flows from the current energies, chord flows from the loop
balance), which keeps the Newton system at the state dimension and
matches the index-1 structure. The same code path integrates full and
reduced models through a small model protocol.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lu_factor, lu_solve

from .errors import DegenerateEnergyError, NewtonError, ValidationError
from .sensitivity import propagate_step
from .transport import sign_config


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``{t0, t0+dt, ..., t_end}``."""

    t0: float
    t_end: float
    dt: float

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= self.t0:
            raise ValidationError("time grid requires dt > 0 and t_end > t0")
        steps = (self.t_end - self.t0) / self.dt
        if abs(steps - round(steps)) > 1.0e-9 * max(1.0, steps):
            raise ValidationError("(t_end - t0) must be an integer multiple of dt")

    @property
    def n_steps(self):
        return int(round((self.t_end - self.t0) / self.dt))

    @property
    def points(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    @staticmethod
    def from_scenario(cfg):
        return TimeGrid(t0=cfg.t0, t_end=cfg.t_end, dt=cfg.dt)


@dataclass
class NewtonOptions:
    tol: float = 1.0e-10  # on the scaled residual
    max_iter: int = 25
    max_backtracks: int = 12


class ConstantControl:
    """Constant thermal control; zero-dimensional parameter vector."""

    def __init__(self, level):
        self.level = float(level)
        self.n_params = 0

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return self.level if t.ndim == 0 else np.full(t.shape, self.level)

    def gradient(self, t):
        t = np.asarray(t, dtype=float)
        shape = (0,) if t.ndim == 0 else t.shape + (0,)
        return np.zeros(shape)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        return 0.0 if t.ndim == 0 else np.zeros(t.shape)

    def derivative_gradient(self, t):
        return self.gradient(t)

    def initial_level(self):
        return self.level

    def initial_gradient(self):
        return np.zeros(0)


# ---------------------------------------------------------------------------
# transport models
# ---------------------------------------------------------------------------


class _SparseFactor:
    def __init__(self, matrix):
        self.lu = spla.splu(sp.csc_matrix(matrix))

    def solve(self, rhs):
        return self.lu.solve(np.asarray(rhs, dtype=float))


class _DenseFactor:
    def __init__(self, matrix):
        self.lu = lu_factor(matrix)

    def solve(self, rhs):
        return lu_solve(self.lu, np.asarray(rhs, dtype=float))


class FomModel:
    """Full-order model: sparse affine library plus output selector."""

    def __init__(self, net, disc, library, output_map):
        self.net = net
        self.disc = disc
        self.library = library
        self.output_map = output_map
        self.dim = disc.n
        self.q_diag = disc.cell_volumes
        self.reduced = False

    @property
    def out_matrix(self):
        return self.output_map.matrix

    def outputs(self, x):
        return self.output_map(x)

    def stationary_state(self, level=1.0):
        return np.full(self.dim, float(level))

    def weights(self, flow, strict=False):
        return self.library.gamma(flow, strict=strict)

    def adapt(self, flow):
        """Extend the sign configurations to cover ``flow`` (offline phase)."""
        if not self.library.covers(flow):
            self.library = self.library.extended(sign_config(flow.v))

    def rhs(self, gamma, x, u):
        return self.library.apply(gamma, x, u)

    def input_vector(self, gamma):
        return self.library.input_vector(gamma)

    def operator(self, gamma):
        return self.library.matrices(gamma)[0]

    def jacobian(self, gamma, flow, dqt_dy, x, u):
        """``A(v)`` plus the flow-feedback term filling the output columns."""
        a, _ = self.library.matrices(gamma)
        if dqt_dy is None:
            return a
        dg_dy = self.library.gamma_jacobian(flow) @ dqt_dy  # (n_F, n_o)
        if not np.any(dg_dy):
            return a
        actions = self.library.term_actions(x, u)  # (n, n_F)
        block = actions @ dg_dy  # (n, n_o)
        cells = self.output_map.cell_indices
        n, n_o = self.dim, len(cells)
        corr = sp.csr_matrix(
            (
                block.ravel(),
                (np.repeat(np.arange(n), n_o), np.tile(cells, n)),
            ),
            shape=(n, n),
        )
        return a + corr

    def step_matrix(self, jac, dt):
        return sp.identity(self.dim, format="csr") - (dt / 2.0) * jac

    def factorize(self, matrix):
        return _SparseFactor(matrix)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Grid-time samples of one simulation run."""

    times: np.ndarray
    states: np.ndarray  # (T, dim) cell energies, or reduced coordinates
    outputs: np.ndarray  # (T, n_o) energy density at consumers
    u: np.ndarray  # (T,) thermal control
    feed_in: np.ndarray  # (T,) injected power [W]
    total_flow: np.ndarray  # (T,) aggregated consumer volume flow [m^3/s]
    qt: np.ndarray  # (T, n_qt) independent volume flows
    dp: np.ndarray  # (T, n_h) consumer-to-source pressure differences
    demand: np.ndarray  # (T, n_h) consumer power demand
    sensitivities: np.ndarray | None = None  # (T, dim, n_params)
    du_dk: np.ndarray | None = None  # (T, n_params)
    newton_iterations: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def spread(self):
        return np.max(self.dp, axis=1) - np.min(self.dp, axis=1)


def stationary_init(model, hyd, control, demand, t0):
    """Exact stationary state of the lossless model at the control's level."""
    u0 = control.initial_level()
    x0 = model.stationary_state(u0)
    y0 = model.outputs(x0)
    state = hyd.solve(demand(t0), y0)
    return x0, state


def _scaled_norm(r, scale):
    return float(np.max(np.abs(r))) / scale


def _solve_step(model, hyd, t_mid, dt, x_old, u_mid, g_mid, chords, opts, strict, on_floor):
    """Newton solve of one implicit-midpoint step; returns state and context."""
    scale = max(1.0, float(np.max(np.abs(x_old))), abs(u_mid))
    x_new = x_old.copy()
    history = []
    hyd_state = None
    gamma = None

    def residual(x_next):
        x_mid = 0.5 * (x_old + x_next)
        y_mid = model.outputs(x_mid)
        h = hyd.solve(g_mid, y_mid, chords0=chords, on_floor=on_floor)
        g = model.weights(h.flow, strict=strict)
        r = x_next - x_old - dt * model.rhs(g, x_mid, u_mid)
        return r, h, g, x_mid, y_mid

    r, hyd_state, gamma, x_mid, y_mid = residual(x_new)
    err = _scaled_norm(r, scale)
    history.append(err)
    for _ in range(opts.max_iter):
        if err <= opts.tol:
            return x_new, hyd_state, gamma, history
        dqt_dy = hyd.flow_derivatives(hyd_state.flow, g_mid, y_mid)
        jac = model.jacobian(gamma, hyd_state.flow, dqt_dy, x_mid, u_mid)
        factor = model.factorize(model.step_matrix(jac, dt))
        delta = factor.solve(-r)
        alpha = 1.0
        for _ in range(opts.max_backtracks):
            trial = x_new + alpha * delta
            r_t, h_t, g_t, xm_t, ym_t = residual(trial)
            err_t = _scaled_norm(r_t, scale)
            if err_t < err or err_t <= opts.tol:
                x_new, r, err = trial, r_t, err_t
                hyd_state, gamma, x_mid, y_mid = h_t, g_t, xm_t, ym_t
                break
            alpha *= 0.5
        else:
            raise NewtonError(
                "midpoint step stalled: no residual decrease along the Newton step",
                history,
            )
        history.append(err)
    if err <= opts.tol:
        return x_new, hyd_state, gamma, history
    raise NewtonError(
        f"midpoint step did not converge within {opts.max_iter} iterations", history
    )


def midpoint_step(model, hyd, t_mid, dt, x_old, u_mid, g_mid, chords=None, opts=None):
    """One implicit-midpoint step given the midpoint control and demand."""
    opts = opts or NewtonOptions()
    x_new, hyd_state, _, history = _solve_step(
        model, hyd, t_mid, dt, x_old, u_mid, g_mid, chords, opts, True, "raise"
    )
    return x_new, hyd_state, history


def analytic_jacobian(model, hyd, x, u, demand, freeze_feedback=False, strict=False):
    """Jacobian of the state derivative w.r.t. the state at ``(x, u)``."""
    y = model.outputs(x)
    h = hyd.solve(demand, y)
    gamma = model.weights(h.flow, strict=strict)
    dqt_dy = None
    if not freeze_feedback:
        dqt_dy = hyd.flow_derivatives(h.flow, demand, y)
    return model.jacobian(gamma, h.flow, dqt_dy, x, u)


def simulate(
    model,
    hyd,
    control,
    grid: TimeGrid,
    demand,
    *,
    sensitivities=False,
    adapt=False,
    strict=None,
    on_floor="raise",
    newton: NewtonOptions | None = None,
) -> TrajectoryRecord:
    """Integrate the transport DAE over the full grid.

    ``demand`` maps a time to the consumer power vector. With
    ``sensitivities=True`` the parameter derivatives of the state are
    propagated alongside by one linear solve per parameter, reusing the
    factored step matrix. ``adapt=True`` extends the model's operator
    library on unseen flux patterns (training mode); otherwise unseen
    patterns raise.
    """
    opts = newton or NewtonOptions()
    if strict is None:
        strict = not adapt
    times = grid.points
    dt = grid.dt
    n_t = len(times)
    n_k = control.n_params

    started = time.perf_counter()
    x, hyd_state = stationary_init(model, hyd, control, demand, times[0])
    chords = hyd_state.flow.chord_flows.copy()

    n_h = len(model.outputs(x))
    states = np.empty((n_t, model.dim))
    outputs = np.empty((n_t, n_h))
    u_vals = np.empty(n_t)
    feed = np.empty(n_t)
    total_flow = np.empty(n_t)
    qt = np.empty((n_t, hyd.decomposition.n_qt))
    dp = np.empty((n_t, n_h))
    demand_vals = np.empty((n_t, n_h))
    sens = np.empty((n_t, model.dim, n_k)) if sensitivities else None
    du_dk = np.empty((n_t, n_k)) if sensitivities else None
    iterations = []

    def record(idx, t, x_t, h_t):
        states[idx] = x_t
        y = model.outputs(x_t)
        outputs[idx] = y
        u_t = control.value(t)
        u_vals[idx] = u_t
        g_t = demand(t)
        demand_vals[idx] = g_t
        qt[idx] = h_t.flow.qt
        s = float(np.sum(h_t.flow.consumer_flows))
        total_flow[idx] = s
        feed[idx] = (u_t - hyd.e_return) * s
        dp[idx] = hyd.pressure_reconstruction(h_t.flow).dp_consumers

    record(0, times[0], x, hyd_state)
    if sensitivities:
        s_state = np.outer(model.stationary_state(1.0), control.initial_gradient())
        sens[0] = s_state
        du_dk[0] = control.gradient(times[0])

    try:
        for step in range(grid.n_steps):
            t_mid = times[step] + dt / 2.0
            u_mid = float(control.value(t_mid))
            g_mid = demand(t_mid)
            if adapt:
                y_mid = model.outputs(x)
                probe = hyd.solve(g_mid, y_mid, chords0=chords, on_floor=on_floor)
                model.adapt(probe.flow)
            x, hyd_mid, gamma_mid, history = _solve_step(
                model, hyd, t_mid, dt, x, u_mid, g_mid, chords, opts, strict, on_floor
            )
            iterations.append(len(history) - 1)
            chords = hyd_mid.flow.chord_flows.copy()

            if sensitivities:
                x_mid = 0.5 * (states[step] + x)
                y_mid = model.outputs(x_mid)
                dqt_dy = hyd.flow_derivatives(hyd_mid.flow, g_mid, y_mid)
                jac = model.jacobian(gamma_mid, hyd_mid.flow, dqt_dy, x_mid, u_mid)
                factor = model.factorize(model.step_matrix(jac, dt))
                s_state = propagate_step(
                    factor,
                    jac,
                    dt,
                    s_state,
                    model.input_vector(gamma_mid),
                    control.gradient(t_mid),
                )
                sens[step + 1] = s_state
                du_dk[step + 1] = control.gradient(times[step + 1])

            t_next = times[step + 1]
            y_next = model.outputs(x)
            h_next = hyd.solve(demand(t_next), y_next, chords0=chords, on_floor=on_floor)
            chords = h_next.flow.chord_flows.copy()
            record(step + 1, t_next, x, h_next)
    except DegenerateEnergyError as exc:
        raise DegenerateEnergyError(
            f"{exc} (at t = {times[step] + dt / 2.0:.1f} s)",
            consumer_id=exc.consumer_id,
            time=times[step] + dt / 2.0,
        ) from exc
    except NewtonError as exc:
        exc.step_index = step
        raise

    return TrajectoryRecord(
        times=times,
        states=states,
        outputs=outputs,
        u=u_vals,
        feed_in=feed,
        total_flow=total_flow,
        qt=qt,
        dp=dp,
        demand=demand_vals,
        sensitivities=sens,
        du_dk=du_dk,
        newton_iterations=iterations,
        wall_time=time.perf_counter() - started,
    )
