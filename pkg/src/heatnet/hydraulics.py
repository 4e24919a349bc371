"""Flow-defining algebra of the network.

Volume conservation is eliminated a-priori: a constant null-space map
turns the independent volume flows (one per consumer plus one chord flow
per loop) into all pipe velocities, so conservation holds identically.
Loop pressure balance fixes the chord flows by a damped Newton iteration;
consumer flows follow from the power coupling ``q = G / (e - e_R)``.

The friction term ``|v| v`` is smoothed to ``v sqrt(v^2 + eps^2)`` near
zero so the loop Jacobian stays nonsingular at flux reversal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEnergyError, NewtonError, ValidationError
from .scenario import E_PER_KELVIN, GRAVITY, RHO

V_REGULARIZATION = 1.0e-9  # [m/s]


# ---------------------------------------------------------------------------
# friction
# ---------------------------------------------------------------------------


def colebrook_lambda(roughness_rel, reynolds, tol=1.0e-12, max_iter=60):
    """Darcy friction factor from the Colebrook-White equation.

    Solves ``1/sqrt(lam) = -2 log10(k/(3.7 d) + 2.51/(Re sqrt(lam)))`` by a
    Newton iteration on ``x = 1/sqrt(lam)``. The factor is evaluated once
    per pipe at a reference Reynolds number and frozen in time.
    """
    if reynolds <= 4000.0:
        raise ValidationError(f"Colebrook-White requires turbulent Re > 4000, got {reynolds}")
    if roughness_rel < 0:
        raise ValidationError("relative roughness must be nonnegative")
    x = 8.0  # ~ lambda 0.016, generic turbulent start
    for iteration in range(max_iter):
        arg = roughness_rel / 3.7 + 2.51 * x / reynolds
        g = x + 2.0 * math.log10(arg)
        dg = 1.0 + (2.0 / math.log(10.0)) * (2.51 / reynolds) / arg
        step = g / dg
        x -= step
        if abs(step) <= tol * max(1.0, abs(x)):
            return 1.0 / (x * x)
    raise NewtonError(
        f"Colebrook-White iteration did not converge after {max_iter} iterations"
    )


@dataclass(frozen=True)
class FrictionConfig:
    reference_reynolds: float = 1.0e5
    kinematic_viscosity: float = 1.0e-6  # [m^2/s], documents the Reynolds choice

    def __post_init__(self):
        if self.reference_reynolds <= 4000.0:
            raise ValidationError("reference Reynolds must be in the turbulent regime")


def friction_factors(net, config: FrictionConfig = FrictionConfig()) -> np.ndarray:
    """Frozen per-pipe friction factors at the reference Reynolds number."""
    return np.array(
        [
            colebrook_lambda(p.roughness / p.diameter, config.reference_reynolds)
            for p in net.pipes
        ]
    )


def smooth_abs(v, eps=V_REGULARIZATION):
    """``sqrt(v^2 + eps^2)``, the smoothed ``|v|``."""
    return np.sqrt(v * v + eps * eps)


def friction_flux(v, eps=V_REGULARIZATION):
    """Regularized ``|v| v`` and its derivative."""
    s = smooth_abs(v, eps)
    return v * s, s + v * v / s


# ---------------------------------------------------------------------------
# null-space parameterization
# ---------------------------------------------------------------------------


@dataclass
class FlowField:
    """One resolved flow state of the network."""

    qt: np.ndarray  # independent volume flows: consumers then chords [m^3/s]
    v: np.ndarray  # pipe velocities [m/s]
    q: np.ndarray  # pipe volume flows [m^3/s]
    source_flow: float  # total injection at the source [m^3/s]

    @property
    def consumer_flows(self):
        return self.qt[: self.qt.shape[0] - self._n_chords]

    @property
    def chord_flows(self):
        return self.qt[self.qt.shape[0] - self._n_chords :]

    _n_chords: int = 0


class FlowDecomposition:
    """Constant map from independent flows to pipe velocities.

    Columns: one per consumer (unit flow along the tree path from source to
    the consumer node) and one per spanning-tree chord (unit circulation
    around its fundamental loop). Volume conservation at every node holds
    identically for any coefficient vector.
    """

    def __init__(self, net):
        self.net = net
        n_p, n_h = net.n_pipes, net.n_consumers
        self.n_loops = net.loop_count
        self.n_qt = n_h + self.n_loops
        areas = np.array([p.area for p in net.pipes])
        self.areas = areas

        n_q = np.zeros((n_p, self.n_qt))
        for j, c in enumerate(net.consumers):
            for pidx, sign in net.tree_path_indices(c.node):
                n_q[pidx, j] = sign
        loops = net.fundamental_loops()
        loop_rows = np.zeros((self.n_loops, n_p))
        for j, cycle in enumerate(loops):
            for pipe_id, sign in cycle:
                pidx = net.pipe_index[pipe_id]
                n_q[pidx, n_h + j] = sign
                loop_rows[j, pidx] = sign
        self.map_q = n_q
        self.map_v = n_q / areas[:, None]
        self.loop_matrix = loop_rows
        self.chord_columns = self.map_v[:, n_h:]
        self.consumer_columns = self.map_v[:, :n_h]

    def flow_field(self, qt) -> FlowField:
        qt = np.asarray(qt, dtype=float)
        v = self.map_v @ qt
        field = FlowField(
            qt=qt,
            v=v,
            q=v * self.areas,
            source_flow=float(np.sum(qt[: self.net.n_consumers])),
        )
        field._n_chords = self.n_loops
        return field


def build_nullspace(net) -> FlowDecomposition:
    return FlowDecomposition(net)


# ---------------------------------------------------------------------------
# flow solves
# ---------------------------------------------------------------------------


def consumer_flows(demand, e_consumers, e_return, floor=E_PER_KELVIN, on_floor="raise"):
    """Volume flows covering the consumer power demand, ``q = G/(e - e_R)``.

    ``on_floor`` selects what happens when the energy spread drops to the
    configured floor: ``"raise"`` reports the offending consumer,
    ``"clamp"`` bounds the flow by evaluating at the floor (used inside
    optimization iterates).
    """
    demand = np.asarray(demand, dtype=float)
    spread = np.asarray(e_consumers, dtype=float) - e_return
    if on_floor == "clamp":
        return demand / np.maximum(spread, floor)
    bad = np.nonzero(spread <= floor)[0]
    if bad.size:
        i = int(bad[0])
        raise DegenerateEnergyError(
            f"consumer #{i}: energy density within {floor:.3g} J/m^3 of the return level",
            consumer_id=i,
        )
    return demand / spread


@dataclass
class HydraulicState:
    flow: FlowField
    dqt_dy: np.ndarray | None = None  # d(independent flows)/d(consumer energies)
    loop_residual: float = 0.0
    loop_iterations: int = 0


@dataclass
class PressureSolution:
    dp_consumers: np.ndarray  # pressure difference consumer minus source [Pa]
    u_p: np.ndarray | float | None = None  # source pressure control [Pa]
    p_consumers: np.ndarray | None = None  # absolute consumer pressures [Pa]


class HydraulicSolver:
    """Solver for the algebraic flow subsystem of one network.

    Holds the frozen friction factors, the null-space decomposition, and
    the source-to-consumer path data; exposes the nested elimination used
    by the transport DAE (consumer flows from energies, chord flows from
    loop balance) together with its derivatives.
    """

    def __init__(
        self,
        net,
        lambdas=None,
        e_return=0.0,
        e_floor=E_PER_KELVIN,
        friction_config: FrictionConfig = FrictionConfig(),
        eps_v=V_REGULARIZATION,
        tol=1.0e-12,
        max_iter=60,
    ):
        self.net = net
        self.decomposition = FlowDecomposition(net)
        self.lambdas = (
            np.asarray(lambdas, dtype=float)
            if lambdas is not None
            else friction_factors(net, friction_config)
        )
        if np.any(self.lambdas <= 0):
            raise ValidationError("friction factors must be positive")
        lengths = np.array([p.length for p in net.pipes])
        diameters = np.array([p.diameter for p in net.pipes])
        self.fric = self.lambdas * lengths / (2.0 * diameters)  # [s^2/m] x rho
        self.e_return = float(e_return)
        self.e_floor = float(e_floor)
        self.eps_v = float(eps_v)
        self.tol = float(tol)
        self.max_iter = int(max_iter)

        # consumer path data for pressure reconstruction
        n_h, n_p = net.n_consumers, net.n_pipes
        self.path_matrix = np.zeros((n_h, n_p))
        z_source = net.node(net.source.node).z
        self.z_drop = np.zeros(n_h)
        for j, c in enumerate(net.consumers):
            for pidx, sign in net.tree_path_indices(c.node):
                self.path_matrix[j, pidx] += sign
            self.z_drop[j] = z_source - net.node(c.node).z

    # -- chord flows ---------------------------------------------------------

    def _loop_residual(self, v):
        flux, dflux = friction_flux(v, self.eps_v)
        terms = self.fric * flux
        res = self.decomposition.loop_matrix @ terms
        scale = np.abs(self.decomposition.loop_matrix) @ np.abs(terms)
        return res, np.maximum(scale, 1.0e-30), dflux

    def solve_loop_flows(self, q_consumers, chords0=None) -> FlowField:
        """Chord flows balancing the friction pressure drop on every loop."""
        dec = self.decomposition
        q_consumers = np.asarray(q_consumers, dtype=float)
        if dec.n_loops == 0:
            return dec.flow_field(q_consumers)
        chords = np.zeros(dec.n_loops) if chords0 is None else np.array(chords0, dtype=float)
        qt = np.concatenate([q_consumers, chords])
        history = []
        for iteration in range(self.max_iter):
            v = dec.map_v @ qt
            res, scale, dflux = self._loop_residual(v)
            err = float(np.max(np.abs(res) / scale))
            history.append(err)
            if err <= self.tol:
                return dec.flow_field(qt)
            jac = dec.loop_matrix @ ((self.fric * dflux)[:, None] * dec.chord_columns)
            try:
                step = np.linalg.solve(jac, -res)
            except np.linalg.LinAlgError as exc:
                raise NewtonError(
                    "singular loop Jacobian (ill-posed geometry)", history
                ) from exc
            # backtracking on the scaled residual
            alpha = 1.0
            base = err
            for _ in range(30):
                trial = qt.copy()
                trial[dec.n_qt - dec.n_loops :] += alpha * step
                v_t = dec.map_v @ trial
                res_t, scale_t, _ = self._loop_residual(v_t)
                if float(np.max(np.abs(res_t) / scale_t)) < base or alpha < 1.0e-8:
                    qt = trial
                    break
                alpha *= 0.5
        raise NewtonError(
            f"loop flow iteration did not converge after {self.max_iter} iterations",
            history,
        )

    def chord_sensitivity(self, flow: FlowField):
        """d(chord flows)/d(consumer flows) at a converged loop balance."""
        dec = self.decomposition
        if dec.n_loops == 0:
            return np.zeros((0, self.net.n_consumers))
        _, dflux = friction_flux(flow.v, self.eps_v)
        weighted = (self.fric * dflux)[:, None]
        jac_chords = dec.loop_matrix @ (weighted * dec.chord_columns)
        jac_cons = dec.loop_matrix @ (weighted * dec.consumer_columns)
        return -np.linalg.solve(jac_chords, jac_cons)

    # -- nested elimination used by the DAE -----------------------------------

    def solve(
        self,
        demand,
        e_consumers,
        chords0=None,
        on_floor="raise",
        derivatives=False,
        freeze_feedback=False,
    ) -> HydraulicState:
        """Full flow solve given consumer energies and power demand."""
        q_cons = consumer_flows(
            demand, e_consumers, self.e_return, self.e_floor, on_floor
        )
        flow = self.solve_loop_flows(q_cons, chords0)
        state = HydraulicState(flow=flow)
        if derivatives:
            state.dqt_dy = self.flow_derivatives(
                flow, demand, e_consumers, freeze_feedback
            )
        return state

    def flow_derivatives(self, flow, demand, e_consumers, freeze_feedback=False):
        """Total derivative of the independent flows w.r.t. consumer energies."""
        n_h = self.net.n_consumers
        if freeze_feedback:
            return np.zeros((self.decomposition.n_qt, n_h))
        spread = np.asarray(e_consumers, dtype=float) - self.e_return
        dq_dy = np.where(
            spread > self.e_floor,
            -np.asarray(demand, dtype=float) / spread**2,
            0.0,
        )
        dqcons = np.diag(dq_dy)
        dchords = self.chord_sensitivity(flow) @ dqcons
        return np.vstack([dqcons, dchords])

    # -- pressures -------------------------------------------------------------

    def pressure_reconstruction(self, flow: FlowField) -> PressureSolution:
        """Pressure difference from source to every consumer along tree paths."""
        flux, _ = friction_flux(flow.v, self.eps_v)
        dp = RHO * GRAVITY * self.z_drop - RHO * (self.path_matrix @ (self.fric * flux))
        return PressureSolution(dp_consumers=dp)

    def pressure_jacobian(self, flow: FlowField) -> np.ndarray:
        """d(dp_consumers)/d(independent flows)."""
        _, dflux = friction_flux(flow.v, self.eps_v)
        ddp_dv = -RHO * self.path_matrix * (self.fric * dflux)[None, :]
        return ddp_dv @ self.decomposition.map_v


def posteriori_pressure_control(dp_consumers, p_min):
    """Source pressure control making the lowest consumer pressure hit p_min.

    ``dp_consumers`` has consumers on the last axis; a leading time axis is
    allowed. Pressures are assembled as ``p_min + (dp - min dp)`` so the
    minimum equals ``p_min`` exactly in floating point.
    """
    dp = np.atleast_2d(np.asarray(dp_consumers, dtype=float))
    dp_min = np.min(dp, axis=1, keepdims=True)
    u_p = p_min - dp_min[:, 0]
    p = p_min + (dp - dp_min)
    if np.asarray(dp_consumers).ndim == 1:
        return float(u_p[0]), p[0]
    return u_p, p


def pumping_power(dp_source, demand, e_consumers, e_return):
    """Hydraulic pumping power and its coarse upper bound.

    ``dp_source`` is the pressure lift at the source edge; arrays may carry
    a leading time axis. The bound is ``max dp * max total demand / min
    energy spread``.
    """
    dp = np.asarray(dp_source, dtype=float)
    demand = np.asarray(demand, dtype=float)
    spread = np.asarray(e_consumers, dtype=float) - e_return
    if np.any(spread <= 0):
        raise DegenerateEnergyError("consumer energy at or below the return level")
    power = dp * np.sum(demand / spread, axis=-1)
    bound = float(np.max(dp) * np.max(np.sum(demand, axis=-1)) / np.min(spread))
    if power.ndim == 0:
        return float(power), bound
    return power, bound
