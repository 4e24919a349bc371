"""Stability-preserving global Galerkin reduction of the transport model.

The projection basis is grown greedily: at each pass the frozen flow
field with the worst relative transfer-function error is selected, a
local moment-matching block is computed at fixed complex shifts, and the
global basis is merged by an SVD in the volume-weighted inner product.
Projecting with the energy weighting keeps every conserving frozen-flow
linearization dissipative, so Lyapunov stability carries over to the
reduced model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GreedyError, InputError, ValidationError
from .simulate import _DenseFactor
from .transport import AffineOperatorLibrary, Discretization, OutputMap

DAY = 86400.0


def energy_matrix(disc) -> np.ndarray:
    """Diagonal of the energy weighting Q: the fluid volume of every cell."""
    return np.asarray(disc.cell_volumes, dtype=float)


@dataclass
class ReductionConfig:
    delta: float = 1.0e-3  # relative transfer-error tolerance
    shifts: np.ndarray = None  # imaginary parts of the matching shifts [rad/s]
    error_freqs: np.ndarray = None  # sampling grid for the error measure [rad/s]
    svd_truncation: float = 1.0e-10  # relative singular-value cutoff
    max_iterations: int = 25
    min_iterations: int = 1
    seed_constant: bool = True  # start from the uniform steady direction
    dt_hint: float = 300.0  # sets the upper frequency of the default bands

    def __post_init__(self):
        if self.delta <= 0:
            raise ValidationError("reduction tolerance must be positive")
        if self.shifts is None:
            self.shifts = np.geomspace(2 * np.pi / DAY, np.pi / self.dt_hint, 8)
        self.shifts = np.asarray(self.shifts, dtype=float)
        if np.any(self.shifts == 0):
            raise ValidationError("matching shifts must be nonzero")
        if self.error_freqs is None:
            self.error_freqs = np.geomspace(2 * np.pi / DAY, np.pi / self.dt_hint, 20)
        self.error_freqs = np.asarray(self.error_freqs, dtype=float)


# ---------------------------------------------------------------------------
# transfer functions and local bases
# ---------------------------------------------------------------------------


def transfer_function(a, b, c, freqs):
    """Samples ``C (i w I - A)^{-1} B`` on the given frequencies [rad/s]."""
    n = a.shape[0]
    out = np.empty((len(freqs), c.shape[0]), dtype=complex)
    sparse = sp.issparse(a)
    for k, w in enumerate(freqs):
        m = (1j * w) * sp.identity(n, format="csc") - a if sparse else 1j * w * np.eye(n) - a
        if sparse:
            x = spla.splu(sp.csc_matrix(m)).solve(b.astype(complex))
        else:
            x = np.linalg.solve(m, b.astype(complex))
        out[k] = c @ x
    return out


def transfer_error(h_full, h_reduced):
    """Relative l2 error of transfer-function samples, 1 for a zero model."""
    num = np.linalg.norm(h_full - h_reduced)
    den = np.linalg.norm(h_full)
    return float(num / den) if den > 0 else 0.0


def local_basis(a, b, shifts):
    """Real basis block spanning ``(i w I - A)^{-1} B`` at the given shifts.

    Real and imaginary parts are both kept, which closes the shift set
    under conjugation. A singular shift (hitting an eigenvalue) is
    perturbed relatively by 1e-8 and retried.
    """
    n = a.shape[0]
    cols = []
    sparse = sp.issparse(a)
    for w in np.asarray(shifts, dtype=float):
        for attempt in range(3):
            s = 1j * w * (1.0 + attempt * 1.0e-8)
            m = s * sp.identity(n, format="csc") - a if sparse else s * np.eye(n) - a
            try:
                if sparse:
                    x = spla.splu(sp.csc_matrix(m)).solve(b.astype(complex))
                else:
                    x = np.linalg.solve(m, b.astype(complex))
                break
            except (RuntimeError, np.linalg.LinAlgError):
                continue
        else:
            raise ValidationError(f"shift {w} rad/s is singular for this linearization")
        cols.append(np.real(x))
        cols.append(np.imag(x))
    return np.column_stack(cols)


def q_orthonormalize(block, q_diag, truncation=1.0e-10):
    """Q-orthonormal basis of the column span, truncated by singular value."""
    sq = np.sqrt(q_diag)
    u, s, _ = np.linalg.svd(sq[:, None] * block, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((block.shape[0], 0))
    keep = s > truncation * s[0]
    return u[:, keep] / sq[:, None]


# ---------------------------------------------------------------------------
# reduced model
# ---------------------------------------------------------------------------


class RomModel:
    """Galerkin-reduced transport model sharing the full library's weights.

    Only the thermal transport is reduced; the weight functions are still
    evaluated from the unreduced hydraulic solve.
    """

    def __init__(self, library: AffineOperatorLibrary, v_basis, q_diag, output_matrix,
                 delta=None, training=None):
        self.library = library
        self.net = library.net
        self.disc = library.disc
        self.v = np.asarray(v_basis, dtype=float)
        self.q_diag = np.asarray(q_diag, dtype=float)
        self.w = self.q_diag[:, None] * self.v
        self.dim = self.v.shape[1]
        self.reduced = True
        self.delta = delta
        self.training = training or {}

        n_f = library.n_terms
        r = self.dim
        self.a_red = np.empty((n_f, r, r))
        self.b_red = np.empty((n_f, r))
        for i, (a_i, b_i) in enumerate(zip(library.a_terms, library.b_terms)):
            self.a_red[i] = self.w.T @ (a_i @ self.v)
            self.b_red[i] = self.w.T @ np.asarray(b_i.todense()).ravel()
        full_c = output_matrix
        self.c_red = np.asarray(full_c @ self.v)

    # -- model protocol -------------------------------------------------------

    @property
    def out_matrix(self):
        return self.c_red

    def outputs(self, x):
        return self.c_red @ x

    def stationary_state(self, level=1.0):
        return float(level) * (self.w.T @ np.ones(self.v.shape[0]))

    def lift(self, x):
        """Cell energies reconstructed from reduced coordinates."""
        return self.v @ np.asarray(x)

    def weights(self, flow, strict=False):
        return self.library.gamma(flow, strict=strict)

    def adapt(self, flow):
        raise ValidationError(
            "a reduced model cannot extend its flux configurations; retrain offline"
        )

    def rhs(self, gamma, x, u):
        a = np.tensordot(gamma, self.a_red, axes=1)
        return a @ x + (gamma @ self.b_red) * u

    def input_vector(self, gamma):
        return gamma @ self.b_red

    def operator(self, gamma):
        return np.tensordot(gamma, self.a_red, axes=1)

    def jacobian(self, gamma, flow, dqt_dy, x, u):
        a = np.tensordot(gamma, self.a_red, axes=1)
        if dqt_dy is None:
            return a
        dg_dy = self.library.gamma_jacobian(flow) @ dqt_dy  # (n_F, n_o)
        if not np.any(dg_dy):
            return a
        actions = np.einsum("irs,s->ri", self.a_red, x) + u * self.b_red.T  # (r, n_F)
        return a + actions @ (dg_dy @ self.c_red)

    def step_matrix(self, jac, dt):
        return np.eye(self.dim) - (dt / 2.0) * jac

    def factorize(self, matrix):
        return _DenseFactor(matrix)


def identity_reduction(model) -> RomModel:
    """Full-dimensional change of basis; reproduces the full model exactly."""
    q = model.q_diag
    v = np.diag(1.0 / np.sqrt(q))
    return RomModel(model.library, v, q, model.out_matrix, delta=0.0)


# ---------------------------------------------------------------------------
# greedy construction
# ---------------------------------------------------------------------------


@dataclass
class GreedyLog:
    iterations: list = field(default_factory=list)  # (pass, picked, max_error, r)
    final_errors: np.ndarray | None = None
    selected: list = field(default_factory=list)


def greedy_reduce(model, candidate_flows, config: ReductionConfig = None):
    """Greedy Galerkin reduction over a set of frozen flow candidates.

    Returns ``(RomModel, GreedyLog)``; raises :class:`GreedyError` with
    diagnostics if the tolerance cannot be met within the iteration cap.
    """
    config = config or ReductionConfig()
    if not candidate_flows:
        raise ValidationError("at least one candidate flow field is required")
    library = model.library
    q_diag = model.q_diag
    c_full = model.out_matrix

    mats = []
    h_full = []
    for flow in candidate_flows:
        gamma = library.gamma(flow, strict=True)
        a, b = library.matrices(gamma)
        mats.append((a, b))
        h_full.append(transfer_function(a, b, c_full, config.error_freqs))

    n = model.dim
    if config.seed_constant:
        basis = q_orthonormalize(np.ones((n, 1)), q_diag, config.svd_truncation)
    else:
        basis = np.zeros((n, 0))

    def candidate_errors(v):
        errs = np.empty(len(mats))
        if v.shape[1] == 0:
            for i, h in enumerate(h_full):
                errs[i] = transfer_error(h, np.zeros_like(h))
            return errs
        w = q_diag[:, None] * v
        for i, (a, b) in enumerate(mats):
            a_r = w.T @ (a @ v)
            b_r = w.T @ b
            c_r = np.asarray(c_full @ v)
            h_r = transfer_function(a_r, b_r, c_r, config.error_freqs)
            errs[i] = transfer_error(h_full[i], h_r)
        return errs

    log = GreedyLog()
    enrichments = 0
    for sweep in range(config.max_iterations + 1):
        errors = candidate_errors(basis)
        worst = int(np.argmax(errors))
        max_err = float(errors[worst])
        log.iterations.append(
            {"pass": sweep, "picked": worst, "max_error": max_err, "r": basis.shape[1]}
        )
        if max_err < config.delta and enrichments >= config.min_iterations:
            log.final_errors = errors
            break
        if enrichments >= config.max_iterations:
            raise GreedyError(
                f"greedy reduction stalled at max error {max_err:.3e} "
                f"(tolerance {config.delta:.3e}) after {enrichments} enrichments",
                diagnostics={
                    "errors": errors.tolist(),
                    "r": int(basis.shape[1]),
                    "iterations": log.iterations,
                },
            )
        a, b = mats[worst]
        block = local_basis(a, b, config.shifts)
        basis = q_orthonormalize(
            np.column_stack([basis, block]) if basis.size else block,
            q_diag,
            config.svd_truncation,
        )
        log.selected.append(worst)
        enrichments += 1

    rom = RomModel(
        library,
        basis,
        q_diag,
        c_full,
        delta=config.delta,
        training={
            "selected": log.selected,
            "final_errors": log.final_errors.tolist(),
            "n_candidates": len(candidate_flows),
        },
    )
    return rom, log


def hourly_candidates(record, decomposition, spacing_s=3600.0):
    """Flow fields sampled at an hourly cadence from a training trajectory."""
    times = record.times
    t0 = times[0]
    flows = []
    next_t = t0
    for k, t in enumerate(times):
        if t + 1.0e-9 >= next_t:
            flows.append(decomposition.flow_field(record.qt[k]))
            next_t += spacing_s
    return flows


# ---------------------------------------------------------------------------
# archive
# ---------------------------------------------------------------------------

ROM_FORMAT = "heatnet-rom"
ROM_VERSION = 1


def network_digest(net) -> str:
    payload = json.dumps(net.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def save_rom(rom: RomModel, path):
    data = {
        "format": ROM_FORMAT,
        "version": ROM_VERSION,
        "network_sha256": network_digest(rom.net),
        "cells_per_pipe": list(rom.disc.cells_per_pipe),
        "sign_configs": [list(c) for c in rom.library.sign_configs],
        "delta": rom.delta,
        "training": rom.training,
        "v_basis": rom.v.tolist(),
        "q_diag": rom.q_diag.tolist(),
        "a_red": rom.a_red.tolist(),
        "b_red": rom.b_red.tolist(),
        "c_red": rom.c_red.tolist(),
    }
    Path(path).write_text(json.dumps(data))


def load_rom(path, net) -> RomModel:
    from .hydraulics import FlowDecomposition

    path = Path(path)
    if not path.exists():
        raise InputError(f"reduced-model file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"cannot parse {path}: {exc}") from exc
    if data.get("format") != ROM_FORMAT or data.get("version") != ROM_VERSION:
        raise InputError(f"{path} is not a version-{ROM_VERSION} reduced-model archive")
    if data.get("network_sha256") != network_digest(net):
        raise InputError("reduced model was trained on a different network")
    disc = Discretization(cells_per_pipe=tuple(data["cells_per_pipe"])).bind(net)
    dec = FlowDecomposition(net)
    library = AffineOperatorLibrary(
        net, disc, dec, [tuple(c) for c in data["sign_configs"]]
    )
    rom = RomModel(
        library,
        np.array(data["v_basis"]),
        np.array(data["q_diag"]),
        OutputMap(net, disc).matrix,
        delta=data.get("delta"),
        training=data.get("training"),
    )
    # stored projections are authoritative; overwrite the recomputed ones
    rom.a_red = np.array(data["a_red"])
    rom.b_red = np.array(data["b_red"])
    rom.c_red = np.array(data["c_red"])
    if rom.a_red.shape[0] != library.n_terms:
        raise InputError("archive term count does not match the rebuilt library")
    return rom
