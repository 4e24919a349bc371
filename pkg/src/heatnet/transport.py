"""Upwind finite-volume discretization of the energy transport.

The semi-discrete advection operator is assembled in two equivalent ways:
directly from a flow field (the oracle path), or as an affine library of
constant sparse matrices weighted by scalar flow functions. One weight
exists per (coupling, flux direction) pair; directions are enumerated
offline from a set of per-pipe sign configurations, and encountering an
untrained direction at runtime is an explicit error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CoverageError, ValidationError

V_TOL = 1.0e-12  # [m/s] below this a pipe is considered stagnant
Q_TOL = 1.0e-12  # [m^3/s] node inflow below this performs no mixing

_SOURCE = -1  # marker for the source contribution in coupling terms


@dataclass(frozen=True)
class Discretization:
    """Finite-volume grid: uniform cells within each pipe."""

    cells_per_pipe: tuple

    @staticmethod
    def uniform(net, cells: int = 1):
        if cells < 1:
            raise ValidationError("at least one cell per pipe is required")
        return Discretization(cells_per_pipe=tuple(cells for _ in net.pipes)).bind(net)

    @staticmethod
    def from_target_dx(net, target_dx: float):
        if target_dx <= 0:
            raise ValidationError("target cell length must be positive")
        cells = tuple(max(1, round(p.length / target_dx)) for p in net.pipes)
        return Discretization(cells_per_pipe=cells).bind(net)

    def bind(self, net):
        if len(self.cells_per_pipe) != net.n_pipes:
            raise ValidationError("cell counts do not match the pipe count")
        counts = np.asarray(self.cells_per_pipe, dtype=int)
        if np.any(counts < 1):
            raise ValidationError("at least one cell per pipe is required")
        offsets = np.concatenate([[0], np.cumsum(counts)])
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "n", int(offsets[-1]))
        dx = np.array([p.length / c for p, c in zip(net.pipes, self.cells_per_pipe)])
        object.__setattr__(self, "dx", dx)
        vols = np.concatenate(
            [
                np.full(c, p.area * p.length / c)
                for p, c in zip(net.pipes, self.cells_per_pipe)
            ]
        )
        object.__setattr__(self, "cell_volumes", vols)
        return self

    def cells(self, pipe_idx):
        return range(int(self.offsets[pipe_idx]), int(self.offsets[pipe_idx + 1]))

    def first_cell(self, pipe_idx):
        return int(self.offsets[pipe_idx])

    def last_cell(self, pipe_idx):
        return int(self.offsets[pipe_idx + 1] - 1)

    def inlet_cell(self, pipe_idx, sign):
        """Cell receiving the node inflow under the given velocity sign."""
        return self.first_cell(pipe_idx) if sign > 0 else self.last_cell(pipe_idx)

    def outlet_cell(self, pipe_idx, sign):
        """Cell delivering into the downstream node under the given sign."""
        return self.last_cell(pipe_idx) if sign > 0 else self.first_cell(pipe_idx)


def sign_config(v):
    """Per-pipe velocity sign pattern; zero velocity counts as forward."""
    v = np.asarray(v, dtype=float)
    return tuple(int(s) for s in np.where(v < 0, -1, 1))


# ---------------------------------------------------------------------------
# direct assembly (oracle path)
# ---------------------------------------------------------------------------


def node_mixing(net, disc, flow, e, u_source):
    """Mixed energy density at every node given a state and a flow field.

    Nodes with total inflow below ``Q_TOL`` mix nothing and report zero.
    """
    e = np.asarray(e, dtype=float)
    sgn = np.where(flow.v < 0, -1, 1)
    mixed = np.zeros(net.n_nodes)
    src = net.node_index[net.source.node]
    for nidx in range(net.n_nodes):
        total = 0.0
        acc = 0.0
        for pidx, arrival in net.adjacent_pipes(nidx):
            if sgn[pidx] == arrival:
                w = arrival * flow.q[pidx]
                total += w
                acc += w * e[disc.outlet_cell(pidx, sgn[pidx])]
        if nidx == src:
            total += flow.source_flow
            acc += flow.source_flow * u_source
        mixed[nidx] = acc / total if total > Q_TOL else 0.0
    return mixed


def boundary_energy_flux(net, disc, flow, e, u_source):
    """Energy rate injected at the source minus the rate withdrawn by consumers."""
    mixed = node_mixing(net, disc, flow, e, u_source)
    influx = flow.source_flow * u_source
    outflux = 0.0
    for j, c in enumerate(net.consumers):
        outflux += flow.consumer_flows[j] * mixed[net.node_index[c.node]]
    return influx - outflux


def assemble_upwind(net, disc, flow):
    """Directly assembled upwind operator pair ``(A(v), B(v))``."""
    n = disc.n
    sgn = np.where(flow.v < 0, -1, 1)
    src = net.node_index[net.source.node]
    rows, cols, vals = [], [], []
    b = np.zeros(n)

    for pidx in range(net.n_pipes):
        rate = sgn[pidx] * flow.v[pidx] / disc.dx[pidx]
        cells = list(disc.cells(pidx))
        if sgn[pidx] < 0:
            cells = cells[::-1]
        for k, cell in enumerate(cells):
            rows.append(cell)
            cols.append(cell)
            vals.append(-rate)
            if k > 0:
                rows.append(cell)
                cols.append(cells[k - 1])
                vals.append(rate)

    for nidx in range(net.n_nodes):
        adj = net.adjacent_pipes(nidx)
        inflows = [(p, a) for p, a in adj if sgn[p] == a]
        total = sum(a * flow.q[p] for p, a in inflows)
        if nidx == src:
            total += flow.source_flow
        if total <= Q_TOL:
            continue
        for pidx, arrival in adj:
            if sgn[pidx] == arrival:
                continue  # inflow, not an outflow of this node
            inlet = disc.inlet_cell(pidx, sgn[pidx])
            rate = sgn[pidx] * flow.v[pidx] / disc.dx[pidx]
            for qidx, qarr in inflows:
                rows.append(inlet)
                cols.append(disc.outlet_cell(qidx, sgn[qidx]))
                vals.append(rate * (qarr * flow.q[qidx]) / total)
            if nidx == src:
                b[inlet] += rate * flow.source_flow / total

    a = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return a, b


# ---------------------------------------------------------------------------
# output map
# ---------------------------------------------------------------------------


class OutputMap:
    """Selector of the last upwind cell of each consumer's feed pipe."""

    def __init__(self, net, disc):
        cells = []
        for c in net.consumers:
            path = net.tree_path_indices(c.node)
            if not path:
                raise ValidationError(
                    f"consumer {c.id} sits at the source node; no feed pipe exists"
                )
            pidx, sign = path[-1]
            cells.append(disc.outlet_cell(pidx, sign))
        self.cell_indices = np.array(cells, dtype=int)
        n_o = len(cells)
        self.matrix = sp.csr_matrix(
            (np.ones(n_o), (np.arange(n_o), self.cell_indices)), shape=(n_o, disc.n)
        )

    def __call__(self, e):
        return np.asarray(e)[..., self.cell_indices]


# ---------------------------------------------------------------------------
# affine operator library
# ---------------------------------------------------------------------------


@dataclass
class _NodeCombo:
    """One (node, local sign pattern) pair enumerated offline."""

    node: int
    pattern: tuple  # pattern signs aligned with the adjacency list
    adj_pipes: np.ndarray
    adj_signs: np.ndarray
    adj_arrivals: np.ndarray  # graph arrival signs of the adjacency list
    inflow_pipes: np.ndarray
    inflow_arrivals: np.ndarray
    is_source: bool
    d_row: np.ndarray  # constant d(total inflow)/d(independent flows)


class AffineOperatorLibrary:
    """Constant operator terms with flow-dependent scalar weights.

    For every flow field whose sign pattern was enumerated offline,
    ``sum_i gamma_i(v) A_i`` reproduces the directly assembled upwind
    operator entrywise; same for the input column ``B``. Instances are
    immutable; :meth:`extended` returns a library with additional sign
    configurations.
    """

    def __init__(self, net, disc, decomposition, sign_configs=None):
        self.net = net
        self.disc = disc
        self.decomposition = decomposition
        if sign_configs is None:
            sign_configs = [tuple(1 for _ in net.pipes)]
        self.sign_configs = sorted(set(tuple(c) for c in sign_configs))
        for cfg in self.sign_configs:
            if len(cfg) != net.n_pipes or any(s not in (-1, 1) for s in cfg):
                raise ValidationError("sign configuration must be +/-1 per pipe")
        self._build_terms()
        self._build_assembly_maps()

    # -- construction --------------------------------------------------------

    def _build_terms(self):
        net, disc = self.net, self.disc
        dec = self.decomposition
        src = net.node_index[net.source.node]
        ones_cons = np.zeros(dec.n_qt)
        ones_cons[: net.n_consumers] = 1.0
        self._ones_cons = ones_cons

        intra = sorted({(p, cfg[p]) for cfg in self.sign_configs for p in range(net.n_pipes)})
        self.intra_pipe = np.array([p for p, _ in intra], dtype=int)
        self.intra_sign = np.array([s for _, s in intra], dtype=int)
        self.intra_inv_dx = 1.0 / disc.dx[self.intra_pipe] if intra else np.zeros(0)

        combos = {}
        for cfg in self.sign_configs:
            for nidx in range(net.n_nodes):
                adj = net.adjacent_pipes(nidx)
                pattern = tuple(cfg[p] for p, _ in adj)
                key = (nidx, pattern)
                if key in combos:
                    continue
                adj_pipes = np.array([p for p, _ in adj], dtype=int)
                adj_arrivals = np.array([a for _, a in adj], dtype=int)
                adj_signs = np.array(pattern, dtype=int)
                inflow_mask = adj_signs == adj_arrivals
                inflow_pipes = adj_pipes[inflow_mask]
                inflow_arr = adj_arrivals[inflow_mask]
                d_row = np.zeros(dec.n_qt)
                for p, a in zip(inflow_pipes, inflow_arr):
                    d_row += a * dec.areas[p] * dec.map_v[p]
                if nidx == src:
                    d_row = d_row + ones_cons
                combos[key] = _NodeCombo(
                    node=nidx,
                    pattern=pattern,
                    adj_pipes=adj_pipes,
                    adj_signs=adj_signs,
                    adj_arrivals=adj_arrivals,
                    inflow_pipes=inflow_pipes,
                    inflow_arrivals=inflow_arr,
                    is_source=nidx == src,
                    d_row=d_row,
                )
        self.combos = [combos[k] for k in sorted(combos)]
        self._node_combo_ids = {}
        for cid, combo in enumerate(self.combos):
            self._node_combo_ids.setdefault(combo.node, []).append(cid)

        # coupling terms: one per (combo, outflow pipe, inflow contributor)
        cpl = {"combo": [], "alpha": [], "s_alpha": [], "beta": [], "arr": [], "row": [], "col": []}
        for cid, combo in enumerate(self.combos):
            for alpha, s_alpha, arr_alpha in zip(
                combo.adj_pipes, combo.adj_signs, combo.adj_arrivals
            ):
                if s_alpha == arr_alpha:
                    continue  # inflow pipe, no intake coupling
                inlet = disc.inlet_cell(int(alpha), int(s_alpha))
                for beta, arr in zip(combo.inflow_pipes, combo.inflow_arrivals):
                    cpl["combo"].append(cid)
                    cpl["alpha"].append(int(alpha))
                    cpl["s_alpha"].append(int(s_alpha))
                    cpl["beta"].append(int(beta))
                    cpl["arr"].append(int(arr))
                    cpl["row"].append(inlet)
                    cpl["col"].append(disc.outlet_cell(int(beta), int(arr)))
                if combo.is_source:
                    cpl["combo"].append(cid)
                    cpl["alpha"].append(int(alpha))
                    cpl["s_alpha"].append(int(s_alpha))
                    cpl["beta"].append(_SOURCE)
                    cpl["arr"].append(0)
                    cpl["row"].append(inlet)
                    cpl["col"].append(_SOURCE)
        self.cpl_combo = np.array(cpl["combo"], dtype=int)
        self.cpl_alpha = np.array(cpl["alpha"], dtype=int)
        self.cpl_alpha_sign = np.array(cpl["s_alpha"], dtype=int)
        self.cpl_beta = np.array(cpl["beta"], dtype=int)
        self.cpl_beta_arrival = np.array(cpl["arr"], dtype=int)
        self.cpl_row = np.array(cpl["row"], dtype=int)
        self.cpl_col = np.array(cpl["col"], dtype=int)
        self.cpl_inv_dx = (
            1.0 / disc.dx[self.cpl_alpha] if len(self.cpl_alpha) else np.zeros(0)
        )

        self.n_intra = len(self.intra_pipe)
        self.n_coupling = len(self.cpl_combo)
        self.n_terms = self.n_intra + self.n_coupling

    def _build_assembly_maps(self):
        """Per-term sparse matrices plus fast template-based assembly maps."""
        n, disc = self.disc.n, self.disc
        a_terms, b_terms = [], []
        for t in range(self.n_intra):
            pidx, s = int(self.intra_pipe[t]), int(self.intra_sign[t])
            cells = list(disc.cells(pidx))
            if s < 0:
                cells = cells[::-1]
            rows = list(cells) + cells[1:]
            cols = list(cells) + cells[:-1]
            vals = [-1.0] * len(cells) + [1.0] * (len(cells) - 1)
            a_terms.append(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))
            b_terms.append(sp.csr_matrix((n, 1)))
        for t in range(self.n_coupling):
            row, col = int(self.cpl_row[t]), int(self.cpl_col[t])
            if col == _SOURCE:
                a_terms.append(sp.csr_matrix((n, n)))
                b_terms.append(sp.csr_matrix(([1.0], ([row], [0])), shape=(n, 1)))
            else:
                a_terms.append(sp.csr_matrix(([1.0], ([row], [col])), shape=(n, n)))
                b_terms.append(sp.csr_matrix((n, 1)))
        self.a_terms = a_terms
        self.b_terms = b_terms

        # union structure; operator data is a linear map of the weights
        all_rows, all_cols = [], []
        for a in a_terms:
            coo = a.tocoo()
            all_rows.append(coo.row)
            all_cols.append(coo.col)
        if all_rows:
            all_rows = np.concatenate(all_rows)
            all_cols = np.concatenate(all_cols)
        else:
            all_rows = np.zeros(0, dtype=int)
            all_cols = np.zeros(0, dtype=int)
        template = sp.csr_matrix(
            (np.ones(len(all_rows)), (all_rows, all_cols)), shape=(n, n)
        )
        template.sum_duplicates()
        template.sort_indices()
        pos = {}
        for r in range(n):
            for k in range(template.indptr[r], template.indptr[r + 1]):
                pos[(r, int(template.indices[k]))] = k
        g_rows, g_cols, g_vals = [], [], []
        for t, a in enumerate(a_terms):
            coo = a.tocoo()
            for r, c, val in zip(coo.row, coo.col, coo.data):
                g_rows.append(pos[(int(r), int(c))])
                g_cols.append(t)
                g_vals.append(val)
        self._template = template
        self._data_map = sp.csr_matrix(
            (g_vals, (g_rows, g_cols)), shape=(template.nnz, max(self.n_terms, 1))
        )
        self._b_map = sp.hstack(b_terms, format="csr") if b_terms else sp.csr_matrix((n, 1))
        self._b_dense = self._b_map.toarray()
        self._a_stack = sp.vstack(a_terms, format="csr") if a_terms else sp.csr_matrix((n, n))

    # -- weights ---------------------------------------------------------------

    def _combo_state(self, flow):
        sgn = np.where(flow.v < 0, -1, 1)
        active = np.empty(len(self.combos), dtype=bool)
        d_val = np.zeros(len(self.combos))
        for cid, combo in enumerate(self.combos):
            active[cid] = bool(np.all(sgn[combo.adj_pipes] == combo.adj_signs))
            if active[cid]:
                d = float(np.sum(combo.inflow_arrivals * flow.q[combo.inflow_pipes]))
                if combo.is_source:
                    d += flow.source_flow
                d_val[cid] = d
        return sgn, active, d_val

    def check_coverage(self, flow):
        """Raise :class:`CoverageError` on an untrained flux pattern."""
        sgn, active, _ = self._combo_state(flow)
        moving = np.abs(flow.v) > V_TOL
        trained = np.zeros((self.net.n_pipes, 2), dtype=bool)
        trained[self.intra_pipe, (self.intra_sign > 0).astype(int)] = True
        for pidx in np.nonzero(moving)[0]:
            if not trained[pidx, int(sgn[pidx] > 0)]:
                raise CoverageError(
                    f"pipe {self.net.pipes[pidx].id} flows with untrained direction "
                    f"{int(sgn[pidx])}; extend the offline sign configurations"
                )
        for nidx, cids in self._node_combo_ids.items():
            if any(active[c] for c in cids):
                continue
            adj = self.net.adjacent_pipes(nidx)
            if any(moving[p] for p, _ in adj):
                names = [self.net.pipes[p].id for p, _ in adj if moving[p]]
                raise CoverageError(
                    f"node {self.net.nodes[nidx].id}: flux pattern of pipes {names} "
                    "was not enumerated offline"
                )

    def covers(self, flow):
        try:
            self.check_coverage(flow)
            return True
        except CoverageError:
            return False

    def gamma(self, flow, strict=False):
        """Scalar weights of every term for the given flow field."""
        if strict:
            self.check_coverage(flow)
        sgn, active, d_val = self._combo_state(flow)
        g = np.zeros(self.n_terms)
        if self.n_intra:
            ivals = self.intra_sign * flow.v[self.intra_pipe] * self.intra_inv_dx
            imask = sgn[self.intra_pipe] == self.intra_sign
            g[: self.n_intra] = np.where(imask, ivals, 0.0)
        if self.n_coupling:
            dvals = d_val[self.cpl_combo]
            cmask = active[self.cpl_combo] & (dvals > Q_TOL)
            rate = self.cpl_alpha_sign * flow.v[self.cpl_alpha] * self.cpl_inv_dx
            w = np.where(
                self.cpl_beta == _SOURCE,
                flow.source_flow,
                self.cpl_beta_arrival * flow.q[np.maximum(self.cpl_beta, 0)],
            )
            with np.errstate(divide="ignore", invalid="ignore"):
                gv = rate * w / dvals
            g[self.n_intra :] = np.where(cmask, gv, 0.0)
        return g

    def gamma_jacobian(self, flow):
        """Derivative of the weights w.r.t. the independent volume flows."""
        dec = self.decomposition
        sgn, active, d_val = self._combo_state(flow)
        dg = np.zeros((self.n_terms, dec.n_qt))
        if self.n_intra:
            imask = sgn[self.intra_pipe] == self.intra_sign
            scale = np.where(imask, self.intra_sign * self.intra_inv_dx, 0.0)
            dg[: self.n_intra] = scale[:, None] * dec.map_v[self.intra_pipe]
        for k in range(self.n_coupling):
            cid = int(self.cpl_combo[k])
            if not active[cid] or d_val[cid] <= Q_TOL:
                continue
            combo = self.combos[cid]
            d = d_val[cid]
            alpha = int(self.cpl_alpha[k])
            rate = self.cpl_alpha_sign[k] * flow.v[alpha] * self.cpl_inv_dx[k]
            drate = self.cpl_alpha_sign[k] * self.cpl_inv_dx[k] * dec.map_v[alpha]
            if self.cpl_beta[k] == _SOURCE:
                w = flow.source_flow
                dw = self._ones_cons
            else:
                beta = int(self.cpl_beta[k])
                w = self.cpl_beta_arrival[k] * flow.q[beta]
                dw = self.cpl_beta_arrival[k] * dec.areas[beta] * dec.map_v[beta]
            dg[self.n_intra + k] = drate * (w / d) + rate * (
                dw / d - (w / d**2) * combo.d_row
            )
        return dg

    # -- assembly ----------------------------------------------------------------

    def matrices(self, gamma):
        """Assembled ``(A, B)`` for a weight vector."""
        data = self._data_map @ gamma
        a = sp.csr_matrix(
            (data, self._template.indices, self._template.indptr),
            shape=self._template.shape,
        )
        b = np.asarray(self._b_map @ gamma).ravel()
        return a, b

    def apply(self, gamma, e, u_source):
        """``sum_i gamma_i (A_i e + B_i u)``."""
        a, b = self.matrices(gamma)
        return a @ np.asarray(e, dtype=float) + b * u_source

    def input_vector(self, gamma):
        """Assembled input column ``B = sum_i gamma_i B_i``."""
        return np.asarray(self._b_map @ gamma).ravel()

    def term_actions(self, e, u_source):
        """Per-term vectors ``A_i e + B_i u`` as columns of an (n, n_F) array."""
        n = self.disc.n
        u_a = (self._a_stack @ np.asarray(e, dtype=float)).reshape(self.n_terms, n).T
        return u_a + u_source * self._b_dense

    def extended(self, new_config):
        """New library whose sign configurations include ``new_config``."""
        return AffineOperatorLibrary(
            self.net,
            self.disc,
            self.decomposition,
            self.sign_configs + [tuple(new_config)],
        )

    @property
    def flux_sign_configs(self):
        return list(self.sign_configs)


def build_affine_library(net, disc, sign_configs=None, decomposition=None):
    """Convenience constructor mirroring the offline build step."""
    from .hydraulics import FlowDecomposition

    dec = decomposition or FlowDecomposition(net)
    return AffineOperatorLibrary(net, disc, dec, sign_configs)
