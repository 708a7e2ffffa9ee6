"""Second-order sensitivity of solved network quantities to injections.

Differentiating the balance equations ``g(y) = x`` twice along the implicit
solution map ``y(x)`` gives, for a state component ``y_k``, the curvature
matrix ``lam = -sum_m S[k,m] * S' H_m S`` with ``S = J^{-1}`` and ``H_m``
the Hessian of equation ``m``. Its dominant eigenvectors are the injection
directions along which the quantity bends hardest; rotating injections onto
them is what the piecewise fitting stage works with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .acpf import (Indexing, PowerFlowSolution, StateVector, indexing,
                   jacobian, nominal_injections)
from .network import AdmittanceMatrix, BusKind, NetworkCase, build_admittance


@dataclass
class HessianStack:
    """Second derivatives of every balance equation w.r.t. the state.

    Stored as one flat COO list tagged with the equation index; each
    equation's matrix has support only on the variables of its bus
    neighborhood.
    """

    n_state: int
    eq: np.ndarray
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray

    def matrix(self, m: int) -> sp.csr_matrix:
        """Dense-pattern symmetric Hessian of equation ``m`` as CSR."""
        mask = self.eq == m
        return sp.coo_matrix(
            (self.val[mask], (self.row[mask], self.col[mask])),
            shape=(self.n_state, self.n_state)).tocsr()

    def weighted(self, weights: np.ndarray) -> sp.csr_matrix:
        """``sum_m weights[m] * H_m`` in one shot."""
        return sp.coo_matrix(
            (self.val * weights[self.eq], (self.row, self.col)),
            shape=(self.n_state, self.n_state)).tocsr()


@dataclass
class TargetSpec:
    """A solved quantity: voltage magnitude or angle at one bus."""

    bus: int  # external id
    quantity: str = "vm"  # "vm" | "va"


@dataclass
class SensitivityMatrix:
    target: TargetSpec
    lam: np.ndarray  # (n_inj, n_inj), symmetric
    x0: np.ndarray  # base injections, [P_pvpq; Q_pq] pu
    state: StateVector  # solved base state


@dataclass
class TaylorModel:
    f0: float
    grad: np.ndarray
    sens: SensitivityMatrix
    x0: np.ndarray


@dataclass
class DirectionBasis:
    """Orthonormal curvature directions, strongest first."""

    vectors: np.ndarray  # (n_inj, N)
    values: np.ndarray  # eigenvalues, |values| non-increasing
    signs: np.ndarray  # +1 convex, -1 concave along each direction

    @property
    def n_dirs(self) -> int:
        return self.vectors.shape[1]


# ---------------------------------------------------------------------------
# Analytic Hessians of the balance equations
# ---------------------------------------------------------------------------

def hessians(case: NetworkCase, state: StateVector,
             adm: AdmittanceMatrix | None = None) -> HessianStack:
    """Analytic second derivatives of each P/Q balance w.r.t. [theta; V].

    Equations follow the injection layout [P at non-slack; Q at PQ] and the
    variable axis follows the state layout [theta non-slack; V at PQ].
    """
    adm = adm or build_admittance(case)
    ix = indexing(case)
    n = case.n_bus
    npvpq = len(ix.pvpq)

    theta_pos = np.full(n, -1, dtype=int)
    theta_pos[ix.pvpq] = np.arange(npvpq)
    v_pos = np.full(n, -1, dtype=int)
    v_pos[ix.pq] = npvpq + np.arange(len(ix.pq))
    eq_p = np.full(n, -1, dtype=int)
    eq_p[ix.pvpq] = np.arange(npvpq)
    eq_q = np.full(n, -1, dtype=int)
    eq_q[ix.pq] = npvpq + np.arange(len(ix.pq))

    y = adm.complex
    vm, va = state.vm, state.va
    eqs, rows, cols, vals = [], [], [], []

    def add(m, p, q, v):
        if p < 0 or q < 0 or v == 0.0:
            return
        eqs.append(m)
        rows.append(p)
        cols.append(q)
        vals.append(v)

    def add_sym(m, p, q, v):
        add(m, p, q, v)
        if p != q:
            add(m, q, p, v)

    indptr, indices, ydata = y.indptr, y.indices, y.data
    for i in range(n):
        gii = ydata[indptr[i]:indptr[i + 1]][indices[indptr[i]:indptr[i + 1]] == i]
        gii = complex(gii[0]) if len(gii) else 0.0j
        for which, mi in (("p", eq_p[i]), ("q", eq_q[i])):
            if mi < 0:
                continue
            ti, vi = theta_pos[i], v_pos[i]
            # diagonal quadratic term: V_i^2 * G_ii (P) or -V_i^2 * B_ii (Q)
            dcoef = 2.0 * (gii.real if which == "p" else -gii.imag)
            add(mi, vi, vi, dcoef)
            for ptr in range(indptr[i], indptr[i + 1]):
                k = indices[ptr]
                if k == i:
                    continue
                gik, bik = ydata[ptr].real, ydata[ptr].imag
                th = va[i] - va[k]
                if which == "p":
                    c = gik * np.cos(th) + bik * np.sin(th)
                    cp = -gik * np.sin(th) + bik * np.cos(th)
                else:
                    c = gik * np.sin(th) - bik * np.cos(th)
                    cp = gik * np.cos(th) + bik * np.sin(th)
                tk, vk = theta_pos[k], v_pos[k]
                viv = vm[i] * vm[k]
                add(mi, ti, ti, -viv * c)
                add(mi, tk, tk, -viv * c)
                add_sym(mi, ti, tk, viv * c)
                add_sym(mi, vi, ti, vm[k] * cp)
                add_sym(mi, vi, tk, -vm[k] * cp)
                add_sym(mi, vk, ti, vm[i] * cp)
                add_sym(mi, vk, tk, -vm[i] * cp)
                add_sym(mi, vi, vk, c)

    return HessianStack(n_state=ix.n_state,
                        eq=np.asarray(eqs, dtype=int),
                        row=np.asarray(rows, dtype=int),
                        col=np.asarray(cols, dtype=int),
                        val=np.asarray(vals, dtype=float))


# ---------------------------------------------------------------------------
# Curvature of the implicit injection -> state map
# ---------------------------------------------------------------------------

def _state_index(case: NetworkCase, ix: Indexing, target: TargetSpec) -> int | None:
    """State-vector position of the target, or None if it is held fixed."""
    internal = case.index_of()[target.bus]
    kind = case.buses[internal].kind
    if target.quantity == "va":
        if kind is BusKind.SLACK:
            return None
        return int(np.flatnonzero(ix.pvpq == internal)[0])
    if target.quantity == "vm":
        if kind is not BusKind.PQ:
            return None
        return len(ix.pvpq) + int(np.flatnonzero(ix.pq == internal)[0])
    raise ValueError(f"unknown target quantity {target.quantity!r}")


def second_order_sensitivity(case: NetworkCase, base: PowerFlowSolution,
                             target: TargetSpec,
                             adm: AdmittanceMatrix | None = None,
                             stack: HessianStack | None = None) -> SensitivityMatrix:
    """Curvature matrix of the target quantity w.r.t. injections at ``base``.

    The base power flow must be converged. Targets that are held fixed by
    the bus type (slack angle, slack/PV magnitude) return a zero matrix.
    The result is symmetrized exactly.
    """
    if not base.converged:
        raise ValueError("base power flow is not converged")
    adm = adm or build_admittance(case)
    ix = indexing(case)
    x0_full = _injections_at(case, base, ix, adm)

    k = _state_index(case, ix, target)
    n_inj = ix.n_state
    if k is None:
        return SensitivityMatrix(target=target, lam=np.zeros((n_inj, n_inj)),
                                 x0=x0_full, state=base.state)

    jac = jacobian(case, base.state, adm)
    if sp.issparse(jac):
        jac = jac.toarray()
    s_inv = np.linalg.inv(jac)
    r = s_inv[k, :]
    w = hessian_weighted(case, base.state, r, adm, stack)
    lam = -(s_inv.T @ (w @ s_inv))
    lam = 0.5 * (lam + lam.T)
    return SensitivityMatrix(target=target, lam=lam, x0=x0_full, state=base.state)


def hessian_weighted(case: NetworkCase, state: StateVector, weights: np.ndarray,
                     adm: AdmittanceMatrix | None = None,
                     stack: HessianStack | None = None) -> np.ndarray:
    stack = stack or hessians(case, state, adm)
    return stack.weighted(weights).toarray()


def _injections_at(case: NetworkCase, sol: PowerFlowSolution, ix: Indexing,
                   adm: AdmittanceMatrix) -> np.ndarray:
    from .acpf import residual

    p, q = residual(case, sol.state, adm)
    return np.concatenate([p[ix.pvpq], q[ix.pq]])


def taylor_model(case: NetworkCase, base: PowerFlowSolution, target: TargetSpec,
                 adm: AdmittanceMatrix | None = None) -> TaylorModel:
    """Quadratic expansion of the target around the base injections."""
    adm = adm or build_admittance(case)
    ix = indexing(case)
    sens = second_order_sensitivity(case, base, target, adm)
    k = _state_index(case, ix, target)
    internal = case.index_of()[target.bus]
    f0 = float(base.vm[internal] if target.quantity == "vm" else base.va[internal])
    if k is None:
        grad = np.zeros(ix.n_state)
    else:
        jac = jacobian(case, base.state, adm)
        if sp.issparse(jac):
            jac = jac.toarray()
        grad = np.linalg.solve(jac.T, _unit(ix.n_state, k))
    return TaylorModel(f0=f0, grad=grad, sens=sens, x0=sens.x0)


def _unit(n: int, k: int) -> np.ndarray:
    e = np.zeros(n)
    e[k] = 1.0
    return e


def taylor_eval(model: TaylorModel, x: np.ndarray) -> float:
    """Evaluate the quadratic model at injection vector ``x``."""
    d = np.asarray(x, dtype=float) - model.x0
    return float(model.f0 + model.grad @ d + 0.5 * d @ (model.sens.lam @ d))


# ---------------------------------------------------------------------------
# Dominant curvature directions
# ---------------------------------------------------------------------------

def dominant_directions(sens: SensitivityMatrix | np.ndarray,
                        n_dirs: int | None = None,
                        energy: float = 0.9) -> DirectionBasis:
    """Leading eigenvectors of the curvature matrix, by |eigenvalue|.

    Either request ``n_dirs`` explicitly or let the smallest count whose
    absolute eigenvalues reach ``energy`` of the total be chosen. The sign
    of each eigenvalue records convexity (+) or concavity (-) along the
    direction; each vector is normalized so its first nonzero component is
    positive.
    """
    lam = sens.lam if isinstance(sens, SensitivityMatrix) else np.asarray(sens)
    if not np.allclose(lam, lam.T, atol=1e-9):
        raise ValueError("curvature matrix must be symmetric")
    n = lam.shape[0]
    if n_dirs is not None and not 1 <= n_dirs <= n:
        raise ValueError(f"n_dirs must be in 1..{n}")

    evals, evecs = np.linalg.eigh(0.5 * (lam + lam.T))
    order = np.argsort(-np.abs(evals), kind="stable")
    evals, evecs = evals[order], evecs[:, order]

    if n_dirs is None:
        total = np.sum(np.abs(evals))
        if total == 0.0:
            n_dirs = 1
        else:
            cum = np.cumsum(np.abs(evals)) / total
            n_dirs = int(np.searchsorted(cum, energy - 1e-12) + 1)

    vectors = evecs[:, :n_dirs].copy()
    values = evals[:n_dirs].copy()
    for j in range(n_dirs):
        nz = np.flatnonzero(np.abs(vectors[:, j]) > 1e-12)
        if len(nz) and vectors[nz[0], j] < 0:
            vectors[:, j] = -vectors[:, j]
    signs = np.where(values >= 0, 1, -1).astype(int)
    signs[values == 0] = 1
    return DirectionBasis(vectors=vectors, values=values, signs=signs)


def rotate(inj_matrix: np.ndarray, basis: DirectionBasis) -> np.ndarray:
    """Project injection rows onto the basis: ``T = W @ U`` with shape (S, N)."""
    w = np.atleast_2d(np.asarray(inj_matrix, dtype=float))
    if w.shape[1] != basis.vectors.shape[0]:
        raise ValueError(
            f"injection dimension {w.shape[1]} does not match basis "
            f"{basis.vectors.shape[0]}")
    return w @ basis.vectors


# ---------------------------------------------------------------------------
# JSON export
# ---------------------------------------------------------------------------

def sensitivity_to_dict(sens: SensitivityMatrix, basis: DirectionBasis) -> dict:
    return {
        "target": {"bus": sens.target.bus, "quantity": sens.target.quantity},
        "base_point": sens.x0.tolist(),
        "eigenvalues": basis.values.tolist(),
        "vectors": basis.vectors.tolist(),
    }


def basis_from_dict(doc: dict) -> DirectionBasis:
    values = np.asarray(doc["eigenvalues"], dtype=float)
    vectors = np.asarray(doc["vectors"], dtype=float)
    signs = np.where(values >= 0, 1, -1).astype(int)
    return DirectionBasis(vectors=vectors, values=values, signs=signs)
