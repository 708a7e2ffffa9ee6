"""AC power flow: balance equations, analytic Jacobian, and Newton solver.

The network state is ``y = [theta; V]`` over the free variables (angles at
all non-slack buses, magnitudes at PQ buses) and the specified injections
are ``x = [P; Q]`` over the same buses. Dense linear algebra is used for
small systems and sparse LU above ``dense_limit`` buses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .network import AdmittanceMatrix, BusKind, NetworkCase, build_admittance


class SingularJacobianError(RuntimeError):
    """Newton iteration hit an exactly singular Jacobian."""


@dataclass
class Indexing:
    """Internal bus index sets and the [theta; V] state layout for one case."""

    slack: int
    pv: np.ndarray
    pq: np.ndarray
    pvpq: np.ndarray  # all non-slack buses, ascending internal order

    @property
    def n_state(self) -> int:
        return len(self.pvpq) + len(self.pq)


def indexing(case: NetworkCase) -> Indexing:
    kinds = [b.kind for b in case.buses]
    slack = kinds.index(BusKind.SLACK)
    pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
    pvpq = np.array([i for i in range(len(kinds)) if i != slack], dtype=int)
    return Indexing(slack=slack, pv=pv, pq=pq, pvpq=pvpq)


@dataclass
class StateVector:
    """Full-length voltage magnitudes (pu) and angles (rad); the free entries
    are determined by the case indexing, everything else is held fixed."""

    vm: np.ndarray
    va: np.ndarray

    def copy(self) -> "StateVector":
        return StateVector(vm=self.vm.copy(), va=self.va.copy())


@dataclass
class InjectionVector:
    """Specified net injections (pu): P at non-slack buses, Q at PQ buses."""

    p: np.ndarray
    q: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    @property
    def n(self) -> int:
        return len(self.p) + len(self.q)

    def copy(self) -> "InjectionVector":
        return InjectionVector(p=self.p.copy(), q=self.q.copy())


@dataclass
class PowerFlowSolution:
    state: StateVector
    converged: bool
    iterations: int
    max_mismatch: float

    @property
    def vm(self) -> np.ndarray:
        return self.state.vm

    @property
    def va(self) -> np.ndarray:
        return self.state.va


@dataclass
class PfOptions:
    tol: float = 1e-8
    max_iter: int = 20
    dense_limit: int = 300  # buses; above this use sparse LU
    diverge_limit: float = 1e6  # pu mismatch treated as divergence


def nominal_injections(case: NetworkCase, ix: Indexing | None = None) -> InjectionVector:
    """Net scheduled injections (gen minus load, pu) at the free buses."""
    ix = ix or indexing(case)
    idx = case.index_of()
    pg = np.zeros(case.n_bus)
    qg = np.zeros(case.n_bus)
    for g in case.gens:
        if g.status:
            pg[idx[g.bus]] += g.pg
            qg[idx[g.bus]] += g.qg
    pd = np.array([b.pd for b in case.buses])
    qd = np.array([b.qd for b in case.buses])
    p = (pg - pd) / case.base_mva
    q = (qg - qd) / case.base_mva
    return InjectionVector(p=p[ix.pvpq], q=q[ix.pq])


def _setpoints(case: NetworkCase) -> tuple[np.ndarray, np.ndarray]:
    """(vm, va) start honoring generator voltage setpoints at PV/slack buses."""
    idx = case.index_of()
    vm = np.array([b.vm0 for b in case.buses], dtype=float)
    va = np.deg2rad([b.va0 for b in case.buses])
    for g in case.gens:
        if g.status and case.buses[idx[g.bus]].kind is not BusKind.PQ:
            vm[idx[g.bus]] = g.vg
    return vm, va


def flat_start(case: NetworkCase) -> StateVector:
    vm, va = _setpoints(case)
    flat_vm = np.ones(case.n_bus)
    ix = indexing(case)
    flat_vm[ix.pv] = vm[ix.pv]
    flat_vm[ix.slack] = vm[ix.slack]
    flat_va = np.full(case.n_bus, va[ix.slack])
    return StateVector(vm=flat_vm, va=flat_va)


def nominal_start(case: NetworkCase) -> StateVector:
    vm, va = _setpoints(case)
    return StateVector(vm=vm, va=va)


def dense_ybus(case: NetworkCase, adm: AdmittanceMatrix | None = None) -> np.ndarray:
    adm = adm or build_admittance(case)
    return adm.complex.toarray()


# ---------------------------------------------------------------------------
# Residual and Jacobian
# ---------------------------------------------------------------------------

def residual(case: NetworkCase, state: StateVector,
             adm: AdmittanceMatrix | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the power balance at every bus: full-length (P, Q) in pu."""
    adm = adm or build_admittance(case)
    v = state.vm * np.exp(1j * state.va)
    s = v * np.conj(adm.complex @ v)
    return s.real, s.imag


def _dS_dV_dense(ybus: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched complex power derivatives; v is (C, n) complex."""
    ibus = v @ ybus.T
    e = v / np.abs(v)
    yv = ybus[None, :, :] * v[:, None, :]
    ds_dva = 1j * v[:, :, None] * np.conj(np.eye(ybus.shape[0])[None] * ibus[:, :, None] - yv)
    ds_dvm = v[:, :, None] * np.conj(ybus[None, :, :] * e[:, None, :])
    ds_dvm += np.eye(ybus.shape[0])[None] * (np.conj(ibus) * e)[:, :, None]
    return ds_dva, ds_dvm


def _jacobian_batch(ybus: np.ndarray, vm: np.ndarray, va: np.ndarray,
                    ix: Indexing) -> np.ndarray:
    """Stack of Newton Jacobians, shape (C, n_state, n_state)."""
    v = vm * np.exp(1j * va)
    ds_dva, ds_dvm = _dS_dV_dense(ybus, v)
    j11 = ds_dva[:, ix.pvpq[:, None], ix.pvpq[None, :]].real
    j12 = ds_dvm[:, ix.pvpq[:, None], ix.pq[None, :]].real
    j21 = ds_dva[:, ix.pq[:, None], ix.pvpq[None, :]].imag
    j22 = ds_dvm[:, ix.pq[:, None], ix.pq[None, :]].imag
    top = np.concatenate([j11, j12], axis=2)
    bot = np.concatenate([j21, j22], axis=2)
    return np.concatenate([top, bot], axis=1)


def _jacobian_sparse(ycsr: sp.csr_matrix, vm: np.ndarray, va: np.ndarray,
                     ix: Indexing) -> sp.csr_matrix:
    v = vm * np.exp(1j * va)
    n = len(v)
    ib = np.arange(n)
    ibus = ycsr @ v
    diag_v = sp.csr_matrix((v, (ib, ib)))
    diag_i = sp.csr_matrix((ibus, (ib, ib)))
    diag_e = sp.csr_matrix((v / np.abs(v), (ib, ib)))
    ds_dva = 1j * diag_v @ (diag_i - ycsr @ diag_v).conj()
    ds_dvm = diag_v @ (ycsr @ diag_e).conj() + diag_i.conj() @ diag_e
    j11 = ds_dva[ix.pvpq[:, None], ix.pvpq[None, :]].real
    j12 = ds_dvm[ix.pvpq[:, None], ix.pq[None, :]].real
    j21 = ds_dva[ix.pq[:, None], ix.pvpq[None, :]].imag
    j22 = ds_dvm[ix.pq[:, None], ix.pq[None, :]].imag
    return sp.bmat([[j11, j12], [j21, j22]], format="csr")


def jacobian(case: NetworkCase, state: StateVector,
             adm: AdmittanceMatrix | None = None):
    """Analytic Jacobian of the balance equations w.r.t. y = [theta; V].

    Rows follow the injection layout [P at non-slack; Q at PQ]. Returns a
    dense array for small cases and CSR above ``PfOptions.dense_limit``.
    """
    adm = adm or build_admittance(case)
    ix = indexing(case)
    if case.n_bus <= PfOptions.dense_limit:
        ybus = adm.complex.toarray()
        return _jacobian_batch(ybus, state.vm[None, :], state.va[None, :], ix)[0]
    return _jacobian_sparse(adm.complex, state.vm, state.va, ix)


# ---------------------------------------------------------------------------
# Newton iteration
# ---------------------------------------------------------------------------

def _mismatch_batch(ybus: np.ndarray, vm: np.ndarray, va: np.ndarray,
                    p_spec: np.ndarray, q_spec: np.ndarray, ix: Indexing) -> np.ndarray:
    v = vm * np.exp(1j * va)
    s = v * np.conj(v @ ybus.T)
    return np.concatenate([s.real[:, ix.pvpq] - p_spec, s.imag[:, ix.pq] - q_spec], axis=1)


def _solve_dense_batch(case: NetworkCase, ybus: np.ndarray, p_spec: np.ndarray,
                       q_spec: np.ndarray, vm0: np.ndarray, va0: np.ndarray,
                       ix: Indexing, opts: PfOptions, strict: bool):
    """Newton over a batch; each sample iterates on its own schedule so the
    result is independent of how samples are grouped into batches."""
    c = p_spec.shape[0]
    vm, va = vm0.copy(), va0.copy()
    iters = np.zeros(c, dtype=int)
    done = np.zeros(c, dtype=bool)
    failed = np.zeros(c, dtype=bool)
    maxmis = np.full(c, np.inf)

    for it in range(opts.max_iter + 1):
        f = _mismatch_batch(ybus, vm, va, p_spec, q_spec, ix)
        mis = np.max(np.abs(f), axis=1)
        bad = ~np.isfinite(mis) | (mis > opts.diverge_limit)
        newly_failed = bad & ~done & ~failed
        failed |= newly_failed
        maxmis[~done & ~failed] = mis[~done & ~failed]
        done |= (mis <= opts.tol) & ~failed
        active = ~done & ~failed
        if it == opts.max_iter or not active.any():
            break
        jac = _jacobian_batch(ybus, vm[active], va[active], ix)
        try:
            dx = np.linalg.solve(jac, -f[active][:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            dx, sing = _solve_rows_fallback(jac, -f[active])
            if sing.any():
                if strict:
                    k = int(iters[active][sing][0])
                    raise SingularJacobianError(f"singular at iteration {k}") from None
                act_idx = np.flatnonzero(active)
                failed[act_idx[sing]] = True
                active[act_idx[sing]] = False
                keep = ~sing
                jac, dx = jac[keep], dx[keep]
                if not active.any():
                    continue
        va_act = va[active]
        vm_act = vm[active]
        npvpq = len(ix.pvpq)
        va_act[:, ix.pvpq] += dx[:, :npvpq]
        vm_act[:, ix.pq] += dx[:, npvpq:]
        va[active] = va_act
        vm[active] = vm_act
        iters[active] += 1

    converged = done & ~failed
    return vm, va, converged, iters, maxmis


def _solve_rows_fallback(jac: np.ndarray, rhs: np.ndarray):
    """Per-sample solve used when a batch contains a singular Jacobian."""
    out = np.zeros_like(rhs)
    sing = np.zeros(rhs.shape[0], dtype=bool)
    for i in range(rhs.shape[0]):
        try:
            out[i] = np.linalg.solve(jac[i], rhs[i])
        except np.linalg.LinAlgError:
            sing[i] = True
    return out, sing


def _solve_sparse_single(case: NetworkCase, ycsr: sp.csr_matrix, p_spec, q_spec,
                         vm0, va0, ix: Indexing, opts: PfOptions, strict: bool):
    vm, va = vm0.copy(), va0.copy()
    npvpq = len(ix.pvpq)
    iters = 0
    while True:
        v = vm * np.exp(1j * va)
        s = v * np.conj(ycsr @ v)
        f = np.concatenate([s.real[ix.pvpq] - p_spec, s.imag[ix.pq] - q_spec])
        mis = float(np.max(np.abs(f)))
        if not np.isfinite(mis) or mis > opts.diverge_limit:
            return vm, va, False, iters, np.inf
        if mis <= opts.tol:
            return vm, va, True, iters, mis
        if iters >= opts.max_iter:
            return vm, va, False, iters, mis
        jac = _jacobian_sparse(ycsr, vm, va, ix).tocsc()
        try:
            lu = spla.splu(jac)
            dx = lu.solve(-f)
        except RuntimeError:
            if strict:
                raise SingularJacobianError(f"singular at iteration {iters}") from None
            return vm, va, False, iters, mis
        if not np.all(np.isfinite(dx)):
            if strict:
                raise SingularJacobianError(f"singular at iteration {iters}") from None
            return vm, va, False, iters, mis
        va[ix.pvpq] += dx[:npvpq]
        vm[ix.pq] += dx[npvpq:]
        iters += 1


def solve_power_flow(case: NetworkCase, inj: InjectionVector,
                     start: StateVector | None = None,
                     opts: PfOptions | None = None,
                     adm: AdmittanceMatrix | None = None) -> PowerFlowSolution:
    """Newton solve of the power flow for one injection vector.

    Non-convergence within ``opts.max_iter`` is reported through the
    ``converged`` flag rather than an exception; an exactly singular
    Jacobian raises :class:`SingularJacobianError`.
    """
    opts = opts or PfOptions()
    start = start or nominal_start(case)
    ix = indexing(case)
    adm = adm or build_admittance(case)
    if case.n_bus <= opts.dense_limit:
        ybus = adm.complex.toarray()
        vm, va, conv, iters, mis = _solve_dense_batch(
            case, ybus, inj.p[None, :], inj.q[None, :],
            start.vm[None, :], start.va[None, :], ix, opts, strict=True)
        return PowerFlowSolution(StateVector(vm=vm[0], va=va[0]),
                                 bool(conv[0]), int(iters[0]), float(mis[0]))
    vm, va, conv, iters, mis = _solve_sparse_single(
        case, adm.complex, inj.p, inj.q, start.vm.copy(), start.va.copy(),
        ix, opts, strict=True)
    return PowerFlowSolution(StateVector(vm=vm, va=va), conv, iters, float(mis))


def solve_many(case: NetworkCase, p_spec: np.ndarray, q_spec: np.ndarray,
               start: StateVector, opts: PfOptions | None = None,
               adm: AdmittanceMatrix | None = None):
    """Solve a batch of injection vectors from a common start.

    ``p_spec`` is (S, n_pvpq) and ``q_spec`` is (S, n_pq). Returns
    ``(vm, va, converged, iterations, max_mismatch)`` with leading dim S.
    Failures (divergence, singular Jacobians) are reported per sample, never
    raised. Results are independent of internal batching.
    """
    opts = opts or PfOptions()
    ix = indexing(case)
    adm = adm or build_admittance(case)
    s = p_spec.shape[0]
    if case.n_bus > opts.dense_limit:
        vm = np.empty((s, case.n_bus))
        va = np.empty((s, case.n_bus))
        conv = np.zeros(s, dtype=bool)
        iters = np.zeros(s, dtype=int)
        mis = np.empty(s)
        for i in range(s):
            vm[i], va[i], conv[i], iters[i], mis[i] = _solve_sparse_single(
                case, adm.complex, p_spec[i], q_spec[i], start.vm.copy(),
                start.va.copy(), ix, opts, strict=False)
        return vm, va, conv, iters, mis

    ybus = adm.complex.toarray()
    ns = ix.n_state
    chunk = max(1, min(256, int(5e6 / max(ns * ns, 1))))
    outs = []
    for lo in range(0, s, chunk):
        hi = min(lo + chunk, s)
        vm0 = np.repeat(start.vm[None, :], hi - lo, axis=0)
        va0 = np.repeat(start.va[None, :], hi - lo, axis=0)
        outs.append(_solve_dense_batch(case, ybus, p_spec[lo:hi], q_spec[lo:hi],
                                       vm0, va0, ix, opts, strict=False))
    vm = np.concatenate([o[0] for o in outs])
    va = np.concatenate([o[1] for o in outs])
    conv = np.concatenate([o[2] for o in outs])
    iters = np.concatenate([o[3] for o in outs])
    mis = np.concatenate([o[4] for o in outs])
    return vm, va, conv, iters, mis
