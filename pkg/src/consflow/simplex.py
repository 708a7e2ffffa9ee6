"""Dense revised simplex for inequality-form linear programs.

Fitting problems here have few variables and very many constraints
(``min c'z  s.t.  A z <= u`` with ``A`` of shape (m, n), m >> n), so the
solver works on the standard-form partner ``min u'w  s.t.  A'w = -c, w >= 0``
whose basis stays n x n; the primal optimum is read off the final simplex
multipliers. Pricing is Dantzig's rule with a permanent switch to Bland's
rule if the objective stalls, which guarantees termination on degenerate
problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LpError(RuntimeError):
    """Numerical failure or iteration limit inside the solver."""


class LpInfeasibleError(LpError):
    """The constraint system admits no solution."""


class LpUnboundedError(LpError):
    """The objective decreases without bound over the feasible set."""


@dataclass
class LpResult:
    z: np.ndarray
    objective: float
    iterations: int


_FEAS_TOL = 1e-9  # phase-1 residual considered zero
_PIVOT_TOL = 1e-9  # smallest usable pivot / ratio-test denominator
_COST_TOL = 1e-10  # reduced-cost optimality threshold
_STALL_LIMIT = 300  # non-improving iterations before Bland's rule
_REFACTOR_EVERY = 100


class _Partner:
    """Standard-form problem min f'w, G w = h, w >= 0 with artificials."""

    def __init__(self, g: np.ndarray, h: np.ndarray, f: np.ndarray):
        self.n, self.m = g.shape
        flip = np.where(h < 0, -1.0, 1.0)
        self.g = g * flip[:, None]
        self.h = h * flip
        self.flip = flip
        self.f = f
        self.basis = np.arange(self.m, self.m + self.n)  # artificials
        self.binv = np.eye(self.n)
        self.pinned = np.zeros(self.n, dtype=bool)  # rows kept on artificials
        self.iterations = 0
        norms = np.linalg.norm(self.g, axis=0)
        self.col_norm = np.where(norms > _PIVOT_TOL, norms, 1.0)

    def column(self, j: int) -> np.ndarray:
        if j < self.m:
            return self.g[:, j]
        e = np.zeros(self.n)
        e[j - self.m] = 1.0
        return e

    def basis_matrix(self) -> np.ndarray:
        cols = np.empty((self.n, self.n))
        for i, j in enumerate(self.basis):
            cols[:, i] = self.column(j)
        return cols

    def refactorize(self) -> None:
        try:
            self.binv = np.linalg.inv(self.basis_matrix())
        except np.linalg.LinAlgError:
            raise LpError("singular basis during refactorization") from None

    def x_basic(self) -> np.ndarray:
        return self.binv @ self.h

    def costs(self, phase: int) -> np.ndarray:
        if phase == 1:
            return np.concatenate([np.zeros(self.m), np.ones(self.n)])
        return np.concatenate([self.f, np.zeros(self.n)])

    def multipliers(self, phase: int) -> np.ndarray:
        cb = self.costs(phase)[self.basis]
        return self.binv.T @ cb

    def _pivot(self, r: int, j: int) -> None:
        w = self.binv @ self.column(j)
        piv = w[r]
        if abs(piv) < _PIVOT_TOL:
            raise LpError("pivot element vanished")
        self.binv[r, :] /= piv
        for i in range(self.n):
            if i != r and w[i] != 0.0:
                self.binv[i, :] -= w[i] * self.binv[r, :]
        self.basis[r] = j
        self.iterations += 1
        if self.iterations % _REFACTOR_EVERY == 0:
            self.refactorize()

    def run_phase(self, phase: int, max_iter: int) -> str:
        """Iterate to optimality of the phase objective.

        Pricing is norm-scaled Dantzig; after a long degenerate plateau the
        loop enters a strict Bland's-rule burst (lowest index in and out,
        which cannot cycle) and leaves it on the first strict improvement.
        Returns "optimal" or "unbounded" (phase 2 only).
        """
        bland = False
        stall = 0
        best = np.inf
        in_basis = np.zeros(self.m + self.n, dtype=bool)
        in_basis[self.basis] = True

        while True:
            if self.iterations >= max_iter:
                raise LpError(f"iteration limit {max_iter} exceeded")
            pi = self.multipliers(phase)
            # price real columns only; artificials never re-enter
            d = self.costs(phase)[:self.m] - pi @ self.g
            d[in_basis[:self.m]] = np.inf
            if bland:
                cands = np.flatnonzero(d < -_COST_TOL)
                if len(cands) == 0:
                    return "optimal"
                j = int(cands[0])
            else:
                j = int(np.argmin(d / self.col_norm))
                if d[j] >= -_COST_TOL:
                    return "optimal"

            w = self.binv @ self.column(j)
            xb = self.x_basic()
            pos = w > _PIVOT_TOL
            if phase == 2:
                # a pinned artificial must never grow positive
                art = self.basis >= self.m
                pos |= art & (np.abs(w) > _PIVOT_TOL)
            if not pos.any():
                if phase == 1:
                    raise LpError("phase-1 objective unbounded below")
                return "unbounded"
            ratios = np.where(pos, xb / np.where(pos, np.abs(w), 1.0), np.inf)
            theta = ratios.min()
            ties = np.flatnonzero(ratios <= theta + 1e-12 * (1.0 + abs(theta)))
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(w[ties]))])

            obj = self.costs(phase)[self.basis] @ xb
            if obj < best - 1e-12 * (1.0 + abs(best)):
                best = obj
                stall = 0
                bland = False
            else:
                stall += 1
                if stall > _STALL_LIMIT:
                    bland = True

            in_basis[self.basis[r]] = False
            in_basis[j] = True
            self._pivot(r, j)

    def drive_out_artificials(self) -> None:
        """After phase 1, swap basic artificials for real columns when the
        row is not redundant; otherwise pin the artificial at zero."""
        in_basis = np.zeros(self.m + self.n, dtype=bool)
        in_basis[self.basis] = True
        for r in range(self.n):
            if self.basis[r] < self.m:
                continue
            row = self.binv[r, :] @ self.g
            row[in_basis[:self.m]] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-7:
                in_basis[self.basis[r]] = False
                in_basis[j] = True
                self._pivot(r, j)
            else:
                self.pinned[r] = True


def _solve_partner(g, h, f, max_iter):
    part = _Partner(g, h, f)
    part.run_phase(1, max_iter)
    resid = float(part.costs(1)[part.basis] @ part.x_basic())
    scale = 1.0 + float(np.abs(h).max(initial=0.0))
    if resid > _FEAS_TOL * scale:
        return part, "infeasible"
    part.drive_out_artificials()
    status = part.run_phase(2, max_iter)
    return part, status


def _solve_direct(c: np.ndarray, a: np.ndarray, u: np.ndarray,
                  max_iter: int | None = None) -> LpResult:
    m, n = a.shape
    if m == 0:
        if np.any(c != 0.0):
            raise LpUnboundedError("unbounded: no constraints and nonzero objective")
        return LpResult(z=np.zeros(n), objective=0.0, iterations=0)

    # scale partner rows (one per primal variable) to unit magnitude
    col_scale = np.abs(a).max(axis=0)
    col_scale[col_scale == 0.0] = 1.0
    dr = 1.0 / col_scale
    g = (a * dr[None, :]).T
    h = -c * dr
    if max_iter is None:
        max_iter = 20000 + 50 * n

    part, status = _solve_partner(g, h, np.asarray(u, dtype=float), max_iter)
    if status == "unbounded":
        raise LpInfeasibleError("infeasible constraint system")
    if status == "infeasible":
        # partner has no feasible point: primal is unbounded if it is
        # feasible at all; probe with min t s.t. A z - t <= u, t >= 0
        c2 = np.zeros(n + 1)
        c2[-1] = 1.0
        a2 = np.hstack([a, -np.ones((m, 1))])
        a2 = np.vstack([a2, np.concatenate([np.zeros(n), [-1.0]])])
        u2 = np.concatenate([u, [0.0]])
        probe = _solve_direct(c2, a2, u2, max_iter=max_iter)
        if probe.objective <= 1e-7 * (1.0 + np.abs(u).max(initial=0.0)):
            raise LpUnboundedError("objective unbounded below")
        raise LpInfeasibleError("infeasible constraint system")

    pi = part.multipliers(2)
    z = part.flip * pi  # undo row sign flips
    z = dr * z  # undo scaling
    return LpResult(z=z, objective=float(c @ z), iterations=part.iterations)


def solve_inequality_form(c: np.ndarray, a: np.ndarray, u: np.ndarray,
                          max_iter: int | None = None) -> LpResult:
    """Minimize ``c'z`` over ``A z <= u`` with free variables.

    Small systems are solved outright. When constraints vastly outnumber
    variables, a bounded working set of rows is solved and violated rows
    are pulled in until the subset optimum is feasible for every row, at
    which point it is optimal for the full problem (the subset problem is
    a relaxation). Raises :class:`LpInfeasibleError` /
    :class:`LpUnboundedError` for the two failure modes, distinguished
    exactly.
    """
    c = np.asarray(c, dtype=float)
    a = np.asarray(a, dtype=float).reshape(-1, len(c))
    u = np.asarray(u, dtype=float)
    if not (np.isfinite(c).all() and np.isfinite(a).all() and np.isfinite(u).all()):
        raise LpError("non-finite entries in LP data")
    m, n = a.shape
    seed_size = 3 * n + 50
    if m <= 2 * seed_size:
        return _solve_direct(c, a, u, max_iter)

    # deterministic seed set: per-column extremes plus a leading block
    picks = [np.argmin(a, axis=0), np.argmax(a, axis=0)]
    work = np.unique(np.concatenate(picks + [np.arange(min(m, seed_size))]))
    in_work = np.zeros(m, dtype=bool)
    in_work[work] = True
    total_iters = 0
    feas_tol = 1e-10 * (1.0 + float(np.abs(u).max()))

    for _ in range(200):
        rows = np.flatnonzero(in_work)
        try:
            res = _solve_direct(c, a[rows], u[rows], max_iter)
        except LpUnboundedError:
            # the subset may simply miss the binding rows; grow it
            missing = np.flatnonzero(~in_work)
            if len(missing) == 0:
                raise
            in_work[missing[:max(len(missing) // 2, seed_size)]] = True
            continue
        total_iters += res.iterations
        viol = a @ res.z - u
        worst = np.flatnonzero(viol > feas_tol)
        if len(worst) == 0:
            return LpResult(z=res.z, objective=res.objective,
                            iterations=total_iters)
        order = worst[np.argsort(-viol[worst], kind="stable")]
        in_work[order[:max(n, 64)]] = True
    raise LpError("working-set loop failed to converge")
