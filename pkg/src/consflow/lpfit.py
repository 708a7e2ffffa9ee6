"""Conservative linear and piecewise linear fits via linear programming.

A conservative model over- or under-estimates the sampled quantity on every
training sample. Because the sign constraint fixes each residual's sign,
the l1 objective is itself linear in the coefficients, so no slack
variables are introduced. The piecewise model adds, on top of the global
affine part, one continuous piecewise linear term per rotated curvature
direction; continuity ties the region intercepts to the per-direction
slopes, leaving ``n_inj + 2 + N*(M+1)`` decision variables regardless of
how many regions the segment grid has.
"""

from __future__ import annotations

import enum
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import simplex
from .sampling import SampleSet, region_census, sample_sufficiency
from .sensitivity import DirectionBasis, basis_from_dict, rotate


class FitError(RuntimeError):
    """A fit cannot be formed from the given samples and settings."""


class Mode(enum.Enum):
    OVER = "over"
    UNDER = "under"


@dataclass
class LinearProgram:
    """min c'z  s.t.  a_ub z <= b_ub,  a_eq z = b_eq,  bounds on z."""

    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    a_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    bounds: list[tuple[float | None, float | None]] | None = None

    @property
    def n_vars(self) -> int:
        return len(self.c)


def solve_lp(lp: LinearProgram) -> tuple[np.ndarray, float]:
    """Solve to an optimal vertex; deterministic for identical inputs.

    Equalities and bounds are folded into the inequality system; infeasible
    and unbounded problems raise distinct errors from :mod:`simplex`.
    """
    rows = [np.atleast_2d(lp.a_ub)] if lp.a_ub is not None and len(lp.a_ub) else []
    rhs = [np.atleast_1d(lp.b_ub)] if lp.b_ub is not None and len(lp.b_ub) else []
    if lp.a_eq is not None and len(lp.a_eq):
        eq = np.atleast_2d(lp.a_eq)
        veq = np.atleast_1d(lp.b_eq)
        rows += [eq, -eq]
        rhs += [veq, -veq]
    if lp.bounds is not None:
        n = lp.n_vars
        for j, (lo, hi) in enumerate(lp.bounds):
            if lo is not None:
                e = np.zeros(n)
                e[j] = -1.0
                rows.append(e[None, :])
                rhs.append(np.array([-lo]))
            if hi is not None:
                e = np.zeros(n)
                e[j] = 1.0
                rows.append(e[None, :])
                rhs.append(np.array([hi]))
    a = np.vstack(rows) if rows else np.empty((0, lp.n_vars))
    u = np.concatenate(rhs) if rhs else np.empty(0)
    res = simplex.solve_inequality_form(lp.c, a, u)
    return res.z, res.objective


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------

@dataclass
class ClaModel:
    a0: float
    a1: np.ndarray
    mode: Mode
    target: int
    training: dict = field(default_factory=dict)
    fit_seconds: float = 0.0  # in-memory only, never serialized

    def predict(self, w: np.ndarray) -> np.ndarray:
        w = np.atleast_2d(np.asarray(w, dtype=float))
        return self.a0 + w @ self.a1


@dataclass
class Breakpoints:
    """Sorted interior breakpoints per direction plus the training range."""

    per_direction: list[np.ndarray]
    t_min: np.ndarray
    t_max: np.ndarray

    @property
    def n_dirs(self) -> int:
        return len(self.per_direction)

    @property
    def n_interior(self) -> int:
        return len(self.per_direction[0]) if self.per_direction else 0


@dataclass
class CplaModel:
    a0: float
    a1: np.ndarray
    basis: DirectionBasis
    breakpoints: Breakpoints
    slopes: np.ndarray  # (N, M+1)
    base_intercept: float
    mode: Mode
    target: int
    training: dict = field(default_factory=dict)
    fit_seconds: float = 0.0

    def predict(self, w: np.ndarray) -> np.ndarray:
        return predict(self, w)


@dataclass
class EvalReport:
    mean_abs_error: float
    max_error: float
    violation_count: int
    error_reduction_vs_cla: float | None
    timing: float


# ---------------------------------------------------------------------------
# Conservative linear fit
# ---------------------------------------------------------------------------

def _conservative_lp(phi: np.ndarray, gamma: np.ndarray, mode: Mode,
                     extra_rows: np.ndarray | None = None,
                     extra_rhs: np.ndarray | None = None) -> LinearProgram:
    """LP shared by both model classes: mean signed residual objective with
    one conservativeness row per sample."""
    mean_phi = phi.mean(axis=0)
    if mode is Mode.OVER:
        c = mean_phi  # minimize mean(h - gamma)
        a = -phi
        u = -gamma
    else:
        c = -mean_phi  # minimize mean(gamma - h)
        a = phi
        u = gamma.copy()
    if extra_rows is not None and len(extra_rows):
        a = np.vstack([a, extra_rows])
        u = np.concatenate([u, extra_rhs])
    return LinearProgram(c=c, a_ub=a, b_ub=u)


def _center(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shift to zero mean and scale to unit spread, exactly invertible.

    Centering is a pure reparameterization of the fitting problem; it keeps
    the constraint rows well-spread so the simplex does not crawl along
    nearly parallel sample rows.
    """
    mean = x.mean(axis=0)
    spread = np.abs(x - mean).max(axis=0)
    spread = np.where(spread > 1e-300, spread, 1.0)
    return (x - mean) / spread, mean, spread


def fit_cla(samples: SampleSet, target: int, mode: Mode) -> ClaModel:
    """Best l1 conservative hyperplane through the sampled injections."""
    w = samples.injections
    gamma = samples.gamma_for(target)
    s, n_inj = w.shape
    if s < n_inj + 1:
        warnings.warn(f"only {s} samples for {n_inj + 1} coefficients; "
                      "fit will interpolate", stacklevel=2)
    t0 = time.perf_counter()
    w_std, w_mean, w_scale = _center(w)
    g_mean = gamma.mean()
    phi = np.hstack([np.ones((s, 1)), w_std])
    lp = _conservative_lp(phi, gamma - g_mean, mode)
    z, _ = solve_lp(lp)
    a1 = z[1:] / w_scale
    a0 = float(z[0] + g_mean - a1 @ w_mean)
    model = ClaModel(a0=a0, a1=a1, mode=mode, target=target,
                     training={"case_hash": samples.case_hash, "S": s,
                               "seed": samples.seed})
    model.fit_seconds = time.perf_counter() - t0
    model.training["loss"] = float(np.mean(np.abs(gamma - model.predict(w))))
    return model


# ---------------------------------------------------------------------------
# Breakpoints and segments
# ---------------------------------------------------------------------------

def make_breakpoints(rotated: np.ndarray, n_interior: int) -> Breakpoints:
    """Evenly partition each direction's training range into M+1 segments."""
    if n_interior < 0:
        raise ValueError("breakpoint count must be >= 0")
    t = np.atleast_2d(np.asarray(rotated, dtype=float))
    lo = t.min(axis=0)
    hi = t.max(axis=0)
    per_direction = []
    for k in range(t.shape[1]):
        if n_interior > 0 and hi[k] - lo[k] <= 1e-14 * max(1.0, abs(hi[k])):
            raise FitError(f"degenerate direction {k}: zero training width")
        per_direction.append(np.linspace(lo[k], hi[k], n_interior + 2)[1:-1])
    return Breakpoints(per_direction=per_direction, t_min=lo, t_max=hi)


def assign_segments(t: np.ndarray, bp: Breakpoints) -> np.ndarray:
    """Segment multi-index per direction; bins are left-closed, ties go
    right, and out-of-range values clamp to the edge segments."""
    t = np.atleast_2d(np.asarray(t, dtype=float))
    out = np.empty(t.shape, dtype=int)
    for k in range(bp.n_dirs):
        out[:, k] = np.searchsorted(bp.per_direction[k], t[:, k], side="right")
    return out if t.ndim > 1 else out[0]


def _intercept_prefix(bp: Breakpoints, slopes: np.ndarray) -> list[np.ndarray]:
    """Per direction: prefix[b] = sum_{j<b} t_k^j (slope_j - slope_{j+1})."""
    prefixes = []
    for k in range(bp.n_dirs):
        pts = bp.per_direction[k]
        sl = slopes[k]
        steps = pts * (sl[:-1] - sl[1:]) if len(pts) else np.empty(0)
        prefixes.append(np.concatenate([[0.0], np.cumsum(steps)]))
    return prefixes


def reconstruct_intercept(model: CplaModel, b) -> float:
    """Region intercept implied by continuity for segment multi-index ``b``."""
    b = np.atleast_1d(np.asarray(b, dtype=int))
    prefixes = _intercept_prefix(model.breakpoints, model.slopes)
    return float(model.base_intercept +
                 sum(prefixes[k][b[k]] for k in range(model.breakpoints.n_dirs)))


def predict(model: CplaModel, w: np.ndarray) -> np.ndarray:
    """Model value at full injection vectors (rows of ``w``)."""
    w2 = np.atleast_2d(np.asarray(w, dtype=float))
    t = rotate(w2, model.basis)
    b = assign_segments(t, model.breakpoints)
    out = model.a0 + w2 @ model.a1 + model.base_intercept
    prefixes = _intercept_prefix(model.breakpoints, model.slopes)
    for k in range(model.breakpoints.n_dirs):
        out = out + prefixes[k][b[:, k]] + model.slopes[k][b[:, k]] * t[:, k]
    return out if np.asarray(w).ndim > 1 else out[0]


# ---------------------------------------------------------------------------
# Conservative piecewise linear fit
# ---------------------------------------------------------------------------

def _cpla_rows(w: np.ndarray, t: np.ndarray, b: np.ndarray,
               bp: Breakpoints) -> np.ndarray:
    """Coefficient matrix of the model value in the reduced variables
    [a0, a1, base intercept, slopes per direction/segment]."""
    s, n_inj = w.shape
    n_dirs = bp.n_dirs
    m1 = bp.n_interior + 1
    phi = np.zeros((s, n_inj + 2 + n_dirs * m1))
    phi[:, 0] = 1.0
    phi[:, 1:1 + n_inj] = w
    phi[:, 1 + n_inj] = 1.0
    rows = np.arange(s)
    for k in range(n_dirs):
        off = n_inj + 2 + k * m1
        phi[rows, off + b[:, k]] += t[:, k]
        pts = bp.per_direction[k]
        for j, point in enumerate(pts):
            hit = b[:, k] > j  # samples whose intercept telescopes past j
            phi[rows[hit], off + j] += point
            phi[rows[hit], off + j + 1] -= point
    return phi


@dataclass
class CplaAssembly:
    """Fitting LP plus everything needed to map its solution back to the
    original injection units."""

    lp: LinearProgram
    breakpoints: Breakpoints  # original rotated units
    rotated: np.ndarray  # (S, N), original units
    w_mean: np.ndarray
    w_scale: np.ndarray
    t_mean: np.ndarray
    t_scale: np.ndarray
    gamma_mean: float


def build_cpla_lp(samples: SampleSet, basis: DirectionBasis, n_interior: int,
                  target: int, mode: Mode, regularize: bool = False
                  ) -> CplaAssembly:
    """Assemble the reduced-variable fitting LP (exposed for inspection).

    The LP works on centered/scaled features; :func:`fit_cpla` undoes the
    transformation on the solved coefficients.
    """
    w = samples.injections
    gamma = samples.gamma_for(target)
    t = rotate(w, basis)
    bp = make_breakpoints(t, n_interior)
    b = assign_segments(t, bp)

    w_std, w_mean, w_scale = _center(w)
    t_std, t_mean, t_scale = _center(t)
    bp_std = Breakpoints(
        per_direction=[(p - t_mean[k]) / t_scale[k]
                       for k, p in enumerate(bp.per_direction)],
        t_min=(bp.t_min - t_mean) / t_scale,
        t_max=(bp.t_max - t_mean) / t_scale)
    g_mean = gamma.mean()
    phi = _cpla_rows(w_std, t_std, b, bp_std)

    extra_rows, extra_rhs = None, None
    if regularize:
        n_inj = w.shape[1]
        m1 = n_interior + 1
        rows = []
        for k in range(basis.n_dirs):
            off = n_inj + 2 + k * m1
            for j in range(n_interior):
                row = np.zeros(phi.shape[1])
                if basis.signs[k] >= 0:  # convex: slopes non-decreasing
                    row[off + j] = 1.0
                    row[off + j + 1] = -1.0
                else:  # concave: non-increasing
                    row[off + j] = -1.0
                    row[off + j + 1] = 1.0
                rows.append(row)
        if rows:
            extra_rows = np.vstack(rows)
            extra_rhs = np.zeros(len(rows))

    lp = _conservative_lp(phi, gamma - g_mean, mode, extra_rows, extra_rhs)
    return CplaAssembly(lp=lp, breakpoints=bp, rotated=t, w_mean=w_mean,
                        w_scale=w_scale, t_mean=t_mean, t_scale=t_scale,
                        gamma_mean=g_mean)


def fit_cpla(samples: SampleSet, basis: DirectionBasis, n_interior: int,
             target: int, mode: Mode, regularize: bool = False,
             eps: float = 0.01) -> CplaModel:
    """Fit the piecewise conservative model over the rotated directions.

    Without regularization the segment grid must have no empty regions (and
    a warning is issued below the sample-sufficiency bound); with
    regularization the per-direction slope sequences are constrained
    monotone according to each direction's curvature sign.
    """
    t0 = time.perf_counter()
    asm = build_cpla_lp(samples, basis, n_interior, target, mode, regularize)
    lp, bp, t = asm.lp, asm.breakpoints, asm.rotated
    census = region_census(t, bp)
    if not regularize:
        n_regions = int(np.prod(census.counts.shape))
        if census.empties:
            empty_idx = np.argwhere(census.counts == 0)
            shown = ", ".join(str(tuple(row)) for row in empty_idx[:10])
            more = "" if len(empty_idx) <= 10 else f" (+{len(empty_idx) - 10} more)"
            raise FitError(
                f"{census.empties} of {n_regions} regions have no samples: "
                f"{shown}{more}; draw more samples or enable regularization")
        s_min = sample_sufficiency(n_regions, eps)
        if samples.n_samples < s_min:
            warnings.warn(
                f"{samples.n_samples} samples is below the sufficiency bound "
                f"{s_min} for {n_regions} regions at eps={eps}", stacklevel=2)

    z, _ = solve_lp(lp)
    n_inj = samples.injections.shape[1]
    m1 = n_interior + 1
    # undo the feature standardization
    a1 = z[1:1 + n_inj] / asm.w_scale
    slopes = z[n_inj + 2:].reshape(basis.n_dirs, m1) / asm.t_scale[:, None]
    base = float(z[1 + n_inj] - asm.t_mean @ slopes[:, 0])
    a0 = float(z[0] + asm.gamma_mean - a1 @ asm.w_mean)
    model = CplaModel(a0=a0, a1=a1, basis=basis,
                      breakpoints=bp, slopes=slopes,
                      base_intercept=base, mode=mode,
                      target=target,
                      training={"case_hash": samples.case_hash,
                                "S": samples.n_samples, "seed": samples.seed,
                                "M": n_interior, "N": basis.n_dirs})
    model.fit_seconds = time.perf_counter() - t0
    model.training["loss"] = float(np.mean(np.abs(
        samples.gamma_for(target) - predict(model, samples.injections))))
    return model


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(model, samples: SampleSet, baseline: ClaModel | None = None,
             tol: float = 1e-9) -> EvalReport:
    """Per-sample error statistics and a strict conservativeness check."""
    t0 = time.perf_counter()
    gamma = samples.gamma_for(model.target)
    pred = model.predict(samples.injections)
    err = gamma - pred
    if model.mode is Mode.OVER:
        violations = int((err > tol).sum())
    else:
        violations = int((err < -tol).sum())
    mean_abs = float(np.mean(np.abs(err)))
    reduction = None
    if baseline is not None:
        base_err = float(np.mean(np.abs(gamma - baseline.predict(samples.injections))))
        if base_err > 0:
            reduction = 100.0 * (base_err - mean_abs) / base_err
    return EvalReport(mean_abs_error=mean_abs, max_error=float(np.abs(err).max()),
                      violation_count=violations,
                      error_reduction_vs_cla=reduction,
                      timing=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

def model_to_dict(model) -> dict:
    doc = {
        "mode": model.mode.value,
        "target": model.target,
        "a0": model.a0,
        "a1": np.asarray(model.a1).tolist(),
        "training": {k: model.training[k] for k in sorted(model.training)},
    }
    if isinstance(model, CplaModel):
        doc["type"] = "cpla"
        doc["basis"] = {"vectors": model.basis.vectors.tolist(),
                        "values": model.basis.values.tolist()}
        doc["breakpoints"] = [bp.tolist() for bp in model.breakpoints.per_direction]
        doc["t_range"] = [[float(a), float(b)] for a, b in
                          zip(model.breakpoints.t_min, model.breakpoints.t_max)]
        doc["slopes"] = model.slopes.tolist()
        doc["base_intercept"] = model.base_intercept
    else:
        doc["type"] = "cla"
        doc["basis"] = None
        doc["breakpoints"] = None
        doc["slopes"] = None
        doc["base_intercept"] = None
    return doc


def model_from_dict(doc: dict):
    mode = Mode(doc["mode"])
    if doc["type"] == "cla":
        return ClaModel(a0=doc["a0"], a1=np.asarray(doc["a1"], dtype=float),
                        mode=mode, target=doc["target"],
                        training=dict(doc.get("training", {})))
    basis = basis_from_dict({"eigenvalues": doc["basis"]["values"],
                             "vectors": doc["basis"]["vectors"]})
    t_range = np.asarray(doc["t_range"], dtype=float)
    bp = Breakpoints(
        per_direction=[np.asarray(p, dtype=float) for p in doc["breakpoints"]],
        t_min=t_range[:, 0], t_max=t_range[:, 1])
    return CplaModel(a0=doc["a0"], a1=np.asarray(doc["a1"], dtype=float),
                     basis=basis, breakpoints=bp,
                     slopes=np.asarray(doc["slopes"], dtype=float),
                     base_intercept=doc["base_intercept"], mode=mode,
                     target=doc["target"], training=dict(doc.get("training", {})))


def save_model(path, model, extra: dict | None = None) -> None:
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
