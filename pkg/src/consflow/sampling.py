"""Operating-range definition, uniform injection sampling, and batch solving.

Samples are drawn per-sample-index from a counter-based generator keyed by
``(seed, index)``, and solved over a fixed chunk grid, so results are
bit-identical no matter how many workers are used or how work is scheduled.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import acpf
from .network import NetworkCase, case_hash


class SamplingError(RuntimeError):
    """Raised when a sampling run cannot produce a usable sample set."""


@dataclass
class OperatingRange:
    """Uniform sampling box, stored both as load bounds and as the induced
    net-injection box over the [P non-slack; Q at PQ] coordinates."""

    fraction_lo: float
    fraction_hi: float
    pd_lo: np.ndarray  # MW per bus (full length)
    pd_hi: np.ndarray
    qd_lo: np.ndarray  # MVAr per bus
    qd_hi: np.ndarray
    inj_lo: np.ndarray  # pu, length n_inj
    inj_hi: np.ndarray

    @property
    def n_inj(self) -> int:
        return len(self.inj_lo)


@dataclass
class SampleSet:
    """Converged injection samples and their solved target voltages."""

    injections: np.ndarray  # (S, n_inj) pu
    target_buses: list[int]  # external ids
    gamma: np.ndarray  # (S, n_targets) pu voltage magnitudes
    seed: int
    dropped: int
    case_hash: str
    rotated: np.ndarray | None = None  # (S, N) once a basis exists

    @property
    def n_samples(self) -> int:
        return self.injections.shape[0]

    def gamma_for(self, bus: int) -> np.ndarray:
        try:
            j = self.target_buses.index(bus)
        except ValueError:
            raise KeyError(f"bus {bus} is not a target of this sample set") from None
        return self.gamma[:, j]


@dataclass
class RegionCensus:
    counts: np.ndarray  # shape (M_1+1, ..., M_N+1)
    empties: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def make_range(case: NetworkCase, fraction_lo: float, fraction_hi: float) -> OperatingRange:
    """Operating box: every load scaled between the two fractions of nominal.

    Both active and reactive demand scale with the same fractions, so each
    bus keeps its nominal power factor. Generator schedules are untouched;
    the injection box reflects load variation only.
    """
    if not 0 <= fraction_lo <= fraction_hi:
        raise ValueError("need 0 <= fraction_lo <= fraction_hi")
    ix = acpf.indexing(case)
    idx = case.index_of()
    n = case.n_bus

    pd = np.array([b.pd for b in case.buses])
    qd = np.array([b.qd for b in case.buses])
    ends_p = np.stack([fraction_lo * pd, fraction_hi * pd])
    ends_q = np.stack([fraction_lo * qd, fraction_hi * qd])
    pd_lo, pd_hi = ends_p.min(axis=0), ends_p.max(axis=0)
    qd_lo, qd_hi = ends_q.min(axis=0), ends_q.max(axis=0)

    pg = np.zeros(n)
    qg = np.zeros(n)
    for g in case.gens:
        if g.status:
            pg[idx[g.bus]] += g.pg
            qg[idx[g.bus]] += g.qg

    # net injection = (gen - load) / base; load varies over [lo, hi]
    p_inj_lo = (pg - pd_hi) / case.base_mva
    p_inj_hi = (pg - pd_lo) / case.base_mva
    q_inj_lo = (qg - qd_hi) / case.base_mva
    q_inj_hi = (qg - qd_lo) / case.base_mva

    inj_lo = np.concatenate([p_inj_lo[ix.pvpq], q_inj_lo[ix.pq]])
    inj_hi = np.concatenate([p_inj_hi[ix.pvpq], q_inj_hi[ix.pq]])
    return OperatingRange(fraction_lo=fraction_lo, fraction_hi=fraction_hi,
                          pd_lo=pd_lo, pd_hi=pd_hi, qd_lo=qd_lo, qd_hi=qd_hi,
                          inj_lo=inj_lo, inj_hi=inj_hi)


def draw_samples(rng_box: OperatingRange, n_samples: int, seed: int) -> np.ndarray:
    """I.i.d. uniform injection vectors over the box, (S, n_inj).

    Sample ``i`` is a pure function of ``(seed, i)`` via a Philox stream
    keyed per index, so the matrix does not depend on generation order.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    lo, hi = rng_box.inj_lo, rng_box.inj_hi
    width = hi - lo
    out = np.empty((n_samples, rng_box.n_inj))
    for i in range(n_samples):
        gen = np.random.Generator(np.random.Philox(key=[seed, i]))
        out[i] = lo + gen.random(rng_box.n_inj) * width
    return out


def _chunk_grid(n_rows: int, n_state: int) -> list[tuple[int, int]]:
    """Fixed chunk boundaries, a pure function of problem size only."""
    chunk = max(1, min(256, int(5e6 / max(n_state * n_state, 1))))
    return [(lo, min(lo + chunk, n_rows)) for lo in range(0, n_rows, chunk)]


def solve_samples(case: NetworkCase, injections: np.ndarray, targets: list[int],
                  seed: int = 0, opts: acpf.PfOptions | None = None,
                  n_jobs: int = 1, start: str = "warm") -> SampleSet:
    """Solve every injection sample once and record all target voltages.

    Non-converged samples are dropped (and counted); if more than 10% fail
    the whole run is aborted since the operating range is likely infeasible.
    Work is dispatched over a fixed chunk grid, so ``n_jobs`` changes only
    wall-clock time, never results.
    """
    opts = opts or acpf.PfOptions()
    ix = acpf.indexing(case)
    idx = case.index_of()
    for bus in targets:
        if bus not in idx:
            raise ValueError(f"unknown target bus {bus}")
    adm = None
    from .network import build_admittance

    adm = build_admittance(case)
    if start == "flat":
        start_state = acpf.flat_start(case)
    elif start == "nominal":
        start_state = acpf.nominal_start(case)
    elif start == "warm":
        base = acpf.solve_power_flow(case, acpf.nominal_injections(case, ix),
                                     acpf.nominal_start(case), opts, adm)
        start_state = base.state if base.converged else acpf.nominal_start(case)
    else:
        raise ValueError(f"unknown start strategy {start!r}")

    s = injections.shape[0]
    npvpq = len(ix.pvpq)
    p = injections[:, :npvpq]
    q = injections[:, npvpq:]
    grid = _chunk_grid(s, ix.n_state)

    def run(span: tuple[int, int]):
        lo, hi = span
        return acpf.solve_many(case, p[lo:hi], q[lo:hi], start_state, opts, adm)

    if n_jobs > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, grid))
    else:
        results = [run(span) for span in grid]

    vm = np.concatenate([r[0] for r in results])
    conv = np.concatenate([r[2] for r in results])

    dropped = int((~conv).sum())
    if dropped > 0.1 * s:
        raise SamplingError(
            f"{dropped} of {s} samples failed to converge; "
            "operating range is likely infeasible")

    keep = conv
    cols = [idx[b] for b in targets]
    gamma = vm[np.ix_(keep, cols)] if targets else np.empty((int(keep.sum()), 0))
    return SampleSet(injections=injections[keep], target_buses=list(targets),
                     gamma=gamma, seed=seed, dropped=dropped,
                     case_hash=case_hash(case))


def sample_sufficiency(n_regions: int, eps: float) -> int:
    """Smallest sample count keeping the chance of an empty region near eps.

    Uses the natural-log bound ``S >= C ln(C / eps)``; the exact requirement
    is ``C (1 - 1/C)^S <= eps``.
    """
    if n_regions < 1:
        raise ValueError("n_regions must be >= 1")
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0, 1)")
    return int(np.ceil(n_regions * np.log(n_regions / eps)))


def region_census(rotated: np.ndarray, breakpoints) -> RegionCensus:
    """Count samples in each region of the per-direction segment grid.

    ``breakpoints`` is a sequence of sorted 1-D arrays (one per direction);
    an object with a ``per_direction`` attribute is also accepted. Segment
    assignment is left-closed (ties go right), matching prediction.
    """
    if hasattr(breakpoints, "per_direction"):
        breakpoints = breakpoints.per_direction
    t = np.atleast_2d(np.asarray(rotated, dtype=float))
    n_dirs = t.shape[1]
    if len(breakpoints) != n_dirs:
        raise ValueError("breakpoint directions do not match rotated width")
    shape = tuple(len(bp) + 1 for bp in breakpoints)
    counts = np.zeros(shape, dtype=int)
    flat = np.zeros(t.shape[0], dtype=int)
    stride = 1
    for k in range(n_dirs - 1, -1, -1):
        b = np.searchsorted(np.asarray(breakpoints[k]), t[:, k], side="right")
        flat += b * stride
        stride *= shape[k]
    np.add.at(counts.reshape(-1), flat, 1)
    return RegionCensus(counts=counts, empties=int((counts == 0).sum()))


# ---------------------------------------------------------------------------
# Columnar sample file: one-line JSON header + little-endian float64 blocks
# ---------------------------------------------------------------------------

def save_samples(path, ss: SampleSet) -> None:
    header = {
        "case_hash": ss.case_hash,
        "seed": ss.seed,
        "S": int(ss.n_samples),
        "n_inj": int(ss.injections.shape[1]),
        "targets": list(ss.target_buses),
        "dropped": int(ss.dropped),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for j in range(ss.injections.shape[1]):
            fh.write(np.ascontiguousarray(ss.injections[:, j], dtype="<f8").tobytes())
        for j in range(len(ss.target_buses)):
            fh.write(np.ascontiguousarray(ss.gamma[:, j], dtype="<f8").tobytes())


def load_samples(path) -> SampleSet:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        s, n_inj = header["S"], header["n_inj"]
        targets = list(header["targets"])
        inj = np.empty((s, n_inj))
        for j in range(n_inj):
            inj[:, j] = np.frombuffer(fh.read(8 * s), dtype="<f8")
        gamma = np.empty((s, len(targets)))
        for j in range(len(targets)):
            gamma[:, j] = np.frombuffer(fh.read(8 * s), dtype="<f8")
    return SampleSet(injections=inj, target_buses=targets, gamma=gamma,
                     seed=header["seed"], dropped=header["dropped"],
                     case_hash=header["case_hash"])
