#!/usr/bin/env python3
"""Regenerate the bundled network case files.

Two cases are converted from published test-system data (the Baran & Wu
33-bus feeder and the IEEE 30-bus system). Two synthetic radial feeders
(141 and 2400 buses) are built deterministically here; their load level is
calibrated so the nominal end-of-feeder voltage sits in the 0.91-0.93 pu
range typical of heavily loaded distribution feeders.

Run from the repository root:  python tools/make_cases.py
"""

from __future__ import annotations

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "consflow" / "cases"

# ---------------------------------------------------------------------------
# 33-bus feeder (Baran & Wu 1989), impedances in ohms on 12.66 kV / 10 MVA
# ---------------------------------------------------------------------------

# bus: (Pd kW, Qd kvar)
BW33_LOADS = {
    2: (100, 60), 3: (90, 40), 4: (120, 80), 5: (60, 30), 6: (60, 20),
    7: (200, 100), 8: (200, 100), 9: (60, 20), 10: (60, 20), 11: (45, 30),
    12: (60, 35), 13: (60, 35), 14: (120, 80), 15: (60, 10), 16: (60, 20),
    17: (60, 20), 18: (90, 40), 19: (90, 40), 20: (90, 40), 21: (90, 40),
    22: (90, 40), 23: (90, 50), 24: (420, 200), 25: (420, 200), 26: (60, 25),
    27: (60, 25), 28: (60, 20), 29: (120, 70), 30: (200, 600), 31: (150, 70),
    32: (210, 100), 33: (60, 40),
}

# (from, to, R ohm, X ohm, status)
BW33_BRANCHES = [
    (1, 2, 0.0922, 0.0470, 1), (2, 3, 0.4930, 0.2511, 1),
    (3, 4, 0.3660, 0.1864, 1), (4, 5, 0.3811, 0.1941, 1),
    (5, 6, 0.8190, 0.7070, 1), (6, 7, 0.1872, 0.6188, 1),
    (7, 8, 0.7114, 0.2351, 1), (8, 9, 1.0300, 0.7400, 1),
    (9, 10, 1.0440, 0.7400, 1), (10, 11, 0.1966, 0.0650, 1),
    (11, 12, 0.3744, 0.1238, 1), (12, 13, 1.4680, 1.1550, 1),
    (13, 14, 0.5416, 0.7129, 1), (14, 15, 0.5910, 0.5260, 1),
    (15, 16, 0.7463, 0.5450, 1), (16, 17, 1.2890, 1.7210, 1),
    (17, 18, 0.7320, 0.5740, 1), (2, 19, 0.1640, 0.1565, 1),
    (19, 20, 1.5042, 1.3554, 1), (20, 21, 0.4095, 0.4784, 1),
    (21, 22, 0.7089, 0.9373, 1), (3, 23, 0.4512, 0.3083, 1),
    (23, 24, 0.8980, 0.7091, 1), (24, 25, 0.8960, 0.7011, 1),
    (6, 26, 0.2030, 0.1034, 1), (26, 27, 0.2842, 0.1447, 1),
    (27, 28, 1.0590, 0.9337, 1), (28, 29, 0.8042, 0.7006, 1),
    (29, 30, 0.5075, 0.2585, 1), (30, 31, 0.9744, 0.9630, 1),
    (31, 32, 0.3105, 0.3619, 1), (32, 33, 0.3410, 0.5302, 1),
    # normally open tie lines
    (21, 8, 2.0000, 2.0000, 0), (9, 15, 2.0000, 2.0000, 0),
    (12, 22, 2.0000, 2.0000, 0), (18, 33, 0.5000, 0.5000, 0),
    (25, 29, 0.5000, 0.5000, 0),
]


def emit_case(path: pathlib.Path, name: str, title: str, base_mva: float,
              base_kv: float, bus_rows, gen_rows, branch_rows) -> None:
    lines = [f"function mpc = {name}", f"%{name.upper()}  {title}", "",
             "mpc.version = '2';", "", f"mpc.baseMVA = {base_mva:g};", ""]
    lines.append("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin")
    lines.append("mpc.bus = [")
    for row in bus_rows:
        lines.append("\t" + "\t".join(f"{v:g}" for v in row) + ";")
    lines.append("];")
    lines.append("")
    lines.append("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin")
    lines.append("mpc.gen = [")
    for row in gen_rows:
        lines.append("\t" + "\t".join(f"{v:g}" for v in row) + ";")
    lines.append("];")
    lines.append("")
    lines.append("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax")
    lines.append("mpc.branch = [")
    for row in branch_rows:
        lines.append("\t" + "\t".join(f"{v:.9g}" for v in row) + ";")
    lines.append("];")
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path}")


def make_case33bw() -> None:
    base_mva, base_kv = 10.0, 12.66
    zbase = base_kv ** 2 / base_mva
    bus_rows = []
    for i in range(1, 34):
        pd, qd = BW33_LOADS.get(i, (0, 0))
        btype = 3 if i == 1 else 1
        bus_rows.append([i, btype, pd / 1000.0, qd / 1000.0, 0, 0, 1, 1, 0,
                         base_kv, 1, 1.1, 0.9])
    gen_rows = [[1, 0, 0, 10, -10, 1.0, 100, 1, 10, 0]]
    branch_rows = [
        [f, t, r / zbase, x / zbase, 0, 0, 0, 0, 0, 0, st, -360, 360]
        for f, t, r, x, st in BW33_BRANCHES
    ]
    emit_case(OUT / "case33bw.m", "case33bw",
              "33 bus radial distribution feeder (Baran & Wu)",
              base_mva, base_kv, bus_rows, gen_rows, branch_rows)


# ---------------------------------------------------------------------------
# IEEE 30-bus system, impedances already in per unit on 100 MVA
# ---------------------------------------------------------------------------

IEEE30_BUSES = [
    # id, type, Pd, Qd, Gs, Bs, Vm
    (1, 3, 0.0, 0.0, 0, 0, 1.0), (2, 2, 21.7, 12.7, 0, 0, 1.0),
    (3, 1, 2.4, 1.2, 0, 0, 1.0), (4, 1, 7.6, 1.6, 0, 0, 1.0),
    (5, 1, 94.2, 19.0, 0, 0, 1.0), (6, 1, 0.0, 0.0, 0, 0, 1.0),
    (7, 1, 22.8, 10.9, 0, 0, 1.0), (8, 1, 30.0, 30.0, 0, 0, 1.0),
    (9, 1, 0.0, 0.0, 0, 0, 1.0), (10, 1, 5.8, 2.0, 0, 19.0, 1.0),
    (11, 1, 0.0, 0.0, 0, 0, 1.0), (12, 1, 11.2, 7.5, 0, 0, 1.0),
    (13, 2, 0.0, 0.0, 0, 0, 1.0), (14, 1, 6.2, 1.6, 0, 0, 1.0),
    (15, 1, 8.2, 2.5, 0, 0, 1.0), (16, 1, 3.5, 1.8, 0, 0, 1.0),
    (17, 1, 9.0, 5.8, 0, 0, 1.0), (18, 1, 3.2, 0.9, 0, 0, 1.0),
    (19, 1, 9.5, 3.4, 0, 0, 1.0), (20, 1, 2.2, 0.7, 0, 0, 1.0),
    (21, 1, 17.5, 11.2, 0, 0, 1.0), (22, 1, 0.0, 0.0, 0, 0, 1.0),
    (23, 1, 3.2, 1.6, 0, 0, 1.0), (24, 1, 8.7, 6.7, 0, 4.3, 1.0),
    (25, 1, 0.0, 0.0, 0, 0, 1.0), (26, 1, 3.5, 2.3, 0, 0, 1.0),
    (27, 2, 0.0, 0.0, 0, 0, 1.0), (28, 1, 0.0, 0.0, 0, 0, 1.0),
    (29, 1, 2.4, 0.9, 0, 0, 1.0), (30, 1, 10.6, 1.9, 0, 0, 1.0),
]

IEEE30_GENS = [
    # bus, Pg, Qg, Qmax, Qmin, Vg  (6-generator dispatch variant)
    (1, 23.54, 0.0, 150.0, -20.0, 1.0), (2, 60.97, 0.0, 60.0, -20.0, 1.0),
    (22, 21.59, 0.0, 62.5, -15.0, 1.0), (27, 26.91, 0.0, 48.7, -15.0, 1.0),
    (23, 19.2, 0.0, 40.0, -10.0, 1.0), (13, 37.0, 0.0, 44.7, -15.0, 1.0),
]

IEEE30_BRANCHES = [
    # f, t, r, x, b, ratio
    (1, 2, 0.0192, 0.0575, 0.0528, 0), (1, 3, 0.0452, 0.1652, 0.0408, 0),
    (2, 4, 0.0570, 0.1737, 0.0368, 0), (3, 4, 0.0132, 0.0379, 0.0084, 0),
    (2, 5, 0.0472, 0.1983, 0.0418, 0), (2, 6, 0.0581, 0.1763, 0.0374, 0),
    (4, 6, 0.0119, 0.0414, 0.0090, 0), (5, 7, 0.0460, 0.1160, 0.0204, 0),
    (6, 7, 0.0267, 0.0820, 0.0170, 0), (6, 8, 0.0120, 0.0420, 0.0090, 0),
    (6, 9, 0.0, 0.2080, 0.0, 0.978), (6, 10, 0.0, 0.5560, 0.0, 0.969),
    (9, 11, 0.0, 0.2080, 0.0, 0), (9, 10, 0.0, 0.1100, 0.0, 0),
    (4, 12, 0.0, 0.2560, 0.0, 0.932), (12, 13, 0.0, 0.1400, 0.0, 0),
    (12, 14, 0.1231, 0.2559, 0.0, 0), (12, 15, 0.0662, 0.1304, 0.0, 0),
    (12, 16, 0.0945, 0.1987, 0.0, 0), (14, 15, 0.2210, 0.1997, 0.0, 0),
    (16, 17, 0.0824, 0.1923, 0.0, 0), (15, 18, 0.1070, 0.2185, 0.0, 0),
    (18, 19, 0.0639, 0.1292, 0.0, 0), (19, 20, 0.0340, 0.0680, 0.0, 0),
    (10, 20, 0.0936, 0.2090, 0.0, 0), (10, 17, 0.0324, 0.0845, 0.0, 0),
    (10, 21, 0.0348, 0.0749, 0.0, 0), (10, 22, 0.0727, 0.1499, 0.0, 0),
    (21, 22, 0.0116, 0.0236, 0.0, 0), (15, 23, 0.1000, 0.2020, 0.0, 0),
    (22, 24, 0.1150, 0.1790, 0.0, 0), (23, 24, 0.1320, 0.2700, 0.0, 0),
    (24, 25, 0.1885, 0.3292, 0.0, 0), (25, 26, 0.2544, 0.3800, 0.0, 0),
    (25, 27, 0.1093, 0.2087, 0.0, 0), (28, 27, 0.0, 0.3960, 0.0, 0.968),
    (27, 29, 0.2198, 0.4153, 0.0, 0), (27, 30, 0.3202, 0.6027, 0.0, 0),
    (29, 30, 0.2399, 0.4533, 0.0, 0), (8, 28, 0.0636, 0.2000, 0.0428, 0),
    (6, 28, 0.0169, 0.0599, 0.0130, 0),
]


def make_case30() -> None:
    bus_rows = [[i, t, pd, qd, gs, bs, 1, vm, 0, 132, 1, 1.06, 0.94]
                for i, t, pd, qd, gs, bs, vm in IEEE30_BUSES]
    gen_rows = [[b, pg, qg, qmax, qmin, vg, 100, 1, 360, 0]
                for b, pg, qg, qmax, qmin, vg in IEEE30_GENS]
    branch_rows = [[f, t, r, x, b, 0, 0, 0, ratio, 0, 1, -360, 360]
                   for f, t, r, x, b, ratio in IEEE30_BRANCHES]
    emit_case(OUT / "case30.m", "case30", "IEEE 30 bus test system",
              100.0, 132.0, bus_rows, gen_rows, branch_rows)


# ---------------------------------------------------------------------------
# Synthetic radial feeders
# ---------------------------------------------------------------------------

def synthetic_feeder(n_bus: int, seed: int, base_kv: float = 12.47,
                     base_mva: float = 10.0, trunk_frac: float = 0.58,
                     load_scale: float = 1.0, n_feeders: int = 1):
    """Deterministic radial network: parallel feeders off the slack bus, each
    a trunk plus laterals with tapered conductors.

    Loads are drawn once from a seeded generator; ``load_scale`` is applied
    afterwards so the nominal voltage profile can be calibrated.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    zbase = base_kv ** 2 / base_mva

    per_feeder = (n_bus - 1) // n_feeders
    parent = {}
    depth = {1: 0}
    on_trunk = {1: True}
    nxt = 2
    for f in range(n_feeders):
        last = n_bus if f == n_feeders - 1 else nxt + per_feeder - 1
        n_trunk = max(int((last - nxt + 1) * trunk_frac), 3)
        trunk = []
        prev = 1
        for _ in range(n_trunk):
            if nxt > last:
                break
            parent[nxt] = prev
            depth[nxt] = depth[prev] + 1
            on_trunk[nxt] = True
            trunk.append(nxt)
            prev = nxt
            nxt += 1
        while nxt <= last:
            length = int(rng.integers(2, 8))
            head = trunk[int(rng.integers(1, len(trunk)))]
            prev = head
            for _ in range(length):
                if nxt > last:
                    break
                parent[nxt] = prev
                depth[nxt] = depth[prev] + 1
                on_trunk[nxt] = False
                prev = nxt
                nxt += 1

    max_depth = max(depth.values())
    branches = []
    for child in sorted(parent):
        par = parent[child]
        span = 0.25 + 0.5 * rng.random()  # km
        # tapered conductor: heavy near the head, light at depth and on laterals
        taper = min(depth[child] / max_depth, 1.0)
        lateral = not on_trunk[child]
        r_km = (0.10 + 0.35 * taper) * (1.6 if lateral else 1.0)
        x_km = (0.12 + 0.28 * taper) * (1.3 if lateral else 1.0)
        branches.append((par, child, r_km * span / zbase, x_km * span / zbase, 1))

    loads = {}
    for i in range(2, n_bus + 1):
        if rng.random() < 0.80:  # most buses carry load
            pd = float(rng.uniform(20.0, 120.0)) * load_scale  # kW
            pf = float(rng.uniform(0.85, 0.97))
            qd = pd * np.tan(np.arccos(pf))
            loads[i] = (pd / 1000.0, qd / 1000.0)
    return branches, loads


def make_feeder(name: str, title: str, n_bus: int, seed: int,
                load_scale: float, n_feeders: int = 1) -> None:
    base_kv, base_mva = 12.47, 10.0
    branches, loads = synthetic_feeder(n_bus, seed, base_kv, base_mva,
                                       load_scale=load_scale, n_feeders=n_feeders)
    bus_rows = []
    for i in range(1, n_bus + 1):
        pd, qd = loads.get(i, (0.0, 0.0))
        btype = 3 if i == 1 else 1
        bus_rows.append([i, btype, round(pd, 4), round(qd, 4), 0, 0, 1, 1, 0,
                         base_kv, 1, 1.1, 0.9])
    gen_rows = [[1, 0, 0, 10, -10, 1.0, 100, 1, 50, 0]]
    branch_rows = [[f, t, round(r, 7), round(x, 7), 0, 0, 0, 0, 0, 0, st, -360, 360]
                   for f, t, r, x, st in branches]
    emit_case(OUT / f"{name}.m", name, title, base_mva, base_kv,
              bus_rows, gen_rows, branch_rows)


def calibrate(name: str, target_vmin: float = 0.92) -> float:
    """Find the load scale putting the solved minimum voltage at target_vmin."""
    from consflow import acpf, cases

    lo, hi = 0.02, 6.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        n_bus = {"feeder141": 141, "feeder2400": 2400}[name]
        seed = {"feeder141": 141, "feeder2400": 2400}[name]
        n_feeders = {"feeder141": 1, "feeder2400": 12}[name]
        branches, loads = synthetic_feeder(n_bus, seed, load_scale=mid, n_feeders=n_feeders)
        import consflow.network as net
        buses = [net.Bus(id=i, kind=net.BusKind.SLACK if i == 1 else net.BusKind.PQ,
                         pd=loads.get(i, (0, 0))[0], qd=loads.get(i, (0, 0))[1])
                 for i in range(1, n_bus + 1)]
        case = net.NetworkCase(base_mva=10.0, buses=buses,
                               branches=[net.Branch(f, t, r, x, status=st)
                                         for f, t, r, x, st in branches],
                               gens=[net.Generator(bus=1)])
        sol = acpf.solve_power_flow(case, acpf.nominal_injections(case),
                                    acpf.flat_start(case))
        if not sol.converged:
            hi = mid
            continue
        vmin = sol.vm.min()
        if vmin > target_vmin:
            lo = mid
        else:
            hi = mid
        if abs(vmin - target_vmin) < 2e-4:
            break
    return round(0.5 * (lo + hi), 4)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    make_case33bw()
    make_case30()
    if "--calibrate" in sys.argv:
        s141 = calibrate("feeder141")
        s2400 = calibrate("feeder2400", target_vmin=0.95)
        print(f"calibrated scales: feeder141={s141}, feeder2400={s2400}")
    else:
        # scales fixed by a previous --calibrate run
        s141, s2400 = 0.1872, 0.0434
    make_feeder("feeder141", "141 bus synthetic radial feeder", 141, 141, s141)
    make_feeder("feeder2400", "2400 bus synthetic network (sparse-path smoke)",
                2400, 2400, s2400, n_feeders=12)
