"""Network case model: parsing, validation, and admittance matrix assembly.

A case is a bus/branch/generator description of an AC network. Loads are
stored in physical MW/MVAr and converted to per unit on demand using the
system base power.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp


class ValidationError(ValueError):
    """Raised for malformed or semantically invalid case data."""


class BusKind(enum.Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


@dataclass
class Bus:
    id: int
    kind: BusKind
    pd: float = 0.0  # MW
    qd: float = 0.0  # MVAr
    gs: float = 0.0  # MW at V = 1 pu
    bs: float = 0.0  # MVAr at V = 1 pu
    vm0: float = 1.0  # pu
    va0: float = 0.0  # degrees
    vmin: float = 0.9
    vmax: float = 1.1


@dataclass
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charge: float = 0.0
    tap: float = 1.0  # 0 in raw files means nominal; normalized to 1.0 on parse
    shift: float = 0.0  # degrees
    status: int = 1


@dataclass
class Generator:
    bus: int
    pg: float = 0.0  # MW
    qg: float = 0.0  # MVAr
    vg: float = 1.0  # pu setpoint
    status: int = 1


@dataclass
class NetworkCase:
    base_mva: float
    buses: list[Bus] = field(default_factory=list)
    branches: list[Branch] = field(default_factory=list)
    gens: list[Generator] = field(default_factory=list)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def index_of(self) -> dict[int, int]:
        """External bus id -> contiguous 0-based internal index (file order)."""
        return {b.id: i for i, b in enumerate(self.buses)}


@dataclass
class AdmittanceMatrix:
    """Real and imaginary parts of the bus admittance matrix, sparse CSR."""

    g: sp.csr_matrix
    b: sp.csr_matrix

    @property
    def complex(self) -> sp.csr_matrix:
        return (self.g + 1j * self.b).tocsr()


_KIND_FROM_TYPE = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}


# ---------------------------------------------------------------------------
# MATPOWER-style text format
# ---------------------------------------------------------------------------

def _strip_comments(text: str) -> str:
    # keep line structure so match offsets still map to line numbers
    return re.sub(r"%[^\n]*", lambda m: " " * len(m.group(0)), text)


def _line_no(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _parse_matrix(text: str, name: str, match: re.Match) -> list[tuple[int, list[float]]]:
    """Parse the rows of one `name = [ ... ];` block into numeric lists."""
    body = match.group(2)
    body_start = match.start(2)
    rows = []
    for raw in re.split(r"[;\n]", body):
        offset = body.find(raw)
        if not raw.strip():
            continue
        values = []
        for tok in raw.replace(",", " ").split():
            try:
                values.append(float(tok))
            except ValueError:
                line = _line_no(text, body_start + offset)
                raise ValidationError(
                    f"line {line}: bad numeric token {tok!r} in {name}"
                ) from None
        rows.append((_line_no(text, body_start + offset), values))
    return rows


def parse_matpower(text: str) -> NetworkCase:
    """Parse a MATPOWER-style ``.m`` case into a validated :class:`NetworkCase`.

    Only the ``baseMVA`` scalar and the ``bus``, ``gen`` and ``branch``
    matrices are read (first 13 / 10 / 13 columns); any other assignment in
    the file is ignored with a warning. Comments (``%``) and arbitrary
    whitespace are tolerated.

    Raises
    ------
    ValidationError
        On syntax errors (with a line number) or semantic errors such as
        duplicate bus ids, a missing slack bus, or dangling branch endpoints.
    """
    clean = _strip_comments(text)

    fn = re.search(r"function\s+(?:\[[^\]]*\]|(\w+))\s*=", clean)
    if fn is None:
        raise ValidationError("line 1: no case function found")
    var = fn.group(1)
    if var is None:
        raise ValidationError(
            f"line {_line_no(clean, fn.start())}: legacy multi-return case "
            "format is not supported"
        )

    base_m = re.search(rf"{var}\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;", clean)
    if base_m is None:
        raise ValidationError("missing baseMVA scalar")
    base_mva = float(base_m.group(1))

    blocks: dict[str, re.Match] = {}
    for m in re.finditer(rf"{var}\.(\w+)\s*=\s*\[(.*?)\]\s*;", clean, re.DOTALL):
        blocks[m.group(1)] = m
    for extra in sorted(set(blocks) - {"bus", "gen", "branch"}):
        warnings.warn(f"ignoring unsupported case field {extra!r}", stacklevel=2)
    for required in ("bus", "gen", "branch"):
        if required not in blocks:
            raise ValidationError(f"missing {required} matrix")

    buses = []
    for line, row in _parse_matrix(clean, "bus", blocks["bus"]):
        if len(row) < 13:
            raise ValidationError(f"line {line}: bus row needs 13 columns, got {len(row)}")
        btype = int(row[1])
        if btype not in _KIND_FROM_TYPE:
            raise ValidationError(f"line {line}: unsupported bus type {btype} (bus {int(row[0])})")
        buses.append(Bus(
            id=int(row[0]), kind=_KIND_FROM_TYPE[btype],
            pd=row[2], qd=row[3], gs=row[4], bs=row[5],
            vm0=row[7], va0=row[8], vmax=row[11], vmin=row[12],
        ))

    gens = []
    for line, row in _parse_matrix(clean, "gen", blocks["gen"]):
        if len(row) < 10:
            raise ValidationError(f"line {line}: gen row needs 10 columns, got {len(row)}")
        gens.append(Generator(bus=int(row[0]), pg=row[1], qg=row[2],
                              vg=row[5], status=int(row[7])))

    branches = []
    for line, row in _parse_matrix(clean, "branch", blocks["branch"]):
        if len(row) < 11:
            raise ValidationError(f"line {line}: branch row needs 11 columns, got {len(row)}")
        tap = row[8] if row[8] != 0.0 else 1.0
        branches.append(Branch(
            from_bus=int(row[0]), to_bus=int(row[1]), r=row[2], x=row[3],
            b_charge=row[4], tap=tap, shift=row[9], status=int(row[10]),
        ))

    case = NetworkCase(base_mva=base_mva, buses=buses, branches=branches, gens=gens)
    validate_case(case)
    return case


def validate_case(case: NetworkCase) -> None:
    """Check the semantic invariants of a case; raise ValidationError if broken."""
    seen: set[int] = set()
    for bus in case.buses:
        if bus.id in seen:
            raise ValidationError(f"duplicate bus id {bus.id}")
        seen.add(bus.id)
        if bus.vm0 <= 0:
            raise ValidationError(f"bus {bus.id}: initial voltage must be positive")

    slacks = [b.id for b in case.buses if b.kind is BusKind.SLACK]
    if not slacks:
        raise ValidationError("missing slack bus")
    if len(slacks) > 1:
        raise ValidationError(f"multiple slack buses: {slacks}")

    for i, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in seen:
                raise ValidationError(f"branch {i + 1}: dangling endpoint bus {end}")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"branch {i + 1}: from == to == {br.from_bus}")
        if br.status and br.r ** 2 + br.x ** 2 == 0.0:
            raise ValidationError(f"branch {i + 1}: zero impedance on in-service branch")

    active_gen_buses = {g.bus for g in case.gens if g.status}
    for g in case.gens:
        if g.bus not in seen:
            raise ValidationError(f"generator references unknown bus {g.bus}")
    for bus in case.buses:
        if bus.kind in (BusKind.SLACK, BusKind.PV) and bus.id not in active_gen_buses:
            raise ValidationError(f"bus {bus.id} is {bus.kind.value} but has no in-service generator")

    # connectivity of the in-service graph
    idx = case.index_of()
    adj: list[list[int]] = [[] for _ in case.buses]
    for br in case.branches:
        if br.status:
            f, t = idx[br.from_bus], idx[br.to_bus]
            adj[f].append(t)
            adj[t].append(f)
    reached = {0}
    stack = [0]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in reached:
                reached.add(nxt)
                stack.append(nxt)
    if len(reached) != case.n_bus:
        missing = [case.buses[i].id for i in range(case.n_bus) if i not in reached]
        raise ValidationError(f"in-service graph is disconnected; unreached buses {missing[:8]}")


# ---------------------------------------------------------------------------
# Admittance matrix
# ---------------------------------------------------------------------------

def build_admittance(case: NetworkCase) -> AdmittanceMatrix:
    """Assemble the complex bus admittance matrix with the standard pi model.

    Includes off-nominal taps, phase shifters, line charging, and bus shunts.
    The row sparsity pattern of the result is exactly the in-service
    adjacency plus the diagonal.
    """
    n = case.n_bus
    idx = case.index_of()
    rows, cols, vals = [], [], []

    for br in case.branches:
        if not br.status:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = 0.5j * br.b_charge
        tap = br.tap * np.exp(1j * np.deg2rad(br.shift))
        yff = (ys + ysh) / (br.tap ** 2)
        ytt = ys + ysh
        yft = -ys / np.conj(tap)
        ytf = -ys / tap
        rows += [f, t, f, t]
        cols += [f, t, t, f]
        vals += [yff, ytt, yft, ytf]

    for bus in case.buses:
        if bus.gs or bus.bs:
            i = idx[bus.id]
            rows.append(i)
            cols.append(i)
            vals.append(complex(bus.gs, bus.bs) / case.base_mva)
        else:
            # keep the diagonal structurally present
            rows.append(idx[bus.id])
            cols.append(idx[bus.id])
            vals.append(0.0 + 0.0j)

    y = sp.coo_matrix((np.asarray(vals), (rows, cols)), shape=(n, n)).tocsr()
    return AdmittanceMatrix(g=y.real.tocsr(), b=y.imag.tocsr())


# ---------------------------------------------------------------------------
# Native JSON schema
# ---------------------------------------------------------------------------

_BUS_FIELDS = ("id", "kind", "pd", "qd", "gs", "bs", "vm0", "va0", "vmin", "vmax")
_BRANCH_FIELDS = ("from", "to", "r", "x", "b_charge", "tap", "shift", "status")
_GEN_FIELDS = ("bus", "pg", "qg", "vg", "status")


def case_to_dict(case: NetworkCase) -> dict:
    return {
        "base_mva": case.base_mva,
        "buses": [
            {**{k: v for k, v in asdict(b).items() if k != "kind"}, "kind": b.kind.value}
            for b in case.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x,
             "b_charge": br.b_charge, "tap": br.tap, "shift": br.shift,
             "status": br.status}
            for br in case.branches
        ],
        "gens": [asdict(g) for g in case.gens],
    }


def write_case_json(case: NetworkCase) -> str:
    """Serialize a case to the native JSON schema (deterministic output)."""
    return json.dumps(case_to_dict(case), indent=2, sort_keys=True)


def _require(record: dict, fields: tuple[str, ...], what: str) -> None:
    for f in fields:
        if f not in record:
            raise ValidationError(f"schema error: {what} record missing {f!r}")


def read_case_json(text: str) -> NetworkCase:
    """Parse and validate a case from the native JSON schema."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"schema error: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError("schema error: top level must be an object")
    for key in ("base_mva", "buses", "branches", "gens"):
        if key not in doc:
            raise ValidationError(f"schema error: missing {key!r}")

    kinds = {k.value: k for k in BusKind}
    buses = []
    for rec in doc["buses"]:
        _require(rec, _BUS_FIELDS, "bus")
        if rec["kind"] not in kinds:
            raise ValidationError(f"schema error: unknown bus kind {rec['kind']!r}")
        buses.append(Bus(
            id=int(rec["id"]), kind=kinds[rec["kind"]], pd=rec["pd"], qd=rec["qd"],
            gs=rec["gs"], bs=rec["bs"], vm0=rec["vm0"], va0=rec["va0"],
            vmin=rec["vmin"], vmax=rec["vmax"],
        ))
    branches = []
    for rec in doc["branches"]:
        _require(rec, _BRANCH_FIELDS, "branch")
        branches.append(Branch(
            from_bus=int(rec["from"]), to_bus=int(rec["to"]), r=rec["r"], x=rec["x"],
            b_charge=rec["b_charge"], tap=rec["tap"], shift=rec["shift"],
            status=int(rec["status"]),
        ))
    gens = []
    for rec in doc["gens"]:
        _require(rec, _GEN_FIELDS, "gen")
        gens.append(Generator(bus=int(rec["bus"]), pg=rec["pg"], qg=rec["qg"],
                              vg=rec["vg"], status=int(rec["status"])))

    case = NetworkCase(base_mva=float(doc["base_mva"]), buses=buses,
                       branches=branches, gens=gens)
    validate_case(case)
    return case


def case_hash(case: NetworkCase) -> str:
    """Short stable content hash of a case, used to key derived artifacts."""
    canon = json.dumps(case_to_dict(case), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
