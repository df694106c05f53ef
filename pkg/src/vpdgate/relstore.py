"""In-memory relational store for the logistics tables and route geometry.

A Dataset holds the five tables (subject, assignment, carrier, object,
org_hierarchy) plus per-carrier route polylines and the schema manifest
(declared foreign keys, corridor width, waypoint overrides). Datasets are
immutable after load; every mutation helper returns a new version, so
unlimited concurrent readers are safe.

Sources are either a directory of CSV files (one per table, headers in
lower_snake_case, plus geocode.csv mapping place names to coordinates and
an optional schema.json), a single JSON document with one array per
table, or an equivalent in-memory dict / JSON string.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from functools import cached_property
from pathlib import Path

from .errors import IntegrityError, ParseError
from .timeutil import day_end, day_start, format_timestamp, parse_date, parse_timestamp

Point = tuple[float, float]

TABLE_COLUMNS: dict[str, tuple[str, ...]] = {
    "subject": ("id", "name", "title", "specialty", "dept"),
    "assignment": ("id", "truck"),
    "carrier": ("id", "origin", "destination", "departure", "arrival"),
    "object": ("oid", "name", "sender", "receiver", "truck",
               "origin", "destination", "ship_out", "receive_in"),
    "org_hierarchy": ("ou", "sub_ou"),
}

DEFAULT_CORRIDOR_KM = 50.0

DEFAULT_FOREIGN_KEYS: tuple[tuple[str, str], ...] = (
    ("subject.id", "assignment.id"),
    ("assignment.truck", "object.truck"),
    ("subject.dept", "org_hierarchy.ou"),
)


@dataclass(frozen=True)
class SchemaManifest:
    """Declared join graph and route-corridor configuration."""

    foreign_keys: tuple[tuple[str, str], ...] = DEFAULT_FOREIGN_KEYS
    corridor_km: float = DEFAULT_CORRIDOR_KM
    waypoints: tuple[tuple[str, tuple[Point, ...]], ...] = ()

    def waypoints_for(self, carrier_id: str) -> tuple[Point, ...] | None:
        for cid, points in self.waypoints:
            if cid == carrier_id:
                return points
        return None

    @staticmethod
    def from_dict(doc: dict) -> "SchemaManifest":
        fks = tuple((e["from"], e["to"]) for e in doc.get("foreign_keys", []))
        wps = tuple(
            (cid, tuple((float(lat), float(lon)) for lat, lon in pts))
            for cid, pts in sorted(doc.get("waypoints", {}).items())
        )
        return SchemaManifest(
            foreign_keys=fks or DEFAULT_FOREIGN_KEYS,
            corridor_km=float(doc.get("corridor_km", DEFAULT_CORRIDOR_KM)),
            waypoints=wps,
        )

    def to_dict(self) -> dict:
        return {
            "foreign_keys": [{"from": a, "to": b} for a, b in self.foreign_keys],
            "corridor_km": self.corridor_km,
            "waypoints": {cid: [list(p) for p in pts] for cid, pts in self.waypoints},
        }


@dataclass(frozen=True)
class Place:
    name: str
    lat: float
    lon: float

    @property
    def point(self) -> Point:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    name: str
    title: str
    specialty: str | None
    dept: str


@dataclass(frozen=True)
class AssignmentRecord:
    subject_id: str
    carrier_id: str


@dataclass(frozen=True)
class CarrierRecord:
    id: str
    origin: Place
    destination: Place
    waypoints: tuple[Point, ...]
    departure: datetime
    arrival: datetime


@dataclass(frozen=True)
class ObjectRecord:
    oid: str
    name: str
    sender: str
    receiver: str
    carrier_id: str | None
    origin: str
    destination: str
    ship_out: date | None
    receive_in: date | None


@dataclass(frozen=True)
class OrgEdge:
    ou: str
    sub_ou: str


@dataclass(frozen=True)
class Violation:
    table: str
    key: str
    kind: str
    message: str

    def __str__(self) -> str:
        return f"{self.table}[{self.key}] {self.kind}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __iter__(self):
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


@dataclass(frozen=True)
class Dataset:
    subjects: tuple[SubjectRecord, ...] = ()
    assignments: tuple[AssignmentRecord, ...] = ()
    carriers: tuple[CarrierRecord, ...] = ()
    objects: tuple[ObjectRecord, ...] = ()
    org_edges: tuple[OrgEdge, ...] = ()
    manifest: SchemaManifest = field(default_factory=SchemaManifest)

    @cached_property
    def subject_by_id(self) -> dict[str, SubjectRecord]:
        return {s.id: s for s in self.subjects}

    @cached_property
    def subject_by_name(self) -> dict[str, SubjectRecord]:
        return {s.name: s for s in self.subjects}

    @cached_property
    def carrier_by_id(self) -> dict[str, CarrierRecord]:
        return {c.id: c for c in self.carriers}

    @cached_property
    def object_by_id(self) -> dict[str, ObjectRecord]:
        return {o.oid: o for o in self.objects}

    def assignments_of(self, subject_id: str) -> tuple[AssignmentRecord, ...]:
        return tuple(a for a in self.assignments if a.subject_id == subject_id)

    def table_names(self) -> tuple[str, ...]:
        return tuple(TABLE_COLUMNS)

    @cached_property
    def _tables(self) -> dict[str, tuple[tuple, ...]]:
        def d(value: date | None) -> str | None:
            return value.isoformat() if value is not None else None

        return {
            "subject": tuple((s.id, s.name, s.title, s.specialty, s.dept)
                             for s in self.subjects),
            "assignment": tuple((a.subject_id, a.carrier_id) for a in self.assignments),
            "carrier": tuple((c.id, c.origin.name, c.destination.name,
                              format_timestamp(c.departure), format_timestamp(c.arrival))
                             for c in self.carriers),
            "object": tuple((o.oid, o.name, o.sender, o.receiver, o.carrier_id,
                             o.origin, o.destination, d(o.ship_out), d(o.receive_in))
                            for o in self.objects),
            "org_hierarchy": tuple((e.ou, e.sub_ou) for e in self.org_edges),
        }

    def table(self, name: str) -> tuple[tuple[str, ...], tuple[tuple, ...]]:
        """Columns and rows of a table as seen by the query evaluator.

        Values are strings (timestamps/dates in ISO form) or None for
        absent fields.
        """
        if name not in TABLE_COLUMNS:
            from .errors import UnknownTableError
            raise UnknownTableError(f"unknown table: {name!r}")
        return TABLE_COLUMNS[name], self._tables[name]

    # Mutation helpers used by the scenario runner; each returns a new version.

    def with_assignment(self, subject_id: str, carrier_id: str) -> "Dataset":
        return replace(self, assignments=self.assignments
                       + (AssignmentRecord(subject_id, carrier_id),))

    def without_assignment(self, subject_id: str, carrier_id: str) -> "Dataset":
        kept = tuple(a for a in self.assignments
                     if not (a.subject_id == subject_id and a.carrier_id == carrier_id))
        return replace(self, assignments=kept)

    def with_object_carrier(self, oids: tuple[str, ...], carrier_id: str | None) -> "Dataset":
        moved = tuple(replace(o, carrier_id=carrier_id) if o.oid in oids else o
                      for o in self.objects)
        return replace(self, objects=moved)


def _absent(value: str | None) -> str | None:
    if value is None:
        return None
    value = value.strip()
    return None if value in ("", "-") else value


def _parse_bound(text: str, *, end_of_day: bool, source: str, line: int) -> datetime:
    try:
        if "T" in text or " " in text:
            return parse_timestamp(text)
        d = parse_date(text)
    except ValueError as exc:
        raise ParseError(f"bad timestamp {text!r}: {exc}", source=source, line=line) from None
    return day_end(d) if end_of_day else day_start(d)


def _read_csv(path: Path, expected: tuple[str, ...]) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        if header != expected:
            raise ParseError(f"expected header {','.join(expected)}, got {','.join(header)}",
                             source=path.name, line=1)
        rows = []
        for i, row in enumerate(reader, start=2):
            if any(v is None for v in row.values()) or None in row:
                raise ParseError("wrong number of fields", source=path.name, line=i)
            row["_line"] = str(i)
            rows.append(row)
        return rows


def _load_geocodes(path: Path) -> dict[str, Point]:
    if not path.exists():
        return {}
    out: dict[str, Point] = {}
    for row in _read_csv(path, ("name", "lat", "lon")):
        try:
            out[row["name"]] = (float(row["lat"]), float(row["lon"]))
        except ValueError:
            raise ParseError("lat/lon must be decimal degrees",
                             source=path.name, line=int(row["_line"])) from None
    return out


def _build_carrier(cid: str, origin: Place, destination: Place,
                   departure: datetime, arrival: datetime,
                   waypoints: tuple[Point, ...] | None,
                   manifest: SchemaManifest) -> CarrierRecord:
    points = waypoints or manifest.waypoints_for(cid) or (origin.point, destination.point)
    return CarrierRecord(id=cid, origin=origin, destination=destination,
                         waypoints=tuple(points), departure=departure, arrival=arrival)


def _from_csv_dir(root: Path) -> Dataset:
    manifest_path = root / "schema.json"
    manifest = SchemaManifest()
    if manifest_path.exists():
        manifest = SchemaManifest.from_dict(json.loads(manifest_path.read_text()))
    geocodes = _load_geocodes(root / "geocode.csv")

    def rows(name: str) -> list[dict[str, str]]:
        path = root / f"{name}.csv"
        return _read_csv(path, TABLE_COLUMNS[name]) if path.exists() else []

    subjects = tuple(
        SubjectRecord(id=r["id"], name=r["name"], title=r["title"],
                      specialty=_absent(r["specialty"]), dept=r["dept"])
        for r in rows("subject"))
    assignments = tuple(
        AssignmentRecord(subject_id=r["id"], carrier_id=r["truck"])
        for r in rows("assignment"))

    carriers = []
    for r in rows("carrier"):
        line = int(r["_line"])
        places = []
        for field_name in ("origin", "destination"):
            name = r[field_name]
            if name not in geocodes:
                raise IntegrityError(
                    f"carrier {r['id']!r}: no geocode for {field_name} {name!r}")
            places.append(Place(name, *geocodes[name]))
        departure = _parse_bound(r["departure"], end_of_day=False,
                                 source="carrier.csv", line=line)
        arrival = _parse_bound(r["arrival"], end_of_day=True,
                               source="carrier.csv", line=line)
        carriers.append(_build_carrier(r["id"], places[0], places[1],
                                       departure, arrival, None, manifest))

    objects = []
    for r in rows("object"):
        line = int(r["_line"])
        ship_out = _absent(r["ship_out"])
        receive_in = _absent(r["receive_in"])
        try:
            objects.append(ObjectRecord(
                oid=r["oid"], name=r["name"], sender=r["sender"], receiver=r["receiver"],
                carrier_id=_absent(r["truck"]), origin=r["origin"],
                destination=r["destination"],
                ship_out=parse_date(ship_out) if ship_out else None,
                receive_in=parse_date(receive_in) if receive_in else None))
        except ValueError as exc:
            raise ParseError(f"bad date: {exc}", source="object.csv", line=line) from None

    org_edges = tuple(OrgEdge(ou=r["ou"], sub_ou=r["sub_ou"]) for r in rows("org_hierarchy"))
    return Dataset(subjects=subjects, assignments=assignments, carriers=tuple(carriers),
                   objects=tuple(objects), org_edges=org_edges, manifest=manifest)


def _from_doc(doc: dict) -> Dataset:
    manifest = SchemaManifest.from_dict(doc.get("schema", {})) if doc.get("schema") \
        else SchemaManifest()

    subjects = tuple(
        SubjectRecord(id=r["id"], name=r["name"], title=r.get("title", ""),
                      specialty=_absent(r.get("specialty")), dept=r["dept"])
        for r in doc.get("subject", ()))
    assignments = tuple(
        AssignmentRecord(subject_id=r["id"], carrier_id=r["truck"])
        for r in doc.get("assignment", ()))

    carriers = []
    for r in doc.get("carrier", ()):
        origin = Place(r["origin"]["name"], float(r["origin"]["lat"]), float(r["origin"]["lon"]))
        destination = Place(r["destination"]["name"], float(r["destination"]["lat"]),
                            float(r["destination"]["lon"]))
        waypoints = tuple((float(lat), float(lon)) for lat, lon in r.get("waypoints", ())) or None
        carriers.append(_build_carrier(
            r["id"], origin, destination,
            _parse_bound(r["departure"], end_of_day=False, source="carrier", line=0),
            _parse_bound(r["arrival"], end_of_day=True, source="carrier", line=0),
            waypoints, manifest))

    objects = tuple(
        ObjectRecord(oid=r["oid"], name=r["name"], sender=r["sender"], receiver=r["receiver"],
                     carrier_id=_absent(r.get("truck")), origin=r.get("origin", ""),
                     destination=r.get("destination", ""),
                     ship_out=parse_date(r["ship_out"]) if _absent(r.get("ship_out")) else None,
                     receive_in=parse_date(r["receive_in"]) if _absent(r.get("receive_in")) else None)
        for r in doc.get("object", ()))

    org_edges = tuple(OrgEdge(ou=r["ou"], sub_ou=r["sub_ou"])
                      for r in doc.get("org_hierarchy", ()))
    return Dataset(subjects=subjects, assignments=assignments, carriers=tuple(carriers),
                   objects=objects, org_edges=org_edges, manifest=manifest)


def load_dataset(source: str | Path | dict) -> Dataset:
    """Load and validate a Dataset from a CSV directory, JSON file, JSON text or dict.

    Raises ParseError for malformed input and IntegrityError when any
    dataset invariant is violated.
    """
    if isinstance(source, dict):
        ds = _from_doc(source)
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", source="<text>") from None
        ds = _from_doc(doc)
    else:
        path = Path(source)
        if path.is_dir():
            ds = _from_csv_dir(path)
        elif path.exists():
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc}", source=path.name) from None
            ds = _from_doc(doc)
        else:
            raise ParseError(f"no such file or directory: {source}", source=str(source))

    report = validate_dataset(ds)
    if not report.ok:
        raise IntegrityError("; ".join(str(v) for v in report))
    return ds


def validate_dataset(d: Dataset) -> ValidationReport:
    """Check every dataset invariant; violations are data, not errors."""
    out: list[Violation] = []

    seen_ids: set[str] = set()
    seen_names: set[str] = set()
    for s in d.subjects:
        if s.id in seen_ids:
            out.append(Violation("subject", s.id, "duplicate-key", f"duplicate id {s.id!r}"))
        if s.name in seen_names:
            out.append(Violation("subject", s.id, "duplicate-key",
                                 f"duplicate name {s.name!r} (sessions key subjects by name)"))
        seen_ids.add(s.id)
        seen_names.add(s.name)

    carrier_ids: set[str] = set()
    for c in d.carriers:
        if c.id in carrier_ids:
            out.append(Violation("carrier", c.id, "duplicate-key", f"duplicate id {c.id!r}"))
        carrier_ids.add(c.id)
        if c.departure >= c.arrival:
            out.append(Violation("carrier", c.id, "temporal",
                                 f"departure {format_timestamp(c.departure)} is not before "
                                 f"arrival {format_timestamp(c.arrival)}"))
        if len(c.waypoints) < 2:
            out.append(Violation("carrier", c.id, "geometry", "fewer than 2 waypoints"))
        if c.waypoints and c.waypoints[0] != c.origin.point:
            out.append(Violation("carrier", c.id, "geometry",
                                 "first waypoint does not match the origin geocode"))
        if c.waypoints and c.waypoints[-1] != c.destination.point:
            out.append(Violation("carrier", c.id, "geometry",
                                 "last waypoint does not match the destination geocode"))
        for i in range(len(c.waypoints) - 1):
            if c.waypoints[i] == c.waypoints[i + 1]:
                out.append(Violation("carrier", c.id, "geometry",
                                     f"consecutive waypoints {i} and {i + 1} coincide"))
        for lat, lon in c.waypoints:
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                out.append(Violation("carrier", c.id, "geometry",
                                     f"waypoint ({lat}, {lon}) outside valid range"))

    subject_ids = {s.id for s in d.subjects}
    for a in d.assignments:
        if a.subject_id not in subject_ids:
            out.append(Violation("assignment", a.subject_id, "dangling-reference",
                                 f"assignment ({a.subject_id!r}, {a.carrier_id!r}) "
                                 f"references unknown subject {a.subject_id!r}"))
        if a.carrier_id not in carrier_ids:
            out.append(Violation("assignment", a.subject_id, "dangling-reference",
                                 f"assignment ({a.subject_id!r}, {a.carrier_id!r}) "
                                 f"references unknown carrier {a.carrier_id!r}"))

    seen_oids: set[str] = set()
    for o in d.objects:
        if o.oid in seen_oids:
            out.append(Violation("object", o.oid, "duplicate-key", f"duplicate oid {o.oid!r}"))
        seen_oids.add(o.oid)
        if o.carrier_id is not None and o.carrier_id not in carrier_ids:
            out.append(Violation("object", o.oid, "dangling-reference",
                                 f"object {o.oid!r} references unknown carrier {o.carrier_id!r}"))

    cycle = _find_org_cycle(d.org_edges)
    if cycle:
        out.append(Violation("org_hierarchy", cycle[0], "cycle",
                             "organizational units form a cycle: " + " -> ".join(cycle)))

    return ValidationReport(tuple(out))


def _find_org_cycle(edges: tuple[OrgEdge, ...]) -> list[str] | None:
    children: dict[str, list[str]] = {}
    for e in edges:
        children.setdefault(e.ou, []).append(e.sub_ou)
    WHITE, GREY, BLACK = 0, 1, 2
    color: dict[str, int] = {}
    path: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = GREY
        path.append(node)
        for child in children.get(node, ()):
            state = color.get(child, WHITE)
            if state == GREY:
                return path[path.index(child):] + [child]
            if state == WHITE:
                found = visit(child)
                if found:
                    return found
        color[node] = BLACK
        path.pop()
        return None

    for node in list(children):
        if color.get(node, WHITE) == WHITE:
            found = visit(node)
            if found:
                return found
    return None


def dump_dataset(d: Dataset) -> str:
    """Serialize to the canonical JSON form; load(dump(d)) round-trips bit-identically."""
    doc = {
        "version": 1,
        "subject": [{"id": s.id, "name": s.name, "title": s.title,
                     "specialty": s.specialty or "-", "dept": s.dept}
                    for s in d.subjects],
        "assignment": [{"id": a.subject_id, "truck": a.carrier_id} for a in d.assignments],
        "carrier": [{"id": c.id,
                     "origin": {"name": c.origin.name, "lat": c.origin.lat, "lon": c.origin.lon},
                     "destination": {"name": c.destination.name, "lat": c.destination.lat,
                                     "lon": c.destination.lon},
                     "departure": format_timestamp(c.departure),
                     "arrival": format_timestamp(c.arrival),
                     "waypoints": [list(p) for p in c.waypoints]}
                    for c in d.carriers],
        "object": [{"oid": o.oid, "name": o.name, "sender": o.sender, "receiver": o.receiver,
                    "truck": o.carrier_id or "-", "origin": o.origin,
                    "destination": o.destination,
                    "ship_out": o.ship_out.isoformat() if o.ship_out else "-",
                    "receive_in": o.receive_in.isoformat() if o.receive_in else "-"}
                   for o in d.objects],
        "org_hierarchy": [{"ou": e.ou, "sub_ou": e.sub_ou} for e in d.org_edges],
        "schema": d.manifest.to_dict(),
    }
    return json.dumps(doc, indent=2) + "\n"


def bundled_data_dir(name: str) -> Path:
    """Path of a dataset directory shipped with the package."""
    return Path(__file__).resolve().parent / "data" / name


def load_bundled(name: str = "logistics") -> Dataset:
    return load_dataset(bundled_data_dir(name))
