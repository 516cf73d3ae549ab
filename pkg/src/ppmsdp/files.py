"""CSV/JSON formats, release-history directories and atomic writes."""

from __future__ import annotations

import csv
import io
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .attacks import AttackTarget, BackgroundRule
from .model import Interval, Numeric, QidSchema, Record, Release, ReleaseHistory, SchemaError, Theta, format_number
from .taxonomy import TaxonomyError, TaxonomyTree

GROUP_COLUMN = "group"
MULTI_SEP = ";"
MANIFEST = "manifest.json"

_NUM = r"-?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_INTERVAL = re.compile(rf"^\[?\s*({_NUM})\s*-\s*({_NUM})\s*\]?$")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


@dataclass(frozen=True)
class Rejection:
    line: int
    case_id: str
    reason: str


# -- low level -----------------------------------------------------------

def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temporary sibling file and rename, so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_json(path: str | os.PathLike):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def parse_numeric(cell: str) -> Numeric:
    """``"35"`` becomes a float; ``"20-30"`` or ``"[20-30]"`` an :class:`Interval`."""
    text = cell.strip()
    try:
        return float(text)
    except ValueError:
        pass
    m = _INTERVAL.match(text)
    if not m:
        raise ValueError(f"not a number or interval: {cell!r}")
    low, high = float(m.group(1)), float(m.group(2))
    if high < low:
        raise ValueError(f"interval upper bound below lower bound: {cell!r}")
    return Interval(low, high)


def format_numeric(v: Numeric) -> str:
    return str(v) if isinstance(v, Interval) else format_number(float(v))


def split_multi(cell: str) -> frozenset[str]:
    return frozenset(p.strip() for p in cell.split(MULTI_SEP) if p.strip())


def join_multi(values) -> str:
    return MULTI_SEP.join(sorted(values))


# -- schema / taxonomy / theta -------------------------------------------

def schema_from_dict(d: Mapping) -> QidSchema:
    try:
        return QidSchema(
            categorical=tuple(d.get("categorical", ())),
            numeric={a: tuple(b) for a, b in d.get("numeric", {}).items()},
            sensitive=tuple(d["sensitive"]),
            other=tuple(d.get("other", ())),
            case_id=d.get("case_id", "case_id"),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"schema is missing or misuses a field: {exc}") from None


def schema_to_dict(schema: QidSchema) -> dict:
    return {
        "case_id": schema.case_id,
        "categorical": list(schema.categorical),
        "numeric": {a: [b[0], b[1]] for a, b in schema.numeric.items()},
        "sensitive": list(schema.sensitive),
        "other": list(schema.other),
    }


def load_schema(path) -> QidSchema:
    return schema_from_dict(_read_json(path))


def store_schema(path, schema: QidSchema) -> None:
    atomic_write_text(path, dump_json(schema_to_dict(schema)))


def _no_duplicate_keys(pairs):
    keys = [k for k, _ in pairs]
    if len(set(keys)) != len(keys):
        raise TaxonomyError(f"duplicate node names among siblings: {keys}")
    return dict(pairs)


def load_taxonomy(path, name: str = "") -> TaxonomyTree:
    """Nested JSON object with exactly one top-level key (the root)."""
    try:
        with open(path, encoding="utf-8") as fh:
            nested = json.load(fh, object_pairs_hook=_no_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(nested, dict):
        raise FormatError(f"{path}: taxonomy must be a JSON object")
    return TaxonomyTree.from_nested(nested, name=name or Path(path).stem)


def store_taxonomy(path, tree: TaxonomyTree) -> None:
    atomic_write_text(path, json.dumps(tree.to_nested(), indent=2) + "\n")


def load_taxonomy_dir(directory, schema: QidSchema | None = None) -> tuple[QidSchema, dict[str, TaxonomyTree]]:
    """``schema.json`` plus one ``<attr>.json`` per categorical QID."""
    directory = Path(directory)
    if schema is None:
        if not (directory / "schema.json").exists():
            raise FormatError(f"{directory}: no schema.json")
        schema = load_schema(directory / "schema.json")
    trees = {}
    for attr in schema.categorical:
        p = directory / f"{attr}.json"
        if not p.exists():
            raise FormatError(f"{directory}: no taxonomy file for {attr!r}")
        trees[attr] = load_taxonomy(p, name=attr)
    return schema, trees


def store_taxonomy_dir(directory, schema: QidSchema, trees: Mapping[str, TaxonomyTree]) -> None:
    directory = Path(directory)
    store_schema(directory / "schema.json", schema)
    for attr, tree in trees.items():
        store_taxonomy(directory / f"{attr}.json", tree)


def load_theta(path) -> Theta:
    d = _read_json(path)
    if not isinstance(d, dict) or "default" not in d:
        raise FormatError(f"{path}: theta file needs a 'default' entry")
    try:
        return Theta(float(d["default"]), {k: float(v) for k, v in d.items() if k != "default"})
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def store_theta(path, theta: Theta) -> None:
    atomic_write_text(path, dump_json({"default": theta.default, **theta.overrides}))


# -- records -------------------------------------------------------------

def _check_header(header: Sequence[str] | None, schema: QidSchema, path) -> None:
    if header is None:
        raise FormatError(f"{path}: empty file, expected a header row")
    cols = [h for h in header if h != GROUP_COLUMN]
    required = [schema.case_id, *schema.categorical, *schema.numeric, *schema.sensitive]
    missing = [c for c in required if c not in cols]
    unknown = [c for c in cols if c not in schema.columns]
    if missing or unknown or len(set(cols)) != len(cols):
        raise FormatError(f"{path}: header {list(header)} does not match schema "
                          f"(missing {missing}, unknown {unknown})")


def _parse_row(row: Mapping[str, str], schema: QidSchema, trees) -> Record:
    for col, cell in row.items():
        if col != GROUP_COLUMN and (cell is None or not cell.strip()):
            raise ValueError(f"missing value in {col!r}")
    cat = {a: row[a].strip() for a in schema.categorical}
    if trees is not None:
        for a, v in cat.items():
            if v not in trees[a]:
                raise ValueError(f"{a}={v!r} is not in its taxonomy")
    num = {}
    for a in schema.numeric:
        try:
            num[a] = parse_numeric(row[a])
        except ValueError as exc:
            raise ValueError(f"{a}: {exc}") from None
    sens = {a: split_multi(row[a]) for a in schema.sensitive}
    other = {a: split_multi(row[a]) for a in schema.other if a in row}
    return Record(row[schema.case_id].strip(), cat, num, sens, other)


def _read_rows(path, schema: QidSchema, trees, rejections: list | None):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, schema, path)
        records, groups = [], []
        for row in reader:
            if None in row:
                reason = "more cells than header columns"
            else:
                try:
                    records.append(_parse_row(row, schema, trees))
                    g = row.get(GROUP_COLUMN)
                    groups.append(int(g) if g not in (None, "") else None)
                    continue
                except ValueError as exc:
                    reason = str(exc)
            if rejections is not None:
                rejections.append(Rejection(reader.line_num, (row.get(schema.case_id) or "").strip(), reason))
    return records, groups, reader.fieldnames


def load_records(path, schema: QidSchema, trees: Mapping[str, TaxonomyTree] | None = None,
                 rejections: list | None = None) -> list[Record]:
    """Read a record CSV. Rows with an empty or unparseable cell are skipped and,
    when ``rejections`` is given, reported there."""
    return _read_rows(path, schema, trees, rejections)[0]


def records_to_csv(records: Sequence[Record], schema: QidSchema, groups: Sequence[int] | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = list(schema.columns)
    if groups is not None:
        header.append(GROUP_COLUMN)
    writer.writerow(header)
    for j, r in enumerate(records):
        row = [r.case_id]
        row += [r.cat_qid[a] for a in schema.categorical]
        row += [format_numeric(r.num_qid[a]) for a in schema.numeric]
        row += [join_multi(r.sensitive[a]) for a in schema.sensitive]
        row += [join_multi(r.other.get(a, ())) for a in schema.other]
        if groups is not None:
            row.append(str(groups[j]))
        writer.writerow(row)
    return buf.getvalue()


def store_records(path, records: Sequence[Record], schema: QidSchema) -> None:
    atomic_write_text(path, records_to_csv(records, schema))


def store_release(path, release: Release, schema: QidSchema, emit_groups: bool = False) -> None:
    groups = release.groups if emit_groups else None
    if emit_groups and groups is None:
        raise ValueError("release carries no group labels")
    atomic_write_text(path, records_to_csv(release.records, schema, groups))


def load_release(path, schema: QidSchema, index: int) -> Release:
    rejections: list[Rejection] = []
    records, groups, header = _read_rows(path, schema, None, rejections)
    if rejections:
        r = rejections[0]
        raise FormatError(f"{path}: line {r.line}: {r.reason}")
    has_groups = GROUP_COLUMN in header
    return Release(index, records, groups if has_groups else None)


# -- history -------------------------------------------------------------

def release_filename(index: int) -> str:
    return f"R_{index}.csv"


def load_manifest(directory) -> dict:
    p = Path(directory) / MANIFEST
    if not p.exists():
        return {"releases": []}
    d = _read_json(p)
    if not isinstance(d, dict) or not isinstance(d.get("releases"), list):
        raise FormatError(f"{p}: manifest needs a 'releases' list")
    return d


def load_history(directory, schema: QidSchema) -> ReleaseHistory:
    """All ``R_<i>.csv`` files of a history directory (which may not exist yet)."""
    directory = Path(directory)
    if not directory.exists():
        return ReleaseHistory()
    found = []
    for p in directory.glob("R_*.csv"):
        m = re.fullmatch(r"R_(\d+)\.csv", p.name)
        if m:
            found.append((int(m.group(1)), p))
    return ReleaseHistory(load_release(p, schema, i) for i, p in sorted(found))


def append_history(directory, release: Release, schema: QidSchema, config: Mapping | None = None) -> Path:
    directory = Path(directory)
    path = directory / release_filename(release.index)
    if path.exists():
        raise FileExistsError(f"{path} already exists")
    store_release(path, release, schema)
    manifest = load_manifest(directory)
    manifest["releases"].append({"index": release.index, "file": path.name, "config": dict(config or {})})
    atomic_write_text(directory / MANIFEST, dump_json(manifest))
    return path


# -- attacker knowledge --------------------------------------------------

def load_targets(path) -> list[AttackTarget]:
    d = _read_json(path)
    if isinstance(d, dict):
        d = d.get("targets")
    if not isinstance(d, list):
        raise FormatError(f"{path}: expected a list of targets")
    out = []
    for t in d:
        try:
            out.append(AttackTarget(
                qid=dict(t["qid"]),
                known_release=int(t["release"]),
                knowledge_kind=t.get("knowledge", "in_release"),
                case_id=None if t.get("case_id") is None else str(t["case_id"]),
                label=t.get("label", ""),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad target {t!r}: {exc}") from None
    return out


def load_background(path) -> list[BackgroundRule]:
    """``{value: {attr: [allowed nodes] | [low, high]}}``."""
    d = _read_json(path)
    if not isinstance(d, dict):
        raise FormatError(f"{path}: background rules must be a JSON object")
    return [BackgroundRule(v, {a: (tuple(c) if isinstance(c, list) else c) for a, c in cons.items()})
            for v, cons in d.items()]


def store_background(path, rules: Sequence[BackgroundRule]) -> None:
    atomic_write_text(path, dump_json({r.value: {a: list(c) for a, c in r.constraints.items()} for r in rules}))
