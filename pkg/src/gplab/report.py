"""Experiment configuration, validation and deterministic report emission."""

from __future__ import annotations

import configparser
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import ConfigError
from .torus import QuadraticForm

log = logging.getLogger("gplab")

SCHEMA_VERSION = 1
DEFAULT_THETA = {
    1: ("1.0",),
    2: ("1.0", "1.41421356237"),
    3: ("1.0", "1.41421356237", "1.73205080757"),
}
COMMON_SECTION = "common"


# value parsing ------------------------------------------------------------

def _parse_range(item: str, conv) -> list:
    """``a..b`` (step 1) or ``a..b:xK`` (geometric, factor K), both inclusive."""
    lo, _, rest = item.partition("..")
    hi, _, step = rest.partition(":")
    lo, hi = conv(lo), conv(hi)
    if step:
        if not step.startswith("x"):
            raise ValueError(f"range step must look like 'x2', got {step!r}")
        factor = conv(step[1:])
        if not factor > 1:
            raise ValueError("geometric factor must exceed 1")
        out, v = [], lo
        while v <= hi:
            out.append(v)
            v = v * factor
        return out
    if conv is not int:
        raise ValueError("arithmetic ranges need integer endpoints")
    return list(range(lo, hi + 1))


def _parse_list(text: str, conv) -> tuple:
    out = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        if ".." in item:
            out.extend(_parse_range(item, conv))
        else:
            out.append(conv(item))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_optional_int(text: str):
    t = text.strip().lower()
    return None if t in ("", "none", "auto") else int(t)


PARSERS: dict[str, Callable] = {
    "int": lambda s: int(s.strip()),
    "float": lambda s: float(s.strip()),
    "ints": lambda s: _parse_list(s, int),
    "floats": lambda s: _parse_list(s, float),
    "str": lambda s: s.strip(),
    "bool": _parse_bool,
    "optint": _parse_optional_int,
}


@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    default: object
    doc: str
    check: Callable | None = None  # value -> error message or None

    def parse(self, text, origin: str):
        if not isinstance(text, str):
            value = text
        else:
            try:
                value = PARSERS[self.kind](text)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{origin}: cannot parse {self.name}={text!r} as {self.kind} ({exc})") from None
        self.validate(value, origin)
        return value

    def validate(self, value, origin: str = "default") -> None:
        if self.check is None:
            return
        msg = self.check(value)
        if msg:
            raise ConfigError(f"{origin}: {self.name} {msg}")


def positive(v):
    vals = v if isinstance(v, tuple) else (v,)
    return None if all(x is not None and x > 0 for x in vals) else "must be positive"


def nonnegative(v):
    vals = v if isinstance(v, tuple) else (v,)
    return None if all(x >= 0 for x in vals) else "must be nonnegative"


def one_of(*choices):
    def check(v):
        return None if v in choices else f"must be one of {', '.join(map(str, choices))}"
    return check


COMMON_PARAMS = (
    Param("d", "optint", None, "dimension; inferred from theta when omitted", lambda v: None if v is None or v in (1, 2, 3) else "must be 1, 2 or 3"),
    Param("theta", "floats", None, "comma-separated axis weights; default 1, sqrt 2, sqrt 3 truncated to d entries"),
    Param("seed", "int", 0, "seed of the counter-based generator", nonnegative),
    Param("outdir", "str", "lab-output", "output directory"),
    Param("threads", "int", 1, "worker threads for the parallel kernels", positive),
)


# config -------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    theta: tuple
    params: dict
    seed: int = 0
    outdir: str = "lab-output"
    threads: int = 1
    notices: tuple = ()

    @property
    def d(self) -> int:
        return len(self.theta)

    @property
    def form(self) -> QuadraticForm:
        return QuadraticForm(self.theta)

    def __getitem__(self, key):
        return self.params[key]

    def as_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "d": self.d,
            "theta": list(self.theta),
            "seed": self.seed,
            "threads": self.threads,
            "outdir": self.outdir,
            "params": {k: _jsonable(v) for k, v in sorted(self.params.items())},
        }


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def _norm_key(key: str) -> str:
    return key.strip().replace("-", "_")


def read_config_file(path, experiment: str) -> dict:
    """Raw ``{key: (text, origin)}`` from the common and experiment sections."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys such as N and M are case-sensitive
    try:
        cp.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out = {}
    for section in (COMMON_SECTION, experiment):
        if cp.has_section(section):
            for key, text in cp.items(section):
                out[_norm_key(key)] = (text, f"{path} [{section}] {key}")
    return out


def parse_config(experiment: str, spec_params, path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Resolve defaults, config-file values and flag overrides (flags win)."""
    raw = read_config_file(path, experiment) if path is not None else {}
    for key, text in (overrides or {}).items():
        raw[_norm_key(key)] = (text, f"flag --{key}")
    table = {p.name: p for p in COMMON_PARAMS}
    for p in spec_params:
        table[p.name] = p
    unknown = sorted(set(raw) - set(table))
    if unknown:
        key = unknown[0]
        raise ConfigError(f"{raw[key][1]}: unknown key {key!r} for experiment {experiment}")
    values = {}
    for name, p in table.items():
        if name in raw:
            text, origin = raw[name]
            values[name] = p.parse(text, origin)
        else:
            values[name] = p.default
            if p.default is not None:
                p.validate(p.default)
    notices = []
    d, theta = values.pop("d"), values.pop("theta")
    if theta is None:
        d = 2 if d is None else d
        theta = tuple(float(s) for s in DEFAULT_THETA[d])
        msg = f"theta not given; using default {', '.join(DEFAULT_THETA[d])} for d={d}"
        log.debug(msg)
        notices.append(msg)
    if any(not (t > 0 and math.isfinite(t)) for t in theta):
        raise ConfigError(f"theta entries must be positive and finite, got {theta}")
    if d is not None and d != len(theta):
        raise ConfigError(f"d={d} does not match theta of length {len(theta)}")
    seed, outdir, threads = values.pop("seed"), values.pop("outdir"), values.pop("threads")
    return ExperimentConfig(experiment, tuple(theta), values, seed, outdir, threads, tuple(notices))


def reference_page(registry: dict) -> str:
    """Markdown listing of every configuration key."""
    lines = ["# Configuration keys", "",
             "Keys may be given in a config file (section `[common]` or `[<experiment>]`)",
             "or as flags `--key value`; flags take precedence.",
             "Integer lists accept `a,b,c`, `a..b` and `a..b:x2` (geometric).", "",
             "## common", ""]
    for p in COMMON_PARAMS:
        lines.append(f"- `{p.name}` ({p.kind}, default `{p.default}`): {p.doc}")
    for name in sorted(registry):
        exp = registry[name]
        lines += ["", f"## {name}", "", exp.doc, ""]
        for p in exp.params:
            lines.append(f"- `{p.name}` ({p.kind}, default `{_fmt_default(p.default)}`): {p.doc}")
    return "\n".join(lines) + "\n"


def _fmt_default(v):
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return v


# reports ------------------------------------------------------------------

@dataclass
class ExperimentReport:
    config: ExperimentConfig
    build_id: str
    rows: list
    checks: dict
    fit: dict | None = None
    extra: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # name -> text, written beside the CSV
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def summary(self) -> dict:
        """Deterministic JSON body; wall-clock time is kept out of it."""
        return {
            "schema_version": SCHEMA_VERSION,
            "build_id": self.build_id,
            "config": self.config.as_dict(),
            "notices": list(self.config.notices),
            "n_rows": len(self.rows),
            "fit": self.fit,
            "checks": dict(sorted(self.checks.items())),
            "passed": self.passed,
            "extra": self.extra,
        }


def build_id() -> str:
    """Digest of the package sources, a stand-in for a commit hash."""
    h = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for f in sorted(root.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:12]


def timestamp() -> str:
    """UTC stamp for file names; honours ``SOURCE_DATE_EPOCH``."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        when = _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc)
    else:
        when = _dt.datetime.now(tz=_dt.timezone.utc)
    return when.strftime("%Y%m%dT%H%M%SZ")


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return " ".join(str(x) for x in v)
    if v is None:
        return ""
    return str(v)


def rows_to_csv(rows: list) -> str:
    columns = ["schema_version"]
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([SCHEMA_VERSION if c == "schema_version" else _cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _json_default(v):
    if hasattr(v, "item"):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"not serialisable: {type(v).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


def write_report(report: ExperimentReport, stamp: str | None = None) -> dict:
    """Write CSV, JSON summary and timing JSON; return their paths."""
    out = Path(report.config.outdir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{report.config.experiment}-{stamp or timestamp()}"
    paths = {
        "csv": out / f"{stem}.csv",
        "json": out / f"{stem}.json",
        "timing": out / f"{stem}.timing.json",
    }
    paths["csv"].write_text(rows_to_csv(report.rows))
    paths["json"].write_text(dumps(report.summary()))
    paths["timing"].write_text(dumps({"wall_clock_seconds": report.wall_clock, "threads": report.config.threads}))
    for name, text in report.files.items():
        p = out / f"{stem}-{name}"
        p.write_text(text)
        paths[name] = p
    return paths
