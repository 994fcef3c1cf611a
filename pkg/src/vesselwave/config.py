"""Line-based ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored.  Keys:

    d, c1, rho, c, c2, c3, mode, epsilon0, xi_max, tol,
    force.kind, force.table_path,
    n_eig, n_scan, convention, nw, nz, newton_tol
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .model import (REFERENCE, BodyForceModel, ConfigurationError, ModelParams,
                    build_body_force, derive_constants, validate_body_force)

PARAM_KEYS = {"d": float, "c1": float, "rho": float, "c": float, "c2": float, "c3": float,
              "mode": str, "epsilon0": float, "xi_max": float, "tol": float}
FORCE_KEYS = {"force.kind": str, "force.table_path": str}
OPTION_KEYS = {"n_eig": int, "n_scan": int, "convention": str, "nw": int, "nz": int,
               "newton_tol": float}
DEFAULT_OPTIONS = {"n_eig": 1024, "n_scan": 200, "convention": "consistent", "nw": 128,
                   "nz": 64, "newton_tol": 1e-10}


@dataclass
class Config:
    params: ModelParams
    force: BodyForceModel
    options: dict = field(default_factory=lambda: dict(DEFAULT_OPTIONS))
    source: str = ""
    path: str | None = None

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()

    def as_dict(self) -> dict:
        return {"params": self.params.as_dict(), "force": self.force.kind,
                "options": dict(self.options), "path": self.path}


def default_config() -> Config:
    return Config(REFERENCE, BodyForceModel("constant", c1=REFERENCE.c1, d=REFERENCE.d))


def _convert(key, raw, kind, lineno):
    if kind is str:
        return raw
    try:
        value = float(raw)
        if kind is int:
            if value != int(value):
                raise ValueError
            return int(value)
        return value
    except ValueError:
        raise ConfigurationError(f"line {lineno}: {key} expects a number, got {raw!r}") from None


def parse_config_text(text: str, base: Path | None = None, path: str | None = None) -> Config:
    values: dict = {}
    seen: dict = {}
    known = {**PARAM_KEYS, **FORCE_KEYS, **OPTION_KEYS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigurationError(
                f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        values[key] = _convert(key, raw, known[key], lineno)

    for key in ("d", "c1"):
        if key not in values:
            raise ConfigurationError(f"missing required key {key!r}")
    kind = values.get("force.kind", "constant")
    pkw = {k: values[k] for k in PARAM_KEYS if k in values}
    if kind in ("tabulated", "Tabulated"):
        if "force.table_path" not in values:
            raise ConfigurationError("force.table_path required for a tabulated force")
        table = Path(values["force.table_path"])
        if base is not None and not table.is_absolute():
            table = base / table
        pkw.setdefault("mode", "abstract")
        if pkw["mode"] != "abstract":
            raise ConfigurationError("a tabulated force requires mode = abstract")
        provisional = ModelParams(**{**pkw, "c2": pkw.get("c2", 0.0), "c3": pkw.get("c3", 0.0)})
        force = build_body_force({"kind": "tabulated", "table_path": table,
                                  "c1": provisional.c1, "d": provisional.d})
        report = validate_body_force(force, provisional)
        if not report.passed:
            failed = ", ".join(c.name for c in report.checks if not c.passed)
            raise ConfigurationError(f"force table fails validation: {failed}")
        c2, c3 = derive_constants(force, provisional)
        for name, got in (("c2", pkw.get("c2")), ("c3", pkw.get("c3"))):
            want = c2 if name == "c2" else c3
            if got is not None and abs(got - want) > provisional.tol * max(1.0, abs(want)):
                raise ConfigurationError(f"{name}={got!r} contradicts the force table ({want!r})")
        params = provisional.with_constants(c2, c3)
    else:
        force = build_body_force({"kind": kind, "c1": values["c1"], "d": values["d"]})
        params = ModelParams(**pkw)
    options = dict(DEFAULT_OPTIONS)
    options.update({k: values[k] for k in OPTION_KEYS if k in values})
    return Config(params, force, options, text, path)


def parse_config(path) -> Config:
    """Read a configuration file; see the module docstring for the keys."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, base=path.parent, path=str(path))
