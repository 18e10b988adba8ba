"""Line-oriented ``key = value`` run configuration.

* ``#`` starts a comment; blank lines are ignored.
* ``include = other.cfg`` splices another file (resolved relative to the
  including file); later assignments override earlier ones.
* Lists are comma separated; ``linspace(a, b, n)`` and ``geomspace(a, b, n)``
  expand to grids.
* A prior is given inline (``prior = atoms 0:0.7, 0.2:0.15, 1:0.15`` or
  ``prior = gaussian 1``), by name (``three_point``, ``sparse_sign``), or via
  ``prior_file = path`` in the text format of :class:`regap.priors.Prior`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .priors import ConfigurationError, Prior, sparse_sign_prior, three_point_prior

_GRID = re.compile(r"^(linspace|geomspace)\(\s*([^,]+),\s*([^,]+),\s*(\d+)\s*\)$")


def _parse_lines(path: Path, seen: tuple = ()) -> dict:
    path = path.resolve()
    if path in seen:
        raise ConfigurationError(f"include cycle through {path}")
    if not path.is_file():
        raise ConfigurationError(f"config file {path} not found")
    out: dict = {"_dir": str(path.parent)}
    for num, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{num}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{path}:{num}: empty key")
        if key == "include":
            sub = _parse_lines(path.parent / value, seen + (path,))
            sub.pop("_dir", None)
            out.update(sub)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls(_parse_lines(Path(path)))

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        return cls({k: str(v) for k, v in values.items()})

    def has(self, key: str) -> bool:
        return key in self.values

    def set(self, key: str, value) -> None:
        self.values[key] = str(value)

    def raw(self, key: str, default=None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigurationError(f"missing config key {key!r}")
        return str(default)

    def get_str(self, key: str, default=None) -> str:
        return self.raw(key, default)

    def get_float(self, key: str, default=None) -> float:
        v = self.raw(key, default)
        try:
            return float(v)
        except ValueError:
            raise ConfigurationError(f"{key}: {v!r} is not a number") from None

    def get_int(self, key: str, default=None) -> int:
        v = self.raw(key, default)
        try:
            return int(v)
        except ValueError:
            raise ConfigurationError(f"{key}: {v!r} is not an integer") from None

    def get_bool(self, key: str, default=None) -> bool:
        v = self.raw(key, default).lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: {v!r} is not a boolean")

    def get_grid(self, key: str, default=None) -> np.ndarray:
        v = self.raw(key, default).strip()
        m = _GRID.match(v)
        try:
            if m:
                fn = np.linspace if m.group(1) == "linspace" else np.geomspace
                grid = fn(float(m.group(2)), float(m.group(3)), int(m.group(4)))
            else:
                grid = np.array([float(s) for s in v.split(",") if s.strip()])
        except ValueError:
            raise ConfigurationError(f"{key}: cannot parse grid {v!r}") from None
        if grid.size == 0:
            raise ConfigurationError(f"{key}: grid is empty")
        return grid

    def prior(self) -> Prior:
        if "prior_file" in self.values:
            path = Path(self.values.get("_dir", ".")) / self.values["prior_file"]
            if not path.is_file():
                raise ConfigurationError(f"prior file {path} not found")
            return Prior.load(path)
        return parse_prior(self.raw("prior"))


def parse_prior(text: str) -> Prior:
    text = text.strip()
    named = {"three_point": three_point_prior, "sparse_sign": sparse_sign_prior}
    if text in named:
        return named[text]()
    head, _, rest = text.partition(" ")
    if head == "gaussian":
        return Prior.gaussian(float(rest))
    if head == "point":
        return Prior.point_mass(float(rest))
    if head == "atoms":
        pairs = []
        for item in rest.split(","):
            loc, _, mass = item.strip().partition(":")
            try:
                pairs.append((float(loc), float(mass)))
            except ValueError:
                raise ConfigurationError(f"bad atom {item!r}") from None
        return Prior.discrete(pairs)
    raise ConfigurationError(f"cannot parse prior {text!r}")
