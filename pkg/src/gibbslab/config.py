"""Experiment configuration: a sectioned ``key = value`` text format.

Example::

    [run]
    experiment = tails
    seed = 20240611
    out = runs/tails

    [params]
    p = 5
    L = 40
    radii = 2, 4, 8, 16, 32

Every experiment has a schema of typed keys with defaults (see
:data:`SCHEMAS`).  Unknown keys and unparsable values are errors.  Missing
keys take their defaults, and the serialized form always lists every key, so
a written config fully determines the run.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, replace

EXPERIMENTS = (
    "sample",
    "tails",
    "moments",
    "invariance",
    "gronwall",
    "iterated",
    "coupling",
    "wasserstein",
    "convergence",
)


class ConfigError(ValueError):
    pass


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.replace(",", " ").split())


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


PARSERS = {"int": int, "float": float, "floats": _floats, "ints": _ints, "str": str.strip, "bool": _bool}


def _show(kind: str, v) -> str:
    if kind in ("floats", "ints"):
        return ", ".join(repr(x) for x in v)
    if kind == "float":
        return repr(float(v))
    if kind == "bool":
        return "true" if v else "false"
    return str(v)


def _coerce(kind: str, v):
    if isinstance(v, str) and kind != "str":
        return PARSERS[kind](v)
    if kind == "int":
        if isinstance(v, bool) or float(v) != int(v):
            raise ValueError(f"expected an integer, got {v!r}")
        return int(v)
    if kind == "float":
        return float(v)
    if kind == "floats":
        return tuple(float(x) for x in v)
    if kind == "ints":
        return tuple(int(x) for x in v)
    if kind == "bool":
        return bool(v)
    return str(v)


# key -> (type, default).  Defaults reproduce the acceptance-scale runs.
SCHEMAS: dict[str, dict[str, tuple[str, object]]] = {
    "sample": {
        "p": ("float", 3.0), "L": ("float", 10.0), "M": ("int", 512), "n": ("int", 100),
        "sampler": ("str", "pcn"), "burn_in": ("int", 1000), "step": ("float", 0.15),
        "T_burn": ("float", 3.0), "dt": ("float", 1e-3),
    },
    "tails": {
        "p": ("float", 5.0), "L": ("float", 40.0), "M": ("int", 640), "n": ("int", 5000),
        "radii": ("floats", (2.0, 4.0, 8.0, 16.0, 32.0)), "levels": ("floats", (0.5, 0.9)),
        "burn_in": ("int", 2500), "step": ("float", 0.06), "n_boot": ("int", 200),
    },
    "moments": {
        "p": ("float", 3.0), "Ls": ("floats", (10.0, 20.0, 40.0)), "nodes_per_L": ("int", 16),
        "n": ("int", 2000), "beta_fraction": ("float", 0.5), "step_at_10": ("float", 0.15),
        "n_se": ("float", 3.0),
    },
    "invariance": {
        "ps": ("floats", (3.0, 5.0)), "L": ("float", 10.0), "M": ("int", 512), "n": ("int", 2000),
        "T": ("float", 1.0), "dt": ("float", 1e-3), "burn_in": ("int", 1000), "step": ("float", 0.15),
        "alpha_ks": ("float", 0.01),
    },
    "gronwall": {
        "ps": ("floats", (3.0, 5.0)), "L": ("float", 20.0), "nodes_per_L": ("int", 16),
        "T": ("float", 0.5), "dt": ("float", 1e-3), "radii": ("floats", (16.0, 32.0)),
        "n_runs": ("int", 200), "n_pilot": ("int", 50), "delta": ("float", 0.01),
        "record_every": ("int", 10), "T_couple": ("float", 2.0), "dt_couple": ("float", 2e-3),
        "min_fraction": ("float", 0.99), "residual_tol": ("float", 1e-10),
    },
    "iterated": {
        "p": ("float", 3.0), "L": ("float", 20.0), "nodes_per_L": ("int", 16),
        "T": ("float", 0.5), "dt": ("float", 1e-3), "R": ("float", 10.0), "J": ("int", 2),
        "n_runs": ("int", 100), "n_pilot": ("int", 50), "delta": ("float", 0.01),
        "record_every": ("int", 10), "T_couple": ("float", 2.0), "dt_couple": ("float", 2e-3),
        "min_fraction": ("float", 0.95),
    },
    "coupling": {
        "p": ("float", 3.0), "Ls": ("floats", (16.0, 32.0, 64.0)), "K": ("float", 128.0),
        "nodes_per_L": ("int", 16), "n_pairs": ("int", 500), "eta": ("float", 0.1),
        "T_couple": ("float", 2.0), "dt_couple": ("float", 2e-3), "alpha": ("float", 0.5),
        "beta": ("float", 0.5), "kappa": ("float", 1.0), "theta": ("float", 0.25),
        "skorokhod_L": ("float", 16.0), "alpha_ks": ("float", 0.01),
    },
    "wasserstein": {
        "p": ("float", 3.0), "Ls": ("floats", (8.0, 16.0, 32.0)), "K": ("float", 128.0),
        "nodes_per_L": ("int", 16), "n": ("int", 256), "theta": ("float", 0.25),
        "T_couple": ("float", 2.0), "dt_couple": ("float", 2e-3), "n_boot": ("int", 200),
    },
    "convergence": {
        "p": ("float", 3.0), "Ls": ("floats", (16.0, 32.0)), "nodes_per_L": ("int", 16),
        "T": ("float", 0.5), "dt": ("float", 1e-3), "alpha": ("float", 0.2),
        "window": ("floats", (-1.0, 1.0)), "n_runs": ("int", 100), "record_every": ("int", 10),
        "T_couple": ("float", 2.0), "dt_couple": ("float", 2e-3), "R": ("float", 10.0),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    out: str = "runs"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in SCHEMAS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        schema = SCHEMAS[self.experiment]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise ConfigError(f"unknown keys for {self.experiment}: {', '.join(sorted(unknown))}")
        full = {}
        for k, (kind, default) in schema.items():
            try:
                full[k] = _coerce(kind, self.params.get(k, default))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"{k}: {e}") from e
        object.__setattr__(self, "params", full)
        object.__setattr__(self, "seed", int(self.seed))

    def __getitem__(self, key):
        return self.params[key]

    def with_overrides(self, *, seed: int | None = None, out: str | None = None, **params) -> "ExperimentConfig":
        return replace(
            self,
            seed=self.seed if seed is None else seed,
            out=self.out if out is None else out,
            params={**self.params, **params},
        )

    def serialize(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {"experiment": self.experiment, "seed": str(self.seed), "out": self.out}
        schema = SCHEMAS[self.experiment]
        cp["params"] = {k: _show(schema[k][0], v) for k, v in self.params.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        """Hash of the numeric content (the output directory is excluded)."""
        body = replace(self, out="").serialize()
        return hashlib.sha256(body.encode()).hexdigest()


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from e
    if "run" not in cp:
        raise ConfigError("missing [run] section")
    extra = set(cp.sections()) - {"run", "params"}
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
    run = cp["run"]
    exp = run.get("experiment", "").strip()
    if exp not in SCHEMAS:
        raise ConfigError(f"unknown experiment {exp!r}")
    unknown = set(run) - {"experiment", "seed", "out"}
    if unknown:
        raise ConfigError(f"unknown [run] keys: {', '.join(sorted(unknown))}")
    try:
        seed = int(run.get("seed", "0"))
    except ValueError as e:
        raise ConfigError(f"seed: {e}") from e
    schema = SCHEMAS[exp]
    params = {}
    if "params" in cp:
        for k, raw in cp["params"].items():
            if k not in schema:
                raise ConfigError(f"unknown key {k!r} for experiment {exp}")
            kind = schema[k][0]
            try:
                params[k] = PARSERS[kind](raw)
            except ValueError as e:
                raise ConfigError(f"{k}: cannot parse {raw!r} as {kind}") from e
    return ExperimentConfig(exp, seed, run.get("out", "runs").strip(), params)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
