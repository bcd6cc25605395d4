"""Run orchestration: execute a driver, write its outputs, emit plot scripts.

A run directory holds

* ``config.ini``: the fully expanded config (every key, defaults included),
* one CSV per table and one JSON per document,
* ``<name>.gblf`` field containers with ``<name>.gblf.json`` indices,
* ``manifest.json``: verdicts, summary, file digests, the CSV schemas,
  wall-clock time and the list of random streams drawn.

Numeric outputs depend only on the config, so reruns give byte-identical
CSVs.  The manifest also records wall-clock time and is therefore not
byte-stable.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig
from .experiments import DRIVERS, ExperimentResult, Streams, TailBound, max_tail_bound

log = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1

__all__ = ["RunArtifact", "NumericalFailure", "run", "emit_plots", "max_tail_bound", "TailBound"]


class NumericalFailure(RuntimeError):
    """A solver produced non-finite values; a state dump sits in the run directory."""

    def __init__(self, message: str, dump: Path | None):
        super().__init__(message)
        self.dump = dump


@dataclass
class RunArtifact:
    config: ExperimentConfig
    out_dir: Path
    csv: dict = field(default_factory=dict)        # table name -> path
    json: dict = field(default_factory=dict)       # document name -> path
    fields: dict = field(default_factory=dict)     # ensemble name -> container path
    verdicts: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    streams: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / "manifest.json"


def _write_result(cfg: ExperimentConfig, res: ExperimentResult, out: Path, streams: Streams,
                  elapsed: float) -> RunArtifact:
    art = RunArtifact(cfg, out, verdicts=dict(res.verdicts), summary=dict(res.summary),
                      wall_clock=elapsed, streams=list(streams.used))
    schemas = {}
    for name, (header, rows) in res.tables.items():
        art.csv[name] = io.write_csv(out / f"{name}.csv", header, rows)
        schemas[name] = list(header)
    for name, doc in res.documents.items():
        art.json[name] = io.write_json(out / f"{name}.json", doc)
    for name, ens in res.ensembles.items():
        path = out / f"{name}.gblf"
        io.save_ensemble(ens, path)
        art.fields[name] = path
    manifest = {
        "experiment": cfg.experiment,
        "seed": cfg.seed,
        "config_digest": cfg.digest(),
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "csv_schemas": schemas,
        "verdicts": art.verdicts,
        "passed": art.passed,
        "summary": art.summary,
        "files": {p.name: io.file_digest(p) for p in [*art.csv.values(), *art.json.values(), *art.fields.values()]},
        "rng_streams": art.streams,
        "wall_clock_seconds": elapsed,
    }
    io.write_json(art.manifest_path, manifest)
    return art


def run(cfg: ExperimentConfig) -> RunArtifact:
    """Execute ``cfg`` and write every declared output under ``cfg.out``.

    Raises :class:`NumericalFailure` (after dumping the offending state, if the
    solver supplied one) when a flow produces non-finite values.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.serialize())
    streams = Streams(cfg.seed)
    t0 = time.perf_counter()
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            res = DRIVERS[cfg.experiment](cfg, streams)
    except FloatingPointError as e:
        dump = None
        state = getattr(e, "state", None)
        if state is not None:
            dump = out / "blowup.gblf"
            arr = np.asarray(state)
            io.write_fields(dump, arr.reshape(-1, arr.shape[-1]), float("nan"))
        io.write_json(out / "failure.json", {"error": str(e), "step": getattr(e, "step", None),
                                             "dump": None if dump is None else dump.name})
        raise NumericalFailure(str(e), dump) from e
    elapsed = time.perf_counter() - t0
    art = _write_result(cfg, res, out, streams, elapsed)
    log.info("%s finished in %.1f s: %s", cfg.experiment, elapsed, "pass" if art.passed else "FAIL")
    return art


# ---------------------------------------------------------------------------
# plot scripts

_PRELUDE = '''"""Generated plot script; run with python3."""
import csv
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

DATA = {data!r}
OUT = {out!r}


def rows():
    with open(DATA, newline="") as fh:
        yield from csv.DictReader(fh)

'''

_TAILS = '''
series = defaultdict(list)
for r in rows():
    series[(r["sample"], r["q"])].append((float(r["R"]), float(r["quantile"])))
fig, ax = plt.subplots()
for (name, q), pts in sorted(series.items()):
    pts.sort()
    ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o-", label=f"{{name}} q={{q}}")
ax.set_xlabel("R")
ax.set_ylabel("quantile of sup |phi| on [-R, R]")
ax.legend()
fig.savefig(OUT, dpi=120)
'''

_GRONWALL = '''
R_SEL = {R!r}
runs = defaultdict(list)
for r in rows():
    if float(r["R"]) == R_SEL and r["role"] == "holdout":
        runs[(r["p"], r["run"])].append((float(r["t"]), float(r["M_R"]), float(r["envelope"])))
fig, ax = plt.subplots()
for k, pts in sorted(runs.items()):
    pts.sort()
    t = [p[0] for p in pts]
    ax.semilogy(t, [p[1] for p in pts], color="C0", lw=0.5, alpha=0.5)
    ax.semilogy(t, [p[2] for p in pts], color="C3", lw=0.5, alpha=0.3)
ax.set_xlabel("t")
ax.set_ylabel("M_R (blue) and envelope (red), R = {R}")
fig.savefig(OUT, dpi=120)
'''

_WASSERSTEIN = '''
pts = sorted((float(r["L"]), float(r["W1"]), float(r["boot_low"]), float(r["boot_high"])) for r in rows())
fig, ax = plt.subplots()
L = [p[0] for p in pts]
w = [p[1] for p in pts]
ax.errorbar(L, w, yerr=[[p[1] - p[2] for p in pts], [p[3] - p[1] for p in pts]], fmt="o-")
ax.set_xscale("log")
ax.set_yscale("log")
ax.set_xlabel("L")
ax.set_ylabel("empirical W1")
fig.savefig(OUT, dpi=120)
'''

_COUPLING = '''
pts = sorted((float(r["L"]), float(r["exceedance"]), float(r["ci_low"]), float(r["ci_high"])) for r in rows())
fig, ax = plt.subplots()
L = [p[0] for p in pts]
ax.errorbar(L, [p[1] for p in pts], yerr=[[p[1] - p[2] for p in pts], [p[3] - p[1] for p in pts]], fmt="o-")
ax.set_xscale("log")
ax.set_xlabel("L")
ax.set_ylabel("P(sup distance on window > L^-eta)")
fig.savefig(OUT, dpi=120)
'''


def _plot_jobs(art: RunArtifact):
    csv = art.csv
    if "tails" in csv:
        yield "tails", csv["tails"], _TAILS, {}
    if "mass_traces" in csv:
        for R in art.config.params.get("radii", ()):
            yield f"gronwall_R{R:g}", csv["mass_traces"], _GRONWALL, {"R": float(R)}
    if "wasserstein" in csv:
        yield "wasserstein", csv["wasserstein"], _WASSERSTEIN, {}
    if "coupling_quality" in csv:
        yield "coupling_quality", csv["coupling_quality"], _COUPLING, {}


def emit_plots(art: RunArtifact, directory=None) -> list[Path]:
    """Write one self-contained plotting script per supported table.

    File names carry the first 10 hex digits of the config digest, so a given
    config always yields the same names.  Returns the written paths; an
    artifact with nothing to plot logs a warning and returns ``[]``.
    """
    directory = Path(directory) if directory is not None else art.out_dir / "plots"
    tag = art.config.digest()[:10]
    written = []
    for name, data, body, extra in _plot_jobs(art):
        data = Path(data)
        if not data.exists():
            raise FileNotFoundError(f"missing CSV {data}")
        directory.mkdir(parents=True, exist_ok=True)
        script = directory / f"plot_{name}_{tag}.py"
        png = directory / f"{name}_{tag}.png"
        script.write_text(_PRELUDE.format(data=str(data.resolve()), out=str(png.resolve()))
                          + body.format(**extra))
        written.append(script)
    if not written:
        log.warning("artifact in %s has no plottable tables", art.out_dir)
    return written


def tail_overlay(A: float, beta: float, gamma: float, q: float, count: int, lams) -> np.ndarray:
    """Thresholds of :func:`max_tail_bound` at several ``lam``, for overlaying on empirical maxima."""
    tb = max_tail_bound(A, beta, gamma, q, count)
    return np.array([tb.threshold(lam) for lam in lams])

