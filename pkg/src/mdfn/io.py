"""Result bundles: CSV series, a YAML summary and a diagnostics log.

Every CSV starts with one ``#`` provenance line carrying the config hash and
tool version, followed by a header row whose column names end in their unit
(``time_s``, ``voltage_V``, ``capacity_mAh_cm2``). Numbers are written with
``repr`` so they use ``.`` as decimal separator regardless of locale.
"""
from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
import os
from pathlib import Path

import numpy as np
import yaml

from . import __version__

OUTPUT_ENV = "MDFN_OUTPUT_DIR"
DEFAULT_OUTPUT = "mdfn-output"


def output_directory(flag: str | None, configured: str | None, command: str) -> Path:
    """--out beats the config file, which beats $MDFN_OUTPUT_DIR/<command>."""
    if flag:
        return Path(flag)
    if configured:
        return Path(configured)
    return Path(os.environ.get(OUTPUT_ENV, DEFAULT_OUTPUT)) / command


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v).replace("\n", " ")


def _plain(v):
    """YAML-safe view of numpy scalars, tuples and nested containers."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return None if not math.isfinite(v) else v
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


class ResultBundle:
    """One run's output directory.

    Files are written one at a time by the owning process; nothing here is
    shared with worker processes.
    """

    def __init__(self, directory, config_hash: str, command: str):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.command = command
        self.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self.files: list[str] = []
        self._handler = logging.FileHandler(self.directory / "diagnostics.log", mode="w", encoding="utf-8")
        self._handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger("mdfn").addHandler(self._handler)
        logging.getLogger("mdfn").setLevel(logging.INFO)

    @property
    def provenance(self) -> str:
        return f"# mdfn {__version__} config_hash={self.config_hash} command={self.command} utc={self.timestamp}"

    def write_csv(self, name: str, columns, rows) -> Path:
        """Write ``rows`` (sequences or dicts keyed by column) under ``columns``."""
        columns = list(columns)
        path = self.directory / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.provenance + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                if isinstance(row, dict):
                    row = [row.get(c) for c in columns]
                if len(row) != len(columns):
                    raise ValueError(f"{name}: row has {len(row)} cells for {len(columns)} columns")
                w.writerow([_cell(v) for v in row])
        self.files.append(path.name)
        return path

    def write_table(self, name: str, records: list[dict]) -> Path:
        """Dict records with the union of their keys as columns, first-seen order."""
        columns: list[str] = []
        for rec in records:
            columns.extend(k for k in rec if k not in columns)
        return self.write_csv(name, columns, records)

    def write_summary(self, summary: dict, exit_code: int) -> Path:
        doc = {
            "tool": "mdfn", "version": __version__, "command": self.command,
            "config_hash": self.config_hash, "timestamp_utc": self.timestamp,
            "exit_code": exit_code, "files": sorted(self.files + ["summary.yaml", "diagnostics.log"]),
        }
        doc.update(_plain(summary))
        path = self.directory / "summary.yaml"
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(doc, fh, sort_keys=False)
        return path

    def close(self):
        logging.getLogger("mdfn").removeHandler(self._handler)
        self._handler.close()


# ---- standard tables --------------------------------------------------------

SERIES_COLUMNS = ("step_index", "mode", "time_s", "voltage_V", "current_A", "capacity_mAh_cm2")


def series_rows(result):
    for s in result.steps:
        for t, v, i, q in zip(s.t, s.V, s.I, s.q):
            yield (s.step_index, s.mode, t, v, i, q)


def probe_columns(step) -> list[str]:
    cols = ["step_index", "time_s"]
    for k in step.probes:
        if k == "c_e_CE":
            cols.append("c_e_CE_mol_m3")
        elif k == "phi_e_CC":
            cols.append("phi_e_CC_V")
        else:
            cols.append(f"{k}_1")  # normalised reaction current, dimensionless
    return cols


def probe_rows(step):
    keys = list(step.probes)
    for n, t in enumerate(step.t):
        yield [step.step_index, t] + [step.probes[k][n] for k in keys]


SNAPSHOT_COLUMNS = ("step_index", "snapshot", "time_s", "x_m", "c_e_mol_m3", "phi_e_V", "phi_s_V",
                    "c_surf_mol_m3", "Jbar_1")


def snapshot_rows(step):
    for n, snap in enumerate(step.snapshots):
        for j in range(len(snap["x"])):
            yield (step.step_index, n, snap["t"], snap["x"][j], snap["c_e"][j], snap["phi_e"][j],
                   snap["phi_s"][j], snap["c_surf"][j], snap["Jbar"][j])


def step_summary(step) -> dict:
    d = {
        "step_index": step.step_index, "mode": step.mode, "c_rate": step.c_rate, "current_A": step.current,
        "capacity_mAh_cm2": step.capacity, "duration_min": step.duration / 60.0,
        "termination": step.termination, "failure": step.failure,
        "min_c_e_mol_m3": step.min_c_e, "min_c_e_x_m": step.min_c_e_x, "peak_phi_e_V": step.peak_phi_e,
    }
    if step.depletion is not None:
        ev = step.depletion
        d["depletion"] = {"time_s": ev.time, "x_m": ev.x, "region": ev.region, "c_e_mol_m3": ev.c_e}
    return d


def write_result(bundle: ResultBundle, result, prefix: str = "") -> None:
    """Voltage series, probe series and spatial snapshots of every step."""
    bundle.write_csv(f"{prefix}voltage.csv", SERIES_COLUMNS, series_rows(result))
    for s in result.steps:
        if not s.t:
            continue
        bundle.write_csv(f"{prefix}probes_step{s.step_index}.csv", probe_columns(s), probe_rows(s))
        if s.snapshots:
            bundle.write_csv(f"{prefix}snapshots_step{s.step_index}.csv", SNAPSHOT_COLUMNS, snapshot_rows(s))


def read_csv(path):
    """Read a bundle CSV into (provenance line, header, rows of floats or strings)."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\n")
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]

    def conv(x):
        try:
            return float(x)
        except ValueError:
            return x

    return first, header, [[conv(x) for x in r] for r in body]
