"""Result files: waveform tables, densities, summaries, comparisons and figures.

Waveform tables have one row per time point and the columns
``time, <out>:mean, <out>:std, <out>:c1 .. <out>:cK`` (coefficient columns
only for expansion methods). Floats are written with 17 significant digits
so files re-read to the same doubles.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pss import kde_density

FLOAT_FMT = "%.17g"
DENSITY_SAMPLES = 10_000


class CompareError(ValueError):
    pass


@dataclass
class Table:
    """In-memory form of a waveform file."""

    times: np.ndarray  # (T,)
    names: list[str]
    mean: np.ndarray  # (T, m)
    std: np.ndarray  # (T, m)
    coeffs: np.ndarray | None  # (T, K, m)

    @property
    def K(self) -> int | None:
        return None if self.coeffs is None else self.coeffs.shape[1]


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


def write_table(path: Path, table: Table, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        header = ["time"]
        for j, name in enumerate(table.names):
            header += [f"{name}:mean", f"{name}:std"]
            if table.coeffs is not None:
                header += [f"{name}:c{k + 1}" for k in range(table.K)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, t in enumerate(table.times):
                row = [_fmt(t)]
                for j in range(len(table.names)):
                    row += [_fmt(table.mean[i, j]), _fmt(table.std[i, j])]
                    if table.coeffs is not None:
                        row += [_fmt(c) for c in table.coeffs[i, :, j]]
                w.writerow(row)
    elif fmt == "json":
        doc = {"time": table.times.tolist(), "outputs": {}}
        for j, name in enumerate(table.names):
            entry = {"mean": table.mean[:, j].tolist(), "std": table.std[:, j].tolist()}
            if table.coeffs is not None:
                entry["coeffs"] = table.coeffs[:, :, j].tolist()
            doc["outputs"][name] = entry
        path.write_text(json.dumps(doc, indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_table(path) -> Table:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        names = list(doc["outputs"])
        times = np.array(doc["time"], dtype=float)
        mean = np.array([doc["outputs"][n]["mean"] for n in names], dtype=float).T
        std = np.array([doc["outputs"][n]["std"] for n in names], dtype=float).T
        coeffs = None
        if names and "coeffs" in doc["outputs"][names[0]]:
            coeffs = np.stack([np.array(doc["outputs"][n]["coeffs"], dtype=float)
                               for n in names], axis=-1)
        return Table(times, names, mean.reshape(len(times), -1), std.reshape(len(times), -1),
                     coeffs)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, -1)
    names = [h[: -len(":mean")] for h in header if h.endswith(":mean")]
    col = {h: i for i, h in enumerate(header)}
    mean = np.stack([data[:, col[f"{n}:mean"]] for n in names], axis=1)
    std = np.stack([data[:, col[f"{n}:std"]] for n in names], axis=1)
    coeffs = None
    K = sum(1 for h in header if names and h.startswith(f"{names[0]}:c"))
    if K:
        coeffs = np.stack([np.stack([data[:, col[f"{n}:c{k + 1}"]] for k in range(K)], axis=1)
                           for n in names], axis=-1)
    return Table(data[:, 0], names, mean, std, coeffs)


def write_density(path: Path, samples, fmt: str = "csv") -> Path:
    x, dens = kde_density(samples)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "density"])
            for a, b in zip(x, dens):
                w.writerow([_fmt(a), _fmt(b)])
    else:
        Path(path).write_text(json.dumps({"value": x.tolist(), "density": dens.tolist()}) + "\n")
    return Path(path)


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path: Path, doc: dict) -> Path:
    Path(path).write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    return Path(path)


def find_table(run_dir) -> Path:
    run_dir = Path(run_dir)
    if run_dir.is_file():
        return run_dir
    summary = run_dir / "summary.json"
    if summary.exists():
        doc = json.loads(summary.read_text())
        if "waveform_file" in doc:
            return run_dir / doc["waveform_file"]
    for name in ("dc", "tran", "pss"):
        for ext in ("csv", "json"):
            p = run_dir / f"{name}.{ext}"
            if p.exists():
                return p
    raise CompareError(f"no result table in {run_dir}")


def compare(run_a, run_b, tol: float) -> dict:
    """Per-time L2 distance between two runs' coefficient vectors.

    Uses expansion coefficients when both runs have them, otherwise the
    (mean, std) pairs. Run b is linearly interpolated onto run a's times.
    """
    a, b = read_table(find_table(run_a)), read_table(find_table(run_b))
    if a.names != b.names:
        raise CompareError(f"runs have different outputs: {a.names} vs {b.names}")
    use_coeffs = a.coeffs is not None and b.coeffs is not None
    if use_coeffs and a.K != b.K:
        raise CompareError(f"runs use different bases (K={a.K} vs K={b.K})")
    if use_coeffs:
        va, vb = a.coeffs.reshape(len(a.times), -1), b.coeffs.reshape(len(b.times), -1)
        metric = "coefficients"
    else:
        va = np.concatenate([a.mean, a.std], axis=1)
        vb = np.concatenate([b.mean, b.std], axis=1)
        metric = "mean_std"
    if len(a.times) != len(b.times) or np.any(a.times != b.times):
        if a.times[0] < b.times[0] or a.times[-1] > b.times[-1]:
            raise CompareError("time axes do not overlap")
        vb = np.stack([np.interp(a.times, b.times, vb[:, j]) for j in range(vb.shape[1])], axis=1)
    diff = np.linalg.norm(va - vb, axis=1)
    return {"metric": metric, "max": float(diff.max()), "mean": float(diff.mean()),
            "tolerance": float(tol), "pass": bool(diff.max() <= tol),
            "per_time": diff.tolist(), "times": a.times.tolist()}


def plot_table(table: Table, out_dir: Path, prefix: str) -> list[Path]:
    """Mean +/- std figure per output (PNG)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for j, name in enumerate(table.names):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        m, s = table.mean[:, j], table.std[:, j]
        if len(table.times) > 1:
            ax.plot(table.times, m, label="mean")
            ax.fill_between(table.times, m - s, m + s, alpha=0.3, label="mean +/- std")
            ax.set_xlabel("time [s]")
        else:
            ax.errorbar([0], m, yerr=s, fmt="o", label="mean +/- std")
            ax.set_xticks([])
        ax.set_ylabel(name)
        ax.legend(loc="best")
        fig.tight_layout()
        p = Path(out_dir) / f"{prefix}_{safe_name(name)}.png"
        fig.savefig(p, dpi=120, metadata={"Software": None})
        plt.close(fig)
        paths.append(p)
    return paths


def plot_density(path_csv: Path, label: str, out_path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(path_csv, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    data = np.array(rows, dtype=float).reshape(-1, 2)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(data[:, 0], data[:, 1])
    ax.set_xlabel(label)
    ax.set_ylabel("density")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return Path(out_path)


def safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_")


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
