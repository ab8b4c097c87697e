"""Write criticality reports and cross-model comparison tables to disk."""
from __future__ import annotations

import csv
import json
import math
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .metrics import NEAR_CRITICAL, CriticalityReport
from .plga import TENSOR_NAMES

REPORT_COLUMNS = ("tensor", "rmse_12", "rmse_1c", "norm_rmse_12", "norm_rmse_1c",
                  "mu_1", "sigma_1", "mu_c", "sigma_c", "phase")
HISTOGRAM_COLUMNS = ("tensor", "bucket_left", "bucket_right", "density")
HEATMAP_COLUMNS = ("row", "col", "value")
COMPARISON_COLUMNS = ("model", "group") + TENSOR_NAMES


def _num(x: float) -> str:
    return repr(float(x))


def _json_num(x: float):
    return float(x) if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _report_rows(rep: CriticalityReport):
    for n in TENSOR_NAMES:
        c = rep.comparisons[n]
        mu1, s1 = rep.stats["run1"][n]
        muc, sc = rep.stats["cached"][n]
        phase = rep.phase.phase if n == rep.phase.tensor else ""
        yield [n] + [_num(v) for v in (c.rmse_12, c.rmse_1c, c.norm_rmse_12, c.norm_rmse_1c, mu1, s1, muc, sc)] + [phase]


def summary_dict(rep: CriticalityReport) -> dict:
    return {
        "model_id": rep.model_id,
        "order_parameter": {n: _json_num(v) for n, v in rep.order_parameters.items()},
        "phase": rep.phase.phase,
        "phase_tensor": rep.phase.tensor,
        "threshold": rep.phase.threshold,
    }


def _write_files(rep: CriticalityReport, tmp: Path) -> list[str]:
    names = ["report.csv", "summary.json"]
    _write_csv(tmp / "report.csv", REPORT_COLUMNS, _report_rows(rep))
    (tmp / "summary.json").write_text(json.dumps(summary_dict(rep), indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    by_run: dict[str, list] = {}
    for run, h in rep.histograms:
        by_run.setdefault(run, []).extend(
            [h.tensor, _num(l), _num(r), _num(d)] for l, r, d in zip(h.edges[:-1], h.edges[1:], h.densities)
        )
    for run, rows in by_run.items():
        name = f"histograms_{run}.csv"
        _write_csv(tmp / name, HISTOGRAM_COLUMNS, rows)
        names.append(name)
    for (layer, head), mat in sorted(rep.heatmaps.items()):
        name = f"heatmap_A_L{layer}_H{head}.csv"
        rows = ([i, j, _num(mat[i, j])] for i in range(mat.shape[0]) for j in range(mat.shape[1]))
        _write_csv(tmp / name, HEATMAP_COLUMNS, rows)
        names.append(name)
    return names


def emit_report(bundle, rep: CriticalityReport, out_dir) -> list[Path]:
    """Write ``report.csv``, ``summary.json``, histogram and heatmap CSVs into ``out_dir``.

    Files are first written to a scratch directory inside ``out_dir`` and
    only moved into place once all of them exist; any failure removes the
    scratch directory and leaves ``out_dir`` untouched.
    """
    if set(bundle.runs) != set(rep.stats):
        raise InputError(f"bundle runs {sorted(bundle.runs)} do not match report runs {sorted(rep.stats)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out, prefix=".report-"))
    try:
        names = _write_files(rep, tmp)
        for name in names:
            os.replace(tmp / name, out / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return [out / n for n in names]


def load_summary(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    if not path.is_file():
        raise InputError(f"summary not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    for key in ("model_id", "order_parameter", "phase"):
        if key not in data:
            raise FormatError(f"{path}: missing {key!r}")
    return data


def comparison_rows(summaries: list[dict]) -> list[list[str]]:
    """Order-parameter table, near-critical models first, input order kept within each group."""
    near = [s for s in summaries if s["phase"] == NEAR_CRITICAL]
    rest = [s for s in summaries if s["phase"] != NEAR_CRITICAL]
    rows = []
    for s in near + rest:
        ops = s["order_parameter"]
        rows.append([s["model_id"], s["phase"]] + [_num(float(ops[n])) for n in TENSOR_NAMES])
    return rows


def write_comparison(summaries: list[dict], path) -> Path:
    if not summaries:
        raise InputError("no model summaries to compare")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        _write_csv(Path(tmp), COMPARISON_COLUMNS, comparison_rows(summaries))
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def heatmap_array(path) -> np.ndarray:
    """Read a ``row,col,value`` heatmap CSV back into a matrix."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    n = 1 + max(int(r["row"]) for r in rows)
    m = 1 + max(int(r["col"]) for r in rows)
    out = np.zeros((n, m))
    for r in rows:
        out[int(r["row"]), int(r["col"])] = float(r["value"])
    return out
