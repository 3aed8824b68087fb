"""Paired evaluation of a result directory against references."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from ..errors import InvalidInputError
from ..images import load_array, to_tensor
from .basic import rmse
from .niqe import niqe
from .sifid import sifid

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
ALL_METRICS = ("rmse", "sifid", "niqe")


def _index(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return {p.stem: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def evaluate_table(result_dir, reference_dir, metrics=ALL_METRICS, extractor=None) -> dict:
    """Score every result image against the reference with the same stem.

    RMSE is on the 8-bit [0, 255] scale, NIQE is computed on the result
    image alone. A metric that does not apply to a pair (dims differ, image
    too small for NIQE) is left as ``None`` with the reason in ``errors``.

    Returns:
        dict with ``rows`` (one per pair), ``summary`` (means over the
        non-missing values, ``None`` when there are no rows), ``unmatched``
        and ``extractor``.
    """
    metrics_in = set(metrics)
    metrics = tuple(m for m in ALL_METRICS if m in metrics_in)
    unknown = set(metrics_in) - set(ALL_METRICS)
    if unknown:
        raise InvalidInputError(f"unknown metrics {sorted(unknown)}")
    res, ref = _index(Path(result_dir)), _index(Path(reference_dir))
    if "sifid" in metrics and extractor is None and res.keys() & ref.keys():
        from .extractors import default_extractor
        extractor = default_extractor()
    rows = []
    for name in sorted(res.keys() & ref.keys()):
        a, b = load_array(res[name]), load_array(ref[name])
        row, errors = {"name": name}, []
        for m in metrics:
            try:
                if m == "rmse":
                    row[m] = rmse(a, b)
                elif m == "sifid":
                    row[m] = sifid(to_tensor(b), to_tensor(a), extractor)
                else:
                    row[m] = niqe(a)
            except InvalidInputError as e:
                row[m] = None
                errors.append(f"{m}: {e}")
        if errors:
            row["errors"] = "; ".join(errors)
        rows.append(row)
    summary = None
    if rows:
        summary = {"name": "mean"}
        for m in metrics:
            vals = [r[m] for r in rows if r.get(m) is not None]
            summary[m] = sum(vals) / len(vals) if vals else None
    return {
        "metrics": list(metrics),
        "rmse_scale": "8-bit [0, 255]",
        "extractor": getattr(extractor, "name", None),
        "extractor_comparable": getattr(extractor, "comparable", None),
        "rows": rows,
        "summary": summary,
        "unmatched": {"results": sorted(res.keys() - ref.keys()),
                      "references": sorted(ref.keys() - res.keys())},
    }


def report_rows(report: dict) -> list[dict]:
    return report["rows"] + ([report["summary"]] if report["summary"] else [])


def format_report(report: dict, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report, indent=2)
    if fmt != "csv":
        raise InvalidInputError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["name", *report["metrics"], "errors"], extrasaction="ignore")
    w.writeheader()
    for row in report_rows(report):
        w.writerow({k: ("" if v is None or (isinstance(v, float) and math.isnan(v)) else v)
                    for k, v in row.items()})
    return buf.getvalue()
