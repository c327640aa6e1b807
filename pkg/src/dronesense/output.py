"""CSV emission, run manifests and the property checks behind ``check`` mode.

Numbers are written with 6 significant digits and files are replaced
atomically, so identical runs give byte-identical outputs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .detectors import _binomial_half_width

TRADEOFF_COLUMNS = (
    "scheme", "alpha_beta", "n_samples", "p_h2_given_h2", "half_width", "achieved_fa_h0", "achieved_fa_h1",
)
GRID_COLUMNS = (
    "m_sensors", "n_samples", "fusion_rule", "p_h2_given_h2", "half_width", "achieved_fa_h0", "achieved_fa_h1",
)
QUICKEST_COLUMNS = ("threshold_h", "arl", "arl_half_width", "delay", "delay_half_width")
CONFUSION_COLUMNS = (
    "true_hypothesis", "trials", "p_decide_h0", "p_decide_h1", "p_decide_h2",
    "half_width_h0", "half_width_h1", "half_width_h2",
)
SCHEMAS = {
    "tradeoff": TRADEOFF_COLUMNS,
    "grid": GRID_COLUMNS,
    "quickest": QUICKEST_COLUMNS,
    "confusion": CONFUSION_COLUMNS,
}

ROW_SUM_TOL = 1e-5  # three entries each rounded to 6 significant digits


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6g}"


def atomic_write(path, data: bytes):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue().encode()


def tradeoff_rows(result):
    return [
        (p.scheme, p.alpha_beta, p.n_samples, p.p_h2, p.half_width, p.fa_h0, p.fa_h1) for p in result.points
    ]


def grid_rows(result):
    return [
        (p.m_sensors, p.n_samples, p.fusion_rule, p.p_h2, p.half_width, p.fa_h0, p.fa_h1) for p in result.points
    ]


def quickest_rows(metrics):
    return [
        (m.threshold_h, m.average_run_length, m.arl_half_width, m.average_detection_delay, m.delay_half_width)
        for m in metrics
    ]


def confusion_rows(cm):
    rows = []
    for i in range(3):
        n = cm.trial_counts[i]
        e, hw = cm.entries[i], cm.half_widths[i]
        if e is None:
            rows.append((f"H{i}", 0, None, None, None, None, None, None))
        else:
            rows.append((f"H{i}", n, *e, *hw))
    return rows


def manifest_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".manifest.json")


def write_outputs(out_dir, kind, rows, manifest) -> Path:
    """Write ``<kind>.csv`` and its manifest; returns the CSV path."""
    out_dir = Path(out_dir)
    path = out_dir / f"{kind}.csv"
    data = csv_bytes(SCHEMAS[kind], rows)
    man = dict(manifest, kind=kind, file=path.name, sha256=hashlib.sha256(data).hexdigest())
    atomic_write(path, data)
    atomic_write(manifest_path(path), (json.dumps(man, indent=2, sort_keys=True) + "\n").encode())
    return path


# ----------------------------------------------------------------------------
# checks


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _num(s):
    return math.nan if s in ("", None) else float(s)


def read_csv(path):
    """Rows of an emitted CSV as dicts; raises ValueError on an unknown header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        kind = next((k for k, cols in SCHEMAS.items() if cols == header), None)
        if kind is None:
            raise ValueError(f"{path}: unrecognised header {','.join(header)}")
        return kind, [dict(zip(header, r)) for r in reader]


def _load_manifest(path):
    mp = manifest_path(path)
    if not mp.exists():
        return None
    return json.loads(mp.read_text())


def _fa_hw(p, n):
    return _binomial_half_width(p, n) if n else 0.0


def check_monotone(values, half_widths, k=2.0):
    """Indices ``i`` where ``values[i+1] < values[i] - k * max(hw_i, hw_i+1)``."""
    bad = []
    for i in range(len(values) - 1):
        a, b = values[i], values[i + 1]
        if math.isnan(a) or math.isnan(b):
            continue
        if b < a - k * max(half_widths[i], half_widths[i + 1]):
            bad.append(i)
    return bad


def check_constraint_audit(points, trials, k=3.0):
    """Points whose achieved false alarms exceed the constraint by more than k half-widths.

    ``points`` holds ``(label, alpha, beta, fa_h0, fa_h1)``.
    """
    bad = []
    for label, alpha, beta, f0, f1 in points:
        if math.isnan(f0):
            continue
        if f0 > alpha + k * _fa_hw(f0, trials) or f1 > beta + k * _fa_hw(f1, trials):
            bad.append(label)
    return bad


def diminishing_returns(p, hw, k=2.0):
    """Last-step gain <= first-step gain (within k combined half-widths)."""
    if len(p) < 3:
        return True
    first, last = p[1] - p[0], p[-1] - p[-2]
    tol = k * math.hypot(max(hw[0], hw[1]), max(hw[-1], hw[-2]))
    return last <= first + tol


def _check_tradeoff(rows, manifest):
    trials = manifest.get("trials") if manifest else None
    out = []
    by = {}
    for r in rows:
        by.setdefault((r["scheme"], int(r["n_samples"])), []).append(
            (float(r["alpha_beta"]), _num(r["p_h2_given_h2"]), _num(r["half_width"]),
             _num(r["achieved_fa_h0"]), _num(r["achieved_fa_h1"]))
        )
    mono = [f"{s} N={n} step {i}" for (s, n), pts in by.items()
            for i in check_monotone([p[1] for p in pts], [p[2] for p in pts])]
    out.append(CheckResult("monotone in alpha=beta", not mono, "; ".join(mono)))

    bad_n = []
    for (s, n), pts in by.items():
        for (s2, n2), pts2 in by.items():
            if s2 != s or n2 <= n:
                continue
            hi = {a: (p, h) for a, p, h, *_ in pts2}
            for a, p, h, *_ in pts:
                if a in hi and hi[a][0] < p - 2 * max(h, hi[a][1]):
                    bad_n.append(f"{s} alpha={a} N={n2}<N={n}")
    out.append(CheckResult("non-decreasing in N", not bad_n, "; ".join(bad_n)))

    schemes = {s for s, _ in by}
    if {"genie", "glrt"} <= schemes:
        bad = []
        for (s, n), pts in by.items():
            if s != "glrt" or ("genie", n) not in by:
                continue
            g = {a: (p, h) for a, p, h, *_ in by[("genie", n)]}
            for a, p, h, *_ in pts:
                if a in g and g[a][0] < p - 2 * max(h, g[a][1]):
                    bad.append(f"N={n} alpha={a}")
        out.append(CheckResult("genie dominance", not bad, "; ".join(bad)))

    if trials:
        audit = [(f"{s} N={n} alpha={a}", a, a, f0, f1) for (s, n), pts in by.items() for a, _, _, f0, f1 in pts]
        bad = check_constraint_audit(audit, trials)
        out.append(CheckResult("constraint audit", not bad, "; ".join(bad)))
    return out


def _check_grid(rows, manifest):
    out = []
    pts = {(int(r["m_sensors"]), int(r["n_samples"])): (_num(r["p_h2_given_h2"]), _num(r["half_width"]),
                                                       _num(r["achieved_fa_h0"]), _num(r["achieved_fa_h1"]))
           for r in rows}
    ms = sorted({m for m, _ in pts})
    ns = sorted({n for _, n in pts})
    bad = []
    for n in ns:
        col = [pts[(m, n)] for m in ms if (m, n) in pts]
        bad += [f"N={n} M step {i}" for i in check_monotone([c[0] for c in col], [c[1] for c in col])]
    for m in ms:
        row = [pts[(m, n)] for n in ns if (m, n) in pts]
        bad += [f"M={m} N step {i}" for i in check_monotone([c[0] for c in row], [c[1] for c in row])]
    out.append(CheckResult("non-decreasing in M and N", not bad, "; ".join(bad)))

    dim = [f"N={n}" for n in ns
           if not diminishing_returns([pts[(m, n)][0] for m in ms], [pts[(m, n)][1] for m in ms])]
    out.append(CheckResult("diminishing returns in M", not dim, "; ".join(dim)))

    if manifest and manifest.get("trials") and manifest.get("constraints"):
        a, b = manifest["constraints"]["alpha"], manifest["constraints"]["beta"]
        audit = [(f"M={m} N={n}", a, b, v[2], v[3]) for (m, n), v in pts.items()]
        bad = check_constraint_audit(audit, manifest["trials"])
        out.append(CheckResult("constraint audit", not bad, "; ".join(bad)))
    return out


def _check_quickest(rows, manifest):
    arl = [_num(r["arl"]) for r in rows]
    h = [float(r["threshold_h"]) for r in rows]
    order = sorted(range(len(h)), key=h.__getitem__)
    inc = all(arl[order[i + 1]] > arl[order[i]] for i in range(len(order) - 1))
    return [CheckResult("ARL increasing in h", inc)]


def _check_confusion(rows, manifest):
    bad = []
    for r in rows:
        if int(r["trials"]) == 0:
            if any(r[f"p_decide_h{j}"] for j in range(3)):
                bad.append(f"{r['true_hypothesis']} zero-filled")
            continue
        e = [float(r[f"p_decide_h{j}"]) for j in range(3)]
        if any(not 0 <= x <= 1 for x in e) or abs(sum(e) - 1) > ROW_SUM_TOL:
            bad.append(r["true_hypothesis"])
    out = [CheckResult("row-stochastic", not bad, "; ".join(bad))]
    if manifest and manifest.get("constraints"):
        a, b = manifest["constraints"]["alpha"], manifest["constraints"]["beta"]
        audit = []
        for r, lim in zip(rows[:2], (a, b)):
            n = int(r["trials"])
            if n:
                fa = 1.0 - float(r[f"p_decide_h{r['true_hypothesis'][1]}"])
                if fa > lim + 3 * _fa_hw(fa, n) + 1e-6:
                    audit.append(r["true_hypothesis"])
        out.append(CheckResult("constraint audit", not audit, "; ".join(audit)))
    return out


_CHECKERS = {
    "tradeoff": _check_tradeoff,
    "grid": _check_grid,
    "quickest": _check_quickest,
    "confusion": _check_confusion,
}


def check_file(path):
    """Re-parse an emitted CSV and run the property checks for its kind."""
    kind, rows = read_csv(path)
    manifest = _load_manifest(path)
    results = []
    if manifest and "sha256" in manifest:
        digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        results.append(CheckResult("manifest digest", digest == manifest["sha256"]))
    results += _CHECKERS[kind](rows, manifest)
    return kind, results
