"""Two-horizon extraction and the five-metric evaluation suite.

Metrics follow the reporting convention of the results table: Spearman's rho
and R-squared for curve similarity, MAE / RMSE / range-normalized RMSE for
magnitude error, each at a close horizon (3rd predicted sample, 30 ms) and a
distant horizon (25th predicted sample, 250 ms). On the normalized scale the
three error metrics are multiplied by 100.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as student_t

from . import schema as sch
from .errors import DataError

CLOSE_OFFSET = 2    # zero-based row of the 30 ms sample in each block
DISTANT_OFFSET = 24  # zero-based row of the 250 ms sample
HORIZONS = {"CH": CLOSE_OFFSET, "DH": DISTANT_OFFSET}
SCALES = ("normalized", "physical")


def horizon_offsets(horizon_len):
    """CH/DH offsets for a given horizon: 3rd sample (when available) and last."""
    if horizon_len < 1:
        raise DataError("horizon_len must be positive")
    return {"CH": min(CLOSE_OFFSET, horizon_len - 1), "DH": horizon_len - 1}


@dataclass
class HorizonSeries:
    """Per-joint truth and prediction series at one horizon offset."""

    truth: np.ndarray  # (frames, joints)
    pred: np.ndarray
    offset: int

    def __post_init__(self):
        if self.truth.shape != self.pred.shape:
            raise DataError(
                f"truth {self.truth.shape} and prediction {self.pred.shape} differ")


def extract_horizons(truth_blocks, pred_blocks, offsets=None):
    """Slice fixed horizon rows out of contiguous (frames, horizon, joints) blocks."""
    truth_blocks = np.asarray(truth_blocks)
    pred_blocks = np.asarray(pred_blocks)
    if truth_blocks.shape != pred_blocks.shape:
        raise DataError(
            f"misaligned blocks: {truth_blocks.shape} vs {pred_blocks.shape}")
    if truth_blocks.ndim != 3:
        raise DataError("expected (frames, horizon, joints) blocks")
    offsets = offsets or HORIZONS
    out = {}
    for label, off in offsets.items():
        if not 0 <= off < truth_blocks.shape[1]:
            raise DataError(f"horizon offset {off} outside block of "
                            f"{truth_blocks.shape[1]} rows")
        out[label] = HorizonSeries(truth=truth_blocks[:, off, :].copy(),
                                   pred=pred_blocks[:, off, :].copy(),
                                   offset=off)
    return out


def _average_ranks(x):
    """Ranks 1..n with ties assigned the average of their positions."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    while i < len(sx):
        j = i
        while j + 1 < len(sx) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y):
    """Pearson correlation of average ranks; None when ranks are degenerate."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("series must be 1-D and equal length")
    if len(x) < 2:
        raise DataError("need at least 2 points")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        return None
    return float(np.clip((rx * ry).sum() / denom, -1.0, 1.0))


def spearman_pvalue(rho, n):
    """Two-sided p-value via the t approximation; informational only."""
    if rho is None or n < 3:
        return None
    if abs(rho) >= 1.0:
        return 0.0
    tstat = rho * np.sqrt((n - 2) / (1.0 - rho * rho))
    return float(2.0 * student_t.sf(abs(tstat), df=n - 2))


def r_squared(truth, pred):
    """1 - SS_res/SS_tot about the truth mean; None for constant truth."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape or truth.ndim != 1:
        raise DataError("series must be 1-D and equal length")
    if len(truth) < 2:
        raise DataError("need at least 2 points")
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        return None
    ss_res = float(np.sum((truth - pred) ** 2))
    return 1.0 - ss_res / ss_tot


def error_metrics(truth, pred, scale="normalized"):
    """MAE, RMSE, and range-normalized RMSE; x100 on the normalized scale."""
    if scale not in SCALES:
        raise DataError(f"scale must be one of {SCALES}")
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape or len(truth) < 1:
        raise DataError("series must be equal-length and nonempty")
    err = pred - truth
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    span = float(truth.max() - truth.min())
    nrmse = rmse / span if span > 0 else None
    if scale == "normalized":
        mae *= 100.0
        rmse *= 100.0
        nrmse = None if nrmse is None else nrmse * 100.0
    return {"mae": mae, "rmse": rmse, "nrmse": nrmse}


@dataclass
class MetricsRow:
    joint: str
    quantity: str  # "angle" | "moment"
    horizon: str   # "CH" | "DH"
    rho: float | None
    rho_p: float | None
    r2: float | None
    mae: float
    rmse: float
    nrmse: float | None

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class MetricsReport:
    rows: list
    scale: str
    meta: dict = field(default_factory=dict)

    def cell(self, quantity, joint, horizon):
        for row in self.rows:
            if (row.quantity, row.joint, row.horizon) == (quantity, joint, horizon):
                return row
        raise DataError(f"missing report cell ({quantity}, {joint}, {horizon})")

    def to_json(self):
        return json.dumps({"kind": "metrics_report", "scale": self.scale,
                           "meta": self.meta,
                           "rows": [r.to_dict() for r in self.rows]},
                          sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        if obj.get("kind") != "metrics_report":
            raise DataError("not a metrics report")
        rows = [MetricsRow(**r) for r in obj["rows"]]
        return cls(rows=rows, scale=obj["scale"], meta=obj.get("meta", {}))


def build_report(angle_series, moment_series, scale="normalized", meta=None):
    """Assemble the full 12-joint x 2-horizon report from horizon series.

    `angle_series` / `moment_series` map horizon label -> HorizonSeries whose
    columns follow the canonical joint order.
    """
    if scale not in SCALES:
        raise DataError(f"scale must be one of {SCALES}")
    rows = []
    missing = []
    for quantity, series in (("angle", angle_series), ("moment", moment_series)):
        for label in HORIZONS:
            if label not in series:
                missing.append(f"{quantity}/{label}")
                continue
            hs = series[label]
            if hs.truth.shape[1] != sch.N_JOINTS:
                raise DataError(
                    f"{quantity}/{label}: expected {sch.N_JOINTS} joints, "
                    f"got {hs.truth.shape[1]}")
            n = hs.truth.shape[0]
            for j, joint in enumerate(sch.JOINTS):
                truth, pred = hs.truth[:, j], hs.pred[:, j]
                rho = spearman_rho(truth, pred)
                errs = error_metrics(truth, pred, scale)
                rows.append(MetricsRow(
                    joint=joint, quantity=quantity, horizon=label,
                    rho=rho, rho_p=spearman_pvalue(rho, n),
                    r2=r_squared(truth, pred), **errs))
    if missing:
        raise DataError(f"missing horizon series: {missing}")
    return MetricsReport(rows=rows, scale=scale, meta=meta or {})


def _fmt(v, width=7, prec=3):
    if v is None:
        return "--".rjust(width)
    return f"{v:.{prec}f}".rjust(width)


def render_table(report):
    """Aligned text table mirroring the results-table layout."""
    lines = []
    metrics = ["rho", "r2", "mae", "rmse", "nrmse"]
    head1 = " " * 24 + "".join(f"{m:^16}" for m in
                               ["rho", "R2", "MAE", "RMSE", "nRMSE"])
    head2 = f"{'':12}{'Joint':12}" + "".join(f"{'CH':>8}{'DH':>8}" for _ in metrics)
    lines.append(head1)
    lines.append(head2)
    lines.append("-" * len(head2))
    for quantity, title in (("angle", "Kinematics"), ("moment", "Kinetics")):
        for i, joint in enumerate(sch.JOINT_DISPLAY):
            label = title if i == 0 else ""
            cells = []
            for m in metrics:
                for horizon in ("CH", "DH"):
                    row = report.cell(quantity, joint, horizon)
                    cells.append(_fmt(getattr(row, m), width=8))
            lines.append(f"{label:12}{sch.JOINT_LABELS[joint]:12}" + "".join(cells))
        lines.append("-" * len(head2))
    if report.scale == "normalized":
        lines.append("MAE, RMSE, nRMSE on the min-max normalized scale, x100.")
    else:
        lines.append("MAE/RMSE in physical units (deg, N.m/kg); nRMSE is a ratio.")
    return "\n".join(lines) + "\n"
