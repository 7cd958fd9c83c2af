"""Report output: JSON + text tables, per-joint trace CSVs, and figures."""

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import schema as sch
from .evaluation import render_table

log = logging.getLogger("gaitcast.report")


def write_report_files(report, out_dir):
    """Write report.json and report.txt; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    txt_path = out / "report.txt"
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    txt_path.write_text(render_table(report), encoding="utf-8")
    return json_path, txt_path


def write_traces(angle_series, moment_series, rate_hz, out_dir):
    """Per-joint CSVs of (time, truth, prediction) at both horizons."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for quantity, series in (("angle", angle_series), ("moment", moment_series)):
        ch, dh = series["CH"], series["DH"]
        n = ch.truth.shape[0]
        for j, joint in enumerate(sch.JOINTS):
            path = out / f"{quantity}_{joint}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["time_s", "truth_ch", "pred_ch",
                                 "truth_dh", "pred_dh"])
                for i in range(n):
                    writer.writerow([
                        format(i / rate_hz, ".6g"),
                        format(ch.truth[i, j], ".9g"),
                        format(ch.pred[i, j], ".9g"),
                        format(dh.truth[i, j], ".9g"),
                        format(dh.pred[i, j], ".9g"),
                    ])
            paths.append(path)
    return paths


def render_figures(angle_series, moment_series, rate_hz, out_dir, max_seconds=10.0):
    """Truth-vs-prediction figures per quantity, both horizons, all six joints."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    units = {"angle": "deg (normalized)", "moment": "N.m/kg (normalized)"}
    paths = []
    for quantity, series in (("angle", angle_series), ("moment", moment_series)):
        ch, dh = series["CH"], series["DH"]
        n = min(ch.truth.shape[0], int(max_seconds * rate_hz))
        t = [i / rate_hz for i in range(n)]
        fig, axes = plt.subplots(3, 2, figsize=(11, 8), sharex=True)
        for j, joint in enumerate(sch.JOINT_DISPLAY):
            col = sch.JOINTS.index(joint)
            ax = axes[j % 3][j // 3]
            ax.plot(t, ch.truth[:n, col], color="k", lw=1.2, label="truth")
            ax.plot(t, ch.pred[:n, col], color="tab:blue", lw=0.9,
                    label=f"pred {30} ms")
            ax.plot(t, dh.pred[:n, col], color="tab:red", lw=0.9, ls="--",
                    label=f"pred {250} ms")
            ax.set_title(sch.JOINT_LABELS[joint], fontsize=9)
            if j % 3 == 2:
                ax.set_xlabel("time [s]")
        axes[1][0].set_ylabel(units[quantity])
        handles, labels = axes[0][0].get_legend_handles_labels()
        fig.legend(handles, labels, loc="upper center", ncol=3, fontsize=8)
        fig.suptitle(f"{'Joint angles' if quantity == 'angle' else 'Joint moments'}:"
                     " prediction vs truth", y=0.99, fontsize=11)
        fig.tight_layout(rect=(0, 0, 1, 0.94))
        path = out / f"{quantity}s.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
        log.info("wrote figure %s", path)
    return paths
