"""Self-contained SVG renderings of a report: ROC curves, score histograms, 2-d scatter.

Output depends only on the report, so identical reports give identical files.
"""
from __future__ import annotations

import json
from pathlib import Path

from ..errors import DftError

WIDTH, HEIGHT, MARGIN = 360, 320, 40
COLORS = {"before": "#d62728", "after": "#1f77b4", "neg": "#ff7f0e", "pos": "#2ca02c"}
REGION_COLORS = ("#fde0c5", "#d5ecd4", "#dcd6f0", "#f6d6e8")


def _num(v: float) -> str:
    return f"{v:.2f}"


class _Canvas:
    def __init__(self, width: int, height: int, title: str):
        self.width, self.height = width, height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{title}</text>',
        ]

    def add(self, s: str) -> None:
        self.parts.append(s)

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


class _Panel:
    """Maps the unit square onto a pixel box."""

    def __init__(self, canvas: _Canvas, x0: float, y0: float, w: float, h: float, ymax: float = 1.0):
        self.c, self.x0, self.y0, self.w, self.h, self.ymax = canvas, x0, y0, w, h, ymax

    def px(self, x: float) -> float:
        return self.x0 + x * self.w

    def py(self, y: float) -> float:
        return self.y0 + self.h - (y / self.ymax) * self.h

    def frame(self, xlabel: str, ylabel: str) -> None:
        c = self.c
        c.add(f'<rect x="{_num(self.x0)}" y="{_num(self.y0)}" width="{_num(self.w)}" height="{_num(self.h)}" '
              f'fill="none" stroke="black"/>')
        for t in (0.0, 0.5, 1.0):
            c.add(f'<text x="{_num(self.px(t))}" y="{_num(self.y0 + self.h + 14)}" text-anchor="middle">{t:g}</text>')
            c.add(f'<text x="{_num(self.x0 - 4)}" y="{_num(self.py(t * self.ymax) + 4)}" '
                  f'text-anchor="end">{t * self.ymax:.3g}</text>')
        c.add(f'<text x="{_num(self.x0 + self.w / 2)}" y="{_num(self.y0 + self.h + 28)}" '
              f'text-anchor="middle">{xlabel}</text>')
        c.add(f'<text x="12" y="{_num(self.y0 + self.h / 2)}" text-anchor="middle" '
              f'transform="rotate(-90 12 {_num(self.y0 + self.h / 2)})">{ylabel}</text>')

    def polyline(self, xs, ys, color: str, width: float = 1.5, dash: str | None = None) -> None:
        pts = " ".join(f"{_num(self.px(x))},{_num(self.py(y))}" for x, y in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.c.add(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def legend(self, entries: list[tuple[str, str]]) -> None:
        for i, (label, color) in enumerate(entries):
            y = self.y0 + 12 + 14 * i
            self.c.add(f'<rect x="{_num(self.x0 + self.w - 110)}" y="{_num(y - 8)}" width="10" height="10" fill="{color}"/>')
            self.c.add(f'<text x="{_num(self.x0 + self.w - 95)}" y="{_num(y + 1)}">{label}</text>')


def roc_svg(report: dict) -> str:
    canvas = _Canvas(WIDTH, HEIGHT, f"ROC before/after data fine-tuning ({report['transform_mode']})")
    panel = _Panel(canvas, MARGIN + 10, 30, WIDTH - 2 * MARGIN - 10, HEIGHT - 30 - MARGIN - 10)
    panel.frame("false positive rate", "true positive rate")
    panel.polyline([0, 1], [0, 1], "#999999", 1.0, "4 3")
    entries = []
    for key in ("before", "after"):
        roc = report[key]["roc"]
        panel.polyline(roc["fpr"], roc["tpr"], COLORS[key])
        entries.append((f"{key} AUC={roc['auc']:.3f}", COLORS[key]))
    panel.legend(entries)
    return canvas.render()


def histogram_svg(report: dict) -> str:
    canvas = _Canvas(2 * WIDTH, HEIGHT, "Positive-class score distribution")
    hists = [report["before"]["histogram"], report["after"]["histogram"]]
    ymax = 0.0
    for h in hists:
        for key in ("negative", "positive"):
            total = sum(h[key]) or 1
            ymax = max(ymax, max(v / total for v in h[key]))
    ymax = ymax or 1.0
    for i, (name, h) in enumerate(zip(("before", "after"), hists)):
        panel = _Panel(canvas, i * WIDTH + MARGIN + 10, 30, WIDTH - 2 * MARGIN - 10, HEIGHT - 30 - MARGIN - 10, ymax)
        panel.frame(f"score ({name}, overlap {h['overlap']:.3f})", "fraction of class")
        edges = h["edges"]
        for key, color in (("negative", COLORS["neg"]), ("positive", COLORS["pos"])):
            total = sum(h[key]) or 1
            for lo, hi, v in zip(edges[:-1], edges[1:], h[key]):
                if v == 0:
                    continue
                top = panel.py(v / total)
                canvas.add(f'<rect x="{_num(panel.px(lo))}" y="{_num(top)}" width="{_num(panel.px(hi) - panel.px(lo))}" '
                           f'height="{_num(panel.py(0) - top)}" fill="{color}" fill-opacity="0.5"/>')
        panel.legend([("class != positive", COLORS["neg"]), ("positive class", COLORS["pos"])])
    return canvas.render()


def scatter_svg(report: dict) -> str:
    sc = report["scatter"]
    canvas = _Canvas(2 * WIDTH, HEIGHT, "Samples over the frozen model's decision regions")
    n = sc["grid_size"]
    step = 1.0 / (n - 1)
    for i, (name, pts) in enumerate((("original X", sc["x"]), ("fine-tuned Z", sc["z"]))):
        panel = _Panel(canvas, i * WIDTH + MARGIN + 10, 30, WIDTH - 2 * MARGIN - 10, HEIGHT - 30 - MARGIN - 10)
        cell_w, cell_h = panel.w * step, panel.h * step
        for k, cls in enumerate(sc["grid_prediction"]):
            gx, gy = (k % n) * step, (k // n) * step
            canvas.add(f'<rect x="{_num(panel.px(gx) - cell_w / 2)}" y="{_num(panel.py(gy) - cell_h / 2)}" '
                       f'width="{_num(cell_w)}" height="{_num(cell_h)}" fill="{REGION_COLORS[cls % len(REGION_COLORS)]}"/>')
        for (x, y), lab in zip(pts, sc["labels"]):
            color = COLORS["pos"] if lab == 1 else COLORS["neg"]
            canvas.add(f'<circle cx="{_num(panel.px(x))}" cy="{_num(panel.py(y))}" r="1.6" fill="{color}"/>')
        panel.frame(f"x0 ({name})", "x1")
    return canvas.render()


def emit_plots(report: dict, output_dir) -> dict:
    """Write the SVG panels that apply to ``report`` plus ``manifest.json``.

    Returns the manifest: the files written and a notice for each skipped panel.
    """
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DftError(f"cannot create plot directory {out}: {exc}") from exc

    files, notices = [], []
    panels = [
        ("roc.svg", roc_svg, report["before"].get("roc") is not None and report["after"].get("roc") is not None,
         "ROC skipped: attribute is not binary"),
        ("histograms.svg", histogram_svg,
         report["before"].get("histogram") is not None and report["after"].get("histogram") is not None,
         "score histograms skipped: attribute is not binary"),
        ("scatter.svg", scatter_svg, report.get("scatter") is not None,
         "scatter skipped: data is not 2-dimensional"),
    ]
    for name, render, available, notice in panels:
        if not available:
            notices.append(notice)
            continue
        try:
            (out / name).write_text(render(report))
        except OSError as exc:
            raise DftError(f"cannot write {out / name}: {exc}") from exc
        files.append(name)
    manifest = {"files": files, "notices": notices, "scenario": report.get("scenario"),
                "transform_mode": report.get("transform_mode")}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest
