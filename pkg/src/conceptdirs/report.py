"""Evaluation report model and its JSON / markdown renderings."""

from __future__ import annotations

import json
from decimal import ROUND_HALF_UP, Decimal
from dataclasses import asdict, dataclass, field

from .tensor_io import dumps_json, write_text

UNITS = {
    "alpha": "latent units",
    "sr": "probability (fraction of test samples)",
    "sr_pct": "percent",
    "lpips": "LPIPS distance (externally computed)",
    "fid": "squared feature units",
    "tcav.mean": "fraction of samples",
    "tcav.std": "fraction of samples",
    "silhouette": "dimensionless, [-1, 1]",
    "redundancy": "cosine similarity, [-1, 1]",
    "coverage": "fraction of test samples",
    "best_of_k": "probability",
    "best_of_k_pp": "percentage points",
    "top_q_mean": "probability",
    "top_q_mean_pp": "percentage points",
}

MISSING = "-"


@dataclass
class ConceptRecord:
    class_label: str
    concept: int
    alpha: float
    sr: float
    selected: bool = False
    name: str | None = None
    lpips: float | None = None
    fid: float | None = None
    tcav: list[dict] | None = None  # [{"layer", "mean", "std"}], last entry is the headline layer

    @property
    def label(self) -> str:
        return self.name or f"{self.class_label} #{self.concept}"

    def headline_tcav(self):
        return self.tcav[-1] if self.tcav else None


@dataclass
class AblationRecord:
    class_label: str
    K: int
    redundancy: float | None
    coverage: float
    best_of_k: float
    top_q_mean: float
    selected: bool = False


@dataclass
class ClassSummary:
    class_label: str
    k: int
    k_source: str
    n_pairs: int
    skipped_ids: list[str] = field(default_factory=list)
    silhouettes: dict[str, float | None] = field(default_factory=dict)
    objective: float | None = None


@dataclass
class EvalReport:
    concepts: list[ConceptRecord] = field(default_factory=list)
    ablation: list[AblationRecord] = field(default_factory=list)
    classes: list[ClassSummary] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        ablation = []
        for rec in self.ablation:
            row = asdict(rec)
            row["best_of_k_pp"] = 100.0 * rec.best_of_k
            row["top_q_mean_pp"] = 100.0 * rec.top_q_mean
            ablation.append(row)
        concepts = []
        for rec in self.concepts:
            row = asdict(rec)
            row["sr_pct"] = 100.0 * rec.sr
            concepts.append(row)
        return {
            "units": UNITS,
            "concepts": concepts,
            "ablation": ablation,
            "classes": [asdict(c) for c in self.classes],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        def strip(row, *derived):
            return {k: v for k, v in row.items() if k not in derived}

        return cls(
            concepts=[ConceptRecord(**strip(r, "sr_pct")) for r in data.get("concepts", [])],
            ablation=[AblationRecord(**strip(r, "best_of_k_pp", "top_q_mean_pp")) for r in data.get("ablation", [])],
            classes=[ClassSummary(**c) for c in data.get("classes", [])],
            provenance=data.get("provenance", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


# --- markdown -------------------------------------------------------------------

def _round(value, digits) -> str:
    """Half-up rounding of the decimal value as written, so 43.05 shows as 43.1.

    Going through 12 significant digits first drops binary noise such as
    100 * 0.7045 = 70.44999999999999.
    """
    q = Decimal(f"{value:.12g}").quantize(Decimal(1).scaleb(-digits), rounding=ROUND_HALF_UP)
    return f"{q:f}"


def _fmt(value, digits):
    return MISSING if value is None else _round(value, digits)


def _sig3(value):
    """Three significant figures with trailing zeros kept: 21.8, 5.34, 0.123."""
    if value is None:
        return MISSING
    text = _round(value, 3)
    for digits in (2, 1, 0):
        # drop a decimal per extra integer digit; checked after rounding so 9.996 gives 10.0
        if abs(float(text)) < 10 ** (2 - digits):
            break
        text = _round(value, digits)
    return text


def _alpha(value):
    return f"{value:g}"


def _table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return lines


def _ordered_concepts(report):
    class_order = {c.class_label: i for i, c in enumerate(report.classes)}
    return sorted(
        report.concepts,
        key=lambda r: (class_order.get(r.class_label, len(class_order)), r.class_label, r.concept, r.alpha),
    )


def concept_table(report: EvalReport) -> list[str]:
    rows = []
    for rec in _ordered_concepts(report):
        if not rec.selected:
            continue
        tc = rec.headline_tcav()
        rows.append([
            rec.label,
            _fmt(100.0 * rec.sr, 1),
            _fmt(rec.lpips, 2),
            _fmt(rec.fid, 1),
            _fmt(tc["mean"] if tc else None, 2),
        ])
    return _table(["Concept", "SR (%) ↑", "LPIPS ↓", "FID ↓", "TCAV ↑"], rows)


def alpha_table(report: EvalReport) -> list[str]:
    rows, last = [], None
    for rec in _ordered_concepts(report):
        key = (rec.class_label, rec.concept)
        alpha = _alpha(rec.alpha)
        rows.append([
            rec.label if key != last else "",
            f"**{alpha}**" if rec.selected else alpha,
            _fmt(100.0 * rec.sr, 2),
            _fmt(rec.lpips, 3),
            _fmt(rec.fid, 2),
        ])
        last = key
    return _table(["Concept", "α", "SR (%) ↑", "LPIPS ↓", "FID ↓"], rows)


def tcav_table(report: EvalReport) -> list[str]:
    selected = [r for r in _ordered_concepts(report) if r.selected and r.tcav]
    layers = list(dict.fromkeys(t["layer"] for r in selected for t in r.tcav))
    rows = []
    for rec in selected:
        by_layer = {t["layer"]: t for t in rec.tcav}
        cells = [
            f"{_round(by_layer[l]['mean'], 2)}±{_round(by_layer[l]['std'], 2)}" if l in by_layer else MISSING
            for l in layers
        ]
        rows.append([rec.label] + cells)
    return _table(["Concept"] + layers, rows)


def ablation_table(report: EvalReport) -> list[str]:
    rows, last = [], None
    for rec in report.ablation:
        k = str(rec.K)
        rows.append([
            rec.class_label if rec.class_label != last else "",
            f"**{k}**" if rec.selected else k,
            _fmt(rec.redundancy, 2),
            _fmt(rec.coverage, 2),
            _sig3(100.0 * rec.best_of_k),
            _sig3(100.0 * rec.top_q_mean),
        ])
        last = rec.class_label
    return _table(
        [
            "Target Class",
            "Number of Clusters K",
            "Redundancy Index",
            "Coverage",
            "Best-of-K Influence (pp)",
            "Robust Mean Influence (top-q mean, pp)",
        ],
        rows,
    )


def render_markdown(report: EvalReport) -> str:
    out = ["# Concept direction report", ""]
    if report.concepts:
        out += ["## Concept directions", ""] + concept_table(report) + [""]
        out += ["## Traversal strength sweep", ""] + alpha_table(report) + [""]
    if any(r.selected and r.tcav for r in report.concepts):
        out += ["## TCAV by layer (mean±std)", ""] + tcav_table(report) + [""]
    if report.ablation:
        out += ["## Ablation on the number of clusters K", ""] + ablation_table(report) + [""]
        out += ["Influences in percentage points; bold K marks the silhouette-selected value.", ""]
    return "\n".join(out)


def render_json(report: EvalReport) -> str:
    return dumps_json(report.to_dict())


def emit_report(report: EvalReport, fmt: str = "json", path=None) -> str:
    if fmt == "json":
        text = render_json(report)
    elif fmt in ("markdown", "md"):
        text = render_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        write_text(path, text)
    return text
