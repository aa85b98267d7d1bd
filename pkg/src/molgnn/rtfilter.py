"""Retention-time candidate filtering.

Residuals are experimental minus predicted RT. Bounds are mu +/- z*sigma
with the population standard deviation; a candidate whose RT difference lies
on a bound is kept.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, MissingColumn, TooFewResiduals

DEFAULT_Z = 2.58


@dataclass(frozen=True)
class RtFilterCalibration:
    mu: float
    sigma: float
    z: float
    lower: float
    upper: float

    @classmethod
    def from_bounds(cls, lower: float, upper: float, z: float = DEFAULT_Z) -> "RtFilterCalibration":
        """Calibration from known bounds; mu and sigma are recovered from them."""
        if lower > upper:
            raise ConfigError("lower bound exceeds upper bound")
        mu = (lower + upper) / 2.0
        return cls(mu, (upper - lower) / (2.0 * z), z, float(lower), float(upper))


@dataclass
class CandidateVerdict:
    analyte_id: str
    candidate_smiles: str
    external_score: float
    predicted_rt: float
    rt_difference: float
    filtered_out: bool
    rank: Optional[int] = None


def calibrate(residuals: Sequence[float], z: float = DEFAULT_Z) -> RtFilterCalibration:
    r = np.asarray(residuals, dtype=np.float64)
    if r.size < 2:
        raise TooFewResiduals(f"need at least 2 residuals, got {r.size}")
    if z < 0:
        raise ConfigError("z must be non-negative")
    mu = float(r.mean())
    sigma = float(r.std())  # population (ddof=0)
    return RtFilterCalibration(mu, sigma, float(z), mu - z * sigma, mu + z * sigma)


def residuals(experimental: Sequence[float], predicted: Sequence[float]) -> np.ndarray:
    return np.asarray(experimental, float) - np.asarray(predicted, float)


def apply_filter(calib: RtFilterCalibration, analyte_rt: float, candidates, analyte_id: str = "") -> list:
    """Verdicts for (smiles, external_score, predicted_rt) candidates.

    Kept candidates come first, ranked by external score (descending); the
    filtered ones follow in the same order and carry no rank.
    """
    verdicts = []
    for smiles, score, predicted in candidates:
        predicted = float(predicted)
        if not np.isfinite(predicted):
            raise ConfigError(f"predicted RT for {smiles!r} is not finite")
        diff = float(analyte_rt) - predicted
        out = diff < calib.lower or diff > calib.upper
        verdicts.append(CandidateVerdict(analyte_id, smiles, float(score), predicted, diff, out))
    order = sorted(range(len(verdicts)), key=lambda i: (verdicts[i].filtered_out,
                                                         -verdicts[i].external_score, i))
    ranked = [verdicts[i] for i in order]
    for k, v in enumerate(v for v in ranked if not v.filtered_out):
        v.rank = k + 1
    return ranked


@dataclass
class AnalyteSummary:
    analyte_id: str
    total: int
    filtered: int
    kept: int
    false_negative: bool = False

    @property
    def fraction_filtered(self) -> float:
        return self.filtered / self.total if self.total else 0.0


@dataclass
class FilterReport:
    analytes: list = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(a.total for a in self.analytes)

    @property
    def filtered(self) -> int:
        return sum(a.filtered for a in self.analytes)

    @property
    def fraction_filtered(self) -> float:
        return self.filtered / self.total if self.total else 0.0

    @property
    def false_negatives(self) -> list:
        return [a.analyte_id for a in self.analytes if a.false_negative]


def filter_report(verdicts_by_analyte: dict, truth: Optional[dict] = None) -> FilterReport:
    """Per-analyte counts; ``truth`` maps analyte id to the true candidate SMILES."""
    if not verdicts_by_analyte:
        raise ConfigError("filter_report needs at least one analyte")
    truth = truth or {}
    report = FilterReport()
    for aid, verdicts in verdicts_by_analyte.items():
        filtered = sum(v.filtered_out for v in verdicts)
        fn = any(v.filtered_out and v.candidate_smiles == truth.get(aid) for v in verdicts)
        report.analytes.append(AnalyteSummary(aid, len(verdicts), filtered, len(verdicts) - filtered, fn))
    return report


# -------------------------------------------------------------------- csv io

CANDIDATE_COLUMNS = ("analyte_id", "analyte_rt", "candidate_smiles", "external_score")
VERDICT_COLUMNS = ("analyte_id", "rank", "candidate_smiles", "external_score", "predicted_rt",
                   "rt_difference", "filtered_out")


def read_candidates(path) -> dict:
    """analyte_id -> (analyte_rt, [(smiles, score, predicted_rt or None), ...]), file order."""
    out: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CANDIDATE_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise MissingColumn(f"candidate file lacks columns {missing}")
        has_pred = "predicted_rt" in reader.fieldnames
        for row in reader:
            aid = row["analyte_id"]
            rt = float(row["analyte_rt"])
            pred = float(row["predicted_rt"]) if has_pred and row["predicted_rt"].strip() else None
            entry = out.setdefault(aid, (rt, []))
            if entry[0] != rt:
                raise ConfigError(f"analyte {aid!r} has inconsistent analyte_rt values")
            entry[1].append((row["candidate_smiles"].strip(), float(row["external_score"]), pred))
    return out


def write_verdicts(path, verdicts: Sequence[CandidateVerdict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_COLUMNS)
        for v in verdicts:
            w.writerow([v.analyte_id, "" if v.rank is None else v.rank, v.candidate_smiles,
                        f"{v.external_score:g}", f"{v.predicted_rt:.6g}", f"{v.rt_difference:.6g}",
                        "yes" if v.filtered_out else "no"])


def write_summary(path, report: FilterReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["analyte_id", "total", "filtered", "kept", "fraction_filtered", "false_negative"])
        for a in report.analytes:
            w.writerow([a.analyte_id, a.total, a.filtered, a.kept, f"{a.fraction_filtered:.6g}",
                        "yes" if a.false_negative else "no"])
        w.writerow(["ALL", report.total, report.filtered, report.total - report.filtered,
                    f"{report.fraction_filtered:.6g}", ""])
