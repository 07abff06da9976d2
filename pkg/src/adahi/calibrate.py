"""Offline calibration of the deviation gate.

Input is a corpus of ``(net deviation, primary rejected)`` pairs logged from
shadow-verified episodes.  The pipeline normalizes deviations by the corpus
standard deviation, bins them into equal-count bins, fits linear and
logarithmic rejection models, and turns a target transmission rate into a
deviation threshold via the empirical quantile of predicted rejection.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError, ConfigError, InversionError
from .gate import RejectionModel, predict_rejection

DEFAULT_MIN_SAMPLES = 50_000
DEFAULT_BINS = 20
KAPPA_GRID = np.logspace(-2, 2, 64)
ARTIFACT_VERSION = 1


@dataclass
class CalibrationCorpus:
    delta_net: np.ndarray
    rejected: np.ndarray
    sigma: float | None = None

    def __post_init__(self):
        self.delta_net = np.asarray(self.delta_net, dtype=np.float64)
        self.rejected = np.asarray(self.rejected, dtype=bool)
        if self.delta_net.shape != self.rejected.shape or self.delta_net.ndim != 1:
            raise CalibrationError("delta_net and rejected must be 1-D arrays of equal length")
        if np.any(self.delta_net < 0):
            raise CalibrationError("net deviations must be non-negative")
        if self.sigma is None and len(self) >= 2:
            self.sigma = compute_sigma(self.delta_net)

    def __len__(self) -> int:
        return self.delta_net.size

    @property
    def delta(self) -> np.ndarray:
        """Deviations normalized by the corpus sigma."""
        return self.delta_net / self.sigma

    def check_size(self, minimum: int = DEFAULT_MIN_SAMPLES) -> None:
        if len(self) < minimum:
            raise CalibrationError(f"corpus holds {len(self)} samples, need at least {minimum}")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["delta_net", "primary_rejected", "delta"])
            for dn, rj, dl in zip(self.delta_net, self.rejected, self.delta):
                w.writerow([repr(float(dn)), int(rj), repr(float(dl))])

    @classmethod
    def from_csv(cls, path: str | Path) -> CalibrationCorpus:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            delta_net=[float(r["delta_net"]) for r in rows],
            rejected=[r["primary_rejected"] == "1" for r in rows],
        )


@dataclass(frozen=True)
class Bin:
    mean_delta: float
    rejection_rate: float
    size: int


def compute_sigma(raw_net_deviations) -> float:
    """Population standard deviation (divides by N)."""
    x = np.asarray(raw_net_deviations, dtype=np.float64)
    if x.size < 2:
        raise CalibrationError("sigma needs at least two deviations")
    if np.ptp(x) == 0:
        raise CalibrationError("all deviations are equal; sigma would be zero")
    return float(np.sqrt(np.mean((x - x.mean()) ** 2)))


def bin_equal_count(deltas, rejected, n_bins: int = DEFAULT_BINS) -> list[Bin]:
    """Sort by deviation (stable on sample index) and split into near-equal bins."""
    deltas = np.asarray(deltas, dtype=np.float64)
    rejected = np.asarray(rejected, dtype=bool)
    if n_bins < 2:
        raise CalibrationError(f"need at least 2 bins, got {n_bins}")
    if deltas.size < n_bins:
        raise CalibrationError(f"{deltas.size} samples cannot fill {n_bins} bins")
    order = np.argsort(deltas, kind="stable")
    return [
        Bin(float(deltas[idx].mean()), float(rejected[idx].mean()), int(idx.size))
        for idx in np.array_split(order, n_bins)
    ]


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Slope, intercept and residual sum of squares."""
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    m = float(np.sum((x - xm) * (y - ym)) / sxx)
    b = float(ym - m * xm)
    rss = float(np.sum((y - (m * x + b)) ** 2))
    return m, b, rss


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return math.nan
    with np.errstate(invalid="ignore", divide="ignore"):
        r = float(np.corrcoef(a, b)[0, 1])
    return r if math.isfinite(r) else math.nan


@dataclass(frozen=True)
class FitResult:
    linear: RejectionModel
    logarithmic: RejectionModel
    correlations: dict[str, float]

    def best(self) -> RejectionModel:
        """Form with the higher absolute correlation; linear wins ties and NaNs."""
        score = {k: (0.0 if math.isnan(v) else abs(v)) for k, v in self.correlations.items()}
        return self.logarithmic if score["logarithmic"] > score["linear"] else self.linear


def fit_models(bins: list[Bin], kappa_grid: np.ndarray = KAPPA_GRID) -> FitResult:
    if len(bins) < 3:
        raise CalibrationError(f"need at least 3 bins to fit, got {len(bins)}")
    x = np.array([b.mean_delta for b in bins])
    y = np.array([b.rejection_rate for b in bins])
    if np.ptp(x) == 0:
        raise CalibrationError("all bins share one mean deviation; slope is unidentifiable")

    m, b, _ = _ols(x, y)
    linear = RejectionModel("linear", m, b)

    best = None
    for kappa in kappa_grid:
        lm, lb, rss = _ols(np.log1p(kappa * x), y)
        if best is None or rss < best[3]:
            best = (lm, lb, float(kappa), rss)
    logarithmic = RejectionModel("logarithmic", best[0], best[1], best[2])

    corr = {
        "linear": _pearson(linear.raw(x), y),
        "logarithmic": _pearson(logarithmic.raw(x), y),
    }
    return FitResult(linear, logarithmic, corr)


def invert_threshold(model: RejectionModel, tau: float) -> float:
    """Deviation at which the (unclamped) model reaches ``tau``."""
    if model.m <= 0:
        raise InversionError(f"model slope {model.m} is not positive; threshold undefined")
    if tau < model.b:
        raise InversionError(f"tau {tau} is below the model intercept {model.b}")
    if model.form == "linear":
        return (tau - model.b) / model.m
    return math.expm1((tau - model.b) / model.m) / model.kappa


def tau_for_tr(deltas, model: RejectionModel, target_tr: float) -> float:
    """Empirical (1 - TR)-quantile of predicted rejection, lower interpolation."""
    if not 0 < target_tr < 1:
        raise ConfigError(f"target transmission rate must lie in (0, 1), got {target_tr}")
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.size == 0:
        raise CalibrationError("cannot take a quantile of an empty corpus")
    preds = predict_rejection(model, deltas)
    return float(np.quantile(preds, 1.0 - target_tr, method="lower"))


def threshold_for_tr(deltas, model: RejectionModel, target_tr: float) -> tuple[float, float]:
    """``(tau_star, delta_th)`` for a target transmission rate."""
    tau = tau_for_tr(deltas, model, target_tr)
    return tau, invert_threshold(model, tau)


@dataclass
class CalibrationArtifact:
    sigma: float
    model: RejectionModel
    correlations: dict[str, float]
    delta_th: float
    tau_star: float
    target_tr: float
    alpha: float
    bins: list[Bin] = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0
    codebook_checksum: str = ""

    @property
    def bin_count(self) -> int:
        return len(self.bins)

    def dumps(self) -> str:
        kv = [
            ("version", ARTIFACT_VERSION),
            ("sigma", repr(self.sigma)),
            ("alpha", repr(self.alpha)),
            ("form", self.model.form),
            ("m", repr(self.model.m)),
            ("b", repr(self.model.b)),
            ("kappa", "none" if self.model.kappa is None else repr(self.model.kappa)),
            ("corr_linear", repr(self.correlations.get("linear", math.nan))),
            ("corr_logarithmic", repr(self.correlations.get("logarithmic", math.nan))),
            ("delta_th", repr(self.delta_th)),
            ("tau_star", repr(self.tau_star)),
            ("target_tr", repr(self.target_tr)),
            ("bin_count", self.bin_count),
            ("config_hash", self.config_hash),
            ("seed", self.seed),
            ("codebook_checksum", self.codebook_checksum),
        ]
        out = io.StringIO()
        out.write("# adahi calibration artifact\n")
        for k, v in kv:
            out.write(f"{k} = {v}\n")
        out.write("[bins]\nmean_delta,rejection_rate,size\n")
        for b in self.bins:
            out.write(f"{b.mean_delta!r},{b.rejection_rate!r},{b.size}\n")
        return out.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> CalibrationArtifact:
        head, _, table = text.partition("[bins]")
        kv = {}
        for line in head.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"calibration artifact: cannot parse line {line!r}")
            kv[key.strip()] = value.strip()
        try:
            if int(kv["version"]) != ARTIFACT_VERSION:
                raise ConfigError(f"unsupported calibration artifact version {kv['version']}")
            kappa = None if kv["kappa"] == "none" else float(kv["kappa"])
            model = RejectionModel(kv["form"], float(kv["m"]), float(kv["b"]), kappa)
            rows = list(csv.DictReader(io.StringIO(table.strip())))
            bins = [Bin(float(r["mean_delta"]), float(r["rejection_rate"]), int(r["size"])) for r in rows]
            return cls(
                sigma=float(kv["sigma"]),
                model=model,
                correlations={
                    "linear": float(kv["corr_linear"]),
                    "logarithmic": float(kv["corr_logarithmic"]),
                },
                delta_th=float(kv["delta_th"]),
                tau_star=float(kv["tau_star"]),
                target_tr=float(kv["target_tr"]),
                alpha=float(kv["alpha"]),
                bins=bins,
                config_hash=kv.get("config_hash", ""),
                seed=int(kv.get("seed", 0)),
                codebook_checksum=kv.get("codebook_checksum", ""),
            )
        except KeyError as exc:
            raise ConfigError(f"calibration artifact is missing key {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path: str | Path) -> CalibrationArtifact:
        return cls.loads(Path(path).read_text())


def calibrate(
    corpus: CalibrationCorpus,
    target_tr: float,
    *,
    alpha: float,
    n_bins: int = DEFAULT_BINS,
    min_samples: int = DEFAULT_MIN_SAMPLES,
    config_hash: str = "",
    seed: int = 0,
    codebook_checksum: str = "",
) -> CalibrationArtifact:
    """Full pipeline from a logged corpus to a gate artifact."""
    corpus.check_size(min_samples)
    deltas = corpus.delta
    bins = bin_equal_count(deltas, corpus.rejected, n_bins)
    fit = fit_models(bins)
    model = fit.best()
    tau, delta_th = threshold_for_tr(deltas, model, target_tr)
    return CalibrationArtifact(
        sigma=corpus.sigma,
        model=model,
        correlations=fit.correlations,
        delta_th=delta_th,
        tau_star=tau,
        target_tr=target_tr,
        alpha=alpha,
        bins=bins,
        config_hash=config_hash,
        seed=seed,
        codebook_checksum=codebook_checksum,
    )
