"""Simulation scenarios, prediction metrics and the two simulation studies."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .backfit import ACTIVE_TOL, Dataset, LisoConfig, default_grid, liso_path

KINDS = ("all_linear", "mixed_powers", "artificial_4var")
CALIBRATION_SIZE = 100_000
CALIBRATION_SEED = 20_240_601
MIXED_POWERS = (0.2, 0.3, 0.4, 0.8, 1.0)
AR_RHO = 0.5  # Sigma_ij = RHO ** |i - j|


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence([int(s) for s in seed]))
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class SimScenario:
    kind: str
    n: int
    p: int
    snr: float
    correlated: bool = False
    seed: object = 0
    n_signal: int = 5
    n_test: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.p < self.signal_count:
            raise ValueError(f"p={self.p} is smaller than the {self.signal_count} signal covariates")

    @property
    def signal_count(self) -> int:
        if self.kind == "artificial_4var":
            return 4
        if self.kind == "mixed_powers":
            return len(MIXED_POWERS)
        return self.n_signal

    @property
    def label(self) -> str:
        return self.kind + ("_correlated" if self.correlated else "")


def draw_covariates(rng: np.random.Generator, n: int, p: int, correlated: bool) -> np.ndarray:
    """Uniform(-1, 1) covariates; correlated ones via ``2 * Phi(Z) - 1`` with
    ``Z`` Gaussian AR(1) of unit variance."""
    if not correlated:
        return rng.uniform(-1.0, 1.0, size=(n, p))
    z = np.empty((n, p))
    z[:, 0] = rng.standard_normal(n)
    s = np.sqrt(1.0 - AR_RHO**2)
    for j in range(1, p):
        z[:, j] = AR_RHO * z[:, j - 1] + s * rng.standard_normal(n)
    return 2.0 * ndtr(z) - 1.0


def _signed_power(x, e):
    return np.sign(x) * np.abs(x) ** e


@dataclass(frozen=True, eq=False)
class SignalFunction:
    """Additive truth ``sum_k f_k(x[:, support[k]])``."""

    kind: str
    support: tuple
    shifts: tuple = ()

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        cols = [x[:, j] for j in self.support]
        if self.kind == "all_linear":
            return np.sum(cols, axis=0)
        if self.kind == "mixed_powers":
            return sum(_signed_power(c + s, e) for c, s, e in zip(cols, self.shifts, MIXED_POWERS))
        x1, x2, x3, x4 = cols
        return 2.0 * np.maximum(x1, 0.0) ** 2 + x2 + _signed_power(x3, 0.2) + 2.0 * (x4 > 0)


def calibrate_sigma(signal: SignalFunction, p: int, correlated: bool, snr: float) -> float:
    """Noise SD giving ``Var(signal) / sigma**2 = snr`` on a fixed calibration draw."""
    if np.isinf(snr):
        return 0.0
    # columns past the last signal covariate do not affect the signal
    rng = np.random.default_rng(CALIBRATION_SEED)
    x = draw_covariates(rng, CALIBRATION_SIZE, max(signal.support) + 1, correlated)
    return float(np.sqrt(np.var(signal(x)) / snr))


@dataclass(eq=False)
class SimDraw:
    train: Dataset
    valid: Dataset
    test: Dataset
    sigma: float
    support: tuple
    signal: SignalFunction = field(repr=False)

    def __iter__(self):
        return iter((self.train, self.valid, self.test))


def make_signal(s: SimScenario, rng: np.random.Generator) -> SignalFunction:
    if s.kind == "artificial_4var":
        return SignalFunction(s.kind, (0, 1, 2, 3))
    support = tuple(int(j) for j in rng.choice(s.p, size=s.signal_count, replace=False))
    shifts = ()
    if s.kind == "mixed_powers":
        shifts = tuple(rng.uniform(-0.25, 0.25, size=len(MIXED_POWERS)).tolist())
    return SignalFunction(s.kind, support, shifts)


def generate(s: SimScenario) -> SimDraw:
    """Training and validation sets of size ``n`` with independent noise, and
    a noiseless test set of size ``n_test`` (default ``n``).

    For ``artificial_4var`` all three sets are standardised with the training
    column means and standard deviations.
    """
    rng = _rng(s.seed)
    signal = make_signal(s, rng)
    sigma = calibrate_sigma(signal, s.p, s.correlated, s.snr)
    n_test = s.n if s.n_test is None else s.n_test
    raw = []
    for size, noisy in ((s.n, True), (s.n, True), (n_test, False)):
        x = draw_covariates(rng, size, s.p, s.correlated)
        y = signal(x)
        if noisy and sigma > 0:
            y = y + sigma * rng.standard_normal(size)
        raw.append((x, y))
    if s.kind == "artificial_4var":
        mu = raw[0][0].mean(axis=0)
        sd = raw[0][0].std(axis=0)
        sd[sd == 0] = 1.0
        raw = [((x - mu) / sd, y) for x, y in raw]
    train, valid, test = (Dataset(x, y) for x, y in raw)
    return SimDraw(train, valid, test, sigma, signal.support, signal)


def mse(model, test: Dataset) -> float:
    r = test.response - model.predict(test.x)
    return float(np.mean(r * r))


def relative_mse(table) -> np.ndarray:
    """Divide each run's errors by that run's smallest error.

    ``table`` is runs x methods (a single run may be given as a vector).
    """
    t = np.asarray(table, dtype=np.float64)
    single = t.ndim == 1
    t = np.atleast_2d(t)
    best = t.min(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(best > 0, t / np.where(best > 0, best, 1.0), np.where(t > 0, np.inf, 1.0))
    return out[0] if single else out


def _fmt(v) -> str:
    return repr(float(v))


@dataclass(eq=False)
class ComparisonResult:
    scenario: str
    snr: float
    methods: tuple
    mse: np.ndarray  # replications x methods
    selected: list = field(default_factory=list)

    def rows(self) -> list:
        rel = relative_mse(self.mse)
        reps = self.mse.shape[0]
        out = []
        for j, m in enumerate(self.methods):
            col = self.mse[:, j]
            se = float(np.std(col, ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
            out.append((self.scenario, m, float(self.snr), float(col.mean()), float(rel[:, j].mean()), se))
        return out


CSV_HEADER = "scenario,method,snr,mean_mse,mean_relative_mse,se\n"


def comparison_csv(results: Sequence[ComparisonResult]) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER)
    for r in results:
        for sc, m, snr, mm, rm, se in r.rows():
            buf.write(f"{sc},{m},{_fmt(snr)},{_fmt(mm)},{_fmt(rm)},{_fmt(se)}\n")
    return buf.getvalue()


def comparison_study(s: SimScenario, replications: int, methods=("plain", "adaptive"),
                     config: Optional[LisoConfig] = None) -> ComparisonResult:
    """Validation-tuned fits on ``replications`` independent draws of ``s``.

    Replication ``r`` uses the seed ``(s.seed, r)``.
    """
    from .modelsel import validation_tune

    if replications < 1:
        raise ValueError("replications must be positive")
    table = np.empty((replications, len(methods)))
    chosen = []
    for r in range(replications):
        draw = generate(_with_seed(s, (_seed_int(s.seed), r)))
        picks = []
        for j, method in enumerate(methods):
            res = validation_tune(draw.train, draw.valid, fitter=method, config=config)
            table[r, j] = mse(res.model, draw.test)
            picks.append(res.lam)
        chosen.append(picks)
    return ComparisonResult(s.label, s.snr, tuple(methods), table, chosen)


def _seed_int(seed) -> int:
    if isinstance(seed, (tuple, list)):
        return int(np.random.SeedSequence([int(v) for v in seed]).generate_state(1)[0])
    return int(seed)


def _with_seed(s: SimScenario, seed) -> SimScenario:
    return SimScenario(s.kind, s.n, s.p, s.snr, s.correlated, seed, s.n_signal, s.n_test)


@dataclass(eq=False)
class RecoveryResult:
    p_list: tuple
    n_list: tuple
    replications: int
    successes: np.ndarray  # len(p_list) x len(n_list) counts

    @property
    def proportion(self) -> np.ndarray:
        return self.successes / self.replications

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("p,n,proportion\n")
        prop = self.proportion
        for i, p in enumerate(self.p_list):
            for j, n in enumerate(self.n_list):
                buf.write(f"{p},{n},{_fmt(prop[i, j])}\n")
        return buf.getvalue()


def master_dataset(n: int, p: int, snr: float, seed) -> tuple:
    """Standardised covariates and centred response for the recovery study."""
    s = SimScenario("artificial_4var", n, p, snr, seed=seed)
    rng = _rng(seed)
    signal = make_signal(s, rng)
    sigma = calibrate_sigma(signal, p, False, snr)
    x = draw_covariates(rng, n, p, False)
    y = signal(x)
    if sigma > 0:
        y = y + sigma * rng.standard_normal(n)
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    return x, y - y.mean()


def recovers(models, truth) -> bool:
    truth = set(truth)
    return any(set(m.active_set(ACTIVE_TOL)) == truth for m in models)


def recovery_study(p_list, n_list, replications: int, snr: float = 4.0, grid=None,
                   grid_count: int = 50, grid_ratio: float = 1e-2, seed=0,
                   n_master: int = 1024, config: Optional[LisoConfig] = None) -> RecoveryResult:
    """Proportion of subsamples whose path contains a fit with exactly the four
    true covariates active.

    One master dataset with ``max(p_list)`` columns is drawn; each replication
    takes the first ``p`` columns and ``n`` rows sampled without replacement.
    ``grid`` is a fixed grid, or ``None`` for a per-subsample log grid of
    ``grid_count`` points from ``lambda_max`` down to ``grid_ratio`` times it.
    """
    p_list = tuple(int(p) for p in p_list)
    n_list = tuple(int(n) for n in n_list)
    if replications < 1:
        raise ValueError("replications must be positive")
    if max(n_list) > n_master:
        raise ValueError(f"n={max(n_list)} exceeds the master dataset size {n_master}")
    if min(n_list) < 2 or min(p_list) < 4:
        raise ValueError("need n >= 2 and p >= 4")
    x, y = master_dataset(n_master, max(p_list), snr, seed)
    truth = (0, 1, 2, 3)
    counts = np.zeros((len(p_list), len(n_list)), dtype=np.int64)
    for i, p in enumerate(p_list):
        for j, n in enumerate(n_list):
            for r in range(replications):
                rng = _rng((_seed_int(seed), p, n, r))
                rows = np.sort(rng.choice(n_master, size=n, replace=False))
                d = Dataset(x[rows, :p], y[rows])
                g = default_grid(d, config, grid_count, grid_ratio) if grid is None else grid
                if recovers(liso_path(d, g, config), truth):
                    counts[i, j] += 1
    return RecoveryResult(p_list, n_list, replications, counts)
