"""Error metrics, error spectra, synthetic observations, parameter estimation and denoising."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .generator import forward
from .grid import GridSpec, LAPLACE, apply_stencil, derivative_kernel
from .problems import ProblemDef, aniso_field, explicit_field, get_problem
from .training import TrainingConfig, config_for, train


def error_metrics(predicted, exact) -> dict:
    """Relative L2, max-abs and mean-squared error.

    When ``exact`` has zero norm the absolute L2 norm is reported under
    ``l2_rel`` and ``l2_absolute`` is set.
    """
    p = np.asarray(predicted, dtype=np.float64)
    e = np.asarray(exact, dtype=np.float64)
    if p.shape != e.shape:
        raise ValueError(f"shape mismatch: predicted {p.shape} vs exact {e.shape}")
    d = p - e
    num = float(np.linalg.norm(d))
    den = float(np.linalg.norm(e))
    out = {
        "l_inf": float(np.max(np.abs(d))) if d.size else 0.0,
        "mse": float(np.mean(d**2)) if d.size else 0.0,
    }
    if den > 0:
        out["l2_rel"] = num / den
        out["l2_absolute"] = False
    else:
        out["l2_rel"] = num
        out["l2_absolute"] = True
    return out


@dataclass
class ErrorSpectrum:
    """Power of an error field per frequency bin.

    Frequencies are in cycles per sampled window (integer bin numbers).  1D
    spectra are two-sided in ``numpy.fft`` order; 2D spectra are folded onto
    the nonnegative quadrant, ``power[ky, kx]``.  In both cases ``power``
    sums to the mean squared value of the input.
    """

    freq_x: np.ndarray
    freq_y: np.ndarray | None
    power: np.ndarray
    total: float

    @property
    def is_1d(self) -> bool:
        return self.freq_y is None

    def rows(self):
        if self.is_1d:
            for f, p in zip(self.freq_x, self.power):
                yield (float(f), float(p))
        else:
            for a, fy in enumerate(self.freq_y):
                for b, fx in enumerate(self.freq_x):
                    yield (float(fx), float(fy), float(self.power[a, b]))

    def band_powers(self, edges=(1 / 3, 2 / 3)) -> dict:
        """Power in low/mid/high bands split at fractions of the Nyquist radius."""
        if self.is_1d:
            n = self.freq_x.size
            radius = np.abs(self.freq_x) / max(n // 2, 1)
        else:
            ny, nx = self.power.shape
            fx = self.freq_x / max(self.freq_x.max(), 1)
            fy = self.freq_y / max(self.freq_y.max(), 1)
            radius = np.maximum.outer(fy, fx)
        lo, hi = edges
        bands = {
            "low": float(self.power[radius < lo].sum()),
            "mid": float(self.power[(radius >= lo) & (radius < hi)].sum()),
            "high": float(self.power[radius >= hi].sum()),
        }
        return bands


def error_spectrum(error_field, grid: GridSpec | None = None) -> ErrorSpectrum:
    """Discrete Fourier power spectrum of an error field (1 row means 1D)."""
    e = np.asarray(error_field, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise ValueError("error field contains non-finite values")
    if e.ndim == 1:
        e = e[None, :]
    if grid is not None and grid.shape != e.shape:
        raise ValueError(f"error field {e.shape} does not match grid {grid.shape}")
    ny, nx = e.shape
    N = e.size
    total = float(np.mean(e**2))
    if ny == 1:
        X = np.fft.fft(e[0])
        power = np.abs(X) ** 2 / N**2
        return ErrorSpectrum(np.fft.fftfreq(nx, 1.0 / nx), None, power, total)
    X = np.fft.fft2(e)
    full = np.abs(X) ** 2 / N**2
    kx = np.abs(np.fft.fftfreq(nx, 1.0 / nx)).astype(int)
    ky = np.abs(np.fft.fftfreq(ny, 1.0 / ny)).astype(int)
    power = np.zeros((ky.max() + 1, kx.max() + 1))
    np.add.at(power, (ky[:, None], kx[None, :]), full)
    return ErrorSpectrum(np.arange(kx.max() + 1, dtype=float), np.arange(ky.max() + 1, dtype=float),
                         power, total)


# -- noise and observations ---------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    std_dev: float = 0.0
    seed: int = 0
    mean: float = 0.0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"only gaussian noise is supported, got {self.kind!r}")
        if self.mean != 0.0:
            raise ValueError("noise mean must be 0")
        if not self.std_dev >= 0:
            raise ValueError(f"std_dev must be >= 0, got {self.std_dev}")


def add_gaussian_noise(values, model: NoiseModel) -> np.ndarray:
    v = np.array(values, dtype=np.float64)
    if model.std_dev == 0:
        return v
    rng = np.random.default_rng(model.seed)
    return v + rng.normal(0.0, model.std_dev, size=v.shape)


@dataclass
class ObservationSet:
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    provenance: str
    clean: np.ndarray | None = None
    grid: GridSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.x.shape == self.y.shape == self.values.shape):
            raise ValueError("observation coordinate and value arrays must match")

    def __len__(self):
        return int(self.values.size)


OBSERVATION_KINDS = ("aniso", "explicit_function")


def unit_square_grid(spacing: float = 0.05) -> GridSpec:
    return GridSpec.from_spacing(0.0, 1.0, 0.0, 1.0, spacing)


def make_observations(kind: str, grid: GridSpec | None = None, noise: NoiseModel | None = None,
                      ratio: float = 5.0) -> ObservationSet:
    """Sample a synthetic field at every node of ``grid`` and add noise.

    ``aniso`` is sin(x) sinh(y / sqrt(ratio)), which solves
    u_xx + ratio * u_yy = 0; ``explicit_function`` is sin(x + 5y) + exp(-x).
    """
    grid = grid or unit_square_grid()
    noise = noise or NoiseModel()
    X, Y = grid.mesh()
    x, y = X.ravel(), Y.ravel()
    if kind == "aniso":
        clean = aniso_field(x, y, ratio)
        meta = {"kind": kind, "ratio": float(ratio)}
    elif kind == "explicit_function":
        clean = explicit_field(x, y)
        meta = {"kind": kind}
    else:
        raise ValueError(f"unknown observation kind {kind!r}; expected one of {OBSERVATION_KINDS}")
    if noise.std_dev == 0:
        provenance = "synthetic-clean"
    else:
        provenance = f"synthetic-noisy(sigma={noise.std_dev!r}, seed={noise.seed})"
    return ObservationSet(x, y, add_gaussian_noise(clean, noise), provenance, clean, grid, meta)


def observations_on_grid(obs: ObservationSet, grid: GridSpec, tol: float = 1e-9) -> np.ndarray:
    """Scatter node-coincident observations into a grid field (NaN where unobserved)."""
    j = np.rint((obs.x - grid.x_min) / grid.dx).astype(int)
    i = np.zeros_like(j) if grid.is_1d else np.rint((obs.y - grid.y_min) / grid.dy).astype(int)
    gx = grid.x_min + j * grid.dx
    gy = grid.y_min + i * grid.dy
    if (np.any(np.abs(gx - obs.x) > tol) or np.any(np.abs(gy - obs.y) > tol)
            or j.min() < 0 or i.min() < 0 or j.max() >= grid.nx or i.max() >= grid.ny):
        raise ValueError("observations do not sit on grid nodes")
    out = np.full(grid.shape, np.nan)
    out[i, j] = obs.values
    return out


def laplacian_energy(field_, grid: GridSpec) -> float:
    """Mean squared five-point Laplacian over the interior nodes."""
    lap = apply_stencil(field_, derivative_kernel(LAPLACE, grid.dx, grid.dy))
    return float(np.mean(lap**2))


# -- estimation and denoising ----------------------------------------------------

@dataclass
class EstimationResult:
    lambda_ratio: float
    lam: np.ndarray
    field: np.ndarray
    history: list
    models: list
    problem: ProblemDef


def _problem_on(problem: ProblemDef, obs: ObservationSet) -> ProblemDef:
    if obs.grid is not None and obs.grid != problem.grid:
        problem = replace(problem, grid=obs.grid)
    return problem


def _observation_config(problem, config, overrides):
    if config is None:
        config = config_for(problem, **overrides)
    elif overrides:
        raise ValueError("pass either a TrainingConfig or overrides, not both")
    return config


def estimate_parameters(observations: ObservationSet, config: TrainingConfig | None = None,
                        problem: ProblemDef | None = None, callback=None, **overrides) -> EstimationResult:
    """Fit a field to the observations under u_xx + lambda2 u_yy = 0 with lambda2 trainable."""
    if len(observations) == 0:
        raise ValueError("no observations")
    if problem is None:
        problem = get_problem("aniso_inverse", ratio=observations.meta.get("ratio", 5.0))
    problem = _problem_on(problem, observations)
    config = _observation_config(problem, config, overrides)
    result = train(problem, config, observations=observations, callback=callback)
    lam = result.lam
    return EstimationResult(float(lam[1] / lam[0]), lam, forward(result.models[0])[1], result.history,
                            result.models, problem)


@dataclass
class DenoiseResult:
    field: np.ndarray
    rmse: float | None
    noisy_rmse: float | None
    lam: np.ndarray
    laplacian_energy: float
    noisy_laplacian_energy: float | None
    history: list
    models: list
    problem: ProblemDef


def denoise(observations: ObservationSet, physics: str = "known", config: TrainingConfig | None = None,
            problem: ProblemDef | None = None, callback=None, **overrides) -> DenoiseResult:
    """Reconstruct a field from noisy observations regularized by a PDE residual.

    ``known`` freezes lambda = (1, 5) in u_xx + 5 u_yy = 0; ``misspecified``
    trains k1, k2 in k1 u_xx + k2 u_yy = 1 together with the field.
    """
    if len(observations) == 0:
        raise ValueError("no observations")
    if problem is None:
        problem = get_problem("denoise", physics=physics)
    problem = _problem_on(problem, observations)
    config = _observation_config(problem, config, overrides)
    result = train(problem, config, observations=observations, callback=callback)
    u = forward(result.models[0])[1]
    grid = problem.grid
    rmse = noisy_rmse = noisy_energy = None
    try:
        noisy = observations_on_grid(observations, grid)
    except ValueError:
        noisy = None
    if observations.clean is not None and noisy is not None:
        clean = observations_on_grid(replace(observations, values=observations.clean), grid)
        seen = ~np.isnan(clean)
        rmse = float(np.sqrt(np.mean((u[seen] - clean[seen]) ** 2)))
        noisy_rmse = float(np.sqrt(np.mean((noisy[seen] - clean[seen]) ** 2)))
    if noisy is not None and not np.any(np.isnan(noisy)):
        noisy_energy = laplacian_energy(noisy, grid)
    return DenoiseResult(u, rmse, noisy_rmse, result.lam, laplacian_energy(u, grid), noisy_energy,
                         result.history, result.models, problem)
