"""Builtin benchmark problems and the residual-evaluation contract.

A residual callback receives point coordinates, a dict of field quantities
(``"u"``, ``"u_x"``, ``"u_y"``, ``"u_xx"``, ``"u_yy"``, ``"u_xy"``, ``"lap"``),
each shaped ``(channels, N)``, and the operator coefficients ``lam``.  It
returns the residual of every equation at every point together with the
analytic partial derivatives the training loop needs for its reverse pass.

For time-dependent problems time is just another grid axis: ``t`` is the x
axis of the 1D problems and the y axis of the Schrodinger problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .geometry import (
    DIRICHLET,
    NEUMANN,
    PolarDomain,
    Rectangle,
    bird_domain,
    star_domain,
    starfish_domain,
)
from .grid import GridSpec


@dataclass
class ResidualEval:
    values: np.ndarray  # (equations, N)
    partials: dict  # (quantity, channel) -> (equations, N)
    lam_partials: np.ndarray  # (equations, n_lam, N)


@dataclass(frozen=True)
class ResidualSpec:
    channels: int
    equations: int
    reads: tuple[str, ...]
    fn: Callable[..., ResidualEval]

    def __call__(self, x, y, q, lam) -> ResidualEval:
        missing = [name for name in self.reads if name not in q]
        if missing:
            raise KeyError(f"residual needs field quantities {missing} which the bundle lacks")
        return self.fn(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64),
                       q, np.asarray(lam, dtype=np.float64))


@dataclass(frozen=True)
class ProblemDef:
    name: str
    domain: object
    grid: GridSpec
    residual: ResidualSpec
    bc_assignment: Callable | None = None
    n_boundary: int = 0
    exact: Callable | None = None
    lam0: tuple[float, ...] = ()
    lam_trainable: tuple[bool, ...] = ()
    # coefficients at which ``exact`` satisfies the residual (None: it never does)
    true_lam: tuple[float, ...] | None = ()
    activation: str = "tanh"
    kernel: tuple[int, int] = (3, 3)
    train_defaults: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    description: str = ""

    @property
    def channels(self) -> int:
        return self.residual.channels

    @property
    def hidden_shape(self) -> tuple[int, int]:
        p, q = self.kernel
        return (self.grid.ny + p - 1, self.grid.nx + q - 1)


def evaluate_residual(problem: ProblemDef, x, y, q, lam=None) -> ResidualEval:
    lam = problem.lam0 if lam is None else lam
    return problem.residual(x, y, q, lam)


def _single(values, partials, n_lam=0):
    values = np.atleast_2d(values)
    n = values.shape[1]
    return ResidualEval(values, {k: np.atleast_2d(v) * np.ones((1, n)) for k, v in partials.items()},
                        np.zeros((1, n_lam, n)))


# -- 1D swept sine ------------------------------------------------------------

def sweep1d_forcing(t):
    return np.sin(np.sin(t**2) ** 2) + 2 * t * np.cos(t**2)


def _sweep1d_residual(x, y, q, lam):
    u, ut = q["u"][0], q["u_x"][0]
    r = np.sin(u**2) + ut - sweep1d_forcing(x)
    return _single(r, {("u", 0): 2 * u * np.cos(u**2), ("u_x", 0): 1.0})


def _sweep1d(params):
    nx = int(params.get("nx", 1000))
    return ProblemDef(
        name="sweep1d",
        domain=Rectangle(0.0, 3 * np.pi),
        grid=GridSpec.line(0.0, 3 * np.pi, nx),
        residual=ResidualSpec(1, 1, ("u", "u_x"), _sweep1d_residual),
        bc_assignment=lambda x, y, n: (DIRICHLET, 0.0) if x == 0.0 else None,
        n_boundary=2,
        exact=lambda x, y: np.sin(np.asarray(x) ** 2)[None],
        kernel=(1, 3),
        train_defaults=dict(learning_rate=1e-3, ratio=(9, 1), epochs=20000),
        description="sin(u^2) + u_t = f(t) on [0, 3pi], u(0) = 0",
    )


# -- nonlinear Poisson with sin(u^2) -------------------------------------------

def sine_square_forcing(x, y):
    r2 = x**2 + y**2
    return np.sin(np.sin(r2) ** 2) + 4 * np.cos(r2) - 4 * r2 * np.sin(r2)


def _sine_square_residual(x, y, q, lam):
    u = q["u"][0]
    r = np.sin(u**2) + q["lap"][0] - sine_square_forcing(x, y)
    return _single(r, {("u", 0): 2 * u * np.cos(u**2), ("lap", 0): 1.0})


def _radial_sine(x, y):
    return np.sin(np.asarray(x) ** 2 + np.asarray(y) ** 2)[None]


def _sweep2d(params):
    nx, ny = int(params.get("nx", 200)), int(params.get("ny", 120))

    def bc(x, y, n):
        return DIRICHLET, np.sin(x**2 + y**2)

    return ProblemDef(
        name="sweep2d",
        domain=Rectangle(0.0, 10.0, 0.0, 6.0),
        grid=GridSpec(0.0, 10.0, 0.0, 6.0, nx, ny),
        residual=ResidualSpec(1, 1, ("u", "lap"), _sine_square_residual),
        bc_assignment=bc,
        n_boundary=int(params.get("n_boundary", 636)),
        exact=_radial_sine,
        train_defaults=dict(learning_rate=1e-2, ratio=(999, 1), epochs=5000),
        description="sin(u^2) + lap(u) = f on [0,10]x[0,6], Dirichlet",
    )


def _mixed_bvp(params):
    nx, ny = int(params.get("nx", 100)), int(params.get("ny", 60))

    def bc(x, y, n):
        if n[0] == -1.0 and x == 0.0:
            return NEUMANN, -2 * x * np.cos(x**2 + y**2)
        return DIRICHLET, np.sin(x**2 + y**2)

    return ProblemDef(
        name="mixed_bvp",
        domain=Rectangle(0.0, 5.0, 0.0, 3.0),
        grid=GridSpec(0.0, 5.0, 0.0, 3.0, nx, ny),
        residual=ResidualSpec(1, 1, ("u", "lap"), _sine_square_residual),
        bc_assignment=bc,
        n_boundary=int(params.get("n_boundary", 320)),
        exact=_radial_sine,
        train_defaults=dict(learning_rate=1e-3, ratio=(99, 1), epochs=20000),
        description="sin(u^2) + lap(u) = f on [0,5]x[0,3], Neumann on x=0",
    )


# -- ODE with sine nonlinearity ------------------------------------------------

def sine_ode_exact(x, m):
    return np.exp(-x) * np.sin(m * np.pi * x**2)


def sine_ode_forcing(x, m):
    du = np.exp(-x) * (2 * m * np.pi * x * np.cos(m * np.pi * x**2) - np.sin(m * np.pi * x**2))
    return du + np.sin(du) + sine_ode_exact(x, m)


def _sine_ode(params):
    m = int(params.get("m", 1))
    if m < 1:
        raise ValueError("sine_ode needs m >= 1")
    nx = int(params.get("nx", 200))

    def residual(x, y, q, lam):
        u, ux = q["u"][0], q["u_x"][0]
        r = ux + np.sin(ux) + u - sine_ode_forcing(x, m)
        return _single(r, {("u", 0): 1.0, ("u_x", 0): 1.0 + np.cos(ux)})

    return ProblemDef(
        name="sine_ode",
        domain=Rectangle(0.0, 3.0),
        grid=GridSpec.line(0.0, 3.0, nx),
        residual=ResidualSpec(1, 1, ("u", "u_x"), residual),
        bc_assignment=lambda x, y, n: (DIRICHLET, 0.0) if x == 0.0 else None,
        n_boundary=2,
        exact=lambda x, y: sine_ode_exact(np.asarray(x, dtype=np.float64), m)[None],
        kernel=(1, 3),
        train_defaults=dict(learning_rate=1e-2, ratio=(9, 1), epochs=20000),
        params={"m": m},
        description=f"u_x + sin(u_x) + u = q(x) on [0, 3], u(0) = 0, m = {m}",
    )


# -- nonlinear Schrodinger, split into real and imaginary parts ----------------

def _schrodinger_residual(x, y, q, lam):
    u, v = q["u"]
    ut, vt = q["u_y"]
    uxx, vxx = q["u_xx"]
    mod = u**2 + v**2
    n = u.size
    r = np.stack([ut + vxx + v - mod * v, vt - uxx - u + mod * u])
    one = np.ones(n)
    zero = np.zeros(n)
    partials = {
        ("u", 0): np.stack([-2 * u * v, -1 + 3 * u**2 + v**2]),
        ("u", 1): np.stack([1 - u**2 - 3 * v**2, 2 * u * v]),
        ("u_y", 0): np.stack([one, zero]),
        ("u_y", 1): np.stack([zero, one]),
        ("u_xx", 0): np.stack([zero, -one]),
        ("u_xx", 1): np.stack([one, zero]),
    }
    return ResidualEval(r, partials, np.zeros((2, 0, n)))


def _schrodinger_exact(x, t):
    x, t = np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.float64)
    return np.stack([np.cos(x - t), np.sin(x - t)])


def _schrodinger(params):
    nx, ny = int(params.get("nx", 10)), int(params.get("ny", 10))

    def bc(x, t, n):
        return DIRICHLET, _schrodinger_exact(x, t)

    return ProblemDef(
        name="schrodinger",
        domain=Rectangle(0.0, np.pi, 0.0, np.pi),
        grid=GridSpec(0.0, np.pi, 0.0, np.pi, nx, ny),
        residual=ResidualSpec(2, 2, ("u", "u_y", "u_xx"), _schrodinger_residual),
        bc_assignment=bc,
        n_boundary=int(params.get("n_boundary", 40)),
        exact=_schrodinger_exact,
        train_defaults=dict(learning_rate=1e-3, ratio=(1, 9), epochs=20000),
        description="i psi_t + psi_xx + psi - |psi|^2 psi = 0 on [0,pi]^2 (y axis is t)",
    )


# -- irregular domains -----------------------------------------------------------

def _polar_grid(domain: PolarDomain, spacing: float) -> GridSpec:
    x0, x1, y0, y1 = domain.bbox
    # one spare node beyond the curve so boundary cells keep a full stencil
    pad = spacing
    x0 = np.floor((x0 - pad) / spacing) * spacing
    y0 = np.floor((y0 - pad) / spacing) * spacing
    return GridSpec.from_spacing(x0, x1 + pad, y0, y1 + pad, spacing)


def star_phase(x, y, k):
    return x + k * x * y + k * y**2


def star_forcing(x, y, k):
    p = star_phase(x, y, k)
    return -np.sin(p) * (k * y + 1) - np.sin(p) * np.cos(p) * (k * x + 2 * k * y)


def _star(params):
    k = float(params.get("k", 5.0))
    spacing = float(params.get("spacing", 0.02))
    domain = star_domain()

    def residual(x, y, q, lam):
        u, ux, uy = q["u"][0], q["u_x"][0], q["u_y"][0]
        r = ux + u * uy - star_forcing(x, y, k)
        return _single(r, {("u", 0): uy, ("u_x", 0): 1.0, ("u_y", 0): u})

    exact = lambda x, y: np.cos(star_phase(np.asarray(x), np.asarray(y), k))[None]
    return ProblemDef(
        name="star",
        domain=domain,
        grid=_polar_grid(domain, spacing),
        residual=ResidualSpec(1, 1, ("u", "u_x", "u_y"), residual),
        bc_assignment=lambda x, y, n: (DIRICHLET, exact(x, y)[0]),
        n_boundary=int(params.get("n_boundary", 800)),
        exact=exact,
        train_defaults=dict(learning_rate=1e-3, ratio=(1, 9), epochs=20000),
        params={"k": k, "spacing": spacing},
        description="u_x + u u_y = f on the star domain rho <= 1 + cos^2(4 theta)",
    )


def bird_forcing(x, y, k):
    c = np.cos(k * x + k * y)
    return np.sin(c**2) - 2 * k**2 * c


def _bird(params):
    k = float(params.get("k", 5.0))
    spacing = float(params.get("spacing", 0.02))
    domain = bird_domain()

    def residual(x, y, q, lam):
        u = q["u"][0]
        r = np.sin(u**2) + q["lap"][0] - bird_forcing(x, y, k)
        return _single(r, {("u", 0): 2 * u * np.cos(u**2), ("lap", 0): 1.0})

    exact = lambda x, y: np.cos(k * np.asarray(x) + k * np.asarray(y))[None]
    return ProblemDef(
        name="bird",
        domain=domain,
        grid=_polar_grid(domain, spacing),
        residual=ResidualSpec(1, 1, ("u", "lap"), residual),
        bc_assignment=lambda x, y, n: (DIRICHLET, exact(x, y)[0]),
        n_boundary=int(params.get("n_boundary", 800)),
        exact=exact,
        train_defaults=dict(learning_rate=1e-4, ratio=(1, 99), epochs=20000),
        params={"k": k, "spacing": spacing},
        description="sin(u^2) + lap(u) = f on the bird-like domain, exact cos(kx + ky)",
    )


def starfish_phase(x, y, k):
    return 0.5 + x + k * x * y + k * y**2


def starfish_forcing(x, y, k):
    p = starfish_phase(x, y, k)
    a = 1 + k * y
    b = k * x + 2 * k * y
    uxx = -np.sin(p) * a**2
    uyy = -np.sin(p) * b**2 + 2 * k * np.cos(p)
    ux = np.cos(p) * a
    return uxx + 5 * uyy + k * np.sin(np.sin(p)) * ux


def _starfish(params):
    k = float(params.get("k", 5.0))
    spacing = float(params.get("spacing", 0.02))
    domain = starfish_domain()

    def residual(x, y, q, lam):
        u, ux = q["u"][0], q["u_x"][0]
        r = q["u_xx"][0] + 5 * q["u_yy"][0] + k * np.sin(u) * ux - starfish_forcing(x, y, k)
        return _single(r, {("u", 0): k * np.cos(u) * ux, ("u_x", 0): k * np.sin(u),
                           ("u_xx", 0): 1.0, ("u_yy", 0): 5.0})

    exact = lambda x, y: np.sin(starfish_phase(np.asarray(x), np.asarray(y), k))[None]
    return ProblemDef(
        name="starfish",
        domain=domain,
        grid=_polar_grid(domain, spacing),
        residual=ResidualSpec(1, 1, ("u", "u_x", "u_xx", "u_yy"), residual),
        bc_assignment=lambda x, y, n: (DIRICHLET, exact(x, y)[0]),
        n_boundary=int(params.get("n_boundary", 800)),
        exact=exact,
        train_defaults=dict(learning_rate=1e-4, ratio=(1, 99), epochs=20000),
        params={"k": k, "spacing": spacing},
        description="u_xx + 5 u_yy + k sin(u) u_x = f on the starfish domain",
    )


# -- observation-driven problems -------------------------------------------------

def aniso_field(x, y, ratio=5.0):
    """sin(x) sinh(y / sqrt(ratio)): solves u_xx + ratio * u_yy = 0 exactly."""
    return np.sin(x) * np.sinh(np.asarray(y) / np.sqrt(ratio))


def explicit_field(x, y):
    return np.sin(x + 5 * np.asarray(y)) + np.exp(-np.asarray(x))


def _aniso_residual(source: float):
    def residual(x, y, q, lam):
        uxx, uyy = q["u_xx"][0], q["u_yy"][0]
        r = lam[0] * uxx + lam[1] * uyy - source
        n = r.size
        return ResidualEval(
            r[None],
            {("u_xx", 0): np.full((1, n), lam[0]), ("u_yy", 0): np.full((1, n), lam[1])},
            np.stack([uxx, uyy])[None],
        )
    return residual


def _unit_square(params):
    spacing = float(params.get("spacing", 0.05))
    return Rectangle(0.0, 1.0, 0.0, 1.0), GridSpec.from_spacing(0.0, 1.0, 0.0, 1.0, spacing)


def _aniso_inverse(params):
    ratio = float(params.get("ratio", 5.0))
    domain, grid = _unit_square(params)
    return ProblemDef(
        name="aniso_inverse",
        domain=domain,
        grid=grid,
        residual=ResidualSpec(1, 1, ("u_xx", "u_yy"), _aniso_residual(0.0)),
        exact=lambda x, y: aniso_field(x, y, ratio)[None],
        lam0=(1.0, float(params.get("lambda2_init", 1.0))),
        lam_trainable=(False, True),
        true_lam=(1.0, ratio),
        activation="identity",
        train_defaults=dict(learning_rate=2e-4, ratio=(1, 99), epochs=20000),
        params={"ratio": ratio},
        description="lambda1 u_xx + lambda2 u_yy = 0 on [0,1]^2, lambda2 trainable",
    )


def _denoise(params):
    physics = str(params.get("physics", "known"))
    if physics not in ("known", "misspecified"):
        raise ValueError(f"denoise physics must be 'known' or 'misspecified', got {physics!r}")
    domain, grid = _unit_square(params)
    common = dict(
        domain=domain,
        grid=grid,
        activation="identity",
        train_defaults=dict(learning_rate=2e-4, ratio=(1, 99), epochs=20000),
    )
    if physics == "known":
        ratio = float(params.get("ratio", 5.0))
        return ProblemDef(
            name="denoise",
            residual=ResidualSpec(1, 1, ("u_xx", "u_yy"), _aniso_residual(0.0)),
            exact=lambda x, y: aniso_field(x, y, ratio)[None],
            lam0=(1.0, ratio),
            lam_trainable=(False, False),
            true_lam=(1.0, ratio),
            params={"physics": physics, "ratio": ratio},
            description="denoising with the known law u_xx + 5 u_yy = 0",
            **common,
        )
    return ProblemDef(
        name="denoise",
        residual=ResidualSpec(1, 1, ("u_xx", "u_yy"), _aniso_residual(1.0)),
        exact=lambda x, y: explicit_field(x, y)[None],
        lam0=(1.0, 1.0),
        lam_trainable=(True, True),
        true_lam=None,
        params={"physics": physics},
        description="denoising sin(x + 5y) + exp(-x) with the stand-in law k1 u_xx + k2 u_yy = 1",
        **common,
    )


_GRID2D = ("nx", "ny", "n_boundary")
_POLAR = ("k", "spacing", "n_boundary")

# name -> (factory, accepted override keys)
BUILTINS = {
    "sweep1d": (_sweep1d, ("nx",)),
    "sweep2d": (_sweep2d, _GRID2D),
    "sine_ode": (_sine_ode, ("m", "nx")),
    "mixed_bvp": (_mixed_bvp, _GRID2D),
    "schrodinger": (_schrodinger, _GRID2D),
    "star": (_star, _POLAR),
    "bird": (_bird, _POLAR),
    "starfish": (_starfish, _POLAR),
    "aniso_inverse": (_aniso_inverse, ("ratio", "spacing", "lambda2_init")),
    "denoise": (_denoise, ("physics", "ratio", "spacing")),
}

ALIASES = {"denoise_misspec": ("denoise", {"physics": "misspecified"})}


def problem_names() -> list[str]:
    return list(BUILTINS)


def get_problem(name: str, **params) -> ProblemDef:
    if name in ALIASES:
        name, fixed = ALIASES[name]
        params = {**params, **fixed}
    try:
        factory, accepted = BUILTINS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; builtins: {', '.join(BUILTINS)}") from None
    extra = set(params) - set(accepted) - {"activation"}
    if extra:
        raise ValueError(f"problem {name!r} does not take parameters {sorted(extra)}; "
                         f"accepted: {sorted(accepted) + ['activation']}")
    problem = factory(params)
    if "activation" in params:
        problem = replace(problem, activation=str(params["activation"]))
    return problem
