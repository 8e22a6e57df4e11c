"""Loss assembly, reverse-mode gradients, Adam and the training loop.

The loss is

    total = k_R (l_r1 + l_r2) + k_G l_g + k_obs l_obs

with ``l_g`` the mean squared PDE residual over interior collocation nodes,
``l_r1``/``l_r2`` the mean squared Dirichlet/Neumann mismatches at boundary
samples and ``l_obs`` the mean squared misfit to observations.  Gradients flow
residual partials -> derivative-field adjoints -> transposed stencils ->
generator backward; point losses enter through the interpolation adjoint.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .generator import PicnModel, backward, forward, model_for_grid
from .geometry import (
    DIRICHLET,
    NEUMANN,
    PolarDomain,
    Rectangle,
    boundary_samples,
    inside,
    interp_apply,
    interp_backward,
    interp_stencil,
)
from .grid import GridSpec, apply_stencil, apply_stencil_transpose, interior_margin, kernel_bank
from .problems import ProblemDef

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 1000
    k_R: float = 0.1
    k_G: float = 0.9
    # observation weight; None means "same as k_R"
    k_obs: float | None = None
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 < b < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.epochs) < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.k_R < 0 or self.k_G < 0 or (self.k_R == 0 and self.k_G == 0):
            raise ValueError("loss weights must be non-negative and not both zero")
        if self.k_obs is not None and self.k_obs < 0:
            raise ValueError("k_obs must be non-negative")
        if int(self.log_every) < 1:
            raise ValueError("log_every must be >= 1")

    @property
    def obs_weight(self) -> float:
        return self.k_R if self.k_obs is None else self.k_obs


def weights_from_ratio(governing: float, boundary: float) -> tuple[float, float]:
    """Map a governing:boundary ratio onto ``(k_G, k_R)`` summing to one."""
    s = governing + boundary
    return governing / s, boundary / s


def config_for(problem: ProblemDef, **overrides) -> TrainingConfig:
    """Problem defaults with ``overrides`` applied; ``ratio=(a, b)`` sets both weights."""
    values = dict(problem.train_defaults)
    values.update({k: v for k, v in overrides.items() if v is not None})
    ratio = values.pop("ratio", None)
    if ratio is not None and not ({"k_G", "k_R"} & set(overrides)):
        values["k_G"], values["k_R"] = weights_from_ratio(*ratio)
    known = {f.name for f in fields(TrainingConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown training settings {sorted(unknown)}")
    return TrainingConfig(**values)


@dataclass
class LossBreakdown:
    total: float
    l_g: float
    l_r1: float
    l_r2: float
    l_obs: float
    n_omega: int
    n_gamma1: int
    n_gamma2: int
    n_obs: int = 0

    def recomposed(self, config: TrainingConfig) -> float:
        return (config.k_R * (self.l_r1 + self.l_r2) + config.k_G * self.l_g
                + config.obs_weight * self.l_obs)


@dataclass
class CollocationSets:
    """Everything the loss needs that does not change during training."""

    grid: GridSpec
    interior: GridSpec
    bank: dict
    mask: np.ndarray  # on the interior grid
    x: np.ndarray
    y: np.ndarray
    eval_mask: np.ndarray  # on the full grid
    dirichlet: object = None
    dirichlet_target: np.ndarray = None
    dirichlet_xy: np.ndarray = None
    neumann: object = None
    neumann_normal: np.ndarray = None
    neumann_target: np.ndarray = None
    neumann_xy: np.ndarray = None
    obs: object = None
    obs_values: np.ndarray = None

    @property
    def n_omega(self) -> int:
        return int(self.x.size)

    @property
    def n_dirichlet(self) -> int:
        return 0 if self.dirichlet is None else self.dirichlet.size

    @property
    def n_neumann(self) -> int:
        return 0 if self.neumann is None else self.neumann.size

    @property
    def n_obs(self) -> int:
        return 0 if self.obs is None else self.obs.size


def collocation_mask(problem: ProblemDef, interior: GridSpec) -> np.ndarray:
    if isinstance(problem.domain, PolarDomain):
        X, Y = interior.mesh()
        return inside(problem.domain, X, Y)
    return np.ones(interior.shape, dtype=bool)


def evaluation_mask(problem: ProblemDef, grid: GridSpec) -> np.ndarray:
    """Nodes where errors are scored: the whole grid, or inside nodes of a curved domain."""
    if isinstance(problem.domain, PolarDomain):
        mask = np.zeros(grid.shape, dtype=bool)
        mi, mj = interior_margin(grid)
        X, Y = grid.mesh()
        mask[mi:grid.ny - mi, mj:grid.nx - mj] = True
        return mask & inside(problem.domain, X, Y)
    return np.ones(grid.shape, dtype=bool)


def build_sets(problem: ProblemDef, observations=None, grid: GridSpec | None = None) -> CollocationSets:
    grid = grid or problem.grid
    interior = grid.trimmed(*interior_margin(grid))
    samples = []
    if problem.bc_assignment is not None and problem.n_boundary > 0:
        samples = boundary_samples(problem.domain, problem.n_boundary, problem.bc_assignment)
    quantities = list(problem.residual.reads)
    if any(s.bc_kind == NEUMANN for s in samples):
        quantities += [q for q in ("u_x", "u_y") if q not in quantities]
    mask = collocation_mask(problem, interior)
    X, Y = interior.mesh()
    sets = CollocationSets(
        grid=grid,
        interior=interior,
        bank=kernel_bank(grid, quantities),
        mask=mask,
        x=X[mask],
        y=Y[mask],
        eval_mask=evaluation_mask(problem, grid),
    )
    dir_s = [s for s in samples if s.bc_kind == DIRICHLET]
    neu_s = [s for s in samples if s.bc_kind == NEUMANN]
    if dir_s:
        xy = np.array([(s.x, s.y) for s in dir_s]).T
        sets.dirichlet_xy = xy
        sets.dirichlet = interp_stencil(grid, xy[0], xy[1])
        sets.dirichlet_target = np.array([s.target for s in dir_s]).T.reshape(-1, len(dir_s))
        if sets.dirichlet_target.shape[0] == 1 and problem.channels > 1:
            sets.dirichlet_target = np.repeat(sets.dirichlet_target, problem.channels, axis=0)
    if neu_s:
        xy = np.array([(s.x, s.y) for s in neu_s]).T
        sets.neumann_xy = xy
        # derivative fields live on the trimmed grid; edge points clamp onto it
        sets.neumann = interp_stencil(interior, xy[0], xy[1], clamp=True)
        sets.neumann_normal = np.array([s.normal for s in neu_s]).T
        sets.neumann_target = np.array([s.target for s in neu_s]).T.reshape(-1, len(neu_s))
    if observations is not None:
        sets.obs = interp_stencil(grid, observations.x, observations.y)
        sets.obs_values = np.asarray(observations.values, dtype=np.float64)
    return sets


def _field_loss(problem: ProblemDef, fields_, lam, sets: CollocationSets, config: TrainingConfig,
                need_grad: bool = True):
    """Loss of raw nodal fields (one per channel) and its gradient w.r.t. them."""
    C = len(fields_)
    lam = np.asarray(lam, dtype=np.float64)
    rows, cols = sets.grid.shape
    n = sets.n_omega
    if n == 0 and config.k_G > 0:
        raise ValueError("no interior collocation points but k_G > 0")

    derived = {name: [apply_stencil(f, k) for f in fields_] for name, k in sets.bank.items()}
    grad_fields = [np.zeros((rows, cols)) for _ in range(C)]
    grad_derived = {name: [None] * C for name in sets.bank}
    lam_grad = np.zeros_like(lam)

    def add_derived(name, c, g):
        cur = grad_derived[name][c]
        grad_derived[name][c] = g if cur is None else cur + g

    l_g = 0.0
    if n:
        q = {name: np.stack([d[sets.mask] for d in ds]) for name, ds in derived.items()}
        res = problem.residual(sets.x, sets.y, q, lam)
        l_g = float(np.sum(res.values**2) / n)
        if need_grad and config.k_G > 0:
            dr = 2.0 * config.k_G * res.values / n
            for (name, c), part in res.partials.items():
                g = np.zeros(sets.interior.shape)
                g[sets.mask] = np.sum(dr * part, axis=0)
                add_derived(name, c, g)
            if lam.size:
                lam_grad += np.einsum("en,eln->l", dr, res.lam_partials)

    l_r1 = 0.0
    if sets.n_dirichlet:
        nd = sets.n_dirichlet
        diff = np.stack([interp_apply(f, sets.dirichlet) for f in fields_]) - sets.dirichlet_target[:C]
        l_r1 = float(np.sum(diff**2) / nd)
        if need_grad:
            for c in range(C):
                grad_fields[c] += interp_backward(sets.dirichlet, 2.0 * config.k_R * diff[c] / nd,
                                                  (rows, cols))

    l_r2 = 0.0
    if sets.n_neumann:
        nn = sets.n_neumann
        nx_, ny_ = sets.neumann_normal
        diffs = []
        for c in range(C):
            dn = (nx_ * interp_apply(derived["u_x"][c], sets.neumann)
                  + ny_ * interp_apply(derived["u_y"][c], sets.neumann))
            diffs.append(dn - sets.neumann_target[c])
        diff = np.stack(diffs)
        l_r2 = float(np.sum(diff**2) / nn)
        if need_grad:
            for c in range(C):
                up = 2.0 * config.k_R * diff[c] / nn
                add_derived("u_x", c, interp_backward(sets.neumann, up * nx_, sets.interior.shape))
                add_derived("u_y", c, interp_backward(sets.neumann, up * ny_, sets.interior.shape))

    l_obs = 0.0
    if sets.n_obs:
        no = sets.n_obs
        diff = interp_apply(fields_[0], sets.obs) - sets.obs_values
        l_obs = float(np.sum(diff**2) / no)
        if need_grad:
            grad_fields[0] += interp_backward(sets.obs, 2.0 * config.obs_weight * diff / no, (rows, cols))

    if need_grad:
        for name, per_channel in grad_derived.items():
            for c, g in enumerate(per_channel):
                if g is not None:
                    grad_fields[c] += apply_stencil_transpose(g, sets.bank[name], rows, cols)

    total = config.k_R * (l_r1 + l_r2) + config.k_G * l_g + config.obs_weight * l_obs
    breakdown = LossBreakdown(total, l_g, l_r1, l_r2, l_obs, n, sets.n_dirichlet, sets.n_neumann,
                              sets.n_obs)
    return breakdown, grad_fields, lam_grad


def assemble_fields_loss(problem, fields_, lam, sets, config) -> LossBreakdown:
    """Loss for nodal fields supplied directly, bypassing the generator."""
    return _field_loss(problem, [np.asarray(f, dtype=np.float64) for f in fields_], lam, sets, config,
                       need_grad=False)[0]


def assemble_loss(problem, models, lam, sets, config) -> LossBreakdown:
    fields_ = [forward(m)[1] for m in models]
    return _field_loss(problem, fields_, lam, sets, config, need_grad=False)[0]


def total_gradient(problem, models, lam, sets, config, trainable=None):
    """Exact gradient of the total loss.

    Returns ``(model_grads, lam_grad, breakdown)``; entries of ``lam_grad``
    for frozen coefficients are zero.
    """
    outs = [forward(m) for m in models]
    breakdown, g_fields, lam_grad = _field_loss(problem, [u for _, u in outs], lam, sets, config)
    grads = [backward(m, h, u, g) for m, (h, u), g in zip(models, outs, g_fields)]
    if trainable is None:
        trainable = problem.lam_trainable or (False,) * np.size(lam)
    lam_grad = np.where(np.asarray(trainable, dtype=bool), lam_grad, 0.0) if np.size(lam) else lam_grad
    return grads, lam_grad, breakdown


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p, dtype=np.float64) for p in params],
                   [np.zeros_like(p, dtype=np.float64) for p in params])


def adam_step(params, grads, state: AdamState, config: TrainingConfig):
    """One bias-corrected Adam update; returns new parameter arrays and the state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and Adam moments must line up")
    state.step += 1
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.epsilon
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        out.append(p - lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + eps))
    return out, state


@dataclass
class TrainableLambda:
    values: np.ndarray
    frozen: np.ndarray

    @classmethod
    def for_problem(cls, problem: ProblemDef, values=None) -> "TrainableLambda":
        vals = np.array(problem.lam0 if values is None else values, dtype=np.float64)
        trainable = np.array(problem.lam_trainable or (False,) * vals.size, dtype=bool)
        return cls(vals, ~trainable)

    @property
    def trainable_index(self) -> np.ndarray:
        return np.flatnonzero(~self.frozen)


def _pack(models, lam: TrainableLambda):
    params = []
    for m in models:
        params += [m.w_h, np.array(m.b_h), m.w_o, np.array(m.b_o)]
    if lam.trainable_index.size:
        params.append(lam.values[lam.trainable_index])
    return params


def _pack_grads(grads, lam_grad, lam: TrainableLambda):
    out = []
    for g in grads:
        out += [g.g_w_h, np.array(g.g_b_h), g.g_w_o, np.array(g.g_b_o)]
    if lam.trainable_index.size:
        out.append(lam_grad[lam.trainable_index])
    return out


def _unpack(params, models, lam: TrainableLambda):
    for k, m in enumerate(models):
        w_h, b_h, w_o, b_o = params[4 * k:4 * k + 4]
        m.w_h, m.b_h, m.w_o, m.b_o = w_h, float(b_h), w_o, float(b_o)
    if lam.trainable_index.size:
        lam.values = lam.values.copy()
        lam.values[lam.trainable_index] = params[-1]


def init_models(problem: ProblemDef, seed: int = 0, grid: GridSpec | None = None) -> list[PicnModel]:
    grid = grid or problem.grid
    return [model_for_grid(grid.shape, problem.kernel, problem.activation, seed + c)
            for c in range(problem.channels)]


def error_on_grid(problem: ProblemDef, models, sets: CollocationSets) -> dict:
    """Relative L2 error of every channel against the reference field on ``eval_mask``."""
    if problem.exact is None:
        return {}
    X, Y = sets.grid.mesh()
    exact = problem.exact(X, Y)
    mask = sets.eval_mask
    num = den = 0.0
    per = []
    for c, m in enumerate(models):
        u = forward(m)[1]
        d = u[mask] - exact[c][mask]
        e = exact[c][mask]
        per.append(float(np.linalg.norm(d) / max(np.linalg.norm(e), 1e-300)))
        num += float(d @ d)
        den += float(e @ e)
    return {"rel_l2": float(np.sqrt(num / den)) if den > 0 else float(np.sqrt(num)),
            "rel_l2_channels": per}


@dataclass
class TrainResult:
    models: list
    lam: np.ndarray
    history: list = field(default_factory=list)
    final: LossBreakdown | None = None
    metrics: dict = field(default_factory=dict)
    sets: CollocationSets | None = None


def train(problem: ProblemDef, config: TrainingConfig, models=None, lam=None, observations=None,
          sets: CollocationSets | None = None, callback=None) -> TrainResult:
    """Full-batch Adam training.

    ``callback(epoch, models, lam, breakdown)`` fires on every logged epoch.
    History entries are logged at epoch 0, every ``log_every`` epochs and
    after the last update.
    """
    sets = sets or build_sets(problem, observations)
    models = [m.copy() for m in models] if models is not None else init_models(problem, config.seed, sets.grid)
    tl = TrainableLambda.for_problem(problem, lam)
    state = AdamState.zeros_like(_pack(models, tl))
    trainable = ~tl.frozen
    history = []

    def record(epoch, bd):
        if not np.isfinite(bd.total):
            raise FloatingPointError(
                f"{problem.name}: loss became non-finite at epoch {epoch} "
                f"(l_g={bd.l_g}, l_r1={bd.l_r1}, l_r2={bd.l_r2}, l_obs={bd.l_obs})")
        entry = {"epoch": epoch, "loss_total": bd.total, "loss_g": bd.l_g, "loss_r1": bd.l_r1,
                 "loss_r2": bd.l_r2, "loss_obs": bd.l_obs}
        entry.update(error_on_grid(problem, models, sets))
        entry.pop("rel_l2_channels", None)
        if tl.values.size:
            entry["lambda"] = [float(v) for v in tl.values]
        history.append(entry)
        if callback is not None:
            callback(epoch, models, tl.values.copy(), bd)

    for epoch in range(config.epochs):
        grads, lam_grad, bd = total_gradient(problem, models, tl.values, sets, config, trainable)
        if not np.isfinite(bd.total):
            record(epoch, bd)
        if epoch % config.log_every == 0:
            record(epoch, bd)
            log.debug("%s epoch %d loss %.6e", problem.name, epoch, bd.total)
        params, state = adam_step(_pack(models, tl), _pack_grads(grads, lam_grad, tl), state, config)
        _unpack(params, models, tl)

    final = assemble_loss(problem, models, tl.values, sets, config)
    record(config.epochs, final)
    metrics = error_on_grid(problem, models, sets)
    return TrainResult(models, tl.values, history, final, metrics, sets)


def loss_vectors(problem, models, lam, sets) -> dict:
    """Per-point residuals and mismatches behind each loss term.

    Each term of the loss is the mean of the squares of one of these arrays.
    """
    fields_ = [forward(m)[1] for m in models]
    out = {}
    if sets.n_omega:
        q = {name: np.stack([apply_stencil(f, k)[sets.mask] for f in fields_])
             for name, k in sets.bank.items()}
        out["l_g"] = problem.residual(sets.x, sets.y, q, np.asarray(lam, dtype=np.float64)).values
    if sets.n_dirichlet:
        out["l_r1"] = (np.stack([interp_apply(f, sets.dirichlet) for f in fields_])
                       - sets.dirichlet_target[:len(fields_)])
    if sets.n_neumann:
        nx_, ny_ = sets.neumann_normal
        out["l_r2"] = np.stack([
            nx_ * interp_apply(apply_stencil(f, sets.bank["u_x"]), sets.neumann)
            + ny_ * interp_apply(apply_stencil(f, sets.bank["u_y"]), sets.neumann)
            - sets.neumann_target[c]
            for c, f in enumerate(fields_)])
    if sets.n_obs:
        out["l_obs"] = interp_apply(fields_[0], sets.obs) - sets.obs_values
    return out


# -- finite-difference verification ------------------------------------------------

@dataclass
class GradCheckEntry:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    entries: list
    tolerance: float

    @property
    def failures(self) -> list:
        return [e for e in self.entries if e.rel_err >= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_rel_err(self) -> float:
        return max((e.rel_err for e in self.entries), default=0.0)


def grad_check(problem: ProblemDef, models, config: TrainingConfig, lam=None, sets=None,
               tolerance: float = 1e-5, step: float = 1e-4, floor: float = 1e-8,
               grads=None) -> GradCheckReport:
    """Compare analytic gradients with central differences of the loss.

    Components where both gradients are below ``floor`` in magnitude are
    compared in absolute terms.  ``grads`` may be supplied to check a
    precomputed (e.g. deliberately corrupted) gradient.
    """
    sets = sets or build_sets(problem)
    models = [m.copy() for m in models]
    tl = TrainableLambda.for_problem(problem, lam)
    if grads is None:
        mg, lg, _ = total_gradient(problem, models, tl.values, sets, config, ~tl.frozen)
    else:
        mg, lg = grads

    weights = {"l_g": config.k_G, "l_r1": config.k_R, "l_r2": config.k_R, "l_obs": config.obs_weight}
    counts = {"l_g": sets.n_omega, "l_r1": sets.n_dirichlet, "l_r2": sets.n_neumann, "l_obs": sets.n_obs}

    def loss():
        return loss_vectors(problem, models, tl.values, sets)

    def central(lp, lm):
        # (a^2 - b^2) summed as (a - b)(a + b): no cancellation between large totals
        return sum(weights[k] * float(np.sum((lp[k] - lm[k]) * (lp[k] + lm[k]))) / counts[k]
                   for k in lp) / (2 * step)

    def rel(a, b):
        scale = max(abs(a), abs(b))
        return abs(a - b) if scale < floor else abs(a - b) / scale

    entries = []
    for c, (m, g) in enumerate(zip(models, mg)):
        for attr, gattr in (("w_h", "g_w_h"), ("w_o", "g_w_o")):
            arr = getattr(m, attr)
            garr = getattr(g, gattr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + step
                lp = loss()
                arr[idx] = old - step
                lm = loss()
                arr[idx] = old
                num = central(lp, lm)
                entries.append(GradCheckEntry(f"m{c}.{attr}", idx, float(garr[idx]), num,
                                              rel(float(garr[idx]), num)))
        for attr, gattr in (("b_h", "g_b_h"), ("b_o", "g_b_o")):
            old = getattr(m, attr)
            setattr(m, attr, old + step)
            lp = loss()
            setattr(m, attr, old - step)
            lm = loss()
            setattr(m, attr, old)
            num = central(lp, lm)
            a = float(getattr(g, gattr))
            entries.append(GradCheckEntry(f"m{c}.{attr}", (), a, num, rel(a, num)))
    for k in tl.trainable_index:
        old = tl.values[k]
        tl.values[k] = old + step
        lp = loss()
        tl.values[k] = old - step
        lm = loss()
        tl.values[k] = old
        num = central(lp, lm)
        entries.append(GradCheckEntry(f"lambda[{k}]", (int(k),), float(lg[k]), num, rel(float(lg[k]), num)))
    return GradCheckReport(entries, tolerance)


def reduced_problem(problem: ProblemDef, nodes: int = 6, line_nodes: int = 28,
                    n_boundary: int = 12) -> ProblemDef:
    """Copy of ``problem`` on a tiny grid, for finite-difference checks."""
    if problem.grid.is_1d:
        g = problem.grid
        grid = GridSpec.line(g.x_min, g.x_max, line_nodes)
    elif isinstance(problem.domain, Rectangle):
        x0, x1, y0, y1 = problem.domain.bbox
        grid = GridSpec(x0, x1, y0, y1, nodes, nodes)
    else:
        x0, x1, y0, y1 = problem.domain.bbox
        pad = 0.05 * max(x1 - x0, y1 - y0)
        grid = GridSpec(x0 - pad, x1 + pad, y0 - pad, y1 + pad, nodes, nodes)
    nb = problem.n_boundary if problem.grid.is_1d else min(problem.n_boundary, n_boundary)
    return replace(problem, grid=grid, n_boundary=nb)


def breakdown_dict(bd: LossBreakdown) -> dict:
    return asdict(bd)
