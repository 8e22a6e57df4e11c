"""Command-line front end.

Commands: solve, estimate, denoise, spectrum, grad-check, list-problems.

Settings come from builtin defaults, then an optional INI file, then flags,
each layer overriding the previous one.  The INI file has up to four
sections::

    [run]
    problem = sine_ode
    seed = 0
    out_dir = results

    [problem]
    m = 2

    [training]
    epochs = 5000
    weight_ratio = 9:1

    [noise]
    std_dev = 0.05
    seed = 1
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis
from .generator import forward, load_checkpoint, save_checkpoint
from .problems import ProblemDef, get_problem, problem_names
from .training import (
    TrainingConfig,
    config_for,
    evaluation_mask,
    grad_check,
    init_models,
    reduced_problem,
    train,
)

log = logging.getLogger("picn")

OUT_DIR_ENV = "PICN_OUT_DIR"
COMMANDS = ("solve", "estimate", "denoise", "spectrum", "grad-check", "list-problems")

# problem override keys and their types
PARAM_TYPES = {
    "nx": int, "ny": int, "n_boundary": int, "m": int,
    "k": float, "spacing": float, "ratio": float, "lambda2_init": float,
    "physics": str, "activation": str,
}
TRAINING_TYPES = {
    "learning_rate": float, "beta1": float, "beta2": float, "epsilon": float,
    "epochs": int, "k_R": float, "k_G": float, "k_obs": float, "log_every": int,
    "weight_ratio": "ratio",
}
RUN_TYPES = {"problem": str, "seed": int, "out_dir": str, "tolerance": float, "checkpoint": str}
NOISE_TYPES = {"std_dev": float, "seed": int}
SECTIONS = {"run": RUN_TYPES, "problem": PARAM_TYPES, "training": TRAINING_TYPES, "noise": NOISE_TYPES}

# which problem each command trains when none is named
COMMAND_PROBLEM = {"estimate": "aniso_inverse", "denoise": "denoise"}


class ConfigError(ValueError):
    pass


def _convert(path: str, kind, raw):
    if kind == "ratio":
        if isinstance(raw, (tuple, list)):
            parts = list(raw)
        else:
            parts = str(raw).replace(",", ":").split(":")
        try:
            a, b = (float(p) for p in parts)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: expected a ratio like 9:1, got {raw!r}") from None
        if a < 0 or b < 0 or a + b == 0:
            raise ConfigError(f"{path}: ratio parts must be non-negative and not both zero")
        return (a, b)
    if kind is int and isinstance(raw, float) and not raw.is_integer():
        raise ConfigError(f"{path}: expected int, got {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {raw!r}") from None


@dataclass
class RunConfig:
    command: str
    problem: str
    problem_params: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    noise_std: float = 0.0
    noise_seed: int = 0
    out_dir: str = "picn-out"
    seed: int = 0
    tolerance: float = 1e-5
    checkpoint: str | None = None

    def problem_def(self) -> ProblemDef:
        return get_problem(self.problem, **self.problem_params)

    def training_config(self, problem: ProblemDef | None = None) -> TrainingConfig:
        problem = problem or self.problem_def()
        overrides = dict(self.training)
        if "weight_ratio" in overrides:
            overrides["ratio"] = overrides.pop("weight_ratio")
        overrides.setdefault("seed", self.seed)
        return config_for(problem, **overrides)

    def noise(self) -> analysis.NoiseModel:
        return analysis.NoiseModel(self.noise_std, self.noise_seed)


def _read_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path) as fh:
        parser.read_file(fh)
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{section}: unknown section; expected one of {sorted(SECTIONS)}")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"{section}.{key}: unknown key; expected one of {sorted(SECTIONS[section])}")
            out[(section, key)] = raw
    return out


def parse_config(command: str, path=None, flags: dict | None = None) -> RunConfig:
    """Merge defaults, an optional INI file and flag values into a checked RunConfig.

    ``flags`` maps ``(section, key)`` to a value; ``None`` values are ignored.
    The result is resolved once so bad settings fail before any computation.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    merged = _read_file(path) if path else {}
    for (section, key), value in (flags or {}).items():
        if section not in SECTIONS or key not in SECTIONS[section]:
            raise ConfigError(f"{section}.{key}: unknown key")
        if value is not None:
            merged[(section, key)] = value
    values = {(s, k): _convert(f"{s}.{k}", SECTIONS[s][k], v) for (s, k), v in merged.items()}

    problem = values.get(("run", "problem"), COMMAND_PROBLEM.get(command))
    if problem is None and command not in ("list-problems",):
        raise ConfigError("run.problem: no problem given; use --problem or [run] problem = ...")
    params = {k: v for (s, k), v in values.items() if s == "problem"}
    if command == "denoise" and problem == "denoise":
        params.setdefault("physics", "known")
    default_out = os.environ.get(OUT_DIR_ENV, "picn-out")
    cfg = RunConfig(
        command=command,
        problem=problem or "",
        problem_params=params,
        training={k: v for (s, k), v in values.items() if s == "training"},
        noise_std=values.get(("noise", "std_dev"), 0.0),
        noise_seed=values.get(("noise", "seed"), 0),
        out_dir=values.get(("run", "out_dir"), default_out),
        seed=values.get(("run", "seed"), 0),
        tolerance=values.get(("run", "tolerance"), 1e-5),
        checkpoint=values.get(("run", "checkpoint")),
    )
    if command != "list-problems":
        try:
            p = cfg.problem_def()
            cfg.training_config(p)
            cfg.noise()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg


# -- output files ---------------------------------------------------------------

def _g(v) -> str:
    return format(float(v), ".17g")


def write_resolved(path: Path, cfg: RunConfig, problem: ProblemDef, tc: TrainingConfig):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {"command": cfg.command, "problem": cfg.problem, "seed": str(cfg.seed),
                     "out_dir": cfg.out_dir, "tolerance": repr(cfg.tolerance)}
    g = problem.grid
    prob = {k: str(v) for k, v in sorted({**problem.params, **cfg.problem_params}.items())}
    prob.update({"activation": problem.activation, "nx": str(g.nx), "ny": str(g.ny),
                 "x_min": repr(g.x_min), "x_max": repr(g.x_max), "y_min": repr(g.y_min),
                 "y_max": repr(g.y_max), "n_boundary": str(problem.n_boundary),
                 "kernel": "x".join(map(str, problem.kernel))})
    parser["problem"] = prob
    parser["training"] = {f.name: repr(getattr(tc, f.name)) for f in fields(tc)}
    parser["training"]["k_obs_effective"] = repr(tc.obs_weight)
    parser["noise"] = {"std_dev": repr(cfg.noise_std), "seed": str(cfg.noise_seed)}
    with open(path, "w") as fh:
        parser.write(fh)


def write_field_csv(path: Path, problem: ProblemDef, fields_, exact=None, mask=None):
    grid = problem.grid
    X, Y = grid.mesh()
    mask = np.ones(grid.shape, dtype=bool) if mask is None else mask
    C = len(fields_)
    names = ["u_pred"] if C == 1 else [f"u_pred_{c}" for c in range(C)]
    cols = [np.asarray(f)[mask] for f in fields_]
    header = ["x", "y"]
    if exact is not None:
        for c in range(C):
            suffix = "" if C == 1 else f"_{c}"
            header += [f"u_pred{suffix}", f"u_exact{suffix}", f"abs_err{suffix}"]
        data = []
        for c in range(C):
            e = np.asarray(exact[c])[mask]
            data += [cols[c], e, np.abs(cols[c] - e)]
    else:
        header += names
        data = cols
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(X[mask], Y[mask], *data):
            fh.write(",".join(_g(v) for v in row) + "\n")


def write_metrics(path: Path, history):
    with open(path, "w") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=False) + "\n")


def write_spectrum(path: Path, spec: analysis.ErrorSpectrum):
    with open(path, "w") as fh:
        fh.write("freq_x,power\n" if spec.is_1d else "freq_x,freq_y,power\n")
        for row in spec.rows():
            fh.write(",".join(_g(v) for v in row) + "\n")


def write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def error_field(problem: ProblemDef, models, mask=None) -> np.ndarray:
    """Channel-0 error on the grid, zeroed outside the scoring mask."""
    X, Y = problem.grid.mesh()
    err = forward(models[0])[1] - problem.exact(X, Y)[0]
    if mask is not None:
        err = np.where(mask, err, 0.0)
    return err


class SpectrumLog:
    """Collects the error spectrum of every logged epoch."""

    def __init__(self, problem: ProblemDef, mask):
        self.problem = problem
        self.mask = mask
        self.entries = []

    def __call__(self, epoch, models, lam, bd):
        spec = analysis.error_spectrum(error_field(self.problem, models, self.mask), self.problem.grid)
        self.entries.append((epoch, spec))

    def write(self, bands_path: Path, full_path: Path | None = None):
        with open(bands_path, "w") as fh:
            fh.write("epoch,low,mid,high,total\n")
            for epoch, spec in self.entries:
                b = spec.band_powers()
                fh.write(f"{epoch},{_g(b['low'])},{_g(b['mid'])},{_g(b['high'])},{_g(spec.total)}\n")
        if full_path is not None:
            with open(full_path, "w") as fh:
                one = self.entries[0][1].is_1d if self.entries else True
                fh.write("epoch,freq_x,power\n" if one else "epoch,freq_x,freq_y,power\n")
                for epoch, spec in self.entries:
                    for row in spec.rows():
                        fh.write(f"{epoch}," + ",".join(_g(v) for v in row) + "\n")


# -- commands -------------------------------------------------------------------

def _prepare(cfg: RunConfig):
    problem = cfg.problem_def()
    tc = cfg.training_config(problem)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(out / "config.resolved.ini", cfg, problem, tc)
    return problem, tc, out


def _exact_fields(problem: ProblemDef):
    if problem.exact is None:
        return None
    X, Y = problem.grid.mesh()
    return problem.exact(X, Y)


def cmd_solve(cfg: RunConfig, full_spectrum_log: bool = False) -> dict:
    problem, tc, out = _prepare(cfg)
    mask = evaluation_mask(problem, problem.grid)
    spec_log = SpectrumLog(problem, mask) if problem.exact is not None else None
    result = train(problem, tc, callback=spec_log)
    fields_ = [forward(m)[1] for m in result.models]
    write_field_csv(out / "field.csv", problem, fields_, _exact_fields(problem), mask)
    write_metrics(out / "metrics.jsonl", result.history)
    save_checkpoint(out / "model.ckpt", result.models, result.lam)
    summary = {"problem": problem.name, "epochs": tc.epochs, **result.metrics,
               "final_loss": asdict(result.final)}
    if spec_log is not None:
        write_spectrum(out / "spectrum.csv", spec_log.entries[-1][1])
        spec_log.write(out / "spectrum_log.csv", out / "spectrum_epochs.csv" if full_spectrum_log else None)
    write_json(out / "summary.json", summary)
    return summary


def cmd_spectrum(cfg: RunConfig) -> dict:
    if cfg.checkpoint is None:
        return cmd_solve(cfg, full_spectrum_log=True)
    problem, tc, out = _prepare(cfg)
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} has no reference field to measure errors against")
    models, _ = load_checkpoint(cfg.checkpoint)
    mask = evaluation_mask(problem, problem.grid)
    spec = analysis.error_spectrum(error_field(problem, models, mask), problem.grid)
    write_spectrum(out / "spectrum.csv", spec)
    summary = {"problem": problem.name, "mse": spec.total, "bands": spec.band_powers()}
    write_json(out / "summary.json", summary)
    return summary


def _observation_kind(problem: ProblemDef) -> str:
    if problem.name == "denoise" and problem.params.get("physics") == "misspecified":
        return "explicit_function"
    return "aniso"


def _observations(cfg: RunConfig, problem: ProblemDef, out: Path):
    kind = _observation_kind(problem)
    obs = analysis.make_observations(kind, problem.grid, cfg.noise(),
                                     ratio=problem.params.get("ratio", 5.0))
    with open(out / "observations.csv", "w") as fh:
        fh.write("x,y,value\n")
        for row in zip(obs.x, obs.y, obs.values):
            fh.write(",".join(_g(v) for v in row) + "\n")
    return obs


def cmd_estimate(cfg: RunConfig) -> dict:
    problem, tc, out = _prepare(cfg)
    if not any(problem.lam_trainable):
        raise ValueError(f"problem {problem.name!r} has no trainable coefficients to estimate")
    obs = _observations(cfg, problem, out)
    res = analysis.estimate_parameters(obs, tc, problem)
    write_field_csv(out / "field.csv", problem, [res.field], _exact_fields(problem))
    write_metrics(out / "metrics.jsonl", res.history)
    save_checkpoint(out / "model.ckpt", res.models, res.lam)
    target = problem.true_lam[1] / problem.true_lam[0] if problem.true_lam else None
    report = {
        "lambda_ratio": res.lambda_ratio,
        "lambda": [float(v) for v in res.lam],
        "true_ratio": target,
        "relative_error": None if target is None else abs(res.lambda_ratio - target) / target,
        "provenance": obs.provenance,
        "n_observations": len(obs),
    }
    write_json(out / "report.json", report)
    return report


def cmd_denoise(cfg: RunConfig) -> dict:
    if cfg.problem_def().name != "denoise":
        raise ValueError("denoise runs the 'denoise' or 'denoise_misspec' problem")
    problem, tc, out = _prepare(cfg)
    obs = _observations(cfg, problem, out)
    res = analysis.denoise(obs, problem.params.get("physics", "known"), tc, problem)
    clean = analysis.observations_on_grid(
        analysis.ObservationSet(obs.x, obs.y, obs.clean, "synthetic-clean"), problem.grid)
    write_field_csv(out / "field.csv", problem, [res.field], clean[None])
    write_metrics(out / "metrics.jsonl", res.history)
    save_checkpoint(out / "model.ckpt", res.models, res.lam)
    report = {
        "physics": problem.params.get("physics"),
        "rmse": res.rmse,
        "noisy_rmse": res.noisy_rmse,
        "laplacian_energy": res.laplacian_energy,
        "noisy_laplacian_energy": res.noisy_laplacian_energy,
        "lambda": [float(v) for v in res.lam],
        "provenance": obs.provenance,
    }
    write_json(out / "report.json", report)
    return report


def cmd_grad_check(cfg: RunConfig) -> dict:
    problem, tc, out = _prepare(cfg)
    small = reduced_problem(problem)
    models = init_models(small, cfg.seed)
    report = grad_check(small, models, tc, tolerance=cfg.tolerance)
    result = {
        "problem": problem.name,
        "n_checked": len(report.entries),
        "max_rel_err": report.max_rel_err,
        "tolerance": cfg.tolerance,
        "passed": report.passed,
        "failures": [{"param": e.param, "index": list(e.index), "analytic": e.analytic,
                      "numeric": e.numeric, "rel_err": e.rel_err} for e in report.failures],
    }
    write_json(out / "gradcheck.json", result)
    return result


def run(command: str, cfg: RunConfig | None = None) -> int:
    """Execute a command; returns the process exit status."""
    if command == "list-problems":
        for name in problem_names():
            print(name)
        return 0
    handlers = {"solve": cmd_solve, "estimate": cmd_estimate, "denoise": cmd_denoise,
                "spectrum": cmd_spectrum, "grad-check": cmd_grad_check}
    result = handlers[command](cfg)
    print(json.dumps(result, indent=2))
    if command == "grad-check" and not result["passed"]:
        return 1
    return 0


# -- argument parsing -------------------------------------------------------------

def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="picn", description="Physics-informed convolutional network solver")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("list-problems", help="print the builtin problem names")
    for name in COMMANDS[:-1]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with [run], [problem], [training], [noise] sections")
        p.add_argument("--problem", dest="run.problem")
        p.add_argument("--out-dir", dest="run.out_dir")
        p.add_argument("--seed", dest="run.seed")
        if name == "grad-check":
            p.add_argument("--tolerance", dest="run.tolerance")
        if name == "spectrum":
            p.add_argument("--checkpoint", dest="run.checkpoint")
        for key in PARAM_TYPES:
            p.add_argument(_flag(key), dest=f"problem.{key}")
        p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                       help="problem parameter override")
        for key in TRAINING_TYPES:
            p.add_argument(_flag(key) if key not in ("k_R", "k_G") else "--" + key, dest=f"training.{key}")
        p.add_argument("--noise-std", dest="noise.std_dev")
        p.add_argument("--noise-seed", dest="noise.seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-problems":
            return run("list-problems")
        flags = {}
        for dest, value in vars(args).items():
            if "." in dest:
                section, key = dest.split(".", 1)
                flags[(section, key)] = value
        for item in args.param:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
            if key not in PARAM_TYPES:
                raise ConfigError(f"problem.{key}: unknown key")
            flags[("problem", key)] = value
        cfg = parse_config(args.command, args.config, flags)
        return run(args.command, cfg)
    except (ValueError, KeyError, OSError, FloatingPointError, configparser.Error) as exc:
        print(f"picn: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
