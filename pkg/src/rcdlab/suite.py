"""Configuration-driven sweeps over the checkers with deterministic reports."""

from __future__ import annotations

import csv
import difflib
import hashlib
import io
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import inequalities as ineq
from . import replay
from .errors import ParameterError, RcdLabError
from .inequalities import CheckReport, ToleranceModel
from .model import Model
from .operator import GridFunction
from .space import Curve, ModelSpec, build_model, preset_spec
from .transport import gaussian_density

THREADS_ENV = "RCDLAB_THREADS"
CSV_COLUMNS = ("check_id", "model", "N", "h", "t", "p", "eps", "K", "x", "y", "lambda",
               "lhs", "rhs", "slack", "tol", "pass", "note")


class ConfigError(RcdLabError):
    """Invalid configuration; maps to exit code 2."""

    exit_code = 2


# ---------------------------------------------------------------- check table

FUNCTIONS = ("exp", "x", "gauss", "one", "shifted_gaussian")


def _function(model: Model, name: str, lam: float | None) -> GridFunction:
    sp = model.space
    if name == "exp":
        return GridFunction.exponential(sp, 1.0 if lam is None else lam)
    if name == "x":
        return GridFunction.coordinate(sp)
    if name == "gauss":
        return GridFunction.from_callable(sp, lambda x: np.exp(-np.asarray(x) ** 2 / 4))
    if name == "one":
        return GridFunction.constant(sp)
    if name == "shifted_gaussian":
        # f^2 mu = N(lam, 1)
        rho = gaussian_density(sp, 0.0 if lam is None else lam, 1.0)
        return GridFunction(np.sqrt(rho.values))
    raise ParameterError(f"unknown function {name!r}")


def sharp_lambda(x: float, y: float, t: float, p: float) -> float:
    """Rate of the exponential attaining equality in the OU Harnack inequality."""
    return (x - y) * math.exp(t) / ((p - 1) * math.expm1(2 * t))


@dataclass(frozen=True)
class CheckSpec:
    runner: Callable[..., CheckReport]
    axes: dict[str, list]          # grid axes with defaults
    options: dict[str, Any]        # scalar options with defaults
    asserted: bool = True


def _pair_indices(model, pair):
    sp = model.space
    return sp.nearest_index(pair[0]), sp.nearest_index(pair[1])


def _resolve_lambda(lam, row, model):
    if lam == "sharp":
        x, y = row["pairs"]
        return sharp_lambda(x, y, row["t"], row["p"])
    return lam


def _run_harnack(model, row, opt, rng):
    i, j = _pair_indices(model, row["pairs"])
    lam = _resolve_lambda(row["lambda"], row, model)
    f = _function(model, opt["f"], lam)
    rep = ineq.harnack_check(model, f, row["p"], row["eps"], row["t"], i, j, K=row["K"],
                             oracle=opt["oracle"])
    rep.params["lam"] = lam
    return rep


def _run_log_harnack(model, row, opt, rng):
    i, j = _pair_indices(model, row["pairs"])
    f = _function(model, opt["f"], row["lambda"])
    rep = ineq.harnack_check(model, f, math.inf, row["eps"], row["t"], i, j, K=row["K"],
                             oracle=opt["oracle"])
    rep.params["lam"] = row["lambda"]
    return rep


def _run_gradient(order):
    def run(model, row, opt, rng):
        f = _function(model, row["f"], row["lambda"])
        rep = ineq.gradient_estimate_check(model, f, row["t"], order, K=row["K"])
        rep.note = f"f={row['f']}; worst point {rep.metadata['worst_point']}"
        return rep
    return run


def _run_w_contraction(model, row, opt, rng):
    i, j = _pair_indices(model, row["pairs"])
    return ineq.wasserstein_contraction_check(model, i, j, row["t"], opt["order"], K=row["K"])


def _run_entropy_cost(model, row, opt, rng):
    f = _function(model, opt["f"], row["lambda"])
    rep = ineq.entropy_cost_check(model, f, row["t"], K=row["K"])
    rep.params["lam"] = row["lambda"]
    return rep


def _run_kernel_lower_bound(model, row, opt, rng):
    i, j = _pair_indices(model, row["pairs"])
    return ineq.kernel_lower_bound_check(model, row["t"], i, j, K=row["K"], variant=row["variant"],
                                         oracle=opt["oracle"], asserted=opt["assert"])


def _run_lsi(model, row, opt, rng):
    seed = int(rng.integers(2**31))
    res = ineq.lsi_estimate(model, trials=row["trials"], seed=seed, target=opt["target"])
    rep = res.report
    if opt["lower"] is not None:
        # two-sided: C_lower must also reach the lower end
        rep.note = f"C_lower={res.C_lower:.17g}; required >= {opt['lower']:g}"
        if res.C_lower < opt["lower"]:
            rep.lhs = rep.rhs + rep.tolerance + (opt["lower"] - res.C_lower)
    return rep


def _run_gaussian_moment(model, row, opt, rng):
    o = model.space.nearest_index(opt["o"])
    rep = ineq.gaussian_moment_check(model, row["lambda"], o)
    return rep


def _run_cd(model, row, opt, rng):
    sp = model.space
    r0 = gaussian_density(sp, opt["m0"], 1.0)
    r1 = gaussian_density(sp, opt["m1"], 1.0)
    return ineq.cd_convexity_check(model, r0, r1, K=row["K"], steps=opt["steps"])


def _replay_ctx(model, row, opt):
    i, j = _pair_indices(model, row["pairs"])
    lam = _resolve_lambda(row["lambda"], row, model)
    if opt["f"] == "exp":
        f = GridFunction.exponential(model.space, lam)
    else:
        f = GridFunction(np.asarray(opt["f"], dtype=float))
    return replay.ReplayContext(model, f, row["p"], row["t"], Curve(model.space, i, j),
                                eps=row["eps"], K=row["K"], oracle=opt["oracle"])


def _run_replay_derivative(model, row, opt, rng):
    return replay.derivative_bound_replay(_replay_ctx(model, row, opt), samples=opt["samples"])


def _run_replay_integrated(model, row, opt, rng):
    return replay.fundamental_theorem_check(_replay_ctx(model, row, opt))


def _run_replay_partial(model, row, opt, rng):
    ctx = _replay_ctx(model, row, opt)
    return replay.partial_s_check(ctx, row["r"] * ctx.t, row["s"] * ctx.t)


def _run_be(model, row, opt, rng):
    return ineq.be_constant_check(model, opt["lo"], opt["hi"])


def _run_hyper(model, row, opt, rng):
    return ineq.hypercontractivity_check(model, row["t"], opt["p"], opt["q"])


def _run_mass(model, row, opt, rng):
    f = _function(model, opt["f"], row["lambda"])
    return ineq.mass_preservation_check(model, row["t"], f)


def _run_ultra(model, row, opt, rng):
    return ineq.ultracontractive_identity_check(model, row["t"])


_PAIR = [[-1.0, 1.0]]
CHECKS: dict[str, CheckSpec] = {
    "harnack": CheckSpec(_run_harnack,
                         dict(t=[1.0], p=[2.0], eps=[0.0], K=[None], pairs=_PAIR, **{"lambda": [1.0]}),
                         dict(f="exp", oracle=False)),
    "log_harnack": CheckSpec(_run_log_harnack,
                             dict(t=[1.0], eps=[0.0], K=[None], pairs=_PAIR, **{"lambda": [1.0]}),
                             dict(f="exp", oracle=False)),
    "gradient_l1": CheckSpec(_run_gradient(1), dict(t=[0.5], K=[None], f=["x"], **{"lambda": [1.0]}), {}),
    "gradient_l2": CheckSpec(_run_gradient(2), dict(t=[0.5], K=[None], f=["x"], **{"lambda": [1.0]}), {}),
    "w_contraction": CheckSpec(_run_w_contraction, dict(t=[0.5], K=[None], pairs=_PAIR), dict(order=2)),
    "entropy_cost": CheckSpec(_run_entropy_cost, dict(t=[0.5], K=[None], **{"lambda": [1.0]}),
                              dict(f="shifted_gaussian")),
    "kernel_lower_bound": CheckSpec(_run_kernel_lower_bound,
                                    dict(t=[1.0], K=[None], pairs=[[0.0, 1.0]],
                                         variant=["as_printed", "doubled_exponent"]),
                                    dict(oracle=False, **{"assert": False}), asserted=False),
    "lsi": CheckSpec(_run_lsi, dict(trials=[64]), dict(target=None, lower=None)),
    "gaussian_moment": CheckSpec(_run_gaussian_moment, {"lambda": [0.4]}, dict(o=0.0)),
    "cd_convexity": CheckSpec(_run_cd, dict(K=[None]), dict(m0=-1.0, m1=1.0, steps=11)),
    "replay_derivative": CheckSpec(_run_replay_derivative,
                                   dict(t=[1.0], p=[2.0], eps=[replay.DEFAULT_EPS], K=[None],
                                        pairs=_PAIR, **{"lambda": [1.0]}),
                                   dict(f="exp", oracle=False, samples=9)),
    "replay_integrated": CheckSpec(_run_replay_integrated,
                                   dict(t=[1.0], p=[2.0], eps=[replay.DEFAULT_EPS], K=[None],
                                        pairs=_PAIR, **{"lambda": [1.0]}),
                                   dict(f="exp", oracle=False)),
    "replay_partial": CheckSpec(_run_replay_partial,
                                dict(t=[1.0], p=[2.0], eps=[0.1], K=[None], pairs=_PAIR,
                                     r=[0.3], s=[0.5], **{"lambda": [1.0]}),
                                dict(f="exp", oracle=False)),
    "be_constant": CheckSpec(_run_be, {}, dict(lo=-math.inf, hi=math.inf)),
    "hypercontractivity": CheckSpec(_run_hyper, dict(t=[0.3]), dict(p=2.0, q=4.0)),
    "mass_preservation": CheckSpec(_run_mass, dict(t=[0.5], **{"lambda": [1.0]}), dict(f="one")),
    "ultracontractive_identity": CheckSpec(_run_ultra, dict(t=[0.5]), {}),
}


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class CheckDescriptor:
    check_id: str
    model: Any
    grid: dict[str, list]
    options: dict[str, Any]


@dataclass(frozen=True)
class SweepConfig:
    model: Any
    checks: tuple[CheckDescriptor, ...]
    tolerances: dict[str, ToleranceModel] = field(default_factory=dict)
    output_path: str | None = None
    output_format: str = "csv"
    threads: int | None = None
    seed: int = 0
    source: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        """Digest of everything that affects report content."""
        body = {k: v for k, v in self.source.items() if k not in ("output", "threads")}
        body["seed"] = self.seed
        text = json.dumps(body, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def row_count(self) -> int:
        return sum(math.prod(len(v) for v in c.grid.values()) for c in self.checks)


TOP_KEYS = ("model", "checks", "tolerances", "output", "threads", "seed")
CHECK_META_KEYS = ("id", "model")


def _unknown(key, allowed, path):
    close = difflib.get_close_matches(str(key), [str(a) for a in allowed], n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return ConfigError(f"unknown key {key!r} at {path}{hint}")


def _validate_model(model, path):
    if isinstance(model, str):
        try:
            preset_spec(model)
        except ParameterError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return model
    if isinstance(model, dict):
        try:
            # the space alone is cheap; operators are built when the suite runs
            build_model(ModelSpec.from_mapping(model))
        except (RcdLabError, ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return model
    raise ConfigError(f"{path}: model must be a preset name or a mapping")


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def parse_config(text: str) -> SweepConfig:
    """Parse and validate a JSON sweep configuration.

    Syntax errors report line and column, semantic errors the key path; both
    raise :class:`ConfigError`.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_mapping(data)


def config_from_mapping(data: dict) -> SweepConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be an object")
    for k in data:
        if k not in TOP_KEYS:
            raise _unknown(k, TOP_KEYS, "top level")
    if "checks" not in data:
        raise ConfigError("missing key 'checks'")
    default_model = _validate_model(data["model"], "model") if "model" in data else None
    raw_checks = data["checks"]
    if not isinstance(raw_checks, list) or not raw_checks:
        raise ConfigError("checks: need a nonempty list")
    checks = []
    for n, c in enumerate(raw_checks):
        path = f"checks[{n}]"
        if not isinstance(c, dict) or "id" not in c:
            raise ConfigError(f"{path}: each check needs an 'id'")
        cid = c["id"]
        if cid not in CHECKS:
            raise _unknown(cid, CHECKS, f"{path}.id")
        spec = CHECKS[cid]
        allowed = (*CHECK_META_KEYS, *spec.axes, *spec.options)
        grid = {k: list(v) for k, v in spec.axes.items()}
        options = dict(spec.options)
        for k, v in c.items():
            if k in CHECK_META_KEYS:
                continue
            if k in spec.axes:
                vals = _as_list(v)
                if not vals:
                    raise ConfigError(f"{path}.{k}: empty grid")
                grid[k] = vals
            elif k in spec.options:
                options[k] = v
            else:
                raise _unknown(k, allowed, path)
        if "pairs" in grid:
            for m, pr in enumerate(grid["pairs"]):
                if not (isinstance(pr, (list, tuple)) and len(pr) == 2):
                    raise ConfigError(f"{path}.pairs[{m}]: need a pair [x, y]")
        model = _validate_model(c["model"], f"{path}.model") if "model" in c else default_model
        if model is None:
            raise ConfigError(f"{path}: no model given and no top-level model")
        checks.append(CheckDescriptor(cid, model, grid, options))
    tolerances = {}
    for cid, tol in (data.get("tolerances") or {}).items():
        if cid not in CHECKS:
            raise _unknown(cid, CHECKS, "tolerances")
        if not isinstance(tol, dict):
            raise ConfigError(f"tolerances.{cid}: need a mapping")
        for k in tol:
            if k not in ("a", "c", "r"):
                raise _unknown(k, ("a", "c", "r"), f"tolerances.{cid}")
        tm = ToleranceModel(**tol)
        if not tm.a > 0:
            raise ConfigError(f"tolerances.{cid}.a: must be positive")
        tolerances[cid] = tm
    output = data.get("output") or {}
    for k in output:
        if k not in ("path", "format"):
            raise _unknown(k, ("path", "format"), "output")
    fmt = output.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"output.format: expected 'csv' or 'json', got {fmt!r}")
    threads = data.get("threads")
    if threads is not None and (not isinstance(threads, int) or threads < 1):
        raise ConfigError("threads: need a positive integer")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: need a nonnegative integer")
    return SweepConfig(default_model, tuple(checks), tolerances, output.get("path"), fmt,
                       threads, seed, source=data)


# ---------------------------------------------------------------- presets

def _acceptance_battery() -> dict:
    oracle_harnack = dict(id="harnack", model="ou", oracle=True, eps=[0.0],
                          t=[0.25, 0.5, 1.0, 2.0], p=[1.5, 2.0, 4.0], K=[1.0],
                          pairs=[[-1.0, 1.0], [0.0, 1.0], [-2.0, 2.0]],
                          **{"lambda": ["sharp", -2.0, -1.0, 0.0, 1.0, 2.0]})
    return {
        "model": "ou401",
        "seed": 0,
        "checks": [
            oracle_harnack,
            dict(id="harnack", t=[0.5], p=[2.0], pairs=[[-1.0, 1.0]], **{"lambda": [1.0]}),
            dict(id="log_harnack", model="ou", oracle=True, K=[1.0], t=[0.5, 1.0],
                 pairs=[[0.0, 1.0]], **{"lambda": [-1.0, 1.0]}),
            dict(id="gradient_l1", t=[0.1, 0.5, 1.0], f=["x", "exp", "gauss"]),
            dict(id="gradient_l2", t=[0.1, 0.5, 1.0], f=["x", "exp", "gauss"]),
            dict(id="gradient_l2", model="two-point", K=[2.0], t=[0.3], f=["x"]),
            dict(id="be_constant", model="two-point", lo=2.0, hi=2.0),
            dict(id="be_constant", lo=0.95, hi=1.05),
            dict(id="be_constant", model="circle", lo=-0.02, hi=0.02),
            dict(id="w_contraction", K=[1.0], t=[0.25, 0.5, 1.0]),
            dict(id="w_contraction", model="circle", K=[0.0], t=[1.0],
                 pairs=[[0.0, math.pi]]),
            dict(id="entropy_cost", K=[1.0], t=[0.5, 2.0]),
            dict(id="kernel_lower_bound", model="ou", oracle=True, K=[1.0], t=[1.0],
                 pairs=[[0.0, 1.0], [0.0, 0.0]]),
            dict(id="kernel_lower_bound", model="two-point", t=[1.0], pairs=[[0.0, 1.0]]),
            dict(id="lsi", trials=[64], target=2.0, lower=1.95),
            dict(id="gaussian_moment", model={"kind": "ou", "N": 401, "domain": [-8.0, 8.0],
                                              "name": "ou-wide"},
                 **{"lambda": [0.0, 0.4, 0.6]}),
            dict(id="cd_convexity", K=[1.0]),
            dict(id="replay_partial", model="two-point", f=[0.0, 1.0], K=[2.0], p=[2.0],
                 eps=[0.5], t=[1.0], pairs=[[0.0, 1.0]], r=[0.0],
                 s=[k / 10 for k in range(1, 10)]),
            dict(id="replay_partial", p=[2.0], eps=[0.1], t=[1.0],
                 s=[k / 10 for k in range(1, 10)]),
            dict(id="replay_derivative", t=[0.5, 1.0], p=[2.0, 4.0]),
            dict(id="replay_derivative", model="ou", oracle=True, K=[1.0], eps=[0.0],
                 t=[1.0], p=[2.0], pairs=[[0.0, 1.0]], **{"lambda": ["sharp"]}),
            dict(id="replay_integrated", t=[0.5, 1.0], p=[2.0, 4.0]),
            dict(id="hypercontractivity", t=[0.3, 0.56]),
            dict(id="mass_preservation", t=[1e-3, 0.5, 2.0], f="exp"),
            dict(id="mass_preservation", model="circle", t=[0.5], f="x"),
            dict(id="mass_preservation", model="two-point", t=[0.5], f="x"),
            dict(id="ultracontractive_identity", t=[0.5, 1.0]),
            dict(id="ultracontractive_identity", model="circle", t=[0.5, 1.0]),
            dict(id="ultracontractive_identity", model="two-point", t=[0.5, 1.0]),
        ],
    }


def _negative_controls() -> dict:
    # every row inflates the curvature well beyond the model's true value
    return {
        "model": "ou401",
        "seed": 0,
        "checks": [
            dict(id="cd_convexity", K=[3.0]),
            dict(id="harnack", model="ou", oracle=True, K=[3.0], eps=[0.0], t=[1.0], p=[2.0],
                 pairs=[[0.0, 1.0]], **{"lambda": ["sharp"]}),
            dict(id="w_contraction", K=[2.0], t=[0.5]),
            dict(id="gradient_l1", K=[3.0], t=[0.5], f=["x"]),
            dict(id="entropy_cost", K=[5.0], t=[0.5]),
        ],
    }


PRESETS: dict[str, tuple[str, Callable[[], dict]]] = {
    "paper-suite": ("full acceptance battery on the reference models", _acceptance_battery),
    "negative-controls": ("inflated-curvature controls; must fail (exit 1)", _negative_controls),
}


def preset_config(name: str) -> SweepConfig:
    try:
        _, make = PRESETS[name]
    except KeyError:
        close = difflib.get_close_matches(name, PRESETS, n=1)
        hint = f"; did you mean {close[0]!r}?" if close else ""
        raise ConfigError(f"unknown preset {name!r}{hint}") from None
    return config_from_mapping(make())


# ---------------------------------------------------------------- running

@dataclass
class ReportRow:
    check_id: str
    model: str
    report: CheckReport | None
    params: dict
    asserted: bool
    error: str = ""
    config_hash: str = ""

    @property
    def status(self) -> str:
        if self.error:
            return "false"
        if not self.asserted or self.report.passed is None:
            return "n/a"
        return "true" if self.report.passed else "false"

    @property
    def failed(self) -> bool:
        return self.status == "false"


def _model_key(model):
    return json.dumps(model, sort_keys=True) if isinstance(model, dict) else model


def _build(model):
    spec = preset_spec(model) if isinstance(model, str) else model
    return Model.build(spec)


def _expand(cfg: SweepConfig):
    tasks = []
    for desc in cfg.checks:
        names = list(desc.grid)
        for combo in itertools.product(*(desc.grid[k] for k in names)):
            tasks.append((desc, dict(zip(names, combo))))
    return tasks


def _sort_value(v):
    if v is None:
        return (0, 0.0, "")
    if isinstance(v, (int, float)):
        return (1, float(v), "")
    if isinstance(v, (list, tuple)):
        return (2, 0.0, json.dumps(v))
    return (3, 0.0, str(v))


def _row_key(row: ReportRow):
    return (row.check_id, row.model,
            tuple((k, _sort_value(v)) for k, v in sorted(row.params.items())))


def default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n >= 1:
            return n
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    return 1


def run_suite(cfg: SweepConfig, threads: int | None = None,
              models: dict | None = None) -> list[ReportRow]:
    """Evaluate every grid point and return rows in deterministic order.

    ``models`` may carry prebuilt models keyed by preset name (or canonical
    JSON of a mapping); built models are added to it.
    """
    threads = threads or cfg.threads or default_threads()
    tasks = _expand(cfg)
    models = {} if models is None else models
    build_errors: dict[str, str] = {}
    for desc, _ in tasks:
        key = _model_key(desc.model)
        if key in models or key in build_errors:
            continue
        try:
            m = _build(desc.model)
            m.be  # warm the shared cache before threads start
            models[key] = m
        except RcdLabError as exc:
            build_errors[key] = f"{type(exc).__name__}: {exc}"
    chash = cfg.hash

    def work(idx):
        desc, row = tasks[idx]
        spec = CHECKS[desc.check_id]
        key = _model_key(desc.model)
        label = desc.model if isinstance(desc.model, str) else desc.model.get("name") or key
        asserted = spec.asserted or bool(desc.options.get("assert", False))
        if key in build_errors:
            return ReportRow(desc.check_id, label, None, row, asserted, build_errors[key], chash)
        model = models[key]
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, idx]))
        try:
            rep = spec.runner(model, dict(row), desc.options, rng)
        except Exception as exc:  # noqa: BLE001 - any checker failure marks the row
            return ReportRow(desc.check_id, model.label, None, row, asserted,
                             f"{type(exc).__name__}: {exc}", chash)
        tol = cfg.tolerances.get(desc.check_id)
        if tol is not None:
            sp = model.space
            rep.tolerance = tol.resolve(sp.h, sp.truncation_deficit) + rep.metadata.get("residual", 0.0)
        return ReportRow(desc.check_id, model.label, rep, row, asserted and rep.asserted, "", chash)

    if threads == 1:
        rows = [work(i) for i in range(len(tasks))]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, range(len(tasks))))
    rows.sort(key=_row_key)
    return rows


def summarize(rows: list[ReportRow]) -> tuple[str, int]:
    n_pass = sum(r.status == "true" for r in rows)
    n_fail = sum(r.status == "false" and not r.error for r in rows)
    n_err = sum(bool(r.error) for r in rows)
    n_na = sum(r.status == "n/a" for r in rows)
    line = f"{len(rows)} rows: {n_pass} passed, {n_fail} failed, {n_err} errored, {n_na} report-only"
    return line, 1 if (n_fail or n_err) else 0


# ---------------------------------------------------------------- output

def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def _flat(row: ReportRow) -> dict:
    rep = row.report
    params = dict(rep.params) if rep is not None else {}
    raw = row.params
    meta = rep.metadata if rep is not None else {}
    pair = raw.get("pairs")
    lam = params.get("lam", raw.get("lambda"))
    note = f"cfg={row.config_hash}"
    extra = row.error or (rep.note if rep is not None else "")
    if extra:
        note += "; " + extra
    return {
        "check_id": row.check_id,
        "model": row.model,
        "N": meta.get("N"),
        "h": meta.get("h"),
        "t": params.get("t", raw.get("t")),
        "p": params.get("p", raw.get("p")),
        "eps": params.get("eps", raw.get("eps")),
        "K": params.get("K", raw.get("K")),
        "x": params.get("x", pair[0] if pair else None),
        "y": params.get("y", pair[1] if pair else None),
        "lambda": lam if not isinstance(lam, str) else None,
        "lhs": rep.lhs if rep is not None else None,
        "rhs": rep.rhs if rep is not None else None,
        "slack": rep.slack if rep is not None else None,
        "tol": rep.tolerance if rep is not None else None,
        "pass": row.status,
        "note": note,
    }


def _json_value(v):
    if v is None or isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    x = float(f"{float(v):.17g}")
    return x if math.isfinite(x) else str(x)


def format_rows(rows: list[ReportRow], fmt: str = "csv", config_hash: str = "") -> str:
    if not rows:
        raise ParameterError("no rows to report")
    flat = [_flat(r) for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for f in flat:
            w.writerow([_num(f[c]) if c not in ("check_id", "model", "pass", "note") else f[c]
                        for c in CSV_COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        out = {"config_hash": config_hash or rows[0].config_hash,
               "columns": list(CSV_COLUMNS),
               "rows": [{c: _json_value(f[c]) for c in CSV_COLUMNS} for f in flat]}
        return json.dumps(out, indent=1) + "\n"
    raise ParameterError(f"unknown format {fmt!r}")


def emit_report(rows: list[ReportRow], fmt: str = "csv", path: str | None = None) -> str:
    """Serialize rows; write to ``path`` when given. Unwritable paths raise ConfigError."""
    text = format_rows(rows, fmt)
    if path is not None:
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise ConfigError(f"cannot write report to {path!r}: {exc}") from None
    return text
