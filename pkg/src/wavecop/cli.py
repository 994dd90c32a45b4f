"""Experiment runner: ``wavecop {simulate,fit,benchmark,gradcheck}``.

Configuration is a JSON object; omitted keys take defaults and unknown keys
are rejected. All randomness derives from the master ``seed``: child seeds
are spawned with :class:`numpy.random.SeedSequence`, child 0 fixing the true
coefficients and child ``r + 1`` driving replication ``r``.

Exit codes: 0 success, 1 user error (bad config, unreadable input,
unwritable output), 2 numerical failure. Failures print one JSON line to
stderr, e.g. ``{"error": "ConfigError", "exit_code": 1, "message": "..."}``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import copula as cop
from . import elbo as E
from . import family as fam
from . import marginal as mg
from . import mcmc
from . import models as M
from .errors import (
    ConfigError,
    DegenerateDensityError,
    DomainError,
    FitError,
    InitializationError,
    InvalidInputError,
    NonFiniteError,
    SupportError,
)
from .wavelet import make_filter

MODELS = ("logistic", "ard", "hier")

SCENARIO_DEFAULTS = {
    "logistic": {"p": 5, "n": 1000},
    "ard": {"p": 50, "n": 200, "r": 0.5, "sigma": 1.0, "test_fraction": 0.1},
    "hier": {"n_ind": 30, "n_rep": 10, "rho": 0.7, "sigma2": 0.25},
}
_FIT_KEYS = [f.name for f in dataclasses.fields(E.FitConfig) if f.name not in ("seed", "variant")]
FIT_DEFAULTS = {k: getattr(E.FitConfig(), k) for k in _FIT_KEYS}
FIT_DEFAULTS["betas"] = list(FIT_DEFAULTS["betas"])
MCMC_DEFAULTS = {"iterations": 210000, "burn_in": 10000}
GRADCHECK_DEFAULTS = {"points": 10, "samples": 16, "h": 1e-5, "tolerance": 1e-4}


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    model: str = "logistic"
    scenario: dict = dataclasses.field(default_factory=dict)
    variant: str = "independence"
    fit: dict = dataclasses.field(default_factory=dict)
    mcmc: dict = dataclasses.field(default_factory=dict)
    replications: int = 1
    workers: int = 1
    seed: int = 0
    out: str = "results"
    data: str | None = None
    timing: bool = False
    report_draws: int = 20000
    gradcheck: dict = dataclasses.field(default_factory=dict)

    def fit_config(self, seed: int) -> E.FitConfig:
        kw = dict(self.fit)
        kw["betas"] = tuple(kw["betas"])
        if kw["box"] is not None:
            kw["box"] = tuple(tuple(b) for b in kw["box"])
        return E.FitConfig(seed=seed, variant=self.variant, **kw)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _merge(section: str, given, defaults: dict) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{section} must be an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")
    out = dict(defaults)
    out.update(given)
    return out


def _check_scenario(model, sc):
    for k, v in sc.items():
        want_int = _is_int(SCENARIO_DEFAULTS[model][k])
        if (want_int and not _is_int(v)) or (not want_int and not _is_num(v)):
            raise ConfigError(f"scenario.{k} must be {'an integer' if want_int else 'a number'}")
    for k in ("p", "n", "n_ind", "n_rep"):
        if k in sc and sc[k] < 1:
            raise ConfigError(f"scenario.{k} must be positive")
    if model == "logistic" and sc["n"] < sc["p"]:
        raise ConfigError("logistic scenario needs n >= p")
    if model == "ard" and not (0 <= sc["r"] < 1 and 0 <= sc["test_fraction"] < 1 and sc["sigma"] > 0):
        raise ConfigError("ard scenario needs 0 <= r < 1, 0 <= test_fraction < 1, sigma > 0")
    if model == "hier" and not (-1 < sc["rho"] < 1 and sc["sigma2"] > 0):
        raise ConfigError("hier scenario needs -1 < rho < 1 and sigma2 > 0")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate ``raw`` and fill defaults; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - fields)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    base = ExperimentConfig()
    model = raw.get("model", base.model)
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}; expected one of {', '.join(MODELS)}")
    variant = raw.get("variant", base.variant)
    if variant not in [v.value for v in cop.Variant]:
        raise ConfigError(f"unknown copula variant {variant!r}")
    scenario = _merge("scenario", raw.get("scenario"), SCENARIO_DEFAULTS[model])
    _check_scenario(model, scenario)
    fit = _merge("fit", raw.get("fit"), FIT_DEFAULTS)
    mc = _merge("mcmc", raw.get("mcmc"), MCMC_DEFAULTS)
    gc = _merge("gradcheck", raw.get("gradcheck"), GRADCHECK_DEFAULTS)
    cfg = ExperimentConfig(
        model=model,
        scenario=scenario,
        variant=variant,
        fit=fit,
        mcmc=mc,
        replications=raw.get("replications", base.replications),
        workers=raw.get("workers", base.workers),
        seed=raw.get("seed", base.seed),
        out=raw.get("out", base.out),
        data=raw.get("data", base.data),
        timing=raw.get("timing", base.timing),
        report_draws=raw.get("report_draws", base.report_draws),
        gradcheck=gc,
    )
    for k in ("replications", "workers", "report_draws"):
        if not _is_int(getattr(cfg, k)) or getattr(cfg, k) < 1:
            raise ConfigError(f"{k} must be a positive integer")
    if not _is_int(cfg.seed) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(cfg.out, str) or not (cfg.data is None or isinstance(cfg.data, str)):
        raise ConfigError("out and data must be strings")
    if not isinstance(cfg.timing, bool):
        raise ConfigError("timing must be true or false")
    if not (_is_int(mc["iterations"]) and _is_int(mc["burn_in"]) and mc["iterations"] > mc["burn_in"] >= 0):
        raise ConfigError("mcmc needs integer iterations > burn_in >= 0")
    if not (_is_int(gc["points"]) and _is_int(gc["samples"]) and gc["points"] >= 1 and gc["samples"] >= 1
            and gc["h"] > 0 and gc["tolerance"] > 0):
        raise ConfigError("gradcheck needs positive points, samples, h and tolerance")
    if not (isinstance(fit["betas"], list) and len(fit["betas"]) == 2):
        raise ConfigError("fit.betas must be a list of two numbers")
    if fit["box"] is not None:
        box = fit["box"]
        if not (isinstance(box, list) and all(isinstance(b, list) and len(b) == 2 for b in box)):
            raise ConfigError("fit.box must be a list of [lower, upper] pairs")
    try:
        cfg.fit_config(0)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid fit section: {exc}") from None
    return cfg


def render(cfg: ExperimentConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True) + "\n"


def parse(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from None
    return config_from_dict(raw)


# -- shared helpers -------------------------------------------------------------

def _seeds(cfg: ExperimentConfig):
    """``(truth_seed, [replication seeds])`` spawned from the master seed."""
    s = M.replication_seeds(cfg.seed, cfg.replications + 1)
    return s[0], s[1:]


def _truth_beta(cfg):
    sc = cfg.scenario
    truth_seed, _ = _seeds(cfg)
    if cfg.model == "logistic":
        return M.draw_beta(sc["p"], truth_seed)
    if cfg.model == "ard":
        return M.draw_beta(sc["p"], truth_seed, sc["r"])
    return None


def _simulate(cfg, seed, beta):
    sc = cfg.scenario
    if cfg.model == "logistic":
        return M.simulate_logistic(sc["p"], sc["n"], seed, beta=beta)
    if cfg.model == "ard":
        return M.simulate_ard(sc["p"], sc["n"], sc["r"], seed, sc["sigma"], sc["test_fraction"], beta=beta)
    return M.simulate_hier(sc["n_ind"], sc["n_rep"], sc["rho"], seed, sc["sigma2"])


def _model_spec(cfg, data) -> E.ModelSpec:
    return {"logistic": M.logistic_model, "ard": M.ard_model, "hier": M.hier_model}[cfg.model](data)


def _truth_table(cfg, data):
    """Names and true values of the reported parameters."""
    if cfg.model == "hier":
        return list(M.HIER_REPORTED), [float(data.truth[k]) for k in M.HIER_REPORTED]
    beta = np.asarray(data.beta, dtype=float)
    return [f"beta{i}" for i in range(beta.size)], list(beta)


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise PermissionError(f"output directory {out} is not writable: {exc}") from None
    return out


def _say(args, msg):
    if not args.quiet:
        print(msg)


# -- commands -----------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    """Write one data file (and truth table) per replication."""
    out = _out_dir(cfg)
    beta = _truth_beta(cfg)
    _, seeds = _seeds(cfg)
    for r, seed in enumerate(seeds):
        data = _simulate(cfg, seed, beta)
        M.write_data(out / f"data_{r:03d}.csv", data)
        if isinstance(data, M.ArdData) and data.X_test is not None:
            M.write_data(out / f"test_{r:03d}.csv", M.ArdData(data.X_test, data.y_test))
        names, truth = _truth_table(cfg, data)
        M.write_table(out / f"truth_{r:03d}.csv", ["parameter", "value"], zip(names, map(float, truth)))
    _say(args, f"wrote {len(seeds)} dataset(s) to {out}")
    return 0


def cmd_fit(cfg: ExperimentConfig, args) -> int:
    """Fit the variational family; write checkpoint, summary and ELBO trace."""
    out = _out_dir(cfg)
    _, seeds = _seeds(cfg)
    data_seed, vi_seed = M.replication_seeds(seeds[0], 2)
    if cfg.data is not None:
        try:
            data = M.read_data(cfg.data, cfg.model)
        except (OSError, ValueError) as exc:
            raise InvalidInputError(f"cannot read data file {cfg.data}: {exc}") from None
    else:
        data = _simulate(cfg, data_seed, _truth_beta(cfg))
    model = _model_spec(cfg, data)
    res = E.fit(model, cfg.fit_config(vi_seed))
    fam.save_checkpoint(out / "checkpoint.txt", res.zeta)
    s = res.summaries
    M.write_table(out / "summary.csv", ["parameter", "mean", "sd", "q025", "q50", "q975"],
                  ([name, *(float(s[k][j]) for k in ("mean", "sd", "q025", "q50", "q975"))]
                   for j, name in enumerate(model.param_names)))
    wall = res.wall_ms if cfg.timing else np.zeros_like(res.wall_ms)
    M.write_table(out / "trace.csv", ["iteration", "elbo", "wall_ms"],
                  ([t + 1, float(v), float(w)] for t, (v, w) in enumerate(zip(res.elbo_trace, wall))))
    _say(args, f"fit {model.name} (d={model.d}, {cfg.variant}): final ELBO {res.elbo_trace[-1]:.4f}; "
               f"outputs in {out}")
    return 0


def _vi_reported(cfg, model, res, seed):
    """VI means and sds of the reported parameters."""
    if cfg.model != "hier":
        k = len(_truth_beta(cfg))
        return res.summaries["mean"][:k], res.summaries["sd"][:k]
    rng = np.random.default_rng(seed)
    noise = fam.draw_base_noise(rng, cfg.report_draws, model.d, cfg.variant)
    draws = M.hier_report(fam.sample_joint(res.zeta, noise), cfg.scenario["n_ind"])
    return draws.mean(axis=0), draws.std(axis=0, ddof=1)


def _mcmc_reported(cfg, chain):
    if cfg.model != "hier":
        k = len(_truth_beta(cfg))
        draws = chain.draws[:, :k]
    else:
        draws = M.hier_report(chain.draws, cfg.scenario["n_ind"])
    return draws.mean(axis=0), draws.std(axis=0, ddof=1)


def _benchmark_replication(job):
    """Worker: simulate, fit VI and the sampler, write ``rep_XXX.csv``."""
    cfg, r, seed, out = job
    data_seed, vi_seed, mc_seed, report_seed = M.replication_seeds(seed, 4)
    data = _simulate(cfg, data_seed, _truth_beta(cfg))
    model = _model_spec(cfg, data)
    res = E.fit(model, cfg.fit_config(vi_seed))
    chain = mcmc.run_rwm(model, cfg.mcmc["iterations"], cfg.mcmc["burn_in"], mc_seed)
    names, truth = _truth_table(cfg, data)
    vm, vs = _vi_reported(cfg, model, res, report_seed)
    mm, ms = _mcmc_reported(cfg, chain)
    rows = [[n, float(t), float(a), float(b), float(c), float(d)] for n, t, a, b, c, d in
            zip(names, truth, vm, vs, mm, ms)]
    M.write_table(Path(out) / f"rep_{r:03d}.csv", ["parameter", "truth", "vi_mean", "vi_sd", "mcmc_mean", "mcmc_sd"],
                  rows)
    if cfg.model == "ard":
        p = data.X.shape[1]
        alpha_hat = mg.expect(fam.densities(res.zeta).detached(), np.exp)[p:2 * p]
        tp, fp, fn, tn = M.confusion_counts(M.select_variables(alpha_hat), data.relevant)
        extra = [r, tp, fp, fn, tn, float((tp + tn) / p)]
        if data.X_test is not None:
            extra += [M.predictive_mae(res.summaries["mean"][:p], data.X_test, data.y_test),
                      M.predictive_mae(chain.draws[:, :p].mean(axis=0), data.X_test, data.y_test)]
        else:
            extra += [float("nan"), float("nan")]
        M.write_table(Path(out) / f"selection_{r:03d}.csv",
                      ["replication", "tp", "fp", "fn", "tn", "accuracy", "vi_pred_mae", "mcmc_pred_mae"], [extra])
    return r


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def cmd_benchmark(cfg: ExperimentConfig, args) -> int:
    """Compare VI with the random-walk Metropolis reference over replications."""
    out = _out_dir(cfg)
    _, seeds = _seeds(cfg)
    jobs = [(cfg, r, s, str(out)) for r, s in enumerate(seeds)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(_benchmark_replication, jobs))
    else:
        for job in jobs:
            _benchmark_replication(job)
    # merge in replication order
    per_rep = []
    for r in range(len(seeds)):
        _, rows = _read_rows(out / f"rep_{r:03d}.csv")
        per_rep.append(rows)
    names = [row[0] for row in per_rep[0]]
    vals = np.array([[[float(v) for v in row[1:]] for row in rows] for rows in per_rep])  # (R, k, 5)
    truth, vi_mean, vi_sd, mc_mean, mc_sd = (vals[:, :, i] for i in range(5))
    merged = zip(names, truth[0], vi_mean.mean(0), vi_sd.mean(0), M.coef_mae(vi_mean, truth),
                 mc_mean.mean(0), mc_sd.mean(0), M.coef_mae(mc_mean, truth))
    M.write_table(out / "benchmark.csv",
                  ["parameter", "truth", "vi_mean", "vi_sd", "vi_mae", "mcmc_mean", "mcmc_sd", "mcmc_mae"],
                  ([n, *map(float, rest)] for n, *rest in merged))
    if cfg.model == "ard":
        header, rows = None, []
        for r in range(len(seeds)):
            header, body = _read_rows(out / f"selection_{r:03d}.csv")
            rows += body
        with open(out / "selection.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    _say(args, f"benchmark {cfg.model}: {len(seeds)} replication(s), table in {out / 'benchmark.csv'}")
    return 0


def gradcheck_report(cfg: ExperimentConfig) -> list:
    """``(module, check, max_rel_error)`` rows for the differentiable pipeline."""
    gc = cfg.gradcheck
    h = gc["h"]
    rng = np.random.default_rng(M.replication_seeds(cfg.seed, 1)[0])
    rows = []

    def composite(x):
        return ad.sum(ad.mul(ad.sigmoid(x), ad.log(ad.add(ad.exp(x), 1.0))))

    rows.append(("autodiff", "composite", max(ad.gradient_check(composite, rng.normal(size=6), h)
                                              for _ in range(gc["points"]))))
    f = make_filter("db2")
    def marg(x):
        g = mg.density_from_arrays(ad.getitem(x, slice(0, 32)), ad.getitem(x, 32), ad.getitem(x, 33), f)
        return ad.add(mg.neg_entropy(g), ad.sum(mg.inverse_cdf(g, u_marg)))

    u_marg = rng.uniform(0.05, 0.95, 8)
    rows.append(("marginal", "neg_entropy+inverse_cdf",
                 max(ad.gradient_check(marg, np.concatenate([rng.normal(1, 0.3, 32), [-1.0, np.log(3.0)]]), h)
                     for _ in range(gc["points"]))))
    u_cop = rng.uniform(0.05, 0.95, (8, 3))
    cp0 = cop.identity_copula("gaussian", 3)

    def copf(x):
        return ad.sum(cop.gaussian_copula_logpdf(u_cop, cop.build_correlation(cp0, 3, chol_raw=x)))

    rows.append(("copula", "gaussian_logpdf",
                 max(ad.gradient_check(copf, rng.normal(0, 0.4, 6), h) for _ in range(gc["points"]))))

    # full ELBO pipeline on a 2-D logistic posterior
    model = M.logistic_model(M.simulate_logistic(2, 50, int(rng.integers(2 ** 31))))
    for variant in ("independence", "gaussian"):
        worst = 0.0
        for _ in range(gc["points"]):
            blocks = [np.concatenate([rng.normal(1, 0.3, 32), [rng.normal(-3, 0.3), np.log(6) + rng.normal(0, 0.1)]])
                      for _ in range(2)]
            flat = np.concatenate(blocks + [rng.normal(0, 0.3, cop.n_copula_params(variant, 2))])
            noise = fam.draw_base_noise(rng, gc["samples"], 2, variant)
            worst = max(worst, ad.gradient_check(lambda x: E.elbo_objective(x, 2, variant, model, noise), flat, h))
        rows.append(("elbo", variant, worst))

    toy = {
        "logistic": M.logistic_model(M.simulate_logistic(4, 60, 1)),
        "ard": M.ard_model(M.simulate_ard(5, 40, 0.4, 2)),
        "hier": M.hier_model(M.simulate_hier(4, 5, 0.5, 3)),
    }
    for name, spec in toy.items():
        def lj(x, spec=spec):
            xb = ad.reshape(x, (1, spec.d))
            return ad.sum(spec.log_density(xb))
        rows.append(("models", name, max(ad.gradient_check(lj, rng.normal(0, 0.5, spec.d), h)
                                         for _ in range(gc["points"]))))
    return rows


def cmd_gradcheck(cfg: ExperimentConfig, args) -> int:
    """Check reverse-mode gradients against central differences."""
    out = _out_dir(cfg)
    tol = cfg.gradcheck["tolerance"]
    rows = gradcheck_report(cfg)
    M.write_table(out / "gradcheck.csv", ["module", "check", "max_rel_error", "passed"],
                  ([m, c, float(e), str(e < tol).lower()] for m, c, e in rows))
    for m, c, e in rows:
        _say(args, f"{m:9s} {c:24s} {e:.3e} {'ok' if e < tol else 'FAIL'}")
    if any(e >= tol for _, _, e in rows):
        raise NonFiniteError("gradcheck", detail=f"relative gradient error above {tol}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "benchmark": cmd_benchmark, "gradcheck": cmd_gradcheck}

_USER_ERRORS = (ConfigError, InvalidInputError, SupportError, OSError)
_NUMERICAL_ERRORS = (FitError, NonFiniteError, DomainError, InitializationError, DegenerateDensityError,
                     ArithmeticError)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides the config file)")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")
    parser = argparse.ArgumentParser(prog="wavecop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__.splitlines()[0])
    return parser


def load_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    return config_from_dict(raw)


def _fail(exc, code):
    print(json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except _USER_ERRORS as exc:
        return _fail(exc, 1)
    except _NUMERICAL_ERRORS as exc:
        return _fail(exc, 2)


if __name__ == "__main__":
    sys.exit(main())
