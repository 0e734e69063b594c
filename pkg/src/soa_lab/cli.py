"""Batch command-line driver.

Five verbs cover the workflow: ``generate`` simulates a dataset,
``sample`` draws fixed choice subsets for it, ``fit`` runs the classical
estimators, ``bayes`` runs the posterior samplers, ``divergence`` runs the
exhaustive expectation oracles.  Every command is a pure function of its
config file and input files: outputs are byte-identical on rerun, carry
the config hash in their headers, and record content hashes of consumed
files so mismatched lineage is refused.

Config files are flat ``key = value`` text with dotted section prefixes::

    dgp.model = mnl
    dgp.n = 2000
    protocol.kind = uniform_wor
    protocol.m = 4
    seed = 7
    output.dir = runs/demo

Keys under ``output.`` and ``runtime.`` never affect numbers and are
excluded from the config hash.  ``--seed`` and ``--out`` override the
``seed`` and ``output.dir`` keys (the seed override happens before
hashing, because it changes results).

Exit codes: 0 success (including reported non-convergence), 2 config or
validation error, 3 I/O error, 4 enumeration-capacity error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import storage
from .bayes_mmnl import GibbsConfig, MmnlPriors, run_gibbs
from .bayes_mnl import (Prior, grid_posterior, kl_decomposition,
                        kl_divergence_grid, log_posterior_kernel,
                        posterior_summary, rw_metropolis)
from . import divergence_lab as dlab
from .errors import (CapacityError, ConfigError, InvalidInputError,
                     InvalidStateError)
from .grids import GridSpec
from .mle import fit_mmnl_msl, fit_mnl, theta_labels
from .model_core import Dataset, SampledSet, UtilityParams, log_softmax
from .protocols import Protocol, derive_stream, draw_sampled_set, enumerate_sets
from .synth import MmnlDgpConfig, MnlDgpConfig, generate_mmnl, generate_mnl

_MISSING = object()


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def parse_config_file(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


class Config:
    """Typed access to the flat key/value pairs, with pointed errors."""

    def __init__(self, pairs: dict[str, str]):
        self.pairs = pairs

    def has(self, key: str) -> bool:
        return key in self.pairs

    def get(self, key: str, default=_MISSING) -> str:
        if key in self.pairs:
            return self.pairs[key]
        if default is _MISSING:
            raise ConfigError(f"missing required config key {key!r}")
        return default

    def get_int(self, key: str, default=_MISSING) -> int:
        value = self.get(key, default)
        if isinstance(value, int) or value is None:
            return value
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"config key {key!r}: {value!r} is not an integer")

    def get_float(self, key: str, default=_MISSING) -> float:
        value = self.get(key, default)
        if isinstance(value, float) or value is None:
            return value
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"config key {key!r}: {value!r} is not a number")

    def get_bool(self, key: str, default=_MISSING) -> bool:
        value = self.get(key, default)
        if isinstance(value, bool):
            return value
        lowered = value.lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key!r}: {value!r} is not a boolean")

    def get_floats(self, key: str, default=_MISSING) -> np.ndarray | None:
        value = self.get(key, default)
        if value is None or isinstance(value, np.ndarray):
            return value
        try:
            return np.array([float(v) for v in value.split(",")])
        except ValueError:
            raise ConfigError(
                f"config key {key!r}: {value!r} is not a comma-separated "
                "list of numbers")


def resolve_threads(cfg: Config) -> int:
    env = os.environ.get("SOA_LAB_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"SOA_LAB_THREADS={env!r} is not an integer")
    return max(1, cfg.get_int("runtime.threads", os.cpu_count() or 1))


def build_protocol(cfg: Config) -> Protocol:
    kind = cfg.get("protocol.kind")
    if kind == "uniform_wor":
        return Protocol(kind, m=cfg.get_int("protocol.m"))
    if kind == "importance_independent":
        return Protocol(kind, inclusion_probs=cfg.get_floats(
            "protocol.inclusion_probs"))
    raise ConfigError(f"config key 'protocol.kind': unknown protocol {kind!r}")


def build_prior(cfg: Config, K: int) -> Prior:
    mean = cfg.get_floats("prior.mean", None)
    if mean is None:
        mean = np.zeros(K)
    elif mean.size == 1:
        mean = np.full(K, mean[0])
    cov = cfg.get_floats("prior.cov", None)
    if cov is None:
        matrix = np.eye(K)
    elif cov.size == 1:
        matrix = float(cov[0]) * np.eye(K)
    elif cov.size == K:
        matrix = np.diag(cov)
    elif cov.size == K * K:
        matrix = cov.reshape(K, K)
    else:
        raise ConfigError("config key 'prior.cov': need a scalar, a diagonal, "
                          "or a full K*K matrix")
    return Prior(mean, matrix)


def build_grid(cfg: Config, K: int) -> GridSpec:
    lo = cfg.get_floats("grid.lo", np.array([-8.0]))
    hi = cfg.get_floats("grid.hi", np.array([8.0]))
    points = cfg.get_int("grid.points", 201)
    lo = np.full(K, lo[0]) if lo.size == 1 else lo
    hi = np.full(K, hi[0]) if hi.size == 1 else hi
    return GridSpec.make(lo, hi, [points] * K)


def _square_from(values: np.ndarray, K: int, key: str) -> np.ndarray:
    if values.size == K:
        return np.diag(values)
    if values.size == K * K:
        return values.reshape(K, K)
    raise ConfigError(f"config key {key!r}: need {K} diagonal entries or "
                      f"{K * K} row-major entries")


def load_dataset(cfg: Config) -> tuple[Dataset, str]:
    path = Path(cfg.get("inputs.dataset"))
    if not path.is_file():
        raise ConfigError(f"referenced dataset file {path} does not exist")
    dataset, _ = storage.read_dataset_csv(path)
    return dataset, storage.file_hash(path)


def load_sets(cfg: Config, dataset: Dataset,
              dataset_hash: str) -> tuple[list[SampledSet] | None, str]:
    """(sampled sets, mode) per the correction.* keys; None means full sets."""
    which = cfg.get("correction.sets", "full")
    if which == "full":
        return None, "none"
    if which != "sampled":
        raise ConfigError("config key 'correction.sets' must be 'full' or 'sampled'")
    if not cfg.has("inputs.sets"):
        raise ConfigError("correction.sets=sampled requires the "
                          "'inputs.sets' file key")
    path = Path(cfg.get("inputs.sets"))
    if not path.is_file():
        raise ConfigError(f"referenced sets file {path} does not exist")
    sets, meta = storage.read_sets_csv(path, dataset.n_obs)
    storage.verify_lineage(meta, "dataset_hash", dataset_hash, str(path))
    return sets, cfg.get("correction.mode", "mcfadden")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg: Config, out_dir: Path, chash: str) -> None:
    model = cfg.get("dgp.model")
    seed = cfg.get_int("seed")
    K = cfg.get_int("dgp.k")
    law = cfg.get("dgp.covariate_law", "standard_normal")
    if model == "mnl":
        dgp = MnlDgpConfig(N=cfg.get_int("dgp.n"), J=cfg.get_int("dgp.j"), K=K,
                           beta_star=UtilityParams(cfg.get_floats("dgp.beta_star")),
                           covariate_law=law, seed=seed)
        dataset = generate_mnl(dgp)
    elif model == "mmnl":
        dgp = MmnlDgpConfig(
            N=cfg.get_int("dgp.n"), T=cfg.get_int("dgp.t"),
            J=cfg.get_int("dgp.j"), K=K,
            mu_star=cfg.get_floats("dgp.mu_star"),
            sigma_star=_square_from(cfg.get_floats("dgp.sigma_star"), K,
                                    "dgp.sigma_star"),
            covariate_law=law, seed=seed)
        dataset, _ = generate_mmnl(dgp)
    else:
        raise ConfigError("config key 'dgp.model' must be 'mnl' or 'mmnl'")

    dataset_path = out_dir / "dataset.csv"
    storage.write_dataset_csv(dataset_path, dataset,
                              {"config_hash": chash, "command": "generate"})
    _finish(cfg, out_dir, chash, "generate", [dataset_path])


def cmd_sample(cfg: Config, out_dir: Path, chash: str) -> None:
    dataset, ds_hash = load_dataset(cfg)
    protocol = build_protocol(cfg)
    protocol.check_for(dataset.J)
    seed = cfg.get_int("seed")
    sets = [draw_sampled_set(protocol, obs, derive_stream(seed, obs.obs_id))
            for obs in dataset.observations]
    sets_path = out_dir / "sets.csv"
    storage.write_sets_csv(sets_path, sets,
                           {"config_hash": chash, "command": "sample",
                            "dataset_hash": ds_hash})
    _finish(cfg, out_dir, chash, "sample", [sets_path], dataset_hash=ds_hash)


def cmd_fit(cfg: Config, out_dir: Path, chash: str) -> None:
    dataset, ds_hash = load_dataset(cfg)
    sampled, mode = load_sets(cfg, dataset, ds_hash)
    estimator = cfg.get("fit.estimator", "mnl")
    run_id = f"fit-{chash}"
    if estimator == "mnl":
        result = fit_mnl(dataset, sampled, mode)
        names = [f"beta_{k + 1}" for k in range(dataset.K)]
        values = result.estimate.beta
    elif estimator == "mmnl_msl":
        result = fit_mmnl_msl(dataset, sampled, mode,
                              wn_mode=cfg.get("fit.wn_mode", "exact_full_set"),
                              r_draws=cfg.get_int("fit.r_draws", 100))
        names = theta_labels(dataset.K)
        values = result.estimate
    else:
        raise ConfigError("config key 'fit.estimator' must be 'mnl' or 'mmnl_msl'")

    rows = [(run_id, chash, f"estimate[{name}]", float(value),
             f"se={storage.fmt(float(se))}")
            for name, value, se in zip(names, values, result.std_errors)]
    if estimator == "mmnl_msl":
        for i in range(dataset.K):
            for j in range(i + 1):
                rows.append((run_id, chash, f"sigma[{i + 1},{j + 1}]",
                             float(result.sigma[i, j]), ""))
    rows.append((run_id, chash, "loglik", float(result.loglik), ""))
    rows.append((run_id, chash, "converged", int(result.converged), ""))
    rows.append((run_id, chash, "iterations", int(result.iterations), ""))

    report_path = out_dir / "fit_report.csv"
    storage.write_report_csv(report_path, rows,
                             {"config_hash": chash, "command": "fit",
                              "dataset_hash": ds_hash})
    _finish(cfg, out_dir, chash, "fit", [report_path], dataset_hash=ds_hash)


def cmd_bayes(cfg: Config, out_dir: Path, chash: str) -> None:
    dataset, ds_hash = load_dataset(cfg)
    sampled, mode = load_sets(cfg, dataset, ds_hash)
    method = cfg.get("bayes.method")
    seed = cfg.get_int("seed")
    iterations = cfg.get_int("bayes.iterations")
    burn_in = cfg.get_int("bayes.burn_in")
    thin = 1

    if method == "rw_metropolis":
        prior = build_prior(cfg, dataset.K)
        sets_arg = None if sampled is None else (sampled, mode)

        def kernel(b: np.ndarray) -> float:
            return log_posterior_kernel(UtilityParams(b), dataset, sets_arg, prior)

        draws = rw_metropolis(kernel, prior.mean,
                              n_chains=cfg.get_int("bayes.chains", 2),
                              n_iter=iterations, burn_in=burn_in,
                              proposal_scale=cfg.get_float("bayes.proposal_scale", 0.5),
                              seed=seed, threads=resolve_threads(cfg))
        draws.param_names = [f"beta_{k + 1}" for k in range(dataset.K)]
    elif method == "gibbs":
        K = dataset.K
        m0 = cfg.get_floats("prior.m0", None)
        a0 = cfg.get_floats("prior.a0", None)
        s0 = cfg.get_floats("prior.s0", None)
        priors = MmnlPriors(
            m0=np.zeros(K) if m0 is None else m0,
            A0=100.0 * np.eye(K) if a0 is None else _square_from(a0, K, "prior.a0"),
            v0=cfg.get_float("prior.v0", float(K + 2)),
            S0=np.eye(K) if s0 is None else _square_from(s0, K, "prior.s0"))
        thin = cfg.get_int("bayes.thin", 1)
        gibbs_cfg = GibbsConfig(
            iterations=iterations, burn_in=burn_in, thin=thin, seed=seed,
            rho=cfg.get_float("bayes.rho", 0.4),
            sets=None if sampled is None else (sampled, mode),
            store_beta_n=cfg.get_bool("bayes.store_beta_n", False))
        draws = run_gibbs(dataset, priors, gibbs_cfg)
    else:
        raise ConfigError(
            "config key 'bayes.method' must be 'rw_metropolis' or 'gibbs'")

    summary = posterior_summary(draws)
    summary.param_names = draws.param_names
    headers = {"config_hash": chash, "command": "bayes", "dataset_hash": ds_hash}
    draws_path = out_dir / "draws.csv"
    summary_path = out_dir / "summary.csv"
    storage.write_draws_csv(draws_path, draws, headers, thin=thin)
    storage.write_summary_csv(summary_path, summary, headers)
    outputs = [draws_path, summary_path]
    if draws.beta_n_draws is not None:
        beta_path = out_dir / "beta_n.csv"
        storage.write_beta_n_csv(beta_path, draws, headers, thin=thin)
        outputs.append(beta_path)
    _finish(cfg, out_dir, chash, "bayes", outputs, dataset_hash=ds_hash)


_DIVERGENCE_FIELDS = [
    "design_id", "protocol", "mode", "beta_star",
    "expected_quasi_ll", "expected_true_ll", "expected_divergence",
    "kl_term_a", "kl_term_b", "expected_kl",
    "r_min", "r_max", "r_sum_abs_err",
    "resid_ordering", "resid_divergence_forms", "resid_closed_form",
    "resid_kl_decomposition", "resid_entropy_form",
    "resid_posterior_decomposition",
]


def _divergence_row(design_id: int, label: str, mode: str, design: Dataset,
                    protocol: Protocol, beta_star: UtilityParams, prior: Prior,
                    grid: GridSpec) -> list:
    report = dlab.build_divergence_report(design, protocol, mode, beta_star,
                                          prior, grid)
    resid_order = max(
        abs(dlab.expected_quasi_ll(o, protocol, beta_star, beta_star, mode)
            - dlab.expected_quasi_ll_setwise(o, protocol, beta_star, beta_star,
                                             mode))
        for o in design.observations)
    resid_forms = max(
        abs(dlab.expected_divergence(o, protocol, beta_star, mode)
            - dlab.expected_divergence_direct(o, protocol, beta_star, mode))
        for o in design.observations)
    if protocol.kind == "uniform_wor":
        resid_closed = max(
            abs(dlab.divergence_uniform_closed_form(o, protocol, beta_star)
                - dlab.expected_divergence(o, protocol, beta_star, "mcfadden"))
            for o in design.observations)
        resid_entropy = abs(dlab.kl_term_a_entropy_form(design, protocol, prior,
                                                        grid)
                            - dlab.kl_terms(design, protocol, "mcfadden", prior,
                                            grid).a)
    else:
        resid_closed = float("nan")
        resid_entropy = float("nan")
    resid_kl = abs(report.kl_term_a + report.kl_term_b
                   - dlab.expected_kl_direct(design, protocol, mode, prior, grid))

    # One concrete (Y, D): the realized choices with the first feasible set
    # per observation, comparing grid-KL against its two-term decomposition.
    picked = [enumerate_sets(protocol, o, o.chosen)[0] for o in design.observations]
    as_sampled = [SampledSet(e.member_ids, e.log_cond_prob) for e in picked]
    p_true = grid_posterior(design, None, prior, grid, check_doubling=False)
    p_samp = grid_posterior(design, (as_sampled, mode), prior, grid,
                            check_doubling=False)
    llr, log_ibf = kl_decomposition(p_true, p_samp)
    resid_decomp = abs(kl_divergence_grid(p_true, p_samp) - (llr + log_ibf))

    coverage = np.array(list(report.r_coverage.values()))
    r_sums = {}
    for (obs_idx, _), r in report.r_coverage.items():
        r_sums[obs_idx] = r_sums.get(obs_idx, 0.0) + r
    r_sum_err = max(abs(v - 1.0) for v in r_sums.values())

    return [design_id, label, mode,
            ";".join(storage.fmt(v) for v in beta_star.beta),
            report.expected_quasi_ll, report.expected_true_ll,
            report.expected_divergence, report.kl_term_a, report.kl_term_b,
            report.kl_term_a + report.kl_term_b,
            float(coverage.min()), float(coverage.max()), r_sum_err,
            resid_order, resid_forms, resid_closed, resid_kl, resid_entropy,
            resid_decomp]


def cmd_divergence(cfg: Config, out_dir: Path, chash: str) -> None:
    seed = cfg.get_int("seed")
    J = cfg.get_int("divergence.j", 4)
    K = cfg.get_int("divergence.k", 1)
    m = cfg.get_int("divergence.m", 2)
    T = cfg.get_int("divergence.t", 1)
    n_designs = cfg.get_int("divergence.n_designs", 3)
    mode = cfg.get("correction.mode", "mcfadden")
    prior = build_prior(cfg, K)
    grid = build_grid(cfg, K)
    beta_cfg = cfg.get_floats("divergence.beta_star", None)

    rows = []
    for d in range(n_designs):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(3, d)))
        X = rng.normal(size=(T, J, K))
        beta_star = UtilityParams(rng.normal(size=K) if beta_cfg is None
                                  else beta_cfg)
        P = np.exp(log_softmax(X @ beta_star.beta, axis=1))
        chosen = np.minimum((rng.random(T)[:, None] >= np.cumsum(P, axis=1))
                            .sum(axis=1), J - 1)
        design = Dataset.from_arrays(X, chosen)
        probs = rng.uniform(0.2, 0.8, size=J)
        protocols = [(f"uniform_wor_m{m}", Protocol("uniform_wor", m=m)),
                     ("importance_seeded",
                      Protocol("importance_independent", inclusion_probs=probs))]
        for label, protocol in protocols:
            row_mode = mode
            if protocol.kind != "uniform_wor" and mode == "uniform_constant":
                raise ConfigError("uniform_constant corrections are only valid "
                                  "for the uniform protocol")
            try:
                rows.append(_divergence_row(d, label, row_mode, design, protocol,
                                            beta_star, prior, grid))
            except CapacityError as exc:
                raise CapacityError(f"design {d} ({label}): {exc}") from exc

    path = out_dir / "divergence.csv"
    storage.write_csv(path, {"config_hash": chash, "command": "divergence"},
                      _DIVERGENCE_FIELDS, rows)
    _finish(cfg, out_dir, chash, "divergence", [path])


def _finish(cfg: Config, out_dir: Path, chash: str, command: str,
            outputs: list[Path], dataset_hash: str | None = None) -> None:
    payload = {
        "command": command,
        "config_hash": chash,
        "config": dict(sorted(cfg.pairs.items())),
        "outputs": {p.name: storage.file_hash(p) for p in outputs},
    }
    if dataset_hash is not None:
        payload["dataset_hash"] = dataset_hash
    storage.write_manifest(out_dir / "manifest.json", payload)
    for p in outputs:
        print(f"wrote {p}")
    print(f"wrote {out_dir / 'manifest.json'}")


_COMMANDS = {
    "generate": cmd_generate,
    "sample": cmd_sample,
    "fit": cmd_fit,
    "bayes": cmd_bayes,
    "divergence": cmd_divergence,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="soa-lab",
        description="Sampling-of-alternatives experiment driver")
    sub = parser.add_subparsers(dest="command", required=True)
    for verb, help_text in [
            ("generate", "simulate a dataset from a configured DGP"),
            ("sample", "draw fixed choice subsets for a dataset"),
            ("fit", "run classical (quasi-)likelihood estimators"),
            ("bayes", "run posterior samplers"),
            ("divergence", "run the exhaustive expectation oracles")]:
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("--config", required=True, help="flat key=value file")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int,
                       help="seed override (changes results and config hash)")
    args = parser.parse_args(argv)

    try:
        pairs = parse_config_file(args.config)
        if args.seed is not None:
            pairs["seed"] = str(args.seed)
        if args.out is not None:
            pairs["output.dir"] = args.out
        cfg = Config(pairs)
        out_dir = Path(cfg.get("output.dir"))
        chash = storage.config_hash(pairs)
        out_dir.mkdir(parents=True, exist_ok=True)
        _COMMANDS[args.command](cfg, out_dir, chash)
        return 0
    except (ConfigError, InvalidInputError, InvalidStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
