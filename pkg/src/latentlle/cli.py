"""``latentlle`` command-line entry point.

Exit codes: 0 success, 1 invalid configuration, 2 numerical failure,
3 verification failure.  Errors go to stderr with a trailing
``error_code=<n> kind=<kind>`` line; per-iteration progress goes to stderr as
``iter=<i> objective=<v> dmax=<c>``.  Output files depend only on the
configuration, so two runs with the same seed are byte-identical.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import classic, data_io, latent_linear, stochastic, verify
from .exceptions import DivergedError, InvalidInputError, NotPSDError, NumericalError, ParseError
from .neighborhood import knn_graph, neighborhood_preservation

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3
COMMANDS = ("fit-slle", "fit-lle", "fit-fa", "fit-ppca", "compare", "verify")
NEEDS_K = ("fit-slle", "fit-lle", "compare")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    dataset: data_io.DatasetSpec = field(default_factory=data_io.DatasetSpec)
    k: Optional[int] = None
    p: int = 2
    q: int = 2
    em: stochastic.EMConfig = field(default_factory=stochastic.EMConfig)
    out_dir: str = "results"
    solver: str = "closed_form"
    reg: float = 1e-3
    timings: bool = False
    csv_header: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InvalidInputError(f"command must be one of {COMMANDS}")
        if self.command in NEEDS_K and self.k is None:
            raise InvalidInputError(f"{self.command} requires --k (number of neighbors)")
        if self.k is not None and self.k < 1:
            raise InvalidInputError("--k must be >= 1")
        if self.p < 1 or self.q < 1:
            raise InvalidInputError("--p and --q must be >= 1")
        if self.solver not in ("closed_form", "em"):
            raise InvalidInputError("--solver must be closed_form or em")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _fmt(v) -> str:
    return data_io.FLOAT_FMT % v


def _dataset_flags(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--dataset", default="swiss_roll",
                   choices=[k for k in data_io.KINDS if k != "csv"], help="synthetic generator")
    g.add_argument("--csv", default=None, metavar="PATH",
                   help="read points from a numeric CSV instead of generating")
    g.add_argument("--csv-header", action="store_true", help="the CSV has a header row")
    g.add_argument("--n", type=int, default=500, help="number of points")
    g.add_argument("--noise", type=float, default=0.0, help="Gaussian noise std-dev")
    g.add_argument("--seed", type=int, default=0, help="dataset and sampling seed")
    g.add_argument("--dim", type=int, default=5, help="ambient dimension (affine_patch, gaussian_blobs)")
    g.add_argument("--intrinsic-dim", type=int, default=2, help="affine_patch dimension")


def _em_flags(p, defaults=stochastic.EMConfig()):
    g = p.add_argument_group("EM")
    g.add_argument("--mode", default=defaults.mode, choices=stochastic.MODES,
                   help="prior covariance form")
    g.add_argument("--max-iter", type=int, default=defaults.max_iter, help="EM iteration cap")
    g.add_argument("--tol", type=float, default=defaults.tol,
                   help="relative objective change for convergence")
    g.add_argument("--lr", type=float, default=defaults.lr, help="full-mode step size")
    g.add_argument("--grad-steps", type=int, default=defaults.grad_steps,
                   help="full-mode gradient steps per M-step")
    g.add_argument("--sigma-floor", type=float, default=defaults.sigma_floor,
                   help="lower bound on spherical prior scales")
    g.add_argument("--ridge", type=float, default=defaults.ridge,
                   help="ridge added to full-mode prior covariances")
    g.add_argument("--scatter", default="global", choices=["global", "per-point"],
                   help="scatter statistics scope")
    g.add_argument("--extract", default=defaults.extract, choices=stochastic.EXTRACTS,
                   help="posterior mean or one posterior sample")


def _common(p, out=True):
    p.add_argument("--config", default=None, metavar="FILE",
                   help="flat key=value file; command-line flags override it")
    if out:
        p.add_argument("--out", default="results", metavar="DIR", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="latentlle", description="Stochastic LLE, factor analysis and PPCA.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit-slle", formatter_class=fmt, help="stochastic LLE (EM weights + embedding)")
    _dataset_flags(p)
    p.add_argument("--k", type=int, default=None, help="neighbors per point (required)")
    p.add_argument("--p", type=int, default=2, help="embedding dimension")
    _em_flags(p)
    _common(p)

    p = sub.add_parser("fit-lle", formatter_class=fmt, help="classic LLE")
    _dataset_flags(p)
    p.add_argument("--k", type=int, default=None, help="neighbors per point (required)")
    p.add_argument("--p", type=int, default=2, help="embedding dimension")
    p.add_argument("--reg", type=float, default=1e-3, help="Gram regularization")
    _common(p)

    for name, text in (("fit-fa", "factor analysis by EM"), ("fit-ppca", "probabilistic PCA")):
        p = sub.add_parser(name, formatter_class=fmt, help=text)
        _dataset_flags(p)
        p.add_argument("--q", type=int, default=2, help="latent dimension")
        p.add_argument("--max-iter", type=int, default=1000, help="EM iteration cap")
        p.add_argument("--tol", type=float, default=1e-8, help="relative log-likelihood change")
        if name == "fit-ppca":
            p.add_argument("--solver", default="closed_form", choices=["closed_form", "em"],
                           help="closed-form eigensolution or EM")
        _common(p)

    p = sub.add_parser("compare", formatter_class=fmt,
                       help="stochastic vs classic LLE (and PPCA) on one dataset")
    _dataset_flags(p)
    p.add_argument("--k", type=int, default=None, help="neighbors per point (required)")
    p.add_argument("--p", type=int, default=2, help="embedding dimension")
    p.add_argument("--reg", type=float, default=1e-3, help="classic LLE Gram regularization")
    _em_flags(p)
    p.add_argument("--timings", action="store_true",
                   help="add a runtime column (makes the CSV non-reproducible)")
    _common(p)

    p = sub.add_parser("verify", formatter_class=fmt, help="run the built-in invariant suite")
    _common(p, out=False)
    return parser


def _config_tokens(path, sub: argparse.ArgumentParser):
    """Turn a ``key = value`` file into flag tokens for ``sub``."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    flags = {a.dest: a for a in sub._actions if a.option_strings}
    tokens = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}, line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest in ("config", "help") or dest not in flags:
            raise ConfigError(f"{path}, line {lineno}: unknown key {key!r} for this command")
        action = flags[dest]
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(action.option_strings[0])
            elif value.lower() not in ("0", "false", "no", "off"):
                raise ConfigError(f"{path}, line {lineno}: {key} expects true/false")
        else:
            tokens += [action.option_strings[0], value]
    return tokens


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        # file first, so later command-line flags win
        args = parser.parse_args([args.command] + _config_tokens(args.config, sub) + argv[1:])
    return args


def config_from_args(args) -> RunConfig:
    g = vars(args)
    cmd = args.command
    if cmd == "verify":
        return RunConfig(cmd)
    dataset = data_io.DatasetSpec(
        kind="csv" if g.get("csv") else g["dataset"], n=g["n"], noise=g["noise"],
        seed=g["seed"], path=g.get("csv"), d=g["dim"], m=g["intrinsic_dim"],
    )
    em_keys = dict(seed=g["seed"])
    if "mode" in g:
        em_keys.update(mode=g["mode"], lr=g["lr"], grad_steps=g["grad_steps"],
                       sigma_floor=g["sigma_floor"], ridge=g["ridge"],
                       scatter_scope=g["scatter"].replace("-", "_"), extract=g["extract"])
    if "max_iter" in g:
        em_keys.update(max_iter=g["max_iter"], tol=g["tol"])
    return RunConfig(
        cmd, dataset, k=g.get("k"), p=g.get("p", 2), q=g.get("q", 2),
        em=stochastic.EMConfig(**em_keys), out_dir=g["out"],
        solver=g.get("solver", "closed_form"), reg=g.get("reg", 1e-3),
        timings=g.get("timings", False), csv_header=g["csv_header"],
    )


def _load(cfg: RunConfig):
    if cfg.dataset.kind == "csv":
        return data_io.load_csv(cfg.dataset.path, has_header=cfg.csv_header)
    data, _ = data_io.generate(cfg.dataset)
    return data


def _progress(it, obj, change):
    print(f"iter={it} objective={_fmt(obj)} dmax={_fmt(change)}", file=sys.stderr)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidInputError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def _write_run_config(out: Path, cfg: RunConfig):
    flat = {}
    for key, value in asdict(cfg).items():
        if key == "out_dir":
            continue
        if isinstance(value, dict):
            flat.update({f"{key}.{k}": v for k, v in value.items()})
        else:
            flat[key] = value
    text = "".join(f"{k}={v}\n" for k, v in flat.items())
    (out / "run_config.txt").write_text(text, encoding="utf-8")


def _fit_slle(data, cfg: RunConfig):
    nbrs = knn_graph(data, cfg.k)
    prior, post, trace = stochastic.fit_stochastic_reconstruction(data, nbrs, cfg.em, _progress)
    weights = stochastic.extract_weights(post, cfg.em.extract, cfg.em.seed)
    res = classic.embed_from_stochastic(weights, nbrs, cfg.p)
    return nbrs, weights, res, trace


def _cmd_fit_slle(cfg: RunConfig) -> int:
    data = _load(cfg)
    nbrs, weights, res, trace = _fit_slle(data, cfg)
    out = _out_dir(cfg)
    data_io.save_results(out, res, weights, trace, nbrs.neighbor_indices)
    _write_run_config(out, cfg)
    return EXIT_OK


def _cmd_fit_lle(cfg: RunConfig) -> int:
    data = _load(cfg)
    nbrs = knn_graph(data, cfg.k)
    W = classic.reconstruction_weights(data, nbrs, cfg.reg)
    res = classic.embed(W, cfg.p)
    weights = np.take_along_axis(W.W, nbrs.neighbor_indices, axis=1)
    out = _out_dir(cfg)
    data_io.save_results(out, res, weights, stochastic.EMTrace(), nbrs.neighbor_indices)
    _write_run_config(out, cfg)
    return EXIT_OK


def _cmd_fit_latent(cfg: RunConfig) -> int:
    data = _load(cfg)
    if cfg.command == "fit-fa":
        model, trace = latent_linear.fa_fit(data, cfg.q, cfg.em)
        kind = "factor_analysis"
    elif cfg.solver == "em":
        model, trace = latent_linear.ppca_fit_em(data, cfg.q, cfg.em)
        kind = "ppca"
    else:
        model, trace = latent_linear.ppca_fit_closed_form(data, cfg.q), stochastic.EMTrace()
        kind = "ppca"
    for it, obj, change in trace.iterations:
        _progress(it, obj, change)
    out = _out_dir(cfg)
    latent_linear.save_model(out / "model.json", model, kind)
    data_io.save_trace(out / "trace.csv", trace)
    _write_run_config(out, cfg)
    return EXIT_OK


def _cmd_compare(cfg: RunConfig) -> int:
    data = _load(cfg)
    rows = []

    t0 = time.perf_counter()
    nbrs, weights, res, _ = _fit_slle(data, cfg)
    W, _ = classic.stochastic_weight_matrix(weights, nbrs)
    rows.append(("stochastic_lle", classic.reconstruction_residuals(data, W).mean(),
                 neighborhood_preservation(data.points, res.Y, cfg.k), time.perf_counter() - t0))

    t0 = time.perf_counter()
    W = classic.reconstruction_weights(data, nbrs, cfg.reg)
    Y = classic.embed(W, cfg.p).Y
    rows.append(("lle", classic.reconstruction_residuals(data, W).mean(),
                 neighborhood_preservation(data.points, Y, cfg.k), time.perf_counter() - t0))

    if cfg.p < data.d:
        t0 = time.perf_counter()
        model = latent_linear.ppca_fit_closed_form(data, cfg.p)
        Z = model.posterior_mean(data.points)
        recon = Z @ model.loading.T + model.mean
        rows.append(("ppca", np.linalg.norm(data.points - recon, axis=1).mean(),
                     neighborhood_preservation(data.points, Z, cfg.k), time.perf_counter() - t0))

    header = ["method", "reconstruction_residual", "neighborhood_preservation"]
    if cfg.timings:
        header.append("runtime_s")
    table = []
    for name, resid, score, secs in rows:
        line = [name, _fmt(resid), _fmt(score)]
        if cfg.timings:
            line.append(_fmt(secs))
        table.append(line)
        print(f"method={name} runtime_s={secs:.3f}", file=sys.stderr)
    out = _out_dir(cfg)
    data_io._write_rows(out / "metrics.csv", header, table)
    _write_run_config(out, cfg)
    return EXIT_OK


def _cmd_verify(cfg: RunConfig) -> int:
    failed = 0
    for r in verify.run_suite():
        print(f"check={r.name} status={'PASS' if r.passed else 'FAIL'} {r.detail}")
        failed += not r.passed
    if failed:
        print(f"{failed} check(s) failed", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


HANDLERS = {
    "fit-slle": _cmd_fit_slle,
    "fit-lle": _cmd_fit_lle,
    "fit-fa": _cmd_fit_latent,
    "fit-ppca": _cmd_fit_latent,
    "compare": _cmd_compare,
    "verify": _cmd_verify,
}


def _fail(code: int, kind: str, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    print(f"error_code={code} kind={kind}", file=sys.stderr)
    return code


def run(cfg: RunConfig) -> int:
    try:
        code = HANDLERS[cfg.command](cfg)
    except (InvalidInputError, ParseError) as exc:
        return _fail(EXIT_CONFIG, "invalid_config", str(exc))
    except (DivergedError, NumericalError, NotPSDError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical_failure", str(exc))
    except OSError as exc:
        return _fail(EXIT_CONFIG, "io_error", str(exc))
    if code == EXIT_VERIFY:
        print(f"error_code={EXIT_VERIFY} kind=verification_failure", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = config_from_args(parse_args(argv))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "invalid_config", str(exc))
    except (InvalidInputError, ParseError) as exc:
        return _fail(EXIT_CONFIG, "invalid_config", str(exc))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
