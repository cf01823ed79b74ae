"""``blendkit`` command line: loo, weights, blend, compare.

Exit codes: 0 success (including non-converged fits, which are reported in
the diagnostics), 2 input or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from blendkit.bayes.models import Priors
from blendkit.bayes.stacking import FitKind, fit_bayes_stacking, fit_hier_stacking, predict_weights
from blendkit.blend import blend, compare, elpd_of
from blendkit.draws import Draws, DrawsCollection
from blendkit.errors import NumericalError, ValidationError
from blendkit.io import (
    Manifest,
    atomic_write_text,
    dumps,
    fit_to_dict,
    format_matrix_csv,
    load_manifest,
    read_matrix_csv,
    stacking_fit_from_dict,
    weights_from_dict,
)
from blendkit.psis import elpd_from_test, elpd_psis_loo
from blendkit.weighting import WeightMatrix, mle_stacking, pseudo_bma, pseudo_bma_plus

log = logging.getLogger("blendkit")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def load_draws(manifest: Manifest, with_post_pred: bool = True) -> DrawsCollection:
    models = {}
    for name, entry in manifest.models.items():
        ll = read_matrix_csv(entry.log_lik_path)
        pp = None
        if with_post_pred and entry.post_pred_path is not None:
            pp = read_matrix_csv(entry.post_pred_path)
        models[name] = Draws(log_lik=ll, post_pred=pp)
    return DrawsCollection(models)


def cmd_loo(manifest: Manifest, out_path: Path) -> dict:
    draws = load_draws(manifest, with_post_pred=False)
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name, d in draws.items():
            e = elpd_psis_loo(d)
            out[name] = {
                "values": e.values.tolist(),
                "pareto_k": e.pareto_k.tolist(),
                "method": e.method.value,
                "flagged": e.flagged.tolist(),
            }
    atomic_write_text(out_path, dumps(out))
    return out


def _pointwise(manifest: Manifest, draws: DrawsCollection) -> dict:
    if manifest.pointwise == "psis-loo":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return {name: elpd_psis_loo(d) for name, d in draws.items()}
    return {name: elpd_from_test(d) for name, d in draws.items()}


def cmd_weights(manifest: Manifest, out_path: Path, method: str | None = None, seed: int | None = None) -> dict:
    method = method or manifest.method
    seed = manifest.seed if seed is None else seed
    draws = load_draws(manifest, with_post_pred=False)
    elpd = _pointwise(manifest, draws)
    names = list(elpd)
    lpd_matrix = np.vstack([e.values for e in elpd.values()])
    fit = None
    if method == "pseudo-bma":
        weights = pseudo_bma(elpd)
        diagnostics = {"converged": True}
    elif method == "pseudo-bma-plus":
        weights = pseudo_bma_plus(elpd, replications=manifest.bootstrap, seed=seed)
        diagnostics = {"converged": True, "replications": manifest.bootstrap}
    elif method == "mle-stacking":
        weights, report = mle_stacking(lpd_matrix, names)
        diagnostics = {
            "converged": report.converged,
            "final_objective": report.final_objective,
            "iterations": report.iterations,
            "grad_inf_norm": report.grad_inf_norm,
            "flat": report.flat,
            "message": report.message,
        }
    elif method in ("bayes-stacking", "hier-stacking"):
        priors = Priors.from_mapping(manifest.priors)
        config = manifest.hmc_config(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if method == "bayes-stacking":
                fit = fit_bayes_stacking(lpd_matrix, names, priors.w_prior, config)
            else:
                fit = fit_hier_stacking(
                    lpd_matrix, manifest.covariates, names, manifest.partial_pooling, priors, config
                )
        weights = fit.weights
        diagnostics = {
            "converged": fit.converged,
            "rhat": {k: v["rhat"] for k, v in fit.diagnostics["parameters"].items()},
            "ess": {k: v["ess"] for k, v in fit.diagnostics["parameters"].items()},
            "divergences": fit.diagnostics["divergences"],
        }
    else:
        raise ValidationError(f"unknown method {method!r}")
    out = fit_to_dict(method, weights, diagnostics, seed, fit)
    atomic_write_text(out_path, dumps(out))
    return out


def blend_weights(fit_dict: dict, manifest: Manifest, n: int) -> WeightMatrix:
    """Weights for blending ``n`` datapoints described by ``manifest``."""
    stacking = stacking_fit_from_dict(fit_dict)
    if stacking is None or stacking.kind is FitKind.BAYES_POOLED:
        return WeightMatrix(fit_dict["model_names"], weights_from_dict(fit_dict).broadcast(n))
    if manifest.covariates is not None and not manifest.covariates.is_empty:
        return predict_weights(stacking, manifest.covariates, n)
    info = stacking.covariate_info
    if info is None or not (info.continuous or info.discrete):
        return predict_weights(stacking, None, n)
    if stacking.weights.n_columns == n:
        return stacking.weights
    raise ValidationError("hierarchical fit needs covariates in the manifest to blend new data")


def cmd_blend(fit_path: Path, manifest: Manifest, seed: int | None, out_dir: Path) -> dict:
    fit_dict = json.loads(Path(fit_path).read_text(encoding="utf-8"))
    seed = manifest.seed if seed is None else seed
    draws = load_draws(manifest)
    if list(fit_dict["model_names"]) != draws.names:
        raise ValidationError(
            f"fit models {fit_dict['model_names']} do not match manifest models {draws.names}"
        )
    weights = blend_weights(fit_dict, manifest, draws.n_datapoints)
    blended = blend(draws, weights, seed=seed)
    pointwise = blended.lpd
    summary = {
        "method": fit_dict.get("method"),
        "seed": seed,
        "n_samples": blended.n_samples,
        "n_datapoints": blended.n_datapoints,
        "elpd": elpd_of(blended),
        "mean_lpd": float(np.mean(pointwise)),
    }
    # render everything before writing so a failure leaves no partial output
    files = {"log_lik.csv": format_matrix_csv(blended.log_lik_nd())}
    if blended.post_pred is not None:
        files["post_pred.csv"] = format_matrix_csv(blended.post_pred_nd())
    files["summary.json"] = dumps(summary)
    for fname, text in files.items():
        atomic_write_text(Path(out_dir) / fname, text)
    return summary


def _parse_entry(entry: str) -> tuple[str, Path]:
    name, path = entry.split("=", 1) if "=" in entry else (None, entry)
    path = Path(path)
    if path.is_dir():
        return name or path.name, path / "log_lik.csv"
    return name or path.stem, path


def cmd_compare(paths: list[str], out_path: Path | None = None) -> dict:
    entries = {}
    for entry in paths:
        name, path = _parse_entry(entry)
        if name in entries:
            raise ValidationError(f"duplicate entry name {name!r}")
        entries[name] = Draws(log_lik=read_matrix_csv(path))
    result = compare(entries)
    print(result.table())
    out = result.to_dict()
    if out_path is not None:
        atomic_write_text(out_path, dumps(out))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blendkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("loo", help="PSIS-LOO pointwise elpd for every model in a manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("weights", help="fit model weights")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--method", choices=[
        "pseudo-bma", "pseudo-bma-plus", "mle-stacking", "bayes-stacking", "hier-stacking",
    ])
    p.add_argument("--seed", type=int)

    p = sub.add_parser("blend", help="blend model draws with fitted weights")
    p.add_argument("--fit", required=True, type=Path)
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("compare", help="rank log_lik matrices by ELPD")
    p.add_argument("paths", nargs="+", help="CSV file, blend output directory, or name=path")
    p.add_argument("--out", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "loo":
            cmd_loo(load_manifest(args.manifest), args.out)
        elif args.command == "weights":
            cmd_weights(load_manifest(args.manifest), args.out, args.method, args.seed)
        elif args.command == "blend":
            cmd_blend(args.fit, load_manifest(args.manifest), args.seed, args.out)
        elif args.command == "compare":
            cmd_compare(args.paths, args.out)
    except (FileNotFoundError, ValidationError, json.JSONDecodeError, KeyError) as e:
        print(f"blendkit: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as e:
        print(f"blendkit: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
