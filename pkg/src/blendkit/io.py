"""File formats: matrix CSVs, JSON manifests and fit files.

Matrix CSV layout: an optional first line ``# shape: d0,d1,...`` followed by
one row per posterior sample and one column per (flattened) datapoint.
Values are written with 17 significant digits; ``-inf`` and ``inf`` are
literal.
"""

from __future__ import annotations

import json
import os
import tempfile
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from blendkit.bayes.covariates import CovariateInfo, CovariateSet
from blendkit.bayes.hmc import HmcConfig
from blendkit.bayes.models import HierLayout, Priors
from blendkit.bayes.stacking import FitKind, StackingCoefficients, StackingFit
from blendkit.errors import ValidationError
from blendkit.weighting import WeightMatrix

METHODS = ("pseudo-bma", "pseudo-bma-plus", "mle-stacking", "bayes-stacking", "hier-stacking")
POINTWISE = ("test", "psis-loo")


def format_float(x: float) -> str:
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "-inf" if x < 0 else "inf"
    return format(float(x), ".17g")


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to a temporary sibling file, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _require_file(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return path


def parse_matrix_csv(text: str, source: str = "<string>") -> np.ndarray:
    lines = text.splitlines()
    shape = None
    if lines and lines[0].lstrip().startswith("#"):
        head = lines.pop(0).lstrip("# \t")
        if not head.startswith("shape:"):
            raise ValidationError(f"{source}: unrecognized header {head!r}")
        try:
            shape = tuple(int(x) for x in head[len("shape:"):].split(","))
        except ValueError:
            raise ValidationError(f"{source}: bad shape header {head!r}") from None
    rows = []
    width = None
    for r, line in enumerate((ln for ln in lines if ln.strip()), start=1):
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ValidationError(
                f"{source}: ragged row {r}: {len(cells)} columns, expected {width}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            for c, cell in enumerate(cells, start=1):
                try:
                    float(cell)
                except ValueError:
                    raise ValidationError(
                        f"{source}: cannot parse {cell.strip()!r} at row {r}, column {c}"
                    ) from None
    if not rows:
        raise ValidationError(f"{source}: no data rows")
    mat = np.array(rows, dtype=float)
    if shape is not None:
        if len(shape) < 2 or shape[0] != mat.shape[0] or int(np.prod(shape[1:])) != mat.shape[1]:
            raise ValidationError(f"{source}: shape header {shape} does not match data {mat.shape}")
        mat = mat.reshape(shape)
    return mat


def read_matrix_csv(path: str | os.PathLike) -> np.ndarray:
    """Read a samples-by-datapoints matrix (reshaped when the header has more dims)."""
    p = _require_file(Path(path))
    return parse_matrix_csv(p.read_text(encoding="utf-8"), source=str(p))


def format_matrix_csv(mat) -> str:
    arr = np.asarray(mat, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    shape = arr.shape
    flat = arr.reshape(shape[0], -1)
    lines = ["# shape: " + ",".join(str(d) for d in shape)]
    lines += [",".join(format_float(x) for x in row) for row in flat]
    return "\n".join(lines) + "\n"


def write_matrix_csv(path: str | os.PathLike, mat) -> None:
    atomic_write_text(path, format_matrix_csv(mat))


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


@dataclass(frozen=True)
class ModelEntry:
    log_lik_path: Path
    post_pred_path: Path | None = None


@dataclass(frozen=True)
class Manifest:
    models: dict[str, ModelEntry]
    method: str = "mle-stacking"
    pointwise: str = "test"
    covariates: CovariateSet | None = None
    partial_pooling: bool = False
    priors: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    seed: int = 0
    bootstrap: int = 1000

    def hmc_config(self, seed: int | None = None) -> HmcConfig:
        opts = dict(self.sampler)
        opts["seed"] = self.seed if seed is None else seed
        known = set(HmcConfig.__dataclass_fields__)
        unknown = set(opts) - known
        if unknown:
            raise ValidationError(f"unknown sampler options {sorted(unknown)}")
        return HmcConfig(**opts)


def _load_covariate_values(value, base: Path):
    if isinstance(value, str):
        return read_matrix_csv(base / value).reshape(-1)
    return value


def parse_manifest(data: Mapping, base: Path) -> Manifest:
    if not isinstance(data, Mapping) or "models" not in data:
        raise ValidationError("manifest must be a JSON object with a 'models' entry")
    models = {}
    for name, entry in data["models"].items():
        if isinstance(entry, str):
            entry = {"log_lik_path": entry}
        if "log_lik_path" not in entry:
            raise ValidationError(f"model {name!r} has no log_lik_path")
        pp = entry.get("post_pred_path")
        models[str(name)] = ModelEntry(
            log_lik_path=base / entry["log_lik_path"],
            post_pred_path=None if pp is None else base / pp,
        )
    if len(models) < 2:
        raise ValidationError(f"manifest needs at least 2 models, got {len(models)}")
    method = data.get("method", "mle-stacking")
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}")
    pointwise = data.get("pointwise", "test")
    if pointwise not in POINTWISE:
        raise ValidationError(f"unknown pointwise source {pointwise!r}; expected one of {POINTWISE}")
    cov = data.get("covariates")
    covariates = None
    if cov:
        covariates = CovariateSet(
            continuous={k: _load_covariate_values(v, base) for k, v in cov.get("continuous", {}).items()},
            discrete={
                k: (
                    [str(x) for x in (base / v).read_text(encoding="utf-8").split()]
                    if isinstance(v, str)
                    else v
                )
                for k, v in cov.get("discrete", {}).items()
            },
            transform=cov.get("transform", "standardize"),
        )
    return Manifest(
        models=models,
        method=method,
        pointwise=pointwise,
        covariates=covariates,
        partial_pooling=bool(data.get("partial_pooling", False)),
        priors=dict(data.get("priors", {})),
        sampler=dict(data.get("sampler", {})),
        seed=int(data.get("seed", 0)),
        bootstrap=int(data.get("bootstrap", 1000)),
    )


def load_manifest(path: str | os.PathLike) -> Manifest:
    p = _require_file(Path(path))
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValidationError(f"{p}: invalid JSON: {e}") from None
    return parse_manifest(data, p.parent)


def fit_to_dict(
    method: str,
    weights: WeightMatrix,
    diagnostics: dict,
    seed: int,
    fit: StackingFit | None = None,
) -> dict:
    out = {
        "method": method,
        "model_names": list(weights.model_names),
        "weights": weights.weights.tolist(),
        "diagnostics": diagnostics,
        "seed": seed,
    }
    if fit is not None:
        out["kind"] = fit.kind.value
        out["priors"] = fit.priors.to_dict()
        out["layout"] = {
            "n_cont": fit.layout.n_cont,
            "n_disc": fit.layout.n_disc,
            "pooling": fit.layout.pooling,
        }
        out["posterior"] = {
            "param_names": fit.param_names,
            "chains": int(fit.samples.shape[0]),
            "samples": fit.flat_samples.tolist(),
        }
        if fit.coefficients is not None:
            out["coefficients"] = fit.coefficients.to_dict()
        if fit.covariate_info is not None:
            out["covariate_info"] = fit.covariate_info.to_dict()
    return out


def weights_from_dict(d: Mapping) -> WeightMatrix:
    return WeightMatrix(d["model_names"], np.asarray(d["weights"], dtype=float))


def stacking_fit_from_dict(d: Mapping) -> StackingFit | None:
    """Rebuild a :class:`StackingFit` from a fit file, or ``None`` for non-sampling methods."""
    if "posterior" not in d:
        return None
    names = list(d["model_names"])
    post = d["posterior"]
    flat = np.asarray(post["samples"], dtype=float)
    chains = int(post["chains"])
    samples = flat.reshape(chains, -1, flat.shape[-1])
    lay = d["layout"]
    layout = HierLayout(len(names), int(lay["n_cont"]), int(lay["n_disc"]), bool(lay["pooling"]))
    coefs = None
    if "coefficients" in d:
        c = d["coefficients"]
        coefs = StackingCoefficients(
            alpha=np.asarray(c["alpha"], dtype=float),
            beta_cont=np.asarray(c["beta_cont"], dtype=float).reshape(len(names) - 1, -1),
            beta_disc=np.asarray(c["beta_disc"], dtype=float).reshape(len(names) - 1, -1),
            pooling=c.get("pooling"),
        )
    info = CovariateInfo.from_dict(d["covariate_info"]) if "covariate_info" in d else None
    priors = d.get("priors", {})
    return StackingFit(
        kind=FitKind(d["kind"]),
        model_names=names,
        weights=weights_from_dict(d),
        samples=samples,
        param_names=list(post["param_names"]),
        diagnostics=dict(d.get("diagnostics", {})),
        converged=bool(d.get("diagnostics", {}).get("converged", True)),
        coefficients=coefs,
        covariate_info=info,
        layout=layout,
        priors=Priors(**priors) if priors else Priors(),
    )
