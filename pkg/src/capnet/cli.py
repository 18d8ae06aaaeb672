"""Command-line front end: spec files in, canonical JSON/CSV reports out.

Exit codes: 0 on success, 1 when a run is rejected numerically (an unstable
step size, for instance), 2 on usage or spec errors.  Identical invocations
with identical seeds produce byte-identical output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .analyze import erf_profile, shatter_analysis, uniform_path_weight
from .augment import Activation, decoupling_nu, estimate_nu_monte_carlo
from .core import ProjectionMatrix, SpatialCapacity
from .deeplimit import (
    DeepLimitConfig,
    StabilityError,
    compare_markov_pde,
    evolve_markov,
    residual_generator,
)
from .jsonfmt import canonical_dumps
from .oracle import ExperimentConfig, empirical_spatial_capacity
from .propagate import Layer, LayerChain, PropagationOperator, propagate_chain

__all__ = ["NetworkSpec", "RunReport", "SpecError", "load_network_spec", "main"]

log = logging.getLogger("capnet")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

_LAYER_KEYS = {"kind", "n_in", "n_out", "activation", "weights", "eps"}


class SpecError(ValueError):
    """A network spec that cannot be built as written."""


@dataclass(frozen=True)
class NetworkSpec:
    """A parsed architecture document plus the objects built from it."""

    document: dict
    chain: LayerChain
    top: SpatialCapacity
    seeds: Tuple[int, ...]

    def to_dict(self) -> dict:
        return self.document

    def spec_hash(self) -> str:
        return hashlib.sha256(canonical_dumps(self.document).encode()).hexdigest()


@dataclass(frozen=True)
class RunReport:
    """Per-interface capacity profiles with their totals and run metadata."""

    profiles: Tuple[SpatialCapacity, ...]
    metadata: Dict[str, object]

    def to_dict(self) -> dict:
        return {
            "metadata": dict(self.metadata),
            "profiles": [list(p.values) for p in self.profiles],
            "totals": [p.total for p in self.profiles],
        }


def _fail(index: int, message: str) -> SpecError:
    return SpecError(f"layer {index}: {message}")


def _parse_weight_matrix(entry: dict, index: int, seeds: List[int]) -> np.ndarray:
    text = entry["weights"]
    n_in, n_out = entry["n_in"], entry["n_out"]
    if text.startswith("random_gaussian:"):
        try:
            seed = int(text.split(":", 1)[1])
        except ValueError:
            raise _fail(index, f"bad seed in {text!r}") from None
        seeds.append(seed)
        return np.random.default_rng(seed).standard_normal((n_in, n_out))
    try:
        matrix = np.loadtxt(text, delimiter=",", ndmin=2)
    except OSError:
        raise _fail(index, f"cannot read weights file {text!r}") from None
    except ValueError as exc:
        raise _fail(index, f"weights file {text!r} is not numeric: {exc}") from None
    if matrix.shape != (n_in, n_out):
        raise _fail(
            index, f"weights are {matrix.shape[0]}x{matrix.shape[1]}, spec says {n_in}x{n_out}"
        )
    return matrix


def _build_layer(entry, index: int, seeds: List[int]) -> Layer:
    if not isinstance(entry, dict):
        raise _fail(index, "each layer must be an object")
    unknown = set(entry) - _LAYER_KEYS
    if unknown:
        raise _fail(index, f"unknown fields {sorted(unknown)}")
    for key in ("kind", "n_in", "n_out", "weights"):
        if key not in entry:
            raise _fail(index, f"missing field {key!r}")
    kind, weights = entry["kind"], entry["weights"]
    if kind not in ("dense", "residual", "differential"):
        raise _fail(index, f"unknown kind {kind!r}")
    if not isinstance(weights, str):
        raise _fail(index, "weights must be a string")
    n_in, n_out = entry["n_in"], entry["n_out"]
    if not (isinstance(n_in, int) and isinstance(n_out, int) and n_in > 0 and n_out > 0):
        raise _fail(index, "n_in and n_out must be positive integers")

    if weights.startswith("uniform:"):
        if kind == "differential":
            raise _fail(index, "uniform weights cannot be differential")
        if "activation" in entry:
            raise _fail(index, "uniform weights take no activation")
        if n_in != n_out:
            raise _fail(index, "uniform weights need n_in == n_out")
        try:
            r = int(weights.split(":", 1)[1])
        except ValueError:
            raise _fail(index, f"bad window in {weights!r}") from None
        try:
            operator = PropagationOperator.uniform_window(n_in, r)
        except ValueError as exc:
            raise _fail(index, str(exc)) from None
        flavor = "standard" if kind == "dense" else "residual"
        return Layer.from_operator(operator, flavor=flavor)

    if weights.startswith("residual:"):
        if kind != "residual":
            raise _fail(index, "residual weights need kind residual")
        if "activation" in entry:
            raise _fail(index, "residual weights take no activation")
        if n_in != n_out:
            raise _fail(index, "residual weights need n_in == n_out")
        parts = weights.split(":", 1)[1].split(",")
        if len(parts) != 3:
            raise _fail(index, f"expected residual:<eps>,<v>,<D>, got {weights!r}")
        try:
            eps, v, dcoef = (float(p) for p in parts)
        except ValueError:
            raise _fail(index, f"non-numeric residual parameters in {weights!r}") from None
        try:
            generator = residual_generator(n_in, v, dcoef, "periodic")
        except ValueError as exc:
            raise _fail(index, str(exc)) from None
        if eps <= 0 or eps >= generator.max_stable_eps():
            raise StabilityError(
                f"layer {index}: eps = {eps:g} is outside the stable range "
                f"(0, {generator.max_stable_eps():g})"
            )
        step = PropagationOperator(np.eye(n_in) + eps * generator.matrix)
        return Layer.from_operator(step, flavor="residual")

    matrix = _parse_weight_matrix(entry, index, seeds)
    try:
        projection = ProjectionMatrix.from_raw(matrix)
    except ValueError as exc:
        raise _fail(index, str(exc)) from None
    if kind == "differential":
        if "eps" not in entry:
            raise _fail(index, "differential layers need eps")
        activation = None
        if "activation" in entry:
            try:
                activation = Activation.parse(entry["activation"])
            except ValueError as exc:
                raise _fail(index, str(exc)) from None
        try:
            return Layer.differential(projection, entry["eps"], activation)
        except ValueError as exc:
            raise _fail(index, str(exc)) from None
    if kind == "residual":
        raise _fail(index, "kind residual needs residual:<eps>,<v>,<D> weights")
    if "activation" not in entry:
        raise _fail(index, "dense layers need an activation")
    try:
        activation = Activation.parse(entry["activation"])
    except ValueError as exc:
        raise _fail(index, str(exc)) from None
    try:
        return Layer.standard(projection, activation)
    except ValueError as exc:
        raise _fail(index, str(exc)) from None


def _parse_top_capacity(value, n: int) -> SpatialCapacity:
    if isinstance(value, str):
        if value == "uniform":
            return SpatialCapacity(np.full(n, 1.0 / n))
        if value.startswith("dirac:"):
            try:
                idx = int(value.split(":", 1)[1])
            except ValueError:
                raise SpecError(f"bad top_capacity {value!r}") from None
            if not 0 <= idx < n:
                raise SpecError(f"top_capacity index {idx} out of range [0, {n})")
            return SpatialCapacity.dirac(n, idx)
        raise SpecError(f"bad top_capacity {value!r}")
    if isinstance(value, list):
        if len(value) != n:
            raise SpecError(f"top_capacity has {len(value)} entries, chain needs {n}")
        try:
            return SpatialCapacity(np.asarray(value, dtype=float))
        except ValueError as exc:
            raise SpecError(f"bad top_capacity: {exc}") from None
    raise SpecError("top_capacity must be a vector, dirac:<index>, or uniform")


def parse_network_spec(document) -> NetworkSpec:
    """Validate an architecture document and build its chain and probe."""
    if not isinstance(document, dict):
        raise SpecError("spec must be a JSON object")
    unknown = set(document) - {"layers", "top_capacity"}
    if unknown:
        raise SpecError(f"unknown fields {sorted(unknown)}")
    layers_doc = document.get("layers")
    if not isinstance(layers_doc, list) or not layers_doc:
        raise SpecError("spec needs a non-empty layers list")
    if "top_capacity" not in document:
        raise SpecError("spec needs top_capacity")
    seeds: List[int] = []
    layers = [_build_layer(entry, i, seeds) for i, entry in enumerate(layers_doc)]
    for i, (a, b) in enumerate(zip(layers, layers[1:])):
        if a.n_out != b.n_in:
            raise SpecError(
                f"layer {i + 1}: n_in = {b.n_in} does not match layer {i} n_out = {a.n_out}"
            )
    chain = LayerChain(tuple(layers))
    top = _parse_top_capacity(document["top_capacity"], chain.n_out)
    return NetworkSpec(document=document, chain=chain, top=top, seeds=tuple(seeds))


def load_network_spec(path: str) -> NetworkSpec:
    try:
        with open(path, "r") as handle:
            document = json.load(handle)
    except OSError:
        raise SpecError(f"cannot read spec file {path!r}") from None
    except json.JSONDecodeError as exc:
        raise SpecError(f"spec file {path!r} is not valid JSON: {exc}") from None
    return parse_network_spec(document)


def _write_text(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="\n") as handle:
            handle.write(text)


def _emit_json(doc: dict, path: Optional[str]) -> None:
    _write_text(canonical_dumps(doc) + "\n", path)


def _profiles_csv(profiles: Sequence[SpatialCapacity]) -> str:
    lines = ["layer,coordinate,kappa"]
    for layer, profile in enumerate(profiles):
        for coordinate, kappa in enumerate(profile.values):
            lines.append(f"{layer},{coordinate},{float(kappa)!r}")
    return "\n".join(lines) + "\n"


def cmd_nu(args) -> int:
    activation = Activation.parse(args.activation)
    log.info("decoupling scale for %s", activation.spec())
    if args.mc is None:
        _emit_json({"nu": decoupling_nu(activation)}, args.out)
        return 0
    report = estimate_nu_monte_carlo(activation, args.mc, args.seed)
    _emit_json(
        {
            "n_samples": report.n_samples,
            "nu": report.nu,
            "nu_hat": report.nu_hat,
            "stderr": report.stderr,
        },
        args.out,
    )
    return 0


def _run_chain(args, single_layer: bool) -> int:
    spec = load_network_spec(args.specfile)
    if single_layer and len(spec.chain) != 1:
        raise SpecError(f"layer command needs exactly 1 layer, spec has {len(spec.chain)}")
    log.info("propagating through %d layers", len(spec.chain))
    profiles = propagate_chain(spec.chain, spec.top)
    report = RunReport(
        profiles=tuple(profiles),
        metadata={
            "seeds": list(spec.seeds),
            "spec_hash": spec.spec_hash(),
            "version": __version__,
        },
    )
    _emit_json(report.to_dict(), args.out)
    if args.csv is not None:
        _write_text(_profiles_csv(profiles), args.csv)
    return 0


def cmd_chain(args) -> int:
    return _run_chain(args, single_layer=False)


def cmd_layer(args) -> int:
    return _run_chain(args, single_layer=True)


def cmd_pde(args) -> int:
    generator = residual_generator(args.n, args.v, args.D, args.boundary)
    cfg = DeepLimitConfig(eps=args.eps, L=args.L)
    probe = args.probe if args.probe is not None else args.n // 2
    kappa = SpatialCapacity.dirac(args.n, probe)
    log.info("pde comparison: n=%d eps=%g L=%d", args.n, args.eps, args.L)
    report = compare_markov_pde(generator, cfg, kappa, refinements=args.refinements)
    final = evolve_markov(generator, cfg, kappa)[-1]
    idx = np.arange(args.n)
    mean = float((idx * final.values).sum() / final.total)
    var = float(((idx - mean) ** 2 * final.values).sum() / final.total)
    _emit_json(
        {
            "boundary_flagged": report.boundary_flagged,
            "eps_levels": list(report.eps_levels),
            "markov_std": float(np.sqrt(max(var, 0.0))),
            "orders": list(report.orders),
            "overall_order": report.overall_order,
            "rel_errors": list(report.rel_errors),
            "sup_errors": list(report.sup_errors),
        },
        args.out,
    )
    return 0


def _final_std(report) -> float:
    return report.per_depth_std[-1][1]


def cmd_erf(args) -> int:
    if args.specfile is not None:
        spec = load_network_spec(args.specfile)
        probe = args.probe if args.probe is not None else spec.chain.n_out // 2
        report = erf_profile(spec.chain, probe)
        sub_report = None
        if args.ratio_depth is not None:
            if not 1 <= args.ratio_depth <= len(spec.chain):
                raise SpecError(f"ratio depth must be in [1, {len(spec.chain)}]")
            sub = LayerChain(spec.chain.layers[len(spec.chain) - args.ratio_depth :])
            sub_report = erf_profile(sub, probe)
    else:
        generator = residual_generator(args.n, args.v, args.D, args.boundary)
        probe = args.probe if args.probe is not None else args.n // 2
        report = erf_profile(generator, probe, DeepLimitConfig(eps=args.eps, L=args.L))
        sub_report = None
        if args.ratio_depth is not None:
            sub_cfg = DeepLimitConfig(eps=args.eps, L=args.ratio_depth)
            sub_report = erf_profile(generator, probe, sub_cfg)
    doc = report.to_dict()
    if sub_report is not None:
        doc["ratio_depth"] = args.ratio_depth
        doc["width_ratio"] = _final_std(report) / _final_std(sub_report)
    _emit_json(doc, args.out)
    return 0


def _parse_uniform_tokens(tokens: Sequence[str]) -> Tuple[int, int]:
    values = {}
    for token in tokens:
        name, _, raw = token.partition("=")
        if name not in ("r", "L") or not raw:
            raise SpecError(f"expected r=<int> and L=<int>, got {token!r}")
        try:
            values[name] = int(raw)
        except ValueError:
            raise SpecError(f"expected r=<int> and L=<int>, got {token!r}") from None
    if set(values) != {"r", "L"}:
        raise SpecError("uniform mode needs both r=<int> and L=<int>")
    return values["r"], values["L"]


def cmd_shatter(args) -> int:
    if (args.specfile is None) == (args.uniform is None):
        raise SpecError("shatter needs a spec file or --uniform r=<int> L=<int>")
    if args.uniform is not None:
        r, depth = _parse_uniform_tokens(args.uniform)
        _emit_json({"L": depth, "r": r, "uniform_weight": uniform_path_weight(r, depth)}, args.out)
        return 0
    spec = load_network_spec(args.specfile)
    r = args.r if args.r is not None else spec.chain.n_in
    report = shatter_analysis(spec.chain, r, eps=args.eps)
    _emit_json(report.to_dict(), args.out)
    return 0


def cmd_verify(args) -> int:
    selector = tuple(int(part) for part in args.selector.split(","))
    weights = np.random.default_rng(args.seed).standard_normal((args.n, args.m))
    config = ExperimentConfig(
        p=ProjectionMatrix.from_raw(weights),
        activation=Activation.parse(args.activation),
        param_selector=selector,
        n_samples=args.mc,
        seed=args.seed,
    )
    log.info("verification run: n=%d m=%d N=%d", args.n, args.m, args.mc)
    report = empirical_spatial_capacity(config)
    _emit_json(report.to_dict(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capnet",
        description="Capacity allocation analyses for layered networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_nu = sub.add_parser("nu", help="decoupling scale of an activation")
    p_nu.add_argument("activation")
    p_nu.add_argument("--mc", type=int, help="Monte Carlo sample count")
    p_nu.add_argument("--seed", type=int, default=0)
    p_nu.add_argument("--out")
    p_nu.set_defaults(handler=cmd_nu)

    for name, aliases, handler in (
        ("chain", ["propagate"], cmd_chain),
        ("layer", [], cmd_layer),
    ):
        p_run = sub.add_parser(name, aliases=aliases, help="propagate a capacity profile")
        p_run.add_argument("specfile")
        p_run.add_argument("--out")
        p_run.add_argument("--csv")
        p_run.set_defaults(handler=handler)

    p_pde = sub.add_parser("pde", help="Markov chain against the diffusion closed form")
    p_pde.add_argument("--n", type=int, default=201)
    p_pde.add_argument("--eps", type=float, default=0.1)
    p_pde.add_argument("--L", type=int, default=100)
    p_pde.add_argument("--D", type=float, default=1.0)
    p_pde.add_argument("--v", type=float, default=0.0)
    p_pde.add_argument("--boundary", choices=["periodic", "reflecting"], default="periodic")
    p_pde.add_argument("--probe", type=int)
    p_pde.add_argument("--refinements", type=int, default=2)
    p_pde.add_argument("--out")
    p_pde.set_defaults(handler=cmd_pde)

    p_erf = sub.add_parser("erf", help="effective receptive field widths")
    p_erf.add_argument("specfile", nargs="?")
    p_erf.add_argument("--n", type=int, default=201)
    p_erf.add_argument("--eps", type=float, default=0.1)
    p_erf.add_argument("--L", type=int, default=100)
    p_erf.add_argument("--D", type=float, default=1.0)
    p_erf.add_argument("--v", type=float, default=0.0)
    p_erf.add_argument("--boundary", choices=["periodic", "reflecting"], default="periodic")
    p_erf.add_argument("--probe", type=int)
    p_erf.add_argument("--ratio-depth", type=int, dest="ratio_depth")
    p_erf.add_argument("--out")
    p_erf.set_defaults(handler=cmd_erf)

    p_shatter = sub.add_parser("shatter", help="path-weight analysis")
    p_shatter.add_argument("specfile", nargs="?")
    p_shatter.add_argument("--uniform", nargs=2, metavar=("r=R", "L=L"))
    p_shatter.add_argument("--r", type=int)
    p_shatter.add_argument("--eps", type=float)
    p_shatter.add_argument("--out")
    p_shatter.set_defaults(handler=cmd_shatter)

    p_verify = sub.add_parser("verify", help="Monte Carlo check of the closed forms")
    p_verify.add_argument("--n", type=int, default=8)
    p_verify.add_argument("--m", type=int, default=8)
    p_verify.add_argument("--selector", default="1,4,6")
    p_verify.add_argument("--activation", default="pseudo_random")
    p_verify.add_argument("--mc", type=int, default=160000)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out")
    p_verify.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    level_name = os.environ.get("CAPNET_LOG", "warn").lower()
    if level_name not in _LOG_LEVELS:
        print(
            f"error: CAPNET_LOG must be one of {sorted(_LOG_LEVELS)}, got {level_name!r}",
            file=sys.stderr,
        )
        return 2
    logging.basicConfig(
        level=_LOG_LEVELS[level_name],
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    log.setLevel(_LOG_LEVELS[level_name])
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except StabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
