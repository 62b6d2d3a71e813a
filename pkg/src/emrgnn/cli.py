"""Command-line entry point.

Subcommands: ``train``, ``propagate``, ``oracles``, ``gen-sbm``, ``inspect``.
Exit codes: 0 success, 1 validation error, 2 numerical failure.

Configuration files are INI-style with sections ``[data]``, ``[train]``,
``[hyper]``, ``[rcl]`` and ``[sbm]``. ``[data] manifest = <path>`` points at a
dataset; without it an ``[sbm]`` section generates one in memory. Any key can
be overridden with ``--set section.key=value``.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import RclSettings
from .data import Dataset, SbmSpec, generate_sbm, load_dataset, write_dataset
from .enmp import (
    DENSE_CAP,
    FIXED,
    UNIFORM,
    EnmpHyper,
    appnp_averaged,
    closed_form_solve,
    gcn_averaged,
    ppr_matrix,
    propagate,
)
from .errors import NumericalError, ValidationError
from .graph import build_graph, normalize
from .model import (
    TrainConfig,
    coefficient_count,
    config_echo,
    load_checkpoint,
    parameter_count,
    rgcn_parameter_count,
    save_checkpoint,
    train,
)

log = logging.getLogger("emrgnn")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
SECTIONS = ("data", "train", "hyper", "rcl", "sbm")
REPORT_VERSION = 1


# ---------------------------------------------------------------------------
# config handling


def _parse_bool(text, where):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValidationError(f"{where}: expected true/false, got {text!r}")


def _parse_mu(text, where):
    """``"0.2,0.8"`` for one vector, rows separated by ``;`` for a per-layer array."""
    try:
        rows = [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]
    except ValueError:
        raise ValidationError(f"{where}: expected comma-separated numbers, got {text!r}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValidationError(f"{where}: ragged or empty coefficient rows")
    return np.array(rows[0] if len(rows) == 1 else rows)


def _parse_relations(text, where):
    """``"0.05:0.005, 0.01:0.01"`` -> ``((0.05, 0.005), (0.01, 0.01))``."""
    out = []
    for item in text.split(","):
        parts = item.strip().split(":")
        try:
            out.append((float(parts[0]), float(parts[1])))
        except (ValueError, IndexError):
            raise ValidationError(f"{where}: expected 'p_in:p_out' pairs, got {item.strip()!r}") from None
    return tuple(out)


def _coerce(cls, key, text, where):
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in ("rcl", "hyper")}
    if key not in fields:
        raise ValidationError(f"{where}: unknown key {key!r} (valid: {', '.join(sorted(fields))})")
    default = fields[key].default
    if default is dataclasses.MISSING and fields[key].default_factory is not dataclasses.MISSING:
        default = fields[key].default_factory()
    if key == "fixed_mu":
        return _parse_mu(text, where)
    if key == "relations":
        return _parse_relations(text, where)
    if key in ("relation_names",):
        return tuple(v.strip() for v in text.split(",") if v.strip())
    if key == "split_fractions":
        try:
            return tuple(float(v) for v in text.split(","))
        except ValueError:
            raise ValidationError(f"{where}: expected three comma-separated fractions") from None
    try:
        if isinstance(default, bool):
            return _parse_bool(text, where)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ValidationError(f"{where}: cannot parse {text!r} as {type(default).__name__}") from None
    return text.strip()


def read_config(path=None, overrides=()) -> dict[str, dict[str, tuple[str, str]]]:
    """Raw ``section -> key -> (value, where)`` map after applying overrides."""
    raw: dict[str, dict[str, tuple[str, str]]] = {s: {} for s in SECTIONS}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        base = path.parent
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ValidationError(f"{path}: {exc.message if hasattr(exc, 'message') else exc}") from None
        for section in cp.sections():
            if section not in SECTIONS:
                raise ValidationError(f"{path}: unknown section [{section}] (valid: {', '.join(SECTIONS)})")
            for key, value in cp.items(section):
                raw[section][key] = (value, f"{path} [{section}] {key}")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError(f"--set {item!r}: expected section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if section not in SECTIONS:
            raise ValidationError(f"--set {item!r}: unknown section {section!r}")
        raw[section][key.strip()] = (value.strip(), f"--set {lhs.strip()}")
    if "manifest" in raw["data"]:
        value, where = raw["data"]["manifest"]
        # config-file paths resolve against the config's directory, --set paths against the cwd
        if not where.startswith("--set"):
            raw["data"]["manifest"] = (str(base / value), where)
    unknown = set(raw["data"]) - {"manifest"}
    if unknown:
        raise ValidationError(f"[data]: unknown key {sorted(unknown)[0]!r} (valid: manifest)")
    return raw


def _build(cls, section: dict[str, tuple[str, str]], **extra):
    kwargs = {k: _coerce(cls, k, v, where) for k, (v, where) in section.items()}
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        names = ", ".join(sorted(section)) or "defaults"
        raise ValidationError(f"{exc} (from {names})") from None


def build_train_config(raw) -> TrainConfig:
    rcl = _build(RclSettings, raw["rcl"])
    hyper = _build(EnmpHyper, raw["hyper"], rcl=rcl)
    return _build(TrainConfig, raw["train"], hyper=hyper)


def build_sbm_spec(raw) -> SbmSpec:
    return _build(SbmSpec, raw["sbm"])


def load_data(raw) -> tuple[Dataset, dict]:
    if "manifest" in raw["data"]:
        path = raw["data"]["manifest"][0]
        return load_dataset(path), {"manifest": str(path)}
    spec = build_sbm_spec(raw)
    return generate_sbm(spec), {"sbm": _jsonable(dataclasses.asdict(spec))}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# train


def build_report(config: TrainConfig, ds: Dataset, data_echo: dict, result, timings: dict) -> dict:
    R = ds.graph.num_relations
    d, K = int(config.hidden), int(config.hyper.K)
    return {
        "version": REPORT_VERSION,
        "config": {**config_echo(config), "data": data_echo},
        "dataset": {"name": ds.name, "n": ds.graph.n, "relations": list(ds.graph.relation_names),
                    "features": int(ds.features.shape[1]), "classes": ds.num_classes},
        "history": [dataclasses.asdict(r) for r in result.history],
        "best_epoch": result.best_epoch,
        "metrics": {k: dataclasses.asdict(m) for k, m in result.metrics.items()},
        "mu_history": [np.asarray(m).tolist() for m in result.trace.mu_per_layer],
        "parameters": {
            "trainable": parameter_count(result.params),
            "relation_coefficients": coefficient_count(config.hyper, R),
            "rgcn_contrast": {"width": d, "layers": K, "relations": R, "bases": R,
                              "count": rgcn_parameter_count(d, K, R, R)},
        },
        "timings": timings,
    }


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    raw = read_config(args.config, args.set)
    config = build_train_config(raw)
    ds, data_echo = load_data(raw)
    t1 = time.perf_counter()
    result = train(ds.features, ds.graph, ds.labels, ds.splits, config)
    t2 = time.perf_counter()
    report = build_report(config, ds, data_echo, result,
                          {"load_seconds": t1 - t0, "train_seconds": t2 - t1})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(out / "report.json", report)
    save_checkpoint(out / "checkpoint.npz", result.params, report["config"])
    te = result.metrics["test"]
    print(f"best epoch {result.best_epoch}: test accuracy {te.accuracy:.4f}, "
          f"macro recall {te.macro_recall:.4f}")
    print(f"wrote {out / 'report.json'} and {out / 'checkpoint.npz'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# propagate


def _hyper_from_args(args, R: int) -> EnmpHyper:
    kw = dict(lambda1=args.lambda1, lambda2=args.lambda2, K=args.K,
              rcl=RclSettings(max_iters=args.rcl_iters, tol=args.rcl_tol))
    if args.fixed_mu is not None:
        mu = _parse_mu(args.fixed_mu, "--fixed-mu")
        if mu.shape[-1] != R:
            raise ValidationError(f"--fixed-mu has {mu.shape[-1]} entries for {R} relations")
        return EnmpHyper(coefficient_mode=FIXED, fixed_mu=mu, **kw)
    return EnmpHyper(coefficient_mode=args.mode, **kw)


def cmd_propagate(args) -> int:
    ds = load_dataset(args.manifest)
    rels = normalize(ds.graph)
    H = np.eye(ds.graph.n) if args.identity else ds.features
    hyper = _hyper_from_args(args, ds.graph.num_relations)
    trace = propagate(H, rels, hyper)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "z.csv", trace.output, delimiter=",", fmt="%.17g")
    header = ",".join(ds.graph.relation_names)
    np.savetxt(out / "mu.csv", np.array(trace.mu_per_layer), delimiter=",", fmt="%.17g",
               header=header, comments="")
    print(f"propagated {hyper.K} layers over {ds.graph.num_relations} relations; wrote {out}")
    print("final-layer mu: " + ", ".join(f"{n}={m:.6f}" for n, m in zip(ds.graph.relation_names,
                                                                       trace.mu_per_layer[-1])))
    if args.check_closed_form:
        if hyper.coefficient_mode not in (FIXED, UNIFORM):
            raise ValidationError("--check-closed-form needs --fixed-mu or --mode uniform")
        mus = np.array(trace.mu_per_layer)
        if not np.allclose(mus, mus[0], atol=0, rtol=0):
            raise ValidationError("--check-closed-form needs one coefficient vector for all layers")
        Z = closed_form_solve(H, rels, mus[0], hyper.lambda1, dense_cap=args.dense_cap)
        err = np.linalg.norm(trace.output - Z) / max(np.linalg.norm(Z), 1e-300)
        ok = err <= args.closed_form_tol
        print(f"closed-form relative error {err:.3e} (tol {args.closed_form_tol:g}): {'pass' if ok else 'FAIL'}")
        if not ok:
            return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracles


def oracle_checks(H, rels, lambda1: float, steps: int = 300, corrupt_lambda_map: bool = False):
    """Equivalence checks between the iterative scheme and its dense oracles.

    Returns ``(name, error, tolerance)`` rows. ``corrupt_lambda_map`` swaps the
    teleport mapping to ``lambda1 / (1 + lambda1)`` as a negative control.
    """
    R = len(rels)
    mu = np.full(R, 1.0 / R)
    rows = []
    Z_cf = closed_form_solve(H, rels, mu, lambda1)
    hyper = EnmpHyper(lambda1=lambda1, K=steps, coefficient_mode=UNIFORM)
    Z_it = propagate(H, rels, hyper).output
    rows.append((f"iterate {steps} steps vs closed form", _rel(Z_it, Z_cf), 1e-8))
    alpha = lambda1 / (1 + lambda1) if corrupt_lambda_map else 1.0 / (1.0 + lambda1)
    rows.append(("closed form vs PPR matrix", _abs(Z_cf, ppr_matrix(rels, mu, alpha) @ H), 1e-10))
    for a in (0.1, 0.5):
        lam = a / (1 - a) if corrupt_lambda_map else 1.0 / a - 1.0
        Z = propagate(H, rels, EnmpHyper(lambda1=lam, K=10, coefficient_mode=UNIFORM)).output
        rows.append((f"uniform propagation vs APPNP (alpha={a})", _abs(Z, appnp_averaged(H, rels, 10, a)), 1e-10))
    big = 1e12
    Z1 = propagate(H, rels, EnmpHyper(lambda1=big, K=1, coefficient_mode=UNIFORM)).output
    rows.append(("large lambda1 step vs averaged GCN", _rel(Z1, gcn_averaged(H, rels)), 1e-8))
    return rows


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _abs(a, b):
    return float(np.max(np.abs(a - b))) if np.size(a) else 0.0


def cmd_oracles(args) -> int:
    if args.manifest is not None:
        ds = load_dataset(args.manifest)
        graph, H, label = ds.graph, ds.features, str(args.manifest)
    else:
        if args.random_n < 2:
            raise ValidationError(f"--random-n must be >= 2, got {args.random_n}")
        rng = np.random.default_rng(args.seed)
        iu, ju = np.triu_indices(args.random_n, 1)
        edges = []
        for _ in range(args.random_relations):
            keep = rng.random(iu.size) < args.random_p
            edges.append(np.stack([iu[keep], ju[keep]], axis=1))
        graph = build_graph(edges, args.random_n)
        H = rng.normal(size=(args.random_n, args.random_d))
        label = f"random graph n={args.random_n} R={args.random_relations} seed={args.seed}"
    if graph.n > args.dense_cap:
        raise ValidationError(f"graph has {graph.n} nodes, above the dense cap {args.dense_cap}")
    rels = normalize(graph)
    rows = oracle_checks(H, rels, args.lambda1, corrupt_lambda_map=args.corrupt_lambda_map)
    print(f"oracle checks on {label} (lambda1={args.lambda1:g})")
    width = max(len(r[0]) for r in rows)
    failed = 0
    for name, err, tol in rows:
        ok = err <= tol
        failed += not ok
        print(f"  {name:<{width}}  err={err:.3e}  tol={tol:.0e}  {'pass' if ok else 'FAIL'}")
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# gen-sbm / inspect


def cmd_gen_sbm(args) -> int:
    raw = read_config(args.spec, args.set)
    spec = build_sbm_spec(raw)
    ds = generate_sbm(spec)
    path = write_dataset(args.out, ds, name=args.name)
    sizes = ", ".join(f"{n}: {ds.graph.relations[r].nnz // 2} edges" for r, n in enumerate(ds.graph.relation_names))
    print(f"wrote {path} (n={spec.n}, {sizes})")
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    if path.suffix == ".npz":
        params, echo = load_checkpoint(path)
        print(f"checkpoint {path}")
        for name, arr in params.named().items():
            print(f"  {name:7s} shape={tuple(arr.shape)}")
        print(f"  trainable parameters: {parameter_count(params)}")
        print("  config: " + json.dumps(echo, sort_keys=True))
        return EXIT_OK
    try:
        report = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a checkpoint (.npz) or JSON report ({exc})") from None
    for key in ("metrics", "history", "mu_history", "parameters"):
        if key not in report:
            raise ValidationError(f"{path}: report lacks field {key!r}")
    ds = report.get("dataset", {})
    print(f"report {path}: dataset {ds.get('name')} (n={ds.get('n')}, relations={ds.get('relations')})")
    print(f"  epochs run {len(report['history'])}, best epoch {report.get('best_epoch')}")
    for split, m in sorted(report["metrics"].items()):
        print(f"  {split:5s} accuracy {m['accuracy']:.4f}  macro recall {m['macro_recall']:.4f}  loss {m['loss']:.4f}")
    names = ds.get("relations") or [f"r{i}" for i in range(len(report["mu_history"][0]))]
    print("  per-layer mu:")
    for k, mu in enumerate(report["mu_history"], 1):
        print(f"    layer {k:3d}: " + "  ".join(f"{n}={m:.4f}" for n, m in zip(names, mu)))
    p = report["parameters"]
    print(f"  trainable parameters {p['trainable']} (+{p['relation_coefficients']} solved coefficients); "
          f"relational-GCN contrast {p['rgcn_contrast']['count']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emrgnn", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write report + checkpoint")
    t.add_argument("--config", help="INI config file")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("propagate", help="run the propagation stack without training")
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--K", type=int, default=8)
    pr.add_argument("--lambda1", type=float, default=4.0)
    pr.add_argument("--lambda2", type=float, default=1.0)
    pr.add_argument("--mode", choices=("learned", "uniform"), default="learned")
    pr.add_argument("--fixed-mu", help="comma-separated coefficients (overrides --mode)")
    pr.add_argument("--identity", action="store_true", help="use identity features")
    pr.add_argument("--rcl-iters", type=int, default=1000)
    pr.add_argument("--rcl-tol", type=float, default=1e-8)
    pr.add_argument("--check-closed-form", action="store_true")
    pr.add_argument("--closed-form-tol", type=float, default=1e-8)
    pr.add_argument("--dense-cap", type=int, default=DENSE_CAP)
    pr.set_defaults(func=cmd_propagate)

    o = sub.add_parser("oracles", help="dense equivalence checks, pass/fail table")
    src = o.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--random-n", type=int)
    o.add_argument("--random-relations", type=int, default=3)
    o.add_argument("--random-p", type=float, default=0.1)
    o.add_argument("--random-d", type=int, default=8)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--lambda1", type=float, default=2.0)
    o.add_argument("--dense-cap", type=int, default=DENSE_CAP)
    o.add_argument("--corrupt-lambda-map", action="store_true", help="negative control; checks should fail")
    o.set_defaults(func=cmd_oracles)

    g = sub.add_parser("gen-sbm", help="write a synthetic block-model dataset")
    g.add_argument("--spec", help="INI file with an [sbm] section")
    g.add_argument("--set", action="append", default=[], metavar="sbm.KEY=VALUE")
    g.add_argument("--out", required=True)
    g.add_argument("--name", default="sbm")
    g.set_defaults(func=cmd_gen_sbm)

    i = sub.add_parser("inspect", help="summarise a checkpoint (.npz) or report (.json)")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
