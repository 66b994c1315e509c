"""``kolmopinn`` command-line interface.

Exit codes: 0 success, 1 configuration / usage error, 2 numerical failure
(or a verify suite with failing checks).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .config import ConfigError, RunConfig, build_architecture, build_pde, load_config, optimizer_config, parse_config
from .derivatives import NumericalFailure
from .pde import CapabilityError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _load(args) -> RunConfig:
    overrides = {"seed": args.seed, "threads": args.threads, "output": args.out}
    if args.config is None:
        return parse_config({"seed": args.seed if args.seed is not None else 0},
                            threads=args.threads, output=args.out)
    return load_config(args.config, **overrides)


def _provenance(cfg: RunConfig) -> dict:
    return {"config": cfg.echo(), "config_file": cfg.source}


def cmd_train(cfg: RunConfig, args) -> int:
    from .network import random_params, save_checkpoint
    from .training import generalization_error_mc, sample_sets, train

    pde = build_pde(cfg)
    arch = build_architecture(cfg)
    col = cfg.section("collocation")
    init_seed = cfg.seed_for("architecture", "init")
    col_seed = cfg.seed_for("collocation")
    eval_seed = cfg.seed_for("evaluation")
    params0 = random_params(arch, init_seed)
    sets = sample_sets(pde, int(col["interior"]), int(col["spatial"]), int(col["temporal"]), col_seed)
    report = train(params0, pde, sets, optimizer_config(cfg))
    gen = generalization_error_mc(report.params, pde, int(cfg.section("evaluation")["points"]), eval_seed)

    out = cfg.output
    seeds = {"init": init_seed, "collocation": col_seed, "evaluation": eval_seed}
    save_checkpoint(report.params, out / "checkpoint.txt", {"seed": cfg.seed})
    artifacts.write_csv(out / "loss_history.csv", ("iteration", "interior", "spatial", "temporal", "total", "best_total"),
                        report.history, {"seeds": seeds})
    artifacts.write_json(out / "train_summary.json", {
        **_provenance(cfg),
        "seeds": seeds,
        "n_params": arch.n_params,
        "training_error": report.parts(),
        "generalization_error_mc": {k: {"estimate": v.estimate, "stderr": v.stderr} for k, v in gen.items()},
        "optimizer_stages": report.stages,
        "iterations": len(report.history),
    })
    print(f"training error {report.total:.6g} (interior {report.interior:.3g}, spatial {report.spatial:.3g}, "
          f"temporal {report.temporal:.3g}) in {report.seconds:.1f} s")
    print(f"wrote {out / 'checkpoint.txt'}")
    return EXIT_OK


def cmd_certify(cfg: RunConfig, args) -> int:
    from .bounds import lipschitz_ledger
    from .certificates import certify
    from .network import load_checkpoint

    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.output / "checkpoint.txt"
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    params = load_checkpoint(ckpt)
    pde = build_pde(cfg)
    if params.arch.n_inputs != pde.dim + 1:
        raise ConfigError("checkpoint input width does not match the PDE dimension")
    cc = cfg.section("certificate")
    C2 = None if cc.get("C2") is None else float(cc["C2"])
    cert = certify(params, pde, cc["c2_mode"], int(cfg.section("evaluation")["points"]),
                   cfg.seed_for("certificate"), C2)
    body = {**_provenance(cfg), "checkpoint": str(ckpt), **cert.to_dict(),
            "lipschitz_ledger": lipschitz_ledger(pde, params.arch).to_dict()}
    artifacts.write_json(cfg.output / "certificate.json", body)
    print(f"L2 error bound (squared): {cert.bound:.6g}  [C2 mode {cert.c2_mode}"
          f"{'' if cert.rigorous else ', NON-RIGOROUS'}]")
    if cert.measured is not None:
        print(f"measured: {cert.measured:.6g}")
        print(f"measured <= bound: {'true' if cert.valid else 'false'}")
    return EXIT_OK


def _dynkin_points(cfg: RunConfig, pde):
    dk = cfg.section("dynkin")
    d, a, b, T = pde.dim, pde.lower, pde.upper, pde.horizon
    if dk.get("points") is not None:
        xs = np.atleast_2d(np.asarray(dk["points"], dtype=np.float64)).reshape(-1, d)
    else:
        g = int(dk["grid"])
        axis = a + (b - a) * (np.arange(g) + 0.5) / g
        if d <= 2:
            xs = np.stack([m.ravel() for m in np.meshgrid(*[axis] * d, indexing="ij")], axis=1)
        else:
            xs = np.repeat(axis[:, None], d, axis=1)
    ts = np.asarray(dk["times"] if dk.get("times") is not None else [T / 4, T / 2, 3 * T / 4, T], dtype=np.float64)
    X = np.repeat(xs, ts.size, axis=0)
    Tt = np.tile(ts, xs.shape[0])
    return X, Tt


def cmd_dynkin(cfg: RunConfig, args) -> int:
    from .dynkin import riemann_reference

    pde = build_pde(cfg, attach_boundary=False)
    dk = cfg.section("dynkin")
    X, Tt = _dynkin_points(cfg, pde)
    seed = cfg.seed_for("dynkin")
    est, se = riemann_reference(pde, X, Tt, int(dk["N"]), int(dk["M"]), seed, dk.get("scheme"),
                                dk["rule"], int(dk["substeps"]), cfg.threads)
    header = [f"x{i + 1}" for i in range(pde.dim)] + ["t", "estimate", "stderr"]
    rows = [list(X[k]) + [Tt[k], est[k], se[k]] for k in range(len(Tt))]
    if pde.exact is not None:
        exact = pde.exact.value(X, Tt)
        header += ["exact", "abs_error"]
        rows = [r + [exact[k], abs(est[k] - exact[k])] for k, r in enumerate(rows)]
    artifacts.write_csv(cfg.output / "dynkin.csv", header, rows, {"config": cfg.echo(), "seed": seed})
    print(f"wrote {len(rows)} estimates to {cfg.output / 'dynkin.csv'}")
    return EXIT_OK


def cmd_sample_size(cfg: RunConfig, args) -> int:
    from .bounds import lipschitz_ledger, sample_size_generic, sample_size_specialized

    ss = cfg.section("sample_size")
    kind = ss["kind"]
    eps = float(ss["eps"])
    comments = {"config": cfg.echo()}
    if kind == "generic":
        try:
            res = sample_size_generic(int(ss["k"]), float(ss["a"]), float(ss["c"]), float(ss["L"]), eps,
                                      float(ss.get("eta") or 0.0), ss.get("mode", "probabilistic"))
        except KeyError as exc:
            raise ConfigError(f"generic sample size needs key {exc}") from None
        rows = [("all", res.raw, res.count)]
    elif kind in ("pinn", "supervised"):
        pde = build_pde(cfg, attach_boundary=False)
        arch = build_architecture(cfg)
        plan = sample_size_specialized(pde, arch, eps, kind, ss.get("c_q"))
        rows = list(plan.rows())
        artifacts.write_json(cfg.output / "lipschitz_ledger.json",
                             {**_provenance(cfg), **lipschitz_ledger(pde, arch).to_dict()})
    else:
        raise ConfigError(f"unknown sample_size.kind {kind!r} (pinn | supervised | generic)")
    artifacts.write_csv(cfg.output / "sample_size.csv", ("part", "raw", "count"), rows, comments)
    for part, raw, count in rows:
        print(f"{part:>9}: raw {raw:.6g}  ->  M = {count}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    from .verify import SUITES, run_suite

    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_CONFIG
    checks = run_suite(args.suite, cfg.seed, cfg.threads)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    artifacts.write_csv(cfg.output / f"verify_{args.suite}.csv", ("check", "passed", "detail"),
                        [(n, ok, f'"{d}"') for n, ok, d in checks], {"config": cfg.echo()})
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_NUMERIC


def cmd_report(cfg: RunConfig, args) -> int:
    from .report import build_report

    for path in build_report(cfg):
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "certify": cmd_certify,
    "dynkin": cmd_dynkin,
    "sample-size": cmd_sample_size,
    "verify": cmd_verify,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the top-level seed")
    common.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("--out", help="output directory")
    parser = argparse.ArgumentParser(prog="kolmopinn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "certify":
            p.add_argument("--checkpoint", help="checkpoint file (default: <out>/checkpoint.txt)")
        if name == "verify":
            p.add_argument("suite", help="gradients | lipschitz | rates | certificate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command != "verify" and args.config is None:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
