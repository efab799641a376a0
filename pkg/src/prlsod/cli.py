"""``prlsod`` command line: supervision maps, evaluation, forward, gradient checks, toy training.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure
(non-finite values, divergence, or a failed gradient check).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import BORDER_RULES, NORMALIZE_MODES, DegenerateMaskError, direction_field, normalize_sdm, signed_distance_map
from .gradcheck import flip_sign, run_suite
from .imageio import ImageReadError, list_images, read_mask, read_rgb, resize, write_pfm, write_png
from .kernels import ShapeError
from .losses import LossWeights
from .metrics import BETA2, S_ALPHA, PairingError, evaluate_dir, evaluate_pair, write_report
from .net import FRDF_MODES, NetConfig, PRLNet, dry_run, expected_shapes
from .plotting import plot_loss_curves, plot_pr_curve, plot_sweep
from .tensor import NonFiniteError, Rng, load_named, no_grad, save_named
from .train import LOG_COLUMNS, DivergenceError, synthetic_pair, train_toy

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class NumericalFailure(RuntimeError):
    pass


# -- shared plumbing -------------------------------------------------------------


def default_seed() -> int:
    raw = os.environ.get("PRL_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"PRL_SEED must be an integer, got {raw!r}")


def load_config(path: str | None) -> tuple[NetConfig, LossWeights]:
    """Read ``[net]`` (NetConfig fields) and ``[loss]`` (LossWeights fields) from an INI file."""
    cfg, weights = NetConfig(), LossWeights()
    if not path:
        return cfg, weights
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    text = p.read_text()
    cfg = NetConfig.from_ini(text)
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if cp.has_section("loss"):
        known = set(asdict(weights))
        vals = {}
        for k, v in cp["loss"].items():
            if k not in known:
                raise ValueError(f"unknown loss config key {k!r}")
            vals[k] = float(v)
        weights = replace(weights, **vals)
    return cfg, weights


def constants(cfg: NetConfig, weights: LossWeights) -> dict:
    return {
        "lambda1": weights.lambda1,
        "lambda2": weights.lambda2,
        "frdf_iterations": cfg.frdf_iterations,
        "alpha_edge": weights.alpha_edge,
        "psi_eps": weights.psi_eps,
        "beta2": BETA2,
        "s_alpha": S_ALPHA,
    }


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, tuple):
        return list(v)
    return v


def write_manifest(path: Path, command: str, args: argparse.Namespace, extra: dict | None = None) -> None:
    """JSON record of version, seed, options and constants; no timestamps, so reruns match."""
    options = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    cfg, weights = getattr(args, "_cfg", NetConfig()), getattr(args, "_weights", LossWeights())
    body = {
        "version": __version__,
        "command": command,
        "seed": getattr(args, "seed", None),
        "options": {k: v for k, v in options.items() if not k.startswith("_")},
        "constants": constants(cfg, weights),
        "net": {k: _jsonable(v) for k, v in asdict(cfg).items()},
    }
    if extra:
        body.update(extra)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def _apply_overrides(args) -> None:
    cfg, weights = load_config(getattr(args, "config", None))
    over = {}
    if getattr(args, "frdf_mode", None):
        over["frdf_mode"] = args.frdf_mode
    if getattr(args, "K", None) is not None:
        over["frdf_iterations"] = args.K
    if getattr(args, "full_size", False):
        cfg = NetConfig.full(**{k: getattr(cfg, k) for k in ("frdf_iterations", "frdf_mode")})
    if over:
        cfg = replace(cfg, **over)
        cfg.validate()
    w = {}
    for name in ("lambda1", "lambda2"):
        if getattr(args, name, None) is not None:
            w[name] = getattr(args, name)
    if w:
        weights = replace(weights, **w)
    args._cfg, args._weights = cfg, weights


# -- gen-supervision ----------------------------------------------------------------


def cmd_gen_supervision(args) -> int:
    src = Path(args.mask)
    if src.is_dir():
        files = sorted(list_images(src).values())
        if not files:
            raise FileNotFoundError(f"no images in {src}")
    elif src.is_file():
        files = [src]
    else:
        raise FileNotFoundError(f"mask not found: {src}")
    out = _out_dir(args.out)
    failures, degenerate = [], []
    for f in files:
        try:
            mask = read_mask(f)
        except ImageReadError as exc:
            print(f"error: {exc}", file=sys.stderr)
            failures.append(f.name)
            continue
        try:
            sdm = normalize_sdm(signed_distance_map(mask, args.border_rule), args.normalize).normalized
            fld = direction_field(mask, args.border_rule)
            fx, fy = fld.fx, fld.fy
        except DegenerateMaskError as exc:
            print(f"warning: {f.name}: constant mask, writing zero maps", file=sys.stderr)
            sdm = fx = fy = exc.fallback
            degenerate.append(f.name)
        write_pfm(out / f"{f.stem}_sdm.pfm", sdm)
        write_pfm(out / f"{f.stem}_fx.pfm", fx)
        write_pfm(out / f"{f.stem}_fy.pfm", fy)
    write_manifest(
        out / "manifest.json",
        "gen-supervision",
        args,
        {"inputs": [f.name for f in files], "degenerate": degenerate, "failed": failures},
    )
    return EXIT_INVALID if failures else EXIT_OK


# -- eval ------------------------------------------------------------------------


def cmd_eval(args) -> int:
    report = evaluate_dir(args.pred, args.gt)
    report_path = Path(args.out)
    pr_path = Path(args.pr) if args.pr else report_path.with_name("pr.csv")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    pr_path.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, report_path, pr_path)
    P, R = report.mean_pr()
    plot_pr_curve(P, R, pr_path.with_suffix(".png"))
    write_manifest(report_path.with_name(report_path.stem + ".manifest.json"), "eval", args, {"images": [r.id for r in report.records]})
    agg = dict(zip(["s_measure", "e_measure", "mae", "mean_f", "max_f", "adaptive_f"], report.aggregate()))
    print(" ".join(f"{k}={v:.4f}" for k, v in agg.items()))
    return EXIT_OK


# -- forward ---------------------------------------------------------------------


def _load_pair(rgb_path, thermal_path, size: int):
    rgb = resize(read_rgb(rgb_path), size, "image")
    thermal = resize(read_rgb(thermal_path), size, "image")
    return rgb, thermal


def _write_predictions(out: Path, outputs) -> None:
    write_png(out / "saliency.png", outputs.saliency.data)
    write_pfm(out / "saliency.pfm", outputs.saliency.data)
    write_pfm(out / "sdm.pfm", outputs.sdm.data)
    write_pfm(out / "fx.pfm", outputs.field.data[..., 0])
    write_pfm(out / "fy.pfm", outputs.field.data[..., 1])


def cmd_forward(args) -> int:
    cfg = args._cfg
    if args.dry_run:
        got = dry_run(cfg)
        want = expected_shapes(cfg)
        rows = []
        ok = True
        for name, shape in want.items():
            match = got.get(name) == shape
            ok &= match
            rows.append([name, "x".join(map(str, got.get(name, ()))), "x".join(map(str, shape)), "ok" if match else "MISMATCH"])
        text = _csv_text(["tensor", "shape", "expected", "status"], rows)
        print(text, end="")
        if args.out:
            out = _out_dir(args.out)
            (out / "shapes.csv").write_text(text)
            write_manifest(out / "manifest.json", "forward", args, {"dry_run": True, "shapes_match": ok})
        return EXIT_OK if ok else EXIT_INVALID
    if not (args.rgb and args.thermal and args.out):
        raise ValueError("forward needs --rgb, --thermal and --out (or --dry-run)")
    rgb, thermal = _load_pair(args.rgb, args.thermal, cfg.image_size)
    net = PRLNet(cfg, Rng(args.seed))
    if args.ckpt:
        net.load_state_dict(load_named(args.ckpt))
    with no_grad():
        outputs = net(rgb, thermal)
    out = _out_dir(args.out)
    _write_predictions(out, outputs)
    write_manifest(out / "manifest.json", "forward", args, {"shapes": {k: list(v) for k, v in outputs.shapes().items()}})
    return EXIT_OK


# -- grad-check ------------------------------------------------------------------


def cmd_grad_check(args) -> int:
    result = run_suite(args.seed, args.instances, args.tol, tamper=flip_sign if args.inject_bug else None)
    for line in result.lines():
        print(line)
    status = "PASS" if result.passed else "FAIL"
    print(f"{status}: {sum(r.passed for r in result.reports)}/{len(result.reports)} operations within tol {args.tol:g}")
    return EXIT_OK if result.passed else EXIT_NUMERIC


# -- train-toy -------------------------------------------------------------------


def _training_inputs(args, size: int):
    if args.synthetic or not (args.rgb or args.thermal or args.mask):
        return synthetic_pair(size)
    if not (args.rgb and args.thermal and args.mask):
        raise ValueError("train-toy needs --rgb, --thermal and --mask together (or --synthetic)")
    rgb, thermal = _load_pair(args.rgb, args.thermal, size)
    mask = resize(read_mask(args.mask), size, "mask")
    return rgb, thermal, mask


def _run_training(args, rgb, thermal, mask, cfg, weights, echo: bool):
    def show(entry):
        if echo and (entry.step % args.log_every == 0 or entry.step == args.steps):
            print("step {} l_prl={:.4f} l_sal={:.4f} l_sdm={:.4f} l_df={:.4f} mae={:.4f}".format(*entry.row()))

    return train_toy(
        rgb, thermal, mask, steps=args.steps, cfg=cfg, weights=weights, seed=args.seed, lr=args.lr,
        sdm_norm=args.normalize, border_rule=args.border_rule, callback=show,
    )


def _summary(result, mask) -> dict:
    last = result.history[-1]
    sal = result.final.saliency.data[..., 0]
    rec = evaluate_pair("train", np.clip(sal, 0.0, 1.0), mask)
    return {
        "l_prl_initial": result.initial_loss,
        "l_prl_final": last.l_prl,
        "reduction": result.reduction,
        "l_sal": last.l_sal,
        "l_sdm": last.l_sdm,
        "l_df": last.l_df,
        "mae": rec.mae,
        "s_measure": rec.s_measure,
        "e_measure": rec.e_measure,
        "max_f": rec.max_f,
    }


SWEEP_DEFAULTS = {"K": [0, 1, 2, 3, 4, 5, 6, 7, 8], "lambda1": [0.0, 0.5, 1.0, 2.0], "lambda2": [0.0, 0.5, 1.0, 2.0]}


def cmd_train_toy(args) -> int:
    cfg, weights = args._cfg, args._weights
    rgb, thermal, mask = _training_inputs(args, cfg.image_size)
    out = _out_dir(args.out)
    if args.sweep:
        return _sweep(args, rgb, thermal, mask, cfg, weights, out)
    result = _run_training(args, rgb, thermal, mask, cfg, weights, echo=not args.quiet)
    rows = [[_fmt(v) for v in e.row()] for e in result.history]
    (out / "loss.csv").write_text(_csv_text(LOG_COLUMNS, rows))
    steps = [e.step for e in result.history]
    plot_loss_curves(steps, {c: [getattr(e, c) for e in result.history] for c in ("l_prl", "l_sal", "l_sdm", "l_df")}, out / "loss.png")
    _write_predictions(out, result.final)
    save_named(out / "checkpoint.prlt", list(result.net.state_dict().items()))
    summary = _summary(result, mask)
    write_manifest(out / "manifest.json", "train-toy", args, {"summary": summary})
    print(f"l_prl {summary['l_prl_initial']:.4f} -> {summary['l_prl_final']:.4f} (reduction {summary['reduction']:.3f}), mae {summary['mae']:.4f}")
    return EXIT_OK


def _sweep(args, rgb, thermal, mask, cfg, weights, out: Path) -> int:
    name = args.sweep
    values = args.values if args.values else SWEEP_DEFAULTS[name]
    rows, series = [], {}
    for v in values:
        if name == "K":
            c, w = replace(cfg, frdf_iterations=int(v)), weights
        else:
            c, w = cfg, replace(weights, **{name: float(v)})
        c.validate()
        summary = _summary(_run_training(args, rgb, thermal, mask, c, w, echo=False), mask)
        if not args.quiet:
            print(f"{name}={v}: reduction {summary['reduction']:.3f} mae {summary['mae']:.4f} s {summary['s_measure']:.4f}")
        rows.append([_fmt(v)] + [_fmt(summary[k]) for k in summary])
        for k in ("mae", "s_measure", "e_measure", "max_f"):
            series.setdefault(k, []).append(summary[k])
    header = [name] + list(summary)
    (out / f"sweep_{name}.csv").write_text(_csv_text(header, rows))
    plot_sweep([float(v) for v in values], series, name, out / f"sweep_{name}.png")
    write_manifest(out / "manifest.json", "train-toy", args, {"sweep": name, "values": [float(v) for v in values]})
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prlsod", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, net=True):
        p.add_argument("--seed", type=int, default=default_seed(), help="seed (default: $PRL_SEED or 0)")
        if net:
            p.add_argument("--config", help="INI file with [net] and [loss] sections")
            p.add_argument("--frdf-mode", choices=FRDF_MODES, help="feature refinement mode (default warp)")

    p = sub.add_parser("gen-supervision", help="signed distance maps and direction fields from masks")
    p.add_argument("--mask", required=True, help="mask image or directory of masks")
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", choices=NORMALIZE_MODES, default="max-abs")
    p.add_argument("--border-rule", choices=BORDER_RULES, default="interface")
    common(p, net=False)
    p.set_defaults(func=cmd_gen_supervision)

    p = sub.add_parser("eval", help="score a prediction directory against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--pr", help="P-R CSV path (default: pr.csv beside the report)")
    common(p, net=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forward", help="run the network on one RGB-T pair")
    p.add_argument("--rgb")
    p.add_argument("--thermal")
    p.add_argument("--ckpt")
    p.add_argument("--out")
    p.add_argument("--dry-run", action="store_true", help="weightless pass that reports the shape chain")
    p.add_argument("--full-size", action="store_true", help="use the full-size configuration (384 input, c=128)")
    p.add_argument("--K", type=int, help="refinement iterations")
    common(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("grad-check", help="compare reverse-mode gradients with finite differences")
    p.add_argument("--instances", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--inject-bug", action="store_true", help="negate one analytic gradient per case (the check must fail)")
    common(p, net=False)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("train-toy", help="overfit one RGB-T pair end to end")
    p.add_argument("--rgb")
    p.add_argument("--thermal")
    p.add_argument("--mask")
    p.add_argument("--synthetic", action="store_true", help="use the built-in rectangle pair")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--K", type=int, help="refinement iterations")
    p.add_argument("--normalize", choices=NORMALIZE_MODES, default="max-abs")
    p.add_argument("--border-rule", choices=BORDER_RULES, default="interface")
    p.add_argument("--sweep", choices=sorted(SWEEP_DEFAULTS), help="train once per value and tabulate")
    p.add_argument("--values", type=float, nargs="+", help="sweep values")
    p.add_argument("--log-every", type=int, default=20)
    p.add_argument("--quiet", action="store_true")
    common(p)
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "steps", 1) < 0 or getattr(args, "instances", 1) < 1:
            raise ValueError("--steps must be >= 0 and --instances >= 1")
        if getattr(args, "K", None) is not None and args.K < 0:
            raise ValueError("--K must be >= 0")
        _apply_overrides(args)
        return args.func(args)
    except (DivergenceError, NonFiniteError, NumericalFailure, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, ImageReadError, PairingError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
