"""``convrot`` command line.

Exit codes: 0 success, 1 usage, 2 validation or format error, 3 numeric
capacity (int32 accumulator) error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from convrot import __version__, analysis, policy, tensorio
from convrot.errors import CapacityError, ConvRotError
from convrot.hadamard import discrepancy_summary, gram, regular, sylvester
from convrot.pipeline import canonical_kind

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_CAPACITY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- manifest


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible reports.
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        t = dt.datetime.fromtimestamp(int(epoch), tz=dt.timezone.utc)
    else:
        t = dt.datetime.now(tz=dt.timezone.utc).replace(microsecond=0)
    return t.isoformat().replace("+00:00", "Z")


def _digest(path: str | Path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_manifest(
    argv: Sequence[str], config: dict, seeds: dict, inputs: Sequence[str | Path] = ()
) -> dict:
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return {
        "tool": "convrot",
        "version": __version__,
        "command": ["convrot", *argv],
        "config_hash": "sha256:" + hashlib.sha256(cfg.encode()).hexdigest(),
        "seeds": seeds,
        "prng": analysis.PRNG,
        "inputs": {str(p): _digest(p) for p in inputs},
        "timestamp": _timestamp(),
    }


def _write_json(obj: dict, path: str | None) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------- commands


def cmd_hadamard(args: argparse.Namespace, argv: Sequence[str]) -> int:
    kind = canonical_kind(args.kind)
    if kind == "sylvester":
        h = sylvester(args.order)
    elif kind == "regular":
        h = regular(args.order)
    else:
        raise UsageError(f"--kind must be sylvester/standard or regular, got {args.kind!r}")
    s = discrepancy_summary(h)
    print(f"order {h.order} kind {h.kind} discrepancy {s.discrepancy}")
    ok = True
    if args.check:
        n = h.order
        checks = [
            ("orthogonality H H^T = nI", bool(np.array_equal(gram(h.entries), n * np.eye(n, dtype=np.int64)))),
            ("column sum squares = n^2", s.sum_of_squares == n * n),
            ("sqrt(n) <= discrepancy <= n", s.discrepancy**2 >= n and s.discrepancy <= n),
        ]
        if kind == "regular":
            root = int(round(n**0.5))
            checks.append(("row/column sums = +sqrt(n)",
                           bool(np.all(h.row_sums() == root) and np.all(h.column_sums() == root))))
            checks.append(("discrepancy = sqrt(n)", s.discrepancy == root))
        else:
            checks.append(("discrepancy = n", s.discrepancy == n))
        for label, passed in checks:
            print(f"{'PASS' if passed else 'FAIL'} {label}")
            ok = ok and passed
    if args.out:
        tensorio.write(args.out, h.entries.astype(np.float32), tensorio.DType.F32)
    if args.text:
        sys.stdout.write(h.to_text())
    return EXIT_OK if ok else EXIT_INVALID


def cmd_synth(args: argparse.Namespace, argv: Sequence[str]) -> int:
    x = analysis.synth_outliers(
        args.rows, args.cols, args.mode, args.magnitude, args.fraction, args.seed
    )
    tensorio.write(args.out, x, args.dtype)
    config = {
        "mode": args.mode, "rows": args.rows, "cols": args.cols, "magnitude": args.magnitude,
        "fraction": args.fraction, "dtype": args.dtype,
    }
    manifest = run_manifest(argv, config, {"synth": args.seed})
    manifest["outputs"] = {args.out: _digest(args.out)}
    _write_json(manifest, args.out + ".manifest.json")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from None


def cmd_analyze(args: argparse.Namespace, argv: Sequence[str]) -> int:
    try:
        kinds = [canonical_kind(k) for k in args.kinds.split(",") if k.strip()]
    except ConvRotError as e:
        raise UsageError(str(e)) from None
    groups = _int_list(args.groups) if args.groups else []
    x = tensorio.read(args.input).data
    if x.ndim != 2:
        x = x.reshape(-1, x.shape[-1])
    cfg = analysis.SweepConfig(tuple(kinds), tuple(groups), args.include_global, args.seed)
    result = analysis.rotation_sweep(x, cfg)
    for row in result.rows:
        if row.error:
            print(f"warning: {row.kind} group {row.group_size}: {row.error}", file=sys.stderr)
    csv = result.to_csv()
    if args.csv:
        Path(args.csv).write_text(csv)
        config = {"kinds": kinds, "groups": groups, "global": args.include_global}
        manifest = run_manifest(argv, config, {"rotation": args.seed}, [args.input])
        manifest["row_errors"] = [
            {"kind": r.kind, "group_size": r.group_size, "error": r.error}
            for r in result.rows if r.error
        ]
        _write_json(manifest, args.csv + ".manifest.json")
    else:
        sys.stdout.write(csv)
    return EXIT_OK


def _read_matrix(path: str) -> np.ndarray:
    a = tensorio.read(path).data.astype(np.float64)
    return a.reshape(1, -1) if a.ndim == 1 else a


def cmd_linear(args: argparse.Namespace, argv: Sequence[str]) -> int:
    x = _read_matrix(args.x)
    w = _read_matrix(args.w)
    bias = tensorio.read(args.bias).data.astype(np.float64).reshape(-1) if args.bias else None
    group = args.group if args.group == "global" else int(args.group)
    spec = policy.LayerSpec(args.bits_w, args.bits_a, args.kind, group)
    source = "flags"
    if args.policy:
        if not args.name:
            raise UsageError("--policy requires --name")
        pol = policy.flux_policy() if args.policy == "flux" else policy.load(args.policy)
        spec = policy.resolve(args.name, pol)
        source = "policy"
    rotation = spec.rotation_spec(seed=args.seed)
    wq, aq = spec.quant_specs()
    report, _ = analysis.quantized_layer_report(x, w, bias, rotation, wq, aq, args.name or "")
    inputs = [p for p in (args.x, args.w, args.bias, args.policy) if p and p != "flux"]
    config = {"layer": spec.to_dict(), "name": args.name or "", "source": source}
    out = {
        "name": args.name or "",
        "layer": {**spec.to_dict(), "precision": spec.label, "source": source},
        "report": report.to_json(),
        "manifest": run_manifest(argv, config, {"rotation": args.seed}, inputs),
    }
    _write_json(out, args.report)
    return EXIT_OK


def cmd_policy(args: argparse.Namespace, argv: Sequence[str]) -> int:
    pol = policy.load(args.config) if args.config else policy.flux_policy()
    if args.name:
        spec = policy.resolve(args.name, pol)
        idx = pol.match_index(args.name)
        print(json.dumps({
            "name": args.name,
            "rule": "default" if idx is None else idx,
            "precision": spec.label,
            **spec.to_dict(),
        }))
        return EXIT_OK
    if not args.stats:
        raise UsageError("give --name NAME or --stats")
    names = policy.read_names(args.manifest) if args.manifest else policy.flux_layer_names()
    cov = policy.coverage_stats(names, pol)
    print(f"layers {cov.total}")
    for i, (rule, count) in enumerate(zip(pol.rules, cov.per_rule)):
        print(f"rule {i} {rule.spec.label} {rule.pattern} {count} {count / cov.total:.4f}")
    print(f"default {pol.default.label} {cov.default_count} {cov.default_count / cov.total:.4f}")
    print(f"non_default_fraction {cov.non_default_fraction:.4f}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="convrot", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"convrot {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    h = sub.add_parser("hadamard", help="generate and check a Hadamard matrix")
    h.add_argument("--order", type=int, required=True)
    h.add_argument("--kind", default="regular", help="sylvester (alias standard) or regular")
    h.add_argument("--check", action="store_true", help="verify the Hadamard identities")
    h.add_argument("--out", help="write signs as an f32 .crt tensor")
    h.add_argument("--text", action="store_true", help="print the +/- sign grid")
    h.set_defaults(fn=cmd_hadamard)

    s = sub.add_parser("synth", help="synthesize an outlier-structured activation tensor")
    s.add_argument("--mode", choices=["rowwise", "colwise", "gaussian"], default="gaussian")
    s.add_argument("--rows", type=int, required=True)
    s.add_argument("--cols", type=int, required=True)
    s.add_argument("--magnitude", type=float, default=100.0)
    s.add_argument("--fraction", type=float, default=0.01)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    a = sub.add_parser("analyze", help="outlier amplitude after each rotation")
    a.add_argument("--input", required=True)
    a.add_argument("--kinds", default="sylvester,regular")
    a.add_argument("--groups", default="16,64,256,1024")
    a.add_argument("--global", dest="include_global", action="store_true")
    a.add_argument("--seed", type=int, default=0, help="seed for random_orthogonal")
    a.add_argument("--csv", help="write CSV here (plus a .manifest.json sidecar)")
    a.set_defaults(fn=cmd_analyze)

    lin = sub.add_parser("linear", help="run one quantized linear layer and report error")
    lin.add_argument("--x", required=True)
    lin.add_argument("--w", required=True)
    lin.add_argument("--bias")
    lin.add_argument("--bits-a", type=int, choices=[4, 8], default=4)
    lin.add_argument("--bits-w", type=int, choices=[4, 8], default=4)
    lin.add_argument("--kind", default="regular")
    lin.add_argument("--group", default="256")
    lin.add_argument("--seed", type=int, default=0)
    lin.add_argument("--policy", help="policy JSON file, or 'flux' for the shipped policy")
    lin.add_argument("--name", help="layer name resolved against --policy")
    lin.add_argument("--report", help="JSON report path (stdout if omitted)")
    lin.set_defaults(fn=cmd_linear)

    pol = sub.add_parser("policy", help="resolve layer names or show rule coverage")
    pol.add_argument("--config", help="policy JSON (shipped FLUX policy if omitted)")
    pol.add_argument("--name")
    pol.add_argument("--manifest", help="layer-name list (shipped FLUX list if omitted)")
    pol.add_argument("--stats", action="store_true")
    pol.set_defaults(fn=cmd_policy)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args, argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except CapacityError as e:
        print(f"capacity error: {e}", file=sys.stderr)
        return EXIT_CAPACITY
    except ConvRotError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, KeyError, TypeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
