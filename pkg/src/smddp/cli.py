"""Command-line front end.

Subcommands: keygen, gen-data, run, sweep, bench, inspect-transcript. Every
flag can also be supplied through a flat ``key = value`` config file (flags
win); the default config path comes from the SMDDP_CONFIG environment
variable. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import ahe, harness
from .dpfm import PrivacyParams, ScalingMode
from .harness import CsvSource, ExperimentSpec, SyntheticSource
from .protocol import ProtocolConfig, Transcript, run_protocol

CONFIG_ENV = "SMDDP_CONFIG"

_SCALING = {
    "geometric": ScalingMode.GEOMETRIC,
    "sqrt-p": ScalingMode.SQRT_P,
    "none": ScalingMode.NONE,
}


class _UsageError(Exception):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _alpha_list(text: str) -> list:
    return [v if v == "n" else float(v) for v in text.split(",") if v != ""]


def _mode_list(text: str) -> list[str]:
    out = []
    for raw in text.split(","):
        if not raw:
            continue
        mode = {"ddp": "DDP", "cdp": "CDP", "nodp": "NoDP"}.get(raw.strip().lower())
        if mode is None:
            raise ValueError(f"unknown mode {raw!r}")
        out.append(mode)
    return out


def _data_source(text: str):
    """synth:ROWSxD[:NOISE[:COEFSEED]] or csv:PATH or a bare CSV path."""
    if text.startswith("synth:"):
        parts = text[len("synth:") :].split(":")
        try:
            rows, d = parts[0].lower().split("x")
            noise = float(parts[1]) if len(parts) > 1 else 0.1
            coef_seed = int(parts[2]) if len(parts) > 2 else None
            return SyntheticSource(int(rows), int(d), noise, coef_seed)
        except (ValueError, IndexError):
            raise ValueError(f"bad synthetic spec {text!r}; expected synth:ROWSxD") from None
    if text.startswith("csv:"):
        return CsvSource(text[len("csv:") :])
    return CsvSource(text)


def _load_config(path: str) -> dict[str, str]:
    config: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            config[key.strip()] = value.strip()
    return config


class _Options:
    """argparse wrapper that resolves flag > config file > built-in default."""

    def __init__(self, parser: argparse.ArgumentParser):
        self.parser = parser
        self.registry: list[tuple[str, str, object, object]] = []

    def add(self, flag: str, parse, default, help: str, metavar: str | None = None):
        dest = flag.lstrip("-").replace("-", "_")
        if parse is bool:
            self.parser.add_argument(flag, dest=dest, action="store_const", const=True,
                                     default=None, help=help)
        else:
            self.parser.add_argument(flag, dest=dest, type=str, default=None,
                                     help=help, metavar=metavar or dest.upper())
        self.registry.append((dest, flag.lstrip("-"), parse, default))

    def resolve(self, args: argparse.Namespace, config: dict[str, str]):
        for dest, key, parse, default in self.registry:
            raw = getattr(args, dest)
            if raw is not None:
                value = raw if parse is bool else parse(raw)
            elif key in config:
                value = _parse_bool(config[key]) if parse is bool else parse(config[key])
            else:
                value = default
            setattr(args, dest, value)


def _build_parser() -> tuple[argparse.ArgumentParser, dict[str, _Options]]:
    parser = argparse.ArgumentParser(
        prog="smddp",
        description="Secure multiparty private linear regression: protocol and experiments.",
    )
    parser.add_argument("--config", default=None, help="flat key=value config file")
    sub = parser.add_subparsers(dest="command")
    options: dict[str, _Options] = {}

    def cmd(name: str, help: str) -> _Options:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", dest="config_sub", default=None,
                       help="flat key=value config file")
        opt = _Options(p)
        options[name] = opt
        return opt

    o = cmd("keygen", "generate a key pair and write the key files")
    o.add("--bits", int, 2048, "key size in bits (minimum 1024)")
    o.add("--seed", int, None, "seed for reproducible key generation")
    o.add("--public-out", str, "public.key", "public key output path")
    o.add("--secret-out", str, "secret.key", "secret key output path")

    o = cmd("gen-data", "write a synthetic dataset as CSV")
    o.add("--rows", int, 1000, "number of rows")
    o.add("--d", int, 8, "number of attributes")
    o.add("--noise-sd", float, 0.1, "response noise standard deviation")
    o.add("--seed", int, 0, "generator seed")
    o.add("--out", str, "data.csv", "output CSV path")

    o = cmd("run", "execute one protocol instance and print the model")
    o.add("--parties", int, 3, "number of parties on the ring")
    o.add("--epsilon", float, 1.0, "global privacy budget")
    o.add("--alpha", float, 1.0, "local budget ratio (epsilon_i = alpha * epsilon)")
    o.add("--alpha-equals-n", bool, False, "use alpha = number of parties")
    o.add("--p", float, 0.9, "geometric scaling parameter in (0,1)")
    o.add("--scaling", str, "geometric", "noise scaling: geometric | sqrt-p | none")
    o.add("--mode", str, "ddp", "ddp (private) or nodp (zero noise)")
    o.add("--data", str, "synth:1000x8", "synth:ROWSxD[:NOISE[:COEFSEED]] or CSV path")
    o.add("--seed", int, 0, "master seed")
    o.add("--key-bits", int, 2048, "homomorphic key size")
    o.add("--scale", int, 10**6, "fixed-point codec scale")
    o.add("--transport", str, "in-process", "in-process or socket")
    o.add("--timeout", float, 30.0, "per-hop transport timeout in seconds")
    o.add("--transcript-out", str, None, "write the run transcript as JSON")

    o = cmd("sweep", "grid experiments over mode, epsilon, p, alpha, parties")
    o.add("--mode", _mode_list, ["DDP"], "comma list: ddp,cdp,nodp")
    o.add("--eps", _float_list, [0.1, 0.2, 0.4, 0.8, 1.6, 3.2, 6.4, 12.8],
          "comma list of global budgets")
    o.add("--p", _float_list, [0.9], "comma list of geometric parameters")
    o.add("--alpha", _alpha_list, [1.0], "comma list of ratios; 'n' = parties rule")
    o.add("--parties", _int_list, [10], "comma list of party counts")
    o.add("--scaling", str, "geometric", "noise scaling: geometric | sqrt-p | none")
    o.add("--data", str, "synth:5000x8:0.5", "dataset spec")
    o.add("--seed", int, 0, "master seed")
    o.add("--repeats", int, 100, "independent runs averaged per cell")
    o.add("--folds", int, 5, "cross-validation folds")
    o.add("--normalized-mse", bool, False, "report MSE in normalized response units")
    o.add("--out", str, "results.csv", "results CSV path")

    o = cmd("bench", "time full encrypted protocol runs")
    o.add("--parties", _int_list, [2, 4, 8, 12, 16, 20], "comma list of party counts")
    o.add("--d", _int_list, [32], "comma list of attribute counts")
    o.add("--rows", int, 10000, "rows in the pooled synthetic dataset")
    o.add("--key-bits", int, 1024, "homomorphic key size")
    o.add("--seed", int, 0, "master seed")
    o.add("--transport", str, "in-process", "in-process or socket")
    o.add("--out", str, "timing.csv", "timing CSV path")

    o = cmd("inspect-transcript", "pretty-print a transcript JSON dump")
    o.add("--file", str, None, "transcript JSON path")

    return parser, options


def _cmd_keygen(args) -> int:
    rng = np.random.default_rng(args.seed) if args.seed is not None else None
    pk, sk = ahe.keygen(args.bits, rng)
    ahe.save_public_key(pk, args.public_out)
    ahe.save_secret_key(sk, args.secret_out)
    print(f"wrote {args.public_out} and {args.secret_out} ({args.bits}-bit modulus)")
    return 0


def _cmd_gen_data(args) -> int:
    data = harness.generate_synthetic(args.rows, args.d, args.noise_sd, args.seed)
    with open(args.out, "w") as fh:
        fh.write(",".join([f"attr{i}" for i in range(args.d)] + ["response"]) + "\n")
        for xi, yi in zip(data.x, data.y):
            fh.write(",".join(format(v, ".17g") for v in xi) + f",{yi:.17g}\n")
    print(f"wrote {args.out}: {args.rows} rows, {args.d} attributes")
    return 0


def _cmd_run(args) -> int:
    mode = args.mode.strip().lower()
    if mode not in ("ddp", "nodp"):
        raise _UsageError("run supports --mode ddp or nodp (cdp is a harness baseline; use sweep)")
    source = _data_source(args.data)
    data = harness.load_source(source, args.seed)
    shards = harness.split_horizontal(data, args.parties, args.seed)
    privacy = None
    if mode == "ddp":
        alpha = float(args.parties) if args.alpha_equals_n else args.alpha
        privacy = PrivacyParams(args.epsilon, alpha, args.p, _SCALING[args.scaling])
    config = ProtocolConfig(
        n_parties=args.parties,
        privacy=privacy,
        key_bits=args.key_bits,
        codec_scale=args.scale,
        transport=args.transport,
        master_seed=args.seed,
        hop_timeout=args.timeout,
    )
    result, transcript = run_protocol(config, shards)
    print(f"mode={mode} parties={args.parties} d={data.attrs} rows={data.rows}")
    print("coefficients:", " ".join(format(v, ".9g") for v in result.coef))
    print(f"objective error: {result.err:.9g}")
    for name, ms in transcript.phase_ms.items():
        print(f"  {name:>15}: {ms:10.1f}")
    if args.transcript_out:
        transcript.to_json(args.transcript_out)
        print(f"transcript written to {args.transcript_out}")
    return 0


def _cmd_sweep(args) -> int:
    base = ExperimentSpec(
        mode=args.mode[0],
        epsilons=tuple(args.eps),
        n_parties=args.parties[0],
        data=_data_source(args.data),
        geometric_p=args.p[0],
        scaling=_SCALING[args.scaling],
        repeats=args.repeats,
        folds=args.folds,
        seed=args.seed,
        normalized_mse=args.normalized_mse,
    )
    rows = harness.sweep(base, modes=args.mode, ps=args.p, alphas=args.alpha, ns=args.parties)
    harness.write_results_csv(rows, args.out)
    print(f"wrote {args.out}: {len(rows)} rows "
          f"({len(args.mode)} modes x {len(args.eps)} budgets x {len(args.p)} p "
          f"x {len(args.alpha)} alpha x {len(args.parties)} party counts)")
    return 0


def _cmd_bench(args) -> int:
    timings, fits = harness.bench_overhead(
        args.parties, args.d, args.rows, key_bits=args.key_bits,
        seed=args.seed, transport=args.transport,
    )
    harness.write_timing_csv(timings, args.out)
    print(f"wrote {args.out}: {len(timings)} cells")
    for d, fit in fits.items():
        print(
            f"d={d}: regression time = {fit['slope_ms_per_party']:.1f} ms/party "
            f"+ {fit['intercept_ms']:.1f} ms, R^2 = {fit['r_squared']:.4f}"
        )
    return 0


def _cmd_inspect(args) -> int:
    if not args.file:
        raise _UsageError("inspect-transcript requires --file")
    transcript = Transcript.from_json(args.file)
    t0 = transcript.entries[0].timestamp if transcript.entries else 0.0
    print(f"{len(transcript.entries)} messages")
    for i, e in enumerate(transcript.entries):
        dst = "all" if e.receiver < 0 else str(e.receiver)
        print(
            f"[{i:3d}] +{e.timestamp - t0:8.3f}s  {e.sender} -> {dst:>3}  "
            f"{e.kind_name:<12} {e.nbytes:>9} bytes"
        )
    return 0


_HANDLERS = {
    "keygen": _cmd_keygen,
    "gen-data": _cmd_gen_data,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "bench": _cmd_bench,
    "inspect-transcript": _cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, options = _build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    config_path = getattr(args, "config_sub", None) or args.config or os.environ.get(CONFIG_ENV)
    try:
        config = _load_config(config_path) if config_path else {}
        options[args.command].resolve(args, config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _HANDLERS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures get exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
