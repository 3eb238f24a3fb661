"""Command-line entry point: ``dpfreq {generate,run,oracle,sweep,rerun}``.

Every command that writes results can also write a JSON manifest. ``rerun``
replays a manifest against the same inputs and reproduces its CSV output
byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from dpfreq import __version__, core, genbench, privacy
from dpfreq.estimators import (ADVANCED, COMPOSITIONS, EVENT, ITEM,
                               EstimatorConfig, estimate)
from dpfreq.genbench import GeneratorSpec


class CliError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _load_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"{path}: expected a JSON object")
    return data


def _write_manifest(path, command: str, args: dict, inputs: dict, started: str, **extra) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "args": args,
        "inputs": inputs,
        "started": started,
        "finished": _now(),
        **extra,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- generate ------------------------------------------------------------------

def _generate(args: dict) -> dict:
    spec_dict = _load_json(args["spec"])
    spec = GeneratorSpec.from_dict(spec_dict)
    stream = genbench.generate(spec)
    core.write_stream(stream, args["out"], args.get("sidecar"))
    return {"generator": spec.as_dict(), "seed": spec.seed}


# --- run -----------------------------------------------------------------------

def _config_from(args: dict) -> EstimatorConfig:
    if args["delta"] is None and (args["noise"] == privacy.GAUSSIAN or args["composition"] == ADVANCED):
        raise CliError("gaussian noise and advanced composition need an explicit --delta")
    return EstimatorConfig(
        query=args["query"], k=args["k"], window=args["window"], level=args["level"],
        regime=args["regime"], epsilon=args["epsilon"], delta=args["delta"] or 0.0,
        composition=args["composition"], noise=args["noise"], seed=args["seed"],
        exact_k=args["exact_k"], block_length=args["block"])


def _load_stream(args: dict) -> core.EventStream:
    try:
        return core.read_stream(args["stream"], args.get("sidecar"))
    except OSError as exc:
        raise CliError(f"cannot read stream: {exc}") from exc


def _stream_inputs(args: dict) -> dict:
    csv_path = Path(args["stream"])
    sidecar = Path(args["sidecar"]) if args.get("sidecar") else csv_path.with_suffix(".json")
    return {"stream": {"path": str(csv_path), "sha256": _sha256(csv_path)},
            "sidecar": {"path": str(sidecar), "sha256": _sha256(sidecar)}}


def _clamp(values: np.ndarray, universe: int) -> np.ndarray:
    return np.rint(np.clip(values, 0, universe))


def _run(args: dict) -> dict:
    config = _config_from(args)
    stream = _load_stream(args)
    if config.regime == core.SINGLETON and stream.regime != core.SINGLETON:
        raise CliError("singleton regime requested but the stream is declared bundle")
    trials = args["trials"]
    if trials < 1:
        raise CliError("--trials must be >= 1")
    t1, t2 = genbench.sample_queries(config, stream.horizon, args["max_queries"],
                                     privacy.derive_seed(config.seed, 1 << 32))
    # trial i always uses derive_seed(seed, i), matching run_experiment
    table = estimate(stream, config, privacy.make_rng(privacy.derive_seed(config.seed, 0)),
                     queries=(t1, t2))
    values = table.values
    if args["clamp"]:
        values = _clamp(values, stream.universe_size)
    exact = None
    if args["with_oracle"]:
        exact = core.exact_table(stream, config.k, t1, t2, equal=config.exact_k).astype(float)
    genbench.write_rows(args["out"], config.query, config.k, t1, t2, values, exact)
    extra = {"config": config.as_dict(), "seed": config.seed, "budgets": table.budgets,
             "n_queries": int(t1.size)}
    if trials > 1:
        report = genbench.run_experiment(stream, config, trials, args["max_queries"])
        extra["summary"] = report.summary()
    elif exact is not None:
        extra["summary"] = genbench.summarize(np.zeros(t1.size, int), np.abs(values - exact), 1)
    return extra


# --- oracle --------------------------------------------------------------------

def _oracle(args: dict) -> dict:
    stream = _load_stream(args)
    if args["k"] < 1:
        raise CliError("--k must be >= 1")
    if args["query"] == core.FIXED and not args["window"]:
        raise CliError("--query fixed needs --window")
    t1, t2 = core.query_family(args["query"], stream.horizon, args["window"])
    exact = core.exact_table(stream, args["k"], t1, t2, equal=args["exact_k"]).astype(float)
    genbench.write_rows(args["out"], args["query"], args["k"], t1, t2, exact, exact)
    return {}


# --- sweep ---------------------------------------------------------------------

_SWEEP_KEYS = {"axis", "values", "config", "generator", "trials", "max_queries"}


def _sweep(args: dict) -> dict:
    spec = _load_json(args["spec"])
    unknown = set(spec) - _SWEEP_KEYS
    if unknown:
        raise CliError(f"unknown sweep fields: {sorted(unknown)}")
    try:
        config = EstimatorConfig(**spec.get("config", {}))
    except TypeError as exc:
        raise CliError(f"bad sweep config: {exc}") from exc
    generator = GeneratorSpec.from_dict(spec.get("generator", {}))
    rows = genbench.sweep(spec["axis"], spec["values"], config, generator,
                          int(spec.get("trials", 1)), spec.get("max_queries"))
    genbench.write_summary(args["out"], rows)
    return {"config": config.as_dict(), "generator": generator.as_dict(), "seed": config.seed}


# --- rerun ---------------------------------------------------------------------

_COMMANDS = {"generate": _generate, "run": _run, "oracle": _oracle, "sweep": _sweep}


def _rerun(args: dict) -> dict:
    manifest = _load_json(args["manifest"])
    command = manifest.get("command")
    if command not in _COMMANDS:
        raise CliError(f"manifest names unknown command {command!r}")
    for name, rec in manifest.get("inputs", {}).items():
        if _sha256(rec["path"]) != rec["sha256"]:
            raise CliError(f"input {name} ({rec['path']}) changed since the manifest was written")
    replay = dict(manifest["args"], out=args["out"])
    if command == "generate":
        replay["sidecar"] = None
    _COMMANDS[command](replay)
    return {}


# --- parser ----------------------------------------------------------------------

def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _query_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--query", choices=core.QUERY_KINDS, default=core.CUMULATIVE)
    p.add_argument("--k", type=_positive_int, default=1)
    p.add_argument("--window", type=_positive_int, default=None)
    p.add_argument("--exact-k", action="store_true",
                   help="count items occurring exactly k times instead of at least k")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpfreq", allow_abbrev=False,
                                     description="Private Freq>=k counts over event-stream windows.")
    parser.add_argument("--version", action="version", version=f"dpfreq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", allow_abbrev=False, help="write a synthetic stream")
    g.add_argument("spec", help="generator spec JSON")
    g.add_argument("--out", required=True, help="stream CSV; the sidecar goes next to it")
    g.add_argument("--sidecar", default=None)
    g.add_argument("--manifest", default=None)

    r = sub.add_parser("run", allow_abbrev=False, help="private estimates for a query family")
    r.add_argument("stream")
    r.add_argument("--sidecar", default=None)
    _query_flags(r)
    r.add_argument("--level", choices=(EVENT, ITEM), default=EVENT)
    r.add_argument("--regime", choices=core.REGIMES, default=core.BUNDLE)
    r.add_argument("--epsilon", type=float, default=1.0)
    r.add_argument("--delta", type=float, default=None, help="default 0 (pure DP)")
    r.add_argument("--composition", choices=COMPOSITIONS, default="basic")
    noise = r.add_mutually_exclusive_group()
    noise.add_argument("--noise", choices=privacy.NOISE_KINDS, default=privacy.LAPLACE)
    noise.add_argument("--no-noise", dest="noise", action="store_const", const=privacy.NONE)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--trials", type=int, default=1,
                   help="trials for the manifest summary; the CSV holds trial 0")
    r.add_argument("--max-queries", type=_positive_int, default=None,
                   help="evaluate a seeded random subset of this many windows")
    r.add_argument("--block", type=_positive_int, default=None,
                   help="block length for the singleton wrapper")
    r.add_argument("--with-oracle", action="store_true")
    r.add_argument("--clamp", action="store_true", help="clamp to [0, U] and round on output")
    r.add_argument("--out", required=True)
    r.add_argument("--manifest", default=None)

    o = sub.add_parser("oracle", allow_abbrev=False, help="exact counts for a query family")
    o.add_argument("stream")
    o.add_argument("--sidecar", default=None)
    _query_flags(o)
    o.add_argument("--out", required=True)
    o.add_argument("--manifest", default=None)

    s = sub.add_parser("sweep", allow_abbrev=False, help="error summary along one axis")
    s.add_argument("spec", help="sweep spec JSON")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest", default=None)

    rr = sub.add_parser("rerun", allow_abbrev=False, help="replay a manifest")
    rr.add_argument("manifest")
    rr.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    manifest_path = args.pop("manifest", None) if command != "rerun" else None
    started = _now()
    try:
        if command == "rerun":
            _rerun(args)
            return 0
        extra = _COMMANDS[command](args)
        if manifest_path:
            inputs = {}
            if command in ("run", "oracle"):
                inputs = _stream_inputs(args)
            elif command in ("generate", "sweep"):
                inputs = {"spec": {"path": str(args["spec"]), "sha256": _sha256(args["spec"])}}
            _write_manifest(manifest_path, command, args, inputs, started, **extra)
    except (CliError, ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"dpfreq {command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
