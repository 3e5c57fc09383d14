"""Command-line interface: ``srbridge simulate|train|bridge|scoregrid``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings

import numpy as np

from . import __version__
from . import bridge as br
from . import geometry as geo
from .errors import ConfigurationError, DomainError, SRBridgeError
from .io import (PALETTE, SvgPlot, parse_float, parse_floats, parse_grid, parse_int, parse_ints,
                 parse_seed, parse_str, read_config, typed_config, write_atomic_json, write_csv,
                 write_json)
from .network import NetworkParams, forward
from .stochastic import LEVY_METHODS, SCHEMES, RngStream, sample_batch
from .training import GEOMETRIES, TrainingConfig, build_model, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_GEOM = {"geometry": parse_str, "dim": parse_int, "heis_k": parse_int}

SIMULATE_SCHEMA = {**_GEOM, "x0": parse_floats, "T": parse_float, "n": parse_int, "K": parse_int,
                   "scheme": parse_str, "K2": parse_int, "levy_method": parse_str, "seed": parse_seed}
TRAIN_SCHEMA = {**_GEOM, "x0": parse_floats, "T": parse_float, "n": parse_int, "K": parse_int,
                "batches_per_epoch": parse_int, "epochs": parse_int, "loss_kind": parse_str,
                "scheme": parse_str, "K2": parse_int, "lr": parse_float, "seed": parse_seed,
                "hidden": parse_ints, "activation": parse_str, "levy_method": parse_str,
                "vertical_scale": parse_float}
BRIDGE_SCHEMA = {**_GEOM, "x0": parse_floats, "xT": parse_floats, "T": parse_floats, "n": parse_int,
                 "num_samples": parse_int, "score": parse_str, "params": parse_str, "seed": parse_seed,
                 "vertical_scale": parse_float}
SCOREGRID_SCHEMA = {**_GEOM, "params": parse_str, "grid": parse_grid, "t": parse_float, "seed": parse_seed}
SCHEMAS = {"simulate": SIMULATE_SCHEMA, "train": TRAIN_SCHEMA, "bridge": BRIDGE_SCHEMA,
           "scoregrid": SCOREGRID_SCHEMA}
SCORE_SOURCES = ("network", "analytic_heisenberg", "analytic_euclidean")
DEFAULT_GRID_COUNT = 11


class Context:
    def __init__(self, out_dir, quiet, svg):
        self.out_dir = out_dir
        self.quiet = quiet
        self.svg = svg
        self.outputs = []

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out_dir, name)

    def log(self, msg):
        if not self.quiet:
            print(msg, file=sys.stderr)


def _model(cfg):
    geometry = cfg.setdefault("geometry", "heisenberg")
    if geometry not in GEOMETRIES:
        raise ConfigurationError(f"unknown geometry {geometry!r}; expected one of {GEOMETRIES}")
    cfg.setdefault("dim", 1)
    cfg.setdefault("heis_k", 1)
    if cfg["dim"] < 1 or cfg["heis_k"] < 1:
        raise ConfigurationError("dim and heis_k must be positive")
    return build_model(geometry, cfg["dim"], cfg["heis_k"])


def _point(cfg, key, model, default=None):
    if key not in cfg:
        if default is None:
            raise ConfigurationError(f"missing config key {key!r}")
        cfg[key] = list(default)
    if len(cfg[key]) != model.d:
        raise ConfigurationError(f"{key!r} needs {model.d} coordinates, got {len(cfg[key])}")
    return np.asarray(cfg[key], dtype=float)


def _positive(cfg, *keys):
    for k in keys:
        if not cfg[k] > 0:
            raise ConfigurationError(f"{k!r} must be positive")


def _path_rows(times, states):
    times = np.asarray(times, dtype=float).tolist()
    for p, path in enumerate(np.asarray(states, dtype=float).tolist()):
        for i, (t, x) in enumerate(zip(times, path)):
            yield (p, i, t, *x)


def _coord_names(d):
    return [f"x{i + 1}" for i in range(d)]


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg, ctx):
    model = _model(cfg)
    x0 = _point(cfg, "x0", model, np.zeros(model.d))
    cfg.setdefault("T", 1.0)
    cfg.setdefault("n", 100)
    cfg.setdefault("K", 100)
    cfg.setdefault("scheme", "heisenberg_exact" if cfg["geometry"] == "heisenberg" else "euler")
    cfg.setdefault("K2", 10)
    cfg.setdefault("levy_method", "polynomial")
    cfg.setdefault("seed", 0)
    _positive(cfg, "T", "n", "K", "K2")
    if cfg["scheme"] not in SCHEMES:
        raise ConfigurationError(f"unknown scheme {cfg['scheme']!r}; expected one of {SCHEMES}")
    if cfg["levy_method"] not in LEVY_METHODS:
        raise ConfigurationError(f"unknown levy_method {cfg['levy_method']!r}")
    batch = sample_batch(model, x0, cfg["T"], cfg["n"], cfg["K"], RngStream(cfg["seed"]).child("simulate"),
                         cfg["scheme"], cfg["K2"], cfg["levy_method"])
    write_csv(ctx.path("paths.csv"), "paths", ["path_id", "step", "t", *_coord_names(model.d)],
              _path_rows(batch.times, batch.states))
    ctx.log(f"simulated {cfg['K']} paths with {cfg['n']} steps")


def cmd_train(cfg, ctx):
    known = {k: v for k, v in cfg.items()}
    if "x0" not in known:
        raise ConfigurationError("missing config key 'x0'")
    try:
        config = TrainingConfig(**known)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None
    cfg.clear()
    cfg.update(config.as_dict())

    def progress(epoch, loss):
        if (epoch + 1) % 100 == 0 or epoch == 0:
            ctx.log(f"epoch {epoch + 1}/{config.epochs} loss {loss:.6g}")

    params, report = train(config, progress=progress)
    params.save(ctx.path("params.json"))
    write_csv(ctx.path("loss.csv"), "loss", ["epoch", "loss"],
              ((e + 1, v) for e, v in enumerate(report.epoch_losses)))


def _load_params(cfg, model):
    if "params" not in cfg:
        raise ConfigurationError("a network score needs 'params' (or --params)")
    try:
        params = NetworkParams.load(cfg["params"])
    except OSError as exc:
        raise ConfigurationError(f"cannot read parameters {cfg['params']}: {exc.strerror}") from None
    if params.input_dim != model.d or params.output_dim != model.k:
        raise ConfigurationError(f"network maps R^{params.input_dim + 1} -> R^{params.output_dim}, "
                                 f"geometry needs R^{model.d + 1} -> R^{model.k}")
    return params


def _score_source(cfg, model, x0):
    default = "network" if "params" in cfg else (
        "analytic_heisenberg" if cfg["geometry"] == "heisenberg" else "analytic_euclidean")
    src = cfg.setdefault("score", default)
    if src == "network":
        return br.NetworkScore(_load_params(cfg, model))
    if src == "analytic_heisenberg":
        if cfg["geometry"] != "heisenberg":
            raise ConfigurationError("analytic_heisenberg score needs geometry=heisenberg")
        return br.HeisenbergScore(x0, cfg.setdefault("vertical_scale", 4 * np.pi))
    if src == "analytic_euclidean":
        if cfg["geometry"] != "euclidean":
            raise ConfigurationError("analytic_euclidean score needs geometry=euclidean")
        return br.EuclideanScore(x0)
    raise ConfigurationError(f"unknown score source {src!r}; expected one of {SCORE_SOURCES}")


def _bridge_svg(ens, T, path):
    plot = SvgPlot(title=f"bridge summary, T = {T:g}")
    for c, (name, curves) in enumerate(ens.summary.items()):
        color = PALETTE[c % len(PALETTE)]
        plot.line(ens.times, curves["median"], color=color, width=2, label=f"{name} median")
        plot.line(ens.times, curves["q25"], color=color, width=1, dash="4 3")
        plot.line(ens.times, curves["q75"], color=color, width=1, dash="4 3")
    plot.save(path)


def cmd_bridge(cfg, ctx):
    model = _model(cfg)
    x0 = _point(cfg, "x0", model)
    xT = _point(cfg, "xT", model, np.zeros(model.d))
    cfg.setdefault("T", [1.0])
    cfg.setdefault("n", 100)
    cfg.setdefault("num_samples", 100)
    cfg.setdefault("seed", 0)
    if not cfg["T"] or any(not T > 0 for T in cfg["T"]):
        raise ConfigurationError("'T' must list positive horizons")
    _positive(cfg, "n", "num_samples")
    score = _score_source(cfg, model, x0)
    root = RngStream(cfg["seed"]).child("bridge")
    for T in cfg["T"]:
        conf = br.BridgeConfig(x0, xT, T, cfg["n"], cfg["num_samples"])
        ens = br.sample_bridge(model, conf, score, root.child("T", repr(float(T))))
        tag = f"T{T:g}"
        write_csv(ctx.path(f"bridge_{tag}.csv"), "bridge", ["path_id", "step", "t", *_coord_names(model.d)],
                  _path_rows(ens.times, ens.paths))
        write_json(ctx.path(f"summary_{tag}.json"), {
            "T": T, "times": ens.times, "summary": ens.summary, "seed": cfg["seed"],
            "config": {k: v for k, v in cfg.items()},
        })
        if ctx.svg:
            _bridge_svg(ens, T, ctx.path(f"bridge_{tag}.svg"))
        ctx.log(f"bridge T={T:g}: {cfg['num_samples']} paths")


def grid_points(axes):
    lines = [np.linspace(lo, hi, cnt) if cnt > 1 else np.array([lo]) for lo, hi, cnt in axes]
    mesh = np.meshgrid(*lines, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def cmd_scoregrid(cfg, ctx):
    model = _model(cfg)
    params = _load_params(cfg, model)
    cfg.setdefault("grid", [(-1.0, 1.0, DEFAULT_GRID_COUNT)] * model.d)
    cfg.setdefault("t", 1.0)
    _positive(cfg, "t")
    if len(cfg["grid"]) != model.d:
        raise ConfigurationError(f"grid needs {model.d} axes, got {len(cfg['grid'])}")
    pts = grid_points(cfg["grid"])
    coef = forward(params, np.full(len(pts), cfg["t"]), pts)
    vec = np.einsum("nij,nj->ni", geo.frame_at(model, pts), coef)
    header = [*_coord_names(model.d), *[f"s{j + 1}" for j in range(model.k)],
              *[f"v{i + 1}" for i in range(model.d)]]
    write_csv(ctx.path("scoregrid.csv"), "scoregrid", header, np.concatenate([pts, coef, vec], axis=1))
    if ctx.svg:
        plot = SvgPlot(title=f"score field, t = {cfg['t']:g}")
        if model.d >= 2:
            scale = 0.5 * min((hi - lo) / max(cnt - 1, 1) for lo, hi, cnt in cfg["grid"][:2] if cnt > 1) \
                if any(cnt > 1 for _, _, cnt in cfg["grid"][:2]) else 0.1
            norm = np.max(np.linalg.norm(vec[:, :2], axis=1)) or 1.0
            end = pts[:, :2] + scale * vec[:, :2] / norm
            plot.segments(pts[:, 0], pts[:, 1], end[:, 0], end[:, 1])
        else:
            plot.line(pts[:, 0], coef[:, 0], label="s1")
        plot.save(ctx.path("scoregrid.svg"))


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "bridge": cmd_bridge, "scoregrid": cmd_scoregrid}


# ---------------------------------------------------------------------------
# entry point


def _load_config(command, path):
    schema = SCHEMAS[command]
    if path is None:
        return {}
    if path.endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read manifest {path}: {exc}") from None
        if doc.get("command") != command:
            raise ConfigurationError(f"manifest was written by {doc.get('command')!r}, not {command!r}")
        return typed_config(doc.get("config", {}), schema)
    return read_config(path, command, schema)


def build_parser():
    p = argparse.ArgumentParser(prog="srbridge", description=__doc__)
    p.add_argument("--version", action="version", version=f"srbridge {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI-style config file or a run manifest (JSON)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--quiet", action="store_true")
        if name in ("bridge", "scoregrid"):
            sp.add_argument("--svg", action="store_true", help="also write an SVG plot")
            sp.add_argument("--params", help="network parameter JSON (overrides config)")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    cfg = _load_config(args.command, args.config)
    if args.seed is not None:
        cfg["seed"] = parse_seed(str(args.seed))
    if getattr(args, "params", None):
        cfg["params"] = args.params
    os.makedirs(args.out, exist_ok=True)
    ctx = Context(args.out, args.quiet, getattr(args, "svg", False))
    COMMANDS[args.command](cfg, ctx)
    cfg.setdefault("seed", 0)
    manifest = {
        "command": args.command,
        "config": cfg,
        "seed": cfg["seed"],
        "version": __version__,
        "outputs": list(ctx.outputs),
        "wall_clock_seconds": time.perf_counter() - started,
    }
    write_atomic_json(os.path.join(args.out, "manifest.json"), manifest)
    return EXIT_OK


def main(argv=None):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return run(argv)
    except (ConfigurationError, DomainError) as exc:
        print(f"srbridge: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SRBridgeError as exc:
        print(f"srbridge: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"srbridge: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
