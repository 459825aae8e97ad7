"""``modekit`` command line: each command reads a JSON config, writes its
outputs plus a ``run.json`` provenance record under ``--out``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, _container, datamodel, dmd, metrics, mvgpr, pod, spod, synth
from .errors import InvalidInput, NumericalError, ParseError, TrainingError
from .kernels import read_model, write_model
from .modeset import read_modeset, write_modeset

log = logging.getLogger("modekit")

COMMANDS = ("synth", "import", "pod", "subsample", "interp", "dmd", "spod", "mvgpr-train", "predict", "compare")


# ---------------------------------------------------------------------------
# plumbing


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        event = {"level": record.levelname.lower(), "event": record.getMessage()}
        event.update(getattr(record, "fields", {}))
        return json.dumps(event, sort_keys=True, default=str)


def _setup_logging():
    level = os.environ.get("MODEKIT_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter())
    log.handlers[:] = [handler]
    log.setLevel(levels.get(level, logging.ERROR))
    log.propagate = False


def _event(level, name, **fields):
    log.log(level, name, extra={"fields": fields})


def derive_seed(seed, label):
    """Child seed for ``label``: first 8 bytes of ``sha256("seed:label")``."""
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def content_hash(path):
    """sha256 over a file, or over the sorted (relative name, content) of a
    directory tree."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file() and p.name != "run.json"):
            h.update(f.relative_to(path).as_posix().encode())
            h.update(b"\0")
            h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def load_config(path, allowed, required=()):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError("config file not found", path=path) from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"invalid JSON config: {exc.msg} at line {exc.lineno} column {exc.colno}",
            path=path,
            offset=len(text[: exc.pos].encode("utf-8")),
        ) from None
    if not isinstance(cfg, dict):
        raise ParseError("config must be a JSON object", path=path)
    if cfg.get("schema") != 1:
        raise InvalidInput(f'{path}: config needs "schema": 1')
    unknown = sorted(set(cfg) - set(allowed) - {"schema"})
    if unknown:
        raise InvalidInput(f"{path}: unknown config keys {unknown}")
    missing = [k for k in required if k not in cfg]
    if missing:
        raise InvalidInput(f"{path}: missing config keys {missing}")
    return cfg, path.parent.resolve()


def _resolve(base, value):
    p = Path(value)
    return p if p.is_absolute() else (base / p)


class _Run:
    """Collects inputs and outputs of one command for ``run.json``."""

    def __init__(self, command, args, cfg, base):
        self.command = command
        self.args = args
        self.cfg = cfg
        self.base = base
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {}

    def input(self, key):
        path = _resolve(self.base, self.cfg[key])
        if not path.exists():
            raise InvalidInput(f"input {key!r} does not exist: {path}")
        self.inputs[key] = {"path": str(self.cfg[key]), "sha256": content_hash(path)}
        return path

    def finish(self):
        outputs = sorted(
            p.relative_to(self.out).as_posix() for p in self.out.rglob("*") if p.is_file() and p.name != "run.json"
        )
        record = {
            "command": self.command,
            "config": self.cfg,
            "config_dir": str(self.base),
            "seed": self.args.seed,
            "threads": self.args.threads,
            "inputs": self.inputs,
            "outputs": outputs,
            "versions": {
                "modekit": __version__,
                "numpy": np.__version__,
                "scipy": _scipy_version(),
                "python": platform.python_version(),
            },
        }
        (self.out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _scipy_version():
    import scipy

    return scipy.__version__


def _fmt(x):
    return f"{float(x):.17g}"


# ---------------------------------------------------------------------------
# commands


SYNTH_KEYS = ("problem", "frequencies", "grid", "n_realizations", "phase_sigma", "dt", "t_end", "omega0", "harmonic", "sigma")


def cmd_synth(args, cfg, base):
    run = _Run("synth", args, cfg, base)
    problem = cfg.get("problem", "synthesized-flow")
    seed = derive_seed(args.seed, "synth")
    if problem == "synthesized-flow":
        fields = {k: cfg[k] for k in ("frequencies", "n_realizations", "phase_sigma", "dt", "t_end") if k in cfg}
        if "grid" in cfg:
            fields["grid"] = tuple(cfg["grid"])
        spec = synth.SynthSpec(seed=seed, **fields)
        ens = synth.generate_synthesized_flow(spec)
        truth = synth.synthesized_flow_truth(spec)
        write_modeset(run.out / "truth", truth.modes)
        (run.out / "truth.json").write_text(json.dumps(truth.to_json(), indent=2, sort_keys=True) + "\n")
    elif problem == "coupled-oscillator":
        ens = synth.generate_coupled_oscillator(
            cfg.get("omega0", 2 * np.pi), cfg.get("harmonic", 1), cfg.get("sigma", 1.0),
            cfg.get("n_realizations", 100), cfg.get("dt", 0.01), cfg.get("t_end", 1.0), seed,
        )
    else:
        raise InvalidInput(f"unknown synth problem {problem!r}")
    datamodel.write_dataset(run.out / "dataset", ens)
    run.finish()


def cmd_import(args, cfg, base):
    """``matrix-csv``: one CSV per realization, one snapshot per row; with
    ``times_column`` the first column holds the timestamps."""
    run = _Run("import", args, cfg, base)
    if cfg.get("format", "matrix-csv") != "matrix-csv":
        raise InvalidInput("only format 'matrix-csv' is supported")
    reals = []
    for i, name in enumerate(cfg["files"]):
        path = _resolve(base, name)
        run.inputs[f"files[{i}]"] = {"path": name, "sha256": content_hash(path)}
        try:
            data = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=int(cfg.get("skip_rows", 0)))
        except ValueError as exc:
            raise ParseError(f"unreadable CSV: {exc}", path=path) from None
        if cfg.get("times_column", False):
            times, snaps = data[:, 0], data[:, 1:]
        else:
            if "dt" not in cfg:
                raise InvalidInput("need dt when the CSV has no times column")
            times, snaps = np.arange(data.shape[0]) * float(cfg["dt"]), data
        reals.append(datamodel.Realization(times, snaps))
    shape = tuple(cfg.get("spatial_shape", (reals[0].n_space,)))
    ens = datamodel.SnapshotEnsemble(tuple(reals), shape, int(cfg.get("field_dim", 1)))
    datamodel.write_dataset(run.out / "dataset", ens)
    run.finish()


def cmd_pod(args, cfg, base):
    run = _Run("pod", args, cfg, base)
    ens = datamodel.read_dataset(run.input("dataset"))
    basis = pod.fit_pod(ens, energy_target=cfg.get("energy_target", pod.DEFAULT_ENERGY_TARGET), rank=cfg.get("rank"))
    pod.write_basis(run.out / "basis", basis)
    datamodel.write_dataset(run.out / "reduced", pod.project_ensemble(basis, ens, center=cfg.get("center", True)))
    _event(logging.INFO, "pod", rank=basis.rank)
    run.finish()


def cmd_subsample(args, cfg, base):
    run = _Run("subsample", args, cfg, base)
    ens = datamodel.read_dataset(run.input("dataset"))
    sub = synth.subsample_irregular(ens, float(cfg["fraction"]), derive_seed(args.seed, "subsample"))
    datamodel.write_dataset(run.out / "dataset", sub)
    run.finish()


def cmd_interp(args, cfg, base):
    run = _Run("interp", args, cfg, base)
    ens = datamodel.read_dataset(run.input("dataset"))
    out = synth.interpolate_ensemble(ens, float(cfg["dt"]), common_length=cfg.get("common_length", True))
    datamodel.write_dataset(run.out / "dataset", out)
    run.finish()


def _maybe_basis(run, cfg):
    return pod.read_basis(run.input("basis")) if "basis" in cfg else None


def cmd_dmd(args, cfg, base):
    run = _Run("dmd", args, cfg, base)
    ens = datamodel.read_dataset(run.input("dataset"))
    ms = dmd.fit_dmd_ensemble(ens, int(cfg["rank"]))
    basis = _maybe_basis(run, cfg)
    if basis is not None:
        ms = pod.lift_modeset(basis, ms)
    write_modeset(run.out / "modes", ms)
    run.finish()


def cmd_spod(args, cfg, base):
    run = _Run("spod", args, cfg, base)
    ens = datamodel.read_dataset(run.input("dataset"))
    res = spod.fit_spod(ens, cfg.get("window", "rectangular"))
    spod.write_spod(run.out / "spod", res)
    if "frequencies" in cfg:
        ms = spod.spod_modeset(res, cfg["frequencies"], int(cfg.get("n_modes", 1)), _maybe_basis(run, cfg))
        write_modeset(run.out / "modes", ms, extra={"bin_width": res.bin_width})
    run.finish()


TRAIN_KEYS = tuple(f for f in mvgpr.TrainConfig.__dataclass_fields__ if f != "seed")


def _write_pairs(path, pa):
    path.mkdir(parents=True, exist_ok=True)
    _container.write_array(path / "anchors.bin", pa.anchors)
    _container.write_array(path / "lags.bin", pa.lags)
    _container.write_array(path / "targets.bin", pa.targets)
    _container.write_array(path / "realization_ids.bin", pa.realization_ids.astype(float))
    _container.write_meta(
        path,
        {"kind": "modekit-pairs", "version": 1, "dtype": "f64", "endianness": "little", "n": pa.n, "dim": pa.dim},
    )


def _read_pairs(path):
    meta = _container.read_meta(path, "modekit-pairs")
    n, r = _container.require(meta, "n", path, int), _container.require(meta, "dim", path, int)
    return datamodel.PairArrays(
        _container.read_array(path / "anchors.bin", (n, r), "anchors"),
        _container.read_array(path / "lags.bin", (n,), "lags"),
        _container.read_array(path / "targets.bin", (n, r), "targets"),
        _container.read_array(path / "realization_ids.bin", (n,), "realization_ids").astype(int),
    )


def cmd_mvgpr_train(args, cfg, base):
    run = _Run("mvgpr-train", args, cfg, base)
    ens = datamodel.read_dataset(run.input("dataset"))
    fields = {k: cfg[k] for k in TRAIN_KEYS if k in cfg}
    config = mvgpr.TrainConfig(seed=derive_seed(args.seed, "mvgpr-train") % (2**32), **fields)
    result = mvgpr.train(ens, config)
    _event(logging.INFO, "trained", iterations=len(result.loss_trace), final_loss=float(result.loss_trace[-1]))
    write_model(run.out / "model", result.model, extra={"train_config": config.to_json()})
    _write_pairs(run.out / "pairs", result.pairs)
    mvgpr.write_loss_trace(run.out / "loss_trace.csv", result)
    basis = _maybe_basis(run, cfg)
    write_modeset(run.out / "modes", mvgpr.extract_modes(result.model, basis))
    group_k = cfg.get("group_modes")
    write_modeset(run.out / "group_modes", mvgpr.frequency_group_modes(result.model, basis, n_modes=group_k))
    run.finish()


def cmd_predict(args, cfg, base):
    """Forecast every realization of ``dataset`` from its first snapshot at
    its own timestamps (or at ``lags`` when given)."""
    run = _Run("predict", args, cfg, base)
    train_dir = run.input("model")
    model = read_model(train_dir / "model")
    pairs = _read_pairs(train_dir / "pairs")
    ens = datamodel.read_dataset(run.input("dataset"))
    queries = []
    for r in ens.realizations:
        lags = np.asarray(cfg["lags"], dtype=float) if "lags" in cfg else r.times - r.times[0]
        queries.append((r.snapshots[0], lags))
    post = mvgpr.predict(model, queries, pairs)
    lags = np.concatenate([q[1] for q in queries])
    with open(run.out / "predictions.csv", "w", encoding="utf-8") as fh:
        fh.write("query,lag,coordinate,mean,variance\n")
        for row in range(lags.size):
            for j in range(model.dim):
                fh.write(
                    f"{post.query_ids[row]},{_fmt(lags[row])},{j},{_fmt(post.mean[row, j])},{_fmt(post.variance[row, j])}\n"
                )
    if "lags" not in cfg:
        truth = np.vstack([r.snapshots for r in ens.realizations])
        summary = {"nrmse_percent": metrics.nrmse(truth, post.mean)}
        (run.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    run.finish()


def _modes_by_frequency(truth, cand, k):
    out = {}
    for f in sorted(set(truth.frequencies.tolist())):
        ref = truth.modes[:, np.isclose(truth.frequencies, f, rtol=1e-9, atol=0.0)]
        idx = cand.select_near(f, k or ref.shape[1])
        out[float(f)] = metrics.grassmann_distance(ref, cand.modes[:, idx])
    return out


def cmd_compare(args, cfg, base):
    """Either ``reference`` vs ``candidate`` mode sets (per-frequency Grassmann
    distances and pairwise correlation) or a ``sweep`` manifest of runs."""
    run = _Run("compare", args, cfg, base)
    k = cfg.get("modes_per_frequency")
    if "sweep" in cfg:
        truth = read_modeset(run.input("reference"))
        rows = []
        for i, entry in enumerate(cfg["sweep"]):
            path = _resolve(base, entry["modes"])
            run.inputs[f"sweep[{i}]"] = {"path": entry["modes"], "sha256": content_hash(path)}
            dist = _modes_by_frequency(truth, read_modeset(path), k)
            row = {"method": entry["method"], "fraction": float(entry["fraction"]), "seed": int(entry["seed"])}
            for j, f in enumerate(sorted(dist)[:2]):
                row[f"grassmann_f{j + 1}"] = dist[f]
            row["grassmann_total"] = float(np.sqrt(sum(v * v for v in dist.values())))
            row["nrmse"] = float(entry.get("nrmse", float("nan")))
            rows.append(row)
        metrics.write_csv(run.out / "sweep.csv", rows, metrics.SWEEP_COLUMNS)
        metrics.write_csv(run.out / "aggregate.csv", metrics.sweep_report(rows), metrics.aggregate_columns())
    else:
        truth = read_modeset(run.input("reference"))
        cand = read_modeset(run.input("candidate"))
        dist = _modes_by_frequency(truth, cand, k)
        rows = [{"frequency": f, "grassmann": d} for f, d in dist.items()]
        total = float(np.sqrt(sum(v * v for v in dist.values())))
        rows.append({"frequency": "total", "grassmann": total})
        metrics.write_csv(run.out / "report.csv", rows, ("frequency", "grassmann"))
        with open(run.out / "frequencies.csv", "w", encoding="utf-8") as fh:
            fh.write("reference_frequency,nearest_candidate,relative_error\n")
            for f in sorted(set(truth.frequencies.tolist())):
                near = cand.frequencies[np.argmin(np.abs(cand.frequencies - f))]
                fh.write(f"{_fmt(f)},{_fmt(near)},{_fmt(abs(near - f) / f)}\n")
    run.finish()


_SPECS = {
    "synth": (cmd_synth, SYNTH_KEYS, ()),
    "import": (cmd_import, ("format", "files", "dt", "times_column", "spatial_shape", "field_dim", "skip_rows"), ("files",)),
    "pod": (cmd_pod, ("dataset", "energy_target", "rank", "center"), ("dataset",)),
    "subsample": (cmd_subsample, ("dataset", "fraction"), ("dataset", "fraction")),
    "interp": (cmd_interp, ("dataset", "dt", "common_length"), ("dataset", "dt")),
    "dmd": (cmd_dmd, ("dataset", "rank", "basis"), ("dataset", "rank")),
    "spod": (cmd_spod, ("dataset", "window", "basis", "frequencies", "n_modes"), ("dataset",)),
    "mvgpr-train": (cmd_mvgpr_train, ("dataset", "basis", "group_modes") + TRAIN_KEYS, ("dataset",)),
    "predict": (cmd_predict, ("model", "dataset", "lags"), ("model", "dataset")),
    "compare": (cmd_compare, ("reference", "candidate", "sweep", "modes_per_frequency"), ("reference",)),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="modekit", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config with \"schema\": 1")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1)
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    func, allowed, required = _SPECS[args.command]
    try:
        from threadpoolctl import threadpool_limits

        cfg, base = load_config(args.config, allowed, required)
        with threadpool_limits(limits=max(1, args.threads)):
            func(args, cfg, base)
    except (InvalidInput, ParseError) as exc:
        _event(logging.ERROR, "invalid-input", command=args.command, error=type(exc).__name__, detail=str(exc))
        return 1
    except (NumericalError, TrainingError) as exc:
        _event(logging.ERROR, "numerical-failure", command=args.command, error=type(exc).__name__, detail=str(exc))
        return 2
    except (KeyError, TypeError, ValueError) as exc:
        # malformed config values surface as input errors
        _event(logging.ERROR, "invalid-input", command=args.command, error=type(exc).__name__, detail=str(exc))
        return 1
    _event(logging.INFO, "done", command=args.command, out=str(args.out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
