"""Command-line entry point.

Settings resolve as: built-in defaults < ``--config`` INI file < flags.
The INI file may use any section names; keys are pipeline option names
(``n_choose`` or ``n-choose``). Exit codes: 0 ok, 2 bad configuration,
3 bad input data, 4 runtime failure.
"""
import argparse
import configparser
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path


from . import bench as benchmod
from ._random import derive_seed
from .dataset import (DEFAULT_MIN_COUNT, DataError, FieldSchema, LogisticTeacher, SchemaError, inject_noise,
                      load_csv, split_indices, synth_generate, write_csv)
from .denoise import write_report
from .model import load_checkpoint, save_checkpoint
from .parallel import ENV_VAR, set_threads
from .pipeline import (CoresetArtifact, PipelineConfig, evaluate, run_denoise, run_select, train_final)

log = logging.getLogger("ctrcoreset")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}
_DEFAULTS = PipelineConfig()
_GROUPS = {
    "select": ["budget", "n_choose", "selection_batch_size", "strategy", "epsilon", "trust_sharpness",
               "embed_dim", "hidden", "dropout", "learning_rate", "batch_size", "select_train_epochs", "seed"],
    "denoise": ["n_denoise", "z", "remove_rate", "seed"],
    "train": ["embed_dim", "hidden", "dropout", "learning_rate", "batch_size", "final_batch_size",
              "final_max_epochs", "patience", "seed"],
}
_GROUPS["pipeline"] = list(dict.fromkeys(_GROUPS["select"] + _GROUPS["denoise"] + _GROUPS["train"]))


def _parse_hidden(text):
    text = str(text).strip()
    return tuple(int(h) for h in text.split(",") if h.strip()) if text else ()


def _coerce(name, value):
    default = getattr(_DEFAULTS, name)
    if name == "hidden":
        return _parse_hidden(value)
    if name == "final_batch_size":
        return None if str(value).lower() in ("", "none") else int(value)
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes")
    try:
        return type(default)(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def _add_config_flags(parser, names):
    group = parser.add_argument_group("pipeline options")
    for name in names:
        default = getattr(_DEFAULTS, name)
        shown = ",".join(map(str, default)) if name == "hidden" else default
        kwargs = {"dest": name, "default": None, "help": f"(default: {shown})"}
        if name == "strategy":
            kwargs["choices"] = ["naive", "stochastic"]
        group.add_argument("--" + name.replace("_", "-"), **kwargs)


def resolve_config(args, names):
    values = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        ini = configparser.ConfigParser()
        try:
            ini.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        for section in ini.sections():
            for key, value in ini[section].items():
                name = key.replace("-", "_")
                if name not in _FIELDS:
                    raise ConfigError(f"unknown config key {key!r} in section [{section}]")
                values[name] = _coerce(name, value)
    for name in names:
        value = getattr(args, name, None)
        if value is not None:
            values[name] = _coerce(name, value)
    try:
        return PipelineConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _fingerprint_line(kind, payload):
    import hashlib
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]
    print(f"config fingerprint: {digest} ({kind})")
    return digest


def _load_data(args, schema=None):
    clean = getattr(args, "clean", None)
    return load_csv(args.data, schema=schema, min_count=args.min_count, header=args.header, clean_path=clean)


def _schema_for(args, write=False):
    path = Path(args.schema) if args.schema else None
    if path is not None and path.exists():
        return FieldSchema.load(path), path
    if not write:
        raise DataError(f"schema file not found: {args.schema}")
    return None, path


def _train_split(data, args, config):
    if getattr(args, "split", False):
        train_idx, val_idx, test_idx = split_indices(len(data), seed=derive_seed(config.seed, "split"))
        return data.subset(train_idx), data.subset(val_idx), data.subset(test_idx)
    return data, None, None


def cmd_synth(args):
    if not 0.0 <= args.flip <= 1.0:
        raise ConfigError("--flip must lie in [0, 1]")
    if args.n < 0 or args.fields < 1 or args.vocab < 2:
        raise ConfigError("--n must be >= 0, --fields >= 1, --vocab >= 2")
    sizes = [args.vocab] * args.fields
    _fingerprint_line("synth", vars(args))
    teacher = None
    if args.teacher_scale == 0:
        teacher = LogisticTeacher.zeros(sizes)
    data = synth_generate(args.n, sizes, teacher=teacher, seed=args.seed, skew=args.skew,
                          teacher_scale=args.teacher_scale)
    noisy, flipped = inject_noise(data, args.flip, seed=args.seed)
    out = Path(args.out)
    clean = Path(args.clean_out) if args.clean_out else out.with_suffix(".clean")
    write_csv(noisy, out, clean_path=clean)
    print(f"wrote {len(noisy)} rows to {out}; clean labels to {clean}; {len(flipped)} labels flipped")
    return EXIT_OK


def cmd_select(args):
    config = resolve_config(args, _GROUPS["select"])
    print(f"config fingerprint: {config.fingerprint()}")
    schema, schema_path = _schema_for(args, write=True)
    data = _load_data(args, schema)
    if schema is None and schema_path is not None:
        data.schema.save(schema_path)
    train, _, _ = _train_split(data, args, config)
    outcome = run_select(train, config)
    outcome.artifact.save(args.artifact)
    save_checkpoint(args.model, outcome.model, outcome.adam)
    print(f"selected {len(outcome.artifact)} of {len(train)} samples -> {args.artifact}")
    return EXIT_OK


def cmd_denoise(args):
    config = resolve_config(args, _GROUPS["denoise"])
    print(f"config fingerprint: {config.fingerprint()}")
    schema, _ = _schema_for(args)
    data = _load_data(args, schema)
    artifact = CoresetArtifact.load(args.artifact)
    net, _ = load_checkpoint(args.model)
    if artifact.indices.size and artifact.indices.max() >= len(data):
        raise DataError("artifact indices exceed the data file")
    outcome = run_denoise(artifact, net, data, config)
    outcome.artifact.save(args.out)
    if args.report and outcome.stats is not None:
        write_report(args.report, artifact.indices, outcome.stats, outcome.upper, outcome.removed)
    print(f"kept {len(outcome.artifact)} of {len(artifact)} samples -> {args.out}")
    return EXIT_OK


def cmd_train(args):
    config = resolve_config(args, _GROUPS["train"])
    print(f"config fingerprint: {config.fingerprint()}")
    schema, _ = _schema_for(args)
    data = _load_data(args, schema)
    artifact = CoresetArtifact.load(args.artifact)
    if len(artifact) == 0:
        raise DataError("artifact is empty")
    _, val, test = _train_split(data, args, config)
    if val is None and args.val:
        val = load_csv(args.val, schema=schema, header=args.header)
    if test is None and args.test:
        test = load_csv(args.test, schema=schema, header=args.header)
    t0 = time.perf_counter()
    net, history = train_final(data, artifact, config, val=val)
    elapsed = time.perf_counter() - t0
    save_checkpoint(args.model_out, net)
    report = {"coreset_size": len(artifact), "epochs": len(history) or config.final_max_epochs,
              "seconds": {"train": elapsed}}
    if test is not None:
        report["test"] = evaluate(net, test).to_dict()
    _write_json(args.report, report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    schema, _ = _schema_for(args)
    data = _load_data(args, schema)
    if len(data) == 0:
        raise DataError("evaluation data is empty")
    net, _ = load_checkpoint(args.model)
    _fingerprint_line("eval", {"model": str(args.model), "data": str(args.data)})
    metrics = evaluate(net, data)
    if metrics.auc is None:
        print("warning: single-class labels, AUC is undefined", file=sys.stderr)
    report = metrics.to_dict()
    _write_json(args.report, report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_bench(args):
    if args.strategy not in ("naive", "stochastic"):
        raise ConfigError("--strategy must be naive or stochastic")
    _fingerprint_line("bench", vars(args))
    reports = []
    for n in args.N:
        for k in args.k:
            for b in args.B:
                if k > n:
                    raise ConfigError(f"k={k} exceeds N={n}")
                case = benchmod.BenchCase(n, k, b, args.strategy, args.epsilon, args.dim, args.reps, args.seed)
                reports.append(benchmod.bench_greedy(case))
    print(benchmod.format_table(reports))
    if args.csv:
        benchmod.write_csv(reports, args.csv)
    return EXIT_OK if not any(r.error for r in reports) else EXIT_RUNTIME


def cmd_pipeline(args):
    config = resolve_config(args, _GROUPS["pipeline"])
    print(f"config fingerprint: {config.fingerprint()}")
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    schema = FieldSchema.load(args.schema) if args.schema and Path(args.schema).exists() else None
    data = _load_data(args, schema)
    data.schema.save(workdir / "schema.json")
    train_idx, val_idx, test_idx = split_indices(len(data), seed=derive_seed(config.seed, "split"))
    times = {}
    t0 = time.perf_counter()
    sel = run_select(data.subset(train_idx), config)
    times["select"] = time.perf_counter() - t0
    sel.artifact.save(workdir / "coreset.csv")
    save_checkpoint(workdir / "select_model.npz", sel.model, sel.adam)
    t0 = time.perf_counter()
    den = run_denoise(sel.artifact, sel.model, data, config)
    times["denoise"] = time.perf_counter() - t0
    den.artifact.save(workdir / "coreset_denoised.csv")
    write_report(workdir / "denoise_report.csv", sel.artifact.indices, den.stats, den.upper, den.removed)
    t0 = time.perf_counter()
    net, history = train_final(data, den.artifact, config, val=data.subset(val_idx))
    times["train"] = time.perf_counter() - t0
    save_checkpoint(workdir / "model.npz", net)
    test = data.subset(test_idx)
    report = {
        "fingerprint": config.fingerprint(),
        "test": evaluate(net, test).to_dict(),
        "coreset_size": {"selected": len(sel.artifact), "denoised": len(den.artifact)},
        "seconds": times,
    }
    if test.clean_labels is not None:
        report["test_clean"] = evaluate(net, test, test.clean_labels).to_dict()
    _write_json(workdir / "metrics.json", report)
    for phase in ("select", "denoise", "train"):
        print(f"phase {phase}: {times[phase]:.3f}s")
    print(json.dumps(report["test"], sort_keys=True))
    return EXIT_OK


def _write_json(path, payload):
    if path:
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def _data_flags(p, schema_required=False):
    p.add_argument("--data", required=True, help="CSV file: label,tok_1,...,tok_F")
    p.add_argument("--schema", required=schema_required, default=None if schema_required else "schema.json",
                   help="vocabulary JSON (default: schema.json)" if not schema_required else "vocabulary JSON")
    p.add_argument("--header", action="store_true", help="skip a header row (default: off)")
    p.add_argument("--min-count", type=int, default=DEFAULT_MIN_COUNT,
                   help=f"OOV threshold when building a vocabulary (default: {DEFAULT_MIN_COUNT})")
    p.add_argument("--clean", default=None, help="optional clean-label sidecar")


def build_parser():
    parser = argparse.ArgumentParser(prog="ctrcoreset", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--threads", type=int, default=None, help=f"worker pool cap (env {ENV_VAR}; default: 1)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic noisy CTR dataset")
    p.add_argument("--n", type=int, default=10000, help="rows (default: 10000)")
    p.add_argument("--fields", type=int, default=8, help="categorical fields (default: 8)")
    p.add_argument("--vocab", type=int, default=20, help="ids per field incl. OOV (default: 20)")
    p.add_argument("--flip", type=float, default=0.0, help="label flip rate (default: 0.0)")
    p.add_argument("--skew", type=float, default=0.0, help="Zipf exponent of field values (default: 0.0)")
    p.add_argument("--teacher-scale", type=float, default=1.0, help="teacher weight std (default: 1.0)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--out", default="data.csv", help="(default: data.csv)")
    p.add_argument("--clean-out", default=None, help="clean-label sidecar (default: <out>.clean)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select", help="select a coreset")
    _data_flags(p)
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--split", action="store_true", help="select from the 8/1/1 training split only (default: off)")
    p.add_argument("--artifact", default="coreset.csv", help="(default: coreset.csv)")
    p.add_argument("--model", default="select_model.npz", help="(default: select_model.npz)")
    _add_config_flags(p, _GROUPS["select"])
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("denoise", help="prune a coreset with MC-dropout loss bounds")
    _data_flags(p)
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--artifact", default="coreset.csv", help="(default: coreset.csv)")
    p.add_argument("--model", default="select_model.npz", help="(default: select_model.npz)")
    p.add_argument("--out", default="coreset_denoised.csv", help="(default: coreset_denoised.csv)")
    p.add_argument("--report", default="denoise_report.csv", help="(default: denoise_report.csv)")
    _add_config_flags(p, _GROUPS["denoise"])
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("train", help="train a fresh model on a coreset")
    _data_flags(p)
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--artifact", default="coreset_denoised.csv", help="(default: coreset_denoised.csv)")
    p.add_argument("--split", action="store_true", help="early-stop on the 8/1/1 validation split, score on test")
    p.add_argument("--val", default=None, help="validation CSV for early stopping")
    p.add_argument("--test", default=None, help="test CSV for metrics")
    p.add_argument("--model-out", default="model.npz", help="(default: model.npz)")
    p.add_argument("--report", default="metrics.json", help="(default: metrics.json)")
    _add_config_flags(p, _GROUPS["train"])
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on a dataset")
    _data_flags(p)
    p.add_argument("--model", default="model.npz", help="(default: model.npz)")
    p.add_argument("--report", default=None, help="optional metrics JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the greedy solvers")
    p.add_argument("--N", type=int, nargs="+", default=[1000], help="batch sizes (default: 1000)")
    p.add_argument("--k", type=int, nargs="+", default=[50], help="budgets (default: 50)")
    p.add_argument("--B", type=int, nargs="+", default=[1], help="problems solved together (default: 1)")
    p.add_argument("--strategy", default="stochastic", help="naive or stochastic (default: stochastic)")
    p.add_argument("--epsilon", type=float, default=0.01, help="(default: 0.01)")
    p.add_argument("--dim", type=int, default=100, help="gradient dimension (default: 100)")
    p.add_argument("--reps", type=int, default=5, help="timed repetitions (default: 5)")
    p.add_argument("--seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--csv", default=None, help="CSV report path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("pipeline", help="select, denoise, train and evaluate in one run")
    _data_flags(p)
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--workdir", default="run", help="output directory (default: run)")
    _add_config_flags(p, _GROUPS["pipeline"])
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.threads is not None:
        set_threads(args.threads)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
