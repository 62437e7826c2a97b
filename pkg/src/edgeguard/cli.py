"""edgeguard command line: one binary for the edge gateway, the fog service and the offline tools.

Exit codes: 0 success, 1 threshold or validation failure, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import io
import json
import logging
import os
import signal
import sys
import threading
import time
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from . import latency as lat
from . import plotting
from .config import ConfigError, endpoint, resolve
from .dataset import DatasetError, LabeledTable, load_dataset, split_train_test, write_dataset, write_split_manifest
from .engine import Engine, EventLog, FeatureLog, LogSuspended, ModelRefused
from .firewall import Firewall, FirewallError, format_rules, load_rules
from .fsutil import write_atomic
from .ml.ensemble import MAX_GBM_ESTIMATORS
from .ml.modelio import ModelFormatError, load_model, save_model
from .ml.selection import feature_importance
from .pipeline import ALGORITHMS, TrainingReport, TrainOptions, evaluate_table, metrics_lines, run_training
from .protocol.registry import RegistryError, TrustRegistry, new_identity
from .protocol.session import make_tag
from .protocol.service import (
    EdgeUpdateService,
    FogService,
    FogStore,
    push_model,
    push_pending,
    read_installed_counter,
    retrain_cycle,
)
from .protocol.wire import ProtocolError, TagKind
from .proxy import EdgeProxy
from .schema import MQTT_SCHEMA_HASH, ClassLabel, label_names
from .sim.corpus import read_stream, surrogate_corpus, write_stream
from .sim.generators import PRESETS, generate
from .sim.score import COLUMN_NAMES, run_scenario

log = logging.getLogger("edgeguard")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
MQTTSET_TRAIN = "train70_reduced.csv"
MQTTSET_TEST = "test30_reduced.csv"


class UsageError(Exception):
    pass


class ThresholdMissed(Exception):
    pass


def _flags(args, *names) -> dict:
    return {n: getattr(args, n, None) for n in names}


def _config(args, *names):
    cfg = resolve(_flags(args, *names), config_file=args.config)
    print(cfg.echo(names), file=sys.stderr)
    return cfg


def _kv_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerows(rows)
    return buf.getvalue()


def _matrix_csv(matrix, rows, cols) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\predicted", *cols])
    for name, r in zip(rows, np.asarray(matrix).tolist()):
        w.writerow([name, *r])
    return buf.getvalue()


# -- datasets --------------------------------------------------------------


def load_splits(dataset: Path, test_dataset: Path | None, seed: int) -> tuple[LabeledTable, LabeledTable, str]:
    """Training and test tables from a directory, a file pair, or one file re-split 70/30."""
    if dataset.is_dir():
        train_path, test_path = dataset / MQTTSET_TRAIN, dataset / MQTTSET_TEST
        return load_dataset(train_path), load_dataset(test_path), f"{train_path} + {test_path}"
    if test_dataset is not None:
        return load_dataset(dataset), load_dataset(test_dataset), f"{dataset} + {test_dataset}"
    full = load_dataset(dataset)
    train, test = split_train_test(full, 0.30, seed, stratify=True)
    return train, test, f"{dataset} (70/30 re-split, seed {seed})"


def write_training_report(report: TrainingReport, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    names = label_names()
    files = [
        write_atomic(out_dir / "metrics.csv", _kv_csv(metrics_lines(report))),
        write_atomic(out_dir / "confusion.csv", _matrix_csv(report.test.confusion, names, names)),
    ]
    imp = feature_importance(report.model)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "importance"])
    for n, v in sorted(zip(report.model.feature_names, imp), key=lambda t: -t[1]):
        w.writerow([n, f"{v:.8f}"])
    files.append(write_atomic(out_dir / "importance.csv", buf.getvalue()))
    files.append(plotting.confusion_figure(report.test.confusion, names, names, out_dir / "confusion.png",
                                           title=f"{report.algo} test split"))
    files.append(plotting.importance_figure(list(report.model.feature_names), imp, out_dir / "importance.png"))
    files.append(plotting.auc_figure({k.dataset_name: v for k, v in report.test.auc.items()}, out_dir / "auc.png"))
    return files


# -- subcommands -----------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _config(args, "dataset", "test_dataset", "model", "report_dir", "seed")
    cfg.require("dataset", "model")
    if args.algo == "gb" and args.estimators is not None and args.estimators > MAX_GBM_ESTIMATORS:
        raise UsageError(f"gradient boosting is capped at {MAX_GBM_ESTIMATORS} estimators")
    opts = TrainOptions(args.algo, cfg.seed, args.estimators, args.max_depth, args.learning_rate, args.jobs)
    train, test, desc = load_splits(cfg.dataset, cfg.test_dataset, cfg.seed)
    print(f"data: {desc}; {len(train)} training rows, {len(test)} test rows", file=sys.stderr)
    report = run_training(train, test, opts, select=not args.no_select)
    save_model(cfg.model, report.model)
    out_dir = cfg.report_dir or Path(f"{cfg.model}.report")
    write_training_report(report, out_dir)
    write_split_manifest(out_dir / "split.txt", cfg.seed, {"validation": 0.33}, {"train": train, "test": test})
    if args.selected_model and report.selected_model is not None:
        save_model(args.selected_model, report.selected_model)
    for k, v in metrics_lines(report):
        print(f"{k}\t{v}")
    print(f"model written to {cfg.model}; report in {out_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args, "dataset", "model", "report_dir")
    cfg.require("dataset", "model")
    model = load_model(cfg.model, MQTT_SCHEMA_HASH)
    path = cfg.dataset / MQTTSET_TEST if cfg.dataset.is_dir() else cfg.dataset
    table = load_dataset(path)
    m = evaluate_table(model, table)
    names = label_names()
    rows = [("accuracy", f"{m.accuracy:.6f}"), ("precision", f"{m.precision:.6f}"), ("recall", f"{m.recall:.6f}"),
            ("f1_score", f"{m.f1:.6f}")]
    rows += [(f"auc.{lab.dataset_name}", "undefined" if m.auc[lab] is None else f"{m.auc[lab]:.6f}")
             for lab in ClassLabel]
    rows += [("prediction_time_msec", f"{m.prediction_time_per_packet * 1e3:.6f}"), ("rows", str(len(table)))]
    for k, v in rows:
        print(f"{k}\t{v}")
    if cfg.report_dir is not None:
        cfg.report_dir.mkdir(parents=True, exist_ok=True)
        write_atomic(cfg.report_dir / "metrics.csv", _kv_csv(rows))
        write_atomic(cfg.report_dir / "confusion.csv", _matrix_csv(m.confusion, names, names))
        plotting.confusion_figure(m.confusion, names, names, cfg.report_dir / "confusion.png")
        plotting.auc_figure({k.dataset_name: v for k, v in m.auc.items()}, cfg.report_dir / "auc.png")
    if args.min_accuracy is not None and m.accuracy < args.min_accuracy:
        raise ThresholdMissed(f"accuracy {m.accuracy:.4f} below {args.min_accuracy}")
    return EXIT_OK


def cmd_latency(args) -> int:
    cfg = _config(args, "latency_params", "report_dir")
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        try:
            overrides[key.strip()] = float(value)
        except ValueError:
            raise UsageError(f"--set {key}: {value!r} is not a number") from None
    p, t = lat.load_params(cfg.latency_params, overrides)
    out = args.out or (cfg.report_dir / "latency_curve.csv" if cfg.report_dir else None)
    # Keep stdout pure CSV when the curve is written there.
    echo = sys.stderr if args.curve and out is None and not args.file_size else sys.stdout
    source = cfg.latency_params or "built-in defaults"
    print(f"parameters ({source}):", file=echo)
    for obj in (p, t):
        for k, v in vars(obj).items():
            print(f"  {k} = {v:g}", file=echo)
    if args.file_size:
        b = lat.tcp_latency(lat.parse_size(args.file_size), p)
        print("\n".join(b.trace))
        overhead = lat.tls_overhead(t, p)
        print(f"tls_handshake_bytes = {t.handshake_bytes()}")
        print(f"tls_overhead_s = {overhead:.9f}")
        print(f"total_with_tls_s = {b.total + overhead:.9f}")
    if args.curve:
        sizes = [lat.parse_size(s) for s in args.curve.split(",") if s.strip()]
        rows = lat.latency_curve(sizes, p, t)
        text = lat.curve_csv(rows)
        if out is None:
            sys.stdout.write(text)
        else:
            write_atomic(out, text)
            plotting.latency_figure(rows, Path(out).with_suffix(".png"))
            print(f"curve written to {out}", file=sys.stderr)
    if not args.file_size and not args.curve:
        print(f"tls_overhead_s = {lat.tls_overhead(t, p):.9f}")
    return EXIT_OK


def _parse_thresholds(items) -> dict[ClassLabel, float]:
    out = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--min-recall expects class=value, got {item!r}")
        try:
            out[ClassLabel.from_string(name.strip())] = float(value)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return out


def _scenario(args):
    if args.scenario not in PRESETS:
        raise UsageError(f"unknown scenario {args.scenario!r}; choose from {', '.join(PRESETS)}")
    sc = PRESETS[args.scenario].with_seed(args.seed)
    knobs = {k: getattr(args, k) for k in ("duration", "clients", "publish_rate", "slowite_connections",
                                           "flood_publishes", "bruteforce_attempts", "malformed_frames",
                                           "corruption_rate", "dos_sources")
             if getattr(args, k, None) is not None}
    return replace(sc, **knobs)


def cmd_simulate(args) -> int:
    cfg = _config(args, "model", "rules", "report_dir", "event_log")
    thresholds = _parse_thresholds(args.min_recall)
    if args.replay:
        truth = args.truth or Path(f"{args.replay}.truth.csv")
        packets = read_stream(args.replay, truth)
        desc = f"replay {args.replay}"
    else:
        scenario = _scenario(args)
        packets = generate(scenario)
        desc = f"scenario {scenario.name} seed {scenario.seed}"
    print(f"{desc}: {len(packets)} packets", file=sys.stderr)
    if args.emit_replay:
        write_stream(args.emit_replay, Path(f"{args.emit_replay}.truth.csv"), packets)
        print(f"stream written to {args.emit_replay}", file=sys.stderr)
        if args.emit_only:
            return EXIT_OK
    if args.gateway:
        cfg.require("event_log")
        host, port = endpoint(args.gateway)
        report = run_scenario(packets, (host, port, cfg.event_log))
    else:
        cfg.require("model")
        model = load_model(cfg.model, MQTT_SCHEMA_HASH)
        fw = Firewall(load_rules(cfg.rules) if cfg.rules else None)
        engine = Engine(model, fw, reflect_flood=not args.no_reflect)
        report = run_scenario(packets, engine)
    report.meta["source"] = desc
    sys.stdout.write(report.to_text())
    if args.out:
        write_atomic(args.out, report.to_json() + "\n")
    if cfg.report_dir is not None:
        d = cfg.report_dir
        d.mkdir(parents=True, exist_ok=True)
        write_atomic(d / "score.json", report.to_json() + "\n")
        write_atomic(d / "score_confusion.csv", _matrix_csv(report.confusion, label_names(), COLUMN_NAMES))
        plotting.confusion_figure(report.confusion, label_names(), COLUMN_NAMES, d / "score_confusion.png")
        plotting.recall_figure({lab.dataset_name: report.recall(lab) for lab in ClassLabel}, d / "recall.png")
    failures = []
    for lab, floor in thresholds.items():
        r = report.recall(lab)
        if r is None or r < floor:
            failures.append(f"{lab.dataset_name} recall {'n/a' if r is None else f'{r:.4f}'} < {floor}")
    fpr = report.false_positive_rate
    if args.max_fpr is not None and fpr is not None and fpr >= args.max_fpr:
        failures.append(f"false positive rate {fpr:.4f} >= {args.max_fpr}")
    if args.check_actions:
        for lab, ok in report.action_conformance().items():
            if not ok:
                failures.append(f"{lab.dataset_name} actions {dict(report.actions[lab])} differ from the response table")
    if failures:
        raise ThresholdMissed("; ".join(failures))
    return EXIT_OK


def cmd_corpus(args) -> int:
    seeds = range(args.first_seed, args.first_seed + args.seeds)
    table = surrogate_corpus(seeds)
    write_dataset(args.out, table)
    print(f"{len(table)} rows written to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_rules(args) -> int:
    cfg = _config(args, "rules", "log_dir")
    cfg.require("rules")
    rules = load_rules(cfg.rules)
    sys.stdout.write(format_rules(rules))
    if args.reload:
        pid_file = cfg.log_dir / "edge.pid"
        try:
            pid = int(pid_file.read_text().strip())
        except (OSError, ValueError):
            raise RuntimeError(f"no running gateway found ({pid_file})") from None
        os.kill(pid, signal.SIGHUP)
        print(f"reload signalled to gateway pid {pid}", file=sys.stderr)
    return EXIT_OK


def _edge_id(text: str) -> bytes:
    try:
        raw = bytes.fromhex(text)
    except ValueError:
        raise UsageError(f"edge id must be 32 hex digits, got {text!r}") from None
    if len(raw) != 16:
        raise UsageError("edge id must be 16 bytes (32 hex digits)")
    return raw


def cmd_rebaseline(args) -> int:
    cfg = _config(args, "registry")
    cfg.require("registry")
    reg = TrustRegistry.load(cfg.registry)
    prev = reg.rebaseline(_edge_id(args.edge_id), TagKind[args.kind], args.counter)
    print(f"{args.kind} counter for {args.edge_id}: {prev} -> {args.counter}")
    return EXIT_OK


def cmd_enroll(args) -> int:
    cfg = _config(args, "registry", "identity")
    cfg.require("registry", "identity")
    existing = TrustRegistry.load(cfg.registry).entries() if cfg.registry.exists() else []
    ident = new_identity(args.name)
    if any(e.edge_id == ident.edge_id for e in existing):
        raise RegistryError(f"edge {ident.edge_id.hex()} is already enrolled")
    TrustRegistry(existing + [ident]).save(cfg.registry)
    TrustRegistry([ident]).save(cfg.identity)
    print(ident.edge_id.hex())
    return EXIT_OK


def _single_identity(path: Path):
    reg = TrustRegistry.load(path)
    entries = reg.entries()
    if len(entries) != 1:
        raise RegistryError(f"{path} must hold exactly one edge identity")
    return reg, entries[0]


def cmd_push_data(args) -> int:
    cfg = _config(args, "identity", "fog")
    cfg.require("identity", "fog")
    reg, ident = _single_identity(cfg.identity)
    for counter in push_pending(cfg.fog, ident, reg, args.files):
        print(f"accepted DVT {counter}")
    return EXIT_OK


def cmd_push_model(args) -> int:
    cfg = _config(args, "registry", "update_listen")
    cfg.require("registry", "update_listen")
    reg = TrustRegistry.load(cfg.registry)
    edge = reg.lookup(_edge_id(args.edge_id))
    if edge is None:
        raise RegistryError(f"edge {args.edge_id} is not in {cfg.registry}")
    data = Path(args.model_file).read_bytes()
    counter = args.counter if args.counter is not None else reg.last(edge.edge_id, TagKind.TMVT) + 1
    got = push_model(cfg.update_listen, edge, data, make_tag(edge, TagKind.TMVT, counter))
    reg.compare_and_advance(edge.edge_id, TagKind.TMVT, got)
    print(f"accepted TMVT {got}")
    return EXIT_OK


def cmd_health(args) -> int:
    cfg = _config(args, "log_dir")
    path = cfg.log_dir / "health.json"
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        raise RuntimeError(f"no health record at {path}; is the gateway running?") from None
    for k, v in doc.items():
        print(f"{k}\t{json.dumps(v) if isinstance(v, (dict, list)) else v}")
    return EXIT_OK


def _load_edge_model(path: Path):
    if not path.is_file():
        raise ModelFormatError(f"model file {path} not found; the gateway will not start without a model")
    return load_model(path, MQTT_SCHEMA_HASH)


def cmd_serve_edge(args) -> int:
    cfg = _config(args, "model", "rules", "log_dir", "event_log", "listen", "broker", "update_listen",
                  "identity", "fog", "rotation_period")
    cfg.require("model")
    model = _load_edge_model(cfg.model)
    counter = read_installed_counter(cfg.model)
    fw = Firewall(load_rules(cfg.rules) if cfg.rules else None)
    log_dir = cfg.log_dir
    log_dir.mkdir(parents=True, exist_ok=True)
    if cfg.update_listen is not None or cfg.fog is not None:
        cfg.require("identity")
    feature_log = FeatureLog(log_dir / "features", cfg.rotation_period)
    event_log = EventLog(cfg.event_log or log_dir / "events.jsonl")
    engine = Engine(model, fw, feature_log, event_log,
                    tag=SimpleNamespace(counter=counter) if counter is not None else None,
                    reflect_flood=not args.no_reflect)
    updater = None
    if cfg.update_listen is not None:
        registry = TrustRegistry.load(cfg.identity)
        updater = EdgeUpdateService(registry, engine, cfg.model, *cfg.update_listen).start()
        print(f"model updates on {updater.address[0]}:{updater.address[1]}", file=sys.stderr)
    try:
        return asyncio.run(_serve_edge(cfg, engine, updater))
    finally:
        if updater is not None:
            updater.stop()
        engine.close()
        (log_dir / "edge.pid").unlink(missing_ok=True)


def _write_health(engine: Engine, path: Path) -> None:
    doc = engine.health()
    doc["ts"] = time.time()
    doc["pid"] = os.getpid()
    write_atomic(path, json.dumps(doc, indent=2) + "\n")


async def _serve_edge(cfg, engine: Engine, updater) -> int:
    proxy = EdgeProxy(engine, cfg.broker, cfg.listen)
    await proxy.start()
    log_dir = cfg.log_dir
    write_atomic(log_dir / "edge.pid", f"{os.getpid()}\n")
    print(f"gateway listening on {cfg.listen[0]}:{proxy.port}, broker {cfg.broker[0]}:{cfg.broker[1]}",
          file=sys.stderr)
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()

    def reload_rules():
        if cfg.rules is None:
            log.warning("reload requested but no rules file is configured")
            return
        try:
            epoch = engine.firewall.replace_rules(load_rules(cfg.rules))
            log.info("rules reloaded, epoch %d", epoch)
        except (OSError, FirewallError) as exc:
            log.error("rules reload failed, keeping the current set: %s", exc)

    loop.add_signal_handler(signal.SIGTERM, stop.set)
    loop.add_signal_handler(signal.SIGINT, stop.set)
    loop.add_signal_handler(signal.SIGHUP, reload_rules)
    fog_identity = _single_identity(cfg.identity) if cfg.fog is not None else None
    health = log_dir / "health.json"
    try:
        while not stop.is_set():
            _write_health(engine, health)
            try:
                engine.rotate_log(time.time())
            except LogSuspended as exc:
                log.error("%s", exc)
            if fog_identity is not None and engine.feature_log.sealed:
                await loop.run_in_executor(None, _ship_sealed, cfg.fog, fog_identity, engine.feature_log)
            try:
                await asyncio.wait_for(stop.wait(), timeout=1.0)
            except asyncio.TimeoutError:
                pass
    finally:
        await proxy.stop()
        fl = engine.feature_log
        if fl.current_records:
            try:
                sealed = engine.rotate_log(time.time(), force=True)
                print(f"sealed {sealed.path} with {sealed.records} records", file=sys.stderr)
            except LogSuspended as exc:
                log.error("could not seal the feature log: %s", exc)
        _write_health(engine, health)
    return EXIT_OK


def _ship_sealed(fog, identity, feature_log: FeatureLog) -> None:
    reg, ident = identity
    while feature_log.sealed:
        sealed = feature_log.sealed[0]
        try:
            push_pending(fog, ident, reg, [sealed.path])
        except (OSError, ProtocolError) as exc:
            log.warning("could not ship %s to the fog: %s", sealed.path.name, exc)
            return
        feature_log.sealed.popleft()


def cmd_serve_fog(args) -> int:
    cfg = _config(args, "registry", "store", "fog", "dataset", "seed")
    cfg.require("registry", "store", "fog")
    registry = TrustRegistry.load(cfg.registry)
    store = FogStore(cfg.store)
    base = load_dataset(cfg.dataset) if cfg.dataset else LabeledTable([], [])
    opts = TrainOptions(args.algo, cfg.seed)
    targets = {}
    for item in args.edge or ():
        hexid, sep, addr = item.partition("=")
        if not sep:
            raise UsageError(f"--edge expects EDGE_HEX=host:port, got {item!r}")
        targets[_edge_id(hexid)] = endpoint(addr)
    pending: dict[bytes, int] = {}
    work_lock = threading.Lock()

    def retrain(edge_id: bytes) -> None:
        with work_lock:
            entry = registry.lookup(edge_id)
            try:
                result = retrain_cycle(store, entry, base, opts)
            except (ValueError, DatasetError) as exc:
                log.error("retraining for %s failed: %s", edge_id.hex(), exc)
                return
            log.info("model %d for %s trained on %d new records", result.tag.counter, edge_id.hex(), result.records)
            if edge_id in targets:
                try:
                    push_model(targets[edge_id], entry, result.model_bytes, result.tag)
                except (OSError, ProtocolError) as exc:
                    log.warning("model push to %s failed: %s", edge_id.hex(), exc)

    def on_data(tag, path) -> None:
        n = pending.get(tag.edge_id, 0) + 1
        pending[tag.edge_id] = n
        if n >= args.retrain_every:
            pending[tag.edge_id] = 0
            threading.Thread(target=retrain, args=(tag.edge_id,), daemon=True).start()

    service = FogService(registry, store, *cfg.fog, on_data=on_data)
    print(f"fog service on {service.address[0]}:{service.address[1]}", file=sys.stderr)
    stop = threading.Event()
    for sig in (signal.SIGTERM, signal.SIGINT):
        signal.signal(sig, lambda *_: stop.set())
    service.start()
    try:
        while not stop.wait(0.5):
            pass
    finally:
        service.stop()
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file (also EDGEGUARD_CONFIG)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="edgeguard", description="MQTT edge intrusion detection and prevention.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        sp.set_defaults(func=func)
        return sp

    s = add("train", cmd_train, "Train a classifier and write the model plus a metrics report.")
    s.add_argument("--dataset", help="training CSV, or a directory holding the reduced train/test CSVs")
    s.add_argument("--test-dataset", help="test CSV (otherwise a seeded 70/30 re-split)")
    s.add_argument("--model", help="output model file")
    s.add_argument("--algo", choices=ALGORITHMS, default="dt")
    s.add_argument("--seed", type=int)
    s.add_argument("--estimators", type=int)
    s.add_argument("--max-depth", type=int)
    s.add_argument("--learning-rate", type=float, default=0.1)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--no-select", action="store_true", help="skip the refit on selected features")
    s.add_argument("--selected-model", help="also write the model refit on the selected features")
    s.add_argument("--report-dir", help="where metrics CSVs and figures go (default MODEL.report)")

    s = add("evaluate", cmd_evaluate, "Score a model on a labeled CSV.")
    s.add_argument("--dataset")
    s.add_argument("--model")
    s.add_argument("--report-dir")
    s.add_argument("--min-accuracy", type=float)

    s = add("serve-edge", cmd_serve_edge, "Run the gateway between MQTT clients and the broker.")
    s.add_argument("--model")
    s.add_argument("--rules")
    s.add_argument("--listen", help="client-facing host:port")
    s.add_argument("--broker", help="upstream broker host:port")
    s.add_argument("--log-dir")
    s.add_argument("--event-log")
    s.add_argument("--rotation-period", help="seconds between feature log seals")
    s.add_argument("--update-listen", help="host:port accepting model pushes from the fog")
    s.add_argument("--identity", help="this edge's identity file")
    s.add_argument("--fog", help="fog host:port receiving sealed feature logs")
    s.add_argument("--no-reflect", action="store_true", help="drop flood packets instead of reflecting them")

    s = add("serve-fog", cmd_serve_fog, "Receive edge data, retrain, and push models back.")
    s.add_argument("--registry")
    s.add_argument("--store")
    s.add_argument("--fog", help="host:port to listen on")
    s.add_argument("--dataset", help="base training corpus merged with received data")
    s.add_argument("--algo", choices=ALGORITHMS, default="dt")
    s.add_argument("--seed", type=int)
    s.add_argument("--retrain-every", type=int, default=1, help="accepted data files per retraining cycle")
    s.add_argument("--edge", action="append", metavar="EDGE_HEX=HOST:PORT",
                   help="model push endpoint of an edge (repeatable)")

    s = add("push-data", cmd_push_data, "Send sealed feature logs to the fog.")
    s.add_argument("files", nargs="+")
    s.add_argument("--identity")
    s.add_argument("--fog")

    s = add("push-model", cmd_push_model, "Send a model file to an edge.")
    s.add_argument("model_file")
    s.add_argument("--edge-id", required=True)
    s.add_argument("--registry")
    s.add_argument("--update-listen", help="edge host:port accepting models")
    s.add_argument("--counter", type=int)

    s = add("latency", cmd_latency, "Transfer latency calculator.")
    s.add_argument("--latency-params", help="key = value parameter file overriding the defaults")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--file-size", help="e.g. 497KB")
    s.add_argument("--curve", help="comma separated sizes, e.g. 1KB,10KB,100KB,1MB")
    s.add_argument("--out", help="curve CSV path (a PNG is written next to it)")
    s.add_argument("--report-dir")

    s = add("simulate", cmd_simulate, "Generate labeled traffic, run it through the gateway, and score it.")
    s.add_argument("--scenario", default="all-attacks", help=f"one of: {', '.join(PRESETS)}")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--model", help="run an in-process gateway with this model")
    s.add_argument("--rules")
    s.add_argument("--gateway", help="host:port of a running gateway instead of in-process")
    s.add_argument("--event-log", help="event log of the running gateway")
    s.add_argument("--emit-replay", help="write the stream as a replay file plus PATH.truth.csv")
    s.add_argument("--emit-only", action="store_true", help="stop after writing the replay")
    s.add_argument("--replay", help="replay a stream written by --emit-replay")
    s.add_argument("--truth", help="ground truth for --replay (default REPLAY.truth.csv)")
    s.add_argument("--min-recall", action="append", metavar="CLASS=VALUE")
    s.add_argument("--max-fpr", type=float)
    s.add_argument("--check-actions", action="store_true", help="fail if any action differs from the response table")
    s.add_argument("--no-reflect", action="store_true")
    s.add_argument("--out", help="score report JSON")
    s.add_argument("--report-dir")
    for knob, typ in (("duration", float), ("clients", int), ("publish_rate", float), ("slowite_connections", int),
                      ("flood_publishes", int), ("bruteforce_attempts", int), ("malformed_frames", int),
                      ("corruption_rate", float), ("dos_sources", int)):
        s.add_argument("--" + knob.replace("_", "-"), type=typ, dest=knob)

    s = add("corpus", cmd_corpus, "Write a labeled training corpus from the traffic generators.")
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", type=int, default=8)
    s.add_argument("--first-seed", type=int, default=0)

    s = add("rules", cmd_rules, "Validate a firewall rules file; optionally hot-reload a running gateway.")
    s.add_argument("--rules")
    s.add_argument("--log-dir")
    s.add_argument("--reload", action="store_true")

    s = add("rebaseline", cmd_rebaseline, "Operator recovery: set an edge's last accepted counter.")
    s.add_argument("--registry")
    s.add_argument("--edge-id", required=True)
    s.add_argument("--kind", choices=("DVT", "TMVT"), required=True)
    s.add_argument("--counter", type=int, required=True)

    s = add("enroll", cmd_enroll, "Create an edge identity and add it to the fog registry.")
    s.add_argument("--registry")
    s.add_argument("--identity", help="output identity file for the edge")
    s.add_argument("--name", help="readable edge id (up to 16 bytes); random when omitted")

    s = add("health", cmd_health, "Show the running gateway's health record.")
    s.add_argument("--log-dir")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"edgeguard {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ThresholdMissed as exc:
        print(f"edgeguard {args.command}: threshold missed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (DatasetError, ModelFormatError, ModelRefused, FirewallError, RegistryError, lat.ParamError,
            ValueError) as exc:
        print(f"edgeguard {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ProtocolError, RuntimeError) as exc:
        print(f"edgeguard {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
