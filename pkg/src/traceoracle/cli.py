"""Command-line entry point: gen, train, eval, sweep, ablate, cross, baseline."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from dataclasses import replace
from typing import Optional, Sequence

from . import baseline
from .oracle_net import OracleConfig, load_checkpoint, save_checkpoint
from .rng import stream
from .subjects import NoFailingTracesError, Op, builtin_subjects, generate_corpus, get_subject
from .trace_io import InvalidTraceError, TraceFormatError, load_traces, write_traces
from .training import (
    Ablation,
    EvalReport,
    RunRow,
    SplitSpec,
    TrainConfig,
    ablate,
    cross_eval,
    predict,
    rows_csv,
    split,
    sweep_fraction,
    train,
)
from .trace_model import Verdict

log = logging.getLogger("traceoracle")

ECHO_FILE = "config.txt"


class CliError(Exception):
    """Reported on stderr with exit status 2."""


# -- configuration ------------------------------------------------------------

# flag name -> (type, default); every run echoes the resolved value of each
OPTIONS = {
    "seed": (int, 0),
    "out": (str, "out"),
    "traces": (str, None),
    "traces_b": (str, None),
    "checkpoint": (str, None),
    "subject": (str, "fsm-proto"),
    "inputs": (int, 1000),
    "budget": (int, 20000),
    "operators": (str, "all"),
    "fraction": (float, 0.10),
    "fractions": (str, "5,10,15,20,25,30"),
    "stratified": (bool, True),
    "threshold": (float, 0.5),
    "kmin": (int, 2),
    "max_lines": (int, 1000),
    "max_prims": (int, 256),
    "d_v": (int, 64),
    "d_t": (int, 128),
    "hidden": (str, "128,64,32"),
    "batch": (int, 32),
    "epochs": (int, 100),
    "patience": (int, 10),
    "min_delta": (float, 1e-4),
    "lr": (float, 1e-3),
    "init": (float, 0.08),
    "mlp_init": (str, "fan"),
    "drop": (str, None),
    "linkages": (str, "single,average,complete"),
    "cluster_fractions": (str, ",".join(f"{f:g}" for f in baseline.FRACTIONS)),
}

# which options each subcommand reads; the echo lists exactly these
_MODEL = ["threshold", "kmin", "max_lines", "max_prims", "d_v", "d_t", "hidden",
          "batch", "epochs", "patience", "min_delta", "lr", "init", "mlp_init"]
USES = {
    "gen": ["seed", "out", "subject", "inputs", "budget", "operators"],
    "train": ["seed", "out", "traces", "fraction", "stratified"] + _MODEL,
    "eval": ["seed", "out", "traces", "checkpoint", "threshold"],
    "sweep": ["seed", "out", "traces", "fractions"] + _MODEL,
    "ablate": ["seed", "out", "traces", "fraction", "drop"] + _MODEL,
    "cross": ["seed", "out", "traces", "traces_b", "fraction"] + _MODEL,
    "baseline": ["seed", "out", "traces", "kmin", "linkages", "cluster_fractions"],
}


def _to_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(key: str, raw):
    typ = OPTIONS[key][0]
    if raw is None:
        return None
    try:
        return _to_bool(raw) if typ is bool else typ(raw)
    except ValueError as e:
        raise CliError(f"bad value for {key}: {raw!r} ({e})") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise CliError(f"cannot read config file {path}: {e.strerror}") from None
    with fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key == "command":  # echo files can be fed back in
                continue
            if key not in OPTIONS:
                raise CliError(f"{path}:{n}: unknown setting {key!r}")
            out[key] = value
    return out


def resolve(command: str, flags: dict, config_path: Optional[str]) -> dict:
    """Defaults, then config file, then explicit flags."""
    values = {k: OPTIONS[k][1] for k in USES[command]}
    if config_path:
        for k, v in read_config_file(config_path).items():
            if k in values:
                values[k] = _convert(k, v)
    for k, v in flags.items():
        if k in values and v is not None:
            values[k] = _convert(k, v)
    return values


def echo_text(command: str, values: dict) -> str:
    lines = [f"command = {command}"]
    for k in sorted(values):
        v = values[k]
        lines.append(f"{k} = {'' if v is None else v}")
    return "\n".join(lines) + "\n"


def _ints(text: str, what: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CliError(f"{what} must be a comma-separated list of integers: {text!r}") from None


def _fractions(text: str) -> list[float]:
    """``5,10,30`` are percentages; ``0.05,0.1`` are fractions."""
    out = []
    for x in text.split(","):
        x = x.strip()
        if not x:
            continue
        try:
            f = float(x)
        except ValueError:
            raise CliError(f"bad fraction {x!r}") from None
        out.append(f / 100.0 if f >= 1.0 else f)
    if not out:
        raise CliError("empty fraction list")
    return out


def oracle_config(v: dict) -> OracleConfig:
    try:
        return OracleConfig(d_v=v["d_v"], d_t=v["d_t"], hidden=tuple(_ints(v["hidden"], "hidden")),
                            threshold=v["threshold"], max_lines=v["max_lines"],
                            max_prims=v["max_prims"], k_min=v["kmin"])
    except ValueError as e:
        raise CliError(str(e)) from None


def train_config(v: dict) -> TrainConfig:
    if v["mlp_init"] not in ("fan", "uniform"):
        raise CliError("mlp_init must be 'fan' or 'uniform'")
    return TrainConfig(lr=v["lr"], batch_size=v["batch"], max_epochs=v["epochs"],
                       patience=v["patience"], min_delta=v["min_delta"], init_scale=v["init"],
                       mlp_init=v["mlp_init"])


# -- helpers ---------------------------------------------------------------------

def defined_names(traces) -> Optional[frozenset]:
    """Union of the defined-method sets of the built-in subjects present.

    Returns None (no pruning) if any trace comes from a subject that is not
    built in, since its defined set is unknown.
    """
    known = {s.name: s.defined for s in builtin_subjects()}
    names = {t.subject for t in traces}
    if not names <= known.keys():
        log.warning("no defined-method list for %s; external calls are kept",
                    ", ".join(sorted(names - known.keys())))
        return None
    return frozenset().union(*(known[n] for n in names)) if names else None


def _load(path: Optional[str], flag: str = "--traces"):
    if not path:
        raise CliError(f"{flag} is required")
    try:
        return load_traces(path)
    except FileNotFoundError:
        raise CliError(f"trace file not found: {path}") from None
    except TraceFormatError as e:
        raise CliError(f"{path}: {e}") from None
    except InvalidTraceError as e:
        raise CliError(f"{path}: {e}") from None


def _labelled(traces, path):
    missing = sum(t.label is None for t in traces)
    if missing:
        raise CliError(f"{path}: {missing} trace(s) carry no label; this command needs labels")
    return traces


class Output:
    """Output directory writer; files are written whole or not at all."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(path, exist_ok=True)
        self.written: list[str] = []

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def text(self, name: str, content: str) -> str:
        target = self.file(name)
        tmp = target + ".part"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(content)
        os.replace(tmp, target)
        self.written.append(name)
        return target


def _report_csv(report: EvalReport, extra: Optional[dict] = None) -> str:
    row = {**(extra or {}), **report.row()}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(row))
    w.writerow(["" if x is None else (repr(x) if isinstance(x, float) else x) for x in row.values()])
    return buf.getvalue()


def _losses_csv(losses) -> str:
    return "epoch,loss\n" + "".join(f"{i + 1},{l!r}\n" for i, l in enumerate(losses))


def _verdicts_csv(traces, preds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trace_id", "p_fail", "verdict", "label"])
    for t, (p, v) in zip(traces, preds):
        w.writerow([t.trace_id, repr(p), str(v), "" if t.label is None else str(t.label)])
    return buf.getvalue()


# -- subcommands -------------------------------------------------------------------

def cmd_gen(v: dict, out: Output) -> str:
    try:
        subject = get_subject(v["subject"])
    except KeyError as e:
        raise CliError(e.args[0]) from None
    ops = None
    if v["operators"] and v["operators"].lower() != "all":
        try:
            ops = [Op.parse(x) for x in v["operators"].split(",")]
        except (KeyError, ValueError) as e:
            raise CliError(f"unknown operator in {v['operators']!r}: {e}") from None
    inputs = subject.generate_inputs(v["inputs"], stream(v["seed"], "inputs", subject.name))
    try:
        corpus = generate_corpus(subject, inputs, v["budget"], v["seed"], ops)
    except NoFailingTracesError as e:
        raise CliError(str(e)) from None
    write_traces(out.file("traces.jsonl"), corpus.traces)
    out.written.append("traces.jsonl")
    out.text("manifest.csv", corpus.manifest_csv())
    c = corpus.counts()
    return (f"{subject.name}: {len(corpus.traces)} traces ({c['pass']} pass, {c['fail']} fail) "
            f"from {corpus.attempts} mutant runs")


def cmd_train(v: dict, out: Output) -> str:
    traces = _labelled(_load(v["traces"]), v["traces"])
    defined = defined_names(traces)
    try:
        tr, te = split(traces, SplitSpec(v["fraction"], v["seed"], v["stratified"]))
        res = train(tr, oracle_config(v), train_config(v), v["seed"], defined)
    except ValueError as e:
        raise CliError(str(e)) from None
    res.params.meta["defined"] = None if defined is None else sorted(defined)
    digest = save_checkpoint(out.file("checkpoint.json"), res.params)
    out.written.append("checkpoint.json")
    out.text("loss.csv", _losses_csv(res.losses))
    preds = predict(res.params, te, defined)
    report = EvalReport.from_verdicts([p[1] for p in preds], [t.label for t in te])
    out.text("report.csv", _report_csv(report, {"split": "test", "n_train": len(tr),
                                                "epochs": res.epochs}))
    out.text("verdicts.csv", _verdicts_csv(te, preds))
    out.text("split.csv", "trace_id,part\n" + "".join(f"{t.trace_id},train\n" for t in tr)
             + "".join(f"{t.trace_id},test\n" for t in te))
    return f"trained on {len(tr)} traces for {res.epochs} epochs (checkpoint {digest[:12]})\n" \
           f"test {report.summary()}"


def cmd_eval(v: dict, out: Output) -> str:
    if not v["checkpoint"]:
        raise CliError("--checkpoint is required")
    try:
        params = load_checkpoint(v["checkpoint"])
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {v['checkpoint']}") from None
    except (ValueError, KeyError) as e:
        raise CliError(f"{v['checkpoint']}: {e}") from None
    if v["threshold"] is not None and v["threshold"] != params.config.threshold:
        try:
            params.config = replace(params.config, threshold=v["threshold"])
        except ValueError as e:
            raise CliError(str(e)) from None
    traces = _load(v["traces"])
    stored = params.meta.get("defined", "absent")
    defined = defined_names(traces) if stored == "absent" else (
        None if stored is None else frozenset(stored))
    preds = predict(params, traces, defined)
    out.text("verdicts.csv", _verdicts_csv(traces, preds))
    if all(t.label is not None for t in traces) and traces:
        report = EvalReport.from_verdicts([p[1] for p in preds], [t.label for t in traces])
        out.text("report.csv", _report_csv(report, {"split": "eval"}))
        return report.summary()
    n_fail = sum(p[1] is Verdict.FAIL for p in preds)
    return f"{len(traces)} traces classified: {n_fail} fail, {len(traces) - n_fail} pass (unlabelled)"


def _summary(rows: Sequence[RunRow], key: str) -> str:
    return "\n".join(f"{key} {r.key}: {r.report.summary()}" for r in rows)


def cmd_sweep(v: dict, out: Output) -> str:
    traces = _labelled(_load(v["traces"]), v["traces"])
    fr = _fractions(v["fractions"])
    try:
        rows = sweep_fraction(traces, fr, oracle_config(v), train_config(v), v["seed"],
                              defined_names(traces))
    except ValueError as e:
        raise CliError(str(e)) from None
    out.text("sweep.csv", rows_csv(rows, "fraction"))
    return _summary(rows, "fraction")


def cmd_ablate(v: dict, out: Output) -> str:
    traces = _labelled(_load(v["traces"]), v["traces"])
    if not v["drop"]:
        raise CliError("--drop is required (one or more of: "
                       + ", ".join(a.value for a in Ablation) + ")")
    try:
        flags = [Ablation.parse(x) for x in v["drop"].split(",") if x.strip()]
    except ValueError as e:
        raise CliError(f"unknown ablation: {e}") from None
    defined = defined_names(traces)
    rows = []
    for flag in flags:
        try:
            rows.append(ablate(traces, flag, v["fraction"], oracle_config(v), train_config(v),
                               v["seed"], defined))
        except ValueError as e:
            raise CliError(str(e)) from None
    out.text("ablation.csv", rows_csv(rows, "ablation"))
    return _summary(rows, "ablation")


def cmd_cross(v: dict, out: Output) -> str:
    a = _labelled(_load(v["traces"]), v["traces"])
    b = _labelled(_load(v["traces_b"], "--traces-b"), v["traces_b"])
    try:
        reports = cross_eval(a, b, v["fraction"], oracle_config(v), train_config(v), v["seed"],
                             defined_names(a), defined_names(b))
    except ValueError as e:
        raise CliError(str(e)) from None
    rows = [RunRow(name, rep, 0, v["seed"]) for name, rep in reports.items()]
    out.text("cross.csv", rows_csv(rows, "subject"))
    return _summary(rows, "subject")


def cmd_baseline(v: dict, out: Output) -> str:
    traces = _labelled(_load(v["traces"]), v["traces"])
    try:
        links = [baseline.Linkage.parse(x) for x in v["linkages"].split(",") if x.strip()]
        fr = _fractions(v["cluster_fractions"])
        vocab = baseline.callee_vocab(traces, v["kmin"])
        best, rows = baseline.grid_search(traces, vocab, links, fr)
    except ValueError as e:
        raise CliError(str(e)) from None
    out.text("baseline.csv", baseline.grid_csv(rows))
    return (f"{len(rows)} configurations; best {best.config.linkage.name.lower()} "
            f"fraction {best.config.fraction:g}: {best.report.summary()}")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "ablate": cmd_ablate, "cross": cmd_cross, "baseline": cmd_baseline}

HELP = {
    "gen": "run a built-in subject and its mutants into a labelled trace file",
    "train": "train an oracle on a split of a labelled corpus",
    "eval": "classify traces with a saved checkpoint",
    "sweep": "train and evaluate over several training fractions",
    "ablate": "retrain with one trace channel removed",
    "cross": "train on one corpus and evaluate on another",
    "baseline": "grid search the clustering baseline",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="traceoracle",
                                     description="Learn test oracles from execution traces.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="key = value file; explicit flags win")
        for key in USES[name]:
            typ, default = OPTIONS[key]
            flag = "--" + key.replace("_", "-")
            shown = "" if default is None else f" (default {default})"
            p.add_argument(flag, dest=key, default=None,
                           help=f"{key.replace('_', ' ')}{shown}")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        values = resolve(args.command, flags, args.config)
        out = Output(values["out"])
        out.text(ECHO_FILE, echo_text(args.command, values))
        t0 = time.perf_counter()
        message = COMMANDS[args.command](values, out)
    except CliError as e:
        print(f"traceoracle {args.command}: error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"traceoracle {args.command}: error: {e}", file=sys.stderr)
        return 1
    print(message)
    log.info("%s done in %.1fs; wrote %s", args.command, time.perf_counter() - t0,
             ", ".join(out.written))
    return 0


if __name__ == "__main__":
    sys.exit(main())
