"""Learned test oracles: classify execution traces as passing or failing."""
from .oracle_net import (
    ModelParams,
    OracleConfig,
    classify,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .trace_io import Vocabulary, build_vocab, load_traces, pool_loop_lines, prune_external, write_traces
from .trace_model import GlobalBinding, Primitive, Tag, Trace, TraceLine, Value, Verdict
from .training import (
    Ablation,
    EvalReport,
    SplitSpec,
    TrainConfig,
    ablate,
    cross_eval,
    evaluate,
    split,
    sweep_fraction,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Ablation", "EvalReport", "GlobalBinding", "ModelParams", "OracleConfig", "Primitive",
    "SplitSpec", "Tag", "Trace", "TraceLine", "TrainConfig", "Value", "Verdict", "Vocabulary",
    "ablate", "build_vocab", "classify", "cross_eval", "evaluate", "init_params",
    "load_checkpoint", "load_traces", "pool_loop_lines", "prune_external", "save_checkpoint",
    "split", "sweep_fraction", "train", "write_traces",
]
