"""Built-in instrumented subject programs and mutation-based corpus generation."""
from .base import MutationPoint, Op, Subject, TestInput, run_subject, to_value
from .bigint import BigIntSubject
from .corpus import Corpus, NoFailingTracesError, generate_corpus
from .fsm import FsmSubject
from .refcount import RefcountSubject


def builtin_subjects() -> list[Subject]:
    return [FsmSubject("fsm-proto", "greeting"), FsmSubject("fsm-proto-b", "query"),
            BigIntSubject(), RefcountSubject()]


def get_subject(name: str) -> Subject:
    for s in builtin_subjects():
        if s.name == name:
            return s
    raise KeyError(f"unknown subject {name!r}; choose from "
                   + ", ".join(s.name for s in builtin_subjects()))


__all__ = ["Corpus", "MutationPoint", "NoFailingTracesError", "Op", "Subject", "TestInput",
           "builtin_subjects", "generate_corpus", "get_subject", "run_subject", "to_value"]
