from .syntax import (
    AbsSubst,
    AssignMut,
    Call,
    Clause,
    Conj,
    Cut,
    Disj,
    Fail,
    Goal,
    IfThenElse,
    InitMut,
    InsAlias,
    InsEntry,
    InsOpcode,
    NormPred,
    NormProgram,
    PredAssertion,
    ReadMut,
    RegType,
    True_,
    Unify,
    VarFact,
    goal_vars,
)
from .parser import parse_source
from .normalize import check_admissible, denormalize, normalize

__all__ = [
    "AbsSubst", "AssignMut", "Call", "Clause", "Conj", "Cut", "Disj",
    "Fail", "Goal", "IfThenElse", "InitMut", "InsAlias", "InsEntry",
    "InsOpcode", "NormPred", "NormProgram", "PredAssertion", "ReadMut",
    "RegType", "True_", "Unify", "VarFact", "goal_vars",
    "parse_source", "check_admissible", "denormalize", "normalize",
]
