"""machforge: a workbench for abstract-machine construction.

Abstract machine instructions are written in a small logic dialect with
typed mutable variables, compiled through a basic-block IR into a full
bytecode emulator, transformed automatically (instruction merging,
operand collapsing, builtin specialization, ...), and measured on a
suite of classic logic-programming benchmarks.
"""

__version__ = "0.1.0"
