"""LTLf over finite traces: syntax, parser, semantics and DFA compilation."""

from .automaton import BudgetExceeded, Dfa, DfaError, progress, to_dfa
from .parser import LtlfSyntaxError, parse
from .semantics import evaluate
from .syntax import (
    FALSE,
    TRUE,
    And,
    Atom,
    Bot,
    Eventually,
    Formula,
    Globally,
    Next,
    Not,
    Or,
    Top,
    Until,
    depth,
    normalize,
)

__all__ = [
    "And", "Atom", "Bot", "BudgetExceeded", "Dfa", "DfaError", "Eventually", "FALSE", "Formula",
    "Globally", "LtlfSyntaxError", "Next", "Not", "Or", "TRUE", "Top", "Until", "depth", "evaluate",
    "normalize", "parse", "progress", "to_dfa",
]
