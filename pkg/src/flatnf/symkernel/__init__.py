"""Exact symbolic kernel: variables, rational expressions, parsing, linear algebra, solving."""

from .expr import (
    KINDS,
    ONE,
    ZERO,
    Expr,
    Var,
    denominator,
    diff,
    evaluate,
    inp,
    irreducible_factors,
    monomial,
    normalize,
    numerator,
    poly_terms,
    state,
    substitute,
    to_str,
    yvar,
)
from .linalg import (
    EvaluationSingularity,
    RankConfig,
    SymMatrix,
    generic_rank,
    jacobian,
    nullspace,
    rank_config,
    rref,
    set_rank_config,
)
from .parse import ParseError, UndeclaredIdentifier, parse, parse_tree
from .solve import (
    SolveError,
    UnderdeterminedTargets,
    UnsupportedAlgebraicForm,
    eliminate,
    solve_for,
)

__all__ = [name for name in dir() if not name.startswith("_")]
