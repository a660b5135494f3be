"""Scalar coefficient functions: representation, evaluation, quadrature, primitives."""

from .expr import Expr, ExpressionError, parse
from .function import (
    LAMBDA,
    CoefficientDomainError,
    CoefficientFunction,
    MonotoneCheck,
    Piece,
    Primitive,
    antiderivative,
    as_function,
    evaluate,
    integrate,
    is_strictly_monotone_primitive,
)
from .quadrature import QuadratureError, gauss_kronrod

__all__ = [
    "LAMBDA",
    "CoefficientDomainError",
    "CoefficientFunction",
    "Expr",
    "ExpressionError",
    "MonotoneCheck",
    "Piece",
    "Primitive",
    "QuadratureError",
    "antiderivative",
    "as_function",
    "evaluate",
    "gauss_kronrod",
    "integrate",
    "is_strictly_monotone_primitive",
    "parse",
]
