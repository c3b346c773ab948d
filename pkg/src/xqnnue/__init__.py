"""Xiangqi NNUE toolchain: rules engine, alpha-beta search, quiet-position
dataset generation, from-scratch NNUE training, and engine match testing."""

from .board import (BLACK, MATE_SCORE, RED, STARTPOS_FEN, FenError,
                    IllegalPositionError, Move, Position, parse_fen, to_fen)
from .pst import PstTables, default_tables, evaluate

__all__ = [
    "BLACK", "MATE_SCORE", "RED", "STARTPOS_FEN", "FenError",
    "IllegalPositionError", "Move", "Position", "parse_fen", "to_fen",
    "PstTables", "default_tables", "evaluate",
]

__version__ = "0.1.0"
