"""Hashed bag-of-tokens features for (prompt, program, reward) triples."""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache

import numpy as np

from cosmocore.core import FEATURE_DIM
from cosmocore.miniworld.dsl import Program

PROMPT_DIM = 256
PROGRAM_DIM = 255
REWARD_SLOT = PROMPT_DIM + PROGRAM_DIM

_TOKEN = re.compile(r"[a-z0-9_]+|[<>=!]+")


def _bucket(token: str, width: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % width


def prompt_tokens(prompt: str) -> list[str]:
    return _TOKEN.findall(prompt.lower())


def program_tokens(program: Program) -> list[str]:
    tokens = [] if program.well_formed else ["<ill-formed>"]
    for pos, op in enumerate(program.ops):
        tokens.append(f"op:{op.kind}")
        tokens.append(f"pos{pos}:{op.kind}")
        for name in op.__dataclass_fields__:
            value = getattr(op, name)
            parts = value if isinstance(value, tuple) else (value,)
            if not parts:
                tokens.append(f"{op.kind}.{name}:<empty>")
            for part in parts:
                tokens.append(f"{op.kind}.{name}:{type(part).__name__}:{part}")
    return tokens


def _hashed_block(tokens: list[str], width: int) -> np.ndarray:
    block = np.zeros(width)
    for tok in tokens:
        block[_bucket(tok, width)] += 1.0
    norm = np.linalg.norm(block)
    return block / norm if norm > 0 else block


@lru_cache(maxsize=4096)
def _cached_blocks(prompt: str, program: Program) -> tuple[np.ndarray, np.ndarray]:
    p = _hashed_block(prompt_tokens(prompt), PROMPT_DIM)
    q = _hashed_block(program_tokens(program), PROGRAM_DIM)
    p.flags.writeable = False
    q.flags.writeable = False
    return p, q


def encode_features(prompt: str, program: Program, reward: float) -> np.ndarray:
    """512-dim vector: 256 prompt buckets, 255 program buckets, 1 reward slot.

    Each hashed block is L2-normalised (left at zero for an empty bag).
    """
    p, q = _cached_blocks(prompt, program)
    out = np.empty(FEATURE_DIM)
    out[:PROMPT_DIM] = p
    out[PROMPT_DIM:REWARD_SLOT] = q
    out[REWARD_SLOT] = float(reward)
    return out
