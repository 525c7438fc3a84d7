"""Deterministic stand-in for a text encoder: whitespace tokens hashed to seeded vectors."""
from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_PROMPT = "background scene"


def _token_vector(token: str, d_txt: int, seed: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}:{token}".encode(), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(d_txt) / np.sqrt(d_txt)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def embed_prompt(text: str, d_txt: int, n_txt: int, seed: int = 0) -> np.ndarray:
    """``(n_txt, d_txt)`` embedding; truncates long prompts and zero-pads short ones."""
    tokens = tokenize(text) or tokenize(DEFAULT_PROMPT)
    out = np.zeros((n_txt, d_txt))
    for i, tok in enumerate(tokens[:n_txt]):
        out[i] = _token_vector(tok, d_txt, seed)
    return out


def null_prompt(d_txt: int, n_txt: int) -> np.ndarray:
    """Embedding used for the unconditional branch."""
    return np.zeros((n_txt, d_txt))
