"""Hill cipher over integers mod 26 (letters) or mod 256 (bytes).

Each block of ``n`` symbols is a column vector ``p`` mapped to ``K·p mod m``.
Plaintext is padded with zero symbols and the true length travels in the
:class:`CipherBlob`, so de-padding is unambiguous. This is a classical cipher
with no real cryptographic strength.
"""
from __future__ import annotations

import logging
import math
import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from keylog_guard.common.errors import (
    BlobFormatError,
    CodecError,
    DecryptError,
    DimensionError,
    HillKeyError,
    ModularInverseError,
)

LETTERS_MODULUS = 26
BYTE_MODULUS = 256
SUPPORTED_MODULI = (LETTERS_MODULUS, BYTE_MODULUS)
MIN_BLOCK_SIZE = 2
MAX_BLOCK_SIZE = 8
DEFAULT_BLOCK_SIZE = 2

BLOB_MAGIC = b"HCB1"
_BLOB_HEADER = struct.Struct(">4sBBQ")
BLOB_HEADER_SIZE = _BLOB_HEADER.size
_MODULUS_FLAGS = {LETTERS_MODULUS: 0, BYTE_MODULUS: 1}
_FLAG_MODULI = {flag: modulus for modulus, flag in _MODULUS_FLAGS.items()}

LOGGER = logging.getLogger(__name__)

Matrix = tuple[tuple[int, ...], ...]


def mod_inverse(a: int, m: int) -> int:
    """Return ``x`` in ``[0, m)`` with ``a·x ≡ 1 (mod m)`` using extended Euclid."""
    if m < 2:
        raise ModularInverseError(f"modulus must be at least 2, got {m}")
    a %= m
    old_r, r = a, m
    old_s, s = 1, 0
    while r:
        quotient = old_r // r
        old_r, r = r, old_r - quotient * r
        old_s, s = s, old_s - quotient * s
    if old_r != 1:
        raise ModularInverseError(f"{a} has no inverse modulo {m} (gcd={old_r})")
    return old_s % m


def determinant(rows: Sequence[Sequence[int]]) -> int:
    """Exact integer determinant by fraction-free (Bareiss) elimination."""
    a = [list(row) for row in rows]
    size = len(a)
    if size == 1:
        return a[0][0]
    sign = 1
    previous_pivot = 1
    for k in range(size - 1):
        if a[k][k] == 0:
            swap = next((i for i in range(k + 1, size) if a[i][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, size):
            for j in range(k + 1, size):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // previous_pivot
        previous_pivot = a[k][k]
    return sign * a[size - 1][size - 1]


def _adjugate(rows: Sequence[Sequence[int]]) -> list[list[int]]:
    size = len(rows)
    adjugate = [[0] * size for _ in range(size)]
    for i in range(size):
        for j in range(size):
            minor = [row[:j] + row[j + 1:] for index, row in enumerate(map(list, rows)) if index != i]
            cofactor = determinant(minor) * (-1 if (i + j) % 2 else 1)
            adjugate[j][i] = cofactor
    return adjugate


@dataclass(frozen=True, slots=True)
class HillKey:
    n: int
    m: int
    entries: Matrix

    def __post_init__(self) -> None:
        _check_shape(self.entries, self.m)
        if any(not 0 <= value < self.m for row in self.entries for value in row):
            raise HillKeyError(f"key entries must be reduced into [0, {self.m})")
        if len(self.entries) != self.n:
            raise DimensionError(f"key declares n={self.n} but has {len(self.entries)} rows")
        _check_invertible(self.entries, self.m)

    def matrix(self) -> np.ndarray:
        return np.array(self.entries, dtype=np.int64)


def _check_shape(entries: Sequence[Sequence[int]], m: int) -> None:
    if m not in SUPPORTED_MODULI:
        raise HillKeyError(f"modulus must be one of {SUPPORTED_MODULI}, got {m}")
    size = len(entries)
    if not MIN_BLOCK_SIZE <= size <= MAX_BLOCK_SIZE:
        raise DimensionError(f"block size must be in [{MIN_BLOCK_SIZE}, {MAX_BLOCK_SIZE}], got {size}")
    for index, row in enumerate(entries):
        if len(row) != size:
            raise DimensionError(f"key matrix must be {size}x{size}; row {index} has {len(row)} entries")


def _check_invertible(entries: Sequence[Sequence[int]], m: int) -> None:
    det = determinant(entries)
    reduced = det % m
    divisor = math.gcd(reduced, m)
    if divisor == 1:
        return
    if m == BYTE_MODULUS and reduced % 2 == 0:
        raise HillKeyError(
            f"key is not invertible: det={det} is even, modulus {m} requires an odd determinant"
        )
    raise HillKeyError(f"key is not invertible: det={det}, det mod {m} = {reduced}, gcd with {m} is {divisor}")


def make_key(entries: Sequence[Sequence[int]], m: int) -> HillKey:
    _check_shape(entries, m)
    reduced = tuple(tuple(int(value) % m for value in row) for row in entries)
    return HillKey(len(reduced), m, reduced)


def invert_key(key: HillKey) -> HillKey:
    det_inverse = mod_inverse(determinant(key.entries), key.m)
    adjugate = _adjugate(key.entries)
    entries = tuple(tuple((det_inverse * value) % key.m for value in row) for row in adjugate)
    return HillKey(key.n, key.m, entries)


def generate_key(n: int = DEFAULT_BLOCK_SIZE, m: int = BYTE_MODULUS, seed: Optional[int] = None) -> HillKey:
    """Draw random matrices until one is invertible mod ``m``."""
    _check_shape([[0] * n for _ in range(n)], m)
    rng = random.Random(seed)
    attempts = 0
    while True:
        attempts += 1
        entries = [[rng.randrange(m) for _ in range(n)] for _ in range(n)]
        try:
            key = make_key(entries, m)
        except HillKeyError:
            continue
        LOGGER.debug("Generated %sx%s key mod %s after %s attempt(s)", n, n, m, attempts)
        return key


def dump_key(key: HillKey) -> str:
    lines = [f"{key.n} {key.m}"]
    lines.extend(" ".join(str(value) for value in row) for row in key.entries)
    return "\n".join(lines) + "\n"


def parse_key(text: str) -> HillKey:
    lines = [line.split() for line in text.splitlines() if line.strip()]
    if not lines:
        raise HillKeyError("key file is empty")
    try:
        n, m = (int(token) for token in lines[0])
    except ValueError:
        raise HillKeyError("first line of a key file must be 'n m'") from None
    rows = lines[1:]
    if len(rows) != n:
        raise DimensionError(f"key file declares n={n} but has {len(rows)} matrix row(s)")
    try:
        entries = [[int(token) for token in row] for row in rows]
    except ValueError as exc:
        raise HillKeyError(f"key matrix entries must be integers: {exc}") from None
    return make_key(entries, m)


def load_key(path: Union[str, Path]) -> HillKey:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise HillKeyError(f"key file {path} is not UTF-8 text: {exc}") from exc
    return parse_key(text)


@dataclass(frozen=True, slots=True)
class CipherBlob:
    n: int
    m: int
    original_len: int
    body: bytes

    def __post_init__(self) -> None:
        if not MIN_BLOCK_SIZE <= self.n <= MAX_BLOCK_SIZE:
            raise BlobFormatError(f"blob block size {self.n} out of range")
        if self.m not in SUPPORTED_MODULI:
            raise BlobFormatError(f"blob modulus {self.m} unsupported")
        body_len = len(self.body)
        if body_len % self.n:
            raise BlobFormatError(f"body length {body_len} is not a multiple of n={self.n}")
        if not 0 <= self.original_len <= body_len or body_len - self.original_len >= self.n:
            raise BlobFormatError(
                f"original_len {self.original_len} inconsistent with body length {body_len}"
            )


def blob_to_bytes(blob: CipherBlob) -> bytes:
    header = _BLOB_HEADER.pack(BLOB_MAGIC, blob.n, _MODULUS_FLAGS[blob.m], blob.original_len)
    return header + blob.body


def blob_from_bytes(data: bytes) -> CipherBlob:
    if len(data) < BLOB_HEADER_SIZE:
        raise BlobFormatError(f"cipher blob needs {BLOB_HEADER_SIZE} header bytes, got {len(data)}")
    magic, n, flag, original_len = _BLOB_HEADER.unpack_from(data)
    if magic != BLOB_MAGIC:
        raise BlobFormatError(f"bad cipher blob magic {magic!r}")
    if flag not in _FLAG_MODULI:
        raise BlobFormatError(f"unknown modulus flag {flag}")
    return CipherBlob(n, _FLAG_MODULI[flag], original_len, bytes(data[BLOB_HEADER_SIZE:]))


def encode_symbols(data: bytes, m: int) -> np.ndarray:
    """Map bytes to symbols; letters mode folds case and rejects anything outside A-Z."""
    values = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    if m == BYTE_MODULUS:
        return values
    folded = np.where((values >= ord("a")) & (values <= ord("z")), values - 32, values)
    invalid = (folded < ord("A")) | (folded > ord("Z"))
    if invalid.any():
        offset = int(np.argmax(invalid))
        raise CodecError(f"byte {data[offset]:#04x} is not a letter", offset=offset)
    return folded - ord("A")


def decode_symbols(symbols: np.ndarray, m: int) -> bytes:
    if m == BYTE_MODULUS:
        return symbols.astype(np.uint8).tobytes()
    return (symbols + ord("A")).astype(np.uint8).tobytes()


def _transform(symbols: np.ndarray, matrix: np.ndarray, n: int, m: int) -> np.ndarray:
    blocks = symbols.reshape(-1, n)
    # rows are blocks, so K·p becomes p·Kᵀ
    return ((blocks @ matrix.T) % m).reshape(-1)


def encrypt(plaintext: bytes, key: HillKey) -> CipherBlob:
    symbols = encode_symbols(plaintext, key.m)
    padding = (-len(symbols)) % key.n
    padded = np.concatenate([symbols, np.zeros(padding, dtype=np.int64)])
    body = decode_symbols(_transform(padded, key.matrix(), key.n, key.m), key.m)
    return CipherBlob(key.n, key.m, len(plaintext), body)


def decrypt(blob: CipherBlob, key: HillKey) -> bytes:
    if blob.n != key.n or blob.m != key.m:
        raise DecryptError(
            f"blob was encrypted with n={blob.n}, m={blob.m} but key has n={key.n}, m={key.m}"
        )
    try:
        symbols = encode_symbols(blob.body, blob.m)
    except CodecError as exc:
        raise DecryptError(f"letters-mode body is not letters: {exc}") from exc
    inverse = invert_key(key)
    plain = _transform(symbols, inverse.matrix(), key.n, key.m)
    return decode_symbols(plain[: blob.original_len], key.m)


__all__ = [
    "BLOB_HEADER_SIZE",
    "BLOB_MAGIC",
    "BYTE_MODULUS",
    "LETTERS_MODULUS",
    "CipherBlob",
    "HillKey",
    "blob_from_bytes",
    "blob_to_bytes",
    "decode_symbols",
    "decrypt",
    "determinant",
    "dump_key",
    "encode_symbols",
    "encrypt",
    "generate_key",
    "invert_key",
    "load_key",
    "make_key",
    "mod_inverse",
    "parse_key",
]
