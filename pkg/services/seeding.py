"""Seed derivation and random stream construction.

Every random stream in rwre-lab is a numpy ``Generator`` over a ``Philox``
bit generator. Streams are never shared between replicas: each replica derives
its own seeds from the master seed through :func:`derive_seeds`, and the
environment value at a lattice site is drawn from a stream keyed by
``(env_seed, site)`` alone, which makes the environment a pure function of
the site.

The derivation is stable across versions: BLAKE2b with an 8-byte digest over
the UTF-8 text ``"<master_seed>:<stream_label>:<index>"``, read big-endian.
"""

import hashlib
from typing import Iterable, List

from numpy.random import Generator, Philox, SeedSequence

SEED_BITS = 64


def derive_seeds(master_seed: int, stream_label: str, index: int) -> int:
    """Derive a 64-bit seed for replica ``index`` of stream ``stream_label``."""
    material = f"{int(master_seed)}:{stream_label}:{int(index)}".encode("utf-8")
    digest = hashlib.blake2b(material, digest_size=SEED_BITS // 8).digest()
    return int.from_bytes(digest, "big")


def make_rng(seed: int) -> Generator:
    """Stream owned by one walk or one replica."""
    return Generator(Philox(SeedSequence(int(seed))))


def _zigzag(value: int) -> int:
    return 2 * value if value >= 0 else -2 * value - 1


def site_key(env_seed: int, site: Iterable[int]) -> List[int]:
    """Nonnegative entropy words identifying (env_seed, site)."""
    return [int(env_seed)] + [_zigzag(int(c)) for c in site]


def site_rng(env_seed: int, site: Iterable[int]) -> Generator:
    """Counter-based stream for one lattice site of one environment."""
    return Generator(Philox(SeedSequence(site_key(env_seed, site))))


def independent_env_seed(env_seed: int) -> int:
    """Environment seed of the second walk in independent-environments mode."""
    return derive_seeds(env_seed, "independent-environment", 1)

