"""Reproducible per-path Brownian increment streams.

Every path owns a Philox (counter-based) bit generator whose key is derived
from ``(master_seed, path_index)`` through :class:`numpy.random.SeedSequence`
spawn keys.  Derivation is a pure hash of the pair, so the stream of path
``i`` never depends on how many other paths exist or which worker draws it.
Normals come from :meth:`numpy.random.Generator.standard_normal` (ziggurat),
whose output is invariant under how draws are chunked.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

_UINT64 = (1 << 64) - 1


@dataclass(frozen=True)
class StreamSpec:
    master_seed: int
    path_index: int

    def seed_sequence(self):
        return np.random.SeedSequence(
            entropy=int(self.master_seed) & _UINT64,
            spawn_key=(int(self.path_index) & _UINT64,),
        )


class IncrementStream:
    """Standard-normal source for one path."""

    def __init__(self, spec):
        self.spec = spec
        self._gen = np.random.Generator(np.random.Philox(spec.seed_sequence()))

    def normals(self, n, noise_dim):
        """Next ``n`` standard-normal vectors, shape ``(n, noise_dim)``."""
        return self._gen.standard_normal((n, noise_dim))


def derive_stream(master_seed, path_index):
    return IncrementStream(StreamSpec(int(master_seed), int(path_index)))


def derive_seed(master_seed, *tags):
    """A 63-bit child seed for a named sub-experiment of ``master_seed``.

    Used to keep e.g. the reference-limit paths and the deviation paths of
    one experiment statistically independent.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed) & _UINT64,
                                spawn_key=tuple(int(t) & _UINT64 for t in tags))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def sample_increment(stream, tau, noise_dim):
    """One increment ``sqrt(tau) * z`` with ``z ~ N(0, I_noise_dim)``."""
    if tau < 0:
        raise ContractViolation(f"tau must be non-negative, got {tau}")
    return np.sqrt(tau) * stream.normals(1, noise_dim)[0]


def block_normals(streams, n, noise_dim):
    """Next ``n`` normals from each stream, stacked to ``(n, len(streams), D)``."""
    return np.stack([s.normals(n, noise_dim) for s in streams], axis=1)


def aggregate_increments(fine_increments, ratio):
    """Sum consecutive groups of ``ratio`` fine increments along axis 0.

    Coarse increment ``k`` is the sum of fine increments
    ``[k*ratio, (k+1)*ratio)``, so coarse and fine paths see one Brownian path.
    """
    fine = np.asarray(fine_increments, dtype=np.float64)
    ratio = int(ratio)
    if ratio < 1:
        raise ContractViolation(f"ratio must be >= 1, got {ratio}")
    if fine.shape[0] % ratio:
        raise ContractViolation(
            f"{fine.shape[0]} increments are not divisible by ratio {ratio}")
    if ratio == 1:
        return fine.copy()
    grouped = fine.reshape((fine.shape[0] // ratio, ratio) + fine.shape[1:])
    # sequential left-to-right sum: exact definition, no pairwise reordering
    out = grouped[:, 0].copy()
    for j in range(1, ratio):
        out += grouped[:, j]
    return out
