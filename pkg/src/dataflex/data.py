"""Synthetic multi-domain corpora with planted, verifiable structure.

Each domain prefers a contiguous private vocabulary slice (Zipf-weighted)
plus an optional shared slice, and follows a seeded bigram successor table.
Setting ``uniform_noise=1`` makes a domain an irreducible-entropy source:
tokens are uniform over its support, so no model can push its loss below
``ln(support size)``. Different domains therefore stay separable in loss,
gradient, and embedding space, which is what makes selection and mixing
effects observable at small scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Corpus, MixtureWeights, Sample
from .errors import BadMode, BadProportions

VALIDATION_ID_START = 1_000_000_000


@dataclass(frozen=True)
class DomainSpec:
    name: str
    vocab_size: int
    private_slice: tuple
    shared_slice: tuple = (0, 0)
    zipf_exponent: float = 1.2
    shared_prob: float = 0.2
    bigram_strength: float = 0.35
    uniform_noise: float = 0.0
    bigram_seed: int = 0
    mean_length: int = 12
    length_jitter: int = 3

    def __post_init__(self):
        lo, hi = self.private_slice
        slo, shi = self.shared_slice
        if not (0 <= lo < hi <= self.vocab_size):
            raise ValueError(f"{self.name}: private slice {self.private_slice} outside [0, {self.vocab_size})")
        if not (0 <= slo <= shi <= self.vocab_size):
            raise ValueError(f"{self.name}: shared slice {self.shared_slice} invalid")
        if self.mean_length < 2:
            raise ValueError(f"{self.name}: mean_length must be >= 2")
        if self.bigram_strength + self.uniform_noise > 1.0 + 1e-12:
            raise ValueError(f"{self.name}: bigram_strength + uniform_noise exceeds 1")
        if not (0.0 <= self.shared_prob < 1.0):
            raise ValueError(f"{self.name}: shared_prob must lie in [0, 1)")

    @property
    def support(self) -> np.ndarray:
        lo, hi = self.private_slice
        slo, shi = self.shared_slice
        return np.unique(np.concatenate([np.arange(lo, hi), np.arange(slo, shi)]))


def _zipf(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


class _DomainSampler:
    """Distribution tables for one domain, derived deterministically."""

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        lo, hi = spec.private_slice
        slo, shi = spec.shared_slice
        support = spec.support
        base = np.zeros(spec.vocab_size)
        private = np.arange(lo, hi)
        if shi > slo:
            base[private] += (1.0 - spec.shared_prob) * _zipf(private.size, spec.zipf_exponent)
            shared = np.arange(slo, shi)
            base[shared] += spec.shared_prob * _zipf(shared.size, spec.zipf_exponent)
        else:
            base[private] += _zipf(private.size, spec.zipf_exponent)

        noise = np.zeros(spec.vocab_size)
        noise[support] = 1.0 / support.size

        # Law of the next token given the previous one:
        #   (1 - b - nu) * zipf_base + b * delta_succ(prev) + nu * uniform(support)
        b, nu = spec.bigram_strength, spec.uniform_noise
        start = (1.0 - nu) * base + nu * noise
        self.start_cdf = np.cumsum(start / start.sum())
        cont = (1.0 - b - nu) * base + nu * noise
        total = cont.sum()
        self.cont_cdf = np.cumsum(cont / total) if total > 0 else self.start_cdf
        self.bigram_mass = b
        succ_rng = np.random.default_rng(spec.bigram_seed)
        self.successor = succ_rng.integers(lo, hi, size=spec.vocab_size)

    def sample_tokens(self, rng: np.random.Generator) -> np.ndarray:
        spec = self.spec
        length = max(2, spec.mean_length + int(rng.integers(-spec.length_jitter, spec.length_jitter + 1)))
        tokens = np.empty(length, dtype=np.int64)
        tokens[0] = np.searchsorted(self.start_cdf, rng.random(), side="right")
        for p in range(1, length):
            if self.bigram_mass > 0.0 and rng.random() < self.bigram_mass:
                tokens[p] = self.successor[tokens[p - 1]]
            else:
                tokens[p] = np.searchsorted(self.cont_cdf, rng.random(), side="right")
        return tokens


def build_domain_specs(
    num_domains: int,
    vocab_size: int,
    seed: int = 0,
    noise_domains: Sequence[int] = (),
    shared_tokens: Optional[int] = None,
    mean_length: int = 12,
    length_jitter: int = 3,
    names: Optional[Sequence[str]] = None,
) -> list:
    """Partition the vocabulary into K contiguous private slices plus a shared prefix."""
    if num_domains < 1:
        raise ValueError("num_domains must be >= 1")
    shared = vocab_size // 8 if shared_tokens is None else shared_tokens
    usable = vocab_size - shared
    if usable < num_domains:
        raise ValueError(f"vocab of {vocab_size} too small for {num_domains} domains with {shared} shared tokens")
    bounds = shared + np.round(np.linspace(0, usable, num_domains + 1)).astype(int)
    specs = []
    for d in range(num_domains):
        is_noise = d in set(noise_domains)
        specs.append(
            DomainSpec(
                name=names[d] if names is not None else f"domain_{d}",
                vocab_size=vocab_size,
                private_slice=(int(bounds[d]), int(bounds[d + 1])),
                shared_slice=(0, shared),
                shared_prob=0.0 if is_noise else 0.2,
                bigram_strength=0.0 if is_noise else 0.35,
                uniform_noise=1.0 if is_noise else 0.02,
                bigram_seed=seed * 1000 + d,
                mean_length=mean_length,
                length_jitter=length_jitter,
            )
        )
    return specs


def largest_remainder_counts(n: int, weights: np.ndarray) -> np.ndarray:
    """Integer counts summing to n, proportional to weights; ties go to lower index."""
    exact = n * np.asarray(weights, dtype=np.float64)
    counts = np.floor(exact).astype(np.int64)
    short = n - int(counts.sum())
    if short > 0:
        frac = exact - counts
        order = np.argsort(-frac, kind="stable")
        counts[order[:short]] += 1
    return counts


def _generate_samples(specs, counts, seed, id_start):
    samplers = [_DomainSampler(spec) for spec in specs]
    total = int(sum(counts))
    children = np.random.SeedSequence(seed).spawn(total)
    samples = []
    next_id = id_start
    child = 0
    for d, count in enumerate(counts):
        for _ in range(int(count)):
            rng = np.random.default_rng(children[child])
            samples.append(Sample(id=next_id, domain_id=d, token_ids=samplers[d].sample_tokens(rng)))
            next_id += 1
            child += 1
    return samples


def generate_corpus(specs: Sequence[DomainSpec], proportions: MixtureWeights, n: int, seed: int) -> Corpus:
    """Corpus of n samples with largest-remainder-exact domain counts."""
    if len(specs) != len(proportions):
        raise BadProportions(f"{len(specs)} domain specs but {len(proportions)} proportions")
    if n < len(specs):
        raise BadProportions(f"n={n} smaller than the number of domains")
    counts = largest_remainder_counts(n, proportions.weights)
    samples = _generate_samples(specs, counts, seed, id_start=0)
    return Corpus(samples, tuple(s.name for s in specs), specs[0].vocab_size)


def make_validation(
    specs: Sequence[DomainSpec],
    mode: str,
    m: int,
    seed: int,
    proportions: Optional[MixtureWeights] = None,
    domain: Optional[int] = None,
    weights: Optional[Sequence[float]] = None,
    id_start: int = VALIDATION_ID_START,
) -> Corpus:
    """Fresh validation corpus with ids disjoint from any generated training corpus.

    Modes: ``in_distribution`` (uses ``proportions``, uniform if omitted),
    ``single_domain`` (all samples from ``domain``), and ``skewed``
    (largest-remainder counts from ``weights``).
    """
    if m < 1:
        raise BadMode("validation size must be >= 1")
    k = len(specs)
    if mode == "in_distribution":
        p = proportions if proportions is not None else MixtureWeights.uniform(k)
        counts = largest_remainder_counts(m, p.weights)
    elif mode == "single_domain":
        if domain is None or not (0 <= domain < k):
            raise BadMode(f"single_domain mode needs a domain index in [0, {k})")
        counts = np.zeros(k, dtype=np.int64)
        counts[domain] = m
    elif mode == "skewed":
        if weights is None:
            raise BadMode("skewed mode needs a weight vector")
        counts = largest_remainder_counts(m, MixtureWeights.from_config(weights).weights)
    else:
        raise BadMode(f"unknown validation mode {mode!r}")
    samples = _generate_samples(specs, counts, seed, id_start=id_start)
    return Corpus(samples, tuple(s.name for s in specs), specs[0].vocab_size)
