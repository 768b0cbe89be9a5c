"""Randomized oracle battery: matcher vs brute force, mask law, AdaIN moments.

Used by the `selfcheck` CLI command and the acceptance suite.  Each seed
builds one random instance per property; truth is defined by the naive
oracles, so a pass means the fast paths agree with the definitions.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMap, ObjectMask, SessionConfig
from .matching import brute_force_match, masked_cosine_match
from .transfer import ObjectPair, adain_masked, transfer_step

#: Set to "1" to deliberately corrupt one comparison (verifies the harness fails).
FAULT_ENV = "FEATXFER_SELFCHECK_FAULT"


@dataclass
class CheckReport:
    passed: int = 0
    failed: int = 0
    failures: list[str] = field(default_factory=list)

    def record(self, name: str, ok: bool):
        if ok:
            self.passed += 1
        else:
            self.failed += 1
            self.failures.append(name)

    @property
    def ok(self) -> bool:
        return self.failed == 0


def _random_masks(rng, h, w, ensure_nonempty=True):
    bits = rng.random((h, w)) < rng.uniform(0.2, 1.0)
    if ensure_nonempty and not bits.any():
        bits[rng.integers(h), rng.integers(w)] = True
    return ObjectMask(bits)


def _matcher_vs_oracle(rng, max_dim, fault=False) -> bool:
    c = int(rng.integers(1, 9))
    ht, wt, hr, wr = (int(rng.integers(1, max_dim + 1)) for _ in range(4))
    target = FeatureMap(rng.standard_normal((ht, wt, c)).astype(np.float32))
    reference = FeatureMap(rng.standard_normal((hr, wr, c)).astype(np.float32))
    m_target = ObjectMask(rng.random((ht, wt)) < rng.uniform(0.2, 1.0))
    m_ref = _random_masks(rng, hr, wr)
    fast = masked_cosine_match(target, reference, m_target, m_ref)
    slow = brute_force_match(target, reference, m_target, m_ref)
    entries = np.array(fast.entries)
    if fault and m_target.count:
        q = np.flatnonzero(m_target.bits.reshape(-1))[0]
        entries.reshape(-1)[q] += 1  # deliberate corruption
    return bool(np.array_equal(entries, slow.entries))


def _injection_mask_law(rng, max_dim) -> bool:
    c = int(rng.integers(1, 9))
    h, w = (int(rng.integers(2, max_dim + 1)) for _ in range(2))
    target = FeatureMap(rng.standard_normal((h, w, c)).astype(np.float32))
    reference = FeatureMap(rng.standard_normal((h, w, c)).astype(np.float32))
    m_target = _random_masks(rng, h, w, ensure_nonempty=False)
    m_ref = _random_masks(rng, h, w)
    out = transfer_step(target, [ObjectPair(reference, m_ref, m_target)],
                        SessionConfig(), t=92, layer=2)
    outside = ~m_target.bits
    return bool(np.array_equal(out.data[outside], target.data[outside]))


def _adain_moment_law(rng, max_dim) -> bool:
    c = int(rng.integers(1, 9))
    h, w = (int(rng.integers(3, max_dim + 1)) for _ in range(2))
    for _ in range(10):
        content = FeatureMap((rng.standard_normal((h, w, c)) * rng.uniform(0.5, 3.0)
                              + rng.uniform(-2, 2)).astype(np.float32))
        m_content = _random_masks(rng, h, w)
        sigma = content.data[m_content.bits].std(axis=0)
        if (sigma >= 1e-3).all() and m_content.count >= 2:
            break
    style = FeatureMap((rng.standard_normal((h, w, c)) * rng.uniform(0.5, 3.0)
                        + rng.uniform(-2, 2)).astype(np.float32))
    m_style = _random_masks(rng, h, w)
    out = adain_masked(content, style, m_content, m_style)
    got = out.data[m_content.bits].astype(np.float64)
    want = style.data[m_style.bits].astype(np.float64)
    return bool(np.allclose(got.mean(0), want.mean(0), atol=1e-5)
                and np.allclose(got.std(0), want.std(0), atol=1e-5))


def run_selfcheck(seeds: int, max_dim: int = 16, base_seed: int = 0) -> CheckReport:
    fault = os.environ.get(FAULT_ENV) == "1"
    report = CheckReport()
    for i in range(seeds):
        rng = np.random.default_rng(base_seed + i)
        report.record(f"matcher-vs-oracle seed={base_seed + i}",
                      _matcher_vs_oracle(rng, max_dim, fault=fault and i == 0))
        report.record(f"injection-mask-law seed={base_seed + i}",
                      _injection_mask_law(rng, max_dim))
        report.record(f"adain-moment-law seed={base_seed + i}",
                      _adain_moment_law(rng, max_dim))
    return report
