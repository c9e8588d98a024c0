"""AdamW over a ParamStore with per-group learning rates."""

from __future__ import annotations

import logging

import numpy as np

from .autodiff import ParamStore

log = logging.getLogger(__name__)


class AdamW:
    """Decoupled weight decay Adam.

    Moments are kept as flat arrays aligned with ``store.values``; learning
    rate and weight decay are expanded per entry from the store's groups.
    """

    def __init__(self, store: ParamStore, betas=(0.9, 0.999), eps: float = 1e-8):
        self.store = store
        self.betas = betas
        self.eps = eps
        self.m = np.zeros_like(store.values)
        self.v = np.zeros_like(store.values)
        self.t = 0
        self._masks = {}
        for name in store.groups:
            mask = store.group_mask(name)
            idx = np.flatnonzero(mask)
            # contiguous groups index by slice, which avoids fancy-index copies
            if idx.size and idx[-1] - idx[0] + 1 == idx.size:
                self._masks[name] = slice(int(idx[0]), int(idx[-1]) + 1)
            elif idx.size:
                self._masks[name] = idx

    def step(self, step_index: int | None = None) -> list[str]:
        """Apply one update; returns the names of groups skipped for NaN grads."""
        store = self.store
        self.t = self.t + 1 if step_index is None else step_index + 1
        b1, b2 = self.betas
        g = store.grads
        skipped = []
        for name, mask in self._masks.items():
            gg = g[mask]
            if not np.all(np.isfinite(gg)):
                log.warning("non-finite gradient in group %s; update skipped", name)
                skipped.append(name)
                continue
            group = store.groups[name]
            p = store.values[mask]
            if group.weight_decay:
                p = p * (1.0 - group.lr * group.weight_decay)
            m = b1 * self.m[mask] + (1.0 - b1) * gg
            v = b2 * self.v[mask] + (1.0 - b2) * gg * gg
            mhat = m / (1.0 - b1 ** self.t)
            vhat = v / (1.0 - b2 ** self.t)
            store.values[mask] = p - group.lr * mhat / (np.sqrt(vhat) + self.eps)
            self.m[mask] = m
            self.v[mask] = v
        return skipped
