"""Adam with named parameter groups and the row surgery training needs.

Written directly over numpy arrays: the trainer owns the parameter
storage, this class owns the per-parameter moments. Densification
reshuffles Gaussians, so moments support gather (keep a subset) and
append (new rows start with zero moments). Out-of-band parameter edits
(opacity raises and clamps) zero the touched rows' moments so stale
momentum does not immediately undo the edit.
"""

from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, lrs, beta1=0.9, beta2=0.999, eps=1e-15, row_groups=()):
        self.lrs = dict(lrs)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {}
        self.v = {}
        # Groups indexed per Gaussian; only these take part in row surgery.
        self.row_groups = set(row_groups)

    def register(self, name, shape):
        self.m[name] = np.zeros(shape)
        self.v[name] = np.zeros(shape)

    def step(self, params, grads, lr_scale=None):
        """One update over dict name -> array; arrays are modified in place.

        lr_scale optionally multiplies single groups' rates this step
        (used for the position learning-rate decay). A group with lr 0 is
        skipped entirely, leaving parameters and moments untouched.
        """
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, param in params.items():
            lr = self.lrs[name]
            if lr_scale and name in lr_scale:
                lr = lr * lr_scale[name]
            if lr == 0.0:
                continue
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            param -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_rows(self, name, rows):
        self.m[name][rows] = 0.0
        self.v[name][rows] = 0.0

    def gather(self, keep):
        """Keep moments for a row subset across every per-Gaussian group."""
        for name in self.row_groups:
            self.m[name] = self.m[name][keep]
            self.v[name] = self.v[name][keep]

    def append_zeros(self, counts):
        """Extend per-Gaussian groups with zero-moment rows."""
        for name in self.row_groups:
            extra = np.zeros((counts,) + self.m[name].shape[1:])
            self.m[name] = np.concatenate([self.m[name], extra], axis=0)
            self.v[name] = np.concatenate([self.v[name], extra], axis=0)

    def state_arrays(self):
        """Flat dict of moment arrays for checkpointing."""
        out = {"adam_step": np.array(self.step_count, dtype=np.int64)}
        for name in self.m:
            out[f"adam_m_{name}"] = self.m[name]
            out[f"adam_v_{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays):
        self.step_count = int(arrays["adam_step"])
        for name in self.m:
            self.m[name] = np.array(arrays[f"adam_m_{name}"])
            self.v[name] = np.array(arrays[f"adam_v_{name}"])
