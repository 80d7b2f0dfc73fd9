"""Matrix-product-state decoders mapping (basis bits, branch value) to real outputs.

Every site embeds its input ``x`` as ``(x, 1 - x)``.  Cores are stored as
4-index arrays ``(left_bond, 2, d_site, right_bond)`` with bond 1 at the open
boundaries and ``d_site = d_out`` only on the output core, so the stored size
is exactly the trainable-scalar count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hpqs import autodiff as ad
from hpqs.autodiff import Tensor

RANGE_TOL = 1e-9


def feature_map(x) -> Tensor:
    """Map values in [0, 1] to ``(x, 1 - x)`` along a new trailing axis."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    lo, hi = float(x.data.min(initial=0.0)), float(x.data.max(initial=0.0))
    if lo < -RANGE_TOL or hi > 1.0 + RANGE_TOL:
        raise ValueError(f"feature_map input outside [0, 1]: range [{lo}, {hi}]")
    x = ad.clip(x, 0.0, 1.0)
    col = ad.reshape(x, x.shape + (1,))
    return ad.concat([col, 1.0 - col], axis=-1)


def output_site(n_sites: int) -> int:
    """0-based index of the core carrying the output leg (the centre site)."""
    return math.ceil(n_sites / 2) - 1


def bond_dims(n_sites: int, r: int) -> list[tuple[int, int]]:
    return [(1 if j == 0 else r, 1 if j == n_sites - 1 else r) for j in range(n_sites)]


def decoder_param_count(n_sites: int, r: int, d_out: int) -> int:
    """Trainable scalars: ``2 * left * right`` per core, times ``d_out`` on the output core.

    For ``n_sites >= 2`` this is ``2r + (n_sites - 2) * 2r^2 + 2r`` with the
    output core's term multiplied by ``d_out``.
    """
    if n_sites < 1 or r < 1 or d_out < 1:
        raise ValueError("n_sites, r and d_out must be positive")
    out = output_site(n_sites)
    return sum(2 * lb * rb * (d_out if j == out else 1) for j, (lb, rb) in enumerate(bond_dims(n_sites, r)))


@dataclass
class MpsDecoder:
    n_sites: int
    bond: int
    d_out: int
    cores: list[Tensor]

    @classmethod
    def build(
        cls,
        n_sites: int,
        bond: int,
        d_out: int,
        rng: np.random.Generator,
        noise: float = 1e-2,
        output_scale: float = 1.0,
        init: str = "identity",
    ) -> "MpsDecoder":
        """Initialise the cores.

        ``identity``: identity bond channels plus ``U(-noise, noise)``.  Every
        physical slice passes the bond state through and ``(x, 1 - x)`` sums
        to one, so the initial output is close to ``output_scale`` for every
        input.

        ``random``: every (physical, output) slice is a Haar-random
        orthogonal ``lb x rb`` block (a unit vector at the open ends), so any
        chain of slices is norm preserving and a bit-site output is a unit
        vector's component, of variance ``1 / bond``.  The output core is
        scaled by ``output_scale * sqrt(bond)``, so distinct bitstrings start
        with decorrelated outputs of standard deviation about
        ``output_scale`` and no heavy tails.
        """
        if n_sites < 1 or bond < 1 or d_out < 1:
            raise ValueError("n_sites, bond and d_out must be positive")
        if init not in ("identity", "random"):
            raise ValueError(f"unknown decoder init {init!r}")
        out = output_site(n_sites)
        cores = []
        for j, (lb, rb) in enumerate(bond_dims(n_sites, bond)):
            d = d_out if j == out else 1
            if init == "identity":
                eye = np.eye(lb, rb)
                core = np.broadcast_to(eye[:, None, None, :], (lb, 2, d, rb)).copy()
                if j == out:
                    core *= output_scale
                core += rng.uniform(-noise, noise, (lb, 2, d, rb))
            else:
                core = _orthogonal_slices(rng, lb, d, rb)
                if j == out:
                    core *= output_scale * np.sqrt(bond)
            cores.append(Tensor(core, requires_grad=True))
        return cls(n_sites, bond, d_out, cores)

    @property
    def parameters(self) -> list[Tensor]:
        return list(self.cores)

    @property
    def n_parameters(self) -> int:
        return sum(c.size for c in self.cores)

    def check(self) -> None:
        if len(self.cores) != self.n_sites:
            raise ValueError(f"decoder has {len(self.cores)} cores for {self.n_sites} sites")
        out = output_site(self.n_sites)
        prev = 1
        for j, core in enumerate(self.cores):
            lb, phys, d, rb = core.shape
            want_d = self.d_out if j == out else 1
            if lb != prev or phys != 2 or d != want_d:
                raise ValueError(
                    f"site {j}: core shape {core.shape} inconsistent (expected left bond {prev}, "
                    f"physical 2, output leg {want_d})"
                )
            prev = rb
        if prev != 1:
            raise ValueError(f"site {self.n_sites - 1}: open boundary needs right bond 1, got {prev}")


def _orthogonal_slices(rng: np.random.Generator, lb: int, d: int, rb: int) -> np.ndarray:
    core = np.empty((lb, 2, d, rb))
    big = max(lb, rb)
    for s in range(2):
        for k in range(d):
            q, r = np.linalg.qr(rng.normal(size=(big, big)))
            q *= np.sign(np.diag(r))  # Haar measure
            core[:, s, k, :] = q[:lb, :rb]
    return core


def mps_contract(dec: MpsDecoder, inputs) -> Tensor:
    """Contract the decoder against per-site inputs of shape (B, n_sites) or (n_sites,).

    ``inputs`` may be a list of per-site columns (arrays or Tensors) so that
    gradients reach a differentiable branch value.  Returns (B, d_out), or
    (d_out,) for a single unbatched input.
    """
    dec.check()
    if isinstance(inputs, (list, tuple)):
        cols = [c if isinstance(c, Tensor) else Tensor(np.asarray(c, dtype=np.float64)) for c in inputs]
        single = cols[0].ndim == 0
        if single:
            cols = [ad.reshape(c, (1,)) for c in cols]
    else:
        arr = inputs.data if isinstance(inputs, Tensor) else np.asarray(inputs, dtype=np.float64)
        single = arr.ndim == 1
        arr = arr[None, :] if single else arr
        cols = [Tensor(arr[:, j]) for j in range(arr.shape[1])]
    if len(cols) != dec.n_sites:
        raise ValueError(f"decoder has {dec.n_sites} sites, got {len(cols)} inputs")
    batch = cols[0].shape[0]
    env = None  # (B, d, right_bond)
    for j, (core, col) in enumerate(zip(dec.cores, cols)):
        if col.shape != (batch,):
            raise ValueError(f"site {j}: input shape {col.shape}, expected ({batch},)")
        lb, _, d, rb = core.shape
        xi = feature_map(col)  # (B, 2)
        slab = ad.reshape(ad.transpose(core, (1, 0, 2, 3)), (2, lb * d * rb))
        site = ad.reshape(xi @ slab, (batch, lb, d * rb))  # (B, lb, d*rb)
        if env is None:
            env = ad.reshape(site, (batch, d, rb))
        else:
            env = env @ site  # (B, d_env, d*rb); check() guarantees d_env == 1 when d > 1
            env = ad.reshape(env, (batch, env.shape[1] * d, rb))
    out = ad.reshape(env, (batch, dec.d_out))
    return ad.reshape(out, (dec.d_out,)) if single else out

