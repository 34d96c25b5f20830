import numpy as np
import pytest

from causalmotion.dit import DiTConfig, init_dit_params
from causalmotion.nn import ParamTree
from causalmotion.nn import ops
from causalmotion.nn.tensor import Tensor
from causalmotion.sampler import GenerativeModel
from causalmotion.vae import VaeConfig, init_vae_params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_vae_config():
    return VaeConfig(motion_dim=4, latent_dim=4, channels=6)


def tiny_dit_config(**kw):
    kw.setdefault("layers", 2)
    kw.setdefault("heads", 2)
    kw.setdefault("hidden", 16)
    kw.setdefault("latent_dim", 4)
    kw.setdefault("max_level", 1000)
    return DiTConfig(**kw)


def randomized_dit_tree(cfg, seed=0, zero_scale=0.05) -> ParamTree:
    """DiT params with the zero-initialized blocks randomized so outputs are
    nontrivial (untrained-but-active model for sampler tests)."""
    gen = np.random.default_rng(seed)
    tree = init_dit_params(cfg, gen)
    for path in tree.paths():
        if np.all(tree[path] == 0):
            tree[path] = gen.normal(0.0, zero_scale, tree[path].shape)
    return tree


def toy_model(seed=0, latent_dim=4, dit_kw=None) -> GenerativeModel:
    gen = np.random.default_rng(seed)
    vcfg = VaeConfig(motion_dim=4, latent_dim=latent_dim, channels=6)
    dcfg = tiny_dit_config(latent_dim=latent_dim, **(dit_kw or {}))
    return GenerativeModel(
        vae=init_vae_params(vcfg, gen),
        dit_tree=randomized_dit_tree(dcfg, seed=seed + 1),
        dit_cfg=dcfg,
    )


def unmasked_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, heads: int) -> np.ndarray:
    """Negative-control fixture: full bidirectional attention (no mask)."""
    T, C = q.shape
    hd = C // heads
    out = np.zeros_like(q)
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        scores = q[:, sl] @ k[:, sl].T / np.sqrt(hd)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        out[:, sl] = w @ v[:, sl]
    return out


class ReluKinkRecorder:
    """Wraps ops.relu to record the smallest |pre-activation| seen, so
    gradient checks can skip instances that sit on a kink."""

    def __init__(self):
        self.min_abs = np.inf
        self._orig = ops.relu

    def __enter__(self):
        recorder = self

        def wrapped(a):
            a = a if isinstance(a, Tensor) else Tensor(a)
            if a.data.size:
                recorder.min_abs = min(recorder.min_abs, float(np.abs(a.data).min()))
            return recorder._orig(a)

        ops.relu = wrapped
        return self

    def __exit__(self, *exc):
        ops.relu = self._orig
        return False
