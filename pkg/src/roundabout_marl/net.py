"""Minimal dense/convolutional policy-value network with exact gradients.

Two input pipelines (convolutional for the stacked binary views, dense for
the numeric vector) merge into one hidden layer feeding a 3-logit policy
head and a scalar value head. ReLU follows every hidden transformation;
the heads are linear. Everything is float64 numpy; there is no batching,
no autodiff graph, and no GPU path: workers are single-sample and the
gradients are written out by hand so they can be checked against finite
differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

CHECKPOINT_MAGIC = b"PVCKPT01"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    """Layer sizes. The defaults are the full driving network; tests and the
    chain-MDP harness use reduced or dense-only variants."""

    visual: bool = True
    in_channels: int = 12  # 4 stacked frames x 3 semantic layers
    image_size: int = 84
    conv1: tuple[int, int, int] = (16, 8, 4)  # filters, kernel, stride
    conv2: tuple[int, int, int] = (32, 4, 2)
    visual_features: int = 256
    numeric_dim: int = 4
    numeric_hidden: tuple[int, int] = (64, 64)
    merge_features: int = 256
    n_actions: int = 3

    def conv_shapes(self):
        """(out1, flat2): spatial size after conv1 and flattened conv2 width."""
        f1, k1, s1 = self.conv1
        f2, k2, s2 = self.conv2
        o1 = (self.image_size - k1) // s1 + 1
        o2 = (o1 - k2) // s2 + 1
        if o1 < 1 or o2 < 1:
            raise ValueError("convolution output collapses below 1 pixel")
        return o1, o2, f2 * o2 * o2

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        merge_in = 0
        if self.visual:
            f1, k1, _ = self.conv1
            f2, k2, _ = self.conv2
            _, _, flat2 = self.conv_shapes()
            shapes["conv1_w"] = (f1, self.in_channels, k1, k1)
            shapes["conv1_b"] = (f1,)
            shapes["conv2_w"] = (f2, f1, k2, k2)
            shapes["conv2_b"] = (f2,)
            shapes["fcv_w"] = (self.visual_features, flat2)
            shapes["fcv_b"] = (self.visual_features,)
            merge_in += self.visual_features
        h1, h2 = self.numeric_hidden
        shapes["num1_w"] = (h1, self.numeric_dim)
        shapes["num1_b"] = (h1,)
        shapes["num2_w"] = (h2, h1)
        shapes["num2_b"] = (h2,)
        merge_in += h2
        shapes["merge_w"] = (self.merge_features, merge_in)
        shapes["merge_b"] = (self.merge_features,)
        shapes["pi_w"] = (self.n_actions, self.merge_features)
        shapes["pi_b"] = (self.n_actions,)
        shapes["v_w"] = (1, self.merge_features)
        shapes["v_b"] = (1,)
        return shapes


class PolicyValueNet:
    """Parameter container; all math lives in module functions."""

    def __init__(self, config: NetConfig, params: dict[str, np.ndarray]):
        expected = config.param_shapes()
        if set(params) != set(expected):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "PolicyValueNet":
        return PolicyValueNet(self.config, {k: v.copy() for k, v in self.params.items()})


class Gradients:
    """Shape-congruent accumulators, one buffer per parameter tensor."""

    def __init__(self, buffers: dict[str, np.ndarray]):
        self.buffers = buffers

    @classmethod
    def zeros_like(cls, net: PolicyValueNet) -> "Gradients":
        return cls({k: np.zeros_like(v) for k, v in net.params.items()})

    def add_(self, other: "Gradients") -> "Gradients":
        if set(self.buffers) != set(other.buffers):
            raise ValueError("gradient key mismatch")
        for k, v in other.buffers.items():
            if self.buffers[k].shape != v.shape:
                raise ValueError(f"{k}: gradient shape mismatch")
            self.buffers[k] += v
        return self

    def scale_(self, factor: float) -> "Gradients":
        for v in self.buffers.values():
            v *= factor
        return self

    def max_abs(self) -> float:
        return max(float(np.abs(v).max()) for v in self.buffers.values())


def init_params(config: NetConfig, seed: int) -> PolicyValueNet:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in config.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return PolicyValueNet(config, params)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def _im2col(img: np.ndarray, kernel: int, stride: int) -> tuple[np.ndarray, int]:
    """(C*k*k, P) patch matrix for a (C, H, W) image; P = out*out positions."""
    c, h, w = img.shape
    out = (h - kernel) // stride + 1
    s0, s1, s2 = img.strides
    windows = np.lib.stride_tricks.as_strided(
        img,
        shape=(c, kernel, kernel, out, out),
        strides=(s0, s1, s2, s1 * stride, s2 * stride),
        writeable=False,
    )
    return windows.reshape(c * kernel * kernel, out * out), out


def _col2im(cols: np.ndarray, c: int, h: int, w: int, kernel: int, stride: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch gradients back onto the image."""
    out = (h - kernel) // stride + 1
    img = np.zeros((c, h, w))
    cols = cols.reshape(c, kernel, kernel, out, out)
    for i in range(kernel):
        for j in range(kernel):
            img[:, i:i + stride * out:stride, j:j + stride * out:stride] += cols[:, i, j]
    return img


def forward(net: PolicyValueNet, visual: Optional[np.ndarray], numeric: np.ndarray,
            keep_cache: bool = True):
    """Run the network on one observation.

    Returns (logits, value, cache). The cache holds the activations needed by
    ``backward`` and is tied to the exact parameter set used here.
    """
    cfg = net.config
    p = net.params
    numeric = np.asarray(numeric, dtype=float)
    if numeric.shape != (cfg.numeric_dim,):
        raise ValueError(f"numeric input must have shape ({cfg.numeric_dim},)")
    cache: dict = {"_params": net.params} if keep_cache else None

    merge_parts = []
    if cfg.visual:
        if visual is None:
            raise ValueError("visual input required by this configuration")
        visual = np.asarray(visual, dtype=float)
        if visual.shape != (cfg.in_channels, cfg.image_size, cfg.image_size):
            raise ValueError(
                f"visual input must have shape ({cfg.in_channels}, {cfg.image_size}, {cfg.image_size})")
        f1, k1, s1 = cfg.conv1
        f2, k2, s2 = cfg.conv2
        o1, o2, flat2 = cfg.conv_shapes()
        cols1, _ = _im2col(visual, k1, s1)
        z1 = p["conv1_w"].reshape(f1, -1) @ cols1 + p["conv1_b"][:, None]
        a1 = np.maximum(z1, 0.0)
        cols2, _ = _im2col(a1.reshape(f1, o1, o1), k2, s2)
        z2 = p["conv2_w"].reshape(f2, -1) @ cols2 + p["conv2_b"][:, None]
        a2 = np.maximum(z2, 0.0).reshape(flat2)
        zv = p["fcv_w"] @ a2 + p["fcv_b"]
        av = np.maximum(zv, 0.0)
        merge_parts.append(av)
        if keep_cache:
            cache.update(cols1=cols1, z1=z1, cols2=cols2, z2=z2, a2=a2, zv=zv, av=av)

    zn1 = p["num1_w"] @ numeric + p["num1_b"]
    an1 = np.maximum(zn1, 0.0)
    zn2 = p["num2_w"] @ an1 + p["num2_b"]
    an2 = np.maximum(zn2, 0.0)
    merge_parts.append(an2)

    m_in = merge_parts[0] if len(merge_parts) == 1 else np.concatenate(merge_parts)
    zm = p["merge_w"] @ m_in + p["merge_b"]
    am = np.maximum(zm, 0.0)
    logits = p["pi_w"] @ am + p["pi_b"]
    value = float((p["v_w"] @ am)[0] + p["v_b"][0])

    if keep_cache:
        cache.update(numeric=numeric, zn1=zn1, an1=an1, zn2=zn2, an2=an2,
                     m_in=m_in, zm=zm, am=am, logits=logits, value=value)
    return logits, value, cache


def backward(net: PolicyValueNet, cache: dict, dlogits: np.ndarray, dvalue: float) -> Gradients:
    """Exact gradients of dlogits . logits + dvalue * value w.r.t. parameters."""
    if cache is None or cache.get("_params") is not net.params:
        raise ValueError("stale or missing forward cache for this network")
    cfg = net.config
    p = net.params
    g: dict[str, np.ndarray] = {}
    dlogits = np.asarray(dlogits, dtype=float)

    am = cache["am"]
    g["pi_w"] = np.outer(dlogits, am)
    g["pi_b"] = dlogits.copy()
    g["v_w"] = dvalue * am[None, :]
    g["v_b"] = np.array([dvalue])

    dam = p["pi_w"].T @ dlogits + dvalue * p["v_w"][0]
    dzm = dam * (cache["zm"] > 0.0)
    g["merge_w"] = np.outer(dzm, cache["m_in"])
    g["merge_b"] = dzm
    dm_in = p["merge_w"].T @ dzm

    if cfg.visual:
        nv = cfg.visual_features
        dav, dan2 = dm_in[:nv], dm_in[nv:]
    else:
        dan2 = dm_in

    dzn2 = dan2 * (cache["zn2"] > 0.0)
    g["num2_w"] = np.outer(dzn2, cache["an1"])
    g["num2_b"] = dzn2
    dan1 = p["num2_w"].T @ dzn2
    dzn1 = dan1 * (cache["zn1"] > 0.0)
    g["num1_w"] = np.outer(dzn1, cache["numeric"])
    g["num1_b"] = dzn1

    if cfg.visual:
        f1, k1, s1 = cfg.conv1
        f2, k2, s2 = cfg.conv2
        o1, o2, _ = cfg.conv_shapes()
        dzv = dav * (cache["zv"] > 0.0)
        g["fcv_w"] = np.outer(dzv, cache["a2"])
        g["fcv_b"] = dzv
        da2 = (p["fcv_w"].T @ dzv).reshape(f2, o2 * o2)
        dz2 = da2 * (cache["z2"] > 0.0)
        g["conv2_w"] = (dz2 @ cache["cols2"].T).reshape(f2, f1, k2, k2)
        g["conv2_b"] = dz2.sum(axis=1)
        dcols2 = p["conv2_w"].reshape(f2, -1).T @ dz2
        da1 = _col2im(dcols2, f1, o1, o1, k2, s2).reshape(f1, o1 * o1)
        dz1 = da1 * (cache["z1"] > 0.0)
        g["conv1_w"] = (dz1 @ cache["cols1"].T).reshape(f1, cfg.in_channels, k1, k1)
        g["conv1_b"] = dz1.sum(axis=1)
        # no input gradient: nothing upstream of conv1 carries parameters

    return Gradients(g)


# ---------------------------------------------------------------------------
# Checkpoint format (see README for the byte-exact layout)
#
#   magic   8 bytes  b"PVCKPT01"
#   u32 LE  format version (1)
#   u32 LE  length of the config JSON, followed by that many UTF-8 bytes
#   u32 LE  tensor count N, then N manifest entries:
#             u16 LE name length, name bytes, u8 ndim, ndim x u32 LE dims
#   raw buffers, row-major float64 little-endian, in manifest order


def save_checkpoint(net: PolicyValueNet, path) -> None:
    cfg_json = json.dumps(asdict(net.config), sort_keys=True).encode("utf-8")
    names = sorted(net.params)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            arr = net.params[name]
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
        for name in names:
            fh.write(np.ascontiguousarray(net.params[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> PolicyValueNet:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a parameter checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", fh.read(4))
        raw_cfg = json.loads(fh.read(cfg_len).decode("utf-8"))
        for key in ("conv1", "conv2", "numeric_hidden"):
            raw_cfg[key] = tuple(raw_cfg[key])
        config = NetConfig(**raw_cfg)
        (count,) = struct.unpack("<I", fh.read(4))
        manifest = []
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            manifest.append((name, shape))
        params = {}
        for name, shape in manifest:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return PolicyValueNet(config, params)
