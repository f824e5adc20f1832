"""Convolutional hashing network: forward, analytic backward, Adam, file IO.

The stack is fixed: five 1-D conv blocks (kernel 3, stride 1, zero pad 1,
leaky ReLU, pool width 2), a fully connected latent layer, and two heads
in parallel: a softmax classifier used for pretraining and an affine
projection whose sign pattern is the binary hash code. Backpropagation is
written out by hand for exactly this architecture; there is no autodiff.

Everything runs in float32 by default. Gradient-check harnesses build a
reduced copy of the architecture in float64.
"""

import struct
import warnings

import numpy as np

from .errors import CacheMismatch, FormatError, NonFiniteActivation

LEAKY_SLOPE = 0.2
KERNEL = 3
MODEL_MAGIC = b"FMH1"
SUPPORTED_BITS = (16, 32, 48, 64)

DEFAULT_CONV_CHANNELS = (48, 96, 128, 192, 256)
DEFAULT_FRAMES = 256
DEFAULT_LATENT = 512


def default_pools(n_layers: int) -> tuple:
    """Max pooling for the first three blocks, average pooling after."""
    return tuple("max" if i < 3 else "avg" for i in range(n_layers))


class NetSpec:
    """Architecture descriptor. Frames must survive len(conv_channels) halvings."""

    def __init__(self, hash_bits, n_classes, frames=DEFAULT_FRAMES, in_channels=9,
                 conv_channels=DEFAULT_CONV_CHANNELS, pools=None,
                 latent=DEFAULT_LATENT, dtype=np.float32):
        self.hash_bits = int(hash_bits)
        self.n_classes = int(n_classes)
        self.frames = int(frames)
        self.in_channels = int(in_channels)
        self.conv_channels = tuple(int(c) for c in conv_channels)
        self.pools = default_pools(len(self.conv_channels)) if pools is None else tuple(pools)
        self.latent = int(latent)
        self.dtype = np.dtype(dtype)

        n = len(self.conv_channels)
        if len(self.pools) != n:
            raise FormatError("pools and conv_channels must have equal length")
        if any(p not in ("max", "avg") for p in self.pools):
            raise FormatError(f"unknown pool kind in {self.pools}")
        if self.frames % (2 ** n) != 0:
            raise FormatError(f"{self.frames} frames not divisible by 2^{n}")

    @property
    def flat_dim(self) -> int:
        return (self.frames >> len(self.conv_channels)) * self.conv_channels[-1]

    def tensor_shapes(self) -> dict:
        shapes = {}
        cin = self.in_channels
        for i, cout in enumerate(self.conv_channels, start=1):
            shapes[f"conv{i}_w"] = (KERNEL, cin, cout)
            shapes[f"conv{i}_b"] = (cout,)
            cin = cout
        shapes["fc_w"] = (self.flat_dim, self.latent)
        shapes["fc_b"] = (self.latent,)
        shapes["proj_w"] = (self.latent, self.hash_bits)
        shapes["proj_b"] = (self.hash_bits,)
        shapes["softmax_w"] = (self.latent, self.n_classes)
        shapes["softmax_b"] = (self.n_classes,)
        return shapes


class NetworkParams:
    """Named parameter tensors plus the NetSpec they belong to."""

    def __init__(self, spec: NetSpec, tensors: dict):
        self.spec = spec
        self.tensors = tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self):
        return list(self.tensors.keys())

    def count(self, layer: str) -> int:
        """Total parameter count of one layer, e.g. count('conv1')."""
        return self.tensors[f"{layer}_w"].size + self.tensors[f"{layer}_b"].size

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.spec, {k: v.copy() for k, v in self.tensors.items()})


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(rng: np.random.Generator, hash_bits: int, n_classes: int,
                spec: NetSpec | None = None) -> NetworkParams:
    """Xavier-uniform weights, zero biases.

    For conv tensors the fans count the receptive field: kernel * channels.
    """
    if spec is None:
        spec = NetSpec(hash_bits=hash_bits, n_classes=n_classes)
    if spec.hash_bits not in SUPPORTED_BITS:
        warnings.warn(f"hash size {spec.hash_bits} is outside the usual {SUPPORTED_BITS}",
                      stacklevel=2)
    tensors = {}
    for name, shape in spec.tensor_shapes().items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=spec.dtype)
            continue
        if name.startswith("conv"):
            fan_in, fan_out = KERNEL * shape[1], KERNEL * shape[2]
        else:
            fan_in, fan_out = shape
        bound = xavier_bound(fan_in, fan_out)
        tensors[name] = rng.uniform(-bound, bound, size=shape).astype(spec.dtype)
    return NetworkParams(spec, tensors)


def _ensure_finite(name: str, arr: np.ndarray) -> None:
    # A float64 sum of float32 data cannot overflow, so one reduction
    # detects any NaN/Inf without a full isfinite pass.
    if not np.isfinite(np.sum(arr, dtype=np.float64)):
        raise NonFiniteActivation(f"non-finite values in {name}")


def leaky_relu(x: np.ndarray) -> np.ndarray:
    # max(x, 0.2x) selects x for x >= 0 and 0.2x below; cheaper than where().
    return np.maximum(x, LEAKY_SLOPE * x)


def leaky_relu_grad(pre: np.ndarray, dout: np.ndarray) -> np.ndarray:
    return np.where(pre > 0, dout, LEAKY_SLOPE * dout)


def _im2col(x: np.ndarray) -> np.ndarray:
    # (N, L, Cin) -> (N, L, KERNEL, Cin) patches of the zero-padded input.
    n, length, cin = x.shape
    xp = np.zeros((n, length + 2, cin), dtype=x.dtype)
    xp[:, 1:length + 1] = x
    patches = np.empty((n, length, KERNEL, cin), dtype=x.dtype)
    for k in range(KERNEL):
        patches[:, :, k, :] = xp[:, k:k + length]
    return patches


def _conv_forward(patches: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, length = patches.shape[0], patches.shape[1]
    cout = w.shape[2]
    pre = patches.reshape(n * length, -1) @ w.reshape(-1, cout)
    pre += b
    return pre.reshape(n, length, cout)


def _conv_backward(patches: np.ndarray, w: np.ndarray, dpre: np.ndarray,
                   need_dx: bool = True):
    n, length, cout = dpre.shape
    cin = patches.shape[3]
    p2 = patches.reshape(n * length, KERNEL * cin)
    d2 = dpre.reshape(n * length, cout)
    dw = (p2.T @ d2).reshape(KERNEL, cin, cout)
    db = np.sum(d2, axis=0, dtype=np.float64).astype(dpre.dtype)
    if not need_dx:
        return dw, db, None
    dpatches = (d2 @ w.reshape(-1, cout).T).reshape(n, length, KERNEL, cin)
    dxp = np.zeros((n, length + 2, cin), dtype=dpre.dtype)
    for k in range(KERNEL):
        dxp[:, k:k + length] += dpatches[:, :, k, :]
    return dw, db, dxp[:, 1:length + 1]


def _pool_forward(act: np.ndarray, kind: str):
    # Width-2 stride-2 pooling via strided views; max ties go to the
    # first (even) index.
    even, odd = act[:, 0::2], act[:, 1::2]
    if kind == "max":
        mask = even >= odd
        return np.where(mask, even, odd), mask
    return (even + odd) * act.dtype.type(0.5), None


def _pool_backward(dout: np.ndarray, mask, kind: str) -> np.ndarray:
    n, plen, c = dout.shape
    dact = np.empty((n, plen * 2, c), dtype=dout.dtype)
    if kind == "max":
        zero = dout.dtype.type(0)
        dact[:, 0::2] = np.where(mask, dout, zero)
        dact[:, 1::2] = np.where(mask, zero, dout)
    else:
        half = dout * dout.dtype.type(0.5)  # average pooling splits evenly
        dact[:, 0::2] = half
        dact[:, 1::2] = half
    return dact


def forward_latent(params: NetworkParams, x: np.ndarray, check: bool = True):
    """Run the conv stack and latent layer; returns (h, cache).

    x: (N, frames, in_channels) or a single (frames, in_channels) signal.
    The cache holds what the backward pass needs and a per-layer shape
    trace.
    """
    spec = params.spec
    x = np.asarray(x, dtype=spec.dtype)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] != spec.frames or x.shape[2] != spec.in_channels:
        raise FormatError(f"input shape {x.shape[1:]} does not match "
                          f"({spec.frames}, {spec.in_channels})")

    layers = []
    trace = []
    for i, kind in enumerate(spec.pools, start=1):
        w, b = params[f"conv{i}_w"], params[f"conv{i}_b"]
        patches = _im2col(x)
        pre = _conv_forward(patches, w, b)
        act = leaky_relu(pre)
        x, mask = _pool_forward(act, kind)
        if check:
            _ensure_finite(f"conv{i}", x)
        layers.append({"patches": patches, "pre": pre, "pool": kind, "mask": mask})
        trace.append(x.shape[1:])

    flat = x.reshape(x.shape[0], -1)
    fc_pre = flat @ params["fc_w"] + params["fc_b"]
    h = leaky_relu(fc_pre)
    if check:
        _ensure_finite("fc", h)
    trace.append(h.shape[1:])
    cache = {"params": params, "layers": layers, "flat": flat, "fc_pre": fc_pre,
             "trace": trace}
    return h, cache


def backward_latent(params: NetworkParams, cache: dict, dh: np.ndarray) -> dict:
    """Gradients of every conv/fc tensor given dLoss/dh."""
    if cache.get("params") is not params:
        raise CacheMismatch("cache does not belong to these parameters")
    spec = params.spec
    grads = {}

    dfc_pre = leaky_relu_grad(cache["fc_pre"], np.asarray(dh, dtype=spec.dtype))
    grads["fc_w"] = cache["flat"].T @ dfc_pre
    grads["fc_b"] = np.sum(dfc_pre, axis=0, dtype=np.float64).astype(spec.dtype)
    dx = dfc_pre @ params["fc_w"].T

    n = dx.shape[0]
    last = spec.frames >> len(spec.conv_channels)
    dx = dx.reshape(n, last, spec.conv_channels[-1])

    for i in range(len(spec.conv_channels), 0, -1):
        layer = cache["layers"][i - 1]
        dact = _pool_backward(dx, layer["mask"], layer["pool"])
        dpre = leaky_relu_grad(layer["pre"], dact)
        dw, db, dx = _conv_backward(layer["patches"], params[f"conv{i}_w"], dpre,
                                    need_dx=i > 1)
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    return grads


def forward_projection(params: NetworkParams, h: np.ndarray) -> np.ndarray:
    """Affine map of the latent vector to hash-bit space (no activation)."""
    return h @ params["proj_w"] + params["proj_b"]


def projection_backward(params: NetworkParams, h: np.ndarray, dz: np.ndarray):
    dz = np.asarray(dz, dtype=params.spec.dtype)
    grads = {
        "proj_w": h.T @ dz,
        "proj_b": np.sum(dz, axis=0, dtype=np.float64).astype(params.spec.dtype),
    }
    return grads, dz @ params["proj_w"].T


def forward_softmax(params: NetworkParams, h: np.ndarray) -> np.ndarray:
    """Class probabilities (max-subtracted exp normalization)."""
    logits = h @ params["softmax_w"] + params["softmax_b"]
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(params: NetworkParams, h: np.ndarray, dlogits: np.ndarray):
    dlogits = np.asarray(dlogits, dtype=params.spec.dtype)
    grads = {
        "softmax_w": h.T @ dlogits,
        "softmax_b": np.sum(dlogits, axis=0, dtype=np.float64).astype(params.spec.dtype),
    }
    return grads, dlogits @ params["softmax_w"].T


def quantize(z: np.ndarray) -> np.ndarray:
    """Sign quantization to {-1, +1}; a component of exactly zero maps to +1."""
    z = np.asarray(z)
    if not np.all(np.isfinite(z)):
        raise NonFiniteActivation("cannot quantize non-finite projection")
    return np.where(z < 0, -1, 1).astype(np.int8)


def loss_crossentropy(probs: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(labels)
    n = probs.shape[0]
    picked = probs[np.arange(n), labels]
    loss = float(np.mean(-np.log(np.maximum(picked, 1e-12)), dtype=np.float64))
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def regularizer_P(z: np.ndarray, p: float):
    """Sum of max(|z_j| - p, 0): penalizes components escaping [-p, p]."""
    v = np.maximum(np.abs(z) - p, 0.0)
    return np.sum(v, axis=-1, dtype=np.float64)


def regularizer_Q(z: np.ndarray, q: float):
    """Sum of max(q - |z_j|, 0): penalizes components inside the dead zone."""
    v = np.maximum(q - np.abs(z), 0.0)
    return np.sum(v, axis=-1, dtype=np.float64)


def loss_pairwise(z1: np.ndarray, z2: np.ndarray, y: np.ndarray,
                  m: float, alpha: float, beta: float, p: float, q: float):
    """Contrastive pair loss with the band regularizers; mean over pairs.

    Per pair: (1-y) * ||z1-z2|| + y * max(m - ||z1-z2||, 0)
              + alpha * (P(z1) + P(z2)) + beta * (Q(z1) + Q(z2))
    with the Euclidean norm, not its square. Subgradients at the kinks
    take the zero side; the distance gradient at z1 == z2 is zero.
    Returns (loss, dz1, dz2).
    """
    z1 = np.atleast_2d(z1)
    z2 = np.atleast_2d(z2)
    y = np.atleast_1d(np.asarray(y, dtype=z1.dtype))
    n = z1.shape[0]

    diff = z1 - z2
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    hinge = np.maximum(m - dist, 0.0)
    per_pair = ((1.0 - y) * dist + y * hinge
                + alpha * (regularizer_P(z1, p) + regularizer_P(z2, p))
                + beta * (regularizer_Q(z1, q) + regularizer_Q(z2, q)))
    loss = float(np.mean(per_pair, dtype=np.float64))

    safe = np.where(dist > 0, dist, 1.0)
    unit = diff / safe[:, None]
    ddist = ((1.0 - y) - y * (hinge > 0))[:, None] * unit

    def band_grad(z):
        s = np.sign(z)
        return alpha * s * (np.abs(z) > p) - beta * s * (np.abs(z) < q)

    dz1 = (ddist + band_grad(z1)) / n
    dz2 = (-ddist + band_grad(z2)) / n
    return loss, dz1.astype(z1.dtype), dz2.astype(z2.dtype)


def adam_init(params: NetworkParams, names=None) -> dict:
    names = params.names() if names is None else list(names)
    return {name: (np.zeros_like(params[name]), np.zeros_like(params[name]))
            for name in names}


def adam_step(state: dict, params: NetworkParams, grads: dict, lr: float, t: int,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place, for every tensor in grads."""
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name in grads:
        g = grads[name]
        m, v = state[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params.tensors[name] -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


def save_model(path, params: NetworkParams) -> None:
    """Versioned binary container; float32 little-endian, bit-exact round-trip."""
    spec = params.spec
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<III", spec.hash_bits, spec.n_classes, len(params.tensors)))
        for name, arr in params.tensors.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path) -> NetworkParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MODEL_MAGIC!r}")
        hash_bits, n_classes, n_tensors = struct.unpack("<III", fh.read(12))
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape(shape)
            tensors[name] = data.astype(np.float32)

    conv_names = sorted(n for n in tensors if n.startswith("conv") and n.endswith("_w"))
    if not conv_names or "fc_w" not in tensors:
        raise FormatError(f"{path}: missing layer tensors")
    conv_channels = tuple(tensors[f"conv{i}_w"].shape[2] for i in range(1, len(conv_names) + 1))
    in_channels = tensors["conv1_w"].shape[1]
    flat_dim, latent = tensors["fc_w"].shape
    frames = (flat_dim // conv_channels[-1]) << len(conv_channels)
    spec = NetSpec(hash_bits=hash_bits, n_classes=n_classes, frames=frames,
                   in_channels=in_channels, conv_channels=conv_channels, latent=latent)
    expected = spec.tensor_shapes()
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != shape:
            raise FormatError(f"{path}: tensor {name} missing or wrong shape")
    return NetworkParams(spec, tensors)
