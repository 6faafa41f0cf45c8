"""The CNN-LSTM policy network and its frozen target copy.

Each of the F feature frames runs through the same two 1-D convolutions
(16 then 8 filters) along the coefficient axis, max-pooling and
flattening; the per-frame vectors form the LSTM input sequence. The
final hidden state passes through dropout and three ReLU dense layers
into a linear softmax head over the classes.

Checkpoints are a self-describing binary format: 6 magic bytes
``NNCKPT``, one version byte, a little-endian uint32 header length, a
UTF-8 text header (architecture line plus one ``tensor name shape
offset`` line per parameter), then the concatenated little-endian
float32 payloads. Round-trips are bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import nn
from .features import FeatureMatrix

CKPT_MAGIC = b"NNCKPT"
CKPT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file unreadable or incompatible with the expected shapes."""


@dataclass(frozen=True)
class ArchConfig:
    n_mfcc: int = 40
    n_frames: int = 32
    num_classes: int = 2
    conv1_filters: int = 16
    conv2_filters: int = 8
    kernel_size: int = 3
    pool_window: int = 2
    lstm_hidden: int = 50
    dense_sizes: tuple[int, ...] = (512, 256, 64)
    dropout_rate: float = 0.3

    @property
    def lstm_input_size(self) -> int:
        return (self.n_mfcc // self.pool_window) * self.conv2_filters


def shapes_for(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    """Parameter name -> shape map; fully determined by the architecture."""
    k = arch.kernel_size
    shapes: dict[str, tuple[int, ...]] = {
        "conv1_k": (k, 1, arch.conv1_filters),
        "conv1_b": (arch.conv1_filters,),
        "conv2_k": (k, arch.conv1_filters, arch.conv2_filters),
        "conv2_b": (arch.conv2_filters,),
    }
    n_in, hid = arch.lstm_input_size, arch.lstm_hidden
    for gate in "ifgo":
        shapes[f"lstm_w_{gate}"] = (n_in, hid)
    for gate in "ifgo":
        shapes[f"lstm_u_{gate}"] = (hid, hid)
    for gate in "ifgo":
        shapes[f"lstm_b_{gate}"] = (hid,)
    prev = hid
    for i, width in enumerate(arch.dense_sizes):
        shapes[f"dense{i}_w"] = (prev, width)
        shapes[f"dense{i}_b"] = (width,)
        prev = width
    shapes["head_w"] = (prev, arch.num_classes)
    shapes["head_b"] = (arch.num_classes,)
    return shapes


def param_count(arch: ArchConfig) -> int:
    return sum(int(np.prod(s)) for s in shapes_for(arch).values())


@dataclass
class PolicyParams:
    arch: ArchConfig
    tensors: dict[str, nn.Tensor] = field(repr=False)

    @classmethod
    def initialize(cls, arch: ArchConfig, rng: np.random.Generator) -> "PolicyParams":
        """Glorot-uniform weights, zero biases, forget-gate bias 1."""
        k = arch.kernel_size
        tensors: dict[str, nn.Tensor] = {}
        for name, shape in shapes_for(arch).items():
            if name.endswith("_b") or name.startswith("lstm_b"):
                tensors[name] = nn.zeros_param(shape)
            elif name.startswith("conv"):
                cin, cout = shape[1], shape[2]
                tensors[name] = nn.glorot_uniform(rng, shape, fan_in=k * cin, fan_out=k * cout)
            else:
                tensors[name] = nn.glorot_uniform(rng, shape, fan_in=shape[0], fan_out=shape[1])
        tensors["lstm_b_f"].data[:] = 1.0
        return cls(arch=arch, tensors=tensors)

    def clone(self) -> "PolicyParams":
        copies = {name: nn.Tensor(t.data.copy(), requires_grad=t.requires_grad) for name, t in self.tensors.items()}
        return PolicyParams(arch=self.arch, tensors=copies)

    def trainable(self):
        return list(self.tensors.values())

    def lstm_gates(self) -> nn.LstmGateParams:
        t = self.tensors
        return nn.LstmGateParams(
            w_i=t["lstm_w_i"], w_f=t["lstm_w_f"], w_g=t["lstm_w_g"], w_o=t["lstm_w_o"],
            u_i=t["lstm_u_i"], u_f=t["lstm_u_f"], u_g=t["lstm_u_g"], u_o=t["lstm_u_o"],
            b_i=t["lstm_b_i"], b_f=t["lstm_b_f"], b_g=t["lstm_b_g"], b_o=t["lstm_b_o"],
        )


def forward(
    params: PolicyParams,
    state,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> nn.Tensor:
    """Class-probability vector for one feature matrix."""
    arch = params.arch
    coeffs = state.coeffs if isinstance(state, FeatureMatrix) else np.asarray(state)
    if coeffs.shape != (arch.n_mfcc, arch.n_frames):
        raise nn.ShapeError(
            f"state shape {coeffs.shape} does not match model input ({arch.n_mfcc}, {arch.n_frames})"
        )
    t = params.tensors
    # frames become the sequence axis; convs run along the coefficient axis
    x = nn.Tensor(np.ascontiguousarray(coeffs.T)[:, :, None])
    h = nn.relu(nn.conv1d(x, t["conv1_k"], t["conv1_b"]))
    h = nn.relu(nn.conv1d(h, t["conv2_k"], t["conv2_b"]))
    h = nn.maxpool1d(h, arch.pool_window)
    h = nn.reshape(h, (arch.n_frames, arch.lstm_input_size))
    h = nn.lstm(h, params.lstm_gates())
    h = nn.dropout(h, arch.dropout_rate, training=training, rng=rng)
    for i in range(len(arch.dense_sizes)):
        h = nn.relu(nn.dense(h, t[f"dense{i}_w"], t[f"dense{i}_b"]))
    logits = nn.dense(h, t["head_w"], t["head_b"])
    return nn.softmax(logits)


def act(params: PolicyParams, state) -> int:
    """Greedy action: index of the max probability, ties to the lowest."""
    with nn.no_grad():
        probs = forward(params, state, training=False)
    return int(np.argmax(probs.data))


@dataclass
class ModelPair:
    policy: PolicyParams
    target: PolicyParams

    @classmethod
    def from_policy(cls, policy: PolicyParams) -> "ModelPair":
        return cls(policy=policy, target=policy.clone())


def sync_target(pair: ModelPair):
    """target := policy, bit for bit."""
    for name, src in pair.policy.tensors.items():
        pair.target.tensors[name].data = src.data.copy()


# --- checkpoint io ---------------------------------------------------------

def _arch_header(arch: ArchConfig) -> str:
    parts = []
    for f in fields(arch):
        v = getattr(arch, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        parts.append(f"{f.name}={v}")
    return "arch " + " ".join(parts)


def _parse_arch(line: str) -> ArchConfig:
    kv = dict(item.split("=", 1) for item in line.split()[1:])
    return ArchConfig(
        n_mfcc=int(kv["n_mfcc"]),
        n_frames=int(kv["n_frames"]),
        num_classes=int(kv["num_classes"]),
        conv1_filters=int(kv["conv1_filters"]),
        conv2_filters=int(kv["conv2_filters"]),
        kernel_size=int(kv["kernel_size"]),
        pool_window=int(kv["pool_window"]),
        lstm_hidden=int(kv["lstm_hidden"]),
        dense_sizes=tuple(int(x) for x in kv["dense_sizes"].split(",")),
        dropout_rate=float(kv["dropout_rate"]),
    )


def save_checkpoint(params: PolicyParams, path):
    import os
    import tempfile

    lines = [_arch_header(params.arch)]
    offset = 0
    payloads = []
    for name, tensor in params.tensors.items():
        data = np.ascontiguousarray(tensor.data, dtype="<f4")
        shape = ",".join(str(d) for d in data.shape)
        lines.append(f"tensor {name} {shape} {offset}")
        payloads.append(data.tobytes())
        offset += len(payloads[-1])
    header = ("\n".join(lines) + "\n").encode()

    blob = CKPT_MAGIC + bytes([CKPT_VERSION])
    blob += np.array([len(header)], dtype="<u4").tobytes()
    blob += header + b"".join(payloads)

    path = str(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path, expect_arch: ArchConfig | None = None) -> PolicyParams:
    blob = open(path, "rb").read()
    if len(blob) < 11 or blob[:6] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    if blob[6] != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {blob[6]}")
    header_len = int(np.frombuffer(blob[7:11], dtype="<u4")[0])
    if len(blob) < 11 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    header = blob[11 : 11 + header_len].decode()
    payload = blob[11 + header_len :]

    lines = header.strip().splitlines()
    if not lines or not lines[0].startswith("arch "):
        raise CheckpointError(f"{path}: missing architecture header")
    arch = _parse_arch(lines[0])

    expected_shapes = shapes_for(expect_arch) if expect_arch is not None else None
    tensors: dict[str, nn.Tensor] = {}
    for line in lines[1:]:
        _, name, shape_s, offset_s = line.split()
        shape = tuple(int(x) for x in shape_s.split(","))
        offset = int(offset_s)
        nbytes = 4 * int(np.prod(shape))
        if offset + nbytes > len(payload):
            raise CheckpointError(f"{path}: truncated payload for tensor {name}")
        if expected_shapes is not None:
            if name not in expected_shapes:
                raise CheckpointError(f"{path}: unexpected tensor {name}")
            if expected_shapes[name] != shape:
                raise CheckpointError(
                    f"{path}: tensor {name} has shape {shape}, expected {expected_shapes[name]}"
                )
        data = np.frombuffer(payload[offset : offset + nbytes], dtype="<f4").reshape(shape).copy()
        tensors[name] = nn.Tensor(data, requires_grad=True)

    want = set(shapes_for(arch))
    if set(tensors) != want:
        raise CheckpointError(f"{path}: tensor set mismatch (missing {sorted(want - set(tensors))})")
    return PolicyParams(arch=arch, tensors=tensors)


def desk_arch(arch: ArchConfig) -> ArchConfig:
    """Reduced dense stack used by the fast desk profile."""
    return replace(arch, dense_sizes=(128, 64, 32))
