"""
LDSeg - Parameter Store and Optimizer
Named parameter tensors, their gradient buffers, adaptive-moment updates.
"""

import hashlib
from typing import Dict, Iterator, Tuple

import numpy as np

from src.errors import CheckpointError, RangeError
from src.numerics.random import RngStream
from src.numerics.tensor import Tensor, get_dtype

ADAM_BETAS: Tuple[float, float] = (0.9, 0.999)
ADAM_EPS: float = 1e-8


class ParamStore:
    """
    Ordered mapping name -> parameter Tensor.

    Each parameter carries a gradient buffer of identical shape; optimizer
    moments live here too so a checkpoint can resume training exactly.
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self.moments: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}
        self.step_count: int = 0

    # ---------- construction ----------

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter '{name}' already registered")
        param = Tensor(value, requires_grad=True)
        param.grad = np.zeros_like(param.data)
        self._params[name] = param
        return param

    def conv(self, name: str, rng: RngStream, cout: int, cin: int, kernel: int, zero: bool = False) -> None:
        """He-normal convolution kernel + zero bias."""
        shape = (cout, cin, kernel, kernel)
        if zero:
            weight = np.zeros(shape, dtype=get_dtype())
        else:
            weight = rng.normal(shape, scale=np.sqrt(2.0 / (cin * kernel * kernel)))
        self.add(f"{name}.weight", weight)
        self.add(f"{name}.bias", np.zeros(cout, dtype=get_dtype()))

    def linear(self, name: str, rng: RngStream, fin: int, fout: int) -> None:
        self.add(f"{name}.weight", rng.normal((fout, fin), scale=np.sqrt(1.0 / fin)))
        self.add(f"{name}.bias", np.zeros(fout, dtype=get_dtype()))

    def norm(self, name: str, channels: int) -> None:
        self.add(f"{name}.gamma", np.ones(channels, dtype=get_dtype()))
        self.add(f"{name}.beta", np.zeros(channels, dtype=get_dtype()))

    # ---------- access ----------

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    @property
    def grads(self) -> Dict[str, np.ndarray]:
        return {name: p.grad for name, p in self._params.items()}

    def num_values(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    # ---------- gradient / training state ----------

    def zero_grads(self) -> None:
        for p in self._params.values():
            if p.grad is None or p.grad.shape != p.shape:
                p.grad = np.zeros_like(p.data)
            else:
                p.grad.fill(0)

    def freeze(self) -> None:
        """Exclude every parameter from gradient recording and updates."""
        for p in self._params.values():
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self._params.values():
            p.requires_grad = True

    def cast(self, dtype) -> None:
        """Convert parameters (and gradient buffers) in place, e.g. to float64 for checks."""
        for p in self._params.values():
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)

    def merge(self, other: "ParamStore", prefix: str = "") -> None:
        """Share another store's tensors under a prefix (same objects, no copy)."""
        for name, p in other.items():
            key = f"{prefix}{name}"
            if key in self._params:
                raise KeyError(f"parameter '{key}' already registered")
            self._params[key] = p

    # ---------- serialization ----------

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy arrays into the existing parameter tensors (objects are kept)."""
        missing = [n for n in self._params if n not in state]
        unexpected = [n for n in state if n not in self._params]
        if strict and (missing or unexpected):
            raise CheckpointError(
                f"parameter mismatch: missing={missing[:5]} unexpected={unexpected[:5]}"
            )
        for name, p in self._params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise CheckpointError(f"shape mismatch for '{name}': {value.shape} vs {p.shape}")
            p.data = value.astype(p.data.dtype, copy=True)

    def moment_state(self) -> Dict[str, np.ndarray]:
        state = {}
        for name, (m, v) in self.moments.items():
            state[f"{name}.m"] = m.copy()
            state[f"{name}.v"] = v.copy()
        return state

    def load_moment_state(self, state: Dict[str, np.ndarray], step_count: int) -> None:
        self.moments = {}
        for name in self._params:
            if f"{name}.m" in state:
                self.moments[name] = (state[f"{name}.m"].copy(), state[f"{name}.v"].copy())
        self.step_count = int(step_count)

    def fingerprint(self) -> str:
        """SHA-256 over names and raw bytes (freeze contract checks)."""
        digest = hashlib.sha256()
        for name, p in self._params.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.data).tobytes())
        return digest.hexdigest()


def sgd_adam_step(
    params: ParamStore,
    lr: float,
    betas: Tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> None:
    """
    One adaptive-moment update of every trainable parameter.

    Frozen parameters (requires_grad=False) are skipped. The bias-corrected
    step uses the store's step counter, which is incremented once per call.
    """
    if lr <= 0:
        raise RangeError(f"learning rate must be positive, got {lr}")
    beta1, beta2 = betas
    params.step_count += 1
    t = params.step_count
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    for name, p in params.items():
        if not p.requires_grad or p.grad is None:
            continue
        m, v = params.moments.get(name, (None, None))
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * p.grad
        v = beta2 * v + (1.0 - beta2) * (p.grad * p.grad)
        params.moments[name] = (m, v)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)
