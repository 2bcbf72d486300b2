"""Dense networks for the learned Hamiltonian and the differentiation engine.

ScalarNet models H(z) as a softplus feedforward network; VectorNet models the
vector field directly (the non-structured baseline).  Gradients of H with
respect to its input, and gradients with respect to parameters of losses that
contain such input-gradients (a second-order quantity), are both delegated to
torch autograd; finite-difference tests pin their exactness.  Everything runs
in float64: symmetry residuals of interest sit near 1e-6, below single
precision noise.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import torch

from .errors import DimensionMismatchError
from .geometry import PhasePoint
from .systems import ReferenceSystem

DTYPE = torch.float64


def stable_softplus(x: torch.Tensor) -> torch.Tensor:
    """log(1 + exp(x)), finite for |x| ~ 1e3 and smooth under autograd.

    Equals max(x, 0) + log1p(exp(-|x|)) in double precision: below the
    threshold log1p(exp(x)) cannot overflow, above it the correction term is
    smaller than one ulp of x.
    """
    return torch.nn.functional.softplus(x, threshold=40.0)


class DenseNet(torch.nn.Module):
    """Fully connected net, softplus on hidden layers, identity output."""

    def __init__(self, layer_widths: Sequence[int], seed: int | None = None):
        super().__init__()
        widths = tuple(int(w) for w in layer_widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"invalid layer widths {widths}")
        self.layer_widths = widths
        self.layers = torch.nn.ModuleList(
            torch.nn.Linear(w_in, w_out, dtype=DTYPE)
            for w_in, w_out in zip(widths[:-1], widths[1:])
        )
        self._init_parameters(seed)

    def _init_parameters(self, seed: int | None) -> None:
        # uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for weights and biases
        gen = None
        if seed is not None:
            gen = torch.Generator()
            gen.manual_seed(int(seed))
        with torch.no_grad():
            for layer in self.layers:
                bound = 1.0 / np.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.input_dim:
            raise DimensionMismatchError(
                f"net expects {self.input_dim} inputs, got {x.shape[-1]}"
            )
        for layer in self.layers[:-1]:
            x = stable_softplus(layer(x))
        return self.layers[-1](x)


class ScalarNet(DenseNet):
    """Learnable scalar function on phase space (the Hamiltonian model)."""

    def __init__(self, input_dim: int, hidden: Sequence[int] = (256, 256, 256), seed: int | None = None):
        super().__init__((input_dim, *hidden, 1), seed)

    def values(self, Z: torch.Tensor) -> torch.Tensor:
        """H at each row of Z, shape (B,)."""
        return self.forward(Z).squeeze(-1)

    def gradient_batch(self, Z: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
        """Per-row input gradient grad_z H, shape (B, 2n).

        With create_graph=True the result stays differentiable with respect to
        the network parameters, which is what losses built from grad H need.
        """
        Z = Z.detach().requires_grad_(True)
        total = self.values(Z).sum()
        (grad,) = torch.autograd.grad(total, Z, create_graph=create_graph)
        return grad


class VectorNet(DenseNet):
    """Direct vector-field model: input and output are both 2n-dimensional."""

    def __init__(self, input_dim: int, hidden: Sequence[int] = (256, 256, 256), seed: int | None = None):
        super().__init__((input_dim, *hidden, input_dim), seed)

    def field_batch(self, Z: torch.Tensor) -> torch.Tensor:
        return self.forward(Z)


class ExactHamiltonianModel:
    """Adapter exposing a reference system through the net-like gradient API.

    Useful as an oracle: plugging the true Hamiltonian into the losses must
    give (near) zero.  Gradients are analytic, so tensors carry no graph.
    """

    def __init__(self, system: ReferenceSystem):
        self.system = system
        self.input_dim = 2 * system.n

    def values(self, Z: torch.Tensor) -> torch.Tensor:
        h = self.system.hamiltonian(Z.detach().numpy())
        return torch.as_tensor(np.asarray(h), dtype=DTYPE)

    def gradient_batch(self, Z: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
        g = self.system.gradient(Z.detach().numpy())
        return torch.as_tensor(g, dtype=DTYPE)


def _point_tensor(z) -> torch.Tensor:
    arr = z.z if isinstance(z, PhasePoint) else np.asarray(z, dtype=float)
    return torch.as_tensor(arr, dtype=DTYPE).reshape(1, -1)


def forward(net: ScalarNet, z) -> float:
    """Evaluate H at a single phase-space point."""
    with torch.no_grad():
        return net.values(_point_tensor(z)).item()


def input_gradient(net: ScalarNet, z) -> np.ndarray:
    """Exact reverse-mode gradient of H with respect to its input, shape (2n,)."""
    grad = net.gradient_batch(_point_tensor(z))
    return grad.detach().numpy()[0]


def loss_parameter_gradient(loss: torch.Tensor, params: Iterable[torch.Tensor]) -> torch.Tensor:
    """Flat gradient of a scalar loss with respect to every given parameter.

    Parameters that do not enter the loss contribute zeros, keeping the layout
    of the flat vector fixed.
    """
    params = list(params)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    pieces = [
        torch.zeros_like(p).reshape(-1) if g is None else g.reshape(-1)
        for p, g in zip(params, grads)
    ]
    return torch.cat(pieces)


def params_to_vector(params: Iterable[torch.Tensor]) -> torch.Tensor:
    """Flatten parameters into one vector; exact inverse of vector_to_params."""
    return torch.cat([p.detach().reshape(-1) for p in params]).clone()


def vector_to_params(vec: torch.Tensor, params: Iterable[torch.Tensor]) -> None:
    """Copy a flat vector back into the given parameter tensors, in order."""
    offset = 0
    with torch.no_grad():
        for p in params:
            count = p.numel()
            p.copy_(vec[offset:offset + count].reshape(p.shape))
            offset += count
    if offset != vec.numel():
        raise DimensionMismatchError(
            f"vector has {vec.numel()} entries, parameters hold {offset}"
        )


def net_to_dict(net: DenseNet) -> dict:
    """Serialize a net to plain Python types (exact float round-trip via JSON)."""
    if isinstance(net, ScalarNet):
        kind = "scalar"
    elif isinstance(net, VectorNet):
        kind = "vector"
    else:
        kind = "dense"
    return {
        "kind": kind,
        "layer_widths": list(net.layer_widths),
        "layers": [
            {"weight": layer.weight.detach().numpy().tolist(),
             "bias": layer.bias.detach().numpy().tolist()}
            for layer in net.layers
        ],
    }


def net_from_dict(data: dict) -> DenseNet:
    widths = data["layer_widths"]
    kind = data["kind"]
    if kind == "scalar":
        net = ScalarNet(widths[0], widths[1:-1])
    elif kind == "vector":
        net = VectorNet(widths[0], widths[1:-1])
    else:
        net = DenseNet(widths)
    if len(data["layers"]) != len(net.layers):
        raise DimensionMismatchError("layer count mismatch in checkpoint")
    with torch.no_grad():
        for layer, entry in zip(net.layers, data["layers"]):
            layer.weight.copy_(torch.tensor(entry["weight"], dtype=DTYPE))
            layer.bias.copy_(torch.tensor(entry["bias"], dtype=DTYPE))
    return net
