"""Layer-wise Gaussian (black-box) and FGSM (white-box) perturbations.

An attack at layer ``l`` adds ``delta`` to the clean input ``I^l`` of that
layer, where the clean input comes from propagating the unperturbed image
through layers ``1..l-1``. By default the perturbed signal is only read by
layer ``l``'s own classifier and spectrum; ``cascade=True`` instead carries
the perturbed activity forward and perturbs every layer on the way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .exceptions import DomainError
from .network import LocalErrorNet, classify_at_layer, clean_layer_inputs, layer_forward, layer_input_gradient
from .numerics import Rng, counter_normals

KINDS = ("gaussian", "fgsm")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "gaussian"
    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"attack kind must be one of {KINDS}, got {self.kind!r}")
        if not self.epsilon >= 0:
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon}")


def gaussian_perturbation(rng: Rng, epsilon: float, dim) -> np.ndarray:
    """epsilon * z with z i.i.d. standard normal; ``dim`` may be an int or a shape."""
    return epsilon * rng.standard_normal(dim)


def gaussian_image_noise(seed: int, layer: int, image_ids, dim: int) -> np.ndarray:
    """Unit-variance noise rows keyed by (seed, layer, image id).

    The same image always receives the same direction ``z`` at a given
    layer, whatever epsilon, batch or subset it is evaluated in.
    """
    return counter_normals(seed, layer, image_ids, dim)


def fgsm_perturbation(net: LocalErrorNet, l: int, inputs, h, epsilon: float) -> np.ndarray:
    """epsilon * sign(dE^l/dI^l), with sign(0) = 0. Works on one row or a batch."""
    inputs = np.asarray(inputs, dtype=np.float64)
    g = layer_input_gradient(net, l, inputs, h)
    delta = epsilon * np.sign(g)
    return delta[0] if inputs.ndim == 1 else delta


def perturbation(net: LocalErrorNet, l: int, inputs, labels, spec: AttackSpec, image_ids=None, noise=None) -> np.ndarray:
    """Perturbation for a batch of clean layer-l inputs.

    ``noise`` lets callers reuse a precomputed unit Gaussian block across
    several epsilons.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    if spec.epsilon == 0:
        return np.zeros_like(inputs)
    if spec.kind == "gaussian":
        if noise is None:
            ids = np.arange(inputs.shape[0]) if image_ids is None else image_ids
            noise = gaussian_image_noise(spec.seed, l, ids, inputs.shape[1])
        return spec.epsilon * noise
    return fgsm_perturbation(net, l, inputs, labels, spec.epsilon)


def _attacked_layers(net, images, labels, spec, image_ids, cascade, layers=None):
    """Yield (layer, perturbed activation, scores) for each requested layer."""
    layers = range(net.depth) if layers is None else layers
    if cascade:
        x = np.asarray(images, dtype=np.float64)
        for l in range(max(layers) + 1):
            _, y, s, _ = layer_forward(net, l, x + perturbation(net, l, x, labels, spec, image_ids))
            if l in layers:
                yield l, y, s
            x = y
        return
    clean = clean_layer_inputs(net, images)
    for l in layers:
        x = clean[l]
        _, y, s, _ = layer_forward(net, l, x + perturbation(net, l, x, labels, spec, image_ids))
        yield l, y, s


def attacked_accuracy(net: LocalErrorNet, ds: LabeledDataset, spec: AttackSpec, image_ids=None,
                      cascade: bool = False) -> np.ndarray:
    """Per-layer accuracy when each layer's input is perturbed according to ``spec``."""
    labels = np.asarray(ds.labels)
    acc = np.empty(net.depth)
    for l, _, s in _attacked_layers(net, ds.images, labels, spec, image_ids, cascade):
        acc[l] = np.mean(classify_at_layer(s) == labels)
    return acc


def attacked_activations(net: LocalErrorNet, stimuli, spec: AttackSpec, l: int, labels=None,
                         image_ids=None, cascade: bool = False) -> np.ndarray:
    """Perturbed activations y^l, shape (k, n_l). FGSM needs ``labels``."""
    if spec.kind == "fgsm" and spec.epsilon > 0 and labels is None:
        raise DomainError("FGSM needs the true labels of the stimuli")
    for _, y, _ in _attacked_layers(net, stimuli, labels, spec, image_ids, cascade, layers=[l]):
        return y
