"""Complex arithmetic expressed as pairs of real tensors.

Gradients flow through the real and imaginary parts separately, so no
Wirtinger calculus is involved: the real computational graph is
differentiated directly.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractViolation
from . import tensor as T
from .ops import inv as real_inv
from .tensor import Tensor, as_tensor


class ComplexTensor:
    __slots__ = ("re", "im")

    def __init__(self, re, im=None):
        re = as_tensor(re)
        im = Tensor(np.zeros_like(re.data)) if im is None else as_tensor(im)
        if re.shape != im.shape:
            raise ContractViolation(f"real/imag shapes differ: {re.shape} vs {im.shape}")
        self.re = re
        self.im = im

    @classmethod
    def from_numpy(cls, z: np.ndarray, requires_grad: bool = False) -> "ComplexTensor":
        z = np.asarray(z)
        return cls(
            Tensor(z.real.copy(), requires_grad=requires_grad),
            Tensor(z.imag.copy(), requires_grad=requires_grad),
        )

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    @property
    def ndim(self) -> int:
        return self.re.ndim

    @property
    def requires_grad(self) -> bool:
        return self.re.requires_grad or self.im.requires_grad

    def __repr__(self) -> str:
        return f"ComplexTensor(shape={self.shape})"

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other) -> "ComplexTensor":
        other = _lift(other)
        return ComplexTensor(self.re + other.re, self.im + other.im)

    def __sub__(self, other) -> "ComplexTensor":
        other = _lift(other)
        return ComplexTensor(self.re - other.re, self.im - other.im)

    def __mul__(self, other) -> "ComplexTensor":
        if isinstance(other, ComplexTensor):
            return ComplexTensor(
                self.re * other.re - self.im * other.im,
                self.re * other.im + self.im * other.re,
            )
        # real scalar or real tensor
        return ComplexTensor(self.re * other, self.im * other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "ComplexTensor":
        if not isinstance(other, ComplexTensor):
            return ComplexTensor(self.re / other, self.im / other)
        denom = other.re * other.re + other.im * other.im
        return ComplexTensor(
            (self.re * other.re + self.im * other.im) / denom,
            (self.im * other.re - self.re * other.im) / denom,
        )

    def __neg__(self) -> "ComplexTensor":
        return ComplexTensor(-self.re, -self.im)

    def conj(self) -> "ComplexTensor":
        return ComplexTensor(self.re, -self.im)

    def __matmul__(self, other: "ComplexTensor") -> "ComplexTensor":
        other = _lift(other)
        return ComplexTensor(
            self.re @ other.re - self.im @ other.im,
            self.re @ other.im + self.im @ other.re,
        )

    def abs2(self) -> Tensor:
        return self.re * self.re + self.im * self.im

    # -- shape ops ---------------------------------------------------------
    def H(self) -> "ComplexTensor":
        """Hermitian transpose over the last two axes."""
        return ComplexTensor(self.re.swapaxes(-1, -2), -self.im.swapaxes(-1, -2))

    def transpose(self, *axes) -> "ComplexTensor":
        return ComplexTensor(self.re.transpose(*axes), self.im.transpose(*axes))

    def swapaxes(self, a: int, b: int) -> "ComplexTensor":
        return ComplexTensor(self.re.swapaxes(a, b), self.im.swapaxes(a, b))

    def reshape(self, *shape) -> "ComplexTensor":
        return ComplexTensor(self.re.reshape(*shape), self.im.reshape(*shape))

    def __getitem__(self, index) -> "ComplexTensor":
        return ComplexTensor(self.re[index], self.im[index])

    def sum(self, axis=None, keepdims: bool = False) -> "ComplexTensor":
        return ComplexTensor(self.re.sum(axis, keepdims), self.im.sum(axis, keepdims))

    def trace(self) -> "ComplexTensor":
        """Trace over the last two axes."""
        n = self.shape[-1]
        idx = np.arange(n)
        return ComplexTensor(self.re[..., idx, idx].sum(-1), self.im[..., idx, idx].sum(-1))

    def inv(self) -> "ComplexTensor":
        """Inverse of each trailing C x C block via its 2C x 2C real embedding.

        Z = A + iB maps to [[A, -B], [B, A]]; the inverse of the embedding
        carries Re(Z^-1) in its top-left and Im(Z^-1) in its bottom-left block.
        """
        n = self.shape[-1]
        top = T.concat([self.re, -self.im], axis=-1)
        bottom = T.concat([self.im, self.re], axis=-1)
        big = real_inv(T.concat([top, bottom], axis=-2))
        return ComplexTensor(big[..., :n, :n], big[..., n:, :n])


def _lift(x) -> ComplexTensor:
    if isinstance(x, ComplexTensor):
        return x
    if isinstance(x, np.ndarray) and np.iscomplexobj(x):
        return ComplexTensor.from_numpy(x)
    return ComplexTensor(as_tensor(x))


def complex_concat(items, axis: int = 0) -> ComplexTensor:
    return ComplexTensor(
        T.concat([z.re for z in items], axis=axis), T.concat([z.im for z in items], axis=axis)
    )
