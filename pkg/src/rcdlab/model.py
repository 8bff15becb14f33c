"""A model space bundled with its generator, eigensystem and heat operators."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .operator import (
    BEEstimate,
    Generator,
    GridFunction,
    HeatOperator,
    SpectralDecomposition,
    be_constant,
    build_generator,
    heat_operator,
    spectral_decompose,
)
from .space import ModelSpace, ModelSpec, build_model


@dataclass(eq=False)
class Model:
    space: ModelSpace
    gen: Generator
    spectral: SpectralDecomposition
    _heat: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def build(cls, spec: ModelSpec | dict | str) -> "Model":
        space = build_model(spec)
        gen = build_generator(space)
        return cls(space, gen, spectral_decompose(gen))

    @property
    def label(self) -> str:
        return self.space.label

    def heat(self, t: float) -> HeatOperator:
        t = float(t)
        with self._lock:
            op = self._heat.get(t)
        if op is None:
            op = heat_operator(self.spectral, t)
            with self._lock:
                self._heat.setdefault(t, op)
        return op

    def standard_testset(self) -> list[GridFunction]:
        sp = self.space
        x = np.asarray(sp.points)
        if sp.kind == "circle":
            th = 2 * np.pi * (x - x[0]) / sp.length
            fns = [np.cos(th), np.sin(th), np.cos(2 * th), np.sin(2 * th)]
        elif sp.is_1d_line:
            c = 0.5 * (x[0] + x[-1])
            s = 0.5 * (x[-1] - x[0])
            u = (x - c) / s * 2.0
            fns = [u, u**2 - 1, u**3 - 3 * u, np.exp(0.5 * u), np.exp(-0.5 * u),
                   np.exp(u), np.exp(-u), np.exp(-(u**2) / 4)]
        else:
            fns = [x, x**2]
        return [GridFunction(v) for v in fns]

    @cached_property
    def be(self) -> BEEstimate:
        return be_constant(self.gen, self.standard_testset())

    @property
    def K_hat(self) -> float:
        return self.be.value
