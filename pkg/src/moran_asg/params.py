"""Validated model parameters and the DOM/FTW selection conversions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

FTW = "ftw"
DOM = "dom"


class ParamError(ValueError):
    """Raised when parameters violate a model invariant."""


class Rate(float):
    """A binary64 rate that remembers the exact rational it was rounded from.

    The conversions below return these so that converting back and forth is
    exact even when a tail sum is not representable in binary64.
    """

    exact: Fraction

    def __new__(cls, exact: Fraction) -> Rate:
        obj = super().__new__(cls, float(exact))
        obj.exact = exact
        return obj

    def __reduce__(self):
        return (Rate, (self.exact,))


def _as_fraction(x: float | int | str | Fraction) -> Fraction:
    # Read floats through their shortest repr so decimal inputs convert exactly.
    if isinstance(x, Rate):
        return x.exact
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    return Fraction(repr(float(x)))


def _clean_rates(rates: Mapping[int, float]) -> dict[int, float]:
    out: dict[int, float] = {}
    for m, r in rates.items():
        m = int(m)
        r = r if isinstance(r, Rate) else float(r)
        if m < 1:
            raise ParamError(f"selection order must be a positive integer, got {m}")
        if not (r >= 0.0) or r == float("inf"):
            raise ParamError(f"selection rate for order {m} must be finite and non-negative, got {r}")
        out[m] = r
    return dict(sorted(out.items()))


def _check_non_increasing(dom_rates: Mapping[int, float]) -> None:
    if not dom_rates:
        return
    top = max(dom_rates)
    prev = None
    for m in range(1, top + 1):
        cur = float(dom_rates.get(m, 0.0))
        if prev is not None and cur > prev:
            raise ParamError(
                f"non-increasing violated: rate({m})={cur} > rate({m - 1})={prev}"
            )
        prev = cur


def dom_to_ftw(dom_rates: Mapping[int, float]) -> dict[int, float]:
    """Convert dominance rates to fittest-type-wins rates, s_m = ŝ_m − ŝ_{m+1}.

    Absent orders below the largest key count as zeros.
    """
    rates = _clean_rates(dom_rates)
    _check_non_increasing(rates)
    if not rates:
        return {}
    top = max(rates)
    exact = {m: _as_fraction(rates.get(m, 0.0)) for m in range(1, top + 2)}
    out = {}
    for m in range(1, top + 1):
        diff = exact[m] - exact[m + 1]
        if diff != 0:
            out[m] = Rate(diff)
    return out


def ftw_to_dom(ftw_rates: Mapping[int, float]) -> dict[int, float]:
    """Convert fittest-type-wins rates to dominance rates, ŝ_m = Σ_{n≥m} s_n."""
    rates = _clean_rates(ftw_rates)
    if not rates:
        return {}
    top = max(rates)
    out: dict[int, float] = {}
    acc = Fraction(0)
    for m in range(top, 0, -1):
        acc += _as_fraction(rates.get(m, 0.0))
        out[m] = Rate(acc)
    return dict(sorted(out.items()))


@dataclass(frozen=True)
class SelectionSpec:
    scheme: str
    rates: Mapping[int, float]

    def __post_init__(self) -> None:
        if self.scheme not in (FTW, DOM):
            raise ParamError(f"unknown selection scheme {self.scheme!r}")
        object.__setattr__(self, "rates", _clean_rates(self.rates))

    def ftw_rates(self) -> dict[int, float]:
        """Rates in FTW form, with zero entries dropped."""
        if self.scheme == DOM:
            return dom_to_ftw(self.rates)
        return {m: r for m, r in self.rates.items() if r != 0.0}

    def dom_rates(self) -> dict[int, float]:
        if self.scheme == DOM:
            return dict(self.rates)
        return ftw_to_dom(self.rates)


def effective_branching_rate(spec: SelectionSpec | Mapping[int, float]) -> float:
    """b = Σ_m m·s_m computed on the FTW form."""
    rates = spec.ftw_rates() if isinstance(spec, SelectionSpec) else _clean_rates(spec)
    return float(sum(m * r for m, r in rates.items()))


@dataclass(frozen=True)
class ModelParams:
    N: int
    u: float
    nu0: float
    selection: SelectionSpec = field(default_factory=lambda: SelectionSpec(FTW, {1: 0.0}))

    @property
    def nu1(self) -> float:
        return 1.0 - self.nu0

    @property
    def s(self) -> dict[int, float]:
        """FTW selection rates."""
        return self.selection.ftw_rates()

    def with_ftw(self) -> ModelParams:
        return ModelParams(self.N, self.u, self.nu0, SelectionSpec(FTW, self.s))

    def to_json(self) -> dict[str, Any]:
        return {
            "N": self.N,
            "u": self.u,
            "nu0": self.nu0,
            "selection": {
                "scheme": self.selection.scheme,
                "rates": [[m, r] for m, r in self.selection.rates.items()],
            },
        }


def ftw_params(N: int, u: float, nu0: float, rates: Mapping[int, float]) -> ModelParams:
    """Build and validate FTW parameters in one call."""
    return validate(ModelParams(int(N), float(u), float(nu0), SelectionSpec(FTW, rates)))


def validate(params: ModelParams) -> ModelParams:
    """Return params unchanged if every invariant holds, else raise ParamError."""
    if not isinstance(params.N, int) or params.N < 1:
        raise ParamError(f"N must be a positive integer, got {params.N!r}")
    if not (params.u >= 0.0) or params.u == float("inf"):
        raise ParamError(f"u must be finite and non-negative, got {params.u}")
    if not (0.0 < params.nu0 < 1.0):
        raise ParamError(f"nu0 must lie in (0,1), got {params.nu0}")
    if params.selection.scheme == DOM:
        _check_non_increasing(params.selection.rates)
    if not effective_branching_rate(params.selection) > 0.0:
        raise ParamError("trivial neutral case: effective branching rate must be positive")
    return params


@dataclass(frozen=True)
class DiffusionParams:
    theta: float
    nu0: float
    sigma: Mapping[int, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "sigma", _clean_rates(self.sigma))

    @property
    def nu1(self) -> float:
        return 1.0 - self.nu0

    def to_json(self) -> dict[str, Any]:
        return {
            "theta": self.theta,
            "nu0": self.nu0,
            "sigma": [[m, r] for m, r in self.sigma.items()],
        }

    def moran(self, N: int) -> ModelParams:
        """Moran parameters at population size N with u = θ/N and s_m = σ_m/N."""
        return validate(
            ModelParams(
                N,
                self.theta / N,
                self.nu0,
                SelectionSpec(FTW, {m: r / N for m, r in self.sigma.items()}),
            )
        )


def validate_diffusion(dp: DiffusionParams) -> DiffusionParams:
    if not (dp.theta >= 0.0) or dp.theta == float("inf"):
        raise ParamError(f"theta must be finite and non-negative, got {dp.theta}")
    if not (0.0 < dp.nu0 < 1.0):
        raise ParamError(f"nu0 must lie in (0,1), got {dp.nu0}")
    return dp


def _num(x: Any, name: str) -> float:
    try:
        if isinstance(x, str):
            return float(Fraction(x.strip()))
        return float(x)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ParamError(f"cannot parse {name}={x!r} as a number") from exc


def _rate_pairs(raw: Any, name: str) -> dict[int, float]:
    if not isinstance(raw, list):
        raise ParamError(f"{name} must be a list of [m, rate] pairs")
    out: dict[int, float] = {}
    for pair in raw:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ParamError(f"{name} entry {pair!r} is not an [m, rate] pair")
        m = pair[0]
        if isinstance(m, float) and m.is_integer():
            m = int(m)
        if not isinstance(m, int):
            raise ParamError(f"{name} order {m!r} is not an integer")
        out[m] = _num(pair[1], f"{name}[{m}]")
    return out


def params_from_dict(d: Mapping[str, Any]) -> ModelParams:
    try:
        sel = d["selection"]
        N = d["N"]
        if not isinstance(N, int):
            raise ParamError(f"N must be an integer, got {N!r}")
        spec = SelectionSpec(str(sel["scheme"]).lower(), _rate_pairs(sel["rates"], "rates"))
        return validate(ModelParams(N, _num(d["u"], "u"), _num(d["nu0"], "nu0"), spec))
    except KeyError as exc:
        raise ParamError(f"missing parameter field {exc.args[0]!r}") from exc


def diffusion_params_from_dict(d: Mapping[str, Any]) -> DiffusionParams:
    try:
        return validate_diffusion(
            DiffusionParams(
                _num(d["theta"], "theta"), _num(d["nu0"], "nu0"), _rate_pairs(d["sigma"], "sigma")
            )
        )
    except KeyError as exc:
        raise ParamError(f"missing parameter field {exc.args[0]!r}") from exc


def load_params(path: str | Path) -> ModelParams:
    return params_from_dict(json.loads(Path(path).read_text()))


def load_diffusion_params(path: str | Path) -> DiffusionParams:
    return diffusion_params_from_dict(json.loads(Path(path).read_text()))
