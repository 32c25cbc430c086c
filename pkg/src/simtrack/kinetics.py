"""Isothermal, isobaric mass-action kinetics for small gas-phase mechanisms.

The state is the vector of specific moles ``z`` (mol/kg). Rates are evaluated in
(cm, mol, s) units to match the Arrhenius pre-exponential factors and mapped
back to mol/(kg s). All derivative routines are closed-form; they also accept
complex input so that higher derivatives can be taken by complex-step.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

GAS_CONSTANT = 8.314462618  # J/(mol K)
STANDARD_PRESSURE = 1.0e5  # Pa
NEGATIVE_SLACK = 1e-12

BUNDLED_MECHANISM = Path(__file__).parent / "data" / "h2_ren2006.mech"


class MechanismError(ValueError):
    """Raised for malformed or inconsistent mechanism input."""


@dataclass(frozen=True)
class Nasa7:
    t_low: float
    t_mid: float
    t_high: float
    low: tuple[float, ...]
    high: tuple[float, ...]

    def coefficients(self, temperature: float) -> tuple[float, ...]:
        return self.low if temperature <= self.t_mid else self.high

    def h_rt(self, temperature: float) -> float:
        a = self.coefficients(temperature)
        t = temperature
        return (a[0] + a[1] * t / 2 + a[2] * t**2 / 3 + a[3] * t**3 / 4
                + a[4] * t**4 / 5 + a[5] / t)

    def s_r(self, temperature: float) -> float:
        a = self.coefficients(temperature)
        t = temperature
        return (a[0] * np.log(t) + a[1] * t + a[2] * t**2 / 2 + a[3] * t**3 / 3
                + a[4] * t**4 / 4 + a[6])

    def g_rt(self, temperature: float) -> float:
        return self.h_rt(temperature) - self.s_r(temperature)


@dataclass(frozen=True)
class Reaction:
    """Reversible elementary reaction with modified-Arrhenius forward rate.

    ``A`` is in (cm, mol, s) units, ``b`` is the temperature exponent and ``Ea``
    the activation energy in kJ/mol. ``third_body`` maps species to collision
    efficiencies; species not listed count with efficiency 1.
    """

    forward_stoich: Mapping[str, int]
    reverse_stoich: Mapping[str, int]
    A: float
    b: float
    Ea: float
    third_body: Mapping[str, float] | None = None
    equation: str = ""

    def __post_init__(self):
        if not self.A > 0:
            raise MechanismError(f"pre-exponential factor must be positive: {self.equation}")
        if self.third_body is not None and any(v < 0 for v in self.third_body.values()):
            raise MechanismError(f"negative third-body efficiency: {self.equation}")

    def reversed(self) -> "Reaction":
        return Reaction(self.reverse_stoich, self.forward_stoich, self.A, self.b, self.Ea,
                        self.third_body, equation=" <=> ".join(self.equation.split(" <=> ")[::-1]))


@dataclass(frozen=True, eq=False)
class Mechanism:
    species: tuple[str, ...]
    molar_masses: np.ndarray
    elements: tuple[str, ...]
    element_matrix: np.ndarray  # (n_elements, n_species)
    reactions: tuple[Reaction, ...]
    temperature: float
    pressure: float
    thermo: Mapping[str, Nasa7] = field(default_factory=dict)
    anchor: np.ndarray | None = None

    def __post_init__(self):
        if len(set(self.species)) != len(self.species):
            raise MechanismError("species names must be unique")
        if not (self.temperature > 0 and self.pressure > 0):
            raise MechanismError("temperature and pressure must be positive")
        if np.any(self.element_matrix < 0):
            raise MechanismError("element counts must be non-negative")
        known = set(self.species)
        for rxn in self.reactions:
            names = set(rxn.forward_stoich) | set(rxn.reverse_stoich) | set(rxn.third_body or {})
            unknown = names - known
            if unknown:
                raise MechanismError(f"unknown species {sorted(unknown)} in {rxn.equation!r}")
            net = np.zeros(len(self.species))
            for name, nu in rxn.reverse_stoich.items():
                net[self.index(name)] += nu
            for name, nu in rxn.forward_stoich.items():
                net[self.index(name)] -= nu
            if np.any(self.element_matrix @ net != 0):
                raise MechanismError(f"element balance violated in {rxn.equation!r}")

    @property
    def n_species(self) -> int:
        return len(self.species)

    def index(self, name: str) -> int:
        try:
            return self.species.index(name)
        except ValueError:
            raise KeyError(f"unknown species {name!r}") from None

    def vector(self, values: Mapping[str, float]) -> np.ndarray:
        z = np.zeros(self.n_species)
        for name, v in values.items():
            z[self.index(name)] = v
        return z

    @cached_property
    def _tables(self) -> "_RateTables":
        return _RateTables.build(self)


@dataclass(frozen=True)
class ConservationSystem:
    """Affine element conservation ``C z = b`` anchored at a composition."""

    matrix: np.ndarray
    totals: np.ndarray
    anchor: np.ndarray
    elements: tuple[str, ...] = ()

    def residual(self, z: np.ndarray) -> np.ndarray:
        return self.matrix @ z - self.totals

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]


# ----------------------------------------------------------------------------
# mechanism file parsing


def _parse_side(text: str, lineno: int) -> tuple[dict[str, int], bool]:
    stoich: dict[str, int] = {}
    has_m = False
    for token in text.split("+"):
        token = token.strip()
        if not token:
            raise MechanismError(f"line {lineno}: empty term in reaction")
        if token == "M":
            has_m = True
            continue
        match = re.fullmatch(r"(\d+)\s*(\S+)", token) if token[0].isdigit() else None
        coeff, name = (int(match.group(1)), match.group(2)) if match else (1, token)
        if " " in name:
            raise MechanismError(f"line {lineno}: cannot parse term {token!r}")
        stoich[name] = stoich.get(name, 0) + coeff
    return stoich, has_m


def _pairs(tokens: Sequence[str], lineno: int) -> dict[str, float]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise MechanismError(f"line {lineno}: expected NAME=VALUE, got {tok!r}")
        name, value = tok.split("=", 1)
        try:
            out[name] = float(value)
        except ValueError:
            raise MechanismError(f"line {lineno}: bad number {value!r}") from None
    return out


def _floats(tokens: Sequence[str], lineno: int) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise MechanismError(f"line {lineno}: expected numbers, got {' '.join(tokens)!r}") from None


def parse_mechanism(text: str) -> Mechanism:
    sections: dict[str, list[tuple[int, list[str]]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise MechanismError(f"line {lineno}: malformed section header {line!r}")
            current = line[1:-1].strip().lower()
            if current not in {"elements", "species", "thermo", "reactions", "state"}:
                raise MechanismError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, [])
            continue
        if current is None:
            raise MechanismError(f"line {lineno}: content outside of a section")
        sections[current].append((lineno, line.split()))

    atomic: dict[str, float] = {}
    for lineno, tokens in sections.get("elements", []):
        if len(tokens) != 2:
            raise MechanismError(f"line {lineno}: expected 'NAME MASS'")
        atomic[tokens[0]] = _floats(tokens[1:], lineno)[0]
    elements = tuple(atomic)

    species: list[str] = []
    compositions: list[dict[str, float]] = []
    masses: list[float] = []
    for lineno, tokens in sections.get("species", []):
        name, rest = tokens[0], tokens[1:]
        comp: dict[str, float] = {}
        given_mass = None
        for tok in rest:
            if ":" in tok:
                el, count = tok.split(":", 1)
                if el not in atomic:
                    raise MechanismError(f"line {lineno}: unknown element {el!r}")
                comp[el] = _floats([count], lineno)[0]
            else:
                given_mass = _floats([tok], lineno)[0]
        species.append(name)
        compositions.append(comp)
        masses.append(given_mass if given_mass is not None
                      else sum(atomic[el] * cnt for el, cnt in comp.items()))
    element_matrix = np.array([[comp.get(el, 0) for comp in compositions] for el in elements],
                              dtype=float).reshape(len(elements), len(species))

    thermo: dict[str, Nasa7] = {}
    rows = sections.get("thermo", [])
    if len(rows) % 3:
        raise MechanismError(f"line {rows[-1][0]}: incomplete thermo block")
    for k in range(0, len(rows), 3):
        (l0, head), (l1, low), (l2, high) = rows[k:k + 3]
        if len(head) != 4 or len(low) != 7 or len(high) != 7:
            raise MechanismError(f"line {l0}: thermo block needs 'NAME Tlow Tmid Thigh' "
                                 "followed by two lines of 7 coefficients")
        t_low, t_mid, t_high = _floats(head[1:], l0)
        thermo[head[0]] = Nasa7(t_low, t_mid, t_high, tuple(_floats(low, l1)),
                                tuple(_floats(high, l2)))

    reactions: list[Reaction] = []
    for lineno, tokens in sections.get("reactions", []):
        if tokens[0] == "alpha":
            if not reactions or reactions[-1].third_body is None:
                raise MechanismError(f"line {lineno}: 'alpha' without a third-body reaction")
            prev = reactions[-1]
            effs = dict(prev.third_body)
            effs.update(_pairs(tokens[1:], lineno))
            reactions[-1] = Reaction(prev.forward_stoich, prev.reverse_stoich, prev.A,
                                     prev.b, prev.Ea, effs, prev.equation)
            continue
        if len(tokens) < 4:
            raise MechanismError(f"line {lineno}: expected 'EQUATION A b Ea'")
        equation = " ".join(tokens[:-3])
        if "<=>" not in equation:
            raise MechanismError(f"line {lineno}: reaction must use '<=>'")
        lhs, rhs = equation.split("<=>")
        fwd, m_left = _parse_side(lhs, lineno)
        rev, m_right = _parse_side(rhs, lineno)
        if m_left != m_right:
            raise MechanismError(f"line {lineno}: third body must appear on both sides")
        A, b, Ea = _floats(tokens[-3:], lineno)
        try:
            reactions.append(Reaction(fwd, rev, A, b, Ea, {} if m_left else None,
                                      equation=equation))
        except MechanismError as exc:
            raise MechanismError(f"line {lineno}: {exc}") from None

    temperature = pressure = None
    anchor = None
    for lineno, tokens in sections.get("state", []):
        key = tokens[0]
        if key == "T":
            temperature = _floats(tokens[1:2], lineno)[0]
        elif key == "p":
            pressure = _floats(tokens[1:2], lineno)[0]
        elif key == "anchor":
            anchor = _pairs(tokens[1:], lineno)
        else:
            raise MechanismError(f"line {lineno}: unknown state key {key!r}")
    if temperature is None or pressure is None:
        raise MechanismError("[state] must define T and p")

    mech = Mechanism(
        species=tuple(species),
        molar_masses=np.array(masses),
        elements=elements,
        element_matrix=element_matrix,
        reactions=tuple(reactions),
        temperature=temperature,
        pressure=pressure,
        thermo=thermo,
    )
    if anchor is not None:
        object.__setattr__(mech, "anchor", mech.vector(anchor))
    return mech


def load_mechanism(path: str | Path | None = None) -> Mechanism:
    """Read a mechanism file; ``None`` loads the bundled hydrogen mechanism."""
    path = BUNDLED_MECHANISM if path is None else Path(path)
    return parse_mechanism(path.read_text(encoding="utf-8"))


# ----------------------------------------------------------------------------
# rate evaluation


def _monomial_tables(orders: np.ndarray):
    """Exponent/coefficient tables for first and second derivatives of c**orders."""
    nr, n = orders.shape
    eye = np.eye(n, dtype=int)
    e1 = orders[None, :, :] - eye[:, None, :]  # (i, j, l)
    c1 = orders.T.astype(float)  # (i, j)
    e2 = orders[None, None] - eye[:, None, None, :] - eye[None, :, None, :]  # (i, k, j, l)
    c2 = orders.T[:, None, :] * (orders.T[None, :, :] - eye[:, :, None])  # (i, k, j)
    return np.maximum(e1, 0), c1, np.maximum(e2, 0), c2.astype(float)


@dataclass(frozen=True, eq=False)
class _RateTables:
    nu: np.ndarray  # (nr, n) net stoichiometry
    rate_constants: np.ndarray  # (2 nr,) forward then negated reverse
    orders: np.ndarray  # (2 nr, n)
    alpha: np.ndarray  # (nr, n), zero rows for reactions without third body
    third_body: np.ndarray  # (nr,) bool
    e1: np.ndarray
    c1: np.ndarray
    e2: np.ndarray
    c2: np.ndarray
    total_concentration: float  # mol/cm^3

    @classmethod
    def build(cls, mech: Mechanism) -> "_RateTables":
        n, nr = mech.n_species, len(mech.reactions)
        nu_f = np.zeros((nr, n), dtype=int)
        nu_r = np.zeros((nr, n), dtype=int)
        alpha = np.zeros((nr, n))
        third = np.zeros(nr, dtype=bool)
        for j, rxn in enumerate(mech.reactions):
            for name, v in rxn.forward_stoich.items():
                nu_f[j, mech.index(name)] = v
            for name, v in rxn.reverse_stoich.items():
                nu_r[j, mech.index(name)] = v
            if rxn.third_body is not None:
                third[j] = True
                alpha[j] = 1.0
                for name, eff in rxn.third_body.items():
                    alpha[j, mech.index(name)] = eff
        kf = np.array([forward_rate_constant(mech, j) for j in range(nr)])
        kr = np.array([kf[j] / equilibrium_constant(mech, j) for j in range(nr)])
        orders = np.vstack([nu_f, nu_r]) if nr else np.zeros((0, n), dtype=int)
        e1, c1, e2, c2 = _monomial_tables(orders)
        total = mech.pressure / (GAS_CONSTANT * mech.temperature) * 1e-6
        return cls(nu_r - nu_f, np.concatenate([kf, -kr]), orders, alpha, third,
                   e1, c1, e2, c2, total)


def forward_rate_constant(mech: Mechanism, index: int) -> float:
    rxn = mech.reactions[index]
    T = mech.temperature
    return rxn.A * T**rxn.b * np.exp(-rxn.Ea * 1e3 / (GAS_CONSTANT * T))


def equilibrium_constant(mech: Mechanism, index: int) -> float:
    """K_c of one reaction in (cm, mol) units from NASA-7 Gibbs energies."""
    rxn = mech.reactions[index]
    T = mech.temperature
    dg = 0.0
    dnu = 0
    for stoich, sign in ((rxn.reverse_stoich, 1), (rxn.forward_stoich, -1)):
        for name, nu in stoich.items():
            if name not in mech.thermo:
                raise MechanismError(f"missing thermo block for {name!r}")
            dg += sign * nu * mech.thermo[name].g_rt(T)
            dnu += sign * nu
    kp = np.exp(-dg)
    return kp * (STANDARD_PRESSURE / (GAS_CONSTANT * T) * 1e-6) ** dnu


def _clamp(z: np.ndarray) -> np.ndarray:
    re_z = z.real
    return np.where((re_z < 0) & (re_z >= -NEGATIVE_SLACK), 0.0, z)


def concentrations(mech: Mechanism, z: np.ndarray) -> np.ndarray:
    """Molar concentrations in mol/cm^3 from specific moles (ideal gas, fixed T, p)."""
    z = np.asarray(z)
    total = z.sum()
    if not total.real > 0:
        raise ValueError("total specific moles must be positive")
    return mech._tables.total_concentration * z / total


def _kinetics(mech: Mechanism, z: np.ndarray, v: np.ndarray | None = None):
    """S(z), J_S(z) and optionally the directional derivative of J_S along v."""
    tab = mech._tables
    z = _clamp(np.asarray(z))
    n = z.size
    if not tab.nu.size:
        zero = np.zeros((n, n), dtype=z.dtype)
        return np.zeros(n, dtype=z.dtype), zero, (None if v is None else zero.copy())

    c0 = tab.total_concentration
    ones = np.ones(n)
    total = z.sum()
    mass = mech.molar_masses @ z
    c = c0 * z / total
    dc = c0 * (np.eye(n) / total - np.outer(z, ones) / total**2)

    scale = total / (c0 * mass)
    grad_scale = (ones / mass - total * mech.molar_masses / mass**2) / c0

    nr = tab.nu.shape[0]
    mono = tab.rate_constants * np.prod(c ** tab.orders, axis=1)
    p_rate = mono[:nr] + mono[nr:]
    g_all = tab.rate_constants[None, :] * tab.c1 * np.prod(c ** tab.e1, axis=-1)  # (i, j)
    dp = (g_all[:, :nr] + g_all[:, nr:]).T  # (j, i)

    tb = np.where(tab.third_body, tab.alpha @ c, 1.0)
    q = tb * p_rate
    qc = tab.alpha * p_rate[:, None] + tb[:, None] * dp

    u = tab.nu.T @ q
    ju = tab.nu.T @ qc @ dc
    source = scale * u
    jac = np.outer(u, grad_scale) + scale * ju
    if v is None:
        return source, jac, None

    v = np.asarray(v)
    h_all = tab.rate_constants[None, None, :] * tab.c2 * np.prod(c ** tab.e2, axis=-1)
    d2p = np.transpose(h_all[:, :, :nr] + h_all[:, :, nr:], (2, 0, 1))  # (j, i, k)
    w = dc @ v
    dpw = dp @ w
    qcc_w = (tab.alpha * dpw[:, None] + dp * (tab.alpha @ w)[:, None]
             + tb[:, None] * (d2p @ w))
    sv = v.sum()
    ddc = c0 * (-sv / total**2 * np.eye(n) - np.outer(v, ones) / total**2
                + 2 * sv * np.outer(z, ones) / total**3)
    m = mech.molar_masses
    hess_scale = (-(np.outer(ones, m) + np.outer(m, ones)) / mass**2
                  + 2 * total * np.outer(m, m) / mass**3) / c0
    dju = tab.nu.T @ (qcc_w @ dc + qc @ ddc)
    djac = (np.outer(ju @ v, grad_scale) + np.outer(u, hess_scale @ v)
            + (grad_scale @ v) * ju + scale * dju)
    return source, jac, djac


def source_term(mech: Mechanism, z: np.ndarray) -> np.ndarray:
    """Right-hand side dz/dt in mol/(kg s)."""
    return _kinetics(mech, z)[0]


def jacobian(mech: Mechanism, z: np.ndarray) -> np.ndarray:
    return _kinetics(mech, z)[1]


def source_and_jacobian(mech: Mechanism, z: np.ndarray):
    s, j, _ = _kinetics(mech, z)
    return s, j


def jacobian_directional(mech: Mechanism, z: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Directional derivative of the Jacobian, d/de J_S(z + e v) at e = 0."""
    return _kinetics(mech, z, v)[2]


def rates_of_progress(mech: Mechanism, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward and reverse rates of progress per reaction, mol/(cm^3 s)."""
    tab = mech._tables
    c = concentrations(mech, _clamp(np.asarray(z, dtype=float)))
    nr = tab.nu.shape[0]
    mono = tab.rate_constants * np.prod(c ** tab.orders, axis=1)
    tb = np.where(tab.third_body, tab.alpha @ c, 1.0)
    return tb * mono[:nr], -tb * mono[nr:]


def objective(mech: Mechanism, z: np.ndarray) -> float:
    """Slowness/attraction measure ||J_S S||^2."""
    s, j, _ = _kinetics(mech, z)
    return float(np.sum((j @ s) ** 2))


def conservation_from_anchor(mech: Mechanism, anchor: np.ndarray) -> ConservationSystem:
    anchor = np.asarray(anchor, dtype=float)
    if np.any(anchor < 0):
        raise ValueError("anchor composition must be non-negative")
    rows, names = [], []
    for name, row in zip(mech.elements, mech.element_matrix):
        if not np.any(row):
            continue
        trial = np.array(rows + [row])
        if np.linalg.matrix_rank(trial) == len(trial):
            rows.append(row)
            names.append(name)
    matrix = np.array(rows, dtype=float).reshape(len(rows), mech.n_species)
    return ConservationSystem(matrix, matrix @ anchor, anchor.copy(), tuple(names))


def mass_fraction_sum(mech: Mechanism, z: np.ndarray) -> float:
    return float(mech.molar_masses @ np.asarray(z))
