"""Exact inference on finite structural causal models.

A model is a list of exogenous variables (independent categorical noise) and
an ordered list of endogenous variables, each computed deterministically from
its parents through a lookup table. Everything here works by enumerating the
full exogenous configuration space, which stays tiny under the documented
caps (domains of at most 5 values, at most 4 exogenous variables), so every
probability is exact up to float rounding: no sampling anywhere.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, EvidenceError, PositivityError

MAX_DOMAIN = 5
MAX_EXOGENOUS = 4
PROBABILITY_FLOOR = 0.01


@dataclass(frozen=True)
class ExogenousVar:
    """Independent categorical noise source."""

    name: str
    probs: tuple

    @property
    def domain(self):
        return len(self.probs)


@dataclass(frozen=True)
class EndogenousVar:
    """Deterministic mechanism: value = table[parent values...]."""

    name: str
    domain: int
    parents: tuple
    table: np.ndarray


class DiscreteSCM:
    """Finite structural causal model over named categorical variables.

    Parameters
    ----------
    exogenous : sequence of ExogenousVar
        Noise sources; their order fixes the enumeration layout.
    endogenous : sequence of EndogenousVar
        Mechanisms in topological order: each may list as parents only
        exogenous variables or endogenous variables defined earlier, which
        makes cycles unrepresentable.
    """

    def __init__(self, exogenous, endogenous):
        self.exogenous = list(exogenous)
        self.endogenous = list(endogenous)
        if len(self.exogenous) > MAX_EXOGENOUS:
            raise ContractError(
                f"at most {MAX_EXOGENOUS} exogenous variables supported"
            )
        if not self.endogenous:
            raise ContractError("model needs at least one endogenous variable")
        seen = {}
        for e in self.exogenous:
            if e.name in seen:
                raise ContractError(f"duplicate variable name {e.name!r}")
            if not 1 <= e.domain <= MAX_DOMAIN:
                raise ContractError(f"{e.name}: domain size {e.domain} out of range")
            probs = np.asarray(e.probs, dtype=np.float64)
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise ContractError(f"{e.name}: probabilities must sum to one")
            seen[e.name] = e.domain
        for v in self.endogenous:
            if v.name in seen:
                raise ContractError(f"duplicate variable name {v.name!r}")
            if not 1 <= v.domain <= MAX_DOMAIN:
                raise ContractError(f"{v.name}: domain size {v.domain} out of range")
            expected = []
            for parent in v.parents:
                if parent not in seen:
                    raise ContractError(
                        f"{v.name}: parent {parent!r} undefined or defined later"
                    )
                expected.append(seen[parent])
            table = np.asarray(v.table, dtype=np.int64)
            if table.shape != tuple(expected):
                raise ContractError(
                    f"{v.name}: table shape {table.shape} does not match parents"
                )
            if table.size and (table.min() < 0 or table.max() >= v.domain):
                raise ContractError(f"{v.name}: table value outside its domain")
            seen[v.name] = v.domain
        self._domains = seen

    def domain(self, name):
        if name not in self._domains:
            raise ContractError(f"unknown variable {name!r}")
        return self._domains[name]

    def endogenous_names(self):
        return tuple(v.name for v in self.endogenous)

    def _check_assignments(self, assignments):
        for name, value in assignments.items():
            found = any(v.name == name for v in self.endogenous)
            if not found:
                raise ContractError(f"cannot intervene on {name!r}: not endogenous")
            if not 0 <= int(value) < self._domains[name]:
                raise ContractError(
                    f"intervention value {value} outside the domain of {name!r}"
                )

    def exogenous_grid(self):
        """All exogenous configurations as columns, with their joint weights."""
        dims = [e.domain for e in self.exogenous]
        if dims:
            grid = np.indices(dims).reshape(len(dims), -1)
        else:
            grid = np.zeros((0, 1), dtype=np.int64)
        weights = np.ones(grid.shape[1])
        for row, e in zip(grid, self.exogenous):
            weights = weights * np.asarray(e.probs, dtype=np.float64)[row]
        values = {e.name: row for e, row in zip(self.exogenous, grid)}
        return values, weights

    def evaluate(self, exo_values, interventions=None):
        """Endogenous values for every exogenous column, under interventions."""
        interventions = interventions or {}
        self._check_assignments(interventions)
        n = next(iter(exo_values.values())).shape[0] if exo_values else 1
        vals = dict(exo_values)
        for v in self.endogenous:
            if v.name in interventions:
                vals[v.name] = np.full(n, int(interventions[v.name]), dtype=np.int64)
            elif v.parents:
                vals[v.name] = v.table[tuple(vals[p] for p in v.parents)]
            else:
                vals[v.name] = np.broadcast_to(v.table, (n,)).astype(np.int64)
        return vals


@dataclass(frozen=True)
class Distribution:
    """Exact joint over named categorical variables."""

    names: tuple
    probs: np.ndarray

    def marginal(self, names):
        """Marginal over the requested variables, axes in the requested order."""
        names = tuple(names)
        for n in names:
            if n not in self.names:
                raise ContractError(f"variable {n!r} not in distribution")
        drop = tuple(i for i, n in enumerate(self.names) if n not in names)
        kept = [n for n in self.names if n in names]
        probs = self.probs.sum(axis=drop) if drop else self.probs
        order = [kept.index(n) for n in names]
        return Distribution(names=names, probs=np.transpose(probs, order))


def _joint_under(scm, interventions):
    exo_values, weights = scm.exogenous_grid()
    vals = scm.evaluate(exo_values, interventions)
    names = scm.endogenous_names()
    dims = [scm.domain(n) for n in names]
    flat = np.ravel_multi_index(tuple(vals[n] for n in names), dims)
    probs = np.bincount(flat, weights=weights, minlength=int(np.prod(dims)))
    return Distribution(names=names, probs=probs.reshape(dims))


def observational_joint(scm):
    """Exact joint over all endogenous variables (exogenous marginalized out)."""
    return _joint_under(scm, None)


def intervene(scm, assignments):
    """Joint under do(assignments): mechanisms of the targets are replaced."""
    scm._check_assignments(assignments)
    return _joint_under(scm, dict(assignments))


# ------------------------------------------------------------------ adjustment


def backdoor_adjust(joint, x="X", z="Z", y="Y"):
    """Back-door adjustment sum_z P(z) P(y | x, z) from an observational joint.

    Returns a [dom(x) x dom(y)] array of interventional distributions. Raises
    PositivityError when some stratum of z with mass carries no mass for an
    (x, z) cell the formula has to condition on.
    """
    d = joint.marginal((x, z, y))
    p = d.probs
    pz = p.sum(axis=(0, 2))
    pxz = p.sum(axis=2)
    out = np.zeros((p.shape[0], p.shape[2]))
    for zi in range(p.shape[1]):
        if pz[zi] <= 0.0:
            continue
        for xi in range(p.shape[0]):
            if pxz[xi, zi] <= 0.0:
                raise PositivityError(
                    f"P({x}={xi}, {z}={zi}) = 0 but P({z}={zi}) > 0"
                )
            out[xi] += pz[zi] * p[xi, zi] / pxz[xi, zi]
    return out


def frontdoor_adjust(joint, x="X", m="M", y="Y"):
    """Front-door adjustment sum_m P(m|x) sum_x' P(x') P(y|x', m).

    Returns a [dom(x) x dom(y)] array. The inner mixture runs over the x'
    strata where P(x', m) > 0 and renormalizes their prior mass, which
    coincides with the textbook formula under full positivity and stays
    defined when x determines m. Raises PositivityError when some x value
    the formula must condition on has no mass at all.
    """
    d = joint.marginal((x, m, y))
    p = d.probs
    px = p.sum(axis=(1, 2))
    pxm = p.sum(axis=2)
    nx, nm, ny = p.shape
    inner = np.zeros((nm, ny))
    for mi in range(nm):
        support = pxm[:, mi] > 0.0
        if not support.any():
            continue
        for xi in np.nonzero(support)[0]:
            inner[mi] += px[xi] * p[xi, mi] / pxm[xi, mi]
        inner[mi] /= px[support].sum()
    out = np.zeros((nx, ny))
    for xi in range(nx):
        if px[xi] <= 0.0:
            raise PositivityError(f"P({x}={xi}) = 0; cannot form P({m}|{x}={xi})")
        pm_given_x = pxm[xi] / px[xi]
        for mi in range(nm):
            if pm_given_x[mi] > 0.0:
                out[xi] += pm_given_x[mi] * inner[mi]
    return out


# -------------------------------------------------------------- counterfactual


def prob_sufficiency(scm, regime_a, regime_b, y, outcome="Y"):
    """Probability that regime_b produces outcome y among the exogenous worlds
    where regime_a did not.

    Abduction, action, prediction with shared noise: condition the exogenous
    prior on the evidence {outcome != y under regime_a}, then ask how often
    regime_b yields y under that posterior. Zero-probability evidence raises
    EvidenceError.
    """
    dom = scm.domain(outcome)
    if any(v.name == outcome for v in scm.exogenous):
        raise ContractError(f"outcome {outcome!r} must be endogenous")
    if not 0 <= int(y) < dom:
        raise ContractError(f"outcome value {y} outside the domain of {outcome!r}")
    exo_values, weights = scm.exogenous_grid()
    vals_a = scm.evaluate(exo_values, dict(regime_a))
    vals_b = scm.evaluate(exo_values, dict(regime_b))
    mask = vals_a[outcome] != int(y)
    denom = float(weights[mask].sum())
    if denom <= 0.0:
        raise EvidenceError(
            f"evidence {{{outcome} != {y}}} has zero probability under regime_a"
        )
    num = float(weights[mask & (vals_b[outcome] == int(y))].sum())
    return num / denom


def combine_total_effect(path_probs, sufficiency):
    """Mix per-path probabilities by pairwise sufficiency scores.

    path_probs: three per-path outcome arrays (or scalars) p_0, p_1, p_2.
    sufficiency: 3x3 array, entry [j, i] scoring how far path j's success
    carries over to path i; the diagonal is ignored. Each path's total effect
    is its own probability scaled by the summed incoming scores, and the
    overall effect is the sum of the three.
    """
    if len(path_probs) != 3:
        raise ContractError("expected exactly three path probabilities")
    s = np.asarray(sufficiency, dtype=np.float64)
    if s.shape != (3, 3):
        raise ContractError(f"sufficiency matrix must be 3x3, got {s.shape}")
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise ContractError("sufficiency scores must lie in [0, 1]")
    effects = []
    for i in range(3):
        incoming = sum(float(s[j, i]) for j in range(3) if j != i)
        effects.append(np.asarray(path_probs[i], dtype=np.float64) * incoming)
    return effects, sum(effects)


# ------------------------------------------------------------------- builders


def from_conditional_tables(z_probs, x_given_z, y_given_xz):
    """Build the classic observed-confounder triangle Z -> X, Z -> Y, X -> Y
    from explicit conditional probability tables.

    z_probs: [dz]; x_given_z: [dz x dx]; y_given_xz: [dx x dz x dy]. Each
    conditional row is realized exactly through one uniform-ish noise variable
    per mechanism by stacking the row probabilities into disjoint noise cells.
    """
    z_probs = np.asarray(z_probs, dtype=np.float64)
    x_given_z = np.asarray(x_given_z, dtype=np.float64)
    y_given_xz = np.asarray(y_given_xz, dtype=np.float64)
    dz = z_probs.shape[0]
    dx = x_given_z.shape[1]
    dy = y_given_xz.shape[2]
    if x_given_z.shape[0] != dz or y_given_xz.shape[:2] != (dx, dz):
        raise ContractError("conditional table shapes disagree")

    ux_probs, x_table = _noise_encode(x_given_z.reshape(dz, dx))
    uy_probs, y_table_flat = _noise_encode(y_given_xz.reshape(dx * dz, dy))
    exo = [
        ExogenousVar("U_Z", tuple(z_probs.tolist())),
        ExogenousVar("U_X", tuple(ux_probs)),
        ExogenousVar("U_Y", tuple(uy_probs)),
    ]
    endo = [
        EndogenousVar("Z", dz, ("U_Z",), np.arange(dz)),
        EndogenousVar("X", dx, ("Z", "U_X"), x_table),
        EndogenousVar(
            "Y", dy, ("X", "Z", "U_Y"), y_table_flat.reshape(dx, dz, -1)
        ),
    ]
    return DiscreteSCM(exo, endo)


def _noise_encode(rows):
    """Realize a stack of conditional rows exactly with one shared noise var.

    Collects the distinct breakpoints of every row's cumulative distribution;
    the noise cells are the gaps between consecutive breakpoints, and each
    (row, cell) pair maps deterministically to the row value whose cumulative
    span covers the cell. Exact, but the cell count grows with row count, so
    only suitable for the small handcrafted models used in tests.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
        raise ContractError("each conditional row must be a distribution")
    cuts = {0.0, 1.0}
    for row in rows:
        c = 0.0
        for p in row[:-1]:
            c += p
            cuts.add(round(c, 12))
    cuts = sorted(cuts)
    cells = np.diff(cuts)
    keep = cells > 0
    cells = cells[keep]
    starts = np.asarray(cuts[:-1])[keep]
    if cells.shape[0] > MAX_DOMAIN:
        raise ContractError(
            f"conditional tables need {cells.shape[0]} noise cells; "
            f"at most {MAX_DOMAIN} supported"
        )
    table = np.zeros((rows.shape[0], cells.shape[0]), dtype=np.int64)
    for i, row in enumerate(rows):
        cum = np.cumsum(row)
        for j, start in enumerate(starts):
            table[i, j] = int(np.searchsorted(cum, start + cells[j] / 2.0, side="right"))
    return cells.tolist(), table


# ------------------------------------------------------- random model families


def _floored_probs(rng, k):
    u = rng.random(k)
    return PROBABILITY_FLOOR + (1.0 - k * PROBABILITY_FLOOR) * (u / u.sum())


def _surjective_table(rng, parent_dims, noise_dim, child_dim):
    """Mechanism table where, for every parent configuration, the noise value
    sweeps the whole child domain (keeps every outcome reachable)."""
    shape = tuple(parent_dims) + (noise_dim,)
    flat = np.empty((int(np.prod(parent_dims, dtype=np.int64)), noise_dim), dtype=np.int64)
    for r in range(flat.shape[0]):
        col = np.empty(noise_dim, dtype=np.int64)
        col[:child_dim] = rng.permutation(child_dim)
        if noise_dim > child_dim:
            col[child_dim:] = rng.integers(0, child_dim, size=noise_dim - child_dim)
        flat[r] = rng.permutation(col)
    return flat.reshape(shape)


def random_backdoor_scm(rng):
    """Observed-confounder triangle Z -> X, Z -> Y, X -> Y with floored noise."""
    dz = int(rng.integers(2, 4))
    dx = int(rng.integers(2, 4))
    dy = int(rng.integers(2, 4))
    dux = min(MAX_DOMAIN, dx + 1)
    duy = min(MAX_DOMAIN, dy + 1)
    exo = [
        ExogenousVar("U_Z", tuple(_floored_probs(rng, dz).tolist())),
        ExogenousVar("U_X", tuple(_floored_probs(rng, dux).tolist())),
        ExogenousVar("U_Y", tuple(_floored_probs(rng, duy).tolist())),
    ]
    endo = [
        EndogenousVar("Z", dz, ("U_Z",), np.arange(dz)),
        EndogenousVar("X", dx, ("Z", "U_X"), _surjective_table(rng, (dz,), dux, dx)),
        EndogenousVar(
            "Y", dy, ("X", "Z", "U_Y"), _surjective_table(rng, (dx, dz), duy, dy)
        ),
    ]
    return DiscreteSCM(exo, endo)


def random_frontdoor_scm(rng):
    """Hidden confounder U of X and Y plus a clean mediator X -> M -> Y."""
    du = int(rng.integers(2, 4))
    dx = int(rng.integers(2, 4))
    dm = int(rng.integers(2, 4))
    dy = int(rng.integers(2, 4))
    dux = min(MAX_DOMAIN, dx + 1)
    dum = min(MAX_DOMAIN, dm + 1)
    duy = min(MAX_DOMAIN, dy + 1)
    exo = [
        ExogenousVar("U", tuple(_floored_probs(rng, du).tolist())),
        ExogenousVar("U_X", tuple(_floored_probs(rng, dux).tolist())),
        ExogenousVar("U_M", tuple(_floored_probs(rng, dum).tolist())),
        ExogenousVar("U_Y", tuple(_floored_probs(rng, duy).tolist())),
    ]
    endo = [
        EndogenousVar("X", dx, ("U", "U_X"), _surjective_table(rng, (du,), dux, dx)),
        EndogenousVar("M", dm, ("X", "U_M"), _surjective_table(rng, (dx,), dum, dm)),
        EndogenousVar(
            "Y", dy, ("U", "M", "U_Y"), _surjective_table(rng, (du, dm), duy, dy)
        ),
    ]
    return DiscreteSCM(exo, endo)


def random_chain_scm(rng):
    """Confounder-free chain X -> M -> Y (no back-door path into X)."""
    dx = int(rng.integers(2, 4))
    dm = int(rng.integers(2, 4))
    dy = int(rng.integers(2, 4))
    dum = min(MAX_DOMAIN, dm + 1)
    duy = min(MAX_DOMAIN, dy + 1)
    exo = [
        ExogenousVar("U_X", tuple(_floored_probs(rng, dx).tolist())),
        ExogenousVar("U_M", tuple(_floored_probs(rng, dum).tolist())),
        ExogenousVar("U_Y", tuple(_floored_probs(rng, duy).tolist())),
    ]
    endo = [
        EndogenousVar("X", dx, ("U_X",), np.arange(dx)),
        EndogenousVar("M", dm, ("X", "U_M"), _surjective_table(rng, (dx,), dum, dm)),
        EndogenousVar("Y", dy, ("M", "U_Y"), _surjective_table(rng, (dm,), duy, dy)),
    ]
    return DiscreteSCM(exo, endo)


def random_binary_scm(rng):
    """Small random binary model for counterfactual checks; one of three
    shapes: direct X -> Y, chain X -> M -> Y, or confounded Z -> {X, Y}."""
    shape = int(rng.integers(3))
    if shape == 0:
        exo = [
            ExogenousVar("U_X", tuple(_floored_probs(rng, 2).tolist())),
            ExogenousVar("U_Y", tuple(_floored_probs(rng, 3).tolist())),
        ]
        endo = [
            EndogenousVar("X", 2, ("U_X",), np.arange(2)),
            EndogenousVar("Y", 2, ("X", "U_Y"), _surjective_table(rng, (2,), 3, 2)),
        ]
    elif shape == 1:
        exo = [
            ExogenousVar("U_X", tuple(_floored_probs(rng, 2).tolist())),
            ExogenousVar("U_M", tuple(_floored_probs(rng, 3).tolist())),
            ExogenousVar("U_Y", tuple(_floored_probs(rng, 3).tolist())),
        ]
        endo = [
            EndogenousVar("X", 2, ("U_X",), np.arange(2)),
            EndogenousVar("M", 2, ("X", "U_M"), _surjective_table(rng, (2,), 3, 2)),
            EndogenousVar("Y", 2, ("M", "U_Y"), _surjective_table(rng, (2,), 3, 2)),
        ]
    else:
        exo = [
            ExogenousVar("U_Z", tuple(_floored_probs(rng, 2).tolist())),
            ExogenousVar("U_X", tuple(_floored_probs(rng, 3).tolist())),
            ExogenousVar("U_Y", tuple(_floored_probs(rng, 3).tolist())),
        ]
        endo = [
            EndogenousVar("Z", 2, ("U_Z",), np.arange(2)),
            EndogenousVar("X", 2, ("Z", "U_X"), _surjective_table(rng, (2,), 3, 2)),
            EndogenousVar(
                "Y", 2, ("X", "Z", "U_Y"), _surjective_table(rng, (2, 2), 3, 2)
            ),
        ]
    return DiscreteSCM(exo, endo)


def canonical_monotone_scm(p_x1=0.5):
    """Y copies X exactly; flipping do(X=0) to do(X=1) always flips Y."""
    return DiscreteSCM(
        [ExogenousVar("U_X", (1.0 - p_x1, p_x1))],
        [
            EndogenousVar("X", 2, ("U_X",), np.arange(2)),
            EndogenousVar("Y", 2, ("X",), np.arange(2)),
        ],
    )


# -------------------------------------------------------------------- file I/O


def save_scm(scm, path):
    payload = {
        "version": 1,
        "exogenous": [
            {"name": e.name, "probs": list(e.probs)} for e in scm.exogenous
        ],
        "endogenous": [
            {
                "name": v.name,
                "domain": v.domain,
                "parents": list(v.parents),
                "table": v.table.tolist(),
            }
            for v in scm.endogenous
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_scm(path):
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != 1:
        raise ContractError("unsupported model file version")
    try:
        exo = [
            ExogenousVar(e["name"], tuple(float(p) for p in e["probs"]))
            for e in payload["exogenous"]
        ]
        endo = [
            EndogenousVar(
                v["name"],
                int(v["domain"]),
                tuple(v["parents"]),
                np.asarray(v["table"], dtype=np.int64),
            )
            for v in payload["endogenous"]
        ]
    except (KeyError, TypeError) as exc:
        raise ContractError(f"malformed model file: {exc}") from exc
    return DiscreteSCM(exo, endo)
