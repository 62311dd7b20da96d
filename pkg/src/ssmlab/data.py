"""Teachers, training sequences, labeling, and student initialization.

Sequence positions in specs are 1-based (matching the experiment tables) and
converted to 0-based indices internally. All randomness flows through
counter-based Philox generators keyed by explicit seeds, so identical seeds
reproduce identical data bitwise and parallel tasks can split substreams
without shared state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mlp_head import head_forward, identity_head
from .ssm_core import DiagonalSSM, forward, impulse_response


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based, splittable generator for one task."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def split_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """n independent substreams of the given seed (deterministic)."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class LabeledSequence:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("sequence length must be >= 2")
        if not np.isfinite(self.y):
            raise ValueError("label must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))


class TrainingSet:
    """Immutable collection of labeled sequences sharing one length."""

    def __init__(self, items: Sequence[LabeledSequence]):
        items = tuple(items)
        if not items:
            raise ValueError("training set must be nonempty")
        kappa = items[0].x.size
        if any(it.x.size != kappa for it in items):
            raise ValueError("all sequences must share the same length")
        self.items = items
        self.kappa = kappa
        self.n = len(items)
        # cached matrix views used by the loss/gradient code
        self.x_matrix = np.stack([it.x for it in items])
        self.labels = np.array([it.y for it in items])
        self.x_matrix.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return self.n

    def __iter__(self):
        return iter(self.items)

    def __add__(self, other: "TrainingSet") -> "TrainingSet":
        return TrainingSet(self.items + other.items)


@dataclass(frozen=True)
class SequenceSpec:
    """Recipe for a batch of sparse Gaussian sequences.

    nonzero_indices are 1-based positions within [1, kappa].
    """

    kappa: int
    nonzero_indices: frozenset
    count: int

    def __post_init__(self):
        object.__setattr__(self, "nonzero_indices", frozenset(int(i) for i in self.nonzero_indices))
        if self.kappa < 2:
            raise ValueError("kappa must be >= 2")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        bad = [i for i in self.nonzero_indices if not 1 <= i <= self.kappa]
        if bad:
            raise ValueError(f"nonzero indices {sorted(bad)} outside [1, {self.kappa}]")


def gaussian_sequences(spec: SequenceSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """spec.count sequences, standard normal on the spec's positions and zero elsewhere."""
    cols = sorted(i - 1 for i in spec.nonzero_indices)
    out = []
    for _ in range(spec.count):
        x = np.zeros(spec.kappa)
        if cols:
            x[cols] = rng.standard_normal(len(cols))
        out.append(x)
    return out


def canonical_teacher(d: int) -> DiagonalSSM:
    """The labeling SSM in its d-dimensional form: a = (1, 0, ..., 0), b = c = 1.

    Impulse response is (d, 1, 1, ...).
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    a = np.zeros(d)
    a[0] = 1.0
    return DiagonalSSM(a, np.ones(d), np.ones(d))


def diag_teacher(values, d_pad: Optional[int] = None) -> DiagonalSSM:
    """Teacher with prescribed diagonal and unit input/output weights.

    d_pad is accepted for config symmetry with the student dimension but the
    teacher keeps its own dimension.
    """
    values = np.asarray(values, dtype=np.float64)
    return DiagonalSSM(values, np.ones(values.size), np.ones(values.size))


def label_set(teacher: DiagonalSSM, head, xs: Sequence[np.ndarray]) -> TrainingSet:
    """Label sequences with the (optionally head-composed) teacher."""
    if head is None:
        head = identity_head()
    items = [LabeledSequence(x, head_forward(head, forward(teacher, x))) for x in xs]
    return TrainingSet(items)


def one_hot(kappa: int, position: int) -> np.ndarray:
    """Standard basis sequence with 1 at the given 1-based position."""
    if not 1 <= position <= kappa:
        raise ValueError(f"position {position} outside [1, {kappa}]")
    x = np.zeros(kappa)
    x[position - 1] = 1.0
    return x


def theorem_sets(teacher: DiagonalSSM, kappa: int) -> tuple[TrainingSet, TrainingSet]:
    """The single-probe set {(e_1, y)} and its poisoned extension with (e_{kappa-1}, y+)."""
    clean = label_set(teacher, None, [one_hot(kappa, 1)])
    poisoned = clean + label_set(teacher, None, [one_hot(kappa, kappa - 1)])
    return clean, poisoned


@dataclass(frozen=True)
class InitSpec:
    """Student initialization recipe.

    All vectors start as sorted |N(0, sd)| draws; the second entry of a (and
    b) is pinned to the first minus `diff`, with optional further entries
    pinned via extension_factors (entry 2+j gets first minus factor_j*diff).
    `shift` is added to every entry of a and b afterwards. When sd_bc is
    None, b and c are fixed at all-ones.
    """

    d: int
    sd_a: float
    diff: float = 0.0
    sd_bc: Optional[float] = None
    extension_factors: tuple = ()
    shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "extension_factors", tuple(float(f) for f in self.extension_factors))
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.sd_a <= 0:
            raise ValueError("sd_a must be > 0")
        if self.diff < 0:
            raise ValueError("diff must be >= 0")
        if len(self.extension_factors) > self.d - 2:
            raise ValueError("too many extension factors for dimension")


@dataclass(frozen=True)
class InitSample:
    """Drawn initialization plus diagnostics (reported, never enforced)."""

    a0: np.ndarray
    b0: np.ndarray
    c0: np.ndarray
    in_init_family: bool = False
    strictly_descending: bool = False
    flags: tuple = field(default=())


def _pinned_descending(d: int, sd: float, diff: float, factors, rng) -> np.ndarray:
    v = np.sort(np.abs(rng.normal(0.0, sd, size=d)))[::-1].copy()
    if d >= 2:
        v[1] = v[0] - diff
    for j, f in enumerate(factors):
        v[2 + j] = v[0] - f * diff
    return v


def sample_init(spec: InitSpec, rng: np.random.Generator) -> InitSample:
    """Draw (a0, b0, c0) per the spec and report whether a0 lies in the
    benign initialization family (positive, strictly descending, max entry
    below 1/(2d))."""
    a0 = _pinned_descending(spec.d, spec.sd_a, spec.diff, spec.extension_factors, rng)
    if spec.sd_bc is None:
        b0 = np.ones(spec.d)
        c0 = np.ones(spec.d)
    else:
        b0 = _pinned_descending(spec.d, spec.sd_bc, spec.diff, spec.extension_factors, rng)
        c0 = np.sort(np.abs(rng.normal(0.0, spec.sd_bc, size=spec.d)))[::-1].copy()
    a0 = a0 + spec.shift
    if spec.sd_bc is not None:
        b0 = b0 + spec.shift

    descending = bool(np.all(np.diff(a0) < 0)) if spec.d > 1 else True
    in_family = descending and bool(np.all(a0 > 0)) and float(a0.max()) < 1.0 / (2 * spec.d)
    flags = []
    if not descending:
        flags.append("not strictly descending")
    if np.any(a0 <= 0):
        flags.append("nonpositive entry")
    return InitSample(a0, b0, c0, in_family, descending, tuple(flags))


class IllConditionedNodesError(ValueError):
    """Raised when the requested node set makes the moment system numerically unsolvable."""


def chebyshev_nodes(d: int, radius: float = 0.95) -> np.ndarray:
    """d distinct Chebyshev-spaced points in (-radius, radius)."""
    i = np.arange(1, d + 1)
    return radius * np.cos((2 * i - 1) * np.pi / (2 * d))


def adversarial_zero_loss(
    teacher: DiagonalSSM,
    kappa: int,
    d: int,
    eps: float,
    nodes=None,
    cond_limit: float = 1e12,
) -> DiagonalSSM:
    """SSM that matches the teacher's first kappa Markov parameters exactly and
    overshoots every later one by eps.

    Any training set of teacher-labeled length-kappa sequences therefore gives
    it zero loss, while its generalization error over length kappa+1 is at
    least eps. Built by solving the moment system V^T g = r for the output
    weights, where V is the Vandermonde matrix of the chosen diagonal nodes.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if d <= kappa:
        raise ValueError("d must exceed kappa")
    nodes = chebyshev_nodes(d) if nodes is None else np.asarray(nodes, dtype=np.float64)
    if nodes.size != d or np.unique(nodes).size != d:
        raise ValueError("nodes must be d pairwise-distinct reals")
    vand = np.vander(nodes, N=d, increasing=True)
    cond = np.linalg.cond(vand)
    if not np.isfinite(cond) or cond > cond_limit:
        raise IllConditionedNodesError(
            f"Vandermonde condition number {cond:.3e} exceeds {cond_limit:.1e}; "
            "choose better-separated nodes"
        )
    r = impulse_response(teacher, d)
    r[kappa:] += eps
    g = np.linalg.solve(vand.T, r)
    return DiagonalSSM(nodes, np.ones(d), g)
