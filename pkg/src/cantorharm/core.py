"""Word coding, spacing parameters and the finite levels K_n of the Cantor set.

A point of generation ``n`` is addressed by its word of letter indices, or
equivalently by its index in lexicographic order, so the ancestor of point
``i`` at generation ``k`` is simply ``i // N**(n - k)``.

Coordinates are never differenced directly.  Each level keeps, for every
point and every generation ``j``, the offset of the point from its
generation-``j`` ancestor; two points whose words first disagree at letter
``m`` are then compared through their offsets from the common generation
``m - 1`` ancestor, which keeps full relative precision even when the pair is
``r**14`` apart.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import InfeasibleError, UsageError

# Tolerance used when checking that a stored coefficient lies in [1, a].
PARAM_TOL = 1e-12


# ---------------------------------------------------------------------------
# alphabets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Alphabet:
    """Base class for the three letter sets."""

    @property
    def size(self) -> int:
        raise NotImplementedError

    @property
    def planar(self) -> bool:
        return False

    @property
    def dtype(self):
        return np.complex128 if self.planar else np.float64

    def letters(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def min_half_gap(self) -> float:
        """Half the smallest distance between two distinct letters."""
        return 1.0

    @property
    def max_half_gap(self) -> float:
        """Half the largest distance between two distinct letters."""
        return 1.0

    @staticmethod
    def parse(text: str) -> "Alphabet":
        """Parse ``line``, ``roots:N`` or ``ring:n``."""
        if isinstance(text, Alphabet):
            return text
        name, _, arg = str(text).strip().partition(":")
        name = name.lower()
        try:
            if name == "line":
                if arg:
                    raise ValueError
                return LineBinary()
            if name == "roots":
                return RootsOfUnity(int(arg))
            if name == "ring":
                return RingAxis(int(arg))
        except ValueError:
            pass
        raise UsageError(f"unknown alphabet {text!r}; expected line, roots:N or ring:n")


@dataclass(frozen=True)
class LineBinary(Alphabet):
    """Letters -1 and +1 on the real line (index 0 is -1)."""

    @property
    def size(self) -> int:
        return 2

    def letters(self) -> np.ndarray:
        return np.array([-1.0, 1.0])

    def __str__(self) -> str:
        return "line"


@dataclass(frozen=True)
class RootsOfUnity(Alphabet):
    """The N-th roots of unity as planar points (complex numbers)."""

    N: int = 4

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise UsageError(f"RootsOfUnity needs N >= 3, got {self.N}")

    @property
    def size(self) -> int:
        return self.N

    @property
    def planar(self) -> bool:
        return True

    def letters(self) -> np.ndarray:
        z = np.exp(2j * np.pi * np.arange(self.N) / self.N)
        # quarter turns are exact
        exact = {0: 1.0, 1: 1j, 2: -1.0, 3: -1j}
        for j in range(self.N):
            if (4 * j) % self.N == 0:
                z[j] = exact[(4 * j) // self.N]
        return z

    @property
    def min_half_gap(self) -> float:
        return math.sin(math.pi / self.N)

    @property
    def max_half_gap(self) -> float:
        return math.sin(math.pi * (self.N // 2) / self.N)

    def __str__(self) -> str:
        return f"roots:{self.N}"


@dataclass(frozen=True)
class RingAxis(Alphabet):
    """Letters -1 and +1 on the axis of a ring cylinder in R^ndim."""

    ndim: int = 3

    def __post_init__(self):
        if int(self.ndim) != self.ndim or self.ndim < 3:
            raise UsageError(f"RingAxis needs ambient dimension >= 3, got {self.ndim}")

    @property
    def size(self) -> int:
        return 2

    def letters(self) -> np.ndarray:
        return np.array([-1.0, 1.0])

    def __str__(self) -> str:
        return f"ring:{self.ndim}"


# ---------------------------------------------------------------------------
# generator spec
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    """Construction recipe: alphabet, contraction ratio, spacing ceiling."""

    alphabet: Alphabet = field(default_factory=LineBinary)
    r: float = 0.0623
    a: float = 2.217
    max_generation: int = 12

    def __post_init__(self):
        alphabet = Alphabet.parse(self.alphabet)
        object.__setattr__(self, "alphabet", alphabet)
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "a", float(self.a))
        r, a = self.r, self.a
        if not (math.isfinite(r) and 0 < r <= 1 / 16):
            raise UsageError(f"r must lie in (0, 1/16], got {r}")
        if not (math.isfinite(a) and a >= 1):
            raise UsageError(f"a must be >= 1, got {a}")
        if isinstance(alphabet, RingAxis):
            if a < 2:
                raise UsageError(f"RingAxis needs a >= 2, got {a}")
        elif a > 3:
            raise UsageError(f"a must lie in [1, 3] for planar alphabets, got {a}")
        if self.separation_constant <= 0:
            raise UsageError(f"(a, r) = ({a}, {r}) gives no positive separation constant")
        if int(self.max_generation) != self.max_generation or self.max_generation < 1:
            raise UsageError("max_generation must be a positive integer")

    @property
    def size(self) -> int:
        return self.alphabet.size

    @property
    def delta(self) -> float:
        """Dimension ln|alphabet| / (-ln r)."""
        return math.log(self.size) / -math.log(self.r)

    @property
    def separation_constant(self) -> float:
        """Lower bi-Lipschitz constant; equals 1 - ar/(1-r) on the line."""
        return self.alphabet.min_half_gap - self.a * self.r / (1 - self.r)

    @property
    def spread_constant(self) -> float:
        """Upper bi-Lipschitz constant; equals a/(1-r) on the line."""
        return self.a * self.alphabet.max_half_gap + self.a * self.r / (1 - self.r)

    def tail_radius(self, m: int) -> float:
        """Bound on the distance from a generation-m point to any of its descendants."""
        return 0.5 * self.a * self.r**m / (1 - self.r)

    def to_dict(self) -> dict:
        return {
            "alphabet": str(self.alphabet),
            "r": repr(self.r),
            "a": repr(self.a),
            "max_generation": int(self.max_generation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(
            alphabet=Alphabet.parse(d["alphabet"]),
            r=float(d["r"]),
            a=float(d["a"]),
            max_generation=int(d.get("max_generation", 12)),
        )


# ---------------------------------------------------------------------------
# words
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Word:
    """A finite word, stored as letter indices into the alphabet."""

    letters: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "letters", tuple(int(x) for x in self.letters))

    @property
    def generation(self) -> int:
        return len(self.letters)

    @classmethod
    def from_signs(cls, signs: Sequence[int]) -> "Word":
        """Build a word over {-1, +1} from its signs."""
        out = []
        for s in signs:
            if s not in (-1, 1):
                raise UsageError(f"binary letters must be -1 or +1, got {s}")
            out.append(0 if s < 0 else 1)
        return cls(tuple(out))

    @classmethod
    def from_index(cls, index: int, generation: int, size: int = 2) -> "Word":
        digits = []
        for _ in range(generation):
            index, d = divmod(index, size)
            digits.append(d)
        if index:
            raise UsageError("cell index out of range for this generation")
        return cls(tuple(reversed(digits)))

    def index(self, size: int = 2) -> int:
        """Position of the word in lexicographic order."""
        i = 0
        for d in self.letters:
            if not 0 <= d < size:
                raise UsageError(f"letter {d} outside alphabet of size {size}")
            i = i * size + d
        return i

    def prefix(self, k: int) -> "Word":
        return Word(self.letters[:k])

    def parent(self) -> "Word":
        if not self.letters:
            raise UsageError("the root word has no parent")
        return Word(self.letters[:-1])

    def children(self, size: int = 2) -> list:
        return [Word(self.letters + (d,)) for d in range(size)]


def first_disagreement(w1: Word, w2: Word) -> int:
    """Smallest m with w1[m] != w2[m] (1-based); 0 for equal words."""
    if w1.generation != w2.generation:
        raise UsageError(
            f"words of different generations ({w1.generation} vs {w2.generation})"
        )
    for m, (x, y) in enumerate(zip(w1.letters, w2.letters), start=1):
        if x != y:
            return m
    return 0


def word_distance(w1: Word, w2: Word, r: float) -> float:
    """Ultrametric r**(m-1), m the first disagreement index; 0 if equal."""
    m = first_disagreement(w1, w2)
    return 0.0 if m == 0 else float(r) ** (m - 1)


def cell_separation_bounds(w1: Word, w2: Word, spec: GeneratorSpec) -> tuple:
    """Bi-Lipschitz bracket for |f(w1) - f(w2)| (and all descendants)."""
    m = first_disagreement(w1, w2)
    if m == 0:
        raise UsageError("separation bounds need two distinct words")
    scale = spec.r ** (m - 1)
    return spec.separation_constant * scale, spec.spread_constant * scale


# ---------------------------------------------------------------------------
# spacing parameters
# ---------------------------------------------------------------------------


class ParamTree:
    """Spacing coefficients a_k(eps), one per cell of generations 1..depth-1.

    ``values[k - 1]`` holds the generation-k coefficients in lexicographic
    cell order.  The root coefficient a_0 is always 1 and is not stored.
    """

    def __init__(self, spec: GeneratorSpec, values: Sequence = ()):
        self.spec = spec
        N = spec.size
        arrays = []
        for k, v in enumerate(values, start=1):
            arr = np.array(v, dtype=np.float64)
            if arr.shape != (N**k,):
                raise UsageError(
                    f"generation {k} needs {N**k} coefficients, got shape {arr.shape}"
                )
            arr.setflags(write=False)
            arrays.append(arr)
        self.values = tuple(arrays)

    @property
    def depth(self) -> int:
        """Largest generation n for which K_n can be built."""
        return len(self.values) + 1

    def coefficients(self, k: int) -> np.ndarray:
        if k == 0:
            return np.ones(1)
        if not 1 <= k <= len(self.values):
            raise UsageError(f"no coefficients stored for generation {k}")
        return self.values[k - 1]

    def get(self, word: Word) -> float:
        """The coefficient a_k attached to a word of generation k."""
        return float(self.coefficients(word.generation)[word.index(self.spec.size)])

    def extended(self, new_values) -> "ParamTree":
        return ParamTree(self.spec, list(self.values) + [new_values])

    def truncated(self, n: int) -> "ParamTree":
        """Tree holding exactly what K_n needs."""
        if n > self.depth:
            raise UsageError(f"tree only reaches generation {self.depth}")
        return ParamTree(self.spec, self.values[: max(n - 1, 0)])

    def __eq__(self, other):
        if not isinstance(other, ParamTree):
            return NotImplemented
        return self.spec == other.spec and len(self.values) == len(other.values) and all(
            np.array_equal(x, y) for x, y in zip(self.values, other.values)
        )

    def to_json(self) -> str:
        doc = {
            "spec": self.spec.to_dict(),
            "params": {str(k): [repr(float(x)) for x in v] for k, v in enumerate(self.values, 1)},
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ParamTree":
        doc = json.loads(text)
        spec = GeneratorSpec.from_dict(doc["spec"])
        params = doc.get("params", {})
        values = [[float(x) for x in params[str(k)]] for k in range(1, len(params) + 1)]
        return cls(spec, values)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ParamTree":
        return cls.from_json(Path(path).read_text())


def constant_params(spec: GeneratorSpec, n: int, value: float = 1.0) -> ParamTree:
    """Tree with every coefficient equal to ``value`` (the self-similar control)."""
    N = spec.size
    return ParamTree(spec, [np.full(N**k, float(value)) for k in range(1, n)])


def point_of_word(word: Word, params: ParamTree, spec: GeneratorSpec | None = None):
    """f_n(word) = sum_k (a_{k-1}/2) r^{k-1} eps_k, summed smallest term first."""
    spec = spec or params.spec
    n = word.generation
    if n > params.depth:
        raise UsageError(f"parameters missing for prefixes of a generation-{n} word")
    letters = spec.alphabet.letters()
    total = 0.0
    for k in range(n, 0, -1):
        coef = params.get(word.prefix(k - 1))
        total = (coef / 2) * spec.r ** (k - 1) * letters[word.letters[k - 1]] + total
    return total.item() if hasattr(total, "item") else total


# ---------------------------------------------------------------------------
# levels
# ---------------------------------------------------------------------------


class Level:
    """The finite set K_n with uniform weights N**-n.

    ``offsets[j]`` is the displacement of each point from its generation-j
    ancestor; ``offsets[0]`` are the coordinates.
    """

    def __init__(self, params: ParamTree, generation: int):
        if generation < 0:
            raise UsageError("generation must be >= 0")
        if generation > params.depth:
            raise UsageError(
                f"parameters reach generation {params.depth}, requested {generation}"
            )
        self.params = params.truncated(generation) if generation >= 1 else ParamTree(params.spec)
        self.spec = params.spec
        self.generation = generation
        self.offsets = self._build_offsets()
        self.offsets.setflags(write=False)

    def _build_offsets(self) -> np.ndarray:
        spec, n = self.spec, self.generation
        N = spec.size
        M = N**n
        idx = np.arange(M, dtype=np.int64)
        letters = spec.alphabet.letters()
        out = np.zeros((n + 1, M), dtype=spec.alphabet.dtype)
        acc = np.zeros(M, dtype=spec.alphabet.dtype)
        for k in range(n, 0, -1):
            digit = (idx // N ** (n - k)) % N
            coef = self.params.coefficients(k - 1)[idx // N ** (n - k + 1)]
            acc = (coef / 2) * spec.r ** (k - 1) * letters[digit] + acc
            out[k - 1] = acc
        return out

    @property
    def size(self) -> int:
        return self.offsets.shape[1]

    @property
    def weight(self) -> float:
        return float(self.spec.size) ** (-self.generation)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, self.weight)

    @property
    def coords(self) -> np.ndarray:
        return self.offsets[0]

    @property
    def points(self) -> np.ndarray:
        """Coordinates as complex numbers (line and axis points get imag 0)."""
        return self.coords.astype(np.complex128)

    def word(self, i: int) -> Word:
        return Word.from_index(int(i), self.generation, self.spec.size)

    def index(self, word: Word) -> int:
        if word.generation != self.generation:
            raise UsageError("word generation does not match the level")
        return word.index(self.spec.size)

    def ancestors(self, k: int) -> np.ndarray:
        """Generation-k ancestor index of every point."""
        return np.arange(self.size) // self.spec.size ** (self.generation - k)

    def prefix_lengths(self, i: int) -> np.ndarray:
        """Length of the common prefix of point i with every point."""
        N, n = self.spec.size, self.generation
        idx = np.arange(self.size, dtype=np.int64)
        out = np.zeros(self.size, dtype=np.int64)
        for k in range(1, n + 1):
            p = N ** (n - k)
            out += (idx // p) == (int(i) // p)
        return out

    def differences_from(self, i: int, delta=0.0) -> np.ndarray:
        """Precise values of (x_i + delta) - x_j for every j."""
        j = self.prefix_lengths(i)
        cols = np.arange(self.size)
        return (self.offsets[j, int(i)] + delta) - self.offsets[j, cols]

    def diameter(self) -> float:
        pts = self.points
        if self.size < 2:
            return 0.0
        if not self.spec.alphabet.planar:
            return float(pts.real.max() - pts.real.min())
        from scipy.spatial import ConvexHull, QhullError

        xy = np.column_stack([pts.real, pts.imag])
        try:
            hull = xy[ConvexHull(xy).vertices]
        except QhullError:
            hull = xy
        d = hull[:, None, :] - hull[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        planar = self.spec.alphabet.planar
        w.writerow(["generation", "cell_index", "coord_x"] + (["coord_y"] if planar else []) + ["weight"])
        wt = repr(self.weight)
        for i, z in enumerate(self.coords):
            row = [self.generation, i]
            if planar:
                row += [repr(float(z.real)), repr(float(z.imag))]
            else:
                row += [repr(float(z))]
            w.writerow(row + [wt])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def __repr__(self):
        return f"Level(generation={self.generation}, size={self.size}, alphabet={self.spec.alphabet})"


def root_level(spec: GeneratorSpec) -> Level:
    """K_0 = {0}."""
    return Level(ParamTree(spec), 0)


def expand_level(parent: Level, new_params, spec: GeneratorSpec | None = None) -> Level:
    """Spawn the children of every parent point using coefficients a_{n-1}."""
    spec = spec or parent.spec
    if spec != parent.spec:
        raise UsageError("spec does not match the parent level")
    n = parent.generation
    if n == 0:
        vals = np.asarray(new_params, dtype=np.float64).reshape(-1)
        if vals.shape != (1,) or vals[0] != 1.0:
            raise UsageError("a_0 is fixed to 1")
        return Level(ParamTree(spec), 1)
    vals = np.asarray(new_params, dtype=np.float64).reshape(-1)
    if vals.shape != (parent.size,):
        raise UsageError(f"expected {parent.size} coefficients, got {vals.shape[0]}")
    bad = np.flatnonzero(~((vals >= 1 - PARAM_TOL) & (vals <= spec.a + PARAM_TOL)))
    if bad.size:
        i = int(bad[0])
        raise InfeasibleError(
            f"coefficient {vals[i]!r} for cell {i} at generation {n} outside [1, {spec.a}]",
            word=parent.word(i),
            generation=n,
        )
    vals = np.clip(vals, 1.0, spec.a)
    return Level(parent.params.extended(vals), n + 1)
