"""Dense propagators for full and killed semigroups.

The public evolution operation (:func:`trapkit.chain.evolve`) is the
uniformization series, which is exact but linear in Lambda*t.  Survival
curves, conditioned measures and certification sweeps evaluate the same
semigroups at many widely spread times, so internally they act through a
precomputed spectral form:

* blocks that are symmetrizable by a positive reversing weight vector are
  diagonalized once with a symmetric eigensolver;
* general blocks use a dense eigendecomposition when the eigenvector
  matrix is well conditioned;
* anything else falls back to the matrix exponential (or plain stepping
  in discrete time).

All three routes agree with uniformization well below the tolerances used
anywhere in the package; the property tests pin that agreement.
"""
from __future__ import annotations

import weakref

import numpy as np
import scipy.linalg

from .chain import CONTINUOUS, DISCRETE, FiniteChain, stationary_measure
from .errors import NonIntegerTime

_SYM_TOL = 1e-12
_RECON_TOL = 1e-9


class Propagator:
    """Action of exp(t M) (continuous) or M^t (discrete) on row vectors."""

    def __init__(self, matrix, time_kind: str, reversing_weights=None):
        m = np.array(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("propagator needs a square matrix")
        self.matrix = m
        self.time_kind = time_kind
        self.size = m.shape[0]
        self.mode = "direct"
        self._expm_cache: dict[float, np.ndarray] = {}
        if reversing_weights is not None:
            w = np.asarray(reversing_weights, dtype=np.float64)
            if w.shape == (self.size,) and np.all(w > 0.0):
                d = np.sqrt(w)
                sym = m * d[:, None] / d[None, :]
                scale = max(1.0, float(np.abs(sym).max()))
                if float(np.abs(sym - sym.T).max()) <= _SYM_TOL * scale:
                    lam, u = scipy.linalg.eigh((sym + sym.T) / 2.0)
                    self.mode = "sym"
                    self._lam = lam
                    self._u = u
                    self._d = d
                    return
        try:
            lam, vec = scipy.linalg.eig(m)
            vec_inv = scipy.linalg.inv(vec)
        except scipy.linalg.LinAlgError:
            return
        recon = (vec * lam[None, :]) @ vec_inv
        scale = max(1.0, float(np.abs(m).max()))
        if float(np.abs(recon - m).max()) <= _RECON_TOL * scale:
            self.mode = "eig"
            self._clam = lam
            self._v = vec
            self._v_inv = vec_inv

    def _steps(self, t: float) -> int:
        steps = int(round(t))
        if abs(t - steps) > 1e-9 or steps < 0:
            raise NonIntegerTime(f"discrete propagation needs integer times, got {t!r}")
        return steps

    def act(self, v, t: float) -> np.ndarray:
        """Return v exp(t M) (or v M^t); accepts a vector or a stack of rows."""
        v = np.asarray(v, dtype=np.float64)
        single = v.ndim == 1
        rows = v[None, :] if single else v
        if self.mode == "sym":
            if self.time_kind == CONTINUOUS:
                scaling = np.exp(self._lam * t)
            else:
                scaling = np.power(self._lam, self._steps(t))
            out = (((rows / self._d[None, :]) @ self._u) * scaling[None, :]) @ self._u.T
            out = out * self._d[None, :]
        elif self.mode == "eig":
            if self.time_kind == CONTINUOUS:
                scaling = np.exp(self._clam * t)
            else:
                scaling = self._clam ** self._steps(t)
            out = (((rows.astype(complex) @ self._v) * scaling[None, :]) @ self._v_inv).real
        else:
            if self.time_kind == CONTINUOUS:
                key = float(t)
                if key not in self._expm_cache:
                    if len(self._expm_cache) > 256:
                        self._expm_cache.clear()
                    self._expm_cache[key] = scipy.linalg.expm(self.matrix * t)
                out = rows @ self._expm_cache[key]
            else:
                out = rows.copy()
                for _ in range(self._steps(t)):
                    out = out @ self.matrix
        return out[0] if single else out

    def survival(self, v, t: float) -> np.ndarray | float:
        """Total surviving mass of v under the (sub)stochastic action."""
        out = self.act(v, t)
        return float(out.sum()) if out.ndim == 1 else out.sum(axis=1)


_chain_cache: "weakref.WeakKeyDictionary[FiniteChain, dict]" = weakref.WeakKeyDictionary()


def _cache(chain: FiniteChain) -> dict:
    store = _chain_cache.get(chain)
    if store is None:
        store = {}
        _chain_cache[chain] = store
    return store


def cached_stationary(chain: FiniteChain) -> np.ndarray:
    store = _cache(chain)
    if "pi" not in store:
        store["pi"] = stationary_measure(chain).weights
    return store["pi"]


def is_reversible(chain: FiniteChain) -> bool:
    """Detailed balance with respect to the stationary measure, within 1e-12."""
    store = _cache(chain)
    if "reversible" not in store:
        pi = cached_stationary(chain)
        flow = pi[:, None] * chain.matrix
        scale = max(1.0, float(np.abs(flow).max()))
        store["reversible"] = bool(
            float(np.abs(flow - flow.T).max()) <= _SYM_TOL * scale
        )
    return store["reversible"]


def _block_weights(chain: FiniteChain, idx: np.ndarray) -> np.ndarray | None:
    if is_reversible(chain):
        return cached_stationary(chain)[idx]
    return None


def block_propagator(chain: FiniteChain, kept) -> Propagator:
    """Propagator of the chain restricted (killed) on the kept index set.

    The full chain is the special case kept = all states.  Instances are
    cached per chain, keyed by the kept set.
    """
    kept = tuple(sorted(set(int(i) for i in kept)))
    store = _cache(chain).setdefault("blocks", {})
    if kept not in store:
        idx = np.asarray(kept, dtype=np.intp)
        block = chain.matrix[np.ix_(idx, idx)]
        store[kept] = Propagator(block, chain.time_kind, _block_weights(chain, idx))
    return store[kept]


def full_propagator(chain: FiniteChain) -> Propagator:
    return block_propagator(chain, range(chain.state_count))


def visit_propagator(chain: FiniteChain, trap, marked) -> "VisitSplit":
    """Flagged propagator tracking visits to ``marked`` inside ``trap``.

    Cached per chain, keyed by the pair of index sets.
    """
    trap = tuple(sorted(set(int(i) for i in trap)))
    marked = tuple(sorted(set(int(i) for i in marked)))
    store = _cache(chain).setdefault("visits", {})
    key = (trap, marked)
    if key not in store:
        store[key] = VisitSplit(chain, trap, marked)
    return store[key]


class VisitSplit:
    """Killed evolution on a trap, split by whether a marked set was visited.

    The state space is augmented with a visited bit: the unvisited copy
    lives on trap minus marked, and any transition into the marked set
    moves mass to the visited copy, which then evolves under the plain
    killed block.  Mass reaching the complement of the trap is killed in
    both copies, so the visited-copy mass at time s equals
    P(tau_marked <= s, tau_goal > s) exactly.
    """

    def __init__(self, chain: FiniteChain, trap: tuple[int, ...], marked: tuple[int, ...]):
        if not set(marked) <= set(trap):
            raise ValueError("marked set must lie inside the trap")
        self.trap = trap
        self.marked = marked
        self.unmarked = tuple(i for i in trap if i not in set(marked))
        t_idx = np.asarray(trap, dtype=np.intp)
        u_idx = np.asarray(self.unmarked, dtype=np.intp)
        n_u, n_t = len(u_idx), len(t_idx)
        aug = np.zeros((n_u + n_t, n_u + n_t))
        aug[:n_u, :n_u] = chain.matrix[np.ix_(u_idx, u_idx)]
        m_idx = np.asarray(self.marked, dtype=np.intp)
        m_pos = np.asarray([trap.index(i) for i in self.marked], dtype=np.intp)
        if len(m_idx):
            aug[:n_u, n_u + m_pos] = chain.matrix[np.ix_(u_idx, m_idx)]
        aug[n_u:, n_u:] = chain.matrix[np.ix_(t_idx, t_idx)]
        self._n_u = n_u
        self._n_t = n_t
        self._marked_pos = {int(p) for p in m_pos}
        self._u_lookup = {
            int(trap.index(i)): k for k, i in enumerate(self.unmarked)
        }
        self._prop = Propagator(aug, chain.time_kind)
        self._killed = block_propagator(chain, trap)

    def start(self, positions_in_trap) -> np.ndarray:
        """Augmented unit rows for the given start positions (trap-indexed).

        Starts already inside the marked set begin in the visited copy.
        """
        positions = [int(p) for p in positions_in_trap]
        rows = np.zeros((len(positions), self._n_u + self._n_t))
        for row, pos in zip(rows, positions):
            if pos in self._marked_pos:
                row[self._n_u + pos] = 1.0
            else:
                row[self._u_lookup[pos]] = 1.0
        return rows

    def visited_mass(self, rows: np.ndarray, window: float) -> np.ndarray:
        """Evolve augmented rows by ``window``; return the visited-copy part.

        The result is trap-indexed: entry (start, y) is the defective mass
        P(X_window = y, tau_marked <= window, tau_goal > window).
        """
        evolved = self._prop.act(rows, window)
        return np.clip(evolved[:, self._n_u:], 0.0, None)

    def continue_killed(self, trap_rows: np.ndarray, t: float) -> np.ndarray:
        """Evolve trap-indexed rows under the plain killed block."""
        return self._killed.act(trap_rows, t)
