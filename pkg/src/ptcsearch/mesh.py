"""Structured complex-linear forward model with analytic reverse-mode grads.

The circuit is a fixed stack of layer types (phase column, coupler column,
crossing/permutation layer) composed into blocks, blocks into unitaries, and
unitaries into SVD-style weight tiles. Each layer has a hand-written
vector-Jacobian product; the engine walks the structure instead of using a
generic autodiff graph.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, DomainError
from .permutation import (
    init_smoothed_identity,
    is_permutation,
    perm_array_to_matrix,
    perm_matrix_to_array,
    reparametrize,
    reparametrize_backward,
)
from .topology import Topology, coupler_offset, n_coupler_slots

ROOT2_OVER_2 = math.sqrt(2.0) / 2.0
STE_SCALE = (2.0 - math.sqrt(2.0)) / 4.0


# ---------------------------------------------------------------------------
# coupler binarization (straight-through estimator)

def quantize_coupler(t_latent):
    """Binarize a latent to sqrt(2)/2 (coupler placed) or 1 (pass-through)."""
    t = np.asarray(t_latent, dtype=float)
    return np.where(t < 0.0, ROOT2_OVER_2, 1.0)


def quantize_coupler_grad(g_tq):
    """Straight-through backward: scale by (2-sqrt(2))/4 and clip to [-1, 1]."""
    return np.clip(np.asarray(g_tq, dtype=float) * STE_SCALE, -1.0, 1.0)


# ---------------------------------------------------------------------------
# single layers acting on complex state vectors

def ps_apply(phi, x):
    """Phase-shifter column: y_i = exp(-j phi_i) x_i."""
    phi = np.asarray(phi, dtype=float)
    x = np.asarray(x, dtype=complex)
    if phi.shape[0] != x.shape[0]:
        raise DomainError("phase vector and input dimension mismatch")
    return np.exp(-1j * phi) * x


def coupler_matrix(t_values, k: int, offset: int) -> np.ndarray:
    """Block-diagonal transfer of a coupler column starting at waveguide offset."""
    t_values = np.asarray(t_values, dtype=float)
    slots = n_coupler_slots(k, offset)
    if t_values.shape[0] != slots:
        raise DomainError("transmission vector length does not match K and offset")
    mat = np.eye(k, dtype=complex)
    cross = np.sqrt(np.maximum(1.0 - t_values ** 2, 0.0))
    for q in range(slots):
        a = offset + 2 * q
        mat[a, a] = t_values[q]
        mat[a + 1, a + 1] = t_values[q]
        mat[a, a + 1] = 1j * cross[q]
        mat[a + 1, a] = 1j * cross[q]
    return mat


def dc_apply(t, offset, x, binarize=False):
    """Coupler column acting on a state vector; untouched channels pass through."""
    x = np.asarray(x, dtype=complex)
    t_eff = quantize_coupler(t) if binarize else np.asarray(t, dtype=float)
    return coupler_matrix(t_eff, x.shape[0], offset) @ x


def cr_apply(p_tilde, x):
    """Crossing layer: y = P~ x with the current relaxed or legal matrix."""
    p_tilde = np.asarray(p_tilde, dtype=float)
    x = np.asarray(x, dtype=complex)
    if p_tilde.shape[1] != x.shape[0]:
        raise DomainError("permutation matrix and input dimension mismatch")
    return p_tilde @ x


def normalize_unitary(u, mode: str):
    """Scale each row ('row') or column ('column') to unit l2 norm."""
    u = np.asarray(u, dtype=complex)
    axis = 1 if mode == "row" else 0
    if mode not in ("row", "column"):
        raise DomainError("mode must be 'row' or 'column'")
    norms = np.sqrt(np.sum(np.abs(u) ** 2, axis=axis, keepdims=True))
    if np.any(norms < 1e-150):
        raise DegeneracyError(f"zero {mode} norm in unitary normalization")
    return u / norms


def _normalize_backward(u, norms, g_y, axis):
    # y = u / norms; norms real, broadcast along `axis`
    s = np.sum((np.conj(g_y) * u).real, axis=axis, keepdims=True)
    return g_y / norms - (s / norms ** 3) * u


# ---------------------------------------------------------------------------
# tiles and partitioned weights

def tile_forward(u, sigma, v, x):
    """One weight tile: y = U diag(sigma) V x."""
    u = np.asarray(u, dtype=complex)
    v = np.asarray(v, dtype=complex)
    sigma = np.asarray(sigma, dtype=float)
    x = np.asarray(x, dtype=complex)
    return u @ (sigma * (v @ x))


@dataclass
class WeightPartition:
    """Tiling of an M x N weight into K x K tiles, each (U, sigma, V)."""

    m_rows: int
    n_cols: int
    k: int
    tiles: list  # nested [p][q] -> (U, sigma, V)

    @property
    def p_tiles(self) -> int:
        return (self.m_rows + self.k - 1) // self.k

    @property
    def q_tiles(self) -> int:
        return (self.n_cols + self.k - 1) // self.k

    def assemble(self) -> np.ndarray:
        """Dense M x N matrix equal to the partitioned operator."""
        k = self.k
        full = np.zeros((self.p_tiles * k, self.q_tiles * k), dtype=complex)
        for p in range(self.p_tiles):
            for q in range(self.q_tiles):
                u, sigma, v = self.tiles[p][q]
                full[p * k:(p + 1) * k, q * k:(q + 1) * k] = u @ np.diag(sigma) @ v
        return full[: self.m_rows, : self.n_cols]


def partition_matmul(wp: WeightPartition, x):
    """y = W x for a partitioned weight, zero-padding x and truncating y."""
    x = np.asarray(x, dtype=complex)
    if x.shape[0] != wp.n_cols:
        raise DomainError("input length does not match the partition's N")
    k = wp.k
    x_pad = np.zeros(wp.q_tiles * k, dtype=complex)
    x_pad[: wp.n_cols] = x
    y_pad = np.zeros(wp.p_tiles * k, dtype=complex)
    for p in range(wp.p_tiles):
        acc = np.zeros(k, dtype=complex)
        for q in range(wp.q_tiles):
            u, sigma, v = wp.tiles[p][q]
            acc += tile_forward(u, sigma, v, x_pad[q * k:(q + 1) * k])
        y_pad[p * k:(p + 1) * k] = acc
    return y_pad[: wp.m_rows]


# ---------------------------------------------------------------------------
# block chains

def block_transfer(phi, t_eff, p_tilde, offset):
    """Transfer matrix of one block: P~ @ T @ R(phi)."""
    k = len(phi)
    r = np.exp(-1j * np.asarray(phi, dtype=float))
    t_mat = coupler_matrix(t_eff, k, offset)
    return np.asarray(p_tilde) @ (t_mat * r[None, :])


def build_unitary(phis, ts, perms, offsets, gates=None, binarize=True):
    """Compose blocks into a K x K matrix, each blended with identity by its
    gate weights (m_skip, m_keep). gates=None means every block is certain."""
    if len(phis) == 0:
        raise DomainError("block list must be nonempty")
    k = len(phis[0])
    u = np.eye(k, dtype=complex)
    for b in range(len(phis)):
        t_eff = quantize_coupler(ts[b]) if binarize else np.asarray(ts[b], dtype=float)
        a = block_transfer(phis[b], t_eff, perms[b], offsets[b])
        m1, m2 = (0.0, 1.0) if gates is None else gates[b]
        u = (m1 * np.eye(k, dtype=complex) + m2 * a) @ u
    return u


# ---------------------------------------------------------------------------
# the trainable SuperMesh

@dataclass
class MeshGrads:
    """Gradients matching SuperMesh's trainable arrays."""

    phi: np.ndarray       # (P, Q, B, K)
    sigma: np.ndarray     # (P, Q, K)
    t_latent: list        # per block, (slots,)
    p_raw: np.ndarray     # (B, K, K)
    m: np.ndarray         # (B, 2) cotangents on the sampled gate weights


class SuperMesh:
    """Over-parameterized circuit: per-block phases, coupler latents, relaxed
    permutations, gate logits, and per-tile diagonal scales."""

    def __init__(self, k, n_u, n_v, m_rows=None, n_cols=None,
                 n_frozen_u=0, n_frozen_v=0, rng=None, epsilon=0.05):
        if rng is None:
            rng = np.random.default_rng(0)
        self.k = k
        self.n_u = n_u
        self.n_v = n_v
        self.n_blocks = n_u + n_v
        self.m_rows = m_rows if m_rows is not None else k
        self.n_cols = n_cols if n_cols is not None else k
        self.p_tiles = (self.m_rows + k - 1) // k
        self.q_tiles = (self.n_cols + k - 1) // k
        self.epsilon = epsilon

        b = self.n_blocks
        self.offsets = [coupler_offset(self.local_index(i)) for i in range(b)]
        self.phi = rng.uniform(-np.pi, np.pi, (self.p_tiles, self.q_tiles, b, k))
        self.sigma = rng.uniform(-1.0, 1.0, (self.p_tiles, self.q_tiles, k))
        self.t_latent = [rng.uniform(-1.0, 1.0, n_coupler_slots(k, o))
                         for o in self.offsets]
        self.p_raw = np.stack([init_smoothed_identity(k) for _ in range(b)])
        self.theta = np.zeros((b, 2))
        self.frozen = np.zeros(b, dtype=bool)
        # the last frozen blocks of each unitary are always kept
        for i in range(n_u - n_frozen_u, n_u):
            self.frozen[i] = True
        for i in range(b - n_frozen_v, b):
            self.frozen[i] = True
        self.perms_trainable = True
        self.couplers_trainable = True

    # -- structure helpers --------------------------------------------------

    def local_index(self, b: int) -> int:
        return b if b < self.n_u else b - self.n_u

    def u_block_ids(self):
        return list(range(self.n_u))

    def v_block_ids(self):
        return list(range(self.n_u, self.n_blocks))

    @classmethod
    def from_topology(cls, topology: Topology, m_rows=None, n_cols=None, rng=None):
        """Fixed-structure mesh: all gates certain, couplers and permutations
        pinned; only phases and sigma remain trainable."""
        mesh = cls(topology.k, len(topology.blocks_u), len(topology.blocks_v),
                   m_rows=m_rows, n_cols=n_cols, rng=rng)
        mesh.frozen[:] = True
        mesh.perms_trainable = False
        mesh.couplers_trainable = False
        for b, blk in enumerate(topology.blocks):
            mesh.offsets[b] = blk.offset
            mesh.t_latent[b] = np.where(blk.coupler_mask, -1.0, 1.0)
            mesh.p_raw[b] = perm_array_to_matrix(blk.perm)
            if blk.phases is not None:
                mesh.phi[:, :, b, :] = blk.phases
        return mesh

    # -- views consumed by footprint accounting -----------------------------

    def keep_probs(self) -> np.ndarray:
        """Noiseless block selection probabilities softmax(theta)[:, keep]."""
        z = self.theta - self.theta.max(axis=1, keepdims=True)
        e = np.exp(z)
        probs = e[:, 1] / e.sum(axis=1)
        probs[self.frozen] = 1.0
        return probs

    def keep_prob_theta_grad(self, g_prob: np.ndarray) -> np.ndarray:
        """Chain a cotangent on keep_probs back to theta."""
        probs = self.keep_probs()
        g_theta = np.zeros_like(self.theta)
        p = probs
        g_theta[:, 1] = g_prob * p * (1.0 - p)
        g_theta[:, 0] = -g_prob * p * (1.0 - p)
        g_theta[self.frozen] = 0.0
        return g_theta

    def coupler_tq(self):
        return [quantize_coupler(t) for t in self.t_latent]

    def perm_tildes(self):
        return [reparametrize(self.p_raw[b], self.epsilon)[0]
                for b in range(self.n_blocks)]

    def hard_perm_estimate(self, b: int) -> np.ndarray:
        """Deterministic legal-permutation estimate of block b's crossing layer."""
        pt, _ = reparametrize(self.p_raw[b], self.epsilon)
        hard = np.argmax(pt, axis=1)
        if len(set(hard.tolist())) == self.k:
            return hard
        # greedy assignment: most confident rows claim their column first
        order = np.argsort(-pt.max(axis=1))
        taken = np.zeros(self.k, dtype=bool)
        perm = np.zeros(self.k, dtype=int)
        for i in order:
            j = int(np.argmax(np.where(taken, -np.inf, pt[i])))
            perm[i] = j
            taken[j] = True
        return perm

    def discrete_block_counts(self):
        """Per-block (n_dc, n_cr) using binarized couplers and hard perms."""
        from .pdk import count_crossings
        counts = []
        for b in range(self.n_blocks):
            n_dc = int(np.sum(self.t_latent[b] < 0.0))
            n_cr = count_crossings(self.hard_perm_estimate(b))
            counts.append((n_dc, n_cr))
        return counts

    # -- forward / backward -------------------------------------------------

    def forward(self, m_weights, binarize=True, phi_noise=None):
        """Assemble the full complex weight matrix.

        m_weights: (B, 2) gate weights (sampled or certain).
        phi_noise: optional array broadcastable to phi, added to the phases.
        Returns (W, cache).
        """
        k = self.k
        eye = np.eye(k, dtype=complex)
        phi_eff = self.phi if phi_noise is None else self.phi + phi_noise

        shared = []
        for b in range(self.n_blocks):
            t_eff = (quantize_coupler(self.t_latent[b]) if binarize
                     else np.asarray(self.t_latent[b], dtype=float))
            p_tilde, p_cache = reparametrize(self.p_raw[b], self.epsilon)
            t_mat = coupler_matrix(t_eff, k, self.offsets[b])
            shared.append({"t_eff": t_eff, "t_mat": t_mat,
                           "p_tilde": p_tilde, "p_cache": p_cache})

        tiles = []
        w_pad = np.zeros((self.p_tiles * k, self.q_tiles * k), dtype=complex)
        for p in range(self.p_tiles):
            row = []
            for q in range(self.q_tiles):
                chains = {}
                for name, ids in (("u", self.u_block_ids()),
                                  ("v", self.v_block_ids())):
                    mats, amats, rs, partials = [], [], [], [eye]
                    cum = eye
                    for b in ids:
                        r = np.exp(-1j * phi_eff[p, q, b])
                        a = shared[b]["p_tilde"] @ (shared[b]["t_mat"] * r[None, :])
                        m1, m2 = m_weights[b]
                        mat = m1 * eye + m2 * a
                        cum = mat @ cum
                        mats.append(mat)
                        amats.append(a)
                        rs.append(r)
                        partials.append(cum)
                    chains[name] = {"mats": mats, "amats": amats, "rs": rs,
                                    "partials": partials, "raw": cum}
                u_norms = np.sqrt(np.sum(np.abs(chains["u"]["raw"]) ** 2,
                                         axis=1, keepdims=True))
                v_norms = np.sqrt(np.sum(np.abs(chains["v"]["raw"]) ** 2,
                                         axis=0, keepdims=True))
                if np.any(u_norms < 1e-150) or np.any(v_norms < 1e-150):
                    raise DegeneracyError("zero norm while normalizing a unitary")
                u_n = chains["u"]["raw"] / u_norms
                v_n = chains["v"]["raw"] / v_norms
                sig = self.sigma[p, q]
                w_tile = u_n @ (sig[:, None] * v_n)
                w_pad[p * k:(p + 1) * k, q * k:(q + 1) * k] = w_tile
                row.append({"chains": chains, "u_norms": u_norms,
                            "v_norms": v_norms, "u_n": u_n, "v_n": v_n})
            tiles.append(row)
        cache = {"shared": shared, "tiles": tiles, "m": np.asarray(m_weights),
                 "binarize": binarize}
        return w_pad[: self.m_rows, : self.n_cols], cache

    def backward(self, cache, g_w, extra_ptilde=None, extra_tq=None):
        """Reverse pass. g_w is the cotangent of the truncated weight matrix;
        extra_ptilde / extra_tq are per-block cotangents injected on the
        relaxed permutations and binarized transmissions (ALM, proxy)."""
        k = self.k
        shared = cache["shared"]
        m_weights = cache["m"]
        g_w_pad = np.zeros((self.p_tiles * k, self.q_tiles * k), dtype=complex)
        g_w_pad[: self.m_rows, : self.n_cols] = g_w

        g_phi = np.zeros_like(self.phi)
        g_sigma = np.zeros_like(self.sigma)
        g_m = np.zeros((self.n_blocks, 2))
        g_t_mat = [np.zeros((k, k), dtype=complex) for _ in range(self.n_blocks)]
        g_ptilde = [np.zeros((k, k)) for _ in range(self.n_blocks)]

        for p in range(self.p_tiles):
            for q in range(self.q_tiles):
                tile = cache["tiles"][p][q]
                g_wt = g_w_pad[p * k:(p + 1) * k, q * k:(q + 1) * k]
                u_n, v_n = tile["u_n"], tile["v_n"]
                sig = self.sigma[p, q]
                dv = sig[:, None] * v_n
                g_un = g_wt @ dv.conj().T
                g_dv = u_n.conj().T @ g_wt
                g_sigma[p, q] += np.sum((g_dv * v_n.conj()).real, axis=1)
                g_vn = sig[:, None] * g_dv
                g_u = _normalize_backward(tile["chains"]["u"]["raw"],
                                          tile["u_norms"], g_un, axis=1)
                g_v = _normalize_backward(tile["chains"]["v"]["raw"],
                                          tile["v_norms"], g_vn, axis=0)
                for name, ids, g_chain in (("u", self.u_block_ids(), g_u),
                                           ("v", self.v_block_ids(), g_v)):
                    chain = tile["chains"][name]
                    lmat = np.eye(k, dtype=complex)
                    for pos in range(len(ids) - 1, -1, -1):
                        b = ids[pos]
                        rprod = chain["partials"][pos]
                        g_mat = lmat.conj().T @ g_chain @ rprod.conj().T
                        a = chain["amats"][pos]
                        g_m[b, 0] += np.trace(g_mat).real
                        g_m[b, 1] += np.vdot(g_mat, a).real
                        g_a = m_weights[b][1] * g_mat
                        g_ptilde[b] += (g_a @ (shared[b]["t_mat"]
                                        * chain["rs"][pos][None, :]).conj().T).real
                        g_tr = shared[b]["p_tilde"].T @ g_a
                        g_t_mat[b] += g_tr * chain["rs"][pos].conj()[None, :]
                        g_r = np.sum(shared[b]["t_mat"].conj() * g_tr, axis=0)
                        g_phi[p, q, b] = (g_r.conj()
                                          * (-1j * chain["rs"][pos])).real
                        lmat = lmat @ chain["mats"][pos]

        # collapse the coupler-matrix cotangents onto the per-slot transmissions
        g_t_latent = []
        for b in range(self.n_blocks):
            t_eff = shared[b]["t_eff"]
            offset = self.offsets[b]
            g_tq = np.zeros_like(t_eff)
            cross = np.sqrt(np.maximum(1.0 - t_eff ** 2, 0.0))
            dcross = -t_eff / np.maximum(cross, 1e-12)
            gm = g_t_mat[b]
            for s in range(t_eff.shape[0]):
                a = offset + 2 * s
                g_tq[s] = (gm[a, a].real + gm[a + 1, a + 1].real
                           + dcross[s] * (gm[a, a + 1].imag + gm[a + 1, a].imag))
            if extra_tq is not None:
                g_tq = g_tq + extra_tq[b]
            if cache["binarize"]:
                g_t_latent.append(quantize_coupler_grad(g_tq))
            else:
                g_t_latent.append(g_tq)

        g_p_raw = np.zeros_like(self.p_raw)
        for b in range(self.n_blocks):
            total = g_ptilde[b]
            if extra_ptilde is not None:
                total = total + extra_ptilde[b]
            g_p_raw[b] = reparametrize_backward(shared[b]["p_cache"], total)

        return MeshGrads(phi=g_phi, sigma=g_sigma, t_latent=g_t_latent,
                         p_raw=g_p_raw, m=g_m)

    # -- export --------------------------------------------------------------

    def weight_partition(self, m_weights=None, binarize=True) -> WeightPartition:
        """Snapshot the current mesh as explicit per-tile (U, sigma, V)."""
        if m_weights is None:
            m_weights = certainty_gates(self.n_blocks)
        tiles = []
        for p in range(self.p_tiles):
            row = []
            for q in range(self.q_tiles):
                u = self._chain_matrix(self.u_block_ids(), p, q, m_weights, binarize)
                v = self._chain_matrix(self.v_block_ids(), p, q, m_weights, binarize)
                row.append((normalize_unitary(u, "row"), self.sigma[p, q].copy(),
                            normalize_unitary(v, "column")))
            tiles.append(row)
        return WeightPartition(self.m_rows, self.n_cols, self.k, tiles)

    def _chain_matrix(self, ids, p, q, m_weights, binarize):
        phis = [self.phi[p, q, b] for b in ids]
        ts = [self.t_latent[b] for b in ids]
        perms = [reparametrize(self.p_raw[b], self.epsilon)[0] for b in ids]
        offsets = [self.offsets[b] for b in ids]
        gates = [m_weights[b] for b in ids]
        return build_unitary(phis, ts, perms, offsets, gates, binarize=binarize)


def certainty_gates(n_blocks: int) -> np.ndarray:
    """Gate weights with every block kept deterministically."""
    m = np.zeros((n_blocks, 2))
    m[:, 1] = 1.0
    return m
