"""High-level morphology parameterization: psi_c -> cage handles -> meshes.

Components are chained along +x with coincident connection rectangles;
merging unifies the shared handles so connected components deform together.
The high-level map places every (merged) handle from a small parameter
vector: per-segment length scales, mid-section width/height scales, the
knuckle's axial expansion, and per-joint (or shared) axial expansions, plus
mount separation and base scales for multi-finger designs.  The map is
affine in the parameters, so its Jacobian is a constant matrix.
"""

from dataclasses import dataclass, field

import numpy as np

from ..cage import DeformJacobian, deform, triangle_areas
from ..errors import (
    ConstraintViolation,
    DegenerateCage,
    DimensionMismatch,
    IndexOutOfRange,
    LayoutMismatch,
    OutOfBounds,
)
from .components import (
    CONN_H,
    CONN_W,
    DEFORMATION_CLASS,
    NOMINAL_LENGTH,
    PIN_AXIS,
    ComponentKind,
    component_database,
)
from .grammar import fixed_finger_graph

MERGE_TOL = 1e-9
MIN_TRIANGLE_AREA = 1e-12


def single_finger_graph(n_segments=3):
    """Base-Knuckle-(Joint-Phalanx)^(n-1)-Joint-Tip: n segments, n+1 pins."""
    return fixed_finger_graph(n_segments, n_fingers=1)


def two_finger_graph(n_segments=2, spacing=0.032):
    return fixed_finger_graph(n_segments, n_fingers=2, spacing=spacing)


# ---------------------------------------------------------------------------
# rest placement and handle merging


def rest_placements(graph, db):
    """Per-node rest translation (chain x plus finger y offset)."""
    placements = []
    cursors = {}
    for node in graph.nodes:
        if node.parent < 0:
            cursors[node.finger] = 0.0
        x0 = cursors[node.finger]
        placements.append(np.array([x0, graph.mount_offsets[node.finger], 0.0]))
        cursors[node.finger] = x0 + db[node.kind].length
    return placements


@dataclass
class MergedCage:
    global_handles: np.ndarray          # (G, 3) rest positions
    handle_map: list                    # per node: local handle id -> global id
    merged_groups: list                 # groups (as sorted tuples) that were unified

    @property
    def n_handles(self):
        return self.global_handles.shape[0]


def merge_cages(graph, db):
    """Unify coincident connection handles of adjacent components."""
    placements = rest_placements(graph, db)
    world_handles = [db[n.kind].cage.handles + placements[i][None, :]
                     for i, n in enumerate(graph.nodes)]

    # verify identical connection layouts edge by edge
    for ci, node in enumerate(graph.nodes):
        if node.parent < 0:
            continue
        pi = node.parent
        parent_asset = db[graph.nodes[pi].kind]
        child_asset = db[node.kind]
        p_ids = parent_asset.connection_handles("distal")
        c_ids = child_asset.connection_handles("proximal")
        p_pos = world_handles[pi][p_ids]
        c_pos = world_handles[ci][c_ids]
        if len(p_ids) != len(c_ids):
            raise LayoutMismatch(f"edge {pi}->{ci}: handle counts differ")
        for pos in p_pos:
            if np.min(np.linalg.norm(c_pos - pos[None, :], axis=1)) > MERGE_TOL:
                raise LayoutMismatch(
                    f"edge {pi}->{ci}: connection layouts differ beyond {MERGE_TOL}")

    key_to_global = {}
    global_pos = []
    handle_map = []
    groups = {}
    for ci, pos_arr in enumerate(world_handles):
        local = []
        for h in pos_arr:
            key = tuple(np.round(h / MERGE_TOL / 8.0).astype(np.int64))
            gid = key_to_global.get(key)
            if gid is None:
                gid = len(global_pos)
                global_pos.append(h.copy())
                key_to_global[key] = gid
            else:
                groups.setdefault(gid, set())
            local.append(gid)
            groups.setdefault(gid, set()).add((ci, len(local) - 1))
        handle_map.append(np.asarray(local, dtype=int))
    merged_groups = [tuple(sorted(v)) for v in groups.values() if len(v) > 1]
    return MergedCage(np.asarray(global_pos), handle_map, merged_groups)


# ---------------------------------------------------------------------------
# psi_c layout and the affine high-level map


@dataclass
class MorphologyParams:
    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)

    def validate(self):
        if np.any(self.values < self.lower - 1e-12) or np.any(self.values > self.upper + 1e-12):
            bad = [self.names[i] for i in range(len(self.names))
                   if not (self.lower[i] - 1e-12 <= self.values[i] <= self.upper[i] + 1e-12)]
            raise OutOfBounds(f"parameters out of bounds: {bad}")

    @property
    def size(self):
        return self.values.size


class HighLevelMap:
    """Affine map psi_h(psi_c) for a chained-finger design."""

    def __init__(self, graph, db, per_joint_scales=True, multi_finger_extras=None):
        self.graph = graph
        self.db = db
        self.merged = merge_cages(graph, db)
        self.per_joint_scales = per_joint_scales
        multi = graph.n_fingers > 1 if multi_finger_extras is None else multi_finger_extras
        self.multi_finger_extras = multi

        names = []
        nominal = []
        lower = []
        upper = []
        if multi:
            names += ["mount_separation", "base_scale_y", "base_scale_z"]
            spacing = graph.mount_offsets[-1] - graph.mount_offsets[0] if graph.n_fingers > 1 else 0.032
            nominal += [spacing, 1.0, 1.0]
            lower += [0.75 * spacing, 0.5, 0.5]
            upper += [2.0 * spacing, 2.0, 2.0]
        self._finger_param_slices = []
        for f in range(graph.n_fingers):
            chain = [graph.nodes[i] for i in graph.finger_chain(f)]
            seg_kinds = [n.kind for n in chain
                         if n.kind in (ComponentKind.PHALANX_SEGMENT, ComponentKind.FINGER_TIP)]
            joints = [n.kind for n in chain if n.kind == ComponentKind.JOINT]
            start = len(names)
            for si, k in enumerate(seg_kinds):
                names.append(f"f{f}_len_{si}")
                nominal.append(1.0)
                lower.append(0.5)
                upper.append(2.0)
            names += [f"f{f}_mid_width", f"f{f}_mid_height", f"f{f}_knuckle_scale"]
            nominal += [1.0, 1.0, 1.0]
            lower += [0.5, 0.5, 0.5]
            upper += [2.0, 2.0, 2.0]
            n_j = len(joints) if per_joint_scales else 1
            for ji in range(n_j):
                names.append(f"f{f}_joint_scale_{ji}" if per_joint_scales
                             else f"f{f}_joint_scale")
                nominal.append(1.0)
                lower.append(0.5)
                upper.append(2.0)
            self._finger_param_slices.append(slice(start, len(names)))

        self.names = names
        self.nominal = np.asarray(nominal, dtype=float)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)

        # the construction below is affine in psi_c: extract (H0, J) exactly
        h0 = self._construct(self.nominal)
        m = len(names)
        jac = np.zeros((h0.size, m))
        for i in range(m):
            e = self.nominal.copy()
            e[i] += 1.0
            jac[:, i] = (self._construct(e) - h0).ravel()
        self._h0 = h0
        self._jac = jac
        self._jac_at_nominal = h0.ravel() - jac @ self.nominal

    def default_params(self):
        return MorphologyParams(self.nominal.copy(), self.lower.copy(),
                                self.upper.copy(), list(self.names))

    @property
    def n_params(self):
        return len(self.names)

    # -- construction ---------------------------------------------------------

    def _finger_values(self, f, values):
        sl = self._finger_param_slices[f]
        vals = values[sl]
        chain = [self.graph.nodes[i] for i in self.graph.finger_chain(f)]
        n_seg = sum(1 for n in chain
                    if n.kind in (ComponentKind.PHALANX_SEGMENT, ComponentKind.FINGER_TIP))
        joints = [i for i, n in enumerate(chain) if n.kind == ComponentKind.JOINT]
        lens = vals[:n_seg]
        w_mid, h_mid, s_k = vals[n_seg: n_seg + 3]
        j_scales = vals[n_seg + 3:]
        if not self.per_joint_scales:
            j_scales = np.full(len(joints), j_scales[0])
        return lens, w_mid, h_mid, s_k, j_scales

    def _construct(self, values):
        graph = self.graph
        db = self.db
        merged = self.merged
        out = np.zeros_like(merged.global_handles)
        if self.multi_finger_extras:
            sep, base_sy, base_sz = values[0], values[1], values[2]
        else:
            sep, base_sy, base_sz = None, 1.0, 1.0

        for f in range(graph.n_fingers):
            chain_ids = graph.finger_chain(f)
            chain = [graph.nodes[i] for i in chain_ids]
            lens, w_mid, h_mid, s_k, j_scales = self._finger_values(f, values)

            if sep is not None and graph.n_fingers > 1:
                frac = f / (graph.n_fingers - 1) - 0.5
                y_off = frac * sep
            else:
                y_off = graph.mount_offsets[f]

            # interface dimensions between consecutive components
            pair_dims = []
            j_count = 0
            for a, b in zip(chain[:-1], chain[1:]):
                ka, kb = a.kind, b.kind
                if ComponentKind.KNUCKLE in (ka, kb) and ComponentKind.JOINT in (ka, kb):
                    pair_dims.append((CONN_W, CONN_H))
                elif ka == ComponentKind.FINGER_BASE and kb == ComponentKind.KNUCKLE:
                    pair_dims.append((CONN_W, s_k * CONN_H))
                elif ka == ComponentKind.JOINT:
                    pair_dims.append((j_scales[j_count] * CONN_W, CONN_H))
                    j_count += 1
                elif kb == ComponentKind.JOINT:
                    pair_dims.append((j_scales[j_count] * CONN_W, CONN_H))
                else:
                    raise LayoutMismatch(f"unsupported adjacency {ka} -> {kb}")

            # lengths per component
            seg_i = 0
            lengths = []
            for n in chain:
                l0 = db[n.kind].length
                if n.kind in (ComponentKind.PHALANX_SEGMENT, ComponentKind.FINGER_TIP):
                    lengths.append(lens[seg_i] * l0)
                    seg_i += 1
                else:
                    lengths.append(l0)

            cursor = 0.0
            for ci, (node, nid) in enumerate(zip(chain, chain_ids)):
                asset = db[node.kind]
                length = lengths[ci]
                prox = pair_dims[ci - 1] if ci > 0 else None
                dist = pair_dims[ci] if ci < len(pair_dims) else None
                if node.kind == ComponentKind.FINGER_BASE:
                    prox = (base_sy * 0.015, base_sz * 0.014)
                elif node.kind == ComponentKind.FINGER_TIP:
                    dist = (0.006, 0.005)

                stations = [0.0, length] if asset.mid_station_handles.size == 0 \
                    else [0.0, 0.5 * length, length]
                rects = [prox]
                if asset.mid_station_handles.size:
                    if node.kind == ComponentKind.PHALANX_SEGMENT:
                        rects.append((w_mid * 0.014, h_mid * 0.013))
                    elif node.kind == ComponentKind.FINGER_TIP:
                        rects.append((w_mid * 0.012, h_mid * 0.011))
                    else:
                        rects.append((CONN_W, CONN_H))
                rects.append(dist)

                local = []
                for x, (hy, hz) in zip(stations, rects):
                    local += [[x, -hy, -hz], [x, hy, -hz], [x, hy, hz], [x, -hy, hz]]
                local = np.asarray(local)
                local[:, 0] += cursor
                local[:, 1] += y_off
                out[merged.handle_map[nid]] = local
                cursor += length
        return out

    # -- public surface --------------------------------------------------------

    def apply(self, params, validate=True):
        if isinstance(params, MorphologyParams):
            if validate:
                params.validate()
            values = params.values
        else:
            values = np.asarray(params, dtype=float)
        if values.size != self.n_params:
            raise DimensionMismatch(
                f"expected {self.n_params} parameters, got {values.size}")
        handles = (self._jac @ values + self._jac_at_nominal).reshape(-1, 3)
        if validate:
            self._validate_handles(handles)
        return handles

    def _validate_handles(self, handles):
        rest = self.merged.global_handles
        for nid, node in enumerate(self.graph.nodes):
            asset = self.db[node.kind]
            hm = self.merged.handle_map[nid]
            local = handles[hm]
            areas = triangle_areas(local, asset.cage.faces)
            if areas.min(initial=np.inf) < MIN_TRIANGLE_AREA:
                raise DegenerateCage(
                    f"node {nid} ({node.kind.value}): cage triangle below "
                    f"{MIN_TRIANGLE_AREA} m^2")
            if DEFORMATION_CLASS[node.kind] == "axis_scale_only":
                disp = local - rest[hm]
                rel = disp - disp.mean(axis=0, keepdims=True)
                axis = PIN_AXIS[node.kind]
                ortho = rel - np.outer(rel @ axis, axis)
                if np.max(np.abs(ortho)) > 1e-12:
                    raise ConstraintViolation(
                        f"node {nid} ({node.kind.value}) deforms off-axis")

    def jacobian(self):
        """Constant d psi_h / d psi_c as a dense-matrix operator."""
        return DenseOperator(self._jac)


class DenseOperator:
    def __init__(self, m):
        self.m = m

    @property
    def shape(self):
        return self.m.shape

    def matvec(self, x):
        return self.m @ np.asarray(x, dtype=float).ravel()

    def rmatvec(self, y):
        return self.m.T @ np.asarray(y, dtype=float).ravel()


def apply_high_level(params, hmap):
    return hmap.apply(params)


def high_level_jacobian(hmap):
    return hmap.jacobian()


# ---------------------------------------------------------------------------
# deformation pipeline psi_c -> psi_h -> psi_M


@dataclass
class PsiMLayout:
    """Slices of the flat psi_M vector: per node, vertex / sample / handle blocks."""

    vert_slices: list
    sample_slices: list
    handle_slices: list
    total: int


class DesignPipeline:
    """Caches weights and index maps; evaluates the deformation chain."""

    def __init__(self, graph, db=None, per_joint_scales=True, n_samples=64):
        self.graph = graph
        self.db = db or component_database(n_samples=n_samples)
        self.hmap = HighLevelMap(graph, self.db, per_joint_scales=per_joint_scales)
        self.merged = self.hmap.merged

        vert_slices, sample_slices, handle_slices = [], [], []
        off = 0
        for node in graph.nodes:
            asset = self.db[node.kind]
            nv = asset.mesh.vertices.shape[0]
            ns = asset.mesh.contact_samples.shape[0]
            nh = asset.n_handles
            vert_slices.append(slice(off, off + nv))
            off += nv
            sample_slices.append(slice(off, off + ns))
            off += ns
            handle_slices.append(slice(off, off + nh))
            off += nh
        self.layout = PsiMLayout(vert_slices, sample_slices, handle_slices, off)

    @property
    def n_params(self):
        return self.hmap.n_params

    def default_params(self):
        return self.hmap.default_params()

    def handles(self, params, validate=True):
        return self.hmap.apply(params, validate=validate)

    def deform_points(self, handles):
        """psi_M as an (N, 3) array of deformed vertices, samples, handle copies."""
        out = np.zeros((self.layout.total, 3))
        for nid, node in enumerate(self.graph.nodes):
            asset = self.db[node.kind]
            hl = handles[self.merged.handle_map[nid]]
            out[self.layout.vert_slices[nid]] = asset.weights_vertices @ hl
            out[self.layout.sample_slices[nid]] = asset.weights_samples @ hl
            out[self.layout.handle_slices[nid]] = hl
        return out

    def psi_m(self, params, validate=True):
        return self.deform_points(self.handles(params, validate=validate))

    def deform_jacobian(self):
        """d psi_M / d psi_h operator (points-by-handles, acting on (G, 3) arrays)."""
        return PipelineDeformJacobian(self)


class PipelineDeformJacobian:
    def __init__(self, pipe):
        self.pipe = pipe

    def matvec(self, dh):
        dh = np.asarray(dh, dtype=float).reshape(-1, 3)
        lay = self.pipe.layout
        out = np.zeros((lay.total, 3))
        for nid, node in enumerate(self.pipe.graph.nodes):
            asset = self.pipe.db[node.kind]
            dhl = dh[self.pipe.merged.handle_map[nid]]
            out[lay.vert_slices[nid]] = asset.weights_vertices @ dhl
            out[lay.sample_slices[nid]] = asset.weights_samples @ dhl
            out[lay.handle_slices[nid]] = dhl
        return out

    def rmatvec(self, dm):
        dm = np.asarray(dm, dtype=float).reshape(-1, 3)
        lay = self.pipe.layout
        out = np.zeros((self.pipe.merged.n_handles, 3))
        for nid, node in enumerate(self.pipe.graph.nodes):
            asset = self.pipe.db[node.kind]
            hm = self.pipe.merged.handle_map[nid]
            np.add.at(out, hm, asset.weights_vertices.T @ dm[lay.vert_slices[nid]])
            np.add.at(out, hm, asset.weights_samples.T @ dm[lay.sample_slices[nid]])
            np.add.at(out, hm, dm[lay.handle_slices[nid]])
        return out


# ---------------------------------------------------------------------------
# direct mesh-vertex parameterization (free-form ablation)


class MeshVertexParameterization:
    """Identity parameterization over selected mesh vertices (3 dofs each)."""

    def __init__(self, rest_vertices, free_vertex_ids):
        rest_vertices = np.asarray(rest_vertices, dtype=float)
        ids = np.asarray(free_vertex_ids, dtype=int)
        if ids.size and (ids.min() < 0 or ids.max() >= rest_vertices.shape[0]):
            raise IndexOutOfRange("free vertex id out of range")
        self.rest = rest_vertices
        self.ids = ids

    @property
    def n_params(self):
        return 3 * self.ids.size

    def apply(self, displacements):
        d = np.asarray(displacements, dtype=float).reshape(-1, 3)
        if d.shape[0] != self.ids.size:
            raise DimensionMismatch("displacement count mismatch")
        out = self.rest.copy()
        out[self.ids] += d
        return out

    def matvec(self, d):
        """d(vertices)/d(params) applied to a displacement vector."""
        out = np.zeros_like(self.rest)
        out[self.ids] = np.asarray(d, dtype=float).reshape(-1, 3)
        return out

    def rmatvec(self, bar_vertices):
        bar = np.asarray(bar_vertices, dtype=float).reshape(-1, 3)
        return bar[self.ids].ravel()


def mesh_vertex_parameterization(rest_vertices, free_vertex_ids):
    return MeshVertexParameterization(rest_vertices, free_vertex_ids)
