"""
Block-based structured pruning under ADMM

Step 1 keeps, inside every (row strip, column block) of a weight matrix,
the columns with the largest norm; step 2 keeps the largest rows of the
whole matrix. Each step trains with the ADMM penalty, projects onto its
constraint set, hard-prunes, and the result is retrained under the final
mask.
"""
import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .gru_service import PRUNABLE_MATRICES
from .training_service import TrainOptions, Trainer, evaluate
from ..utils.errors import (
    ConstraintInfeasibleError,
    DegenerateModelError,
    InvariantViolationError,
    NumericDivergenceError,
)
from ..utils.logging_utils import debug_print, log_event


@dataclass(frozen=True)
class BlockPartition:
    """num_r horizontal strips, each cut into num_c column blocks"""

    num_r: int = 1
    num_c: int = 1

    def validate_for(self, rows, cols):
        if self.num_r < 1 or self.num_c < 1:
            raise ConstraintInfeasibleError("Partition counts must be at least 1",
                                            num_r=self.num_r, num_c=self.num_c)
        if self.num_r > rows or self.num_c > cols:
            raise ConstraintInfeasibleError(f"Partition ({self.num_r}, {self.num_c}) does not fit a "
                                            f"{rows}x{cols} matrix", num_r=self.num_r, num_c=self.num_c,
                                            rows=rows, cols=cols)
        return self

    @staticmethod
    def _bounds(length, count):
        step = -(-length // count)
        return [(start, min(start + step, length)) for start in range(0, length, step)]

    @staticmethod
    def _count(length, count):
        return -(-length // -(-length // count)) if length else 0

    def grid_shape(self, rows, cols):
        """(strips, blocks) computed without building the bounds"""
        return self._count(rows, self.num_r), self._count(cols, self.num_c)

    def row_bounds(self, rows):
        return self._bounds(rows, self.num_r)

    def col_bounds(self, cols):
        return self._bounds(cols, self.num_c)


@dataclass(frozen=True)
class PruneRates:
    col_rate: float = 1.0
    row_rate: float = 1.0


@dataclass(frozen=True)
class SparsityConstraint:
    """Columns kept per column block and rows kept over the whole matrix"""

    col_keep: tuple
    row_keep: int

    @property
    def col_keep_per_block(self):
        return self.col_keep[0] if len(set(self.col_keep)) == 1 else self.col_keep


def _keep_count(size, rate):
    if rate < 1:
        raise ConstraintInfeasibleError(f"Compression rate {rate} is below 1", rate=rate)
    # tolerance absorbs float noise such as 220 / 10.000000000000002
    return min(size, max(1, math.ceil(size / rate - 1e-9)))


def plan_constraint(rows, cols, part, rates):
    """Keep counts for a matrix: ceil(width / col_rate) per block, ceil(rows / row_rate) rows"""
    part.validate_for(rows, cols)
    col_keep = tuple(_keep_count(stop - start, rates.col_rate) for start, stop in part.col_bounds(cols))
    return SparsityConstraint(col_keep=col_keep, row_keep=_keep_count(rows, rates.row_rate))


def predicted_nnz(rows, cols, part, rates):
    """Surviving entries of a BSP mask; every strip keeps the same column count"""
    constraint = plan_constraint(rows, cols, part, rates)
    return constraint.row_keep * sum(constraint.col_keep)


@dataclass
class StructuredMask:
    """Kept rows of the matrix and, per (strip, block), the kept columns"""

    rows: int
    cols: int
    partition: BlockPartition
    kept_rows: np.ndarray
    kept_cols: list

    @classmethod
    def full(cls, rows, cols, partition):
        partition.validate_for(rows, cols)
        col_bounds = partition.col_bounds(cols)
        kept_cols = [[np.arange(start, stop) for start, stop in col_bounds] for _ in partition.row_bounds(rows)]
        return cls(rows, cols, partition, np.arange(rows), kept_cols)

    @classmethod
    def from_selection(cls, rows, cols, partition, kept_rows, kept_cols):
        """Mask from a kept-row list and per (strip, block) kept-column lists"""
        partition.validate_for(rows, cols)
        kept_cols = [[np.asarray(c, dtype=np.int64) for c in blocks] for blocks in kept_cols]
        return cls(rows, cols, partition, np.asarray(kept_rows, dtype=np.int64), kept_cols).validate()

    @classmethod
    def _from_grid(cls, grid, partition):
        rows, cols = grid.shape
        partition.validate_for(rows, cols)
        kept_rows = np.flatnonzero(grid.any(axis=1))
        kept_cols = []
        for r0, r1 in partition.row_bounds(rows):
            strip = grid[r0:r1]
            kept_cols.append([c0 + np.flatnonzero(strip[:, c0:c1].any(axis=0))
                              for c0, c1 in partition.col_bounds(cols)])
        return cls(rows, cols, partition, kept_rows, kept_cols)

    @classmethod
    def from_grid(cls, grid, partition):
        """Index lists of a boolean grid, which must already be BSP-feasible"""
        grid = np.asarray(grid, dtype=bool)
        mask = cls._from_grid(grid, partition)
        if not np.array_equal(mask.grid, grid):
            offending = np.argwhere(mask.grid != grid)
            raise InvariantViolationError("Mask is not block-structured",
                                          coordinates=offending[:16].tolist())
        return mask

    def strip_rows(self, strip):
        r0, r1 = self.partition.row_bounds(self.rows)[strip]
        return self.kept_rows[(self.kept_rows >= r0) & (self.kept_rows < r1)]

    @property
    def grid(self):
        grid = np.zeros((self.rows, self.cols), dtype=bool)
        for strip, blocks in enumerate(self.kept_cols):
            strip_rows = self.strip_rows(strip)
            if strip_rows.size == 0:
                continue
            for cols in blocks:
                grid[np.ix_(strip_rows, cols)] = True
        return grid

    @property
    def nnz(self):
        return int(sum(self.strip_rows(s).size * sum(c.size for c in blocks)
                       for s, blocks in enumerate(self.kept_cols)))

    @property
    def size(self):
        return self.rows * self.cols

    def validate(self):
        """Index lists sorted, unique and inside their strip/block ranges"""
        row_bounds = self.partition.row_bounds(self.rows)
        col_bounds = self.partition.col_bounds(self.cols)
        if np.any(np.diff(self.kept_rows) <= 0) or (self.kept_rows.size and (
                self.kept_rows[0] < 0 or self.kept_rows[-1] >= self.rows)):
            raise InvariantViolationError("kept_rows must be sorted unique ids below rows")
        if len(self.kept_cols) != len(row_bounds) or any(len(b) != len(col_bounds) for b in self.kept_cols):
            raise InvariantViolationError("kept_cols must list every (strip, block)")
        for blocks in self.kept_cols:
            for (c0, c1), cols in zip(col_bounds, blocks):
                if np.any(np.diff(cols) <= 0) or (cols.size and (cols[0] < c0 or cols[-1] >= c1)):
                    raise InvariantViolationError("Block columns must be sorted ids inside the block",
                                                  block=[c0, c1])
        return self


def infer_mask(M, partition):
    """Smallest BSP mask whose support covers M's nonzeros"""
    return StructuredMask._from_grid(np.asarray(M) != 0, partition)


def _top_indices(scores, k):
    """k largest scores; equal scores resolve to the lower index"""
    order = np.argsort(-scores, kind="stable")[:k]
    return np.sort(order)


def _block_keep(part, cols, k):
    bounds = part.col_bounds(cols)
    keep = [int(k)] * len(bounds) if np.isscalar(k) else [int(v) for v in k]
    if len(keep) != len(bounds):
        raise InvariantViolationError("One keep count per column block is required",
                                      blocks=len(bounds), given=len(keep))
    for (c0, c1), count in zip(bounds, keep):
        if count < 0 or count > c1 - c0:
            raise ConstraintInfeasibleError(f"Cannot keep {count} columns of a block {c1 - c0} wide",
                                            keep=count, width=c1 - c0)
    return bounds, keep


def select_block_columns(W, part, k):
    """Per (strip, block) absolute ids of the k columns with the largest L2 norm"""
    rows, cols = W.shape
    part.validate_for(rows, cols)
    bounds, keep = _block_keep(part, cols, k)
    selection = []
    for r0, r1 in part.row_bounds(rows):
        strip = W[r0:r1]
        norms = np.sum(strip * strip, axis=0)
        selection.append([c0 + _top_indices(norms[c0:c1], count) for (c0, c1), count in zip(bounds, keep)])
    return selection


def project_block_columns(W, part, k):
    """Frobenius-nearest matrix with at most k nonzero columns inside every block"""
    W = np.asarray(W, dtype=np.float64)
    selection = select_block_columns(W, part, k)
    Z = np.zeros_like(W)
    for (r0, r1), blocks in zip(part.row_bounds(W.shape[0]), selection):
        for cols in blocks:
            Z[r0:r1, cols] = W[r0:r1, cols]
    return Z


def select_rows(W, row_keep):
    rows = W.shape[0]
    if row_keep < 0 or row_keep > rows:
        raise ConstraintInfeasibleError(f"Cannot keep {row_keep} of {rows} rows", keep=row_keep, rows=rows)
    return _top_indices(np.sum(W * W, axis=1), row_keep)


def project_rows(W, row_keep):
    """Frobenius-nearest matrix with at most row_keep nonzero rows"""
    W = np.asarray(W, dtype=np.float64)
    kept = select_rows(W, row_keep)
    Z = np.zeros_like(W)
    Z[kept] = W[kept]
    return Z


@dataclass
class AdmmState:
    W: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    rho: float

    @classmethod
    def start(cls, W, project, rho):
        if rho <= 0:
            raise InvariantViolationError("rho must be positive", rho=rho)
        return cls(W=W, Z=project(W), U=np.zeros_like(W), rho=float(rho))

    def residual(self):
        return float(np.linalg.norm(self.W - self.Z))


def _check_finite(name, value, **context):
    if not np.all(np.isfinite(value)):
        raise NumericDivergenceError(f"ADMM produced non-finite {name}", variable=name, **context)


def admm_dual_update(state, W_new, project):
    """Z-update (projection of W + U) and dual update U + W - Z for a freshly updated W"""
    if not (W_new.shape == state.Z.shape == state.U.shape):
        raise InvariantViolationError("W, Z and U must share one shape",
                                      shapes=[list(W_new.shape), list(state.Z.shape), list(state.U.shape)])
    _check_finite("W", W_new)
    Z = project(W_new + state.U)
    U = state.U + W_new - Z
    _check_finite("U", U)
    return AdmmState(W=W_new, Z=Z, U=U, rho=state.rho)


def admm_step(state, project, grad_loss, lr=0.1, steps=1):
    """One ADMM iteration.

    The W-update takes `steps` gradient steps on f(W) + rho/2 ||W - Z + U||^2;
    grad_loss is either the gradient array or a callable W -> gradient.
    """
    W = state.W
    for _ in range(steps):
        grad = grad_loss(W) if callable(grad_loss) else grad_loss
        if np.shape(grad) != W.shape:
            raise InvariantViolationError("Loss gradient does not match W", shape=list(np.shape(grad)))
        W = W - lr * (grad + state.rho * (W - state.Z + state.U))
    return admm_dual_update(state, W, project)


def compression_rate(masks):
    """Total prunable entries over surviving entries, to 3 significant figures"""
    if not masks:
        raise DegenerateModelError("No masks given")
    total, kept = 0, 0
    for mask in masks.values():
        if isinstance(mask, StructuredMask):
            total += mask.size
            kept += mask.nnz
        else:
            mask = np.asarray(mask, dtype=bool)
            total += mask.size
            kept += int(np.count_nonzero(mask))
    if kept == 0:
        raise DegenerateModelError("Every mask is empty; compression rate is undefined")
    return float(f"{total / kept:.3g}")


@dataclass
class PruneSettings:
    rho: float = 1e-2
    admm_epochs: int = 10
    retrain_epochs: int = 10
    seed: int = 0
    admm_tol: float = 1e-3
    rho_overrides: dict = field(default_factory=dict)
    lr: float = 0.01
    batch: int = 32
    optimizer: str = "adam"
    clip_norm: float = 5.0
    train_size: int = 1024
    test_size: int = 256

    @classmethod
    def from_config(cls, config):
        return cls(rho=config.prune.rho, admm_epochs=config.prune.admm_epochs,
                   retrain_epochs=config.prune.retrain_epochs, seed=config.seed,
                   admm_tol=config.prune.admm_tol, rho_overrides=dict(config.prune.rho_overrides),
                   lr=config.train.lr, batch=config.train.batch, optimizer=config.train.optimizer,
                   clip_norm=config.train.clip_norm, train_size=config.task.train_size,
                   test_size=config.task.test_size)

    def rho_for(self, name):
        return float(self.rho_overrides.get(name, self.rho))

    def train_options(self, stream, epochs, mask=None):
        return TrainOptions(lr=self.lr, epochs=epochs, batch=self.batch, seed=self.seed,
                            optimizer=self.optimizer, clip_norm=self.clip_norm,
                            train_size=self.train_size, mask=mask, stream=stream)


@dataclass
class MatrixReport:
    matrix: str
    rows: int
    cols: int
    nnz: int

    @property
    def rate(self):
        return self.rows * self.cols / self.nnz if self.nnz else float("inf")


@dataclass
class PruneReport:
    matrices: list = field(default_factory=list)
    compression_rate: float = 1.0
    accuracy_before: float = 0.0
    accuracy_after: float = 0.0
    phases: list = field(default_factory=list)

    @property
    def total_params(self):
        return sum(m.rows * m.cols for m in self.matrices)

    @property
    def preserved_params(self):
        return sum(m.nnz for m in self.matrices)

    def csv_rows(self):
        header = ["matrix", "rows", "cols", "nnz", "rate"]
        return [header] + [[m.matrix, m.rows, m.cols, m.nnz, repr(float(m.rate))] for m in self.matrices]

    def summary(self):
        return {
            "compression_rate": self.compression_rate,
            "total_params": self.total_params,
            "preserved_params": self.preserved_params,
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
            "phases": self.phases,
        }


def _prunes_columns(shape, part, constraint):
    widths = [stop - start for start, stop in part.col_bounds(shape[1])]
    return any(keep < width for keep, width in zip(constraint.col_keep, widths))


def _resolve_partitions(parts, params):
    if isinstance(parts, BlockPartition):
        parts = {name: parts for name in PRUNABLE_MATRICES}
    missing = [name for name in PRUNABLE_MATRICES if name not in parts]
    if missing:
        raise InvariantViolationError("A partition is required for every prunable matrix", missing=missing)
    for name in PRUNABLE_MATRICES:
        parts[name].validate_for(*getattr(params, name).shape)
    return dict(parts)


class BspPruner:
    """Runs the two ADMM phases, hard-prunes after each, then retrains under the final mask"""

    def __init__(self, settings, parts, rates):
        self.settings = settings
        self.parts = parts
        self.rates = rates
        self.phases = []

    def _run_phase(self, phase, params, projectors, data, fixed_mask):
        settings = self.settings
        xs, labels = data
        states = {name: AdmmState.start(getattr(params, name), project, settings.rho_for(name))
                  for name, project in projectors.items()}

        def penalty(name, value):
            state = states.get(name)
            if state is None:
                return None
            return state.rho * (value - state.Z + state.U)

        trainer = Trainer(settings.train_options(f"prune/{phase}", 1, fixed_mask), penalty)
        log_event("admm_phase_start", f"ADMM phase '{phase}' started", "event",
                  {"phase": phase, "max_iterations": settings.admm_epochs})

        iterations = 0
        for iteration in range(settings.admm_epochs):
            try:
                params = trainer.run(params, xs, labels, epochs=1).params
            except NumericDivergenceError as e:
                raise NumericDivergenceError(f"ADMM phase '{phase}' diverged: {e.message}",
                                             phase=phase, iteration=iteration, **e.details)
            for name, project in projectors.items():
                states[name] = admm_dual_update(states[name], getattr(params, name), project)
            iterations = iteration + 1
            converged = all(s.residual() <= settings.admm_tol * max(1.0, float(np.linalg.norm(s.W)))
                            for s in states.values())
            debug_print(f"{phase} iteration {iteration}: max residual "
                        f"{max(s.residual() for s in states.values()):.3e}")
            if converged:
                break

        residuals = {name: s.residual() for name, s in states.items()}
        self.phases.append({"phase": phase, "iterations": iterations,
                            "max_residual": max(residuals.values()) if residuals else 0.0})
        log_event("admm_phase_done", f"ADMM phase '{phase}' finished after {iterations} iterations",
                  "metric", {"phase": phase, "iterations": iterations, "residuals": residuals})
        return params, states

    def prune(self, params, data):
        params = params.copy()
        shapes = {name: getattr(params, name).shape for name in PRUNABLE_MATRICES}
        constraints = {name: plan_constraint(*shapes[name], self.parts[name], self.rates)
                       for name in PRUNABLE_MATRICES}
        masks = {name: StructuredMask.full(*shapes[name], self.parts[name]) for name in PRUNABLE_MATRICES}

        # Step 1: column pruning inside each block of each row strip
        col_projectors = {name: partial(project_block_columns, part=self.parts[name], k=constraints[name].col_keep)
                          for name in PRUNABLE_MATRICES
                          if _prunes_columns(shapes[name], self.parts[name], constraints[name])}
        if col_projectors:
            params, states = self._run_phase("columns", params, col_projectors, data, None)
            for name in col_projectors:
                masks[name].kept_cols = select_block_columns(states[name].Z, self.parts[name],
                                                             constraints[name].col_keep)
            self._hard_prune(params, masks, states)

        # Step 2: row pruning over the whole, already column-pruned matrix
        row_projectors = {name: partial(project_rows, row_keep=constraints[name].row_keep)
                          for name in PRUNABLE_MATRICES
                          if constraints[name].row_keep < shapes[name][0]}
        if row_projectors:
            grids = {name: mask.grid for name, mask in masks.items()}
            params, states = self._run_phase("rows", params, row_projectors, data, grids)
            for name in row_projectors:
                masks[name].kept_rows = select_rows(states[name].Z, constraints[name].row_keep)
            self._hard_prune(params, masks, states)
        return params, masks

    @staticmethod
    def _hard_prune(params, masks, states):
        """Copy Z into W where ADMM ran, then zero everything outside the mask"""
        for name, mask in masks.items():
            value = states[name].Z if name in states else getattr(params, name)
            setattr(params, name, np.where(mask.grid, value, 0.0))
        log_event("hard_prune", "Hard-pruned weights to their structured masks", "event",
                  {name: mask.nnz for name, mask in masks.items()})


def bsp_prune(params, parts, rates, settings, task):
    """Prune the six GRU weight matrices to block-structured masks and retrain.

    Returns (pruned params, masks keyed by matrix name, PruneReport).
    """
    params.validate()
    parts = _resolve_partitions(parts, params)
    train_data = task.sample(settings.train_size, "train")[:2]
    test_xs, test_labels, _ = task.sample(settings.test_size, "test")

    _, accuracy_before = evaluate(params, test_xs, test_labels)
    log_event("prune_start", f"BSP pruning at column rate {rates.col_rate}, row rate {rates.row_rate}",
              "event", {"col_rate": rates.col_rate, "row_rate": rates.row_rate,
                        "accuracy_before": accuracy_before})

    pruner = BspPruner(settings, parts, rates)
    pruned, masks = pruner.prune(params, train_data)

    grids = {name: mask.grid for name, mask in masks.items()}
    retrainer = Trainer(settings.train_options("prune/retrain", settings.retrain_epochs, grids))
    pruned = retrainer.run(pruned, *train_data).params

    _, accuracy_after = evaluate(pruned, test_xs, test_labels)
    report = PruneReport(
        matrices=[MatrixReport(name, masks[name].rows, masks[name].cols, masks[name].nnz)
                  for name in PRUNABLE_MATRICES],
        compression_rate=compression_rate(masks),
        accuracy_before=accuracy_before,
        accuracy_after=accuracy_after,
        phases=pruner.phases,
    )
    log_event("prune_done", f"Pruned to {report.compression_rate}x", "metric", report.summary())
    return pruned, masks, report
