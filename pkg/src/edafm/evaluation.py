"""Cross-validation plans (LOPO and time-aware), dummy baselines and probe evaluation.

Time-aware (TA) folds: users are split into ``n_ta_folds`` seeded groups.
For group ``g`` every user in ``g`` contributes the chronologically first
``floor(2n/3)`` of its windows to training and the rest to the test set;
all other users are training-only.  A boundary that falls inside a run of
equal timestamps is moved so that every train time precedes every test time.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import stream
from .errors import TooFewUsers, UserTooShort
from .metrics import balanced_accuracy, metrics
from .probe import ProbeGrid, grid_select

PROTOCOLS = ("LOPO", "TA")
N_TA_FOLDS = 5
DUMMIES = ("most_frequent", "uniform", "prior")


@dataclass
class Fold:
    train: np.ndarray
    test: np.ndarray
    test_users: list


@dataclass
class FoldPlan:
    protocol: str
    folds: list
    seed: int = 0
    groups: list = field(default_factory=list)  # TA user groups
    excluded: list = field(default_factory=list)  # TA users too short to split

    def __len__(self):
        return len(self.folds)

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "seed": self.seed, "groups": self.groups,
                "excluded": self.excluded,
                "folds": [{"train": f.train.tolist(), "test": f.test.tolist(), "test_users": f.test_users}
                          for f in self.folds]}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        folds = [Fold(np.array(f["train"], dtype=np.int64), np.array(f["test"], dtype=np.int64),
                      list(f["test_users"])) for f in d["folds"]]
        return cls(d["protocol"], folds, d.get("seed", 0), d.get("groups", []), d.get("excluded", []))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "FoldPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def ta_split(t: np.ndarray) -> int:
    """Number of chronologically first windows that go to training.

    Starts at floor(2n/3); on a timestamp tie the boundary moves down, or up
    if moving down would empty the training side.  Raises UserTooShort when no
    boundary separates the times.
    """
    ts = np.sort(t)
    n = len(ts)
    if n < 2:
        raise UserTooShort(f"{n} window(s); need at least 2")
    k = (2 * n) // 3
    down = k
    while 0 < down < n and ts[down - 1] >= ts[down]:
        down -= 1
    if 0 < down < n:
        return down
    up = k
    while 0 < up < n and ts[up - 1] >= ts[up]:
        up += 1
    if 0 < up < n:
        return up
    raise UserTooShort("all timestamps are equal")


def make_folds(user_id, t_start, protocol: str = "LOPO", seed: int = 0,
               n_ta_folds: int = N_TA_FOLDS) -> FoldPlan:
    user_id = np.asarray([str(u) for u in user_id], dtype=object)
    t_start = np.asarray(t_start, dtype=np.float64)
    if len(user_id) != len(t_start):
        raise ValueError("user_id and t_start differ in length")
    users = sorted(set(user_id))
    idx = np.arange(len(user_id))
    by_user = {u: idx[user_id == u] for u in users}

    if protocol == "LOPO":
        if len(users) < 2:
            raise TooFewUsers(f"LOPO needs at least 2 users, got {len(users)}")
        folds = [Fold(idx[user_id != u], by_user[u], [u]) for u in users]
        return FoldPlan("LOPO", folds, seed)

    if protocol != "TA":
        raise ValueError(f"unknown protocol {protocol!r}")
    split = {}
    excluded = []
    for u in users:
        order = by_user[u][np.argsort(t_start[by_user[u]], kind="stable")]
        try:
            k = ta_split(t_start[order])
        except UserTooShort:
            excluded.append(u)
            continue
        split[u] = (order[:k], order[k:])
    eligible = sorted(split)
    if len(eligible) < n_ta_folds:
        raise TooFewUsers(f"TA needs at least {n_ta_folds} splittable users, got {len(eligible)}")
    perm = np.random.default_rng(seed).permutation(len(eligible))
    groups = [sorted(eligible[i] for i in part) for part in np.array_split(perm, n_ta_folds)]
    folds = []
    for g in groups:
        test = np.sort(np.concatenate([split[u][1] for u in g]))
        is_test = np.zeros(len(idx), dtype=bool)
        is_test[test] = True
        folds.append(Fold(idx[~is_test], test, list(g)))
    return FoldPlan("TA", folds, seed, groups, excluded)


def check_plan(plan: FoldPlan, user_id, t_start) -> None:
    """Assert the leakage and chronology invariants of a plan."""
    user_id = np.asarray([str(u) for u in user_id], dtype=object)
    t_start = np.asarray(t_start, dtype=np.float64)
    for f in plan.folds:
        assert not set(f.train.tolist()) & set(f.test.tolist()), "train/test windows overlap"
        if plan.protocol == "LOPO":
            assert not set(user_id[f.train]) & set(user_id[f.test]), "train/test users overlap"
        else:
            for u in f.test_users:
                tr = t_start[f.train][user_id[f.train] == u]
                te = t_start[f.test][user_id[f.test] == u]
                assert len(tr) and len(te) and tr.max() < te.min(), f"chronology broken for {u}"


# dummy baselines

def dummy_predictions(name: str, y_train, n_test: int, seed: int) -> np.ndarray:
    y_train = np.asarray(y_train).astype(np.int64)
    rng = stream(seed, DUMMIES.index(name))
    if name == "most_frequent":
        return np.full(n_test, int(np.argmax(np.bincount(y_train, minlength=2))), dtype=np.int64)
    if name == "uniform":
        return rng.integers(0, 2, n_test)
    if name == "prior":
        return (rng.random(n_test) < y_train.mean()).astype(np.int64)
    raise ValueError(f"unknown dummy {name!r}")


def dummy_best(y_train, y_test, seed: int = 0) -> tuple[np.ndarray, str]:
    """Best of the three dummies by test balanced accuracy (ties -> most_frequent)."""
    y_test = np.asarray(y_test).astype(np.int64)
    best = None
    for name in DUMMIES:
        pred = dummy_predictions(name, y_train, len(y_test), seed)
        score = balanced_accuracy(y_test, pred)
        if best is None or score > best[0]:
            best = (score, pred, name)
    return best[1], best[2]


# reports

@dataclass
class MetricReport:
    balanced_accuracy: np.ndarray
    mcc: np.ndarray
    f1: np.ndarray
    extra: dict = field(default_factory=dict)

    @staticmethod
    def _se(v: np.ndarray) -> float:
        return float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else float("nan")

    def summary(self) -> dict:
        out = {}
        for name in ("balanced_accuracy", "mcc", "f1"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            out[f"{name}_mean"] = float(v.mean())
            out[f"{name}_se"] = self._se(v)
        out["n_folds"] = len(self.balanced_accuracy)
        return out


@dataclass
class ProtocolResult:
    method: MetricReport
    dummy: MetricReport
    chosen_C: list
    dummy_names: list

    @property
    def solvable(self) -> bool:
        return self.method.summary()["balanced_accuracy_mean"] > self.dummy.summary()["balanced_accuracy_mean"]


def evaluate_protocol(X, y, plan: FoldPlan, seed: int = 0, grid: ProbeGrid = ProbeGrid(),
                      workers: int = 1) -> ProtocolResult:
    """Linear-probe ``X`` under every fold of ``plan``, alongside the best dummy."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)

    def run(k_fold):
        k, f = k_fold
        model = grid_select(X[f.train], y[f.train], grid, seed=seed)
        m = metrics(y[f.test], model.predict(X[f.test]))
        dpred, dname = dummy_best(y[f.train], y[f.test], seed + k)
        return m, metrics(y[f.test], dpred), model.chosen_C, dname

    items = list(enumerate(plan.folds))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(run, items))
    else:
        rows = [run(i) for i in items]
    method = MetricReport(*map(np.array, zip(*[r[0] for r in rows])))
    dummy = MetricReport(*map(np.array, zip(*[r[1] for r in rows])))
    return ProtocolResult(method, dummy, [r[2] for r in rows], [r[3] for r in rows])


RESULT_COLUMNS = ("method", "task", "protocol", "balanced_accuracy_mean", "balanced_accuracy_se",
                  "mcc_mean", "mcc_se", "f1_mean", "f1_se", "n_folds", "solvable")


def result_rows(method: str, task: str, protocol: str, res: ProtocolResult) -> list[dict]:
    rows = []
    for name, rep, solv in ((method, res.method, res.solvable), ("dummy", res.dummy, "")):
        rows.append({"method": name, "task": task, "protocol": protocol, **rep.summary(),
                     "solvable": solv})
    return rows


def write_results(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
