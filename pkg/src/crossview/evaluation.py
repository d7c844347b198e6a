"""Retrieval recall under random orientation / limited FoV, and heatmap consistency."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .data import ScenePair
from .encoder import attribution_heatmap, encode
from .errors import AlignmentError, ContractError, ParameterError
from .imaging import GroundTransformParams, HeatMap, transform_ground, transform_heatmap_ground
from .objectives import EmbeddingBatch

DEFAULT_KS = (1, 5, 10)
CONSISTENCY_FOVS = (180.0, 90.0, 70.0)


@dataclass
class RecallReport:
    fovs: list[float]
    table: dict[float, dict[str, float]]
    num_queries: int
    num_references: int

    @property
    def average_r1(self) -> float:
        return float(np.mean([self.table[f]["R@1"] for f in self.fovs]))

    def to_dict(self) -> dict:
        return {
            "fovs": self.fovs,
            "table": {str(f): self.table[f] for f in self.fovs},
            "average_R@1": self.average_r1,
            "num_queries": self.num_queries,
            "num_references": self.num_references,
        }

    def write(self, out_dir: str | Path, stem: str = "recall") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path, csv_path = out / f"{stem}.json", out / f"{stem}.csv"
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        metrics = list(next(iter(self.table.values())).keys())
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["fov", *metrics])
            for f in self.fovs:
                writer.writerow([f, *(self.table[f][m] for m in metrics)])
        return json_path, csv_path


def true_ranks(queries: EmbeddingBatch, references: EmbeddingBatch) -> np.ndarray:
    """0-based rank of each query's true reference; ties go to the earlier reference."""
    ref_index = {r: j for j, r in enumerate(references.ids)}
    missing = [q for q in queries.ids if q not in ref_index]
    if missing:
        raise ContractError(f"{len(missing)} query ids have no reference, e.g. {missing[0]!r}")
    q = queries.numpy().astype(np.float64)
    r = references.numpy().astype(np.float64)
    sim = q @ r.T
    truth = np.array([ref_index[i] for i in queries.ids])
    true_sim = sim[np.arange(len(truth)), truth][:, None]
    before = np.arange(sim.shape[1])[None, :] < truth[:, None]
    return ((sim > true_sim) | ((sim == true_sim) & before)).sum(axis=1)


def recall_at_k(queries: EmbeddingBatch, references: EmbeddingBatch,
                ks: Sequence[int] = DEFAULT_KS, fov: float = 360.0) -> RecallReport:
    ranks = true_ranks(queries, references)
    n_ref = len(references)
    row = {f"R@{k}": 100.0 * float(np.mean(ranks < k)) for k in ks}
    one_percent = max(1, math.ceil(n_ref / 100))
    row["R@1%"] = 100.0 * float(np.mean(ranks < one_percent))
    return RecallReport([fov], {fov: row}, len(queries), n_ref)


def merge_reports(reports: Sequence[RecallReport]) -> RecallReport:
    fovs, table = [], {}
    for rep in reports:
        for f in rep.fovs:
            fovs.append(f)
            table[f] = rep.table[f]
    return RecallReport(fovs, table, reports[0].num_queries, reports[0].num_references)


def _fov_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, 7919, index])


def evaluate_fov_protocol(model, dataset: Sequence[ScenePair], fovs: Sequence[float], seed: int = 0,
                          ks: Sequence[int] = DEFAULT_KS, random_orientation: bool = True,
                          pad_to_full: bool = False) -> RecallReport:
    """R@k per FoV with a fresh uniform orientation for every query panorama.

    ``model`` holds ``ground`` and ``satellite`` encoders. References are the
    untransformed satellite images of the whole dataset.
    """
    ids = [p.id for p in dataset]
    refs = encode(model.satellite, [p.satellite for p in dataset], ids)
    reports = []
    for i, fov in enumerate(fovs):
        rng = _fov_rng(seed, i)
        queries = []
        for pair in dataset:
            alpha = float(rng.uniform(0.0, 360.0)) if random_orientation else 0.0
            queries.append(transform_ground(pair.panorama, GroundTransformParams(alpha, fov, pad_to_full)))
        reports.append(recall_at_k(encode(model.ground, queries, ids), refs, ks, float(fov)))
    return merge_reports(reports)


# -- similarity backends -------------------------------------------------------

def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5, k1: float = 0.01,
         k2: float = 0.03, data_range: float = 1.0) -> float:
    """Mean SSIM with a Gaussian window over the valid (fully covered) region.

    Maps smaller than the window along an axis use a window truncated to that
    axis length.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise AlignmentError(f"cannot compare maps of shape {a.shape} and {b.shape}")
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    win_h, win_w = min(window, a.shape[0]), min(window, a.shape[1])
    kernel = _gaussian_window(window, sigma)
    off_h, off_w = (window - win_h) // 2, (window - win_w) // 2
    kernel = kernel[off_h:off_h + win_h, off_w:off_w + win_w]
    kernel = kernel / kernel.sum()

    def filt(x):
        full = ndimage.correlate(x, kernel, mode="reflect")
        # keep only positions where the window lies inside the map
        top, left = (win_h - 1) // 2, (win_w - 1) // 2
        return full[top:x.shape[0] - (win_h - 1 - top), left:x.shape[1] - (win_w - 1 - left)]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of flattened maps; two all-zero maps count as identical."""
    a, b = _flat_pair(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0 if na == nb else 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def pcc(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of flattened maps; constant maps score 1 if equal, else 0."""
    a, b = _flat_pair(a, b)
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.linalg.norm(da), np.linalg.norm(db)
    if na == 0 or nb == 0:
        return 1.0 if np.array_equal(a, b) else 0.0
    return float(np.clip(da @ db / (na * nb), -1.0, 1.0))


def _flat_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise AlignmentError(f"cannot compare maps of shape {a.shape} and {b.shape}")
    return a.ravel(), b.ravel()


BACKENDS: dict[str, Callable[[np.ndarray, np.ndarray], float]] = {
    "ssim": ssim,
    "cosine": cosine,
    "pcc": pcc,
}


# -- consistency -----------------------------------------------------------------

@dataclass
class ConsistencyReport:
    oc_grd: float
    oc_sat: float
    fc_grd: float
    fc_sat: float
    backend: str
    samples: int
    fc_grd_by_fov: dict[float, float] = field(default_factory=dict)
    fc_sat_by_fov: dict[float, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fc_grd_by_fov"] = {str(k): v for k, v in self.fc_grd_by_fov.items()}
        d["fc_sat_by_fov"] = {str(k): v for k, v in self.fc_sat_by_fov.items()}
        return d

    def write(self, out_dir: str | Path, stem: str = "consistency") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path, csv_path = out / f"{stem}.json", out / f"{stem}.csv"
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "fov", "value"])
            writer.writerow(["OC_grd", 360.0, self.oc_grd])
            writer.writerow(["OC_sat", 360.0, self.oc_sat])
            for f, v in self.fc_grd_by_fov.items():
                writer.writerow(["FC_grd", f, v])
            for f, v in self.fc_sat_by_fov.items():
                writer.writerow(["FC_sat", f, v])
            writer.writerow(["FC_grd", "mean", self.fc_grd])
            writer.writerow(["FC_sat", "mean", self.fc_sat])
        return json_path, csv_path


@dataclass
class SampleHeatmaps:
    """The heatmaps for one sample at one (alpha, theta)."""

    h_s: HeatMap
    h_s_star: HeatMap
    h_g_transformed: HeatMap
    h_g_star: HeatMap


def sample_heatmaps(model, pair: ScenePair, alpha: float, theta: float,
                    pad_to_full: bool = False) -> SampleHeatmaps:
    params = GroundTransformParams(alpha, theta, pad_to_full)
    g = encode(model.ground, [pair.panorama]).numpy()[0]
    s = encode(model.satellite, [pair.satellite]).numpy()[0]
    ground_star = transform_ground(pair.panorama, params)
    g_star = encode(model.ground, [ground_star]).numpy()[0]
    h_s = attribution_heatmap(g, model.satellite, pair.satellite)
    h_s_star = attribution_heatmap(g_star, model.satellite, pair.satellite)
    h_g = attribution_heatmap(s, model.ground, pair.panorama)
    h_g_star = attribution_heatmap(s, model.ground, ground_star)
    h_g_t = transform_heatmap_ground(h_g, params)
    if h_g_t.values.shape != h_g_star.values.shape:
        raise AlignmentError(f"transformed heatmap {h_g_t.values.shape} does not match "
                             f"limited-FoV heatmap {h_g_star.values.shape}")
    return SampleHeatmaps(h_s, h_s_star, h_g_t, h_g_star)


def consistency_scores(model, samples: Sequence[ScenePair], fovs: Sequence[float] = CONSISTENCY_FOVS,
                       backend: str = "ssim", seed: int = 0, repeats: int = 1,
                       pad_to_full: bool = False) -> ConsistencyReport:
    """Orientation (OC) and FoV (FC) consistency of attribution heatmaps.

    OC compares maps under a random full-FoV shift; FC averages the same
    comparison over the limited FoVs. Ground maps are compared after applying
    the query's shift/crop to the full-panorama map. ``repeats`` draws
    several orientations per sample and FoV.
    """
    if backend not in BACKENDS:
        raise ParameterError(f"unknown consistency backend {backend!r}")
    if not samples:
        raise ParameterError("consistency needs at least one sample")
    sim = BACKENDS[backend]
    rng = np.random.default_rng([seed, 104729])
    all_fovs = [360.0, *[float(f) for f in fovs]]
    grd = {f: [] for f in all_fovs}
    sat = {f: [] for f in all_fovs}
    for pair in samples:
        for f in all_fovs:
            for _ in range(repeats):
                alpha = float(rng.uniform(0.0, 360.0))
                maps = sample_heatmaps(model, pair, alpha, f, pad_to_full)
                sat[f].append(sim(maps.h_s.values, maps.h_s_star.values))
                grd[f].append(sim(maps.h_g_transformed.values, maps.h_g_star.values))
    fc_grd = {f: float(np.mean(grd[f])) for f in all_fovs[1:]}
    fc_sat = {f: float(np.mean(sat[f])) for f in all_fovs[1:]}
    return ConsistencyReport(
        oc_grd=float(np.mean(grd[360.0])),
        oc_sat=float(np.mean(sat[360.0])),
        fc_grd=float(np.mean(list(fc_grd.values()))) if fc_grd else float("nan"),
        fc_sat=float(np.mean(list(fc_sat.values()))) if fc_sat else float("nan"),
        backend=backend,
        samples=len(samples),
        fc_grd_by_fov=fc_grd,
        fc_sat_by_fov=fc_sat,
    )


def export_heatmap_overlay(image, heatmap: HeatMap, path: str | Path, alpha: float = 0.5) -> None:
    """Blend a jet-coloured heatmap over ``image`` and save it as PNG."""
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import colormaps

    from .imaging import write_png

    colours = colormaps["jet"](heatmap.values)[..., :3]
    base = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    if base.shape[:2] != heatmap.values.shape:
        raise AlignmentError("heatmap and image sizes differ")
    write_png(np.clip((1 - alpha) * base[..., :3] + alpha * colours, 0, 1), path)
