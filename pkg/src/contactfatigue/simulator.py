"""Ground-truth synthetic panel and surface generators.

Every recovery and acceptance test draws its data from here: a longitudinal
panel whose counts follow the additive count model (baseline + covariate
effects + smooth age effect + per-covariate Hill fatigue, NB2 noise), and a
coarse-band contact-surface dataset whose latent intensities satisfy the
population flow identity exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .domain import (AGE_MAX, CHILD_BANDS, CoarseBandSet, PopulationTable,
                     SurveyRecord, default_coarse_bands)
from .models.fatigue import HillCurve, hill
from .models.likelihoods import nb1_rvs, nb2_rvs


@dataclass(frozen=True)
class AgeEffect:
    """Smooth age effect built from Gaussian bumps on 0..84."""

    bumps: tuple[tuple[float, float, float], ...] = (
        (0.45, 10.0, 8.0), (0.35, 35.0, 12.0), (-0.25, 70.0, 10.0))

    def __call__(self, age) -> np.ndarray:
        age = np.asarray(age, dtype=float)
        out = np.zeros_like(age)
        for amp, center, width in self.bumps:
            out = out + amp * np.exp(-0.5 * ((age - center) / width) ** 2)
        return out


@dataclass(frozen=True)
class ScenarioConfig:
    """Data-generating configuration for a longitudinal panel."""

    waves: int = 5
    panel_size: int = 300
    retention: float = 0.7
    beta0: float = 1.2
    beta: dict = field(default_factory=lambda: {
        "sex:M": 0.12, "household_size:3": 0.25, "employment:student": 0.3})
    hill_curves: dict = field(default_factory=lambda: {
        "const:1": HillCurve(0.88, -1.55, 0.94)})
    age_effect: AgeEffect = field(default_factory=AgeEffect)
    phi: float = 8.0
    seed: int = 0
    include_children: bool = True
    days_per_wave: int = 14
    bands: CoarseBandSet = field(default_factory=default_coarse_bands)

    def __post_init__(self) -> None:
        if not (0.0 <= self.retention <= 1.0):
            raise ValueError("retention must lie in [0, 1]")


@dataclass
class TruthManifest:
    """Every true quantity behind a simulated panel."""

    beta0: float
    beta: dict
    hill_curves: dict
    phi: float
    age_bumps: list
    seed: int
    waves: int
    lambda_fatigue_free: list      # per emitted record
    lambda_realized: list
    record_keys: list              # (participant_id, wave)

    def to_json(self) -> str:
        payload = asdict(self)
        payload["hill_curves"] = {
            k: {"gamma": c.gamma, "zeta": c.zeta, "eta": c.eta}
            for k, c in self.hill_curves.items()}
        return json.dumps(payload, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TruthManifest":
        payload = json.loads(text)
        payload["hill_curves"] = {
            k: HillCurve(v["gamma"], v["zeta"], v["eta"])
            for k, v in payload["hill_curves"].items()}
        return cls(**payload)


@dataclass
class _Participant:
    pid: str
    age: int
    sex: str
    household: str
    employment: str
    preschool: str
    repeats: int = 0


_HOUSEHOLDS = ("1", "2", "3")
_EMPLOYMENT = ("full_time", "student", "retired")


def _covariate_value(participant: _Participant, column: str) -> float:
    attribute, level = column.split(":")
    if attribute == "const":
        return 1.0
    value = {"sex": participant.sex, "household_size": participant.household,
             "employment": participant.employment}[attribute]
    return 1.0 if value == level else 0.0


def _new_participant(idx: int, rng: np.random.Generator,
                     cfg: ScenarioConfig) -> _Participant:
    if cfg.include_children and rng.uniform() < 0.15:
        age = int(rng.integers(0, 18))
    else:
        age = int(rng.integers(18, AGE_MAX + 1))
    return _Participant(
        pid=f"p{idx:06d}",
        age=age,
        sex="M" if rng.uniform() < 0.5 else "F",
        household=_HOUSEHOLDS[rng.integers(0, len(_HOUSEHOLDS))],
        employment=("student" if age < 25 and rng.uniform() < 0.6
                    else _EMPLOYMENT[rng.integers(0, len(_EMPLOYMENT))]),
        preschool="yes" if age <= 5 and rng.uniform() < 0.7 else "no",
    )


def simulate_panel(cfg: ScenarioConfig
                   ) -> tuple[list[SurveyRecord], TruthManifest]:
    """Generate a recruited/retained longitudinal panel with NB2 counts.

    Repeat counters equal the number of prior waves each participant
    appears in. The truth manifest records the fatigue-free and realized
    intensities of every emitted record.
    """
    rng = np.random.default_rng(cfg.seed)
    participants: list[_Participant] = []
    next_id = 0
    records: list[SurveyRecord] = []
    manifest = TruthManifest(
        beta0=cfg.beta0, beta=dict(cfg.beta), hill_curves=dict(cfg.hill_curves),
        phi=cfg.phi, age_bumps=[list(b) for b in cfg.age_effect.bumps],
        seed=cfg.seed, waves=cfg.waves, lambda_fatigue_free=[],
        lambda_realized=[], record_keys=[])

    for wave in range(1, cfg.waves + 1):
        kept = [p for p in participants if rng.uniform() < cfg.retention]
        while len(kept) < cfg.panel_size:
            next_id += 1
            kept.append(_new_participant(next_id, rng, cfg))
        participants = kept

        for p in participants:
            log_lam0 = cfg.beta0 + float(cfg.age_effect(p.age))
            for column, effect in cfg.beta.items():
                log_lam0 += effect * _covariate_value(p, column)
            rho = 0.0
            for column, curve in cfg.hill_curves.items():
                rho += _covariate_value(p, column) * float(hill(curve, p.repeats))
            lam = float(np.exp(log_lam0 + rho))
            y = int(nb2_rvs(rng, np.array([lam]), cfg.phi)[0])
            records.append(SurveyRecord(
                participant_id=p.pid, wave=wave, repeat=p.repeats, age=p.age,
                sex=p.sex, household_size=p.household,
                covariates={"employment": p.employment,
                            "preschool": p.preschool},
                contacts_total=y,
                report_date=(wave - 1) * cfg.days_per_wave
                            + int(rng.integers(0, cfg.days_per_wave)),
            ))
            manifest.lambda_fatigue_free.append(float(np.exp(log_lam0)))
            manifest.lambda_realized.append(lam)
            manifest.record_keys.append([p.pid, wave])
            p.repeats += 1

    return records, manifest


def panel_to_csv(records: list[SurveyRecord], path: str) -> None:
    """Write records in the documented CSV schema.

    Child ages are coarsened to the child reporting bands: the age column is
    left blank and age_band carries the band, so loading exercises the
    uniform within-band imputation.
    """
    import csv

    cov_keys = sorted({k for r in records for k in r.covariates})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["participant_id", "wave", "repeat", "age",
                         "age_band", "sex", "household_size", "report_date",
                         "y_total"] + cov_keys)
        for r in records:
            age_text, band_text = str(r.age), ""
            if r.age < 18:
                band = next(b for b in CHILD_BANDS if r.age in b)
                age_text, band_text = "", band.label
            writer.writerow([r.participant_id, r.wave, r.repeat, age_text,
                             band_text, r.sex, r.household_size,
                             r.report_date, r.contacts_total]
                            + [r.covariates.get(k, "") for k in cov_keys])


# ---------------------------------------------------------------------------
# Rate-consistency surface simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceScenario:
    """Configuration for a coarse-band contact-surface dataset."""

    waves: tuple[int, ...] = (1, 2)
    repeats: tuple[int, ...] = (0, 1, 2)
    participant_ages: tuple[int, ...] = (5, 15, 25, 35, 45, 55, 65, 75)
    n_participants: float = 25.0
    s_prop: float = 0.9
    beta0: float = -4.5
    tau: tuple[float, ...] = (0.0, -0.15)
    rho: tuple[float, ...] = (0.0, -0.2, -0.35)   # per repeat, rho[0] = 0
    nu: float = 0.5
    diag_amp: float = 1.0
    diag_width: float = 12.0
    seed: int = 0


def symmetric_surface(a: np.ndarray, b: np.ndarray, amp: float,
                      width: float) -> np.ndarray:
    """Assortative (diagonal-ridge) surface, symmetric by construction."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return amp * np.exp(-0.5 * ((a - b) / width) ** 2)


def simulate_brc_surface(
    cfg: SurfaceScenario,
    population: PopulationTable | None = None,
    bands: CoarseBandSet | None = None,
    f_matrix: np.ndarray | None = None,
) -> dict:
    """Coarse-band NB1 counts over a latent rate-consistent surface.

    Returns a dict with per-cell arrays (``y``, ``wave``, ``repeat``,
    ``age``, ``band``, ``n_participants``, ``s_prop``), the true intensity
    matrix ``m`` (85 x 85, wave 1, repeat 0 scale), and the generator
    inputs. A supplied ``f_matrix`` must be symmetric.
    """
    rng = np.random.default_rng(cfg.seed)
    population = population or PopulationTable.uniform(("all",), 800.0)
    bands = bands or default_coarse_bands()
    ages = np.arange(AGE_MAX + 1, dtype=float)

    if f_matrix is not None:
        f_matrix = np.asarray(f_matrix, dtype=float)
        if f_matrix.shape != (AGE_MAX + 1, AGE_MAX + 1):
            raise ValueError("f_matrix must be 85 x 85")
        if not np.allclose(f_matrix, f_matrix.T, atol=1e-12):
            raise ValueError("supplied surface must be symmetric")
    else:
        f_matrix = symmetric_surface(ages[:, None], ages[None, :],
                                     cfg.diag_amp, cfg.diag_width)

    pop = population.get("all")
    log_m = cfg.beta0 + f_matrix + np.log(pop)[None, :]
    m_true = np.exp(log_m)

    y, wave_col, rep_col, age_col, band_col = [], [], [], [], []
    n_col, s_col = [], []
    membership = bands.membership()
    for t_idx, t in enumerate(cfg.waves):
        for r in cfg.repeats:
            for a in cfg.participant_ages:
                mu_b = (m_true[a] * np.exp(cfg.tau[t_idx] + cfg.rho[r])
                        * cfg.n_participants * cfg.s_prop)
                mu_cells = membership @ mu_b
                draws = nb1_rvs(rng, mu_cells, cfg.nu)
                for c in range(len(bands)):
                    y.append(float(draws[c]))
                    wave_col.append(t)
                    rep_col.append(r)
                    age_col.append(a)
                    band_col.append(c)
                    n_col.append(cfg.n_participants)
                    s_col.append(cfg.s_prop)

    return {
        "y": np.asarray(y), "wave": np.asarray(wave_col),
        "repeat": np.asarray(rep_col), "age": np.asarray(age_col),
        "band": np.asarray(band_col), "n_participants": np.asarray(n_col),
        "s_prop": np.asarray(s_col), "m_true": m_true,
        "f_true": f_matrix, "population": population, "bands": bands,
        "config": cfg,
    }
