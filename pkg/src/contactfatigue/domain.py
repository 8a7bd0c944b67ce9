"""Survey data model, CSV ingestion, preprocessing rules, and design matrices.

The contact-band age grid runs over single years 0..84. Participants report
the ages of their contacts in coarse bands; participants under 18 report (or
are reported) in child age bands and have their exact age imputed uniformly
within the band.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

AGE_MIN = 0
AGE_MAX = 84
DEFAULT_CONTACT_CAP = 30


class DataError(ValueError):
    """Malformed or out-of-contract survey data."""


@dataclass(frozen=True)
class AgeBand:
    """Closed integer age interval [lo, hi]."""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        if not (AGE_MIN <= self.lo <= self.hi <= AGE_MAX):
            raise DataError(f"invalid age band {self.lo}-{self.hi}")

    @property
    def midpoint(self) -> int:
        return (self.lo + self.hi) // 2

    @property
    def label(self) -> str:
        return f"{self.lo}-{self.hi}"

    def __contains__(self, age: int) -> bool:
        return self.lo <= age <= self.hi

    @classmethod
    def parse(cls, text: str) -> "AgeBand":
        try:
            lo, hi = text.split("-")
            return cls(int(lo), int(hi))
        except (ValueError, TypeError) as exc:
            raise DataError(f"cannot parse age band {text!r}") from exc


# Child participants report age in these bands only.
CHILD_BANDS = (AgeBand(0, 4), AgeBand(5, 9), AgeBand(10, 14), AgeBand(15, 18))


@dataclass(frozen=True)
class CoarseBandSet:
    """Ordered, disjoint age bands covering 0..84 used for contact reports."""

    bands: tuple[AgeBand, ...]

    def __post_init__(self) -> None:
        prev = -1
        for band in self.bands:
            if band.lo <= prev:
                raise DataError("coarse bands must be disjoint and ordered")
            prev = band.hi

    @property
    def midpoints(self) -> tuple[int, ...]:
        return tuple(b.midpoint for b in self.bands)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(b.label for b in self.bands)

    def __len__(self) -> int:
        return len(self.bands)

    def index_of_age(self, age: int) -> int:
        for k, band in enumerate(self.bands):
            if age in band:
                return k
        raise DataError(f"age {age} not covered by coarse bands")

    def membership(self) -> np.ndarray:
        """(n_bands, 85) 0/1 matrix mapping single-year ages to bands."""
        out = np.zeros((len(self.bands), AGE_MAX + 1))
        for k, band in enumerate(self.bands):
            out[k, band.lo : band.hi + 1] = 1.0
        return out


def default_coarse_bands() -> CoarseBandSet:
    """The survey's contact age grouping; midpoints are {2,7,...,77,82}."""
    edges = [(0, 4), (5, 9), (10, 14), (15, 19), (20, 24), (25, 34), (35, 44),
             (45, 54), (55, 64), (65, 69), (70, 74), (75, 79), (80, 84)]
    return CoarseBandSet(tuple(AgeBand(lo, hi) for lo, hi in edges))


@dataclass(frozen=True)
class SurveyRecord:
    """One participant-wave observation."""

    participant_id: str
    wave: int
    repeat: int
    age: int
    sex: str
    household_size: str
    covariates: Mapping[str, str]
    contacts_total: int
    contacts_by_band: tuple[int, ...] | None = None
    report_date: int = 0

    def __post_init__(self) -> None:
        if self.wave < 1:
            raise DataError(f"wave must be >= 1, got {self.wave}")
        if self.repeat < 0:
            raise DataError(f"repeat must be >= 0, got {self.repeat}")
        if not (AGE_MIN <= self.age <= AGE_MAX):
            raise DataError(f"age out of range 0–84: {self.age}")
        if self.contacts_total < 0:
            raise DataError("contacts_total must be >= 0")
        if self.contacts_by_band is not None:
            if sum(self.contacts_by_band) > self.contacts_total:
                raise DataError(
                    "contacts_by_band sum exceeds contacts_total for "
                    f"participant {self.participant_id}"
                )


@dataclass(frozen=True)
class PopulationTable:
    """Population counts by gender and single-year age 0..84."""

    counts: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        for g, arr in self.counts.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (AGE_MAX + 1,):
                raise DataError(f"population for {g!r} must have 85 entries")
            if np.any(arr <= 0):
                raise DataError(f"population counts for {g!r} must be > 0")

    def get(self, gender: str) -> np.ndarray:
        return np.asarray(self.counts[gender], dtype=float)

    def total(self) -> np.ndarray:
        return sum(self.get(g) for g in self.counts)

    @classmethod
    def uniform(cls, genders: Sequence[str] = ("M", "F"), count: float = 1000.0
                ) -> "PopulationTable":
        return cls({g: np.full(AGE_MAX + 1, count) for g in genders})


@dataclass(frozen=True)
class MissingnessTable:
    """Proportion of contacts with full age/gender detail, in (0, 1]."""

    values: Mapping[tuple[int, str], np.ndarray]

    def __post_init__(self) -> None:
        for key, arr in self.values.items():
            arr = np.asarray(arr, dtype=float)
            if np.any(arr <= 0) or np.any(arr > 1):
                raise DataError(f"missingness proportions for {key} not in (0,1]")

    def get(self, wave: int, age: int, gender: str) -> float:
        return float(np.asarray(self.values[(wave, gender)])[age])

    @classmethod
    def constant(cls, value: float, waves: Iterable[int],
                 genders: Sequence[str] = ("M", "F")) -> "MissingnessTable":
        vals = {(t, g): np.full(AGE_MAX + 1, value)
                for t in waves for g in genders}
        return cls(vals)


# ---------------------------------------------------------------------------
# Preprocessing operations
# ---------------------------------------------------------------------------

def impute_child_age(band: AgeBand, rng: np.random.Generator) -> int:
    """Draw an exact age uniformly within a child reporting band."""
    if (band.lo, band.hi) not in {(b.lo, b.hi) for b in CHILD_BANDS} and band.lo != band.hi:
        raise DataError(
            f"band {band.label} is not a child band; adults report exact age"
        )
    return int(rng.integers(band.lo, band.hi + 1))


def truncate_contacts(y: int, cap: int = DEFAULT_CONTACT_CAP) -> int:
    """Cap a contact count to mitigate extreme outliers."""
    if y < 0:
        raise DataError(f"negative contact count {y}")
    return min(y, cap)


# ---------------------------------------------------------------------------
# Age-group coding (14 categories; preschoolers split by attendance)
# ---------------------------------------------------------------------------

ADULT_AGE_GROUPS = ["6-9", "10-14", "15-19", "20-24", "25-34", "35-44",
                    "45-54", "55-64", "65-69", "70-74", "75-79", "80-84"]
AGE_GROUP_LEVELS = ("0-5_preschool", "0-5_home") + tuple(ADULT_AGE_GROUPS)


def age_group_of(age: int, preschool: str | None = None) -> str:
    """14-level age grouping; ages 0-5 split by preschool attendance."""
    if age <= 5:
        if preschool in (None, "", "yes"):
            return "0-5_preschool"
        return "0-5_home"
    for label in ADULT_AGE_GROUPS:
        lo, hi = label.split("-")
        if int(lo) <= age <= int(hi):
            return label
    raise DataError(f"age out of range 0–84: {age}")


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

#: Canonical column names. A schema maps canonical -> actual CSV header.
CANONICAL_COLUMNS = ("participant_id", "wave", "repeat", "age", "age_band",
                     "sex", "household_size", "report_date", "y_total")


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping and allowed category levels for survey CSV files."""

    columns: Mapping[str, str] = field(
        default_factory=lambda: {c: c for c in CANONICAL_COLUMNS})
    sex_levels: tuple[str, ...] = ("M", "F")
    household_levels: tuple[str, ...] = ("1", "2", "3", "4", "5+")
    covariate_columns: tuple[str, ...] = ()
    covariate_levels: Mapping[str, tuple[str, ...]] | None = None
    contact_cap: int = DEFAULT_CONTACT_CAP

    def col(self, name: str) -> str:
        return self.columns.get(name, name)


def _band_columns(bands: CoarseBandSet) -> list[str]:
    return [f"y_{b.lo}_{b.hi}" for b in bands.bands]


@dataclass
class LoadReport:
    """Row accounting for one CSV ingestion."""

    n_read: int = 0
    n_kept: int = 0
    n_dropped_missing: int = 0


def load_survey_csv(
    path: str,
    schema: CsvSchema | None = None,
    *,
    rng: np.random.Generator | None = None,
    bands: CoarseBandSet | None = None,
) -> tuple[list[SurveyRecord], LoadReport]:
    """Read survey records from CSV.

    Rows missing participant age (with no child band to impute from) or sex
    are dropped and counted in the returned report. Child rows carrying an
    ``age_band`` but no exact age have their age imputed uniformly within the
    band, which requires ``rng``.
    """
    schema = schema or CsvSchema()
    bands = bands or default_coarse_bands()
    band_cols = _band_columns(bands)
    report = LoadReport()
    records: list[SurveyRecord] = []

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file without header")
        required = [schema.col(c) for c in ("participant_id", "wave", "repeat",
                                            "sex", "household_size", "y_total")]
        missing_cols = [c for c in required if c not in reader.fieldnames]
        if missing_cols:
            raise DataError(f"{path}: missing columns {missing_cols}")
        has_bands = all(c in reader.fieldnames for c in band_cols)

        for lineno, row in enumerate(reader, start=2):
            report.n_read += 1
            sex = (row.get(schema.col("sex")) or "").strip()
            age_text = (row.get(schema.col("age")) or "").strip()
            band_text = (row.get(schema.col("age_band")) or "").strip()
            if not sex or (not age_text and not band_text):
                report.n_dropped_missing += 1
                continue
            if sex not in schema.sex_levels:
                raise DataError(f"{path}:{lineno}: unknown sex level {sex!r}")
            household = (row.get(schema.col("household_size")) or "").strip()
            if household not in schema.household_levels:
                raise DataError(
                    f"{path}:{lineno}: unknown household_size level {household!r}")
            try:
                if age_text:
                    age = int(age_text)
                    if not (AGE_MIN <= age <= AGE_MAX):
                        raise DataError(
                            f"{path}:{lineno}: age out of range 0–84")
                else:
                    if rng is None:
                        raise DataError(
                            f"{path}:{lineno}: child row requires an RNG for "
                            "age imputation")
                    age = impute_child_age(AgeBand.parse(band_text), rng)
                wave = int(row[schema.col("wave")])
                repeat = int(row[schema.col("repeat")])
                y_raw = int(row[schema.col("y_total")])
                date_text = (row.get(schema.col("report_date")) or "0").strip()
                report_date = int(date_text) if date_text else 0
            except DataError:
                raise
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from exc

            covariates: dict[str, str] = {}
            for cov in schema.covariate_columns:
                value = (row.get(cov) or "").strip()
                allowed = (schema.covariate_levels or {}).get(cov)
                if allowed is not None and value not in allowed:
                    raise DataError(
                        f"{path}:{lineno}: unknown {cov} level {value!r}")
                covariates[cov] = value

            by_band = None
            if has_bands:
                try:
                    raw = [int(row[c] or 0) for c in band_cols]
                except ValueError as exc:
                    raise DataError(
                        f"{path}:{lineno}: malformed band count ({exc})") from exc
                by_band = tuple(min(v, schema.contact_cap) for v in raw)

            records.append(SurveyRecord(
                participant_id=row[schema.col("participant_id")],
                wave=wave,
                repeat=repeat,
                age=age,
                sex=sex,
                household_size=household,
                covariates=covariates,
                contacts_total=truncate_contacts(y_raw, schema.contact_cap),
                contacts_by_band=by_band,
                report_date=report_date,
            ))

    report.n_kept = len(records)
    if report.n_dropped_missing:
        logger.info("dropped %d of %d rows with missing age or sex",
                    report.n_dropped_missing, report.n_read)
    return records, report


# ---------------------------------------------------------------------------
# Design matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureBlock:
    """A categorical feature expanded to indicator columns.

    ``attribute`` names either a built-in record field ("age_group", "sex",
    "household_size") or a key in the record's covariate map. With a
    ``reference`` level set, that level's column is dropped; otherwise the
    block is a full one-hot.
    """

    attribute: str
    levels: tuple[str, ...]
    reference: str | None = None

    def column_levels(self) -> tuple[str, ...]:
        if self.reference is None:
            return self.levels
        if self.reference not in self.levels:
            raise DataError(
                f"reference {self.reference!r} not among levels of "
                f"{self.attribute!r}")
        return tuple(l for l in self.levels if l != self.reference)


@dataclass(frozen=True)
class FeatureSpec:
    """Design layout: baseline block u, tested block v, fatigue block w."""

    u: tuple[FeatureBlock, ...] = ()
    v: tuple[FeatureBlock, ...] = ()
    w: tuple[FeatureBlock, ...] = ()


def _record_level(record: SurveyRecord, attribute: str) -> str:
    if attribute == "const":
        return "1"
    if attribute == "sex":
        return record.sex
    if attribute == "household_size":
        return record.household_size
    if attribute == "age_group":
        return age_group_of(record.age, record.covariates.get("preschool"))
    try:
        return record.covariates[attribute]
    except KeyError as exc:
        raise DataError(f"record missing covariate {attribute!r}") from exc


@dataclass(frozen=True)
class DesignMatrix:
    """Model-ready data bundle shared by all regression families."""

    column_names: tuple[str, ...]
    x: np.ndarray                      # (n, p) indicator matrix
    blocks: Mapping[str, slice]        # 'u' | 'v' | 'w' -> column range
    y: np.ndarray                      # (n,) contact counts
    age: np.ndarray                    # (n,) integer years
    repeat: np.ndarray                 # (n,)
    wave: np.ndarray                   # (n,)
    report_date: np.ndarray            # (n,)
    offsets: np.ndarray                # (n,) summed log offsets

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def block(self, name: str) -> np.ndarray:
        return self.x[:, self.blocks[name]]

    def block_names(self, name: str) -> tuple[str, ...]:
        return self.column_names[self.blocks[name]]


def build_design(
    records: Sequence[SurveyRecord],
    feature_spec: FeatureSpec,
    *,
    population: PopulationTable | None = None,
    missingness: MissingnessTable | None = None,
) -> DesignMatrix:
    """Expand records into indicator columns ordered (u | v | w).

    Offsets are zero unless population/missingness tables are supplied, in
    which case each row carries log S(wave, age, sex) plus nothing for the
    population (population offsets enter per contact age inside the
    rate-consistency model, not per row here).
    """
    n = len(records)
    columns: list[str] = []
    pieces: list[np.ndarray] = []
    block_slices: dict[str, slice] = {}
    start = 0
    for role, blocks in (("u", feature_spec.u), ("v", feature_spec.v),
                         ("w", feature_spec.w)):
        width = 0
        for blk in blocks:
            col_levels = blk.column_levels()
            mat = np.zeros((n, len(col_levels)))
            for i, rec in enumerate(records):
                level = _record_level(rec, blk.attribute)
                if level not in blk.levels:
                    raise DataError(
                        f"unknown {blk.attribute} level {level!r}")
                if level in col_levels:
                    mat[i, col_levels.index(level)] = 1.0
            pieces.append(mat)
            columns.extend(f"{blk.attribute}:{l}" for l in col_levels)
            width += len(col_levels)
        block_slices[role] = slice(start, start + width)
        start += width

    x = np.hstack(pieces) if pieces else np.zeros((n, 0))
    offsets = np.zeros(n)
    if missingness is not None:
        for i, rec in enumerate(records):
            offsets[i] += np.log(missingness.get(rec.wave, rec.age, rec.sex))

    return DesignMatrix(
        column_names=tuple(columns),
        x=x,
        blocks=block_slices,
        y=np.array([r.contacts_total for r in records], dtype=float),
        age=np.array([r.age for r in records], dtype=float),
        repeat=np.array([r.repeat for r in records], dtype=float),
        wave=np.array([r.wave for r in records], dtype=int),
        report_date=np.array([r.report_date for r in records], dtype=float),
        offsets=offsets,
    )


def aggregate_to_bands(per_age: np.ndarray, bands: CoarseBandSet) -> np.ndarray:
    """Sum a length-85 per-age vector into coarse bands."""
    per_age = np.asarray(per_age, dtype=float)
    if per_age.shape != (AGE_MAX + 1,):
        raise DataError("per_age must have length 85")
    return bands.membership() @ per_age


def covimod_feature_spec(
    *,
    employment_levels: tuple[str, ...] = (
        "full_time", "part_time", "self_employed", "student", "retired",
        "long_term_sick", "unemployed_seeking", "unemployed_not_seeking",
        "stay_home_parent"),
    urban_levels: tuple[str, ...] = ("rural", "intermediate", "urban"),
) -> FeatureSpec:
    """Feature layout mirroring the survey's candidate determinants.

    Full one-hot coding: the baseline block u has 14 + 2 + 5 = 21 columns,
    the tested block v has 9 + 2 + 2 + 3 = 16, and the fatigue block w has
    14 + 2 + 5 + 9 + 3 = 33.
    """
    age = FeatureBlock("age_group", AGE_GROUP_LEVELS)
    sex = FeatureBlock("sex", ("M", "F"))
    household = FeatureBlock("household_size", ("1", "2", "3", "4", "5+"))
    employment = FeatureBlock("employment", employment_levels)
    symptoms = FeatureBlock("symptoms", ("yes", "no"))
    weekday = FeatureBlock("day_of_week", ("weekday", "weekend"))
    urban = FeatureBlock("urban_type", urban_levels)
    return FeatureSpec(
        u=(age, sex, household),
        v=(employment, symptoms, weekday, urban),
        w=(age, sex, household, employment, urban),
    )
