import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from contactfatigue.domain import (AgeBand, CoarseBandSet, DataError,
                                   CsvSchema, FeatureBlock, FeatureSpec,
                                   MissingnessTable, PopulationTable,
                                   SurveyRecord, aggregate_to_bands,
                                   age_group_of, build_design,
                                   covimod_feature_spec, default_coarse_bands,
                                   impute_child_age, load_survey_csv,
                                   truncate_contacts)

from conftest import SMALL_FEATURES, make_records


class TestAgeBands:
    def test_default_midpoints(self):
        bands = default_coarse_bands()
        assert bands.midpoints == (2, 7, 12, 17, 22, 29, 39, 49, 59, 67,
                                   72, 77, 82)

    def test_band_bounds_validated(self):
        with pytest.raises(DataError):
            AgeBand(5, 3)
        with pytest.raises(DataError):
            AgeBand(0, 90)

    def test_bands_must_be_disjoint_and_ordered(self):
        with pytest.raises(DataError):
            CoarseBandSet((AgeBand(0, 5), AgeBand(5, 10)))


class TestImputation:
    def test_uniform_within_band(self):
        # frequency of each age within 3 sigma of 1/5 over 1e5 draws
        rng = np.random.default_rng(7)
        n = 100_000
        draws = np.array([impute_child_age(AgeBand(0, 4), rng)
                          for _ in range(n)])
        p = 0.2
        sigma = np.sqrt(p * (1 - p) / n)
        freq = np.bincount(draws, minlength=5) / n
        assert np.all(np.abs(freq - p) < 3 * sigma)

    def test_degenerate_band(self):
        rng = np.random.default_rng(0)
        assert impute_child_age(AgeBand(10, 10), rng) == 10

    def test_teen_band_support(self):
        rng = np.random.default_rng(1)
        vals = {impute_child_age(AgeBand(15, 18), rng) for _ in range(200)}
        assert vals == {15, 16, 17, 18}

    def test_adult_band_rejected(self):
        with pytest.raises(DataError):
            impute_child_age(AgeBand(25, 34), np.random.default_rng(0))

    def test_reproducible_under_seed(self):
        a = [impute_child_age(AgeBand(5, 9), np.random.default_rng(3))
             for _ in range(10)]
        b = [impute_child_age(AgeBand(5, 9), np.random.default_rng(3))
             for _ in range(10)]
        assert a == b


class TestTruncation:
    @pytest.mark.parametrize("y,expected", [(45, 30), (30, 30), (0, 0)])
    def test_cap(self, y, expected):
        assert truncate_contacts(y) == expected

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            truncate_contacts(-1)


class TestRecords:
    def test_band_sum_exceeding_total_rejected(self):
        with pytest.raises(DataError):
            SurveyRecord("p", 1, 0, 30, "M", "1", {}, contacts_total=2,
                         contacts_by_band=(2, 1) + (0,) * 11)

    def test_age_out_of_range_rejected(self):
        with pytest.raises(DataError, match="age out of range"):
            SurveyRecord("p", 1, 0, 90, "M", "1", {}, contacts_total=0)


class TestCsvLoading:
    HEADER = ("participant_id,wave,repeat,age,age_band,sex,household_size,"
              "report_date,y_total")

    def test_missing_sex_dropped(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(self.HEADER + "\n"
                        "a,1,0,30,,M,1,0,5\n"
                        "b,1,0,31,,,1,0,4\n"
                        "c,1,0,32,,F,2,0,3\n")
        records, report = load_survey_csv(str(path))
        assert len(records) == 2
        assert report.n_dropped_missing == 1

    def test_empty_file_with_header(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(self.HEADER + "\n")
        records, report = load_survey_csv(str(path))
        assert records == [] and report.n_read == 0

    def test_age_out_of_range_is_error(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(self.HEADER + "\na,1,0,90,,M,1,0,5\n")
        with pytest.raises(DataError, match="age out of range"):
            load_survey_csv(str(path))

    def test_unknown_level_names_the_level(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(self.HEADER + "\na,1,0,30,,X,1,0,5\n")
        with pytest.raises(DataError, match="'X'"):
            load_survey_csv(str(path))

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(self.HEADER + "\na,1,zero,30,,M,1,0,5\n")
        with pytest.raises(DataError, match=":2"):
            load_survey_csv(str(path))

    def test_child_age_imputed_within_band(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(self.HEADER + "\nkid,1,0,,5-9,F,2,0,3\n")
        records, _ = load_survey_csv(str(path),
                                     rng=np.random.default_rng(0))
        assert 5 <= records[0].age <= 9

    def test_contacts_truncated_on_load(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text(self.HEADER + "\na,1,0,30,,M,1,0,95\n")
        records, _ = load_survey_csv(str(path))
        assert records[0].contacts_total == 30


class TestDesignMatrix:
    def test_reference_dropping(self):
        records = make_records(2, seed=1)
        records = [
            SurveyRecord("a", 1, 0, 30, "M", "1", {}, 1),
            SurveyRecord("b", 1, 0, 30, "F", "1", {}, 1),
        ]
        fs = FeatureSpec(u=(FeatureBlock("sex", ("M", "F"), reference="F"),))
        design = build_design(records, fs)
        assert design.column_names == ("sex:M",)
        assert design.x[:, 0].tolist() == [1.0, 0.0]

    def test_survey_block_widths(self):
        # 21 = 14 + 2 + 5, 16 = 9 + 2 + 2 + 3, 33 = 14 + 2 + 5 + 9 + 3
        fs = covimod_feature_spec()
        records = [SurveyRecord(
            "p", 1, 0, 30, "M", "1",
            {"employment": "retired", "symptoms": "no",
             "day_of_week": "weekday", "urban_type": "rural"}, 1)]
        design = build_design(records, fs)
        assert design.block("u").shape[1] == 21
        assert design.block("v").shape[1] == 16
        assert design.block("w").shape[1] == 33

    def test_unknown_level_rejected(self):
        records = [SurveyRecord("p", 1, 0, 30, "M", "9", {}, 1)]
        fs = FeatureSpec(u=(FeatureBlock("household_size", ("1", "2")),))
        with pytest.raises(DataError, match="'9'"):
            build_design(records, fs)

    def test_one_hot_rows_sum_to_at_most_one(self, small_design):
        for role in ("u", "v", "w"):
            block = small_design.block(role)
            # full one-hot categorical blocks: each block sums to 1
            assert np.all(block.sum(axis=1) <= block.shape[1])

    def test_deterministic(self):
        records = make_records(25, seed=3)
        a = build_design(records, SMALL_FEATURES)
        b = build_design(records, SMALL_FEATURES)
        assert a.x.tobytes() == b.x.tobytes()
        assert a.column_names == b.column_names

    def test_missingness_offsets(self):
        records = [SurveyRecord("p", 1, 0, 30, "M", "1", {}, 1)]
        fs = FeatureSpec(u=(FeatureBlock("sex", ("M", "F")),))
        miss = MissingnessTable.constant(0.5, waves=[1])
        design = build_design(records, fs, missingness=miss)
        assert design.offsets[0] == pytest.approx(np.log(0.5))


class TestAggregation:
    def test_ones_band(self):
        bands = default_coarse_bands()
        out = aggregate_to_bands(np.ones(85), bands)
        assert out[0] == 5.0

    def test_identity_ramp(self):
        bands = default_coarse_bands()
        out = aggregate_to_bands(np.arange(85.0), bands)
        assert out[5] == sum(range(25, 35)) == 295

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=85, max_size=85))
    def test_partition_preserves_totals(self, values):
        per_age = np.asarray(values)
        bands = default_coarse_bands()
        assert aggregate_to_bands(per_age, bands).sum() == pytest.approx(
            per_age.sum(), rel=1e-9, abs=1e-6)

    def test_wrong_length_rejected(self):
        with pytest.raises(DataError):
            aggregate_to_bands(np.ones(10), default_coarse_bands())


class TestAgeGroups:
    def test_fourteen_levels(self):
        from contactfatigue.domain import AGE_GROUP_LEVELS
        assert len(AGE_GROUP_LEVELS) == 14

    def test_preschool_split(self):
        assert age_group_of(3, "yes") == "0-5_preschool"
        assert age_group_of(3, "no") == "0-5_home"
        assert age_group_of(40, None) == "35-44"


class TestTables:
    def test_population_positive(self):
        with pytest.raises(DataError):
            PopulationTable({"M": np.zeros(85)})

    def test_missingness_range(self):
        with pytest.raises(DataError):
            MissingnessTable({(1, "M"): np.full(85, 1.5)})
